use std::path::PathBuf;

use renege_ldp::el_minimizer::{minimize, verify_optimality, OptimalityReport};
use renege_ldp::fluid::{fluid_integrate, gamma_star};
use renege_ldp::oracle::{closed_form_cost, refinement_study, write_refinement_csv, RefinementRow};
use renege_ldp::qsim::{
    decay_sweep, estimate_is, estimate_naive, simulate, simulate_tilted, write_sweep_csv, Direction, EstimateReport,
    EventCounts, SimConfig, SweepRow,
};
use renege_ldp::rate_fn::decay_rate;
use renege_ldp::{CostReport, Horizon, Mode, ModelParams, Purpose, TargetRate, TiltParameters, Trajectory};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{CommandKind, DirectionArg, FormatArg, MethodArg, ModeArg, Options};
use crate::error::CliError;

const DEFAULT_GRID: usize = 1001;
const DEFAULT_TOL: f64 = 1e-12;
const DEFAULT_M_LIST: [usize; 4] = [250, 500, 1000, 2000];
const DEFAULT_MAX_ITERS: usize = 100_000;
const DEFAULT_REPLICATIONS: usize = 10_000;
const DEFAULT_HORIZONS: [f64; 4] = [10.0, 20.0, 50.0, 200.0];

/// Fills defaults for every option the command accepts.
pub fn with_defaults(kind: CommandKind, mut o: Options) -> Options {
    let (req, opt) = crate::config::keys(kind);
    let accepts = |k: &str| req.contains(&k) || opt.contains(&k);
    macro_rules! default {
        ($f:ident, $k:literal, $v:expr) => {
            if accepts($k) && o.$f.is_none() {
                o.$f = Some($v);
            }
        };
    }
    default!(theta, "theta", 1.0);
    default!(x0, "x0", 1.0);
    default!(mode, "mode", ModeArg::Single);
    default!(grid_size, "grid_size", DEFAULT_GRID);
    default!(tol, "tol", DEFAULT_TOL);
    default!(m_list, "m_list", DEFAULT_M_LIST.to_vec());
    default!(max_iters, "max_iters", DEFAULT_MAX_ITERS);
    default!(seed, "seed", 0);
    default!(replications, "replications", DEFAULT_REPLICATIONS);
    default!(direction, "direction", DirectionArg::AtLeast);
    default!(method, "method", MethodArg::Is);
    default!(horizons, "horizons", DEFAULT_HORIZONS.to_vec());
    if o.format.is_none() {
        o.format = Some(FormatArg::Csv);
    }
    o
}

/// Collects artifact files; nothing is written without `out_dir`.
struct Artifacts {
    dir: Option<PathBuf>,
    format: FormatArg,
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    fn table<T: Serialize>(
        &mut self,
        stem: &str,
        value: &T,
        csv: impl FnOnce(&mut Vec<u8>) -> Result<(), CliError>,
    ) -> Result<(), CliError> {
        match self.format {
            FormatArg::Csv => {
                let mut buf = Vec::new();
                csv(&mut buf)?;
                self.files.push((format!("{stem}.csv"), buf));
            }
            FormatArg::Json => self.json(stem, value)?,
        }
        Ok(())
    }

    fn json<T: Serialize>(&mut self, stem: &str, value: &T) -> Result<(), CliError> {
        let mut buf = serde_json::to_vec_pretty(value).map_err(|e| CliError::numerics(e.to_string()))?;
        buf.push(b'\n');
        self.files.push((format!("{stem}.json"), buf));
        Ok(())
    }

    fn names(&self) -> Vec<String> {
        if self.dir.is_none() {
            return Vec::new();
        }
        let mut names: Vec<String> = self.files.iter().map(|(n, _)| n.clone()).collect();
        names.push("summary.json".into());
        names
    }

    fn flush(self, summary: &[u8]) -> Result<(), CliError> {
        let Some(dir) = self.dir else { return Ok(()) };
        std::fs::create_dir_all(&dir)?;
        for (name, bytes) in &self.files {
            std::fs::write(dir.join(name), bytes)?;
        }
        std::fs::write(dir.join("summary.json"), summary)?;
        Ok(())
    }
}

fn write_csv_rows(buf: &mut Vec<u8>, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(buf);
    let io = |e: csv::Error| CliError::numerics(e.to_string());
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

struct Inputs {
    params: ModelParams,
    horizon: Option<Horizon>,
    target: Option<TargetRate>,
}

fn inputs(o: &Options) -> Inputs {
    let mode = match o.mode.unwrap_or(ModeArg::Single) {
        ModeArg::Single => Mode::SingleServer,
        ModeArg::Many => Mode::ManyServer,
    };
    let params = ModelParams {
        mode,
        ..ModelParams::new(o.lambda.unwrap(), o.mu.unwrap(), o.theta.unwrap_or(1.0), o.x0.unwrap_or(1.0))
    };
    Inputs {
        params,
        horizon: o.t.map(Horizon::new),
        target: o.gamma.map(TargetRate::new),
    }
}

fn direction(o: &Options) -> Direction {
    match o.direction.unwrap_or(DirectionArg::AtLeast) {
        DirectionArg::AtLeast => Direction::AtLeast,
        DirectionArg::AtMost => Direction::AtMost,
    }
}

/// Runs the command and returns the stdout summary.
pub fn run(kind: CommandKind, o: Options) -> Result<Vec<u8>, CliError> {
    let mut art = Artifacts {
        dir: o.out_dir.clone(),
        format: o.format.unwrap_or(FormatArg::Csv),
        files: Vec::new(),
    };
    let result = match kind {
        CommandKind::DecayRate => cmd_decay_rate(&o, &mut art)?,
        CommandKind::Fluid => cmd_fluid(&o, &mut art)?,
        CommandKind::Minimizer => cmd_minimizer(&o, &mut art)?,
        CommandKind::Oracle => cmd_oracle(&o, &mut art)?,
        CommandKind::Simulate => cmd_simulate(&o, &mut art)?,
        CommandKind::Estimate => cmd_estimate(&o, &mut art)?,
        CommandKind::Sweep => cmd_sweep(&o, &mut art)?,
        CommandKind::ParadoxCheck => cmd_paradox(&o, &mut art)?,
    };
    let summary = json!({
        "command": kind,
        "version": env!("CARGO_PKG_VERSION"),
        "config": o,
        "result": result,
        "artifacts": art.names(),
    });
    let mut bytes = serde_json::to_vec_pretty(&summary).map_err(|e| CliError::numerics(e.to_string()))?;
    bytes.push(b'\n');
    art.flush(&bytes)?;
    Ok(bytes)
}

fn cmd_decay_rate(o: &Options, art: &mut Artifacts) -> Result<Value, CliError> {
    let i = inputs(o);
    i.params.check(Purpose::Simulation)?;
    let target = i.target.unwrap();
    target.check()?;
    let d = decay_rate(&i.params, target);
    let value = json!({ "gamma": target.gamma, "c_gamma": d.c_gamma, "z_gamma": d.z_gamma });
    art.table("decay_rate", &value, |buf| {
        write_csv_rows(buf, &["gamma", "c_gamma", "z_gamma"], &[vec![num(target.gamma), num(d.c_gamma), num(d.z_gamma)]])
    })?;
    Ok(value)
}

fn cmd_fluid(o: &Options, art: &mut Artifacts) -> Result<Value, CliError> {
    let i = inputs(o);
    let horizon = i.horizon.unwrap();
    let traj = fluid_integrate(&i.params, horizon, o.grid_size.unwrap())?;
    let last = traj.len() - 1;
    art.table("fluid", &traj, |buf| Ok(traj.write_csv(buf)?))?;
    Ok(json!({
        "x_T": traj.xi[last],
        "y_T": traj.zeta[last],
        "gamma_star": gamma_star(&i.params, horizon).ok(),
    }))
}

#[derive(Serialize)]
struct MinimizerSummary {
    tilt: Option<TiltParameters>,
    cost: CostReport,
    zeta_t: f64,
    zeta_t_relative_error: f64,
    optimality: Option<OptimalityReport<f64>>,
}

fn cmd_minimizer(o: &Options, art: &mut Artifacts) -> Result<Value, CliError> {
    let i = inputs(o);
    let (horizon, target) = (i.horizon.unwrap(), i.target.unwrap());
    let m = minimize(&i.params, horizon, target, o.tol.unwrap(), o.grid_size.unwrap())?;
    let optimality = match (&m.tilt, i.params.mode) {
        (Some(tilt), Mode::SingleServer) => Some(verify_optimality(&i.params, horizon, target, tilt, &m.trajectory)?),
        _ => None,
    };
    let zeta_t = *m.trajectory.zeta.last().unwrap();
    let goal = target.gamma * horizon.t;
    let summary = MinimizerSummary {
        tilt: m.tilt,
        cost: m.cost,
        zeta_t,
        zeta_t_relative_error: if goal > 0.0 { (zeta_t - goal).abs() / goal } else { zeta_t.abs() },
        optimality,
    };
    art.table("minimizer", &m.trajectory, |buf| Ok(m.trajectory.write_csv(buf)?))?;
    art.json("minimizer_report", &summary)?;
    serde_json::to_value(&summary).map_err(|e| CliError::numerics(e.to_string()))
}

fn cmd_oracle(o: &Options, art: &mut Artifacts) -> Result<Value, CliError> {
    let i = inputs(o);
    let (horizon, target) = (i.horizon.unwrap(), i.target.unwrap());
    let m_list = o.m_list.clone().unwrap();
    let rows: Vec<RefinementRow> =
        refinement_study(&i.params, horizon, target, &m_list, o.max_iters.unwrap(), o.tol.unwrap())?;
    let reference = closed_form_cost(&i.params, horizon, target)?;
    let monotone = rows.windows(2).all(|w| w[1].objective <= w[0].objective);
    art.table("refinement", &rows, |buf| Ok(write_refinement_csv(&rows, buf)?))?;
    Ok(json!({ "reference_cost": reference, "rows": rows, "monotone": monotone }))
}

fn controls(o: &Options, i: &Inputs) -> Result<Trajectory, CliError> {
    Ok(minimize(&i.params, i.horizon.unwrap(), i.target.unwrap(), DEFAULT_TOL, o.grid_size.unwrap())?.trajectory)
}

fn sim_config(o: &Options, i: &Inputs, replications: usize) -> SimConfig {
    SimConfig::new(i.params, i.horizon.unwrap(), o.n.unwrap(), o.seed.unwrap(), replications)
}

#[derive(Serialize)]
struct PathSummary {
    tilted: bool,
    jumps: usize,
    counts: EventCounts,
    final_x_bar: f64,
    final_y_bar: f64,
    log_lr: f64,
}

fn cmd_simulate(o: &Options, art: &mut Artifacts) -> Result<Value, CliError> {
    let i = inputs(o);
    let cfg = sim_config(o, &i, 1);
    let path = match i.target {
        Some(_) => simulate_tilted(&cfg, &controls(o, &i)?)?,
        None => simulate(&cfg)?,
    };
    art.table("path", &path, |buf| Ok(path.write_csv(buf)?))?;
    let summary = PathSummary {
        tilted: i.target.is_some(),
        jumps: path.jump_times.len() - 1,
        counts: path.counts,
        final_x_bar: path.final_x_bar(),
        final_y_bar: path.final_y_bar(),
        log_lr: path.log_lr,
    };
    serde_json::to_value(&summary).map_err(|e| CliError::numerics(e.to_string()))
}

fn cmd_estimate(o: &Options, art: &mut Artifacts) -> Result<Value, CliError> {
    let i = inputs(o);
    let cfg = sim_config(o, &i, o.replications.unwrap());
    let target = i.target.unwrap();
    let (report, reference): (EstimateReport, Option<f64>) = match o.method.unwrap() {
        MethodArg::Naive => (estimate_naive(&cfg, target, direction(o))?, None),
        MethodArg::Is => {
            let m = minimize(&i.params, i.horizon.unwrap(), target, DEFAULT_TOL, o.grid_size.unwrap())?;
            (estimate_is(&cfg, target, direction(o), &m.trajectory)?, Some(m.cost.total))
        }
    };
    let value = json!({ "estimate": report, "reference_cost": reference });
    art.table("estimate", &value, |buf| {
        let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
        write_csv_rows(
            buf,
            &["p_hat", "ci95", "std_error", "log_decay", "ess", "replications_used", "degenerate", "reference_cost"],
            &[vec![
                num(report.p_hat),
                num(report.ci95),
                num(report.std_error),
                opt(report.log_decay),
                opt(report.ess),
                report.replications_used.to_string(),
                report.degenerate.to_string(),
                opt(reference),
            ]],
        )
    })?;
    Ok(value)
}

fn cmd_sweep(o: &Options, art: &mut Artifacts) -> Result<Value, CliError> {
    let i = inputs(o);
    let ctrl = controls(o, &i)?;
    let rows: Vec<SweepRow> = decay_sweep(
        &i.params,
        i.horizon.unwrap(),
        i.target.unwrap(),
        direction(o),
        o.n_list.as_deref().unwrap(),
        o.replications.unwrap(),
        &ctrl,
        o.seed.unwrap(),
    )?;
    art.table("sweep", &rows, |buf| Ok(write_sweep_csv(&rows, buf)?))?;
    Ok(json!({ "rows": rows }))
}

#[derive(Serialize)]
struct ParadoxRow {
    theta: f64,
    c_gamma: f64,
    total: f64,
    normalized: f64,
    reneging_component: f64,
    reneging_share: f64,
}

#[derive(Serialize)]
struct DecayRow {
    theta: f64,
    horizon: f64,
    reneging_per_time: f64,
    reneging_share: f64,
}

fn cmd_paradox(o: &Options, art: &mut Artifacts) -> Result<Value, CliError> {
    let i = inputs(o);
    let (horizon, target) = (i.horizon.unwrap(), i.target.unwrap());
    let thetas = o.thetas.clone().unwrap();
    if thetas.is_empty() {
        return Err(CliError::config("thetas must be nonempty"));
    }
    let (grid, tol) = (o.grid_size.unwrap(), o.tol.unwrap());
    let mut rows = Vec::new();
    let mut decay = Vec::new();
    for &theta in &thetas {
        let p = i.params.with_theta(theta);
        let m = minimize(&p, horizon, target, tol, grid)?;
        rows.push(ParadoxRow {
            theta,
            c_gamma: decay_rate(&p, target).c_gamma,
            total: m.cost.total,
            normalized: m.cost.normalized,
            reneging_component: m.cost.components.reneging,
            reneging_share: m.cost.components.reneging / m.cost.total,
        });
        for &h in o.horizons.as_deref().unwrap() {
            let m = minimize(&p, Horizon::new(h), target, tol, grid)?;
            decay.push(DecayRow {
                theta,
                horizon: h,
                reneging_per_time: m.cost.components.reneging / h,
                reneging_share: m.cost.components.reneging / m.cost.total,
            });
        }
    }
    let c_bits_identical = rows.iter().all(|r| r.c_gamma.to_bits() == rows[0].c_gamma.to_bits());
    let (lo, hi) = rows
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.normalized), hi.max(r.normalized)));
    let spread = hi / lo - 1.0;
    art.table("paradox", &rows, |buf| {
        let body: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![num(r.theta), num(r.c_gamma), num(r.total), num(r.normalized), num(r.reneging_component), num(r.reneging_share)]
            })
            .collect();
        write_csv_rows(buf, &["theta", "c_gamma", "total", "normalized", "reneging_component", "reneging_share"], &body)
    })?;
    art.table("paradox_decay", &decay, |buf| {
        let body: Vec<Vec<String>> = decay
            .iter()
            .map(|r| vec![num(r.theta), num(r.horizon), num(r.reneging_per_time), num(r.reneging_share)])
            .collect();
        write_csv_rows(buf, &["theta", "T", "reneging_per_time", "reneging_share"], &body)
    })?;
    Ok(json!({
        "c_gamma": rows[0].c_gamma,
        "c_gamma_bit_identical": c_bits_identical,
        "max_pairwise_spread": spread,
        "within_one_percent": spread <= 0.01,
        "rows": rows,
        "reneging_decay": decay,
    }))
}
