//! Event-driven simulation of the scaled queue, exponentially tilted runs with
//! exact likelihood ratios, and Monte Carlo / importance-sampling estimators
//! of reneging-count tail probabilities.
//!
//! Replication `r` draws from `ChaCha8Rng` seeded with `seed` on stream `r`,
//! so results do not depend on the thread schedule.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::el_minimizer::minimize;
use crate::error::{Error, Result};
use crate::model::{validate, Horizon, Mode, ModelParams, Purpose, TargetRate, Trajectory};
use crate::rate_fn::decay_rate;

/// Simulation settings shared by every replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub params: ModelParams<f64>,
    pub horizon: Horizon<f64>,
    /// Scale: arrival intensity `lambda n`, and `n` servers in many-server mode.
    pub n: u64,
    pub seed: u64,
    pub replications: usize,
}

impl SimConfig {
    pub fn new(params: ModelParams<f64>, horizon: Horizon<f64>, n: u64, seed: u64, replications: usize) -> Self {
        Self {
            params,
            horizon,
            n,
            seed,
            replications,
        }
    }

    pub fn check(&self) -> Result<()> {
        validate(self.params, self.horizon, Purpose::Simulation)?;
        if self.n == 0 {
            return Err(Error::InvalidInput("scale n must be at least 1".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidInput("replications must be at least 1".into()));
        }
        Ok(())
    }

    /// Unscaled initial queue, `round(n x0)` with ties to even.
    pub fn initial_queue(&self) -> u64 {
        (self.n as f64 * self.params.x0).round_ties_even() as u64
    }

    fn rng(&self, replication: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(replication as u64);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventType {
    Initial,
    Arrival,
    Service,
    Reneging,
}

impl EventType {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventType::Initial => "initial",
            EventType::Arrival => "arrival",
            EventType::Service => "service",
            EventType::Reneging => "reneging",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub arrivals: u64,
    pub services: u64,
    pub renegings: u64,
}

/// One realized path. Entry 0 is the initial state at `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    pub n: u64,
    pub jump_times: Vec<f64>,
    /// Unscaled queue length after each jump.
    pub queue: Vec<u64>,
    /// Cumulative renegings after each jump.
    pub reneged: Vec<u64>,
    pub events: Vec<EventType>,
    pub log_lr: f64,
    pub counts: EventCounts,
    pub horizon: f64,
}

impl SamplePath {
    pub fn x_bar(&self, k: usize) -> f64 {
        self.queue[k] as f64 / self.n as f64
    }

    pub fn y_bar(&self, k: usize) -> f64 {
        self.reneged[k] as f64 / self.n as f64
    }

    pub fn final_x_bar(&self) -> f64 {
        self.x_bar(self.queue.len() - 1)
    }

    pub fn final_y_bar(&self) -> f64 {
        self.y_bar(self.reneged.len() - 1)
    }

    /// `n x_bar(T) = q0 + arrivals - services - renegings`.
    pub fn conserves(&self) -> bool {
        let end = *self.queue.last().unwrap() as i128;
        let c = &self.counts;
        end == self.queue[0] as i128 + c.arrivals as i128 - c.services as i128 - c.renegings as i128
    }

    /// Writes `t,x_bar,y_bar,event_type`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["t", "x_bar", "y_bar", "event_type"])?;
        for k in 0..self.jump_times.len() {
            w.write_record([
                format!("{:e}", self.jump_times[k]),
                format!("{:e}", self.x_bar(k)),
                format!("{:e}", self.y_bar(k)),
                self.events[k].as_str().to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }

    /// `sup |x_bar - xi|` and `sup |y_bar - zeta|` against a reference
    /// trajectory interpolated linearly, checked just before and after every
    /// jump and at `T`.
    pub fn sup_distance(&self, reference: &Trajectory<f64>) -> (f64, f64) {
        let interp = |values: &[f64], t: f64| -> f64 {
            let g = &reference.grid;
            let k = match g.binary_search_by(|v| v.total_cmp(&t)) {
                Ok(k) => return values[k],
                Err(k) => k.clamp(1, g.len() - 1),
            };
            let w = (t - g[k - 1]) / (g[k] - g[k - 1]);
            values[k - 1] + w * (values[k] - values[k - 1])
        };
        let mut dx = 0.0_f64;
        let mut dy = 0.0_f64;
        let mut check = |t: f64, k: usize| {
            dx = dx.max((self.x_bar(k) - interp(&reference.xi, t)).abs());
            dy = dy.max((self.y_bar(k) - interp(&reference.zeta, t)).abs());
        };
        for k in 0..self.jump_times.len() {
            let t = self.jump_times[k];
            if k > 0 {
                check(t, k - 1);
            }
            check(t, k);
        }
        check(self.horizon, self.jump_times.len() - 1);
        (dx, dy)
    }

    /// Renegings in `[0, window)` and the compensator
    /// `int_0^window theta (Q - c)^+ ds` of the untilted reneging intensity
    /// (`c = 1` single server, `c = n` many servers).
    pub fn reneging_exposure(&self, params: &ModelParams<f64>, window: f64) -> (u64, f64) {
        let floor = match params.mode {
            Mode::SingleServer => 1,
            Mode::ManyServer => self.n,
        };
        let mut events = 0;
        let mut integral = 0.0;
        for k in 0..self.jump_times.len() {
            let start = self.jump_times[k];
            if start >= window {
                break;
            }
            let end = self.jump_times.get(k + 1).copied().unwrap_or(self.horizon).min(window);
            integral += params.theta * self.queue[k].saturating_sub(floor) as f64 * (end - start);
            if k + 1 < self.jump_times.len() && self.jump_times[k + 1] < window && self.events[k + 1] == EventType::Reneging {
                events += 1;
            }
        }
        (events, integral)
    }
}

/// Piecewise-constant controls: value `phi[k]` on `[grid[k], grid[k+1])`.
#[derive(Debug, Clone, PartialEq)]
struct ControlTable {
    grid: Vec<f64>,
    phi: Vec<[f64; 3]>,
}

impl ControlTable {
    fn null(horizon: f64) -> Self {
        Self {
            grid: vec![0.0, horizon],
            phi: vec![[1.0; 3]],
        }
    }

    fn from_trajectory(traj: &Trajectory<f64>, horizon: f64) -> Result<Self> {
        let controls = traj
            .controls
            .as_ref()
            .ok_or_else(|| Error::ControlNotPositive("trajectory carries no controls".into()))?;
        if traj.len() < 2 || controls.len() != traj.len() {
            return Err(Error::ControlNotPositive("need a control value at every grid node".into()));
        }
        if traj.grid[0] != 0.0 || *traj.grid.last().unwrap() < horizon * (1.0 - 1e-12) {
            return Err(Error::ControlNotPositive("control grid must cover [0, T]".into()));
        }
        if traj.grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::ControlNotPositive("control grid must be increasing".into()));
        }
        for (k, c) in controls.iter().enumerate() {
            let ok = c[0] > 0.0 && c[1] > 0.0 && c[2] >= 0.0 && c.iter().all(|v| v.is_finite());
            if !ok {
                return Err(Error::ControlNotPositive(format!("node {k}: {c:?}")));
            }
        }
        let mut grid = traj.grid.clone();
        *grid.last_mut().unwrap() = grid.last().unwrap().max(horizon);
        Ok(Self {
            grid,
            phi: controls[..controls.len() - 1].to_vec(),
        })
    }
}

/// Untilted rates `(arrival, service, reneging)` at unscaled queue `q`.
fn base_rates(params: &ModelParams<f64>, n: u64, q: u64) -> [f64; 3] {
    let nf = n as f64;
    match params.mode {
        Mode::SingleServer => [
            params.lambda * nf,
            if q > 0 { params.mu * nf } else { 0.0 },
            params.theta * q.saturating_sub(1) as f64,
        ],
        Mode::ManyServer => [
            params.lambda * nf,
            params.mu * q.min(n) as f64,
            params.theta * q.saturating_sub(n) as f64,
        ],
    }
}

#[derive(Debug, Clone, Copy)]
struct Outcome {
    renegings: u64,
    log_lr: f64,
}

/// Runs one path. Rates are constant between jumps and control nodes, so the
/// exponential clock is simply redrawn at each control node (an Ogata
/// majorant equal to the rate itself). The log likelihood ratio of the
/// untilted law against the tilted one is
/// `sum_jumps -log phi_i + int (tilted - untilted total rate) dt`.
fn run(
    cfg: &SimConfig,
    table: &ControlTable,
    rng: &mut ChaCha8Rng,
    mut record: Option<&mut SamplePath>,
) -> Outcome {
    let params = &cfg.params;
    let horizon = cfg.horizon.t;
    let mut t = 0.0;
    let mut q = cfg.initial_queue();
    let mut renegings = 0u64;
    let mut log_lr = 0.0;
    let mut cell = 0;
    let cells = table.phi.len();
    loop {
        let cell_end = table.grid[cell + 1].min(horizon);
        let base = base_rates(params, cfg.n, q);
        let phi = table.phi[cell];
        let tilted = [base[0] * phi[0], base[1] * phi[1], base[2] * phi[2]];
        let total = tilted[0] + tilted[1] + tilted[2];
        let excess = base[0] * (phi[0] - 1.0) + base[1] * (phi[1] - 1.0) + base[2] * (phi[2] - 1.0);
        let next = if total > 0.0 {
            let e: f64 = rng.sample(Exp1);
            t + e / total
        } else {
            f64::INFINITY
        };
        if next >= cell_end {
            log_lr += excess * (cell_end - t);
            t = cell_end;
            if t >= horizon || cell + 1 >= cells {
                break;
            }
            cell += 1;
            continue;
        }
        log_lr += excess * (next - t);
        t = next;
        let u = rng.random::<f64>() * total;
        let event = if u < tilted[0] || (tilted[1] == 0.0 && tilted[2] == 0.0) {
            q += 1;
            log_lr -= phi[0].ln();
            EventType::Arrival
        } else if u < tilted[0] + tilted[1] || tilted[2] == 0.0 {
            q -= 1;
            log_lr -= phi[1].ln();
            EventType::Service
        } else {
            q -= 1;
            renegings += 1;
            log_lr -= phi[2].ln();
            EventType::Reneging
        };
        if let Some(path) = record.as_deref_mut() {
            path.jump_times.push(t);
            path.queue.push(q);
            path.reneged.push(renegings);
            path.events.push(event);
            match event {
                EventType::Arrival => path.counts.arrivals += 1,
                EventType::Service => path.counts.services += 1,
                EventType::Reneging => path.counts.renegings += 1,
                EventType::Initial => {}
            }
        }
    }
    if let Some(path) = record {
        path.log_lr = log_lr;
    }
    Outcome { renegings, log_lr }
}

fn record_path(cfg: &SimConfig, table: &ControlTable, replication: usize) -> SamplePath {
    let mut path = SamplePath {
        n: cfg.n,
        jump_times: vec![0.0],
        queue: vec![cfg.initial_queue()],
        reneged: vec![0],
        events: vec![EventType::Initial],
        log_lr: 0.0,
        counts: EventCounts::default(),
        horizon: cfg.horizon.t,
    };
    let mut rng = cfg.rng(replication);
    run(cfg, table, &mut rng, Some(&mut path));
    path
}

/// Untilted path for replication 0.
pub fn simulate(config: &SimConfig) -> Result<SamplePath> {
    simulate_replication(config, 0)
}

pub fn simulate_replication(config: &SimConfig, replication: usize) -> Result<SamplePath> {
    config.check()?;
    Ok(record_path(config, &ControlTable::null(config.horizon.t), replication))
}

/// Tilted path for replication 0 under the controls carried by `controls`
/// (value at the left node of each cell).
pub fn simulate_tilted(config: &SimConfig, controls: &Trajectory<f64>) -> Result<SamplePath> {
    simulate_tilted_replication(config, controls, 0)
}

pub fn simulate_tilted_replication(config: &SimConfig, controls: &Trajectory<f64>, replication: usize) -> Result<SamplePath> {
    config.check()?;
    let table = ControlTable::from_trajectory(controls, config.horizon.t)?;
    Ok(record_path(config, &table, replication))
}

/// Which tail of `Y(T)` is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AtLeast,
    AtMost,
}

impl Direction {
    /// Integer reneging-count test equivalent to `Y(T) >= gamma T` (or `<=`).
    pub fn hit(&self, renegings: u64, n: u64, target: TargetRate<f64>, horizon: Horizon<f64>) -> bool {
        let level = n as f64 * target.gamma * horizon.t;
        match self {
            Direction::AtLeast => renegings as f64 >= (level - 1e-9).ceil(),
            Direction::AtMost => renegings as f64 <= (level + 1e-9).floor(),
        }
    }
}

/// Running mean and centered second moment with pairwise merging.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&self, other: &Moments) -> Moments {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        let frac = other.count as f64 / count as f64;
        Moments {
            count,
            mean: self.mean + delta * frac,
            m2: self.m2 + other.m2 + delta * delta * self.count as f64 * frac,
        }
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }

    /// Fixed-size chunks merged left to right: the result depends only on
    /// the data order.
    pub fn from_slice(values: &[f64]) -> Moments {
        values
            .chunks(4096)
            .map(|c| {
                let mut m = Moments::default();
                c.iter().for_each(|&v| m.push(v));
                m
            })
            .fold(Moments::default(), |acc, m| acc.merge(&m))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub p_hat: f64,
    /// Half-width of the normal 95% interval.
    pub ci95: f64,
    pub std_error: f64,
    /// `-(1/n) log p_hat`, when `p_hat > 0`.
    pub log_decay: Option<f64>,
    /// `(sum w)^2 / sum w^2`; importance sampling only.
    pub ess: Option<f64>,
    pub replications_used: usize,
    /// All replications returned the same value (e.g. no hits).
    pub degenerate: bool,
}

const Z95: f64 = 1.959_963_984_540_054;

fn report(weights: &[f64], n: u64, importance: bool) -> EstimateReport {
    let m = Moments::from_slice(weights);
    let p_hat = m.mean.clamp(0.0, 1.0);
    let se = m.std_error();
    let ess = importance.then(|| {
        let s: f64 = weights.iter().sum();
        let s2: f64 = weights.iter().map(|w| w * w).sum();
        if s2 > 0.0 {
            s * s / s2
        } else {
            0.0
        }
    });
    EstimateReport {
        p_hat,
        ci95: Z95 * se,
        std_error: se,
        log_decay: (p_hat > 0.0).then(|| -p_hat.ln() / n as f64),
        ess,
        replications_used: weights.len(),
        degenerate: m.m2 == 0.0,
    }
}

fn outcomes(config: &SimConfig, table: &ControlTable) -> Vec<Outcome> {
    (0..config.replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = config.rng(r);
            run(config, table, &mut rng, None)
        })
        .collect()
}

/// Plain Monte Carlo estimate of `P(Y(T) >= gamma T)` (or `<=`).
pub fn estimate_naive(config: &SimConfig, target: TargetRate<f64>, direction: Direction) -> Result<EstimateReport> {
    config.check()?;
    target.check()?;
    let table = ControlTable::null(config.horizon.t);
    let weights: Vec<f64> = outcomes(config, &table)
        .iter()
        .map(|o| f64::from(u8::from(direction.hit(o.renegings, config.n, target, config.horizon))))
        .collect();
    Ok(report(&weights, config.n, false))
}

/// Importance-sampling estimate with weights `1{event} exp(log_lr)`.
pub fn estimate_is(
    config: &SimConfig,
    target: TargetRate<f64>,
    direction: Direction,
    controls: &Trajectory<f64>,
) -> Result<EstimateReport> {
    config.check()?;
    target.check()?;
    let table = ControlTable::from_trajectory(controls, config.horizon.t)?;
    let weights: Vec<f64> = outcomes(config, &table)
        .iter()
        .map(|o| {
            if direction.hit(o.renegings, config.n, target, config.horizon) {
                o.log_lr.exp()
            } else {
                0.0
            }
        })
        .collect();
    Ok(report(&weights, config.n, true))
}

/// Sample mean and standard error of `exp(log_lr)` under the tilted law.
pub fn likelihood_ratio_moments(config: &SimConfig, controls: &Trajectory<f64>) -> Result<Moments> {
    config.check()?;
    let table = ControlTable::from_trajectory(controls, config.horizon.t)?;
    let w: Vec<f64> = outcomes(config, &table).iter().map(|o| o.log_lr.exp()).collect();
    Ok(Moments::from_slice(&w))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: u64,
    pub p_hat: f64,
    pub ci95: f64,
    pub log_decay: Option<f64>,
    pub ess: Option<f64>,
    /// Minimal cost `I*_{gamma,T}` from the closed-form minimizer.
    pub reference_cost: f64,
    /// `T C(gamma)`.
    pub t_c_gamma: f64,
}

/// Runs [`estimate_is`] for each `n`; replication streams for scale `n`
/// use seed `seed + n`.
#[allow(clippy::too_many_arguments)]
pub fn decay_sweep(
    params: &ModelParams<f64>,
    horizon: Horizon<f64>,
    target: TargetRate<f64>,
    direction: Direction,
    n_list: &[u64],
    replications: usize,
    controls: &Trajectory<f64>,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if n_list.is_empty() {
        return Ok(Vec::new());
    }
    if n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("n list must be strictly increasing".into()));
    }
    let reference_cost = minimize(params, horizon, target, 1e-12, 2)?.cost.total;
    let t_c_gamma = horizon.t * decay_rate(params, target).c_gamma;
    n_list
        .iter()
        .map(|&n| {
            let cfg = SimConfig::new(*params, horizon, n, seed.wrapping_add(n), replications);
            let r = estimate_is(&cfg, target, direction, controls)?;
            Ok(SweepRow {
                n,
                p_hat: r.p_hat,
                ci95: r.ci95,
                log_decay: r.log_decay,
                ess: r.ess,
                reference_cost,
                t_c_gamma,
            })
        })
        .collect()
}

/// Writes `n,p_hat,ci95,log_decay,ess,reference_cost,t_c_gamma`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["n", "p_hat", "ci95", "log_decay", "ess", "reference_cost", "t_c_gamma"])?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.n.to_string(),
            format!("{:e}", r.p_hat),
            format!("{:e}", r.ci95),
            opt(r.log_decay),
            opt(r.ess),
            format!("{:e}", r.reference_cost),
            format!("{:e}", r.t_c_gamma),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}
