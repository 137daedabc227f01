//! Direct minimization of the discretized cost functional over piecewise
//! linear paths, independent of the closed-form minimizer.
//!
//! Unknowns are the queue nodes `xi_1..xi_m` (`xi_0 = x0` fixed) and the
//! reneging increments `u_k = zeta_{k+1} - zeta_k >= 0` with
//! `sum u_k = gamma T`. On each segment the slopes are constant and `xi` is
//! linear, so `L` is integrated exactly:
//!
//! ```text
//! J_k = dt F(r_k) + u_k log(u_k / (theta dt)) - u_k - u_k M(xi_k, xi_{k+1})
//!       + theta dt (xi_k + xi_{k+1}) / 2
//! ```
//!
//! with `r_k = (xi_{k+1} - xi_k + u_k) / dt`,
//! `F(r) = lambda l(phi1(r)) + mu l(phi2(r))` and `M(a, b)` the mean of `log`
//! over `[a, b]`. The objective is therefore exactly the cost of the
//! piecewise linear path, which makes refinement over nested grids monotone.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::el_minimizer::{build_minimizer, minimizer_cost, solve_tilt};
use crate::error::{Error, Result};
use crate::model::{
    validate, CostComponents, CostReport, Horizon, Mode, ModelParams, Purpose, TargetRate, Trajectory,
};
use crate::rate_fn::{balance_controls, ell_unchecked};

/// Lower bound imposed on free `xi` nodes.
pub const XI_FLOOR: f64 = 1e-8;

/// Smallest admissible number of segments.
pub const MIN_SEGMENTS: usize = 10;

/// A discretized instance of the terminal-reneging problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscreteProblem {
    pub params: ModelParams<f64>,
    pub horizon: Horizon<f64>,
    pub target: TargetRate<f64>,
    /// Number of uniform segments.
    pub m: usize,
    pub eps_x: f64,
}

/// Feasible point of a [`DiscreteProblem`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePoint {
    /// `m + 1` node values, `xi[0] = x0`.
    pub xi: Vec<f64>,
    /// `m` reneging increments.
    pub increments: Vec<f64>,
}

/// Convergence information returned by [`optimize`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleDiagnostics {
    pub iterations: usize,
    pub objective: f64,
    /// Norm of the last accepted gradient-mapping step.
    pub gradient_norm: f64,
    pub step: f64,
    pub restarts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub point: DiscretePoint,
    pub trajectory: Trajectory<f64>,
    pub cost: CostReport<f64>,
    pub diagnostics: OracleDiagnostics,
}

/// One row of [`refinement_study`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementRow {
    pub m: usize,
    pub objective: f64,
    /// `objective` minus the closed-form minimal cost.
    pub gap: f64,
    pub iterations: usize,
}

/// Mean of `log` over `[a, b]` and its partial derivatives.
fn log_mean(a: f64, b: f64) -> (f64, f64, f64) {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let r = half / mid;
    if r.abs() < 0.02 {
        // log(mid) - sum r^{2k} / (2k (2k + 1))
        let r2 = r * r;
        let mut pow = r2;
        let mut s = 0.0;
        let mut ds = 0.0;
        let mut odd = r;
        for k in 1..=8 {
            let k2 = 2.0 * k as f64;
            s += pow / (k2 * (k2 + 1.0));
            ds += odd / (k2 + 1.0);
            pow *= r2;
            odd *= r2;
        }
        let inv = 0.5 / mid;
        let m2 = 2.0 * mid * mid;
        (mid.ln() - s, inv + ds * b / m2, inv - ds * a / m2)
    } else {
        let d = b - a;
        let lb = b.ln();
        if a == 0.0 {
            return (lb - 1.0, f64::INFINITY, 1.0 / b);
        }
        let la = a.ln();
        let m = (b * lb - a * la) / d - 1.0;
        let ratio = lb - la;
        let d2 = d * d;
        (m, (b * ratio - d) / d2, (d - a * ratio) / d2)
    }
}

/// Euclidean projection onto `{u >= 0, sum u = total}`.
fn project_simplex(u: &mut [f64], total: f64) {
    let mut sorted = u.to_vec();
    sorted.sort_unstable_by(|x, y| y.total_cmp(x));
    let mut cumulative = 0.0;
    let mut shift = 0.0;
    for (j, &v) in sorted.iter().enumerate() {
        cumulative += v;
        let candidate = (cumulative - total) / (j + 1) as f64;
        if v - candidate > 0.0 {
            shift = candidate;
        }
    }
    for v in u.iter_mut() {
        *v = (*v - shift).max(0.0);
    }
}

impl DiscretePoint {
    fn axpy(&self, alpha: f64, dir: &DiscretePoint) -> DiscretePoint {
        DiscretePoint {
            xi: self.xi.iter().zip(&dir.xi).map(|(x, d)| x + alpha * d).collect(),
            increments: self
                .increments
                .iter()
                .zip(&dir.increments)
                .map(|(x, d)| x + alpha * d)
                .collect(),
        }
    }

    fn dot_diff(&self, other: &DiscretePoint, grad: &DiscretePoint) -> (f64, f64) {
        // (<grad, other - self>, |other - self|^2)
        let mut dot = 0.0;
        let mut sq = 0.0;
        for ((a, b), g) in self.xi.iter().zip(&other.xi).zip(&grad.xi) {
            let d = b - a;
            dot += g * d;
            sq += d * d;
        }
        for ((a, b), g) in self.increments.iter().zip(&other.increments).zip(&grad.increments) {
            let d = b - a;
            dot += g * d;
            sq += d * d;
        }
        (dot, sq)
    }

    /// `x + beta (x - prev) + kappa (z - x)`.
    fn extrapolate(&self, prev: &DiscretePoint, z: &DiscretePoint, beta: f64, kappa: f64) -> DiscretePoint {
        let f = |x: &[f64], p: &[f64], zz: &[f64]| -> Vec<f64> {
            x.iter()
                .zip(p)
                .zip(zz)
                .map(|((x, p), z)| x + beta * (x - p) + kappa * (z - x))
                .collect()
        };
        DiscretePoint {
            xi: f(&self.xi, &prev.xi, &z.xi),
            increments: f(&self.increments, &prev.increments, &z.increments),
        }
    }
}

impl DiscreteProblem {
    pub fn new(params: ModelParams<f64>, horizon: Horizon<f64>, target: TargetRate<f64>, m: usize) -> Result<Self> {
        validate(params, horizon, Purpose::Variational)?;
        target.check()?;
        if params.mode != Mode::SingleServer {
            return Err(Error::UnsupportedMode("single"));
        }
        if !(target.gamma > 0.0) {
            return Err(Error::GammaNonpositive);
        }
        if m < MIN_SEGMENTS {
            return Err(Error::GridTooCoarse {
                needed: MIN_SEGMENTS,
                got: m,
            });
        }
        Ok(Self {
            params,
            horizon,
            target,
            m,
            eps_x: XI_FLOOR,
        })
    }

    pub fn dt(&self) -> f64 {
        self.horizon.t / self.m as f64
    }

    /// Required total of the reneging increments, `gamma T`.
    pub fn total_reneging(&self) -> f64 {
        self.target.gamma * self.horizon.t
    }

    pub fn grid(&self) -> Vec<f64> {
        Trajectory::uniform_grid(self.horizon.t, self.m + 1).expect("m >= 10")
    }

    /// Projects onto the feasible set: `xi_0 = x0`, `xi_k >= eps_x`, and the
    /// increments onto the scaled simplex.
    pub fn project(&self, point: &mut DiscretePoint) {
        point.xi[0] = self.params.x0;
        for x in point.xi.iter_mut().skip(1) {
            if !(*x >= self.eps_x) {
                *x = self.eps_x;
            }
        }
        for u in point.increments.iter_mut() {
            if u.is_nan() {
                *u = 0.0;
            }
        }
        project_simplex(&mut point.increments, self.total_reneging());
    }

    pub fn is_feasible(&self, point: &DiscretePoint, tol: f64) -> bool {
        point.xi.len() == self.m + 1
            && point.increments.len() == self.m
            && point.xi[0] == self.params.x0
            && point.xi[1..].iter().all(|&x| x >= self.eps_x)
            && point.increments.iter().all(|&u| u >= 0.0)
            && (point.increments.iter().sum::<f64>() - self.total_reneging()).abs()
                <= tol * self.total_reneging().max(1.0)
    }

    /// Fluid path with the reneging increments shifted uniformly to meet
    /// `zeta(T) = gamma T`.
    pub fn initial_point(&self) -> DiscretePoint {
        let p = &self.params;
        let c = (p.lambda - p.mu) / p.theta;
        let grid = self.grid();
        let xi: Vec<f64> = grid.iter().map(|&t| c + (p.x0 - c) * (-p.theta * t).exp()).collect();
        let zeta: Vec<f64> = grid
            .iter()
            .map(|&t| (p.lambda - p.mu) * t - (-p.theta * t).exp_m1() * (p.x0 - c))
            .collect();
        let shift = (self.total_reneging() - zeta[self.m]) / self.m as f64;
        let increments = zeta.windows(2).map(|w| w[1] - w[0] + shift).collect();
        let mut point = DiscretePoint { xi, increments };
        self.project(&mut point);
        point
    }

    /// Samples `traj` (which must live on this problem's grid) and projects.
    pub fn point_from_trajectory(&self, traj: &Trajectory<f64>) -> Result<DiscretePoint> {
        if traj.len() != self.m + 1 {
            return Err(Error::InvalidTrajectory(format!(
                "expected {} nodes, got {}",
                self.m + 1,
                traj.len()
            )));
        }
        let mut point = DiscretePoint {
            xi: traj.xi.clone(),
            increments: traj.zeta.windows(2).map(|w| w[1] - w[0]).collect(),
        };
        self.project(&mut point);
        Ok(point)
    }

    /// Interpolates a point of a coarser (or any) problem with the same
    /// horizon onto this grid. Nested grids reproduce the same path exactly.
    pub fn embed(&self, coarse: &DiscreteProblem, point: &DiscretePoint) -> DiscretePoint {
        let dt_c = coarse.dt();
        let mut zeta_c = Vec::with_capacity(coarse.m + 1);
        zeta_c.push(0.0);
        for u in &point.increments {
            zeta_c.push(zeta_c.last().unwrap() + u);
        }
        let interp = |values: &[f64], t: f64| -> f64 {
            let s = (t / dt_c).clamp(0.0, coarse.m as f64);
            let k = (s.floor() as usize).min(coarse.m - 1);
            let w = s - k as f64;
            values[k] + w * (values[k + 1] - values[k])
        };
        let grid = self.grid();
        let xi = grid.iter().map(|&t| interp(&point.xi, t)).collect();
        let zeta: Vec<f64> = grid.iter().map(|&t| interp(&zeta_c, t)).collect();
        let increments = zeta.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect();
        let mut out = DiscretePoint { xi, increments };
        self.project(&mut out);
        out
    }

    fn segment(&self, a: f64, b: f64, u: f64) -> (f64, f64, f64, f64, f64) {
        // (dt F(r), exact reneging integral, phi1, phi2, M(a, b))
        let p = &self.params;
        let dt = self.dt();
        let r = (b - a + u) / dt;
        let (phi1, phi2) = balance_controls(p.lambda, p.mu, r);
        let flow = dt * (p.lambda * ell_unchecked(phi1) + p.mu * ell_unchecked(phi2));
        let (m, _, _) = log_mean(a, b);
        let ren = if u > 0.0 {
            u * (u / (p.theta * dt)).ln() - u - u * m
        } else {
            0.0
        } + p.theta * dt * 0.5 * (a + b);
        (flow, ren, phi1, phi2, m)
    }

    /// Exact cost of the piecewise linear path; finite on feasible points.
    pub fn objective(&self, point: &DiscretePoint) -> f64 {
        let mut total = 0.0;
        for k in 0..self.m {
            let (flow, ren, _, _, _) = self.segment(point.xi[k], point.xi[k + 1], point.increments[k]);
            total += flow + ren;
        }
        total
    }

    /// Objective and its gradient (zero in the fixed `xi_0` slot).
    pub fn objective_and_gradient(&self, point: &DiscretePoint) -> (f64, DiscretePoint) {
        let p = &self.params;
        let dt = self.dt();
        let half_renege = p.theta * dt * 0.5;
        let mut grad = DiscretePoint {
            xi: vec![0.0; self.m + 1],
            increments: vec![0.0; self.m],
        };
        let mut total = 0.0;
        for k in 0..self.m {
            let (a, b, u) = (point.xi[k], point.xi[k + 1], point.increments[k]);
            let r = (b - a + u) / dt;
            let (phi1, phi2) = balance_controls(p.lambda, p.mu, r);
            let (m, dma, dmb) = log_mean(a, b);
            let log_u = (u.max(f64::MIN_POSITIVE) / (p.theta * dt)).ln();
            let ren = if u > 0.0 { u * log_u - u - u * m } else { 0.0 };
            total += dt * (p.lambda * ell_unchecked(phi1) + p.mu * ell_unchecked(phi2)) + ren + half_renege * (a + b);
            let f1 = phi1.ln();
            grad.increments[k] = f1 + log_u - m;
            grad.xi[k + 1] += f1 - u * dmb + half_renege;
            if k > 0 {
                grad.xi[k] += -f1 - u * dma + half_renege;
            }
        }
        (total, grad)
    }

    /// Trajectory on the problem grid; node controls are those of the
    /// segment to the right (the last node repeats the last segment).
    pub fn to_trajectory(&self, point: &DiscretePoint) -> Trajectory<f64> {
        let p = &self.params;
        let dt = self.dt();
        let mut zeta = Vec::with_capacity(self.m + 1);
        zeta.push(0.0);
        let mut controls = Vec::with_capacity(self.m + 1);
        for k in 0..self.m {
            zeta.push(zeta[k] + point.increments[k]);
            let (_, _, phi1, phi2, _) = self.segment(point.xi[k], point.xi[k + 1], point.increments[k]);
            let mean_x = 0.5 * (point.xi[k] + point.xi[k + 1]);
            controls.push([phi1, phi2, point.increments[k] / (dt * p.theta * mean_x)]);
        }
        controls.push(controls[self.m - 1]);
        Trajectory {
            grid: self.grid(),
            xi: point.xi.clone(),
            zeta,
            controls: Some(controls),
        }
    }

    pub fn cost_report(&self, point: &DiscretePoint) -> CostReport<f64> {
        let p = &self.params;
        let dt = self.dt();
        let mut comp = CostComponents {
            arrival: 0.0,
            service: 0.0,
            reneging: 0.0,
        };
        for k in 0..self.m {
            let (_, ren, phi1, phi2, _) = self.segment(point.xi[k], point.xi[k + 1], point.increments[k]);
            comp.arrival += dt * p.lambda * ell_unchecked(phi1);
            comp.service += dt * p.mu * ell_unchecked(phi2);
            comp.reneging += ren;
        }
        let total = self.objective(point);
        CostReport {
            total,
            normalized: total / self.horizon.t,
            components: comp,
            decay_rate: None,
        }
    }
}

/// Minimizes from the fluid initial point. See [`optimize_from`].
pub fn optimize(problem: &DiscreteProblem, max_iters: usize, tol: f64) -> Result<OracleSolution> {
    optimize_from(problem, problem.initial_point(), max_iters, tol)
}

/// Monotone accelerated projected gradient with backtracking (step halving
/// from an initial step of 1, mild growth after accepted steps) and restart
/// on objective increase.
///
/// Stops once the average relative decrease over the last 50 iterations is
/// below `tol`; returns `NotConverged` if `max_iters` is reached first.
pub fn optimize_from(problem: &DiscreteProblem, start: DiscretePoint, max_iters: usize, tol: f64) -> Result<OracleSolution> {
    const WINDOW: usize = 50;
    let mut x = start;
    if x.xi.len() != problem.m + 1 || x.increments.len() != problem.m {
        return Err(Error::InvalidInput("start point has the wrong dimensions".into()));
    }
    problem.project(&mut x);
    let mut fx = problem.objective(&x);
    let mut y = x.clone();
    let mut t = 1.0_f64;
    let mut step = 1.0_f64;
    let mut history = vec![fx];
    let mut restarts = 0;
    let mut gradient_norm = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iters {
        iterations += 1;
        let (fy, gy) = problem.objective_and_gradient(&y);
        let (z, fz) = loop {
            let mut z = y.axpy(-step, &gy);
            problem.project(&mut z);
            let fz = problem.objective(&z);
            let (dot, sq) = y.dot_diff(&z, &gy);
            if fz.is_finite() && fz <= fy + dot + sq / (2.0 * step) {
                gradient_norm = sq.sqrt() / step;
                break (z, fz);
            }
            step *= 0.5;
            if step < 1e-300 {
                return Err(Error::NotConverged {
                    iterations,
                    objective: fx,
                    gradient_norm,
                });
            }
        };
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        if fz <= fx {
            let x_prev = std::mem::replace(&mut x, z.clone());
            fx = fz;
            y = x.extrapolate(&x_prev, &z, (t - 1.0) / t_next, 0.0);
            t = t_next;
        } else {
            // monotone safeguard: keep x, drop momentum
            restarts += 1;
            y = x.clone();
            t = 1.0;
        }
        problem.project(&mut y);
        step *= 1.1;
        history.push(fx);
        if gradient_norm == 0.0 {
            converged = true;
            break;
        }
        if history.len() > WINDOW {
            let old = history[history.len() - 1 - WINDOW];
            let decrease = (old - fx) / WINDOW as f64;
            if decrease <= tol * fx.abs().max(1e-12) {
                converged = true;
                break;
            }
        }
    }
    let diagnostics = OracleDiagnostics {
        iterations,
        objective: fx,
        gradient_norm,
        step,
        restarts,
    };
    if !converged {
        return Err(Error::NotConverged {
            iterations,
            objective: fx,
            gradient_norm,
        });
    }
    Ok(OracleSolution {
        trajectory: problem.to_trajectory(&x),
        cost: problem.cost_report(&x),
        point: x,
        diagnostics,
    })
}

/// Closed-form minimal cost used as the reference in refinement tables.
pub fn closed_form_cost(params: &ModelParams<f64>, horizon: Horizon<f64>, target: TargetRate<f64>) -> Result<f64> {
    let tilt = solve_tilt(params, horizon, target, 1e-12)?;
    let traj = build_minimizer(params, horizon, &tilt, 2)?;
    Ok(minimizer_cost(params, horizon, target, &tilt, &traj)?.total)
}

/// Solves on each `m` in increasing order, warm-starting each level from the
/// interpolated solution of the previous one.
pub fn refinement_study(
    params: &ModelParams<f64>,
    horizon: Horizon<f64>,
    target: TargetRate<f64>,
    m_list: &[usize],
    max_iters: usize,
    tol: f64,
) -> Result<Vec<RefinementRow>> {
    if m_list.is_empty() || m_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("m list must be nonempty and strictly increasing".into()));
    }
    let reference = closed_form_cost(params, horizon, target)?;
    let mut rows = Vec::with_capacity(m_list.len());
    let mut previous: Option<(DiscreteProblem, DiscretePoint)> = None;
    for &m in m_list {
        let problem = DiscreteProblem::new(*params, horizon, target, m)?;
        let start = match &previous {
            Some((coarse, point)) => problem.embed(coarse, point),
            None => problem.initial_point(),
        };
        let sol = optimize_from(&problem, start, max_iters, tol)?;
        rows.push(RefinementRow {
            m,
            objective: sol.diagnostics.objective,
            gap: sol.diagnostics.objective - reference,
            iterations: sol.diagnostics.iterations,
        });
        previous = Some((problem, sol.point));
    }
    Ok(rows)
}

/// Writes `m,objective,gap,iterations`.
pub fn write_refinement_csv<W: Write>(rows: &[RefinementRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["m", "objective", "gap", "iterations"])?;
    for r in rows {
        w.write_record([
            r.m.to_string(),
            format!("{:e}", r.objective),
            format!("{:e}", r.gap),
            r.iterations.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}
