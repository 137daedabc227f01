//! Closed-form minimizer of the reneging-count problem.
//!
//! The Euler-Lagrange equations reduce to a scalar equation for the constant
//! `A`. Everything here is written in the stabilized unknown
//! `a = A e^{theta T}` (so `a < 1`), with `E = e^{-theta T}`:
//!
//! * `B = 1 / (1 - a)`
//! * `1 - A e^{theta t} = 1 - a e^{-theta (T - t)}`
//! * `log Lambda = -theta T + log(1 - a) - log(1 - a E)`
//!
//! which keeps every quantity finite for horizons where `e^{theta T}`
//! overflows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    validate, CostComponents, CostReport, Horizon, Mode, ModelParams, Purpose, TargetRate, Trajectory,
};
use crate::rate_fn::{decay_rate, ell_unchecked, z_root};
use crate::roots::bracketed_root;
use crate::scalar::Real;

/// Solution of the tilt equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TiltParameters<S> {
    /// `a = A e^{theta T} < 1`.
    pub a: S,
    /// Raw constant `A = a e^{-theta T}`.
    #[serde(rename = "A")]
    pub big_a: S,
    /// `B = 1 / (1 - a)`.
    #[serde(rename = "B")]
    pub big_b: S,
    /// `Lambda = (e^{-theta T} - A) / (1 - A)`, in `(0, 1)`. Underflows to 0
    /// for very long horizons; `log_lambda_cap` stays exact.
    pub lambda_cap: S,
    pub log_lambda_cap: S,
    /// `|1/(1-a) - R(a)|` at the returned root.
    pub residual: S,
    pub iterations: usize,
    /// Final sign-change bracket in `a`.
    pub bracket: (S, S),
}

/// Scalar pieces of the tilt equation for fixed parameters.
#[derive(Debug, Clone, Copy)]
struct TiltEquation<S> {
    lambda: S,
    mu: S,
    theta: S,
    x0: S,
    gamma_t: S,
    theta_t: S,
    e: S,
    d: S,
}

#[derive(Debug, Clone, Copy)]
struct TiltTerms<S> {
    log_cap: S,
    cap: S,
    g: S,
    h: S,
    rhs: S,
}

impl<S: Real> TiltEquation<S> {
    fn new(params: &ModelParams<S>, horizon: Horizon<S>, target: TargetRate<S>) -> Self {
        let theta_t = params.theta * horizon.t;
        Self {
            lambda: params.lambda,
            mu: params.mu,
            theta: params.theta,
            x0: params.x0,
            gamma_t: target.gamma * horizon.t,
            theta_t,
            e: (-theta_t).exp(),
            d: theta_t.x_minus_one_plus_exp_neg(),
        }
    }

    fn log_cap(&self, a: S) -> S {
        -self.theta_t + (-a).ln_1p() - (-a * self.e).ln_1p()
    }

    fn terms(&self, a: S) -> TiltTerms<S> {
        let log_cap = self.log_cap(a);
        let cap = log_cap.exp();
        let g = self.gamma_t - self.x0 * (S::one() - cap);
        let h = log_cap.log_minus_expm1();
        let lin = self.theta * g;
        // -4 lambda mu D H >= 0 since H <= 0
        let disc = -S::lit(4.0) * self.lambda * self.mu * self.d * h;
        let root = lin.hypot(disc.max(S::zero()).sqrt());
        let rhs = if lin >= S::zero() {
            (lin + root) / (S::two() * self.lambda * self.d)
        } else {
            // cancellation-free form of the same root
            S::two() * self.mu * (-h) / (root - lin)
        };
        TiltTerms {
            log_cap,
            cap,
            g,
            h,
            rhs,
        }
    }

    /// `1/(1-a) - R(a)`.
    fn defect(&self, a: S) -> S {
        (S::one() - a).recip() - self.terms(a).rhs
    }

    /// Defect divided by `-log Lambda`; strictly increasing in `a`.
    fn scaled_defect(&self, a: S) -> S {
        let t = self.terms(a);
        ((S::one() - a).recip() - t.rhs) / (-t.log_cap)
    }
}

/// Solves the tilt equation for `a`.
///
/// The scaled defect is increasing, negative as `a -> -inf` and positive as
/// `a -> 1`, so a sign change is located by stepping `a = 1 - 2^k` down or
/// `a = 1 - 2^{-k}` up from `a = 0`, then refined by a safeguarded
/// regula falsi until the unscaled defect is at most `tol * max(1, B)`.
/// The defect is a difference of two quantities of size `B`, so the relative
/// form is the strongest test attainable in floating point when `B` is large.
pub fn solve_tilt<S: Real>(
    params: &ModelParams<S>,
    horizon: Horizon<S>,
    target: TargetRate<S>,
    tol: S,
) -> Result<TiltParameters<S>> {
    validate(*params, horizon, Purpose::Variational)?;
    target.check()?;
    if !(target.gamma > S::zero()) {
        return Err(Error::GammaNonpositive);
    }
    let eq = TiltEquation::new(params, horizon, target);
    let f = |a: S| eq.scaled_defect(a);

    let f0 = f(S::zero());
    if !f0.is_finite() {
        return Err(Error::BracketingFailed(format!("defect not finite at a = 0: {f0}")));
    }
    let (lo, hi) = if f0 == S::zero() {
        (S::zero(), S::zero())
    } else if f0 > S::zero() {
        let mut step = S::two();
        let mut lo = S::one() - step;
        let mut found = false;
        for _ in 0..1100 {
            let v = f(lo);
            if v < S::zero() {
                found = true;
                break;
            }
            if !v.is_finite() || !lo.is_finite() {
                break;
            }
            step = step * S::two();
            lo = S::one() - step;
        }
        if !found {
            return Err(Error::BracketingFailed("no sign change below a = 0".into()));
        }
        (lo, S::zero())
    } else {
        let mut delta = S::half();
        let mut hi = S::one() - delta;
        let mut found = false;
        while delta > S::epsilon() {
            if f(hi) > S::zero() {
                found = true;
                break;
            }
            delta = delta * S::half();
            hi = S::one() - delta;
        }
        if !found {
            return Err(Error::BracketingFailed("no sign change above a = 0".into()));
        }
        (S::zero(), hi)
    };

    let (a, iterations, bracket) = if lo == hi {
        (lo, 0, (lo, hi))
    } else {
        // on [lo, hi], |scaled| <= tol max(1, B(lo)) / (-log Lambda(hi))
        // implies |defect| <= tol max(1, B)
        let scale = -eq.log_cap(hi) / (S::one() - lo).recip().max(S::one());
        let root = bracketed_root(f, lo, hi, tol / scale, 200);
        (root.x, root.iterations, root.bracket)
    };
    let terms = eq.terms(a);
    let residual = eq.defect(a).abs();
    Ok(TiltParameters {
        a,
        big_a: a * eq.e,
        big_b: (S::one() - a).recip(),
        lambda_cap: terms.cap,
        log_lambda_cap: terms.log_cap,
        residual,
        iterations,
        bracket,
    })
}

/// The three terms of `lambda D B^2 - theta G B + mu H` at the tilt solution.
/// Their sum vanishes exactly when the terminal condition `zeta(T) = gamma T`
/// holds.
pub fn quadratic_terms<S: Real>(
    params: &ModelParams<S>,
    horizon: Horizon<S>,
    target: TargetRate<S>,
    tilt: &TiltParameters<S>,
) -> [S; 3] {
    let eq = TiltEquation::new(params, horizon, target);
    let t = eq.terms(tilt.a);
    let b = tilt.big_b;
    [eq.lambda * eq.d * b * b, -eq.theta * t.g * b, eq.mu * t.h]
}

/// Samples of the minimizer and its derivatives at one time.
#[derive(Debug, Clone, Copy)]
struct PathPoint<S> {
    xi: S,
    zeta: S,
    dxi: S,
    dzeta: S,
    phi: [S; 3],
}

fn path_point<S: Real>(params: &ModelParams<S>, horizon: Horizon<S>, tilt: &TiltParameters<S>, t: S) -> PathPoint<S> {
    let (lambda, mu, theta, x0) = (params.lambda, params.mu, params.theta, params.x0);
    let (a, b) = (tilt.a, tilt.big_b);
    let big_e = (-theta * horizon.t).exp();
    let one_minus_big_a = S::one() - a * big_e;
    let decay = (-theta * t).exp();
    let gone = -(-theta * t).exp_m1();
    // v = A e^{theta t}, w = 1 - v
    let v = a * (-theta * (horizon.t - t)).exp();
    let w = S::one() - v;

    let xi = x0 * (decay - a * big_e) / one_minus_big_a + lambda * b / theta * gone * w
        - mu / (theta * b) * gone / one_minus_big_a;
    let log_cap_t = -theta * t + (-v).ln_1p() - (-a * big_e).ln_1p();
    let zeta = lambda * b / theta * (theta * t).x_minus_one_plus_exp_neg()
        + mu / (theta * b) * log_cap_t.log_minus_expm1()
        + gone * x0 / one_minus_big_a;

    let dxi = -theta * x0 * decay / one_minus_big_a + lambda * b * (decay - v) - mu * decay / (b * one_minus_big_a);
    let dzeta = lambda * b * gone + mu / b * (decay / one_minus_big_a - w.recip()) + theta * x0 * decay / one_minus_big_a;
    let phi1 = b * w;
    PathPoint {
        xi,
        zeta,
        dxi,
        dzeta,
        phi: [phi1, phi1.recip(), w.recip()],
    }
}

/// Samples the minimizer and its tilted controls on a uniform grid.
///
/// `xi(0) = x0` and `zeta(0) = 0` are set exactly; rounding-level negative
/// values of `xi` are clamped to zero.
pub fn build_minimizer<S: Real>(
    params: &ModelParams<S>,
    horizon: Horizon<S>,
    tilt: &TiltParameters<S>,
    grid_size: usize,
) -> Result<Trajectory<S>> {
    let grid = Trajectory::uniform_grid(horizon.t, grid_size)?;
    let mut xi = Vec::with_capacity(grid.len());
    let mut zeta = Vec::with_capacity(grid.len());
    let mut controls = Vec::with_capacity(grid.len());
    for &t in &grid {
        let p = path_point(params, horizon, tilt, t);
        xi.push(p.xi.max(S::zero()));
        zeta.push(p.zeta);
        controls.push(p.phi);
    }
    xi[0] = params.x0;
    zeta[0] = S::zero();
    Ok(Trajectory {
        grid,
        xi,
        zeta,
        controls: Some(controls),
    })
}

/// Trapezoidal split of `lambda l(phi1) + mu l(phi2) + theta xi l(phi3)`
/// along a trajectory carrying controls.
pub fn control_cost_components<S: Real>(params: &ModelParams<S>, traj: &Trajectory<S>) -> Result<CostComponents<S>> {
    let controls = traj
        .controls
        .as_ref()
        .ok_or_else(|| Error::InvalidTrajectory("controls required".into()))?;
    if controls.len() != traj.len() || traj.len() < 2 {
        return Err(Error::InvalidTrajectory("controls must cover every grid node".into()));
    }
    let integrand = |k: usize| -> [S; 3] {
        let [p1, p2, p3] = controls[k];
        [
            params.lambda * ell_unchecked(p1),
            params.mu * ell_unchecked(p2),
            params.theta * traj.xi[k] * ell_unchecked(p3),
        ]
    };
    let mut acc = [S::zero(); 3];
    let mut left = integrand(0);
    for k in 1..traj.len() {
        let right = integrand(k);
        let h = (traj.grid[k] - traj.grid[k - 1]) * S::half();
        for i in 0..3 {
            acc[i] = acc[i] + h * (left[i] + right[i]);
        }
        left = right;
    }
    Ok(CostComponents {
        arrival: acc[0],
        service: acc[1],
        reneging: acc[2],
    })
}

/// Closed-form cost of the minimizer,
/// `(gamma T - x0) log B - x0 log(1 - A) + (lambda + mu) T
///  - (lambda B / theta) [theta T - a (1 - e^{-theta T})] + (mu / (B theta)) log Lambda`,
/// with the component split recomputed by quadrature on `traj`.
pub fn minimizer_cost<S: Real>(
    params: &ModelParams<S>,
    horizon: Horizon<S>,
    target: TargetRate<S>,
    tilt: &TiltParameters<S>,
    traj: &Trajectory<S>,
) -> Result<CostReport<S>> {
    let (lambda, mu, theta, x0) = (params.lambda, params.mu, params.theta, params.x0);
    let t_end = horizon.t;
    let big_e = (-theta * t_end).exp();
    let (a, b) = (tilt.a, tilt.big_b);
    let log_b = -(-a).ln_1p();
    // the xi(T) log B terms cancel
    let total = (target.gamma * t_end - x0) * log_b - x0 * (-a * big_e).ln_1p() + (lambda + mu) * t_end
        - lambda * b / theta * (theta * t_end - a * (S::one() - big_e))
        + mu / (b * theta) * tilt.log_lambda_cap;
    let components = control_cost_components(params, traj)?;
    Ok(CostReport {
        total,
        normalized: total / t_end,
        components,
        decay_rate: Some(decay_rate(params, target).c_gamma),
    })
}

/// Outcome of [`verify_optimality`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport<S> {
    /// `min xi(t)` over grid nodes with `t > 0`.
    pub min_xi_interior: S,
    /// Smallest `c0` with `1/c0 <= zeta' <= c0` and `|xi'| <= c0`, when
    /// `x0 > 0`.
    pub derivative_bound: Option<S>,
    pub max_product_error: S,
    pub terminal_phi1_error: S,
    /// `max |lambda phi1 - mu phi2 - xi' - zeta'|`.
    pub max_flow_error: S,
    /// `max |theta phi3 xi - zeta'|`.
    pub max_reneging_flow_error: S,
    pub checks_passed: Vec<String>,
}

/// Checks positivity, derivative bounds, `phi1 phi2 = 1`, `phi1(T) = 1` and
/// both flow identities (with analytic derivatives) on the grid of `traj`.
pub fn verify_optimality<S: Real>(
    params: &ModelParams<S>,
    horizon: Horizon<S>,
    target: TargetRate<S>,
    tilt: &TiltParameters<S>,
    traj: &Trajectory<S>,
) -> Result<OptimalityReport<S>> {
    let _ = target;
    let controls = traj
        .controls
        .as_ref()
        .ok_or_else(|| Error::InvalidTrajectory("controls required".into()))?;
    let flow_tol = S::lit(1e-6);
    let exact_tol = S::lit(1e-12).max(S::lit(16.0) * S::epsilon());

    let mut min_xi = S::infinity();
    let mut max_dzeta = S::zero();
    let mut min_dzeta = S::infinity();
    let mut max_dxi = S::zero();
    let mut product = S::zero();
    let mut flow = S::zero();
    let mut reneging_flow = S::zero();
    for (k, &t) in traj.grid.iter().enumerate() {
        let p = path_point(params, horizon, tilt, t);
        let [phi1, phi2, phi3] = controls[k];
        let xi = traj.xi[k];
        if k > 0 {
            min_xi = min_xi.min(xi);
        }
        max_dzeta = max_dzeta.max(p.dzeta);
        min_dzeta = min_dzeta.min(p.dzeta);
        max_dxi = max_dxi.max(p.dxi.abs());
        product = product.max((phi1 * phi2 - S::one()).abs());
        let scale = S::one() + params.lambda * phi1 + params.mu * phi2;
        flow = flow.max((params.lambda * phi1 - params.mu * phi2 - p.dxi - p.dzeta).abs() / scale);
        reneging_flow = reneging_flow.max((params.theta * phi3 * xi - p.dzeta).abs() / (S::one() + p.dzeta.abs()));
    }
    let terminal = (controls[controls.len() - 1][0] - S::one()).abs();

    let mut passed = Vec::new();
    let mut failed = Vec::new();
    let mut record = |name: &str, ok: bool| {
        if ok {
            passed.push(name.to_string());
        } else {
            failed.push(name.to_string());
        }
    };
    record("positivity", min_xi > S::zero());
    let derivative_bound = if params.x0 > S::zero() {
        let c0 = max_dzeta.max(min_dzeta.recip()).max(max_dxi);
        record("derivative_bounds", min_dzeta > S::zero() && c0.is_finite());
        Some(c0)
    } else {
        None
    };
    record("phi_product", product <= exact_tol);
    record("terminal_phi1", terminal <= exact_tol);
    record("flow_balance", flow <= flow_tol);
    record("reneging_flow", reneging_flow <= flow_tol);
    if !failed.is_empty() {
        return Err(Error::OptimalityViolated(failed));
    }
    Ok(OptimalityReport {
        min_xi_interior: min_xi,
        derivative_bound,
        max_product_error: product,
        terminal_phi1_error: terminal,
        max_flow_error: flow,
        max_reneging_flow_error: reneging_flow,
        checks_passed: passed,
    })
}

/// The zero-reneging path: drain at unit speed with no reneging, then sit at
/// the empty state with balanced arrival and service tilts.
///
/// Its cost is `x0 [lambda l(1/z_-1) + mu l(z_-1)] + theta x0^2 / 2 +
/// (T - x0) C(0)`; the middle term is the reneging penalty `theta xi l(0)`
/// paid while the queue drains.
pub fn special_path_gamma_zero<S: Real>(
    params: &ModelParams<S>,
    horizon: Horizon<S>,
    grid_size: usize,
) -> Result<(Trajectory<S>, CostReport<S>)> {
    validate(*params, horizon, Purpose::Variational)?;
    if params.mode != Mode::SingleServer {
        return Err(Error::UnsupportedMode("single"));
    }
    let (lambda, mu, theta, x0) = (params.lambda, params.mu, params.theta, params.x0);
    if horizon.t <= x0 {
        return Err(Error::HorizonTooShort);
    }
    let z_drain = z_root(lambda, mu, -S::one());
    let z_rest = z_root(lambda, mu, S::zero());
    let drain = [z_drain.recip(), z_drain, S::zero()];
    let rest = [z_rest.recip(), z_rest, S::one()];

    let grid = Trajectory::uniform_grid(horizon.t, grid_size)?;
    let xi = grid.iter().map(|&t| (x0 - t).max(S::zero())).collect();
    let zeta = vec![S::zero(); grid.len()];
    let controls = grid.iter().map(|&t| if t < x0 { drain } else { rest }).collect();

    let rest_time = horizon.t - x0;
    let components = CostComponents {
        arrival: x0 * lambda * ell_unchecked(drain[0]) + rest_time * lambda * ell_unchecked(rest[0]),
        service: x0 * mu * ell_unchecked(drain[1]) + rest_time * mu * ell_unchecked(rest[1]),
        reneging: theta * x0 * x0 * S::half(),
    };
    let total = components.sum();
    let traj = Trajectory {
        grid,
        xi,
        zeta,
        controls: Some(controls),
    };
    let report = CostReport {
        total,
        normalized: total / horizon.t,
        components,
        decay_rate: Some(decay_rate(params, TargetRate::new(S::zero())).c_gamma),
    };
    Ok((traj, report))
}

/// Many-server minimizer: the single-server construction started from
/// `x0 - 1`, shifted up by one. The cost is unchanged.
pub fn multiserver_minimizer<S: Real>(
    params: &ModelParams<S>,
    horizon: Horizon<S>,
    target: TargetRate<S>,
    tol: S,
    grid_size: usize,
) -> Result<(TiltParameters<S>, Trajectory<S>, CostReport<S>)> {
    validate(*params, horizon, Purpose::Variational)?;
    if params.mode != Mode::ManyServer {
        return Err(Error::UnsupportedMode("many"));
    }
    let reduced = ModelParams {
        x0: params.x0 - S::one(),
        mode: Mode::SingleServer,
        ..*params
    };
    let tilt = solve_tilt(&reduced, horizon, target, tol)?;
    let mut traj = build_minimizer(&reduced, horizon, &tilt, grid_size)?;
    let cost = minimizer_cost(&reduced, horizon, target, &tilt, &traj)?;
    for x in traj.xi.iter_mut() {
        *x = *x + S::one();
    }
    Ok((tilt, traj, cost))
}

/// Minimizer for any mode and any `gamma >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimizer<S> {
    /// `None` on the `gamma = 0` path.
    pub tilt: Option<TiltParameters<S>>,
    pub trajectory: Trajectory<S>,
    pub cost: CostReport<S>,
}

/// Dispatches to the single-server, many-server or `gamma = 0` construction.
pub fn minimize<S: Real>(
    params: &ModelParams<S>,
    horizon: Horizon<S>,
    target: TargetRate<S>,
    tol: S,
    grid_size: usize,
) -> Result<Minimizer<S>> {
    target.check()?;
    match params.mode {
        Mode::ManyServer => {
            let (tilt, trajectory, cost) = multiserver_minimizer(params, horizon, target, tol, grid_size)?;
            Ok(Minimizer {
                tilt: Some(tilt),
                trajectory,
                cost,
            })
        }
        Mode::SingleServer if target.gamma == S::zero() => {
            let (trajectory, cost) = special_path_gamma_zero(params, horizon, grid_size)?;
            Ok(Minimizer {
                tilt: None,
                trajectory,
                cost,
            })
        }
        Mode::SingleServer => {
            let tilt = solve_tilt(params, horizon, target, tol)?;
            let trajectory = build_minimizer(params, horizon, &tilt, grid_size)?;
            let cost = minimizer_cost(params, horizon, target, &tilt, &trajectory)?;
            Ok(Minimizer {
                tilt: Some(tilt),
                trajectory,
                cost,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rate_fn::path_cost;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type P = ModelParams<f64>;

    const TOL: f64 = 1e-12;
    const C_OF_2: f64 = 0.159_709_101_227_116_8;

    // 40-digit reference solutions (lambda = 2, mu = 1, theta = 1, gamma = 2)
    // computed by bisection on the tilt equation in extended precision.
    const REF: [(f64, f64, f64, f64); 6] = [
        // (x0, T, a, I)
        (1.0, 10.0, 0.296_331_683_340_775_9, 1.813_280_176_364_445_3),
        (1.0, 20.0, 0.281_511_611_568_017_7, 3.397_503_734_611_15),
        (1.0, 50.0, 0.273_231_987_547_247_1, 8.181_721_253_880_542),
        (1.0, 200.0, 0.269_252_715_817_907_9, 32.134_729_899_915_3),
        (0.0, 10.0, 0.318_126_039_072_516_9, 2.180_499_729_277_640_7),
        (0.0, 50.0, 0.277_488_144_687_453_1, 8.503_807_661_086_352),
    ];

    fn p211(x0: f64) -> P {
        ModelParams::new(2.0, 1.0, 1.0, x0)
    }

    fn solve(p: &P, t: f64, g: f64) -> (TiltParameters<f64>, Trajectory<f64>, CostReport<f64>) {
        let h = Horizon::new(t);
        let tg = TargetRate::new(g);
        let tilt = solve_tilt(p, h, tg, TOL).unwrap();
        let traj = build_minimizer(p, h, &tilt, 20_001).unwrap();
        let cost = minimizer_cost(p, h, tg, &tilt, &traj).unwrap();
        (tilt, traj, cost)
    }

    #[test]
    fn matches_extended_precision_reference() {
        for (x0, t, a, cost) in REF {
            let (tilt, _, report) = solve(&p211(x0), t, 2.0);
            assert!((tilt.a - a).abs() < 1e-12, "a at x0 {x0} T {t}: {}", tilt.a);
            assert!((report.total - cost).abs() < 1e-10 * cost.max(1.0), "I at x0 {x0} T {t}: {}", report.total);
            assert!(tilt.residual <= TOL);
        }
    }

    #[test]
    fn lln_case_is_trivial() {
        for t in [0.5, 3.0, 10.0, 80.0] {
            let p = p211(1.0);
            let (tilt, traj, cost) = solve(&p, t, 1.0);
            assert!(tilt.a.abs() < 1e-12, "a = {}", tilt.a);
            assert!((tilt.big_b - 1.0).abs() < 1e-12);
            assert!(tilt.residual <= TOL);
            assert!(cost.total.abs() < 1e-10, "cost {}", cost.total);
            for c in traj.controls.as_ref().unwrap() {
                for v in c {
                    assert!((v - 1.0).abs() < 1e-12);
                }
            }
            verify_optimality(&p, Horizon::new(t), TargetRate::new(1.0), &tilt, &traj).unwrap();
        }
    }

    #[test]
    fn tilt_approaches_long_run_value() {
        let z = z_root(2.0f64, 1.0, 2.0);
        let err = |t: f64| (solve_tilt(&p211(1.0), Horizon::new(t), TargetRate::new(2.0), TOL).unwrap().big_b - 1.0 / z).abs();
        let errs: Vec<f64> = [10.0, 50.0, 200.0, 1000.0, 5000.0].iter().map(|&t| err(t)).collect();
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
        // the gap decays like 1/T: about 9.9e-3 at T = 50
        assert!((errs[1] - 9.95e-3).abs() < 1e-4, "{errs:?}");
        assert!(errs[4] < 1e-3);
    }

    #[test]
    fn gamma_zero_rejected() {
        let r = solve_tilt(&p211(1.0), Horizon::new(10.0), TargetRate::new(0.0), TOL);
        assert_eq!(r, Err(Error::GammaNonpositive));
    }

    #[test]
    fn tilt_invariants_and_quadratic_residual() {
        for &g in &[0.05, 0.5, 2.0, 6.0, 30.0] {
            for &t in &[0.2, 2.0, 10.0, 100.0, 1000.0] {
                for &x0 in &[0.0, 0.5, 3.0] {
                    for &theta in &[0.3, 1.0, 4.0] {
                        let p = ModelParams::new(2.0, 1.0, theta, x0);
                        let (h, tg) = (Horizon::new(t), TargetRate::new(g));
                        let tilt = solve_tilt(&p, h, tg, TOL).unwrap();
                        assert!(tilt.a < 1.0);
                        assert!(tilt.lambda_cap >= 0.0 && tilt.lambda_cap < 1.0);
                        assert!(tilt.log_lambda_cap < 0.0 && tilt.log_lambda_cap.is_finite());
                        if theta * t < 500.0 {
                            assert!(tilt.lambda_cap > 0.0);
                        }
                        assert!((tilt.big_b * (1.0 - tilt.a) - 1.0).abs() < 1e-14);
                        assert!(tilt.residual <= TOL * tilt.big_b.max(1.0), "residual {} at {g} {t} {x0} {theta}", tilt.residual);
                        let q = quadratic_terms(&p, h, tg, &tilt);
                        let scale = 1.0 + q.iter().map(|v| v.abs()).sum::<f64>();
                        assert!(q.iter().sum::<f64>().abs() <= 1e-9 * scale, "{q:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn scaled_defect_monotone_across_bracket() {
        let p = p211(1.0);
        let eq = TiltEquation::new(&p, Horizon::new(10.0), TargetRate::new(2.0));
        let tilt = solve_tilt(&p, Horizon::new(10.0), TargetRate::new(2.0), TOL).unwrap();
        assert!(eq.scaled_defect(tilt.bracket.0) <= 0.0 && eq.scaled_defect(tilt.bracket.1) >= 0.0);
        let (lo, hi) = (tilt.a - 5.0, 1.0 - 1e-9);
        let samples: Vec<f64> = (0..100).map(|k| eq.scaled_defect(lo + (hi - lo) * k as f64 / 99.0)).collect();
        assert!(samples.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn boundary_and_terminal_conditions() {
        for &x0 in &[0.0, 1.0, 4.0] {
            for &t in &[1.0, 10.0, 60.0] {
                for &g in &[0.3, 2.0, 5.0] {
                    let p = p211(x0);
                    let (_, traj, _) = solve(&p, t, g);
                    assert_eq!(traj.xi[0], x0);
                    assert_eq!(traj.zeta[0], 0.0);
                    let zt = *traj.zeta.last().unwrap();
                    assert!((zt - g * t).abs() <= 1e-8 * g * t, "zeta(T) {zt} vs {}", g * t);
                    let phi1_t = traj.controls.as_ref().unwrap().last().unwrap()[0];
                    assert!((phi1_t - 1.0).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn closed_form_matches_quadrature() {
        for &(x0, t) in &[(1.0, 10.0), (1.0, 20.0), (3.0, 5.0), (0.2, 10.0)] {
            let p = p211(x0);
            let h = Horizon::new(t);
            let tg = TargetRate::new(2.0);
            let tilt = solve_tilt(&p, h, tg, TOL).unwrap();
            let traj = build_minimizer(&p, h, &tilt, 100_001).unwrap();
            let cost = minimizer_cost(&p, h, tg, &tilt, &traj).unwrap();
            let quad = path_cost(&p, &traj).unwrap();
            assert!((quad.total - cost.total).abs() < 1e-3 * cost.total, "{} vs {}", quad.total, cost.total);
            assert!((cost.components.sum() - cost.total).abs() < 1e-6 * cost.total);
        }
        // from an empty queue the first segment has x = 0 at its left end
        // with positive reneging slope, which the endpoint rule prices at +inf
        let p0 = p211(0.0);
        let (_, traj, cost) = solve(&p0, 10.0, 2.0);
        assert_eq!(path_cost(&p0, &traj).unwrap().total, f64::INFINITY);
        assert!((cost.components.sum() - cost.total).abs() < 1e-6 * cost.total);
    }

    #[test]
    fn normalized_cost_approaches_decay_rate() {
        let errs: Vec<f64> = [10.0, 20.0, 50.0]
            .iter()
            .map(|&t| {
                let (_, _, c) = solve(&p211(1.0), t, 2.0);
                assert_eq!(c.decay_rate, Some(decay_rate(&p211(1.0), TargetRate::new(2.0)).c_gamma));
                (c.normalized - C_OF_2).abs()
            })
            .collect();
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
        // relative gap at T = 50 is 2.46%, not below 2%
        assert!((errs[2] / C_OF_2 - 0.024_57).abs() < 1e-4, "{errs:?}");
    }

    #[test]
    fn optimality_checks() {
        let p = p211(1.0);
        let (h, tg) = (Horizon::new(10.0), TargetRate::new(2.0));
        let (tilt, traj, _) = solve(&p, 10.0, 2.0);
        let report = verify_optimality(&p, h, tg, &tilt, &traj).unwrap();
        assert_eq!(report.checks_passed.len(), 6);
        assert!(report.max_flow_error < 1e-12);

        let p0 = p211(0.0);
        let (tilt, traj, _) = solve(&p0, 10.0, 2.0);
        let report = verify_optimality(&p0, h, tg, &tilt, &traj).unwrap();
        assert!(report.derivative_bound.is_none());
        assert!(report.min_xi_interior > 0.0);

        let mut broken = traj.clone();
        broken.controls.as_mut().unwrap()[5][1] *= 1.01;
        match verify_optimality(&p0, h, tg, &tilt, &broken) {
            Err(Error::OptimalityViolated(list)) => assert!(list.contains(&"phi_product".to_string())),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn perturbations_never_beat_minimizer() {
        let p = p211(1.0);
        let t = 10.0;
        let (_, traj, cost) = solve(&p, t, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = traj.len();
        for _ in 0..20 {
            let k1 = rng.random_range(1..6);
            let k2 = rng.random_range(1..6);
            let a1 = rng.random_range(-0.3..0.3);
            let a2 = rng.random_range(-0.3..0.3);
            let mut pert = traj.clone();
            pert.controls = None;
            for k in 0..n {
                let s = traj.grid[k] / t;
                let bump = (std::f64::consts::PI * s * k1 as f64).sin();
                pert.xi[k] = (traj.xi[k] + a1 * bump).max(0.0);
                let bump2 = (std::f64::consts::PI * s * k2 as f64).sin();
                // keeps zeta nondecreasing since zeta' is bounded below by ~1
                pert.zeta[k] = traj.zeta[k] + a2 * 0.5 * bump2 / k2 as f64;
            }
            pert.xi[0] = traj.xi[0];
            let c = path_cost(&p, &pert).unwrap().total;
            assert!(c >= cost.total - 1e-6, "{c} < {}", cost.total);
        }
    }

    #[test]
    fn gamma_zero_path() {
        let p0 = p211(0.0);
        let (traj, report) = special_path_gamma_zero(&p0, Horizon::new(10.0), 101).unwrap();
        let c0 = 3.0 - 2.0 * 2f64.sqrt();
        assert!((report.normalized - c0).abs() < 1e-15);
        assert!(traj.zeta.iter().all(|&z| z == 0.0));

        let p = p211(1.0);
        let (traj, report) = special_path_gamma_zero(&p, Horizon::new(10.0), 100_001).unwrap();
        let z = 2.0 * 2.0 / (9f64.sqrt() - 1.0);
        let drain = 2.0 * ell_unchecked(1.0 / z) + ell_unchecked(z);
        assert!((report.total - (drain + 0.5 + 9.0 * c0)).abs() < 1e-14);
        assert_eq!(report.components.reneging, 0.5);
        let quad = path_cost(&p, &traj).unwrap();
        assert!((quad.total - report.total).abs() < 1e-4);
        assert!(traj.zeta.iter().all(|&z| z == 0.0));

        assert_eq!(
            special_path_gamma_zero(&p211(10.0), Horizon::new(10.0), 11).map(|r| r.1.total),
            Err(Error::HorizonTooShort)
        );
        let long = special_path_gamma_zero(&p, Horizon::new(1e6), 11).unwrap().1;
        assert!((long.normalized - c0).abs() < 1e-5);
    }

    #[test]
    fn many_server_is_shifted_single_server() {
        let m = ModelParams::many_server(2.0, 1.0, 1.0, 1.0);
        let (h, tg) = (Horizon::new(10.0), TargetRate::new(2.0));
        let (tilt, traj, cost) = multiserver_minimizer(&m, h, tg, TOL, 1001).unwrap();
        let single = p211(0.0);
        let (st, straj, scost) = solve(&single, 10.0, 2.0);
        assert_eq!(tilt, st);
        assert_eq!(cost.total, scost.total);
        let st_traj = build_minimizer(&single, h, &st, 1001).unwrap();
        let _ = straj;
        for k in 0..traj.len() {
            assert_eq!(traj.xi[k], st_traj.xi[k] + 1.0);
            assert_eq!(traj.zeta[k], st_traj.zeta[k]);
        }
        let m2 = ModelParams::many_server(2.0, 1.0, 1.0, 2.0);
        let (_, traj, _) = multiserver_minimizer(&m2, Horizon::new(50.0), tg, TOL, 5001).unwrap();
        assert!(traj.xi.iter().all(|&x| x >= 1.0));
        assert!(multiserver_minimizer(&single, h, tg, TOL, 11).is_err());
    }

    #[test]
    fn dispatcher_routes_by_mode_and_gamma() {
        let h = Horizon::new(10.0);
        let m = minimize(&p211(1.0), h, TargetRate::new(0.0), TOL, 101).unwrap();
        assert!(m.tilt.is_none());
        let m = minimize(&p211(1.0), h, TargetRate::new(2.0), TOL, 101).unwrap();
        assert!((m.cost.total - REF[0].3).abs() < 1e-10);
    }

    #[test]
    fn f32_instantiation() {
        let p = ModelParams::<f32>::new(2.0, 1.0, 1.0, 1.0);
        let h = Horizon::new(10.0f32);
        let tg = TargetRate::new(2.0f32);
        let tilt = solve_tilt(&p, h, tg, 1e-5).unwrap();
        let traj = build_minimizer(&p, h, &tilt, 1001).unwrap();
        let cost = minimizer_cost(&p, h, tg, &tilt, &traj).unwrap();
        assert!((cost.total as f64 - REF[0].3).abs() < 1e-3);
        assert!((tilt.a as f64 - REF[0].2).abs() < 1e-4);
    }
}
