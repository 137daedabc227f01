//! Pointwise rate-function machinery: `ell`, the local cost `L(x, p, q)` and
//! its minimizing controls, the decay rate `C(gamma)`, path costs by
//! quadrature, and the static balance-equation optimization used as an
//! independent check of `C(gamma)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Controls, CostComponents, CostReport, ModelParams, TargetRate, Trajectory};
use crate::roots::golden_section;
use crate::scalar::Real;

/// Point `(x, p, q)`: queue level, queue slope, reneging slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalCostInput<S> {
    pub x: S,
    pub p: S,
    pub q: S,
}

impl<S: Real> LocalCostInput<S> {
    pub fn new(x: S, p: S, q: S) -> Self {
        Self { x, p, q }
    }

    fn check(&self) -> Result<()> {
        if !(self.x >= S::zero()) {
            return Err(Error::NegativeArgument(self.x.to_f64().unwrap_or(f64::NAN)));
        }
        if !(self.q >= S::zero()) {
            return Err(Error::NegativeArgument(self.q.to_f64().unwrap_or(f64::NAN)));
        }
        if !self.p.is_finite() {
            return Err(Error::InvalidInput("queue slope must be finite".into()));
        }
        Ok(())
    }
}

/// `C(gamma)` together with the root `z_gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayRateResult<S> {
    pub c_gamma: S,
    pub z_gamma: S,
}

/// `ell(x) = x log x - x + 1` with `ell(0) = 1`.
pub fn ell<S: Real>(x: S) -> Result<S> {
    if !(x >= S::zero()) {
        return Err(Error::NegativeArgument(x.to_f64().unwrap_or(f64::NAN)));
    }
    Ok(ell_unchecked(x))
}

#[inline]
pub(crate) fn ell_unchecked<S: Real>(x: S) -> S {
    if x == S::zero() {
        return S::one();
    }
    if x.is_infinite() {
        return x;
    }
    let u = x - S::one();
    x * u.ln_1p() - u
}

/// `(phi1, phi2)` solving `lambda*phi1 - mu*phi2 = r`, `phi1*phi2 = 1`.
///
/// Each factor is computed from whichever of the two algebraically equal
/// forms avoids subtracting nearly equal numbers.
#[inline]
pub(crate) fn balance_controls<S: Real>(lambda: S, mu: S, r: S) -> (S, S) {
    let s = r.hypot(S::two() * (lambda * mu).sqrt());
    let phi1 = if r >= S::zero() {
        (s + r) / (S::two() * lambda)
    } else {
        S::two() * mu / (s - r)
    };
    let phi2 = if r <= S::zero() {
        (s - r) / (S::two() * mu)
    } else {
        S::two() * lambda / (s + r)
    };
    (phi1, phi2)
}

/// Minimizing controls of the local problem at `(x, p, q)`.
///
/// For `x > 0` the flow constraints `lambda*phi1 - mu*phi2 = p + q` and
/// `theta*phi3*x = q` hold with `phi1*phi2 = 1`. At `x = 0` (where `q` must
/// vanish) the queue is held at the boundary by `(sqrt(mu/lambda),
/// sqrt(lambda/mu), 1)`.
pub fn optimal_controls<S: Real>(
    params: &ModelParams<S>,
    input: LocalCostInput<S>,
) -> Result<Controls<S>> {
    input.check()?;
    if input.x == S::zero() {
        if input.q > S::zero() {
            return Err(Error::BoundaryInfeasible);
        }
        let ratio = params.mu / params.lambda;
        return Ok([ratio.sqrt(), ratio.recip().sqrt(), S::one()]);
    }
    let (phi1, phi2) = balance_controls(params.lambda, params.mu, input.p + input.q);
    Ok([phi1, phi2, input.q / (params.theta * input.x)])
}

/// Per-term values `(lambda ell(phi1), mu ell(phi2), theta x ell(phi3))` of the
/// local cost. The reneging term is `+inf` at `x = 0, q > 0`.
pub fn local_cost_terms<S: Real>(params: &ModelParams<S>, input: LocalCostInput<S>) -> Result<[S; 3]> {
    input.check()?;
    let (phi1, phi2) = balance_controls(params.lambda, params.mu, input.p + input.q);
    let reneging = if input.x > S::zero() {
        let tx = params.theta * input.x;
        tx * ell_unchecked(input.q / tx)
    } else if input.q > S::zero() {
        S::infinity()
    } else {
        S::zero()
    };
    Ok([
        params.lambda * ell_unchecked(phi1),
        params.mu * ell_unchecked(phi2),
        reneging,
    ])
}

/// Local cost `L(x, p, q)`; `+inf` when `x = 0` and `q > 0`.
pub fn local_cost<S: Real>(params: &ModelParams<S>, input: LocalCostInput<S>) -> Result<S> {
    let [a, b, c] = local_cost_terms(params, input)?;
    Ok(a + b + c)
}

/// Gradient `(dL/dx, dL/dp, dL/dq)` at an interior point `x > 0, q > 0`:
/// `(theta (1 - phi3), log phi1, log(phi1 phi3))`.
pub fn local_cost_gradient<S: Real>(
    params: &ModelParams<S>,
    input: LocalCostInput<S>,
) -> Result<[S; 3]> {
    input.check()?;
    if input.x == S::zero() {
        return Err(Error::BoundaryInfeasible);
    }
    let [phi1, _, phi3] = optimal_controls(params, input)?;
    let log_phi1 = phi1.ln();
    Ok([
        params.theta * (S::one() - phi3),
        log_phi1,
        log_phi1 + phi3.ln(),
    ])
}

/// Positive root of `lambda/z - mu*z = g` for any real `g`.
pub(crate) fn z_root<S: Real>(lambda: S, mu: S, g: S) -> S {
    let s = g.hypot(S::two() * (lambda * mu).sqrt());
    if g >= S::zero() {
        S::two() * lambda / (s + g)
    } else {
        (s - g) / (S::two() * mu)
    }
}

/// `z_gamma`, the unique positive solution of `lambda/z - mu*z = gamma`.
pub fn z_of_gamma<S: Real>(params: &ModelParams<S>, target: TargetRate<S>) -> S {
    z_root(params.lambda, params.mu, target.gamma)
}

/// Long-horizon decay rate
/// `C(gamma) = lambda (1 - 1/z) + mu (1 - z) - gamma log z`.
///
/// `theta` does not enter.
pub fn decay_rate<S: Real>(params: &ModelParams<S>, target: TargetRate<S>) -> DecayRateResult<S> {
    let z = z_of_gamma(params, target);
    let c = params.lambda * (S::one() - z.recip()) + params.mu * (S::one() - z) - target.gamma * z.ln();
    DecayRateResult {
        c_gamma: c,
        z_gamma: z,
    }
}

/// Search strategy for [`heuristic_oracle_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeuristicSearch {
    /// Keep the per-customer reneging rate untilted and search the service
    /// rate only.
    #[default]
    FixedTheta,
    /// Search service and reneging rates jointly.
    Joint,
}

/// Optimal static rates found by [`heuristic_oracle_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeuristicOptimum<S> {
    pub value: S,
    pub lambda_star: S,
    pub mu_star: S,
    pub theta_star: S,
}

/// Static equilibrium estimate of the decay rate: minimize
/// `lambda ell(l*/lambda) + mu ell(m*/mu) + theta y ell(t*/theta)` subject to
/// `l* = m* + t* y` and `t* y = gamma`, by grid search plus golden-section
/// refinement. Does not use the closed form for `z_gamma`.
pub fn heuristic_oracle<S: Real>(
    params: &ModelParams<S>,
    target: TargetRate<S>,
    grid_resolution: usize,
) -> Result<S> {
    heuristic_oracle_with(params, target, grid_resolution, HeuristicSearch::FixedTheta).map(|o| o.value)
}

pub fn heuristic_oracle_with<S: Real>(
    params: &ModelParams<S>,
    target: TargetRate<S>,
    grid_resolution: usize,
    search: HeuristicSearch,
) -> Result<HeuristicOptimum<S>> {
    if grid_resolution < 100 {
        return Err(Error::InvalidInput("grid_resolution must be at least 100".into()));
    }
    target.check()?;
    let (lambda, mu, theta, gamma) = (params.lambda, params.mu, params.theta, target.gamma);

    // reneging part for a tilted per-customer rate t*, with y = gamma / t*
    let reneging = |theta_star: S| -> S {
        if gamma == S::zero() {
            S::zero()
        } else {
            theta * (gamma / theta_star) * ell_unchecked(theta_star / theta)
        }
    };
    let balance = |mu_star: S| -> S {
        lambda * ell_unchecked((mu_star + gamma) / lambda) + mu * ell_unchecked(mu_star / mu)
    };
    let upper = lambda + mu + gamma;
    let minimize_mu = || grid_then_golden(&balance, S::zero(), upper, grid_resolution);

    let (mu_star, balance_min) = minimize_mu();
    let (theta_star, reneging_min) = match search {
        HeuristicSearch::FixedTheta => (theta, S::zero()),
        HeuristicSearch::Joint => {
            // search log(t*/theta) on a symmetric window
            let w = S::lit(6.0);
            let (u, v) = grid_then_golden(&|u: S| reneging(theta * u.exp()), -w, w, grid_resolution);
            (theta * u.exp(), v)
        }
    };
    Ok(HeuristicOptimum {
        value: balance_min + reneging_min,
        lambda_star: mu_star + gamma,
        mu_star,
        theta_star,
    })
}

fn grid_then_golden<S: Real, F: Fn(S) -> S>(f: &F, lo: S, hi: S, n: usize) -> (S, S) {
    let step = (hi - lo) / S::lit(n as f64);
    let mut best_k = 0;
    let mut best = S::infinity();
    for k in 0..=n {
        let v = f(lo + step * S::lit(k as f64));
        if v < best {
            best = v;
            best_k = k;
        }
    }
    let a = lo + step * S::lit(best_k.saturating_sub(1) as f64);
    let b = lo + step * S::lit((best_k + 1).min(n) as f64);
    let (x, v) = golden_section(f, a, b, S::epsilon().sqrt() * (S::one() + b.abs()) * S::lit(1e-4), 300);
    if v <= best {
        (x, v)
    } else {
        (lo + step * S::lit(best_k as f64), best)
    }
}

/// `I_T` of a sampled path by trapezoidal quadrature of `L`.
///
/// On each segment the slopes are the forward differences
/// `p = dxi/dt`, `q = dzeta/dt`; `L` is evaluated at both endpoints with
/// these slopes and averaged. The total is `+inf` if any segment puts a
/// positive reneging slope on an empty queue.
pub fn path_cost<S: Real>(params: &ModelParams<S>, traj: &Trajectory<S>) -> Result<CostReport<S>> {
    let n = traj.len();
    if n < 2 {
        return Err(Error::GridTooCoarse { needed: 2, got: n });
    }
    if traj.xi.len() != n || traj.zeta.len() != n {
        return Err(Error::InvalidTrajectory("sequence lengths differ".into()));
    }
    let mut comp = [S::zero(); 3];
    for k in 0..n - 1 {
        let dt = traj.grid[k + 1] - traj.grid[k];
        if !(dt > S::zero()) {
            return Err(Error::InvalidTrajectory("grid not strictly increasing".into()));
        }
        let p = (traj.xi[k + 1] - traj.xi[k]) / dt;
        let dz = traj.zeta[k + 1] - traj.zeta[k];
        let scale = traj.zeta[k + 1].abs().max(S::one());
        let q = if dz >= S::zero() {
            dz / dt
        } else if dz >= -S::lit(64.0) * S::epsilon() * scale {
            S::zero()
        } else {
            return Err(Error::InvalidTrajectory("zeta decreasing".into()));
        };
        let x_left = traj.xi[k].max(S::zero());
        let x_right = traj.xi[k + 1].max(S::zero());
        let left = local_cost_terms(params, LocalCostInput::new(x_left, p, q))?;
        let right = local_cost_terms(params, LocalCostInput::new(x_right, p, q))?;
        for i in 0..3 {
            comp[i] = comp[i] + dt * S::half() * (left[i] + right[i]);
        }
    }
    let components = CostComponents {
        arrival: comp[0],
        service: comp[1],
        reneging: comp[2],
    };
    let total = components.sum();
    Ok(CostReport {
        total,
        normalized: total / (traj.grid[n - 1] - traj.grid[0]),
        components,
        decay_rate: None,
    })
}
