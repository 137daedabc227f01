//! Law-of-large-numbers paths: the one-dimensional Skorohod map, the
//! closed-form fluid trajectory, a fourth-order integrator for the reflected
//! fluid equations (single and many servers) and the zero-cost reneging rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate, Horizon, Mode, ModelParams, Purpose, Trajectory};
use crate::scalar::Real;

/// Output of [`skorohod_map`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectedPath<S> {
    pub grid: Vec<S>,
    /// Constrained path `psi + pushing`, nonnegative.
    pub values: Vec<S>,
    /// Cumulative reflection term, nondecreasing from 0.
    pub pushing: Vec<S>,
}

/// Applies `Gamma(psi)(t) = psi(t) - min(0, inf_{s <= t} psi(s))` in one
/// forward pass.
pub fn skorohod_map<S: Real>(grid: &[S], psi: &[S]) -> Result<ReflectedPath<S>> {
    if psi.is_empty() || grid.len() != psi.len() {
        return Err(Error::InvalidInput("grid and path must be nonempty and of equal length".into()));
    }
    if !(psi[0] >= S::zero()) {
        return Err(Error::NegativeStart);
    }
    let mut running = S::zero();
    let mut values = Vec::with_capacity(psi.len());
    let mut pushing = Vec::with_capacity(psi.len());
    for &v in psi {
        running = running.min(v);
        values.push(v - running);
        pushing.push(-running);
    }
    Ok(ReflectedPath {
        grid: grid.to_vec(),
        values,
        pushing,
    })
}

/// Closed-form fluid path with zero cost:
/// `xi0(t) = c + (x0 - c) e^{-theta t}`,
/// `zeta0(t) = (lambda - mu) t + (1 - e^{-theta t}) (x0 - c)`,
/// with `c = (lambda - mu) / theta`.
pub fn lln_trajectory<S: Real>(
    params: &ModelParams<S>,
    horizon: Horizon<S>,
    grid_size: usize,
) -> Result<Trajectory<S>> {
    validate(*params, horizon, Purpose::Variational)?;
    if params.mode != Mode::SingleServer {
        return Err(Error::UnsupportedMode("single"));
    }
    let drift = params.lambda - params.mu;
    let c = drift / params.theta;
    let excess = params.x0 - c;
    let grid = Trajectory::uniform_grid(horizon.t, grid_size)?;
    let (xi, zeta) = grid
        .iter()
        .map(|&t| {
            let decay = (-params.theta * t).exp();
            let gone = -(-params.theta * t).exp_m1();
            (c + excess * decay, drift * t + gone * excess)
        })
        .unzip();
    let controls = Some(vec![[S::one(); 3]; grid.len()]);
    Ok(Trajectory {
        grid,
        xi,
        zeta,
        controls,
    })
}

/// Integrates the fluid equations with classical RK4 on a uniform grid.
///
/// Single server: `x' = lambda - mu - theta x^+` followed by projection onto
/// `[0, inf)` (the Skorohod reflection, active only when `lambda < mu`),
/// `y' = theta x^+`. Many servers: `x' = lambda - mu (x ∧ 1) - theta (x-1)^+`,
/// `y' = theta (x-1)^+`, no reflection.
pub fn fluid_integrate<S: Real>(
    params: &ModelParams<S>,
    horizon: Horizon<S>,
    grid_size: usize,
) -> Result<Trajectory<S>> {
    validate(*params, horizon, Purpose::Simulation)?;
    let grid = Trajectory::uniform_grid(horizon.t, grid_size)?;
    let (lambda, mu, theta) = (params.lambda, params.mu, params.theta);
    let mode = params.mode;
    let field = move |x: S| -> (S, S) {
        match mode {
            Mode::SingleServer => {
                let xp = x.max(S::zero());
                (lambda - mu - theta * xp, theta * xp)
            }
            Mode::ManyServer => {
                let over = (x - S::one()).max(S::zero());
                (lambda - mu * x.min(S::one()) - theta * over, theta * over)
            }
        }
    };

    let mut xi = Vec::with_capacity(grid_size);
    let mut zeta = Vec::with_capacity(grid_size);
    let (mut x, mut y) = (params.x0, S::zero());
    xi.push(x);
    zeta.push(y);
    let six = S::lit(6.0);
    for w in grid.windows(2) {
        let h = w[1] - w[0];
        let (k1, l1) = field(x);
        let (k2, l2) = field(x + h * S::half() * k1);
        let (k3, l3) = field(x + h * S::half() * k2);
        let (k4, l4) = field(x + h * k3);
        x = x + h / six * (k1 + S::two() * (k2 + k3) + k4);
        y = y + h / six * (l1 + S::two() * (l2 + l3) + l4);
        if mode == Mode::SingleServer && x < S::zero() {
            x = S::zero();
        }
        xi.push(x);
        zeta.push(y);
    }
    Ok(Trajectory {
        grid,
        xi,
        zeta,
        controls: None,
    })
}

/// Zero-cost reneging rate over `[0, T]`:
/// `(lambda - mu) + (1 - e^{-theta T}) / T * (x0 - (lambda - mu)/theta)`.
pub fn gamma_star<S: Real>(params: &ModelParams<S>, horizon: Horizon<S>) -> Result<S> {
    validate(*params, horizon, Purpose::Variational)?;
    if params.mode != Mode::SingleServer {
        return Err(Error::UnsupportedMode("single"));
    }
    let drift = params.lambda - params.mu;
    let gone = -(-params.theta * horizon.t).exp_m1();
    Ok(drift + gone / horizon.t * (params.x0 - drift / params.theta))
}
