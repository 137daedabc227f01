//! Parameter and trajectory types shared by every module.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Server configuration of the queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Mode {
    /// M/M/1+M: one server with service rate `mu * n`.
    #[default]
    SingleServer,
    /// M/M/n+M: `n` servers each with rate `mu`.
    ManyServer,
}

/// What the parameters are about to be used for. Variational problems carry
/// extra restrictions that simulation does not.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Simulation,
    Variational,
}

/// Rates of the scaled queue and its (scaled) initial content.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<S> {
    /// Arrival rate per unit of the scaling parameter.
    pub lambda: S,
    /// Service rate per unit of the scaling parameter.
    pub mu: S,
    /// Per-customer reneging rate.
    pub theta: S,
    /// Initial scaled queue length.
    pub x0: S,
    #[serde(default)]
    pub mode: Mode,
}

impl<S: Real> ModelParams<S> {
    pub fn new(lambda: S, mu: S, theta: S, x0: S) -> Self {
        Self {
            lambda,
            mu,
            theta,
            x0,
            mode: Mode::SingleServer,
        }
    }

    pub fn many_server(lambda: S, mu: S, theta: S, x0: S) -> Self {
        Self {
            mode: Mode::ManyServer,
            ..Self::new(lambda, mu, theta, x0)
        }
    }

    pub fn with_theta(self, theta: S) -> Self {
        Self { theta, ..self }
    }

    pub fn with_x0(self, x0: S) -> Self {
        Self { x0, ..self }
    }

    /// `(lambda - mu)^+`, the law-of-large-numbers reneging rate.
    pub fn typical_rate(&self) -> S {
        (self.lambda - self.mu).max(S::zero())
    }

    /// Checks the parameter invariants for the given purpose.
    pub fn check(&self, purpose: Purpose) -> Result<()> {
        let positive = |v: S| v > S::zero() && v.is_finite();
        if !positive(self.lambda) {
            return Err(Error::RateNonpositive("lambda"));
        }
        if !positive(self.mu) {
            return Err(Error::RateNonpositive("mu"));
        }
        if !positive(self.theta) {
            return Err(Error::RateNonpositive("theta"));
        }
        if !(self.x0 >= S::zero() && self.x0.is_finite()) {
            return Err(Error::InitialStateNegative);
        }
        if purpose == Purpose::Variational {
            if self.lambda < self.mu {
                return Err(Error::LambdaLessThanMu);
            }
            if self.mode == Mode::ManyServer && self.x0 < S::one() {
                return Err(Error::ManyServerX0TooSmall);
            }
        }
        Ok(())
    }
}

/// Time horizon `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Horizon<S> {
    #[serde(rename = "T")]
    pub t: S,
}

impl<S: Real> Horizon<S> {
    pub fn new(t: S) -> Self {
        Self { t }
    }

    pub fn check(&self) -> Result<()> {
        if self.t > S::zero() && self.t.is_finite() {
            Ok(())
        } else {
            Err(Error::HorizonNonpositive)
        }
    }
}

/// Target reneging rate per unit time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetRate<S> {
    pub gamma: S,
}

impl<S: Real> TargetRate<S> {
    pub fn new(gamma: S) -> Self {
        Self { gamma }
    }

    pub fn check(&self) -> Result<()> {
        if self.gamma >= S::zero() && self.gamma.is_finite() {
            Ok(())
        } else {
            Err(Error::TargetInvalid)
        }
    }
}

/// Validates parameters and horizon for a purpose, returning them unchanged.
pub fn validate<S: Real>(
    params: ModelParams<S>,
    horizon: Horizon<S>,
    purpose: Purpose,
) -> Result<(ModelParams<S>, Horizon<S>)> {
    params.check(purpose)?;
    horizon.check()?;
    Ok((params, horizon))
}

/// Control triple `(phi1, phi2, phi3)` multiplying the arrival, service and
/// reneging intensities.
pub type Controls<S> = [S; 3];

/// A sampled path `(xi, zeta)` with optional controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<S> {
    pub grid: Vec<S>,
    pub xi: Vec<S>,
    pub zeta: Vec<S>,
    pub controls: Option<Vec<Controls<S>>>,
}

impl<S: Real> Trajectory<S> {
    /// `points` equally spaced times covering `[0, t]`, last one exactly `t`.
    pub fn uniform_grid(t: S, points: usize) -> Result<Vec<S>> {
        if points < 2 {
            return Err(Error::GridTooCoarse {
                needed: 2,
                got: points,
            });
        }
        let last = points - 1;
        let step = t / S::lit(last as f64);
        Ok((0..points)
            .map(|k| if k == last { t } else { step * S::lit(k as f64) })
            .collect())
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Final time of the grid.
    pub fn end_time(&self) -> S {
        self.grid.last().copied().unwrap_or_else(S::zero)
    }

    /// Checks the path-space membership conditions: equal lengths, increasing
    /// grid from 0, `xi(0) = x0`, `zeta(0) = 0`, `xi >= 0`, `zeta`
    /// nondecreasing (up to `tol`), nonnegative controls.
    pub fn validate(&self, x0: S, tol: S) -> Result<()> {
        let n = self.grid.len();
        if self.xi.len() != n || self.zeta.len() != n {
            return Err(Error::InvalidTrajectory("sequence lengths differ".into()));
        }
        if let Some(c) = &self.controls {
            if c.len() != n {
                return Err(Error::InvalidTrajectory("control length differs".into()));
            }
            if c.iter().flatten().any(|v| !(*v >= S::zero())) {
                return Err(Error::InvalidTrajectory("negative control".into()));
            }
        }
        if n == 0 {
            return Err(Error::InvalidTrajectory("empty".into()));
        }
        if self.grid[0] != S::zero() {
            return Err(Error::InvalidTrajectory("grid must start at 0".into()));
        }
        if self.grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidTrajectory("grid not strictly increasing".into()));
        }
        if (self.xi[0] - x0).abs() > tol {
            return Err(Error::InvalidTrajectory("xi(0) != x0".into()));
        }
        if self.zeta[0].abs() > tol {
            return Err(Error::InvalidTrajectory("zeta(0) != 0".into()));
        }
        if self.xi.iter().any(|v| !(*v >= -tol)) {
            return Err(Error::InvalidTrajectory("xi negative".into()));
        }
        if self.zeta.windows(2).any(|w| w[1] < w[0] - tol) {
            return Err(Error::InvalidTrajectory("zeta decreasing".into()));
        }
        Ok(())
    }

    /// Writes `t,xi,zeta[,phi1,phi2,phi3]` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        if self.controls.is_some() {
            w.write_record(["t", "xi", "zeta", "phi1", "phi2", "phi3"])?;
        } else {
            w.write_record(["t", "xi", "zeta"])?;
        }
        for k in 0..self.len() {
            let mut row = vec![
                self.grid[k].to_string(),
                self.xi[k].to_string(),
                self.zeta[k].to_string(),
            ];
            if let Some(c) = &self.controls {
                row.extend(c[k].iter().map(|v| v.to_string()));
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }

    /// Reads the format produced by [`Trajectory::write_csv`].
    pub fn read_csv<R: Read>(input: R) -> Result<Self>
    where
        S: std::str::FromStr,
    {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        let with_controls = match headers.len() {
            3 => false,
            6 => true,
            k => return Err(Error::Csv(format!("expected 3 or 6 columns, found {k}"))),
        };
        let mut traj = Trajectory {
            grid: Vec::new(),
            xi: Vec::new(),
            zeta: Vec::new(),
            controls: with_controls.then(Vec::new),
        };
        let parse = |s: &str| -> Result<S> {
            s.trim()
                .parse::<S>()
                .map_err(|_| Error::Csv(format!("not a number: {s:?}")))
        };
        for rec in r.records() {
            let rec = rec?;
            traj.grid.push(parse(&rec[0])?);
            traj.xi.push(parse(&rec[1])?);
            traj.zeta.push(parse(&rec[2])?);
            if let Some(c) = traj.controls.as_mut() {
                c.push([parse(&rec[3])?, parse(&rec[4])?, parse(&rec[5])?]);
            }
        }
        Ok(traj)
    }
}

/// Per-term split of a path cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostComponents<S> {
    pub arrival: S,
    pub service: S,
    pub reneging: S,
}

impl<S: Real> CostComponents<S> {
    pub fn sum(&self) -> S {
        self.arrival + self.service + self.reneging
    }
}

/// Cost of a path together with its breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostReport<S> {
    pub total: S,
    pub normalized: S,
    pub components: CostComponents<S>,
    pub decay_rate: Option<S>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn valid() -> (ModelParams<f64>, Horizon<f64>) {
        (ModelParams::new(2.0, 1.0, 1.0, 1.0), Horizon::new(10.0))
    }

    #[test]
    fn validate_examples() {
        let (p, h) = valid();
        assert_eq!(validate(p, h, Purpose::Variational), Ok((p, h)));

        let p = ModelParams::new(1.0, 2.0, 1.0, 0.0);
        let h = Horizon::new(1.0);
        assert_eq!(
            validate(p, h, Purpose::Variational),
            Err(Error::LambdaLessThanMu)
        );
        assert_eq!(validate(p, h, Purpose::Simulation), Ok((p, h)));
    }

    #[test]
    fn validate_is_idempotent() {
        let (p, h) = valid();
        let once = validate(p, h, Purpose::Variational).unwrap();
        let twice = validate(once.0, once.1, Purpose::Variational).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn every_error_reachable_by_one_field() {
        let (p, h) = valid();
        let v = Purpose::Variational;
        assert_eq!(
            validate(ModelParams { lambda: 0.0, ..p }, h, v),
            Err(Error::RateNonpositive("lambda"))
        );
        assert_eq!(
            validate(ModelParams { mu: -1.0, ..p }, h, v),
            Err(Error::RateNonpositive("mu"))
        );
        assert_eq!(
            validate(ModelParams { theta: f64::NAN, ..p }, h, v),
            Err(Error::RateNonpositive("theta"))
        );
        assert_eq!(
            validate(ModelParams { mu: 3.0, ..p }, h, v),
            Err(Error::LambdaLessThanMu)
        );
        assert_eq!(
            validate(ModelParams { x0: -0.5, ..p }, h, v),
            Err(Error::InitialStateNegative)
        );
        let ms = ModelParams::many_server(2.0, 1.0, 1.0, 2.0);
        assert!(validate(ms, h, v).is_ok());
        assert_eq!(
            validate(ModelParams { x0: 0.5, ..ms }, h, v),
            Err(Error::ManyServerX0TooSmall)
        );
        assert!(validate(ModelParams { x0: 0.5, ..ms }, h, Purpose::Simulation).is_ok());
        assert_eq!(
            validate(p, Horizon::new(0.0), v),
            Err(Error::HorizonNonpositive)
        );
        assert_eq!(
            validate(p, Horizon::new(f64::INFINITY), v),
            Err(Error::HorizonNonpositive)
        );
    }

    #[test]
    fn lambda_equal_mu_is_allowed() {
        let p = ModelParams::new(1.5, 1.5, 1.0, 0.0);
        assert!(validate(p, Horizon::new(1.0), Purpose::Variational).is_ok());
        assert_eq!(p.typical_rate(), 0.0);
    }

    #[test]
    fn json_field_names() {
        let p = ModelParams::new(2.0, 1.0, 0.5, 1.0);
        let v = serde_json::to_value(p).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"lambda": 2.0, "mu": 1.0, "theta": 0.5, "x0": 1.0, "mode": "SingleServer"})
        );
        let h: Horizon<f64> = serde_json::from_str(r#"{"T": 3.5}"#).unwrap();
        assert_eq!(h.t, 3.5);
        let g: TargetRate<f64> = serde_json::from_str(r#"{"gamma": 2}"#).unwrap();
        assert_eq!(g.gamma, 2.0);
        let m: ModelParams<f64> =
            serde_json::from_str(r#"{"lambda":2,"mu":1,"theta":1,"x0":2,"mode":"ManyServer"}"#)
                .unwrap();
        assert_eq!(m.mode, Mode::ManyServer);
    }

    #[test]
    fn uniform_grid_ends_exactly() {
        let g = Trajectory::<f64>::uniform_grid(0.3, 7).unwrap();
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), 0.3);
        assert!(matches!(
            Trajectory::<f64>::uniform_grid(1.0, 1),
            Err(Error::GridTooCoarse { .. })
        ));
    }

    #[test]
    fn csv_roundtrip_keeps_bits() {
        let traj = Trajectory {
            grid: vec![0.0, 0.5, 1.0],
            xi: vec![1.0, 0.1 + 0.2, 1.0 / 3.0],
            zeta: vec![0.0, 0.25, 0.5],
            controls: Some(vec![[1.0, 1.0, 1.0], [1.2, 1.0 / 1.2, 0.7], [1.0, 1.0, 2.0]]),
        };
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,xi,zeta,phi1,phi2,phi3\n"));
        let back = Trajectory::<f64>::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, traj);
        assert!(back.validate(1.0, 0.0).is_ok());
    }

    #[test]
    fn trajectory_validation_rejects_bad_paths() {
        let good = Trajectory {
            grid: vec![0.0, 1.0],
            xi: vec![1.0, 0.5],
            zeta: vec![0.0, 0.2],
            controls: None,
        };
        assert!(good.validate(1.0, 0.0).is_ok());
        let mut bad = good.clone();
        bad.zeta[1] = -0.1;
        assert!(bad.validate(1.0, 0.0).is_err());
        let mut bad = good.clone();
        bad.xi[0] = 2.0;
        assert!(bad.validate(1.0, 0.0).is_err());
        let mut bad = good;
        bad.grid[1] = 0.0;
        assert!(bad.validate(1.0, 0.0).is_err());
    }
}
