//! Scalar root finding and one-dimensional minimization.

use crate::scalar::Real;

/// Outcome of [`bracketed_root`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root<S> {
    pub x: S,
    pub fx: S,
    pub iterations: usize,
    /// Final bracket `(lo, hi)`; `f(lo)` and `f(hi)` have opposite signs.
    pub bracket: (S, S),
}

/// Finds a root of `f` in `[lo, hi]` given `f(lo) < 0 < f(hi)` or the reverse.
///
/// Regula falsi with the Illinois weight update, falling back to bisection
/// whenever the interpolated point does not shrink the bracket by at least a
/// quarter. Stops when `|f(x)| <= tol`, when the bracket is down to a few ulps,
/// or after `max_iter` evaluations.
pub fn bracketed_root<S, F>(mut f: F, lo: S, hi: S, tol: S, max_iter: usize) -> Root<S>
where
    S: Real,
    F: FnMut(S) -> S,
{
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    debug_assert!(fa.signum() != fb.signum(), "root not bracketed");
    let mut best = if fa.abs() < fb.abs() { (a, fa) } else { (b, fb) };
    // side of the last retained endpoint, for the Illinois halving
    let mut side = 0i8;
    let mut width = (b - a).abs();
    let mut iterations = 0;
    let four = S::lit(4.0);

    while iterations < max_iter && best.1.abs() > tol {
        let scale = a.abs().max(b.abs()).max(S::one());
        if (b - a).abs() <= four * S::epsilon() * scale {
            break;
        }
        let mut x = (a * fb - b * fa) / (fb - fa);
        let lo_edge = a.min(b);
        let hi_edge = a.max(b);
        if !(x > lo_edge && x < hi_edge) {
            x = a + (b - a) * S::half();
        }
        // guarantee geometric shrinkage every other step
        if iterations % 2 == 1 && (b - a).abs() > S::lit(0.75) * width {
            x = a + (b - a) * S::half();
        }
        if iterations % 2 == 1 {
            width = (b - a).abs();
        }
        let fx = f(x);
        iterations += 1;
        if fx.abs() < best.1.abs() {
            best = (x, fx);
        }
        if fx == S::zero() {
            a = x;
            b = x;
            break;
        }
        if fx.signum() == fb.signum() {
            b = x;
            fb = fx;
            if side == -1 {
                fa = fa * S::half();
            }
            side = -1;
        } else {
            a = x;
            fa = fx;
            if side == 1 {
                fb = fb * S::half();
            }
            side = 1;
        }
    }
    Root {
        x: best.0,
        fx: best.1,
        iterations,
        bracket: (a.min(b), a.max(b)),
    }
}

/// Golden-section search for the minimum of a unimodal `f` on `[a, b]`.
/// Returns `(argmin, min)`.
pub fn golden_section<S, F>(mut f: F, mut a: S, mut b: S, tol: S, max_iter: usize) -> (S, S)
where
    S: Real,
    F: FnMut(S) -> S,
{
    let inv_phi = (S::lit(5.0).sqrt() - S::one()) * S::half();
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..max_iter {
        if (b - a).abs() <= tol {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_polynomial_root() {
        let r = bracketed_root(|x: f64| x * x * x - 2.0, 0.0, 3.0, 1e-14, 200);
        assert!((r.x - 2f64.cbrt()).abs() < 1e-13, "{r:?}");
        assert!(r.iterations < 60);
    }

    #[test]
    fn handles_steep_functions() {
        // nearly a step: regula falsi alone stalls here
        let r = bracketed_root(|x: f64| (50.0 * (x - 0.3)).tanh(), -10.0, 10.0, 1e-13, 200);
        assert!((r.x - 0.3).abs() < 1e-12, "{r:?}");
    }

    #[test]
    fn decreasing_functions_work() {
        let r = bracketed_root(|x: f64| 1.0 - x.exp(), -3.0, 2.0, 1e-14, 200);
        assert!(r.x.abs() < 1e-13);
    }

    #[test]
    fn golden_section_minimum() {
        let (x, fx) = golden_section(|x: f64| (x - 1.25).powi(2) + 0.5, 0.0, 4.0, 1e-10, 200);
        assert!((x - 1.25).abs() < 1e-8);
        assert!((fx - 0.5).abs() < 1e-15);
    }
}
