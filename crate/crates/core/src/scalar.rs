//! Safeguarded Newton iteration for increasing scalar functions on an open interval.

use crate::error::{Error, Result};

/// Result of a scalar root solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarRoot {
    pub root: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Finds the root of an increasing `f` on the open interval `(lo, hi)`.
///
/// `f` returns `(value, derivative)`. It must be negative near `lo` and positive
/// near `hi`; `hi` may be `+∞`. The iteration keeps a bracket `(a, b)` with
/// `f(a) < 0 < f(b)` and takes the Newton step when it lands strictly inside,
/// otherwise it bisects (or, while the upper end is unbounded, expands outward).
///
/// Stops when `|f| <= tol`, or when the bracket has shrunk to a few ulps, in which
/// case the best point found is returned with its residual.
pub fn solve_increasing(
    f: impl Fn(f64) -> (f64, f64),
    lo: f64,
    hi: f64,
    guess: f64,
    tol: f64,
    max_iter: usize,
    solver: &'static str,
) -> Result<ScalarRoot> {
    debug_assert!(lo < hi);
    let mut a = lo;
    let mut b = hi;
    let mut x = if guess > a && guess < b {
        guess
    } else if b.is_finite() {
        0.5 * (a + b)
    } else {
        a + a.abs().max(1.0)
    };
    let mut best = ScalarRoot {
        root: x,
        residual: f64::INFINITY,
        iterations: 0,
    };
    for iter in 1..=max_iter {
        let (r, dr) = f(x);
        if r.is_nan() {
            return Err(Error::DomainError(format!(
                "{solver}: residual is NaN at {x:e} inside ({a:e}, {b:e})"
            )));
        }
        if r.abs() < best.residual.abs() || best.residual.is_infinite() {
            best = ScalarRoot {
                root: x,
                residual: r,
                iterations: iter,
            };
        }
        if r.abs() <= tol {
            return Ok(ScalarRoot {
                root: x,
                residual: r,
                iterations: iter,
            });
        }
        if r < 0.0 {
            a = x;
        } else {
            b = x;
        }
        if b.is_finite()
            && b - a <= 4.0 * f64::EPSILON * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
        {
            best.iterations = iter;
            return Ok(best);
        }
        let newton = x - r / dr;
        x = if dr > 0.0 && dr.is_finite() && newton > a && newton < b {
            newton
        } else if b.is_finite() {
            0.5 * (a + b)
        } else {
            x + 2.0 * x.abs().max(1.0)
        };
    }
    Err(Error::NonConvergence {
        solver,
        iterations: max_iter,
        residual: best.residual,
        trace: Vec::new(),
    })
}
