//! Jacobi-preconditioned conjugate gradients for `(diag(shift) - scale · ∇_h·(w ∇_h)) x = b`.
//!
//! With `shift > 0`, `scale >= 0` and face weights `w >= 0` the operator is symmetric
//! positive definite.

use crate::error::{Error, Result};
use crate::grid::{apply_weighted_divgrad, weighted_divgrad_diagonal, Grid};

pub(crate) struct ShiftedDivGrad<'a> {
    grid: &'a Grid,
    shift: &'a [f64],
    scale: f64,
    weights: Vec<&'a [f64]>,
    diagonal: Vec<f64>,
}

impl<'a> ShiftedDivGrad<'a> {
    pub(crate) fn new(
        grid: &'a Grid,
        shift: &'a [f64],
        scale: f64,
        weights: Vec<&'a [f64]>,
    ) -> Self {
        let diagonal = weighted_divgrad_diagonal(grid, &weights)
            .into_iter()
            .zip(shift)
            .map(|(d, s)| s - scale * d)
            .collect();
        Self {
            grid,
            shift,
            scale,
            weights,
            diagonal,
        }
    }

    pub(crate) fn apply(&self, x: &[f64], out: &mut [f64]) {
        apply_weighted_divgrad(self.grid, &self.weights, x, out);
        for ((o, &xi), &s) in out.iter_mut().zip(x).zip(self.shift) {
            *o = s * xi - self.scale * *o;
        }
    }

    /// Solves in place starting from the contents of `x`; returns the iteration count.
    pub(crate) fn solve(
        &self,
        b: &[f64],
        x: &mut [f64],
        tol: f64,
        max_iter: usize,
    ) -> Result<usize> {
        let n = b.len();
        let mut r = vec![0.0; n];
        self.apply(x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let b_norm = norm2(b);
        let target = tol * b_norm.max(f64::MIN_POSITIVE);
        let mut res = norm2(&r);
        if res <= target {
            return Ok(0);
        }
        let mut z: Vec<f64> = r.iter().zip(&self.diagonal).map(|(ri, d)| ri / d).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = vec![0.0; n];
        for iter in 1..=max_iter {
            self.apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::NonConvergence {
                    solver: "conjugate gradients (operator not positive definite)",
                    iterations: iter,
                    residual: res,
                    trace: Vec::new(),
                });
            }
            let step = rz / pap;
            for i in 0..n {
                x[i] += step * p[i];
                r[i] -= step * ap[i];
            }
            res = norm2(&r);
            if res <= target {
                return Ok(iter);
            }
            for i in 0..n {
                z[i] = r[i] / self.diagonal[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(Error::NonConvergence {
            solver: "conjugate gradients",
            iterations: max_iter,
            residual: res / b_norm.max(f64::MIN_POSITIVE),
            trace: Vec::new(),
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
