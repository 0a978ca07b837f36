#![allow(dead_code)]

use envara_core::grid::Grid;

/// Dense periodic centred-difference Laplacian on `grid`, row-major.
pub fn dense_laplacian(grid: &Grid) -> Vec<Vec<f64>> {
    let n = grid.len();
    let n0 = grid.n0();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let mut a = vec![vec![0.0; n]; n];
    for (k, row) in a.iter_mut().enumerate() {
        let idx = grid.multi_index(k);
        for axis in 0..grid.dim() {
            for step in [1, n0 - 1] {
                let mut nb = idx;
                nb[axis] = (nb[axis] + step) % n0;
                row[grid.flat_index(&nb[..grid.dim()])] += inv_h2;
            }
            row[k] -= 2.0 * inv_h2;
        }
    }
    a
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            if aik != 0.0 {
                for j in 0..n {
                    c[i][j] += aik * b[k][j];
                }
            }
        }
    }
    c
}

/// `exp(A)` by scaling and squaring of a 30-term Taylor series.
pub fn expm(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let norm = a
        .iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let s = if norm > 0.25 {
        (norm / 0.25).log2().ceil() as i32
    } else {
        0
    };
    let scale = 0.5f64.powi(s);
    let scaled: Vec<Vec<f64>> = a
        .iter()
        .map(|r| r.iter().map(|x| x * scale).collect())
        .collect();
    let mut result: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut term = result.clone();
    for k in 1..=30 {
        term = matmul(&term, &scaled);
        for row in term.iter_mut() {
            for x in row.iter_mut() {
                *x /= k as f64;
            }
        }
        for (r, t) in result.iter_mut().zip(&term) {
            for (x, y) in r.iter_mut().zip(t) {
                *x += y;
            }
        }
    }
    for _ in 0..s {
        result = matmul(&result, &result);
    }
    result
}

pub fn matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum())
        .collect()
}

/// Root of the increasing function `f` on `(lo, hi)` by plain bisection down to `width`.
/// An infinite `hi` is replaced by doubling until `f` changes sign.
pub fn bisect(f: impl Fn(f64) -> f64, lo: f64, hi: f64, width: f64) -> f64 {
    let mut hi = hi;
    if !hi.is_finite() {
        hi = lo.abs().max(1.0);
        while f(hi) < 0.0 {
            hi *= 2.0;
        }
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > width * 1f64.max(a.abs()).max(b.abs()) {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if f(m) < 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}
