//! Divided differences of `x ln x`, evaluated without cancellation.
//!
//! For `a > 0`:
//!
//! * `G1_a(x) = (x ln x - a ln a) / (x - a)`, with `G1_a(a) = ln a + 1`;
//! * `G2_a(x) = d/dx G1_a(x) = (x - a - a ln(x / a)) / (x - a)^2`, with `G2_a(a) = 1 / (2a)`.
//!
//! Both are written in the relative offset `t = (x - a) / a`:
//! `G1 = ln a + (1 + t) ln(1 + t) / t` and `G2 = (t - ln(1 + t)) / (a t^2)`.
//! `ln_1p(t) / t` has no cancellation, so `G1` only needs its limit at `t = 0`;
//! `G2` switches to a Taylor series for small `|t|`.

/// Below this `|t|`, `G1` uses `ln a + 1 + t/2 - t^2/6`.
pub const G1_SERIES_SWITCH: f64 = 1e-8;

const G2_SERIES_SWITCH: f64 = 1e-2;

/// `G1_a(a (1 + t))`.
pub fn g1_rel(a: f64, t: f64) -> f64 {
    debug_assert!(a > 0.0);
    if t.abs() < G1_SERIES_SWITCH {
        a.ln() + 1.0 + t * (0.5 - t / 6.0)
    } else if t == -1.0 {
        // x = 0: the x ln x term vanishes.
        a.ln()
    } else {
        a.ln() + (1.0 + t) * t.ln_1p() / t
    }
}

/// `G1_a(x)`.
pub fn g1(a: f64, x: f64) -> f64 {
    g1_rel(a, (x - a) / a)
}

/// `G2_a(a (1 + t))`.
pub fn g2_rel(a: f64, t: f64) -> f64 {
    debug_assert!(a > 0.0);
    if t.abs() < G2_SERIES_SWITCH {
        // (t - ln(1+t)) / t^2 = Σ_{k≥0} (-1)^k t^k / (k + 2)
        let mut acc = 0.0;
        for k in (0..9).rev() {
            acc = 1.0 / (k as f64 + 2.0) - t * acc;
        }
        acc / a
    } else {
        (t - t.ln_1p()) / (a * t * t)
    }
}

/// `G2_a(x)`.
pub fn g2(a: f64, x: f64) -> f64 {
    g2_rel(a, (x - a) / a)
}
