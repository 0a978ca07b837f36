//! Pointwise solver for one reversible reaction written in its reaction trajectory `R`.
//!
//! At a grid point the concentrations are `c(R) = c0 + σ R`, the free energy is
//! `F(R) = Σ c_i (ln c_i - 1 + U_i)` and the trajectory obeys
//! `ln(R_t / η(c) + 1) = -Σ σ_i μ_i` with `μ_i = ln c_i + U_i` and the mobility
//! `η(c) = k⁻ Π c_i^{β_i}`. With `Σ σ_i U_i = ln(k⁻/k⁺)` this is the law of mass action
//! `R_t = k⁺ c^α - k⁻ c^β`.
//!
//! A step of size `dt` from `R = 0`:
//!
//! 1. first-order predictor `R̂`: `ln(R̂ / (η(c0) dt) + 1) + Σ σ_i μ_i(c(R̂)) = 0`;
//! 2. corrector `R`: `ln(R / (η* dt) + 1) + φ(R, 0) + dt Σ σ_i (μ_i(c(R)) - μ_i(c0)) = 0`
//!    with `η* = η(c(R̂ / 2))` and `φ` the divided difference of `F`.
//!
//! Both residuals are strictly increasing on the admissible interval and blow up
//! logarithmically at its ends, so each has exactly one root there. The corrector
//! keeps every concentration positive and never increases `F`.

use log::warn;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gfun::{g1_rel, g2_rel};
use crate::grid::Field;
use crate::scalar::{solve_increasing, ScalarRoot};

/// Tolerance on `|Σ σ_i U_i - ln(k⁻/k⁺)|` for a spec to count as mass-action consistent.
pub const DETAILED_BALANCE_TOL: f64 = 1e-12;

/// One reversible reaction `Σ α_i X_i ⇌ Σ β_i X_i` with rates `k⁺`, `k⁻`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReactionSpec {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    sigma: Vec<f64>,
    k_plus: f64,
    k_minus: f64,
    energies: Vec<f64>,
}

impl ReactionSpec {
    /// Reaction with explicitly given internal energies `U_i`.
    ///
    /// Energies that do not reproduce the law of mass action are accepted, with a warning.
    pub fn new(
        alpha: Vec<f64>,
        beta: Vec<f64>,
        k_plus: f64,
        k_minus: f64,
        energies: Vec<f64>,
    ) -> Result<Self> {
        let n = alpha.len();
        if n == 0 {
            return Err(Error::InvalidInput(
                "reaction needs at least one species".into(),
            ));
        }
        if beta.len() != n || energies.len() != n {
            return Err(Error::InvalidInput(format!(
                "alpha, beta and energies must have equal length ({}, {}, {})",
                n,
                beta.len(),
                energies.len()
            )));
        }
        if alpha
            .iter()
            .chain(&beta)
            .any(|&v| !v.is_finite() || v < 0.0)
        {
            return Err(Error::InvalidInput(
                "stoichiometric exponents must be finite and non-negative".into(),
            ));
        }
        if !(k_plus > 0.0 && k_plus.is_finite() && k_minus > 0.0 && k_minus.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "rate constants must be positive, got k+ = {k_plus}, k- = {k_minus}"
            )));
        }
        if energies.iter().any(|u| !u.is_finite()) {
            return Err(Error::InvalidInput(
                "internal energies must be finite".into(),
            ));
        }
        let sigma = alpha.iter().zip(&beta).map(|(a, b)| b - a).collect();
        let spec = Self {
            alpha,
            beta,
            sigma,
            k_plus,
            k_minus,
            energies,
        };
        let defect = spec.detailed_balance_defect();
        if defect.abs() > DETAILED_BALANCE_TOL {
            warn!(
                "internal energies miss the mass-action relation by {defect:e}; \
                 the reaction rate will not follow k+ c^alpha - k- c^beta"
            );
        }
        Ok(spec)
    }

    /// Reaction whose internal energies reproduce the law of mass action.
    ///
    /// Reactant-side species (`σ_i < 0`) share `ln k⁺` and product-side species
    /// (`σ_i > 0`) share `ln k⁻`, weighted so that `Σ σ_i U_i = ln(k⁻/k⁺)`; for
    /// `U + 2V ⇌ 3V` this gives `U_u = ln k⁺`, `U_v = ln k⁻`. If one side is empty the
    /// whole `ln(k⁻/k⁺)` is spread along `σ`.
    pub fn mass_action(alpha: Vec<f64>, beta: Vec<f64>, k_plus: f64, k_minus: f64) -> Result<Self> {
        let sigma: Vec<f64> = alpha.iter().zip(&beta).map(|(a, b)| b - a).collect();
        let neg: f64 = sigma.iter().filter(|&&s| s < 0.0).map(|s| -s).sum();
        let pos: f64 = sigma.iter().filter(|&&s| s > 0.0).sum();
        let energies = if neg > 0.0 && pos > 0.0 {
            sigma
                .iter()
                .map(|&s| {
                    if s < 0.0 {
                        k_plus.ln() / neg
                    } else if s > 0.0 {
                        k_minus.ln() / pos
                    } else {
                        0.0
                    }
                })
                .collect()
        } else {
            let norm2: f64 = sigma.iter().map(|s| s * s).sum();
            let target = (k_minus / k_plus).ln();
            sigma
                .iter()
                .map(|&s| if norm2 > 0.0 { target * s / norm2 } else { 0.0 })
                .collect()
        };
        Self::new(alpha, beta, k_plus, k_minus, energies)
    }

    pub fn n_species(&self) -> usize {
        self.sigma.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// Stoichiometric vector `σ = β - α`.
    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn k_plus(&self) -> f64 {
        self.k_plus
    }

    pub fn k_minus(&self) -> f64 {
        self.k_minus
    }

    /// Internal energies `U_i`.
    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// `Σ σ_i U_i - ln(k⁻/k⁺)`; zero when the dynamics is the law of mass action.
    pub fn detailed_balance_defect(&self) -> f64 {
        let s: f64 = self
            .sigma
            .iter()
            .zip(&self.energies)
            .map(|(s, u)| s * u)
            .sum();
        s - (self.k_minus / self.k_plus).ln()
    }

    /// True when `σ = 0`, i.e. the reaction changes nothing.
    pub fn is_trivial(&self) -> bool {
        self.sigma.iter().all(|&s| s == 0.0)
    }

    /// Pointwise free energy `Σ c_i (ln c_i - 1 + U_i)`.
    pub fn free_energy(&self, c: &[f64]) -> Result<f64> {
        check_positive(c)?;
        Ok(c.iter()
            .zip(&self.energies)
            .map(|(&ci, &u)| ci * (ci.ln() - 1.0 + u))
            .sum())
    }

    /// Law-of-mass-action rate `k⁺ c^α - k⁻ c^β`.
    pub fn mass_action_rate(&self, c: &[f64]) -> f64 {
        self.k_plus * monomial(c, &self.alpha) - self.k_minus * monomial(c, &self.beta)
    }
}

fn monomial(c: &[f64], exps: &[f64]) -> f64 {
    c.iter()
        .zip(exps)
        .filter(|(_, &e)| e != 0.0)
        .map(|(&ci, &e)| ci.powf(e))
        .product()
}

fn check_positive(c: &[f64]) -> Result<()> {
    match c.iter().position(|&v| !(v > 0.0)) {
        None => Ok(()),
        Some(i) => Err(Error::PositivityViolation(format!(
            "concentration of species {i} is {:e}",
            c[i]
        ))),
    }
}

/// Concentrations `c0` at the start of a reaction step; the trajectory starts at `R = 0`.
#[derive(Debug, Clone, Copy)]
pub struct PointState<'a> {
    c0: &'a [f64],
}

impl<'a> PointState<'a> {
    pub fn new(c0: &'a [f64], spec: &ReactionSpec) -> Result<Self> {
        if c0.len() != spec.n_species() {
            return Err(Error::InvalidInput(format!(
                "state has {} species, reaction has {}",
                c0.len(),
                spec.n_species()
            )));
        }
        check_positive(c0)?;
        Ok(Self { c0 })
    }

    pub fn c0(&self) -> &[f64] {
        self.c0
    }

    /// `c(R) = c0 + σ R`.
    pub fn concentrations(&self, spec: &ReactionSpec, r: f64) -> Vec<f64> {
        self.c0
            .iter()
            .zip(&spec.sigma)
            .map(|(c, s)| c + s * r)
            .collect()
    }

    fn in_domain(&self, spec: &ReactionSpec, r: f64) -> bool {
        self.c0
            .iter()
            .zip(&spec.sigma)
            .all(|(c, s)| c + s * r > 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReactionSolveConfig {
    /// Absolute tolerance on the scalar residual.
    pub tol_residual: f64,
    pub max_iter: usize,
    /// Relative gap below which `φ(p, q)` is replaced by `F'((p + q) / 2)`.
    pub phi_switch: f64,
}

impl Default for ReactionSolveConfig {
    fn default() -> Self {
        Self {
            tol_residual: 1e-12,
            max_iter: 100,
            phi_switch: 1e-8,
        }
    }
}

impl ReactionSolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_residual > 0.0) || self.max_iter == 0 || !(self.phi_switch >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "reaction solver config needs tol_residual > 0, max_iter >= 1, phi_switch >= 0: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Reaction mobility `η(c) = k⁻ Π c_i^{β_i}`.
pub fn mobility_eta(c: &[f64], spec: &ReactionSpec) -> Result<f64> {
    check_positive(c)?;
    Ok(spec.k_minus * monomial(c, &spec.beta))
}

/// Chemical affinity `Σ σ_i (ln c_i(R) + U_i)`.
pub fn chemical_affinity(r: f64, st: &PointState<'_>, spec: &ReactionSpec) -> Result<f64> {
    if !st.in_domain(spec, r) {
        return Err(Error::DomainError(format!(
            "R = {r:e} drives a concentration non-positive"
        )));
    }
    Ok(affinity_unchecked(r, st, spec))
}

fn affinity_unchecked(r: f64, st: &PointState<'_>, spec: &ReactionSpec) -> f64 {
    st.c0
        .iter()
        .zip(&spec.sigma)
        .zip(&spec.energies)
        .filter(|((_, &s), _)| s != 0.0)
        .map(|((&c, &s), &u)| s * ((c + s * r).ln() + u))
        .sum()
}

/// Open interval of trajectories keeping `c(R) > 0` and `R + eta_dt > 0`.
pub fn admissible_interval(st: &PointState<'_>, spec: &ReactionSpec, eta_dt: f64) -> (f64, f64) {
    let mut lo = -eta_dt;
    let mut hi = f64::INFINITY;
    for (&c, &s) in st.c0.iter().zip(&spec.sigma) {
        if s > 0.0 {
            lo = lo.max(-c / s);
        } else if s < 0.0 {
            hi = hi.min(c / -s);
        }
    }
    (lo, hi)
}

/// Divided difference `(F(p) - F(q)) / (p - q)` of the free energy along the trajectory.
///
/// Evaluated species by species as `Σ σ_i G1_{c_i(q)}(c_i(p)) + Σ σ_i (U_i - 1)`; when
/// `|p - q| <= phi_switch · max(1, |p|, |q|)` the midpoint affinity is returned instead.
pub fn phi(
    p: f64,
    q: f64,
    st: &PointState<'_>,
    spec: &ReactionSpec,
    cfg: &ReactionSolveConfig,
) -> Result<f64> {
    for r in [p, q] {
        if !st.in_domain(spec, r) {
            return Err(Error::DomainError(format!(
                "R = {r:e} drives a concentration non-positive"
            )));
        }
    }
    if (p - q).abs() <= cfg.phi_switch * 1f64.max(p.abs()).max(q.abs()) {
        return Ok(affinity_unchecked(0.5 * (p + q), st, spec));
    }
    Ok(phi_divided(p, q, st, spec))
}

fn phi_divided(p: f64, q: f64, st: &PointState<'_>, spec: &ReactionSpec) -> f64 {
    st.c0
        .iter()
        .zip(&spec.sigma)
        .zip(&spec.energies)
        .filter(|((_, &s), _)| s != 0.0)
        .map(|((&c, &s), &u)| {
            let a = c + s * q;
            s * (g1_rel(a, s * (p - q) / a) + u - 1.0)
        })
        .sum()
}

/// Residual of the first-order predictor and its derivative in `R`.
fn predictor_residual(r: f64, st: &PointState<'_>, spec: &ReactionSpec, eta_dt: f64) -> (f64, f64) {
    let mut value = (r / eta_dt).ln_1p();
    let mut slope = 1.0 / (r + eta_dt);
    for ((&c, &s), &u) in st.c0.iter().zip(&spec.sigma).zip(&spec.energies) {
        if s != 0.0 {
            let ci = c + s * r;
            value += s * (ci.ln() + u);
            slope += s * s / ci;
        }
    }
    (value, slope)
}

/// Residual of the second-order step and its derivative in `R`.
fn corrector_residual(
    r: f64,
    st: &PointState<'_>,
    spec: &ReactionSpec,
    eta_dt: f64,
    dt: f64,
) -> (f64, f64) {
    let mut value = (r / eta_dt).ln_1p();
    let mut slope = 1.0 / (r + eta_dt);
    for ((&c, &s), &u) in st.c0.iter().zip(&spec.sigma).zip(&spec.energies) {
        if s != 0.0 {
            let t = s * r / c;
            value += s * (g1_rel(c, t) + u - 1.0) + dt * s * t.ln_1p();
            slope += s * s * (g2_rel(c, t) + dt / (c + s * r));
        }
    }
    (value, slope)
}

/// Value of the step residual at `r` (the quantity driven to zero by [`reaction_step`]).
pub fn step_residual(
    r: f64,
    st: &PointState<'_>,
    spec: &ReactionSpec,
    dt: f64,
    eta_star: f64,
) -> f64 {
    corrector_residual(r, st, spec, eta_star * dt, dt).0
}

/// First-order predictor `R̂` for a step of size `dt` from `R = 0`.
pub fn predictor_first_order(
    st: &PointState<'_>,
    spec: &ReactionSpec,
    dt: f64,
    cfg: &ReactionSolveConfig,
) -> Result<ScalarRoot> {
    check_dt(dt)?;
    if spec.is_trivial() {
        return Ok(ScalarRoot {
            root: 0.0,
            residual: 0.0,
            iterations: 0,
        });
    }
    let eta_dt = mobility_eta(st.c0, spec)? * dt;
    let (lo, hi) = admissible_interval(st, spec, eta_dt);
    solve_increasing(
        |r| predictor_residual(r, st, spec, eta_dt),
        lo,
        hi,
        0.0,
        cfg.tol_residual,
        cfg.max_iter,
        "reaction predictor",
    )
}

/// Outcome of one second-order reaction step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReactionStep {
    /// New trajectory value `R^{n+1}` (the step starts from `R^n = 0`).
    pub r: f64,
    pub residual: f64,
    /// Predictor value `R̂^{n+1}`.
    pub predictor: f64,
    /// `η(c(R̂ / 2))`, the frozen mobility of the step.
    pub eta_star: f64,
    /// Newton iterations of predictor plus corrector.
    pub iterations: usize,
}

/// Second-order, positivity-preserving, energy-stable step of size `dt` from `R = 0`.
pub fn reaction_step(
    st: &PointState<'_>,
    spec: &ReactionSpec,
    dt: f64,
    cfg: &ReactionSolveConfig,
) -> Result<ReactionStep> {
    check_dt(dt)?;
    if spec.is_trivial() {
        return Ok(ReactionStep {
            r: 0.0,
            residual: 0.0,
            predictor: 0.0,
            eta_star: mobility_eta(st.c0, spec)?,
            iterations: 0,
        });
    }
    let pred = predictor_first_order(st, spec, dt, cfg)?;
    let half = 0.5 * pred.root;
    let eta_star = mobility_eta(&st.concentrations(spec, half), spec)?;
    let eta_dt = eta_star * dt;
    let (lo, hi) = admissible_interval(st, spec, eta_dt);
    let sol = solve_increasing(
        |r| corrector_residual(r, st, spec, eta_dt, dt),
        lo,
        hi,
        pred.root,
        cfg.tol_residual,
        cfg.max_iter,
        "reaction corrector",
    )?;
    if !st.in_domain(spec, sol.root) || !(sol.root + eta_dt > 0.0) {
        return Err(Error::PositivityViolation(format!(
            "reaction step produced R = {:e} outside the admissible interval ({lo:e}, {hi:e})",
            sol.root
        )));
    }
    Ok(ReactionStep {
        r: sol.root,
        residual: sol.residual,
        predictor: pred.root,
        eta_star,
        iterations: pred.iterations + sol.iterations,
    })
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "time step must be positive, got {dt}"
        )))
    }
}

/// Result of a reaction stage over a whole grid.
#[derive(Debug, Clone)]
pub struct ReactionStageOutcome {
    pub fields: Vec<Field>,
    /// Newton iterations summed over all cells.
    pub iterations: usize,
}

/// Applies [`reaction_step`] independently in every cell, returning `c + σ R`.
pub fn reaction_stage(
    fields: &[Field],
    spec: &ReactionSpec,
    dt: f64,
    cfg: &ReactionSolveConfig,
) -> Result<ReactionStageOutcome> {
    let n = spec.n_species();
    if fields.len() != n {
        return Err(Error::InvalidInput(format!(
            "got {} species fields for a {n}-species reaction",
            fields.len()
        )));
    }
    let grid = *fields[0].grid();
    if fields.iter().any(|f| *f.grid() != grid) {
        return Err(Error::InvalidInput(
            "species fields live on different grids".into(),
        ));
    }
    if spec.is_trivial() {
        return Ok(ReactionStageOutcome {
            fields: fields.to_vec(),
            iterations: 0,
        });
    }
    let per_cell: Vec<(f64, usize)> = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let c0: Vec<f64> = fields.iter().map(|f| f.values()[k]).collect();
            let st = PointState::new(&c0, spec).map_err(|e| e.at_cell(k))?;
            let step = reaction_step(&st, spec, dt, cfg).map_err(|e| e.at_cell(k))?;
            Ok((step.r, step.iterations))
        })
        .collect::<Result<_>>()?;
    let iterations = per_cell.iter().map(|&(_, it)| it).sum();
    let fields = fields
        .iter()
        .zip(&spec.sigma)
        .map(|(f, &s)| {
            let values = f
                .values()
                .iter()
                .zip(&per_cell)
                .map(|(&c, &(r, _))| c + s * r)
                .collect();
            Field::from_vec_unchecked(grid, values)
        })
        .collect();
    Ok(ReactionStageOutcome { fields, iterations })
}
