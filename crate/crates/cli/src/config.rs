//! Experiment configuration: a TOML document with one required `kind` key and optional
//! sections whose omitted keys take the documented defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use envara_core::diffusion::NonlinearDiffusionConfig;
use envara_core::reaction::ReactionSolveConfig;
use envara_core::splitting::SolverConfigs;

use crate::HarnessError;

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    OdeConvergence,
    CauchyConvergence,
    EnergyTrace,
    SingleRun,
}

/// The two-species isomerisation `X1 ⇌ X2` with forward rate `rate` and backward rate 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OdeConfig {
    pub rate: f64,
    pub c0: [f64; 2],
    pub t_end: f64,
    /// Time steps, strictly decreasing.
    pub dt: Vec<f64>,
}

impl Default for OdeConfig {
    fn default() -> Self {
        Self {
            rate: 2.0,
            c0: [1.0, 0.5],
            t_end: 1.0,
            dt: [20.0, 40.0, 80.0, 160.0, 320.0, 640.0]
                .iter()
                .map(|n| 1.0 / n)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    /// `u = (1 - tanh((r - r0)/w))/2 + 1`, `v = (1 + tanh((r - r0)/w))/2 + 1`.
    TanhRing,
}

/// The two-dimensional system `u + 2v ⇌ 3v` on a periodic square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    /// Exponent `m` of the nonlinear diffusion `∂_t u = D_u Δ(u^m)`; `1` means linear.
    pub alpha_exp: f64,
    pub d_u: f64,
    pub d_v: f64,
    pub k_plus: f64,
    pub k_minus: f64,
    /// Lower and upper bound of both coordinates.
    pub domain: [f64; 2],
    pub initial: InitialCondition,
    pub front_radius: f64,
    pub front_width: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            alpha_exp: 1.0,
            d_u: 0.2,
            d_v: 0.1,
            k_plus: 1.0,
            k_minus: 0.1,
            domain: [-1.0, 1.0],
            initial: InitialCondition::TanhRing,
            front_radius: 0.4,
            front_width: 0.1,
        }
    }
}

/// How a finer solution is brought onto a coarser grid for a Cauchy difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Restriction {
    /// Fourier truncation evaluated at the coarse cell centres.
    Spectral,
    /// Bilinear interpolation at the coarse cell centres.
    Bilinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CauchyConfig {
    /// Cells per axis, strictly increasing.
    pub n_cells: Vec<usize>,
    pub dt_over_h: f64,
    pub t_end: f64,
    pub restriction: Restriction,
}

impl Default for CauchyConfig {
    fn default() -> Self {
        Self {
            n_cells: vec![40, 60, 80, 100, 120],
            dt_over_h: 1.0,
            t_end: 0.2,
            restriction: Restriction::Spectral,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyConfig {
    pub n_cells: usize,
    pub dt: f64,
    pub t_end: f64,
    pub snapshot_times: Vec<f64>,
    /// One run per diffusion exponent.
    pub alpha_exps: Vec<f64>,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            n_cells: 40,
            dt: 0.05,
            t_end: 0.7,
            snapshot_times: vec![0.2, 0.5, 0.7],
            alpha_exps: vec![1.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub n_cells: usize,
    pub dt: f64,
    pub t_end: f64,
    pub snapshot_times: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_cells: 40,
            dt: 0.05,
            t_end: 0.7,
            snapshot_times: vec![0.7],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub reaction_tol: f64,
    pub reaction_max_iter: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub linear_tol: f64,
    pub linear_max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let r = ReactionSolveConfig::default();
        let d = NonlinearDiffusionConfig::default();
        Self {
            reaction_tol: r.tol_residual,
            reaction_max_iter: r.max_iter,
            newton_tol: d.newton_tol,
            newton_max_iter: d.newton_max_iter,
            linear_tol: d.linear_tol,
            linear_max_iter: d.linear_max_iter,
        }
    }
}

impl SolverConfig {
    pub fn to_core(&self) -> SolverConfigs {
        SolverConfigs {
            reaction: ReactionSolveConfig {
                tol_residual: self.reaction_tol,
                max_iter: self.reaction_max_iter,
                ..ReactionSolveConfig::default()
            },
            diffusion: NonlinearDiffusionConfig {
                newton_tol: self.newton_tol,
                newton_max_iter: self.newton_max_iter,
                linear_tol: self.linear_tol,
                linear_max_iter: self.linear_max_iter,
                ..NonlinearDiffusionConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub ode: OdeConfig,
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default)]
    pub cauchy: CauchyConfig,
    #[serde(default)]
    pub energy: EnergyConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub solver: SolverConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    /// A configuration of the given kind with every other key at its default.
    pub fn with_defaults(kind: ExperimentKind) -> Self {
        Self {
            kind,
            output_dir: default_output_dir(),
            ode: OdeConfig::default(),
            system: SystemConfig::default(),
            cauchy: CauchyConfig::default(),
            energy: EnergyConfig::default(),
            run: RunConfig::default(),
            solver: SolverConfig::default(),
        }
    }

    /// Checks every section; the kind only selects which results are produced.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let o = &self.ode;
        positive("ode.rate", o.rate)?;
        positive("ode.c0[0]", o.c0[0])?;
        positive("ode.c0[1]", o.c0[1])?;
        non_negative("ode.t_end", o.t_end)?;
        decreasing_positive("ode.dt", &o.dt)?;

        let s = &self.system;
        if !(s.alpha_exp >= 1.0 && s.alpha_exp.is_finite()) {
            return Err(invalid("system.alpha_exp", "a finite number >= 1"));
        }
        positive("system.d_u", s.d_u)?;
        positive("system.d_v", s.d_v)?;
        positive("system.k_plus", s.k_plus)?;
        positive("system.k_minus", s.k_minus)?;
        if !(s.domain[0] < s.domain[1] && s.domain.iter().all(|x| x.is_finite())) {
            return Err(invalid(
                "system.domain",
                "[lower, upper] with lower < upper",
            ));
        }
        positive("system.front_radius", s.front_radius)?;
        positive("system.front_width", s.front_width)?;

        let c = &self.cauchy;
        if c.n_cells.len() < 3 || c.n_cells.windows(2).any(|w| w[0] >= w[1]) || c.n_cells[0] < 2 {
            return Err(invalid(
                "cauchy.n_cells",
                "at least three strictly increasing cell counts >= 2",
            ));
        }
        positive("cauchy.dt_over_h", c.dt_over_h)?;
        non_negative("cauchy.t_end", c.t_end)?;

        let e = &self.energy;
        cells("energy.n_cells", e.n_cells)?;
        positive("energy.dt", e.dt)?;
        non_negative("energy.t_end", e.t_end)?;
        times("energy.snapshot_times", &e.snapshot_times, e.t_end)?;
        if e.alpha_exps.is_empty() || e.alpha_exps.iter().any(|&a| !(a >= 1.0 && a.is_finite())) {
            return Err(invalid(
                "energy.alpha_exps",
                "a non-empty list of numbers >= 1",
            ));
        }

        let r = &self.run;
        cells("run.n_cells", r.n_cells)?;
        positive("run.dt", r.dt)?;
        non_negative("run.t_end", r.t_end)?;
        times("run.snapshot_times", &r.snapshot_times, r.t_end)?;

        let v = &self.solver;
        positive("solver.reaction_tol", v.reaction_tol)?;
        positive("solver.newton_tol", v.newton_tol)?;
        positive("solver.linear_tol", v.linear_tol)?;
        for (key, n) in [
            ("solver.reaction_max_iter", v.reaction_max_iter),
            ("solver.newton_max_iter", v.newton_max_iter),
            ("solver.linear_max_iter", v.linear_max_iter),
        ] {
            if n == 0 {
                return Err(invalid(key, "a positive integer"));
            }
        }
        Ok(())
    }

    /// The resolved configuration as TOML, with every default written out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises to TOML")
    }

    /// Writes [`RESOLVED_CONFIG_FILE`] into `dir`.
    pub fn write_sidecar(&self, dir: &Path) -> Result<PathBuf, HarnessError> {
        let path = dir.join(RESOLVED_CONFIG_FILE);
        crate::write_file(&path, &self.to_toml())?;
        Ok(path)
    }
}

/// Parses and validates a configuration document.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, HarnessError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| from_toml_error(&e))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads, parses and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text)
}

fn from_toml_error(e: &toml::de::Error) -> HarnessError {
    let message = e.message().trim().to_string();
    let key = message
        .strip_prefix("unknown field `")
        .or_else(|| message.strip_prefix("missing field `"))
        .and_then(|rest| rest.split('`').next())
        .unwrap_or("<document>")
        .to_string();
    HarnessError::InvalidConfig {
        key,
        expected: message,
    }
}

fn invalid(key: &str, expected: &str) -> HarnessError {
    HarnessError::InvalidConfig {
        key: key.to_string(),
        expected: expected.to_string(),
    }
}

fn positive(key: &str, x: f64) -> Result<(), HarnessError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(key, "a finite positive number"))
    }
}

fn non_negative(key: &str, x: f64) -> Result<(), HarnessError> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(key, "a finite non-negative number"))
    }
}

fn cells(key: &str, n: usize) -> Result<(), HarnessError> {
    if n >= 2 {
        Ok(())
    } else {
        Err(invalid(key, "an integer >= 2"))
    }
}

fn decreasing_positive(key: &str, xs: &[f64]) -> Result<(), HarnessError> {
    for (i, &x) in xs.iter().enumerate() {
        positive(&format!("{key}[{i}]"), x)?;
    }
    if xs.len() < 2 || xs.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid(key, "at least two strictly decreasing values"));
    }
    Ok(())
}

fn times(key: &str, ts: &[f64], t_end: f64) -> Result<(), HarnessError> {
    for (i, &t) in ts.iter().enumerate() {
        if !(t >= 0.0 && t <= t_end * (1.0 + 1e-12)) {
            return Err(invalid(&format!("{key}[{i}]"), "a time in [0, t_end]"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = parse_config_str("kind = \"ode_convergence\"\n").unwrap();
        assert_eq!(
            cfg,
            ExperimentConfig::with_defaults(ExperimentKind::OdeConvergence)
        );
        assert_eq!(cfg.ode.dt.len(), 6);
        assert_eq!(cfg.ode.dt[5], 1.0 / 640.0);
    }

    #[test]
    fn negative_dt_names_the_key() {
        let err =
            parse_config_str("kind = \"ode_convergence\"\n[ode]\ndt = [0.1, -0.05]\n").unwrap_err();
        match err {
            HarnessError::InvalidConfig { key, .. } => assert_eq!(key, "ode.dt[1]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            "kind = \"single_run\"\nbogus = 1\n",
            "kind = \"single_run\"\n[system]\nd_w = 1.0\n",
        ] {
            match parse_config_str(text).unwrap_err() {
                HarnessError::InvalidConfig { key, .. } => assert!(key == "bogus" || key == "d_w"),
                other => panic!("unexpected {other:?}"),
            }
        }
        assert!(matches!(
            parse_config_str("output_dir = \"x\"\n").unwrap_err(),
            HarnessError::InvalidConfig { .. }
        ));
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut cfg = ExperimentConfig::with_defaults(ExperimentKind::CauchyConvergence);
        cfg.system.alpha_exp = 2.0;
        assert_eq!(parse_config_str(&cfg.to_toml()).unwrap(), cfg);
    }
}
