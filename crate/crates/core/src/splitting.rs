//! Strang composition `reaction(dt/2) ∘ diffusion(dt) ∘ reaction(dt/2)` and the run driver.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::diffusion::{nonlinear_cn_step, DiffusionLaw, EtdOperator, NonlinearDiffusionConfig};
use crate::error::{Error, Result, Stage};
use crate::grid::{Field, Grid};
use crate::reaction::{reaction_stage, ReactionSolveConfig, ReactionSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct Species {
    pub name: String,
    pub law: DiffusionLaw,
    pub initial: Field,
}

/// Species, their diffusion laws and initial data, and the single reaction coupling them.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    grid: Grid,
    species: Vec<Species>,
    reaction: ReactionSpec,
}

impl SystemSpec {
    pub fn new(grid: Grid, species: Vec<Species>, reaction: ReactionSpec) -> Result<Self> {
        if species.len() != reaction.n_species() {
            return Err(Error::InvalidInput(format!(
                "{} species given for a {}-species reaction",
                species.len(),
                reaction.n_species()
            )));
        }
        for s in &species {
            s.law.validate().map_err(|e| e.at_species(&s.name))?;
            if *s.initial.grid() != grid {
                return Err(Error::InvalidInput(format!(
                    "initial field of `{}` is not on the system grid",
                    s.name
                )));
            }
            s.initial
                .ensure_positive("initial field")
                .map_err(|e| e.at_species(&s.name))?;
        }
        Ok(Self {
            grid,
            species,
            reaction,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn species(&self) -> &[Species] {
        &self.species
    }

    pub fn reaction(&self) -> &ReactionSpec {
        &self.reaction
    }

    pub fn species_names(&self) -> Vec<String> {
        self.species.iter().map(|s| s.name.clone()).collect()
    }
}

/// Concentrations of every species at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub step_index: usize,
    pub fields: Vec<Field>,
}

impl SimState {
    pub fn initial(spec: &SystemSpec) -> Self {
        Self {
            t: 0.0,
            step_index: 0,
            fields: spec.species.iter().map(|s| s.initial.clone()).collect(),
        }
    }

    pub fn min_values(&self) -> Vec<f64> {
        self.fields.iter().map(Field::min).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SolverConfigs {
    pub reaction: ReactionSolveConfig,
    pub diffusion: NonlinearDiffusionConfig,
}

/// Basis of `ker σᵀ`: every `e` with `e·σ = 0`, so `⟨e·c, 1⟩` is invariant under reaction.
///
/// Pivots on the entry of `σ` with the largest magnitude and returns
/// `unit_j - (σ_j / σ_p) unit_p` for every other species `j`.
pub fn conserved_basis(spec: &ReactionSpec) -> Vec<Vec<f64>> {
    let sigma = spec.sigma();
    let n = sigma.len();
    let pivot = (0..n).fold(None, |best: Option<usize>, i| match best {
        Some(b) if sigma[b].abs() >= sigma[i].abs() => Some(b),
        _ if sigma[i] != 0.0 => Some(i),
        other => other,
    });
    match pivot {
        None => (0..n)
            .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
            .collect(),
        Some(p) => (0..n)
            .filter(|&j| j != p)
            .map(|j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                e[p] = -sigma[j] / sigma[p];
                e
            })
            .collect(),
    }
}

/// `⟨e·c, 1⟩` for every basis vector `e`.
pub fn conserved_quantities(fields: &[Field], basis: &[Vec<f64>]) -> Vec<f64> {
    let masses: Vec<f64> = fields.iter().map(Field::integral).collect();
    basis
        .iter()
        .map(|e| e.iter().zip(&masses).map(|(a, m)| a * m).sum())
        .collect()
}

/// Discrete free energy `⟨Σ_i c_i (ln c_i - 1) + c_i U_i, 1⟩`.
pub fn system_energy(fields: &[Field], spec: &ReactionSpec) -> Result<f64> {
    if fields.len() != spec.n_species() {
        return Err(Error::InvalidInput(format!(
            "{} fields for {} species",
            fields.len(),
            spec.n_species()
        )));
    }
    let mut total = 0.0;
    for (i, (f, &u)) in fields.iter().zip(spec.energies()).enumerate() {
        f.ensure_positive(&format!("species {i}"))?;
        total += f.grid().cell_volume()
            * f.values()
                .iter()
                .map(|&c| c * (c.ln() - 1.0 + u))
                .sum::<f64>();
    }
    Ok(total)
}

/// Solver effort spent in one Strang step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    /// Reaction Newton iterations per cell, averaged over both reaction stages.
    pub reaction_iters_avg: f64,
    /// Newton iterations of the nonlinear diffusion solves, summed over species.
    pub diffusion_iters: usize,
}

/// Advances a [`SystemSpec`] by Strang steps, caching ETD propagators per time step.
pub struct StrangStepper<'a> {
    spec: &'a SystemSpec,
    cfgs: SolverConfigs,
    etd: Vec<Option<EtdOperator>>,
}

impl<'a> StrangStepper<'a> {
    pub fn new(spec: &'a SystemSpec, cfgs: SolverConfigs) -> Result<Self> {
        cfgs.reaction.validate()?;
        cfgs.diffusion.validate()?;
        Ok(Self {
            spec,
            cfgs,
            etd: vec![None; spec.species.len()],
        })
    }

    fn prepare_etd(&mut self, dt: f64) -> Result<()> {
        for (slot, s) in self.etd.iter_mut().zip(&self.spec.species) {
            if let DiffusionLaw::Constant { d } = s.law {
                if slot.as_ref().is_none_or(|op| op.dt() != dt) {
                    *slot = Some(EtdOperator::new(self.spec.grid, d, dt)?);
                }
            }
        }
        Ok(())
    }

    fn diffuse(&mut self, fields: &[Field], dt: f64) -> Result<(Vec<Field>, usize)> {
        self.prepare_etd(dt)?;
        let cfg = self.cfgs.diffusion;
        let out: Vec<(Field, usize)> = self
            .spec
            .species
            .par_iter()
            .zip(&self.etd)
            .zip(fields)
            .map(|((s, etd), f)| {
                let step = match s.law {
                    DiffusionLaw::None => Ok((f.clone(), 0)),
                    DiffusionLaw::Constant { .. } => etd
                        .as_ref()
                        .expect("ETD operator prepared")
                        .apply(f)
                        .map(|g| (g, 0)),
                    DiffusionLaw::Power { .. } => nonlinear_cn_step(f, &s.law, dt, &cfg)
                        .map(|r| (r.field, r.newton_iterations)),
                };
                step.map_err(|e| e.at_species(&s.name))
            })
            .collect::<Result<_>>()?;
        let iters = out.iter().map(|(_, it)| it).sum();
        Ok((out.into_iter().map(|(f, _)| f).collect(), iters))
    }

    /// One step of size `dt`.
    pub fn step(&mut self, state: &SimState, dt: f64) -> Result<(SimState, StepStats)> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "time step must be positive, got {dt}"
            )));
        }
        let reaction = &self.spec.reaction;
        let rcfg = self.cfgs.reaction;
        let first = reaction_stage(&state.fields, reaction, 0.5 * dt, &rcfg)
            .map_err(|e| e.at_stage(Stage::FirstReaction))?;
        let (diffused, diffusion_iters) = self
            .diffuse(&first.fields, dt)
            .map_err(|e| e.at_stage(Stage::Diffusion))?;
        let second = reaction_stage(&diffused, reaction, 0.5 * dt, &rcfg)
            .map_err(|e| e.at_stage(Stage::SecondReaction))?;
        for (f, s) in second.fields.iter().zip(&self.spec.species) {
            f.ensure_positive("step output")
                .map_err(|e| e.at_species(&s.name).at_stage(Stage::SecondReaction))?;
        }
        let cells = self.spec.grid.len() as f64;
        let stats = StepStats {
            reaction_iters_avg: (first.iterations + second.iterations) as f64 / (2.0 * cells),
            diffusion_iters,
        };
        Ok((
            SimState {
                t: state.t + dt,
                step_index: state.step_index + 1,
                fields: second.fields,
            },
            stats,
        ))
    }
}

/// One Strang step without ETD caching.
pub fn strang_step(
    state: &SimState,
    spec: &SystemSpec,
    dt: f64,
    cfgs: &SolverConfigs,
) -> Result<SimState> {
    StrangStepper::new(spec, *cfgs)?
        .step(state, dt)
        .map(|(s, _)| s)
}

/// Receives every accepted state of a run, starting with the initial one.
pub trait Observer {
    fn observe(&mut self, state: &SimState);
}

impl<F: FnMut(&SimState)> Observer for F {
    fn observe(&mut self, state: &SimState) {
        self(state)
    }
}

/// Keeps copies of the states at selected step indices.
#[derive(Debug, Clone, Default)]
pub struct Snapshots {
    steps: BTreeSet<usize>,
    pub taken: Vec<SimState>,
}

impl Snapshots {
    pub fn at_steps(steps: impl IntoIterator<Item = usize>) -> Self {
        Self {
            steps: steps.into_iter().collect(),
            taken: Vec::new(),
        }
    }

    /// Snapshots at the given times, each of which must be a whole number of steps.
    pub fn at_times(times: &[f64], dt: f64) -> Result<Self> {
        let steps = times
            .iter()
            .map(|&t| step_count(t, dt))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::at_steps(steps))
    }
}

impl Observer for Snapshots {
    fn observe(&mut self, state: &SimState) {
        if self.steps.contains(&state.step_index) {
            self.taken.push(state.clone());
        }
    }
}

/// Number of steps of size `dt` in `t_end`; errors unless `t_end` is a whole multiple.
pub fn step_count(t_end: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) || !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "need dt > 0 and t_end >= 0, got dt = {dt}, t_end = {t_end}"
        )));
    }
    let n = (t_end / dt).round();
    if (n * dt - t_end).abs() > 1e-9 * t_end.max(dt) {
        return Err(Error::InvalidInput(format!(
            "t_end = {t_end} is not a whole number of steps of size {dt}"
        )));
    }
    Ok(n as usize)
}

/// Per-step diagnostics of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub step: usize,
    pub t: f64,
    pub energy: f64,
    pub conserved: Vec<f64>,
    pub min_values: Vec<f64>,
    pub reaction_iters_avg: f64,
    pub diffusion_iters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub species: Vec<String>,
    pub n_conserved: usize,
    pub records: Vec<RunRecord>,
}

impl RunReport {
    fn new(species: Vec<String>, n_conserved: usize) -> Self {
        Self {
            species,
            n_conserved,
            records: Vec::new(),
        }
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.energy).collect()
    }

    /// Largest `(F_{n+1} - F_n) / max(|F_n|, 1e-300)` over the run; ≤ 0 for a dissipative run.
    pub fn max_relative_energy_increase(&self) -> f64 {
        self.records
            .windows(2)
            .map(|w| (w[1].energy - w[0].energy) / w[0].energy.abs().max(1e-300))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest relative drift of any conserved quantity from its initial value.
    pub fn max_relative_conserved_drift(&self) -> f64 {
        let Some(first) = self.records.first() else {
            return 0.0;
        };
        self.records
            .iter()
            .flat_map(|r| {
                r.conserved
                    .iter()
                    .zip(&first.conserved)
                    .map(|(q, q0)| (q - q0).abs() / q0.abs().max(1e-300))
            })
            .fold(0.0, f64::max)
    }

    /// Smallest concentration of any species over the run.
    pub fn min_value(&self) -> f64 {
        self.records
            .iter()
            .flat_map(|r| r.min_values.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec!["step".to_string(), "t".into(), "energy".into()];
        cols.extend((0..self.n_conserved).map(|i| format!("conserved_{i}")));
        cols.extend(self.species.iter().map(|s| format!("min_{s}")));
        cols.push("reaction_iters_avg".into());
        cols.push("diffusion_iters".into());
        cols.join(",")
    }

    /// One row per record; reals are written with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        for r in &self.records {
            write!(out, "{},{:.16e},{:.16e}", r.step, r.t, r.energy).unwrap();
            for v in r.conserved.iter().chain(&r.min_values) {
                write!(out, ",{v:.16e}").unwrap();
            }
            writeln!(out, ",{:.16e},{}", r.reaction_iters_avg, r.diffusion_iters).unwrap();
        }
        out
    }

    /// Parses the output of [`RunReport::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: String| Error::InvalidInput(format!("run report CSV: {m}"));
        let mut lines = text.lines();
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| bad("empty input".into()))?
            .split(',')
            .collect();
        if header.len() < 5 || header[..3] != ["step", "t", "energy"] {
            return Err(bad("unexpected header".into()));
        }
        let n_conserved = header
            .iter()
            .filter(|h| h.starts_with("conserved_"))
            .count();
        let species: Vec<String> = header
            .iter()
            .filter_map(|h| h.strip_prefix("min_").map(str::to_string))
            .collect();
        let mut report = RunReport::new(species, n_conserved);
        let ns = report.species.len();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != header.len() {
                return Err(bad(format!("row `{line}` has {} columns", cols.len())));
            }
            let real = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
            let int = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("`{s}`: {e}")));
            let reals = |r: &[&str]| r.iter().map(|s| real(s)).collect::<Result<Vec<_>>>();
            report.records.push(RunRecord {
                step: int(cols[0])?,
                t: real(cols[1])?,
                energy: real(cols[2])?,
                conserved: reals(&cols[3..3 + n_conserved])?,
                min_values: reals(&cols[3 + n_conserved..3 + n_conserved + ns])?,
                reaction_iters_avg: real(cols[cols.len() - 2])?,
                diffusion_iters: int(cols[cols.len() - 1])?,
            });
        }
        Ok(report)
    }
}

/// A failed run: the error plus the diagnostics recorded up to the last accepted step.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub report: RunReport,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let last = self.report.records.last().map_or(0, |r| r.step);
        write!(f, "run failed after step {last}: {}", self.error)
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Error> for RunFailure {
    fn from(error: Error) -> Self {
        Self {
            error,
            report: RunReport::new(Vec::new(), 0),
        }
    }
}

fn record(
    state: &SimState,
    spec: &SystemSpec,
    basis: &[Vec<f64>],
    stats: StepStats,
) -> Result<RunRecord> {
    Ok(RunRecord {
        step: state.step_index,
        t: state.t,
        energy: system_energy(&state.fields, &spec.reaction)?,
        conserved: conserved_quantities(&state.fields, basis),
        min_values: state.min_values(),
        reaction_iters_avg: stats.reaction_iters_avg,
        diffusion_iters: stats.diffusion_iters,
    })
}

/// Runs Strang steps of size `dt` from the initial data up to `t_end`.
///
/// `t_end` must be a whole number of steps. The observer sees the initial state and
/// every accepted state; the report holds one record for each.
pub fn run(
    spec: &SystemSpec,
    dt: f64,
    t_end: f64,
    cfgs: &SolverConfigs,
    observer: &mut dyn Observer,
) -> std::result::Result<RunReport, RunFailure> {
    let n_steps = step_count(t_end, dt)?;
    let basis = conserved_basis(&spec.reaction);
    let mut report = RunReport::new(spec.species_names(), basis.len());
    let mut stepper = StrangStepper::new(spec, *cfgs)?;
    let mut state = SimState::initial(spec);
    report
        .records
        .push(record(&state, spec, &basis, StepStats::default())?);
    observer.observe(&state);
    for k in 1..=n_steps {
        let outcome = stepper.step(&state, dt).and_then(|(mut next, stats)| {
            next.t = k as f64 * dt;
            let rec = record(&next, spec, &basis, stats)?;
            Ok((next, rec))
        });
        match outcome {
            Ok((next, rec)) => {
                state = next;
                report.records.push(rec);
                observer.observe(&state);
            }
            Err(error) => return Err(RunFailure { error, report }),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn basis_examples() {
        let iso =
            ReactionSpec::new(vec![1.0, 0.0], vec![0.0, 1.0], 1.0, 1.0, vec![0.0; 2]).unwrap();
        assert_eq!(conserved_basis(&iso), vec![vec![1.0, 1.0]]);
        let three = ReactionSpec::new(
            vec![1.0, 2.0, 0.0],
            vec![0.0, 0.0, 3.0],
            1.0,
            1.0,
            vec![0.0; 3],
        )
        .unwrap();
        let b = conserved_basis(&three);
        assert_eq!(b.len(), 2);
        for e in &b {
            assert!(dot(e, three.sigma()).abs() < 1e-15);
        }
        assert!((b[0][2] - 1.0 / 3.0).abs() < 1e-15);
        let single = ReactionSpec::new(vec![0.0], vec![1.0], 1.0, 1.0, vec![0.0]).unwrap();
        assert!(conserved_basis(&single).is_empty());
        let none =
            ReactionSpec::new(vec![1.0, 1.0], vec![1.0, 1.0], 1.0, 1.0, vec![0.0; 2]).unwrap();
        assert_eq!(conserved_basis(&none).len(), 2);
    }

    #[test]
    fn energy_examples() {
        let g = Grid::unit(2, 4).unwrap();
        let single = ReactionSpec::new(vec![0.0], vec![1.0], 1.0, 1.0, vec![0.0]).unwrap();
        let one = Field::constant(g, 1.0).unwrap();
        assert!((system_energy(std::slice::from_ref(&one), &single).unwrap() + 1.0).abs() < 1e-15);

        let two =
            ReactionSpec::new(vec![1.0, 0.0], vec![0.0, 1.0], 1.0, 2.0, vec![0.3, -0.2]).unwrap();
        let a = Field::from_fn(g, |x| 1.0 + x[0]).unwrap();
        let b = Field::from_fn(g, |x| 2.0 - x[1]).unwrap();
        let each = |f: &Field, u: f64| {
            let s = ReactionSpec::new(vec![0.0], vec![1.0], 1.0, 1.0, vec![u]).unwrap();
            system_energy(std::slice::from_ref(f), &s).unwrap()
        };
        let total = system_energy(&[a.clone(), b.clone()], &two).unwrap();
        assert!((total - each(&a, 0.3) - each(&b, -0.2)).abs() < 1e-14);
    }

    #[test]
    fn step_count_validation() {
        assert_eq!(step_count(1.0, 1.0 / 640.0).unwrap(), 640);
        assert_eq!(step_count(0.7, 0.05).unwrap(), 14);
        assert_eq!(step_count(0.0, 0.05).unwrap(), 0);
        assert!(step_count(0.7, 0.3).is_err());
        assert!(step_count(1.0, 0.0).is_err());
    }

    #[test]
    fn report_csv_round_trip() {
        let report = RunReport {
            species: vec!["u".into(), "v".into()],
            n_conserved: 1,
            records: vec![RunRecord {
                step: 3,
                t: 0.15,
                energy: -std::f64::consts::PI,
                conserved: vec![1.0 / 3.0],
                min_values: vec![1e-300, 2.5],
                reaction_iters_avg: 4.25,
                diffusion_iters: 7,
            }],
        };
        let text = report.to_csv();
        assert!(text.starts_with(
            "step,t,energy,conserved_0,min_u,min_v,reaction_iters_avg,diffusion_iters\n"
        ));
        assert_eq!(RunReport::from_csv(&text).unwrap(), report);
    }
}
