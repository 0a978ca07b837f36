//! The experiment suites: ODE convergence, Cauchy convergence, energy traces and single runs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use envara_core::diffusion::DiffusionLaw;
use envara_core::grid::{write_field_csv, Field, Grid};
use envara_core::reaction::ReactionSpec;
use envara_core::splitting::{
    run, RunReport, SimState, Snapshots, SolverConfigs, Species, SystemSpec,
};
use envara_core::Error;

use crate::config::{
    CauchyConfig, EnergyConfig, ExperimentConfig, ExperimentKind, InitialCondition, OdeConfig,
    Restriction, RunConfig, SystemConfig,
};
use crate::{write_file, HarnessError};

/// One row of a convergence table.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub label: String,
    pub error: f64,
    pub order: Option<f64>,
}

/// `label,error,order` with an empty order on rows that have none.
pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut out = String::from("label,error,order\n");
    for r in rows {
        write!(out, "{},{:.16e},", r.label, r.error).unwrap();
        if let Some(p) = r.order {
            write!(out, "{p:.16e}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Parses the output of [`convergence_csv`].
pub fn parse_convergence_csv(text: &str) -> Result<Vec<ConvergenceRow>, Error> {
    let bad = |m: String| Error::InvalidInput(format!("convergence CSV: {m}"));
    let mut lines = text.lines();
    if lines.next() != Some("label,error,order") {
        return Err(bad("unexpected header".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(bad(format!("row `{line}`")));
            }
            let real = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
            Ok(ConvergenceRow {
                label: cols[0].to_string(),
                error: real(cols[1])?,
                order: if cols[2].is_empty() {
                    None
                } else {
                    Some(real(cols[2])?)
                },
            })
        })
        .collect()
}

/// Exact solution of `c1' = -(a c1 - c2)`, `c2' = a c1 - c2`.
pub fn exact_ode_solution(t: f64, alpha: f64, c0: [f64; 2]) -> [f64; 2] {
    let total = c0[0] + c0[1];
    let c1_inf = total / (alpha + 1.0);
    let c1 = (1.0 + (c0[0] / c1_inf - 1.0) * (-(alpha + 1.0) * t).exp()) * c1_inf;
    [c1, total - c1]
}

/// The isomerisation `X1 ⇌ X2` without diffusion on a two-cell grid of uniform data.
pub fn ode_system(cfg: &OdeConfig) -> Result<SystemSpec, Error> {
    let grid = Grid::unit(1, 2)?;
    let reaction = ReactionSpec::mass_action(vec![1.0, 0.0], vec![0.0, 1.0], cfg.rate, 1.0)?;
    let species = ["c1", "c2"]
        .iter()
        .zip(cfg.c0)
        .map(|(name, c)| {
            Ok(Species {
                name: name.to_string(),
                law: DiffusionLaw::None,
                initial: Field::constant(grid, c)?,
            })
        })
        .collect::<Result<_, Error>>()?;
    SystemSpec::new(grid, species, reaction)
}

fn dt_label(dt: f64) -> String {
    let n = 1.0 / dt;
    if (n - n.round()).abs() < 1e-9 * n {
        format!("dt=1/{}", n.round())
    } else {
        format!("dt={dt:e}")
    }
}

/// Final-time ℓ∞ error of the split scheme against [`exact_ode_solution`] for each time step,
/// with the observed order `ln(e_k / e_{k+1}) / ln(dt_k / dt_{k+1})`.
pub fn run_ode_convergence(
    cfg: &OdeConfig,
    solver: &SolverConfigs,
) -> Result<Vec<ConvergenceRow>, HarnessError> {
    let spec = ode_system(cfg)?;
    let exact = exact_ode_solution(cfg.t_end, cfg.rate, cfg.c0);
    let errors = cfg
        .dt
        .par_iter()
        .map(|&dt| {
            let mut snap = Snapshots::at_times(&[cfg.t_end], dt)?;
            run(&spec, dt, cfg.t_end, solver, &mut snap)?;
            let last = &snap.taken[0];
            Ok(last
                .fields
                .iter()
                .zip(exact)
                .map(|(f, e)| f.values().iter().map(|c| (c - e).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max))
        })
        .collect::<Result<Vec<f64>, HarnessError>>()?;
    Ok(cfg
        .dt
        .iter()
        .enumerate()
        .map(|(k, &dt)| ConvergenceRow {
            label: dt_label(dt),
            error: errors[k],
            order: (k > 0).then(|| (errors[k - 1] / errors[k]).ln() / (cfg.dt[k - 1] / dt).ln()),
        })
        .collect())
}

/// Convergence order from two consecutive Cauchy differences on non-uniformly refined grids.
///
/// With `e_coarse = ‖ψ_prev - ψ_j‖` and `e_fine = ‖ψ_j - ψ_next‖`, returns
/// `ln((e_coarse / e_fine) / A) / ln(h_prev / h_j)` where
/// `A = (1 - h_j²/h_prev²) / (1 - h_next²/h_j²)`.
pub fn weighted_order(
    e_coarse: f64,
    e_fine: f64,
    h_prev: f64,
    h_j: f64,
    h_next: f64,
) -> Result<f64, Error> {
    let all_positive = [e_coarse, e_fine, h_prev, h_j, h_next]
        .iter()
        .all(|x| *x > 0.0 && x.is_finite());
    if !all_positive || !(h_prev > h_j && h_j > h_next) {
        return Err(Error::InvalidInput(format!(
            "weighted_order needs positive errors and h_prev > h_j > h_next, got \
             ({e_coarse}, {e_fine}, {h_prev}, {h_j}, {h_next})"
        )));
    }
    let a = (1.0 - (h_j / h_prev).powi(2)) / (1.0 - (h_next / h_j).powi(2));
    Ok(((e_coarse / e_fine) / a).ln() / (h_prev / h_j).ln())
}

fn species_laws(sys: &SystemConfig) -> [DiffusionLaw; 2] {
    let u = if sys.alpha_exp == 1.0 {
        DiffusionLaw::Constant { d: sys.d_u }
    } else {
        DiffusionLaw::Power {
            d0: sys.d_u,
            exponent: sys.alpha_exp,
        }
    };
    [u, DiffusionLaw::Constant { d: sys.d_v }]
}

/// The two-species system `u + 2v ⇌ 3v` on an `n_cells × n_cells` periodic grid.
pub fn example_system(sys: &SystemConfig, n_cells: usize) -> Result<SystemSpec, Error> {
    let grid = Grid::cube(2, n_cells, sys.domain[0], sys.domain[1])?;
    let reaction =
        ReactionSpec::mass_action(vec![1.0, 2.0], vec![0.0, 3.0], sys.k_plus, sys.k_minus)?;
    let profile = |x: [f64; 2], sign: f64| match sys.initial {
        InitialCondition::TanhRing => {
            let r = x[0].hypot(x[1]);
            (sign * ((r - sys.front_radius) / sys.front_width).tanh() + 1.0) / 2.0 + 1.0
        }
    };
    let [law_u, law_v] = species_laws(sys);
    let species = vec![
        Species {
            name: "u".into(),
            law: law_u,
            initial: Field::from_fn(grid, |x| profile(x, -1.0))?,
        },
        Species {
            name: "v".into(),
            law: law_v,
            initial: Field::from_fn(grid, |x| profile(x, 1.0))?,
        },
    ];
    SystemSpec::new(grid, species, reaction)
}

/// Bilinear interpolation of a periodic cell-centred field at the cell centres of `coarse`.
pub fn restrict_bilinear(fine: &Field, coarse: &Grid) -> Result<Field, Error> {
    let g = fine.grid();
    if g.dim() != coarse.dim() || g.lower() != coarse.lower() || g.upper() != coarse.upper() {
        return Err(Error::InvalidInput(
            "restriction needs grids on the same domain".into(),
        ));
    }
    let n = g.n0();
    let h = g.h();
    let locate = |x: f64, axis: usize| {
        let s = (x - g.lower()[axis]) / h - 0.5;
        let i = s.floor();
        let w = s - i;
        let i0 = (i as isize).rem_euclid(n as isize) as usize;
        (i0, (i0 + 1) % n, w)
    };
    let v = fine.values();
    Field::from_fn(*coarse, |x| {
        let (i0, i1, wx) = locate(x[0], 0);
        if g.dim() == 1 {
            return (1.0 - wx) * v[i0] + wx * v[i1];
        }
        let (j0, j1, wy) = locate(x[1], 1);
        let at = |i: usize, j: usize| v[i * n + j];
        (1.0 - wx) * ((1.0 - wy) * at(i0, j0) + wy * at(i0, j1))
            + wx * ((1.0 - wy) * at(i1, j0) + wy * at(i1, j1))
    })
}

/// Trigonometric restriction of a periodic cell-centred field to the cell centres of `coarse`.
///
/// Keeps the Fourier modes with `|k| < n_coarse / 2`, shifts them to the coarse cell
/// centres and transforms back. Resolved smooth fields are reproduced to spectral accuracy.
pub fn restrict_spectral(fine: &Field, coarse: &Grid) -> Result<Field, Error> {
    let g = fine.grid();
    if g.dim() != coarse.dim() || g.lower() != coarse.lower() || g.upper() != coarse.upper() {
        return Err(Error::InvalidInput(
            "restriction needs grids on the same domain".into(),
        ));
    }
    if coarse.n0() > g.n0() {
        return Err(Error::InvalidInput(
            "spectral restriction needs a coarser target grid".into(),
        ));
    }
    let (nf, nc, dim) = (g.n0(), coarse.n0(), g.dim());
    let length = g.upper()[0] - g.lower()[0];
    let shift = 0.5 * (coarse.h() - g.h());
    let mut planner = FftPlanner::new();
    let mut spec: Vec<Complex64> = fine
        .values()
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    fft_nd(&mut spec, nf, dim, &*planner.plan_fft_forward(nf));

    let signed = |k: usize, n: usize| k as i64 - if 2 * k > n { n as i64 } else { 0 };
    let keep = |k: i64| 2 * k.unsigned_abs() < nc as u64;
    let factor = |k: i64| {
        let theta = 2.0 * std::f64::consts::PI * k as f64 * shift / length;
        Complex64::from_polar(nc as f64 / nf as f64, theta)
    };
    let wrap = |k: i64, n: usize| k.rem_euclid(n as i64) as usize;
    let mut out = vec![Complex64::new(0.0, 0.0); coarse.len()];
    if dim == 1 {
        for k in (0..nf).map(|k| signed(k, nf)).filter(|&k| keep(k)) {
            out[wrap(k, nc)] = spec[wrap(k, nf)] * factor(k);
        }
    } else {
        for kx in (0..nf).map(|k| signed(k, nf)).filter(|&k| keep(k)) {
            for ky in (0..nf).map(|k| signed(k, nf)).filter(|&k| keep(k)) {
                out[wrap(kx, nc) * nc + wrap(ky, nc)] =
                    spec[wrap(kx, nf) * nf + wrap(ky, nf)] * factor(kx) * factor(ky);
            }
        }
    }
    fft_nd(&mut out, nc, dim, &*planner.plan_fft_inverse(nc));
    let scale = 1.0 / coarse.len() as f64;
    Field::new(*coarse, out.iter().map(|z| z.re * scale).collect())
}

fn fft_nd(buf: &mut [Complex64], n: usize, dim: usize, fft: &dyn Fft<f64>) {
    fft.process(buf);
    if dim == 2 {
        transpose(buf, n);
        fft.process(buf);
        transpose(buf, n);
    }
}

fn transpose(buf: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in i + 1..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}

/// Cauchy convergence tables, one per species.
#[derive(Debug, Clone, PartialEq)]
pub struct CauchyResult {
    pub h: Vec<f64>,
    pub tables: Vec<(String, Vec<ConvergenceRow>)>,
}

/// Runs the system on every resolution and tabulates `‖ψ_{h_j} - R ψ_{h_{j+1}}‖∞` with
/// [`weighted_order`] for each consecutive triple. `R` is the configured restriction.
pub fn run_cauchy_convergence(
    sys: &SystemConfig,
    cauchy: &CauchyConfig,
    solver: &SolverConfigs,
) -> Result<CauchyResult, HarnessError> {
    let finals = cauchy
        .n_cells
        .par_iter()
        .map(|&n| {
            let spec = example_system(sys, n)?;
            let dt = cauchy.dt_over_h * spec.grid().h();
            let mut snap = Snapshots::at_times(&[cauchy.t_end], dt)?;
            run(&spec, dt, cauchy.t_end, solver, &mut snap)?;
            info!("resolution {n}: done");
            Ok((spec.species_names(), snap.taken.remove(0)))
        })
        .collect::<Result<Vec<(Vec<String>, SimState)>, HarnessError>>()?;
    let h: Vec<f64> = finals.iter().map(|(_, s)| s.fields[0].grid().h()).collect();
    let names = finals[0].0.clone();
    let mut tables = Vec::new();
    for (i, name) in names.into_iter().enumerate() {
        let diffs = finals
            .windows(2)
            .map(|w| {
                let coarse = &w[0].1.fields[i];
                let fine = &w[1].1.fields[i];
                let restricted = match cauchy.restriction {
                    Restriction::Spectral => restrict_spectral(fine, coarse.grid())?,
                    Restriction::Bilinear => restrict_bilinear(fine, coarse.grid())?,
                };
                coarse.max_abs_diff(&restricted)
            })
            .collect::<Result<Vec<f64>, Error>>()?;
        let rows = diffs
            .iter()
            .enumerate()
            .map(|(j, &e)| {
                let order = if j == 0 {
                    None
                } else {
                    Some(weighted_order(diffs[j - 1], e, h[j - 1], h[j], h[j + 1])?)
                };
                Ok(ConvergenceRow {
                    label: format!("h{}-h{}", j + 1, j + 2),
                    error: e,
                    order,
                })
            })
            .collect::<Result<_, Error>>()?;
        tables.push((name, rows));
    }
    Ok(CauchyResult { h, tables })
}

/// One energy-trace run.
#[derive(Debug, Clone)]
pub struct EnergyTrace {
    pub alpha_exp: f64,
    pub report: RunReport,
    pub snapshots: Vec<SimState>,
}

pub fn run_energy_trace(
    sys: &SystemConfig,
    energy: &EnergyConfig,
    solver: &SolverConfigs,
) -> Result<Vec<EnergyTrace>, HarnessError> {
    energy
        .alpha_exps
        .par_iter()
        .map(|&alpha_exp| {
            let sys = SystemConfig {
                alpha_exp,
                ..sys.clone()
            };
            let run_cfg = RunConfig {
                n_cells: energy.n_cells,
                dt: energy.dt,
                t_end: energy.t_end,
                snapshot_times: energy.snapshot_times.clone(),
            };
            let (report, snapshots) = run_single(&sys, &run_cfg, solver)?;
            Ok(EnergyTrace {
                alpha_exp,
                report,
                snapshots,
            })
        })
        .collect()
}

pub fn run_single(
    sys: &SystemConfig,
    cfg: &RunConfig,
    solver: &SolverConfigs,
) -> Result<(RunReport, Vec<SimState>), HarnessError> {
    let spec = example_system(sys, cfg.n_cells)?;
    let mut snap = Snapshots::at_times(&cfg.snapshot_times, cfg.dt)?;
    let report = run(&spec, cfg.dt, cfg.t_end, solver, &mut snap)?;
    Ok((report, snap.taken))
}

/// `t` with at most six decimals and no trailing zeros.
fn time_label(t: f64) -> String {
    let s = format!("{t:.6}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn write_snapshots(
    out: &Path,
    prefix: &str,
    names: &[String],
    snapshots: &[SimState],
    written: &mut Vec<PathBuf>,
) -> Result<(), HarnessError> {
    for s in snapshots {
        for (name, f) in names.iter().zip(&s.fields) {
            let path = out.join(format!("{prefix}snapshot_{name}_t{}.csv", time_label(s.t)));
            write_file(&path, &write_field_csv(f))?;
            written.push(path);
        }
    }
    Ok(())
}

/// Runs the experiment selected by `cfg.kind`, writing its CSVs and the resolved
/// configuration into `out`. Returns the written paths.
pub fn execute(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|source| HarnessError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let mut written = vec![cfg.write_sidecar(out)?];
    let solver = cfg.solver.to_core();
    match cfg.kind {
        ExperimentKind::OdeConvergence => {
            let rows = run_ode_convergence(&cfg.ode, &solver)?;
            let path = out.join("ode_convergence.csv");
            write_file(&path, &convergence_csv(&rows))?;
            written.push(path);
        }
        ExperimentKind::CauchyConvergence => {
            let result = run_cauchy_convergence(&cfg.system, &cfg.cauchy, &solver)?;
            for (name, rows) in &result.tables {
                let path = out.join(format!("cauchy_{name}.csv"));
                write_file(&path, &convergence_csv(rows))?;
                written.push(path);
            }
        }
        ExperimentKind::EnergyTrace => {
            for trace in run_energy_trace(&cfg.system, &cfg.energy, &solver)? {
                let prefix = format!("alpha_exp_{}_", trace.alpha_exp);
                let path = out.join(format!("{prefix}energy.csv"));
                write_file(&path, &trace.report.to_csv())?;
                written.push(path);
                write_snapshots(
                    out,
                    &prefix,
                    &trace.report.species,
                    &trace.snapshots,
                    &mut written,
                )?;
            }
        }
        ExperimentKind::SingleRun => {
            let (report, snapshots) = match run_single(&cfg.system, &cfg.run, &solver) {
                Err(HarnessError::Run(failure)) => {
                    write_file(
                        &out.join("run_report.partial.csv"),
                        &failure.report.to_csv(),
                    )?;
                    return Err(HarnessError::Run(failure));
                }
                other => other?,
            };
            let path = out.join("run_report.csv");
            write_file(&path, &report.to_csv())?;
            written.push(path);
            write_snapshots(out, "", &report.species, &snapshots, &mut written)?;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_solution_examples() {
        assert_eq!(exact_ode_solution(0.0, 2.0, [1.0, 0.5]), [1.0, 0.5]);
        let late = exact_ode_solution(60.0, 2.0, [1.0, 0.5]);
        assert!((late[0] - 0.5).abs() < 1e-15 && (late[1] - 1.0).abs() < 1e-15);
        let eq = exact_ode_solution(1.0, 1.0, [1.0, 1.0]);
        assert_eq!(eq, [1.0, 1.0]);
    }

    #[test]
    fn weighted_order_examples() {
        let h = [1.0 / 20.0, 1.0 / 30.0, 1.0 / 40.0];
        let p = weighted_order(4.1625e-3, 1.5357e-3, h[0], h[1], h[2]).unwrap();
        assert_eq!(format!("{p:.4}"), "1.8700");
        let p = weighted_order(4.4205e-3, 1.4508e-3, h[0], h[1], h[2]).unwrap();
        assert_eq!(format!("{p:.4}"), "2.1586");
        let e = |a: f64, b: f64| 3.0 * (a * a - b * b);
        let p = weighted_order(e(h[0], h[1]), e(h[1], h[2]), h[0], h[1], h[2]).unwrap();
        assert!((p - 2.0).abs() < 1e-12);
        assert!(weighted_order(-1.0, 1.0, h[0], h[1], h[2]).is_err());
        assert!(weighted_order(1.0, 1.0, h[1], h[0], h[2]).is_err());
    }

    #[test]
    fn restriction_reproduces_linear_profiles_away_from_the_seam() {
        let fine = Grid::cube(2, 12, -1.0, 1.0).unwrap();
        let coarse = Grid::cube(2, 8, -1.0, 1.0).unwrap();
        let lin = |x: [f64; 2]| 2.0 + 0.3 * x[0] - 0.2 * x[1];
        let r = restrict_bilinear(&Field::from_fn(fine, lin).unwrap(), &coarse).unwrap();
        let interior = 1.0 - 1.5 * fine.h();
        for k in 0..coarse.len() {
            let x = coarse.cell_center(k);
            if x[0].abs() < interior && x[1].abs() < interior {
                assert!((r.values()[k] - lin(x)).abs() < 1e-14);
            }
        }
        let same = Field::from_fn(coarse, lin).unwrap();
        assert!(
            restrict_bilinear(&same, &coarse)
                .unwrap()
                .max_abs_diff(&same)
                .unwrap()
                < 1e-14
        );
    }

    #[test]
    fn spectral_restriction_is_exact_on_resolved_modes() {
        use std::f64::consts::PI;
        let wave = |x: [f64; 2]| {
            1.5 + (PI * x[0]).sin() * (2.0 * PI * x[1]).cos() + 0.3 * (3.0 * PI * x[1]).sin()
        };
        for (nf, nc) in [(60, 40), (120, 100), (40, 40)] {
            let fine = Grid::cube(2, nf, -1.0, 1.0).unwrap();
            let coarse = Grid::cube(2, nc, -1.0, 1.0).unwrap();
            let r = restrict_spectral(&Field::from_fn(fine, wave).unwrap(), &coarse).unwrap();
            let exact = Field::from_fn(coarse, wave).unwrap();
            assert!(r.max_abs_diff(&exact).unwrap() < 1e-13, "{nf} -> {nc}");
        }
        let f1 = Grid::cube(1, 30, 0.0, 2.0).unwrap();
        let c1 = Grid::cube(1, 20, 0.0, 2.0).unwrap();
        let g = |x: [f64; 2]| 2.0 + (PI * x[0]).cos();
        let r = restrict_spectral(&Field::from_fn(f1, g).unwrap(), &c1).unwrap();
        assert!(r.max_abs_diff(&Field::from_fn(c1, g).unwrap()).unwrap() < 1e-14);
        assert!(restrict_spectral(&Field::from_fn(c1, g).unwrap(), &f1).is_err());
    }

    #[test]
    fn convergence_csv_round_trip() {
        let rows = vec![
            ConvergenceRow {
                label: "h1-h2".into(),
                error: 4.1625e-3,
                order: None,
            },
            ConvergenceRow {
                label: "h2-h3".into(),
                error: 1.0 / 3.0,
                order: Some(1.87),
            },
        ];
        assert_eq!(
            parse_convergence_csv(&convergence_csv(&rows)).unwrap(),
            rows
        );
    }
}
