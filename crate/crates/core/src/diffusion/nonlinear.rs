use crate::error::{Error, Result};
use crate::gfun::{g1_rel, g2_rel};
use crate::grid::{
    apply_weighted_divgrad, average_to_faces, face_inner_product, gradient_all, FaceField, Field,
    Grid,
};

use super::pcg::ShiftedDivGrad;
use super::{DiffusionLaw, NonlinearDiffusionConfig};

/// Output of the semi-implicit predictor.
#[derive(Debug, Clone)]
pub struct PredictorStep {
    pub field: Field,
    pub linear_iterations: usize,
}

/// Output of one nonlinear Crank–Nicolson step.
#[derive(Debug, Clone)]
pub struct CnStep {
    pub field: Field,
    /// Predictor `ρ̂^{n+1}` the step was built on.
    pub predictor: Field,
    pub newton_iterations: usize,
    pub linear_iterations: usize,
    /// Final `‖ρ - ρⁿ - dt ∇·(ℳ∇μ)‖∞`.
    pub residual: f64,
    /// `dt ⟨ℳ^{n+1/2} ∇μ^{n+1/2}, ∇μ^{n+1/2}⟩`, which bounds the energy decrease from below.
    pub dissipation: f64,
    /// Face mobility `ℳ^{n+1/2}` used by the step, one per axis.
    pub mobility: Vec<FaceField>,
}

fn check_inputs(rho: &Field, law: &DiffusionLaw, dt: f64) -> Result<()> {
    law.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "time step must be positive, got {dt}"
        )));
    }
    rho.ensure_positive("diffusion input")
}

fn face_average_of(rho: &Field, f: impl Fn(f64) -> f64) -> Result<Vec<FaceField>> {
    let cell = rho.map(f)?;
    (0..rho.grid().dim())
        .map(|axis| average_to_faces(&cell, axis))
        .collect()
}

/// Semi-implicit step `(ρ̂ - ρⁿ)/dt = ∇_h·(𝒜_h[D(ρⁿ)] ∇_h ρ̂)`, solved by conjugate gradients.
pub fn semi_implicit_predictor(
    rho_n: &Field,
    law: &DiffusionLaw,
    dt: f64,
    cfg: &NonlinearDiffusionConfig,
) -> Result<PredictorStep> {
    check_inputs(rho_n, law, dt)?;
    if matches!(law, DiffusionLaw::None) {
        return Ok(PredictorStep {
            field: rho_n.clone(),
            linear_iterations: 0,
        });
    }
    let grid = *rho_n.grid();
    let faces = face_average_of(rho_n, |r| law.coefficient(r))?;
    let weights: Vec<&[f64]> = faces.iter().map(|f| f.values()).collect();
    let ones = vec![1.0; grid.len()];
    let op = ShiftedDivGrad::new(&grid, &ones, dt, weights);
    let mut x = rho_n.values().to_vec();
    let iters = op.solve(rho_n.values(), &mut x, cfg.linear_tol, cfg.linear_max_iter)?;
    let field = Field::new(grid, x)?;
    field.ensure_positive("semi-implicit predictor")?;
    Ok(PredictorStep {
        field,
        linear_iterations: iters,
    })
}

/// Discrete chemical potential `μ^{n+1/2}` up to an additive constant, and its derivative.
///
/// `μ = G1_{ρⁿ}(ρ) + dt (ln ρ - ln ρⁿ)`; the constant `C` of the energy density drops out
/// of `∇_h μ`.
fn potential(rho_n: &[f64], rho: &[f64], dt: f64, mu: &mut [f64], dmu: Option<&mut [f64]>) {
    for (k, (&a, &x)) in rho_n.iter().zip(rho).enumerate() {
        let t = (x - a) / a;
        mu[k] = g1_rel(a, t) + dt * t.ln_1p();
    }
    if let Some(dmu) = dmu {
        for (k, (&a, &x)) in rho_n.iter().zip(rho).enumerate() {
            dmu[k] = g2_rel(a, (x - a) / a) + dt / x;
        }
    }
}

struct Residual {
    values: Vec<f64>,
    inf_norm: f64,
}

fn residual(
    grid: &Grid,
    weights: &[&[f64]],
    rho_n: &[f64],
    rho: &[f64],
    dt: f64,
    mu: &mut [f64],
    flux_div: &mut [f64],
) -> Residual {
    potential(rho_n, rho, dt, mu, None);
    apply_weighted_divgrad(grid, weights, mu, flux_div);
    let values: Vec<f64> = rho
        .iter()
        .zip(rho_n)
        .zip(flux_div.iter())
        .map(|((x, a), l)| x - a - dt * l)
        .collect();
    let inf_norm = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Residual { values, inf_norm }
}

/// Second-order, positivity-preserving, energy-stable step for `∂_t ρ = ∇·(D(ρ)∇ρ)`.
///
/// Solves `(ρ - ρⁿ)/dt = ∇_h·(ℳ^{n+1/2} ∇_h μ^{n+1/2})` with the mobility frozen at
/// `𝒜_h(ℳ((ρⁿ + ρ̂)/2))` from the semi-implicit predictor `ρ̂`, by damped Newton.
/// The Newton system `(I - dt L diag(μ')) δ = -r` is symmetrised by the substitution
/// `w = μ' δ`, giving `(diag(1/μ') - dt L) w = -r`, which is SPD because `μ' > 0`.
pub fn nonlinear_cn_step(
    rho_n: &Field,
    law: &DiffusionLaw,
    dt: f64,
    cfg: &NonlinearDiffusionConfig,
) -> Result<CnStep> {
    check_inputs(rho_n, law, dt)?;
    cfg.validate()?;
    let grid = *rho_n.grid();
    if matches!(law, DiffusionLaw::None) {
        return Ok(CnStep {
            field: rho_n.clone(),
            predictor: rho_n.clone(),
            newton_iterations: 0,
            linear_iterations: 0,
            residual: 0.0,
            dissipation: 0.0,
            mobility: Vec::new(),
        });
    }
    let pred = semi_implicit_predictor(rho_n, law, dt, cfg)?;
    let half = Field::new(
        grid,
        rho_n
            .values()
            .iter()
            .zip(pred.field.values())
            .map(|(a, b)| 0.5 * (a + b))
            .collect(),
    )?;
    let mobility = face_average_of(&half, |r| law.mobility(r))?;
    let weights: Vec<&[f64]> = mobility.iter().map(|f| f.values()).collect();

    let n = grid.len();
    let rn = rho_n.values();
    let tol = cfg.newton_tol * rho_n.max().max(1.0);
    let mut rho = pred.field.values().to_vec();
    let mut mu = vec![0.0; n];
    let mut dmu = vec![0.0; n];
    let mut work = vec![0.0; n];
    let mut trace = Vec::new();
    let mut linear_iterations = pred.linear_iterations;
    let mut res = residual(&grid, &weights, rn, &rho, dt, &mut mu, &mut work);
    trace.push(res.inf_norm);
    let mut newton_iterations = 0;
    while res.inf_norm > tol {
        if newton_iterations == cfg.newton_max_iter {
            return Err(Error::NonConvergence {
                solver: "nonlinear Crank-Nicolson Newton",
                iterations: newton_iterations,
                residual: res.inf_norm,
                trace,
            });
        }
        newton_iterations += 1;
        potential(rn, &rho, dt, &mut mu, Some(&mut dmu));
        let shift: Vec<f64> = dmu.iter().map(|d| 1.0 / d).collect();
        let op = ShiftedDivGrad::new(&grid, &shift, dt, weights.clone());
        let rhs: Vec<f64> = res.values.iter().map(|r| -r).collect();
        let mut w = vec![0.0; n];
        linear_iterations += op.solve(&rhs, &mut w, cfg.linear_tol, cfg.linear_max_iter)?;
        let delta: Vec<f64> = w.iter().zip(&dmu).map(|(w, d)| w / d).collect();

        let mut theta = 1.0;
        let mut halvings = 0;
        while rho.iter().zip(&delta).any(|(r, d)| r + theta * d <= 0.0) {
            if halvings == cfg.max_halvings {
                return Err(Error::PositivityViolation(format!(
                    "Newton update stays non-positive after {halvings} step reductions"
                )));
            }
            theta *= cfg.shrink;
            halvings += 1;
        }
        for (r, d) in rho.iter_mut().zip(&delta) {
            *r += theta * d;
        }
        res = residual(&grid, &weights, rn, &rho, dt, &mut mu, &mut work);
        trace.push(res.inf_norm);
    }

    let field = Field::new(grid, rho)?;
    field.ensure_positive("nonlinear Crank-Nicolson output")?;
    potential(rn, field.values(), dt, &mut mu, None);
    let grad_mu = gradient_all(&Field::new(grid, mu)?);
    let flux: Vec<FaceField> = mobility
        .iter()
        .zip(&grad_mu)
        .map(|(m, g)| m.mul(g))
        .collect::<Result<_>>()?;
    let dissipation = dt * face_inner_product(&flux, &grad_mu)?;
    Ok(CnStep {
        field,
        predictor: pred.field,
        newton_iterations,
        linear_iterations,
        residual: res.inf_norm,
        dissipation,
        mobility,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::diffusion_energy;
    use crate::grid::laplacian_h;

    fn bump(n0: usize) -> Field {
        let g = Grid::unit(2, n0).unwrap();
        Field::from_fn(g, |x| {
            1.0 + 0.8
                * (2.0 * std::f64::consts::PI * x[0]).sin()
                * (2.0 * std::f64::consts::PI * x[1]).cos()
        })
        .unwrap()
    }

    #[test]
    fn constant_density_is_a_fixed_point() {
        let g = Grid::unit(2, 6).unwrap();
        let f = Field::constant(g, 0.4).unwrap();
        let law = DiffusionLaw::Power {
            d0: 0.2,
            exponent: 2.0,
        };
        let cfg = NonlinearDiffusionConfig::default();
        assert_eq!(
            semi_implicit_predictor(&f, &law, 0.1, &cfg).unwrap().field,
            f
        );
        let step = nonlinear_cn_step(&f, &law, 0.1, &cfg).unwrap();
        assert_eq!(step.field, f);
        assert_eq!(step.newton_iterations, 0);
    }

    #[test]
    fn predictor_reduces_to_backward_euler_for_constant_d() {
        let f = bump(8);
        let (d, dt) = (0.3, 0.02);
        let cfg = NonlinearDiffusionConfig::default();
        let p = semi_implicit_predictor(&f, &DiffusionLaw::Constant { d }, dt, &cfg)
            .unwrap()
            .field;
        // (I - dt D Δ_h) ρ̂ = ρⁿ
        let lap = laplacian_h(&p);
        for k in 0..f.values().len() {
            let lhs = p.values()[k] - dt * d * lap.values()[k];
            assert!((lhs - f.values()[k]).abs() < 1e-11);
        }
    }

    #[test]
    fn cn_step_conserves_mass_and_dissipates() {
        let f = bump(16);
        let law = DiffusionLaw::Power {
            d0: 0.2,
            exponent: 2.0,
        };
        let cfg = NonlinearDiffusionConfig::default();
        let dt = 0.01;
        let step = nonlinear_cn_step(&f, &law, dt, &cfg).unwrap();
        assert!(step.field.min() > 0.0);
        let m0 = f.integral();
        assert!((step.field.integral() - m0).abs() <= 1e-11 * m0);
        let e0 = diffusion_energy(&f, 0.0).unwrap();
        let e1 = diffusion_energy(&step.field, 0.0).unwrap();
        assert!(e1 - e0 <= -step.dissipation + 1e-12 * e0.abs().max(1.0));
        assert!(step.dissipation > 0.0);
    }

    /// Fine RK4 integration of the semi-discrete flow `ρ' = ∇_h·(𝒜_h(ℳ(ρ)) ∇_h ln ρ)`.
    fn semi_discrete_reference(rho: &Field, law: &DiffusionLaw, t: f64, steps: usize) -> Field {
        let rhs = |f: &Field| -> Field {
            let faces: Vec<FaceField> = (0..f.grid().dim())
                .map(|a| average_to_faces(&f.map(|r| law.mobility(r)).unwrap(), a).unwrap())
                .collect();
            crate::grid::weighted_divgrad(&faces, &f.map(f64::ln).unwrap()).unwrap()
        };
        let axpy = |f: &Field, a: f64, g: &Field| -> Field {
            let v = f
                .values()
                .iter()
                .zip(g.values())
                .map(|(x, y)| x + a * y)
                .collect();
            Field::new(*f.grid(), v).unwrap()
        };
        let h = t / steps as f64;
        let mut y = rho.clone();
        for _ in 0..steps {
            let k1 = rhs(&y);
            let k2 = rhs(&axpy(&y, 0.5 * h, &k1));
            let k3 = rhs(&axpy(&y, 0.5 * h, &k2));
            let k4 = rhs(&axpy(&y, h, &k3));
            let v = (0..y.values().len())
                .map(|k| {
                    y.values()[k]
                        + h / 6.0
                            * (k1.values()[k]
                                + 2.0 * k2.values()[k]
                                + 2.0 * k3.values()[k]
                                + k4.values()[k])
                })
                .collect();
            y = Field::new(*y.grid(), v).unwrap();
        }
        y
    }

    #[test]
    fn one_step_error_is_third_order() {
        let g = Grid::unit(1, 16).unwrap();
        let f =
            Field::from_fn(g, |x| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * x[0]).cos()).unwrap();
        let cfg = NonlinearDiffusionConfig {
            newton_tol: 1e-15,
            ..Default::default()
        };
        for law in [
            DiffusionLaw::Constant { d: 0.05 },
            DiffusionLaw::Power {
                d0: 0.05,
                exponent: 2.0,
            },
        ] {
            let err = |dt: f64| {
                let cn = nonlinear_cn_step(&f, &law, dt, &cfg).unwrap();
                let reference = semi_discrete_reference(&f, &law, dt, 400);
                cn.field.max_abs_diff(&reference).unwrap()
            };
            let (e1, e2) = (err(0.01), err(0.005));
            let order = (e1 / e2).log2();
            assert!(order > 2.7, "{law:?}: local order {order} ({e1:e}, {e2:e})");
        }
    }

    #[test]
    fn rejects_non_positive_input() {
        let g = Grid::unit(1, 4).unwrap();
        let f = Field::new(g, vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        let law = DiffusionLaw::Power {
            d0: 1.0,
            exponent: 2.0,
        };
        assert!(matches!(
            nonlinear_cn_step(&f, &law, 0.1, &Default::default()),
            Err(Error::PositivityViolation(_))
        ));
    }
}
