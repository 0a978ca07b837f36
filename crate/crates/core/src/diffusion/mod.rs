//! Diffusion-stage steppers for `∂_t ρ = ∇·(D(ρ) ∇ρ)` on a periodic grid.
//!
//! Constant coefficients use [`etd_step`], which is exact in time. Concentration-dependent
//! coefficients use [`nonlinear_cn_step`], a Crank–Nicolson discretisation of the
//! gradient-flow form `∂_t ρ = ∇·(ℳ(ρ) ∇μ)` with `ℳ = D(ρ) ρ` and `μ = ln ρ + const`.
//! Both keep `ρ > 0`, conserve `Σ ρ` and do not increase `⟨ρ ln ρ + C ρ, 1⟩`.

mod etd;
mod nonlinear;
pub(crate) mod pcg;

pub use etd::{etd_step, EtdOperator};
pub use nonlinear::{nonlinear_cn_step, semi_implicit_predictor, CnStep, PredictorStep};

use crate::error::{Error, Result};
use crate::grid::{inner_product, Field};

/// Diffusion law of one species.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DiffusionLaw {
    /// The species does not diffuse.
    None,
    /// `∂_t ρ = D Δρ`.
    Constant { d: f64 },
    /// `∂_t ρ = D0 Δ(ρ^m)`, i.e. `D(ρ) = m D0 ρ^(m-1)` and `ℳ(ρ) = m D0 ρ^m`.
    Power { d0: f64, exponent: f64 },
}

impl DiffusionLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DiffusionLaw::None => Ok(()),
            DiffusionLaw::Constant { d } if d > 0.0 && d.is_finite() => Ok(()),
            DiffusionLaw::Power { d0, exponent }
                if d0 > 0.0 && d0.is_finite() && exponent >= 1.0 && exponent.is_finite() =>
            {
                Ok(())
            }
            other => Err(Error::InvalidInput(format!(
                "invalid diffusion law {other:?}: need D > 0 and exponent >= 1"
            ))),
        }
    }

    /// Diffusion coefficient `D(ρ)`.
    pub fn coefficient(&self, rho: f64) -> f64 {
        match *self {
            DiffusionLaw::None => 0.0,
            DiffusionLaw::Constant { d } => d,
            DiffusionLaw::Power { d0, exponent } => {
                if exponent == 1.0 {
                    d0
                } else {
                    exponent * d0 * rho.powf(exponent - 1.0)
                }
            }
        }
    }

    /// Mobility `ℳ(ρ) = D(ρ) ρ`.
    pub fn mobility(&self, rho: f64) -> f64 {
        self.coefficient(rho) * rho
    }
}

/// Solver settings for the nonlinear Crank–Nicolson stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearDiffusionConfig {
    /// Newton stops once `‖ρ - ρⁿ - dt ∇·(ℳ∇μ)‖∞ <= newton_tol · max(1, ‖ρⁿ‖∞)`.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Relative 2-norm residual target of the inner conjugate-gradient solves.
    pub linear_tol: f64,
    pub linear_max_iter: usize,
    /// Step-length factor of the positivity line search.
    pub shrink: f64,
    pub max_halvings: usize,
}

impl Default for NonlinearDiffusionConfig {
    fn default() -> Self {
        Self {
            newton_tol: 1e-10,
            newton_max_iter: 50,
            linear_tol: 1e-12,
            linear_max_iter: 10_000,
            shrink: 0.5,
            max_halvings: 60,
        }
    }
}

impl NonlinearDiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.newton_tol > 0.0
            && self.linear_tol > 0.0
            && self.newton_max_iter > 0
            && self.linear_max_iter > 0
            && self.shrink > 0.0
            && self.shrink < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "invalid nonlinear diffusion config {self:?}"
            )))
        }
    }
}

/// `⟨ρ ln ρ + C ρ, 1⟩`.
pub fn diffusion_energy(rho: &Field, c: f64) -> Result<f64> {
    rho.ensure_positive("density")?;
    let density = rho.map(|r| r * r.ln() + c * r)?;
    inner_product(&density, &Field::constant(*rho.grid(), 1.0)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    #[test]
    fn energy_examples() {
        let g = Grid::unit(2, 4).unwrap();
        let one = Field::constant(g, 1.0).unwrap();
        assert!(diffusion_energy(&one, 0.0).unwrap().abs() < 1e-15);
        let e = std::f64::consts::E;
        let ef = Field::constant(g, e).unwrap();
        assert!((diffusion_energy(&ef, 0.0).unwrap() - e).abs() < 1e-14);
        let f = Field::from_fn(g, |x| 1.0 + x[0] * x[1]).unwrap();
        let shift = diffusion_energy(&f, 2.5).unwrap() - diffusion_energy(&f, 0.0).unwrap();
        assert!((shift - 2.5 * f.integral()).abs() < 1e-14);
        let neg = Field::constant(g, -1.0).unwrap();
        assert!(matches!(
            diffusion_energy(&neg, 0.0),
            Err(Error::PositivityViolation(_))
        ));
    }

    #[test]
    fn law_coefficients() {
        let p = DiffusionLaw::Power {
            d0: 0.2,
            exponent: 2.0,
        };
        assert!((p.coefficient(3.0) - 1.2).abs() < 1e-15);
        assert!((p.mobility(3.0) - 3.6).abs() < 1e-14);
        assert_eq!(DiffusionLaw::Constant { d: 0.1 }.mobility(2.0), 0.2);
        assert!(DiffusionLaw::Power {
            d0: 1.0,
            exponent: 0.5
        }
        .validate()
        .is_err());
        assert!(DiffusionLaw::Constant { d: 0.0 }.validate().is_err());
    }
}
