mod common;

use proptest::prelude::*;

use envara_core::diffusion::{
    diffusion_energy, etd_step, nonlinear_cn_step, DiffusionLaw, EtdOperator,
    NonlinearDiffusionConfig,
};
use envara_core::grid::{Field, Grid};

fn positive_field(dim: usize, n0: usize) -> impl Strategy<Value = Field> {
    let grid = Grid::unit(dim, n0).unwrap();
    prop::collection::vec(0.05f64..4.0, grid.len()).prop_map(move |v| Field::new(grid, v).unwrap())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn etd_matches_dense_exponential_1d(rho in positive_field(1, 8), d in 0.01f64..2.0, dt in 0.001f64..0.2) {
        let g = *rho.grid();
        let a: Vec<Vec<f64>> = common::dense_laplacian(&g)
            .into_iter()
            .map(|r| r.into_iter().map(|x| x * d * dt).collect())
            .collect();
        let oracle = common::matvec(&common::expm(&a), rho.values());
        let got = etd_step(&rho, d, dt).unwrap();
        for (x, y) in got.values().iter().zip(&oracle) {
            prop_assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0), "{x} vs {y}");
        }
        prop_assert!(rel(got.integral(), rho.integral()) <= 1e-13);
    }

    #[test]
    fn etd_matches_dense_exponential_2d(rho in positive_field(2, 4), d in 0.01f64..1.0, dt in 0.001f64..0.1) {
        let g = *rho.grid();
        let a: Vec<Vec<f64>> = common::dense_laplacian(&g)
            .into_iter()
            .map(|r| r.into_iter().map(|x| x * d * dt).collect())
            .collect();
        let oracle = common::matvec(&common::expm(&a), rho.values());
        let got = etd_step(&rho, d, dt).unwrap();
        for (x, y) in got.values().iter().zip(&oracle) {
            prop_assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn etd_is_a_semigroup(rho in positive_field(2, 6), d in 0.01f64..1.0, dt in 0.001f64..0.1) {
        let once = etd_step(&rho, d, 2.0 * dt).unwrap();
        let half = EtdOperator::new(*rho.grid(), d, dt).unwrap();
        let twice = half.apply(&half.apply(&rho).unwrap()).unwrap();
        prop_assert!(once.max_abs_diff(&twice).unwrap() <= 1e-13 * rho.max());
        prop_assert!(once.min() > 0.0);
    }

    #[test]
    fn cn_conserves_mass_and_dissipates(
        rho in positive_field(2, 6),
        d0 in 0.01f64..0.5,
        m in 1.0f64..3.0,
        dt in 0.001f64..0.05,
    ) {
        let law = DiffusionLaw::Power { d0, exponent: m };
        let step = nonlinear_cn_step(&rho, &law, dt, &NonlinearDiffusionConfig::default()).unwrap();
        prop_assert!(step.field.min() > 0.0);
        prop_assert!(rel(step.field.integral(), rho.integral()) <= 1e-11);
        let e0 = diffusion_energy(&rho, 0.0).unwrap();
        let e1 = diffusion_energy(&step.field, 0.0).unwrap();
        prop_assert!(step.dissipation >= 0.0);
        prop_assert!(e1 - e0 <= -step.dissipation + 1e-9 * e0.abs().max(1.0), "{e0} -> {e1}, D = {}", step.dissipation);
    }
}

#[test]
fn cn_handles_near_vacuum_data() {
    let g = Grid::unit(1, 16).unwrap();
    let rho = Field::from_fn(g, |x| if x[0] < 0.5 { 1e-6 } else { 2.0 }).unwrap();
    let law = DiffusionLaw::Power {
        d0: 1.0,
        exponent: 2.0,
    };
    let step = nonlinear_cn_step(&rho, &law, 0.01, &NonlinearDiffusionConfig::default()).unwrap();
    assert!(step.field.min() > 0.0);
    assert!(rel(step.field.integral(), rho.integral()) <= 1e-11);
}
