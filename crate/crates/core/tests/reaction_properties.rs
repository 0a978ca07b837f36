mod common;

use proptest::prelude::*;

use envara_core::reaction::{
    admissible_interval, phi, reaction_step, step_residual, PointState, ReactionSolveConfig,
    ReactionSpec,
};

fn spec_strategy() -> impl Strategy<Value = ReactionSpec> {
    (
        prop::collection::vec((0u8..3, 0u8..3), 2..=3),
        0.05f64..5.0,
        0.05f64..5.0,
    )
        .prop_filter_map("non-trivial stoichiometry", |(stoich, kp, km)| {
            let alpha: Vec<f64> = stoich.iter().map(|p| f64::from(p.0)).collect();
            let beta: Vec<f64> = stoich.iter().map(|p| f64::from(p.1)).collect();
            if alpha == beta {
                return None;
            }
            ReactionSpec::mass_action(alpha, beta, kp, km).ok()
        })
}

fn state_strategy() -> impl Strategy<Value = (ReactionSpec, Vec<f64>, f64)> {
    spec_strategy().prop_flat_map(|spec| {
        let n = spec.n_species();
        (
            Just(spec),
            prop::collection::vec(0.05f64..3.0, n),
            0.001f64..0.5,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn step_is_positive_dissipative_and_solved((spec, c0, dt) in state_strategy()) {
        let cfg = ReactionSolveConfig::default();
        let st = PointState::new(&c0, &spec).unwrap();
        let step = reaction_step(&st, &spec, dt, &cfg).unwrap();
        let c1 = st.concentrations(&spec, step.r);
        prop_assert!(c1.iter().all(|&c| c > 0.0));
        prop_assert!(step.r + step.eta_star * dt > 0.0);
        prop_assert!(step.residual.abs() <= 1e-12);
        let (f0, f1) = (spec.free_energy(&c0).unwrap(), spec.free_energy(&c1).unwrap());
        prop_assert!(f1 <= f0 + 4.0 * f64::EPSILON * f0.abs().max(1.0), "{f0} -> {f1}");
    }

    #[test]
    fn step_matches_bisection_oracle((spec, c0, dt) in state_strategy()) {
        let cfg = ReactionSolveConfig::default();
        let st = PointState::new(&c0, &spec).unwrap();
        let step = reaction_step(&st, &spec, dt, &cfg).unwrap();
        let (lo, hi) = admissible_interval(&st, &spec, step.eta_star * dt);
        let oracle = common::bisect(|r| step_residual(r, &st, &spec, dt, step.eta_star), lo, hi, 1e-14);
        prop_assert!((step.r - oracle).abs() <= 1e-11 * step.r.abs().max(1.0), "{} vs {oracle}", step.r);
    }

    #[test]
    fn phi_matches_raw_quotient(
        (spec, c0, _dt) in state_strategy(),
        a in 0.0f64..1.0,
        b in 0.0f64..1.0,
    ) {
        let cfg = ReactionSolveConfig::default();
        let st = PointState::new(&c0, &spec).unwrap();
        let (lo, hi) = admissible_interval(&st, &spec, f64::INFINITY);
        let hi = hi.min(5.0);
        let pick = |w: f64| lo + (hi - lo) * (0.02 + 0.96 * w);
        let (p, q) = (pick(a), pick(b));
        prop_assume!((p - q).abs() > 1e-3);
        let f = |r: f64| spec.free_energy(&st.concentrations(&spec, r)).unwrap();
        let raw = (f(p) - f(q)) / (p - q);
        let got = phi(p, q, &st, &spec, &cfg).unwrap();
        prop_assert!((got - raw).abs() <= 1e-9 * raw.abs().max(1.0), "{got} vs {raw}");
    }
}

#[test]
fn equilibrium_is_a_fixed_point() {
    let spec = ReactionSpec::mass_action(vec![1.0, 2.0], vec![0.0, 3.0], 1.0, 0.1).unwrap();
    let c0 = [0.1, 1.0];
    assert!(spec.mass_action_rate(&c0).abs() < 1e-15);
    let st = PointState::new(&c0, &spec).unwrap();
    let step = reaction_step(&st, &spec, 0.1, &ReactionSolveConfig::default()).unwrap();
    assert!(step.r.abs() < 1e-14);
}
