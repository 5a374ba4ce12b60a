//! Randomized property tests over the discrete function spaces, the jump
//! sampler, and the Taylor-remainder solver.

use proptest::prelude::*;

use levyheat::grid::{DirichletLaplacian, Field, IntervalGrid};
use levyheat::levy::{Atom, LevyMeasureSpec};
use levyheat::oracles::taylor_remainder_theta;

fn arb_field(max_n: usize) -> impl Strategy<Value = Field> {
    (2usize..max_n, 0.1f64..5.0).prop_flat_map(|(n, length)| {
        prop::collection::vec(-10.0f64..10.0, n).prop_map(move |vals| {
            Field::new(IntervalGrid::new(length, n).unwrap(), vals).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// Discrete Poincare inequality: lam_1^disc ||u||^2 <= ||grad u||^2.
    #[test]
    fn discrete_poincare(u in arb_field(40)) {
        let lam = u.grid().first_eigenvalue_discrete();
        prop_assert!(lam * u.norm_l2_sq() <= u.seminorm_h1_sq() * (1.0 + 1e-12));
    }

    /// The Laplacian quadratic form equals the negative gradient energy.
    #[test]
    fn laplacian_quadratic_form_is_gradient_energy(u in arb_field(40)) {
        let lap = DirichletLaplacian::new(u.grid());
        let q = lap.apply(&u).inner_l2(&u);
        let g = u.seminorm_h1_sq();
        prop_assert!((q + g).abs() <= 1e-9 * (1.0 + g));
    }

    /// The implicit solve inverts `I - c Lap` exactly (up to roundoff).
    #[test]
    fn implicit_solve_roundtrip(u in arb_field(40), c in 0.0f64..2.0) {
        let lap = DirichletLaplacian::new(u.grid());
        let w = lap.solve_implicit(c, &u);
        let mut residual = w.clone();
        residual.axpy(-c, &lap.apply(&w));
        for (r, v) in residual.values().iter().zip(u.values()) {
            prop_assert!((r - v).abs() <= 1e-7 * (1.0 + v.abs()));
        }
    }

    /// Jump times are strictly inside the horizon and sorted; marks lie in
    /// the support of the measure.
    #[test]
    fn jump_sampler_invariants(
        seed in any::<u64>(),
        rate in 0.1f64..20.0,
        horizon in 0.1f64..5.0,
    ) {
        use rand::SeedableRng;
        let levy = LevyMeasureSpec::FiniteAtoms {
            atoms: vec![Atom { mark: 0.7, rate }],
        };
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let jumps = levy.sample_jumps(horizon, &mut rng).unwrap();
        let mut prev = 0.0;
        for j in &jumps {
            prop_assert!(j.time > prev && j.time < horizon);
            prop_assert_eq!(j.mark, 0.7);
            prev = j.time;
        }
    }

    /// The Taylor-remainder root lies in [0, 1] and satisfies its residual
    /// bound for any data.
    #[test]
    fn taylor_theta_in_unit_interval(
        u in prop::collection::vec(-3.0f64..3.0, 1..6),
        eta in prop::collection::vec(-2.0f64..2.0, 1..6),
        m in 1.1f64..6.0,
        w in 0.05f64..2.0,
    ) {
        let n = u.len().min(eta.len());
        let theta = taylor_remainder_theta(&u[..n], &eta[..n], w, m).unwrap();
        prop_assert!((0.0..=1.0).contains(&theta));
    }

    /// Truncated-stable mark samples respect the truncation bounds.
    #[test]
    fn truncated_stable_marks_in_support(seed in any::<u64>()) {
        use rand::SeedableRng;
        let levy = LevyMeasureSpec::TruncatedStable {
            c: 1.0,
            alpha_stab: 0.5,
            r_min: 0.1,
            r_max: 1.0,
        };
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        for j in levy.sample_jumps(3.0, &mut rng).unwrap() {
            let a = j.mark.abs();
            prop_assert!((0.1..=1.0).contains(&a));
        }
    }
}
