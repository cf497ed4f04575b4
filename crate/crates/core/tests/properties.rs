use std::f64::consts::PI;

use proptest::prelude::*;

use torusflow::flow::renormalize_mass;
use torusflow::functionals::{energy_e, energy_gap, first_variation_e};
use torusflow::initial::low_pass_noise;
use torusflow::io::Checkpoint;
use torusflow::{Field, TorusGrid};

fn sides() -> impl Strategy<Value = (f64, f64)> {
    (0.5f64..3.0, 0.5f64..3.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn renormalization_restores_mass((a, b) in sides(), seed in 0u64..1000, lam in 0.5f64..40.0, shift in -5.0f64..5.0) {
        let g = TorusGrid::new(a, b, 16, 16).unwrap();
        let mut w = low_pass_noise(&g, seed, 3, 1.0).shifted(shift);
        renormalize_mass(&mut w, lam);
        let mass = w.exp().integral();
        prop_assert!((mass - lam).abs() <= 1e-13 * lam, "mass {mass} vs {lam}");
    }

    #[test]
    fn laplacian_is_symmetric_and_negative((a, b) in sides(), s1 in 0u64..1000, s2 in 1000u64..2000) {
        let g = TorusGrid::new(a, b, 16, 8).unwrap();
        let f = low_pass_noise(&g, s1, 4, 1.0);
        let h = low_pass_noise(&g, s2, 4, 1.0);
        let lhs = f.laplacian().inner(&h);
        let rhs = f.inner(&h.laplacian());
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        prop_assert!(f.laplacian().inner(&f) <= 0.0);
        prop_assert!((-f.laplacian().inner(&f) - f.grad_norm_sq()).abs() <= 1e-10 * (1.0 + f.grad_norm_sq()));
    }

    #[test]
    fn energy_gap_agrees_with_the_plain_difference(seed in 0u64..1000, amp in 0.01f64..1.0) {
        let lam = 8.0 * PI;
        let g = TorusGrid::new(1.0, 1.0, 16, 16).unwrap();
        let w_star = Field::constant(&g, lam.ln());
        let w = &w_star + &low_pass_noise(&g, seed, 3, amp);
        let gap = energy_gap(&w, &w_star, lam);
        let plain = energy_e(&w, lam) - energy_e(&w_star, lam);
        prop_assert!((gap - plain).abs() <= 1e-11 * (1.0 + energy_e(&w, lam).abs()));
    }

    #[test]
    fn first_variation_vanishes_only_at_constants_of_the_right_level(level in -3.0f64..3.0) {
        let lam = 8.0 * PI;
        let g = TorusGrid::new(1.0, 1.0, 8, 8).unwrap();
        let w = Field::constant(&g, level);
        let expected = (lam - level.exp()).abs();
        prop_assert!((first_variation_e(&w, lam).max_abs() - expected).abs() <= 1e-12 * (1.0 + expected));
    }

    #[test]
    fn checkpoint_round_trip_is_exact(seed in 0u64..1000, t in 0.0f64..100.0) {
        let g = TorusGrid::new(1.0, 2.0, 8, 16).unwrap();
        let w = low_pass_noise(&g, seed, 3, 2.0);
        let cp = Checkpoint::from_field(&w, 3.0, t);
        let mut bytes = Vec::new();
        cp.write_to(&mut bytes).unwrap();
        let back = Checkpoint::read_from(&bytes[..]).unwrap();
        let f: Field<f64> = back.field().unwrap();
        prop_assert_eq!(f.values(), w.values());
        prop_assert_eq!(back.t, t);
    }
}
