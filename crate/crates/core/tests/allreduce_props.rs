mod common;

use common::{allreduce_error, bits, sequential_mean};
use mavg::network::ParamVector;
use mavg::parallel::allreduce_average;
use mavg::rng::Rng;
use proptest::prelude::*;

#[test]
fn matches_sequential_mean_on_large_vectors() {
    for m in [1, 2, 3, 4, 7, 8, 16, 32] {
        let err = allreduce_error(m, 100_000, m as u64);
        assert!(err < 1e-12, "m = {m}: {err:e}");
    }
}

proptest! {
    #[test]
    fn close_to_sequential_mean(m in 1usize..40, len in 1usize..50, seed in any::<u64>()) {
        prop_assert!(allreduce_error(m, len, seed) < 1e-12);
    }

    #[test]
    fn identical_contributions_pass_through(m in 1usize..40, seed in any::<u64>()) {
        let v = ParamVector(Rng::new(seed).gaussian_vec(17, 0.0, 3.0));
        let out = allreduce_average(&vec![v.clone(); m], m).unwrap();
        prop_assert_eq!(bits(out.as_slice()), bits(v.as_slice()));
    }

    #[test]
    fn result_is_within_contribution_range(m in 2usize..20, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let vs: Vec<ParamVector> = (0..m).map(|_| ParamVector(rng.gaussian_vec(8, 0.0, 1.0))).collect();
        let out = allreduce_average(&vs, m).unwrap();
        for i in 0..8 {
            let lo = vs.iter().map(|v| v.0[i]).fold(f64::INFINITY, f64::min);
            let hi = vs.iter().map(|v| v.0[i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(out.0[i] >= lo - 1e-12 && out.0[i] <= hi + 1e-12);
        }
    }

    #[test]
    fn power_of_two_pairs_match_sequential_exactly(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let vs: Vec<ParamVector> = (0..2).map(|_| ParamVector(rng.gaussian_vec(8, 0.0, 1.0))).collect();
        let out = allreduce_average(&vs, 2).unwrap();
        prop_assert_eq!(bits(out.as_slice()), bits(&sequential_mean(&vs)));
    }
}
