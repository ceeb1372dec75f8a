mod common;

use common::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn gram_matrices_are_symmetric_psd(kernel in kernel_strategy(2), x in points_strategy(2, 1, 25)) {
        kernel_psd(&kernel, &x)?;
    }

    #[test]
    fn extra_data_never_raises_variance(
        kernel in kernel_strategy(2),
        x in points_strategy(2, 1, 15),
        extra in prop::collection::vec(-2.0f64..2.0, 2),
        queries in points_strategy(2, 1, 10),
    ) {
        variance_monotone(&kernel, &x, &extra, &queries)?;
    }

    #[test]
    fn membership_shrinks_with_uncertainty(
        x in prop::collection::vec(-1.5f64..1.5, 2),
        s in (0.0f64..0.5, 0.0f64..0.5),
        g in (0.0f64..0.5, 0.0f64..0.5),
        beta in 0.5f64..4.0,
    ) {
        pcis_sigma_monotone(&x, [s.0, s.1], [g.0, g.1], beta)?;
    }

    #[test]
    fn filter_is_transparent_when_nominal_is_safe(p in (1usize..4).prop_flat_map(qp_strategy)) {
        filter_transparent(&p)?;
    }

    #[test]
    fn qp_beats_every_probe(
        p in (1usize..4).prop_flat_map(qp_strategy),
        probes in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 3), 50),
    ) {
        qp_optimal(&p, &probes)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn same_seed_replays_identically(seed in any::<u64>()) {
        deterministic_replay(seed)?;
    }
}
