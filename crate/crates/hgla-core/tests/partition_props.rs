//! Property tests for spatial partitioning.

use hgla_core::{aggregate, make_partition, partition, random_latent};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// aggregate ∘ partition is the bitwise identity for every valid shape
    /// and partition count.
    #[test]
    fn aggregate_partition_round_trip(
        b in 1usize..3,
        t in 1usize..4,
        h in 1usize..17,
        w in 1usize..17,
        d in 1usize..5,
        p_pick in 0usize..16,
        seed in any::<u64>(),
    ) {
        let p = 1 + p_pick % h.min(w);
        let z = random_latent([b, t, h, w, d], seed).unwrap();
        let spec = make_partition(h, w, p).unwrap();
        let windows = partition(&z, &spec).unwrap();
        prop_assert_eq!(windows.len(), p * p);
        let back = aggregate(&windows, &spec).unwrap();
        prop_assert_eq!(back.data(), z.data());
    }

    /// Window extents differ by at most one per axis and tile the axis.
    #[test]
    fn window_extents_near_equal(h in 1usize..64, w in 1usize..64, p_pick in 0usize..32) {
        let p = 1 + p_pick % h.min(w);
        let spec = make_partition(h, w, p).unwrap();
        for (bounds, extent) in [(spec.row_bounds(), h), (spec.col_bounds(), w)] {
            let sizes: Vec<usize> = bounds.windows(2).map(|b| b[1] - b[0]).collect();
            let min = *sizes.iter().min().unwrap();
            let max = *sizes.iter().max().unwrap();
            prop_assert!(max - min <= 1);
            prop_assert_eq!(sizes.iter().sum::<usize>(), extent);
        }
    }

    /// For exact-division sizes, interior boundaries of a P-partition and a
    /// (P+1)-partition never coincide (gcd(P, P+1) = 1).
    #[test]
    fn adjacent_partition_boundaries_disjoint(p in 2usize..5, m in 1usize..7) {
        let h = m * p * (p + 1);
        let a = make_partition(h, h, p).unwrap();
        let b = make_partition(h, h, p + 1).unwrap();
        let interior_a = &a.row_bounds()[1..p];
        let interior_b = &b.row_bounds()[1..p + 1];
        for x in interior_a {
            prop_assert!(!interior_b.contains(x), "shared boundary {x} for P = {p}, H = {h}");
        }
    }
}
