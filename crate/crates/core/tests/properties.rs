//! Property tests over the numeric primitives.

use ndarray::Array2;
use proptest::prelude::*;

use fcexplain::connectome::{fisher_z, pearson, unvectorize, vectorize, FeatureVector, N_EDGES};
use fcexplain::roar::mask_features;

proptest! {
    #[test]
    fn fisher_z_is_odd(r in -1.0f64..=1.0) {
        let plus = fisher_z(r).unwrap();
        let minus = fisher_z(-r).unwrap();
        prop_assert!((plus + minus).abs() <= 1e-12 * plus.abs().max(1.0));
    }

    #[test]
    fn pearson_is_affine_invariant(
        xs in prop::collection::vec(-10.0f64..10.0, 5..30),
        scale in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
        shift in -10.0f64..10.0,
    ) {
        // y correlates with x but is not identical.
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, &v)| v * 0.5 + (i as f64) * 0.37).collect();
        let base = match pearson(&xs, &ys) {
            Ok(r) => r,
            Err(_) => return Ok(()), // degenerate draw (constant x)
        };
        let transformed: Vec<f64> = xs.iter().map(|&v| scale * v + shift).collect();
        let r = pearson(&transformed, &ys).unwrap();
        prop_assert!((r - scale.signum() * base).abs() < 1e-12, "{r} vs {base}");
        // Symmetry in the arguments.
        let swapped = pearson(&ys, &xs).unwrap();
        prop_assert!((swapped - base).abs() < 1e-12);
    }

    #[test]
    fn vectorize_unvectorize_round_trips(seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let values = ndarray::Array1::from_shape_fn(N_EDGES, |_| rng.random_range(-3.0..3.0));
        let fv = FeatureVector::new(values).unwrap();
        let cm = unvectorize(&fv);
        let back = vectorize(&cm).unwrap();
        prop_assert_eq!(fv.values, back.values);
    }

    #[test]
    fn masking_is_idempotent_and_monotone(
        n_features in 2usize..50,
        t1 in 0.0f64..1.0,
        t2 in 0.0f64..1.0,
        seed in 0u64..100,
    ) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let ranking = fcexplain::attribution::random_ranking(n_features, seed).unwrap();
        let x = Array2::from_shape_fn((4, n_features), |(i, j)| (i * n_features + j) as f64 + 1.0);
        let small = mask_features(&x, &ranking, lo).unwrap();
        let large = mask_features(&x, &ranking, hi).unwrap();
        prop_assert_eq!(&mask_features(&small, &ranking, lo).unwrap(), &small);
        // Columns zeroed at the lower threshold stay zeroed at the higher.
        for j in 0..n_features {
            let zero_small = small.column(j).iter().all(|&v| v == 0.0);
            let zero_large = large.column(j).iter().all(|&v| v == 0.0);
            prop_assert!(!zero_small || zero_large, "column {j} unmasked at larger t");
        }
    }
}
