use gcr_core::correspondence::EmbeddingSet;
use gcr_core::fusion::{fusion_forward, init_params, FusionConfig};
use gcr_core::rng::{substream, Domain};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn embeddings(seed: u64, n: usize, width: usize) -> EmbeddingSet {
    let mut rng = substream(seed, Domain::Perturbation, 1);
    EmbeddingSet {
        rows: DMatrix::from_fn(n, width, |_, _| rng.random_range(-1.0..1.0)),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn weights_are_a_positive_distribution(seed in any::<u64>(), n in 1usize..200) {
        let cfg = FusionConfig::default();
        let p = init_params(&cfg, seed).unwrap();
        let w = fusion_forward(&p, &embeddings(seed, n, cfg.input_dim)).unwrap();
        prop_assert_eq!(w.len(), n);
        prop_assert!(w.iter().all(|v| *v > 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn permuting_rows_permutes_weights(seed in any::<u64>(), n in 2usize..60, shift in 1usize..59) {
        let cfg = FusionConfig::default();
        let p = init_params(&cfg, seed ^ 0xabc).unwrap();
        let e = embeddings(seed, n, cfg.input_dim);
        // Reverse, then rotate: a permutation with no fixed structure.
        let perm: Vec<usize> = (0..n).rev().cycle().skip(shift % n).take(n).collect();
        let permuted = EmbeddingSet { rows: DMatrix::from_fn(n, cfg.input_dim, |r, c| e.rows[(perm[r], c)]) };
        let w = fusion_forward(&p, &e).unwrap();
        let wp = fusion_forward(&p, &permuted).unwrap();
        for (r, i) in perm.iter().enumerate() {
            prop_assert!((wp[r] - w[*i]).abs() < 1e-9);
        }
    }
}

#[test]
fn identical_rows_get_uniform_weights() {
    let cfg = FusionConfig::default();
    let p = init_params(&cfg, 3).unwrap();
    let row = embeddings(4, 1, cfg.input_dim);
    let e = EmbeddingSet {
        rows: DMatrix::from_fn(7, cfg.input_dim, |_, c| row.rows[(0, c)]),
    };
    let w = fusion_forward(&p, &e).unwrap();
    assert!(w.iter().all(|v| (v - 1.0 / 7.0).abs() < 1e-12));
}

#[test]
fn wrong_width_is_rejected() {
    let cfg = FusionConfig::default();
    let p = init_params(&cfg, 0).unwrap();
    assert!(fusion_forward(&p, &embeddings(0, 3, cfg.input_dim + 1)).is_err());
}
