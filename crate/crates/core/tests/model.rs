mod common;

use common::literal;
use loglab_core::model::readout;
use loglab_core::{forward, sample_batch, AttentionMask, Params, ParityTree};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn max_gap(params: &Params, tree: &ParityTree, stage: usize, seed: u64) -> f64 {
    let batch = sample_batch(seed, 3, tree, stage).unwrap();
    let stream = forward(params, &batch, tree, &AttentionMask::new(tree)).unwrap();
    let lit = literal::run(params, tree, &batch);
    let mut gap: f64 = 0.0;
    for m in 0..tree.len() {
        for block in 0..=tree.depth() {
            for (a, b) in stream.x(m, block).iter().zip(lit.block(m, block + 1)) {
                gap = gap.max((a - b).abs());
            }
        }
    }
    gap
}

#[test]
fn literal_embedding_agrees_on_deeper_trees() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (n, k, secret) in [(8, 4, vec![1, 2, 5, 7]), (9, 8, vec![0, 1, 2, 3, 5, 6, 7, 8])] {
        let tree = ParityTree::new(n, k, &secret).unwrap();
        for draw in 0..5 {
            let params = common::random_params(&tree, 4.0, &mut rng);
            for stage in 1..=tree.depth() {
                let gap = max_gap(&params, &tree, stage, draw);
                assert!(gap <= 1e-12, "n={n} stage {stage}: {gap}");
            }
        }
    }
}

#[test]
fn planted_weights_compute_parity() {
    let tree = ParityTree::new(12, 8, &[0, 1, 3, 4, 6, 8, 9, 11]).unwrap();
    let params = Params::planted(&tree, 16, 50.0);
    let batch = sample_batch(5, 64, &tree, 1).unwrap();
    let stream = forward(&params, &batch, &tree, &AttentionMask::new(&tree)).unwrap();
    for t in 1..=tree.depth() {
        for m in tree.level_range(t + 1) {
            for (i, &v) in readout(&stream, t, m).iter().enumerate() {
                assert!((v - batch.cot(i, m) as f64).abs() < 1e-9);
            }
        }
    }
}
