#![allow(dead_code)]

pub mod literal;

use loglab_core::{LogitMatrix, Params, ParityTree};
use rand::Rng;

/// Params with every logit uniform in `[-scale, scale]`.
pub fn random_params<R: Rng>(tree: &ParityTree, scale: f64, rng: &mut R) -> Params {
    let mut p = Params::zeros(tree, 16);
    for w in &mut p.weights {
        for x in w.as_mut_slice() {
            *x = rng.random_range(-scale..=scale);
        }
    }
    p
}

pub fn matrices_eq(a: &[LogitMatrix<f64>], b: &[LogitMatrix<f64>]) -> bool {
    a.iter().zip(b).all(|(x, y)| x.as_slice() == y.as_slice())
}
