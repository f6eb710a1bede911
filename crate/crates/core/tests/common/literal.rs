//! Dense reference transformer: `d = T + B(L+1)` embedding, full key-query
//! block, identity values, gated connections and block-shift outputs.
//! Deliberately slow and independent of the block recursion.

#![allow(clippy::needless_range_loop, clippy::int_plus_one)]

use loglab_core::{Batch, Params, ParityTree};

pub struct Literal {
    t: usize,
    b: usize,
    /// `x[row][position]`, `d` rows.
    pub x: Vec<Vec<f64>>,
}

impl Literal {
    fn row(&self, block: usize, sample: usize) -> usize {
        self.t + (block - 1) * self.b + sample
    }

    /// Block `[block]` (1-based) of position `m`.
    pub fn block(&self, m: usize, block: usize) -> Vec<f64> {
        (0..self.b).map(|i| self.x[self.row(block, i)][m]).collect()
    }
}

fn level_of(tree: &ParityTree, m: usize) -> usize {
    // 1-based level from the bounds alone.
    tree.level_bounds().iter().position(|&nl| m < nl).unwrap() + 1
}

fn allowed(tree: &ParityTree, j: usize, m: usize) -> bool {
    let (j1, m1) = (j + 1, m + 1);
    let n = tree.n();
    if m1 <= n {
        j1 < m1
    } else {
        let h = level_of(tree, m);
        j1 <= tree.level_bound(h - 1)
    }
}

fn gate(tree: &ParityTree, layer: usize, m: usize) -> f64 {
    let m1 = m + 1;
    if tree.level_bound(layer) + 1 <= m1 && m1 <= tree.level_bound(layer + 1) {
        1.0
    } else {
        0.0
    }
}

pub fn run(params: &Params, tree: &ParityTree, batch: &Batch) -> Literal {
    let t = tree.len();
    let b = batch.size();
    let depth = tree.depth();
    let d = t + b * (depth + 1);
    let phi = |z: f64| -(std::f64::consts::PI * z).cos();

    let mut x = vec![vec![0.0; t]; d];
    for j in 0..t {
        x[j][j] = 1.0;
        for i in 0..b {
            x[t + i][j] = batch.bit(i, j) as f64;
        }
    }
    let mut lit = Literal { t, b, x };

    for layer in 1..=depth {
        let w = params.layer(layer);
        // scores[j][m] = x_j^T W_KQ x_m, with W_KQ zero outside the top-left T x T block
        let mut scores = vec![vec![0.0; t]; t];
        for j in 0..t {
            for m in 0..t {
                let mut s = 0.0;
                for r in 0..t {
                    for c in 0..t {
                        s += lit.x[r][j] * w.get(r, c) * lit.x[c][m];
                    }
                }
                scores[j][m] = s;
            }
        }
        let mut attn_w = vec![vec![0.0; t]; t];
        for m in 0..t {
            let keys: Vec<usize> = (0..t).filter(|&j| allowed(tree, j, m)).collect();
            if keys.is_empty() {
                continue;
            }
            let top = keys.iter().map(|&j| scores[j][m]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = keys.iter().map(|&j| (scores[j][m] - top).exp()).sum();
            for &j in &keys {
                attn_w[j][m] = (scores[j][m] - top).exp() / z;
            }
        }
        // Attn = X S, then phi, then the gated mix with X
        let mut gc = vec![vec![0.0; t]; d];
        for r in 0..d {
            for m in 0..t {
                let a: f64 = (0..t).map(|j| lit.x[r][j] * attn_w[j][m]).sum();
                let g = gate(tree, layer, m);
                gc[r][m] = g * phi(a) + (1.0 - g) * lit.x[r][m];
            }
        }
        // X += W_O GC, W_O moving block [layer] to block [layer + 1]
        for i in 0..b {
            let from = lit.row(layer, i);
            let to = lit.row(layer + 1, i);
            for m in 0..t {
                lit.x[to][m] += gc[from][m];
            }
        }
    }
    lit
}
