//! Level-restricted causal mask and masked softmax.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tree::ParityTree;

/// Every query sees a prefix of keys: query `m` attends to `0..key_limit[m]`.
///
/// Inputs attend causally (`j < m`); a CoT position at level `h` attends to
/// all positions of strictly lower levels (`j < n_{h-1}`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    key_limit: Vec<usize>,
}

impl AttentionMask {
    pub fn new(tree: &ParityTree) -> Self {
        let key_limit = (0..tree.len())
            .map(|m| {
                if m < tree.n() {
                    m
                } else {
                    tree.level_bound(tree.height(m) - 1)
                }
            })
            .collect();
        Self { key_limit }
    }

    pub fn len(&self) -> usize {
        self.key_limit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.key_limit.is_empty()
    }

    pub fn key_limit(&self, query: usize) -> usize {
        self.key_limit[query]
    }

    pub fn allowed(&self, key: usize, query: usize) -> bool {
        key < self.key_limit[query]
    }

    /// `allowed[j][m]` as a dense matrix.
    pub fn to_dense(&self) -> Vec<Vec<bool>> {
        let t = self.len();
        (0..t).map(|j| (0..t).map(|m| self.allowed(j, m)).collect()).collect()
    }
}

/// Softmax over the first `limit` entries; the rest of the output is zero.
pub fn masked_softmax<S: Scalar>(logits: &[S], limit: usize) -> Result<Vec<S>> {
    if limit == 0 {
        return Err(Error::EmptyKeySet(0));
    }
    let mut out = vec![S::zero(); logits.len()];
    softmax_prefix(&logits[..limit], &mut out[..limit]);
    Ok(out)
}

/// Stable softmax of `logits` into `out` (same length, nonempty).
pub fn softmax_prefix<S: Scalar>(logits: &[S], out: &mut [S]) {
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let mut total = S::zero();
    for (o, &w) in out.iter_mut().zip(logits) {
        *o = (w - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}
