//! The parity tree over a secret index set.
//!
//! Positions are 0-based throughout the crate: position `p` is sequence
//! index `p + 1` in the usual 1-based presentation. Inputs occupy `0..n`,
//! internal nodes occupy `n..T` ordered bottom-to-top, left-to-right, and
//! the root is position `T - 1`. Levels stay 1-based (`1` = input bits,
//! `L + 1` = root) so that `level_bound(l)` is the count `n_l`.

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Set of input-bit indices whose product a position's value equals.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct LeafSet(Vec<u64>);

impl LeafSet {
    pub fn empty(n: usize) -> Self {
        LeafSet(vec![0; n.div_ceil(64)])
    }

    pub fn singleton(n: usize, bit: usize) -> Self {
        let mut s = Self::empty(n);
        s.0[bit / 64] |= 1 << (bit % 64);
        s
    }

    pub fn xor_assign(&mut self, other: &LeafSet) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a ^= *b;
        }
    }

    pub fn xor(&self, other: &LeafSet) -> LeafSet {
        let mut out = self.clone();
        out.xor_assign(other);
        out
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|w| *w == 0)
    }

    pub fn len(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn contains(&self, bit: usize) -> bool {
        self.0[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn is_disjoint(&self, other: &LeafSet) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a & b == 0)
    }

    /// Member bits in ascending order.
    pub fn bits(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (w, word) in self.0.iter().enumerate() {
            let mut x = *word;
            while x != 0 {
                let b = x.trailing_zeros() as usize;
                out.push(w * 64 + b);
                x &= x - 1;
            }
        }
        out
    }
}

/// Complete binary tree decomposing a k-parity into two-parities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParityTree {
    n: usize,
    k: usize,
    depth: usize,
    secret: Vec<usize>,
    parent: Vec<Option<usize>>,
    children: Vec<Option<(usize, usize)>>,
    height: Vec<usize>,
    level_bound: Vec<usize>,
    leafset: Vec<LeafSet>,
}

/// Serializable summary of a tree (secret indices 1-based, sorted).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeManifest {
    pub n: usize,
    pub k: usize,
    #[serde(rename = "L")]
    pub depth: usize,
    pub secret: Vec<usize>,
}

impl ParityTree {
    /// Builds the tree for `secret` given as 0-based input indices.
    ///
    /// Sorted secret bits pair consecutively into level-2 nodes and every
    /// higher level pairs consecutive nodes of the level below.
    pub fn new(n: usize, k: usize, secret: &[usize]) -> Result<Self> {
        if k < 2 || !k.is_power_of_two() {
            return Err(Error::KNotPowerOfTwo(k));
        }
        if k > n {
            return Err(Error::KExceedsN { n, k });
        }
        if secret.len() != k {
            return Err(Error::SecretSize { got: secret.len(), k });
        }
        let mut sorted = secret.to_vec();
        sorted.sort_unstable();
        for w in sorted.windows(2) {
            if w[0] == w[1] {
                return Err(Error::DuplicateSecret(w[0] + 1));
            }
        }
        if let Some(&bad) = sorted.iter().find(|&&j| j >= n) {
            return Err(Error::SecretOutOfRange { index: bad + 1, n });
        }

        let depth = k.trailing_zeros() as usize;
        let total = n + k - 1;
        // n_l = n + k (1 - 2^{1-l}) for l = 1..=L+1
        let level_bound: Vec<usize> = (1..=depth + 1).map(|l| n + k - (k >> (l - 1))).collect();

        let mut parent = vec![None; total];
        let mut children = vec![None; total];
        let mut height = vec![1; total];
        let mut leafset: Vec<LeafSet> = (0..n).map(|j| LeafSet::singleton(n, j)).collect();
        leafset.resize(total, LeafSet::empty(n));

        let mut below = sorted.clone();
        let mut next = n;
        for level in 2..=depth + 1 {
            let mut current = Vec::with_capacity(below.len() / 2);
            for pair in below.chunks_exact(2) {
                let (a, b) = (pair[0], pair[1]);
                parent[a] = Some(next);
                parent[b] = Some(next);
                children[next] = Some((a, b));
                height[next] = level;
                leafset[next] = leafset[a].xor(&leafset[b]);
                current.push(next);
                next += 1;
            }
            below = current;
        }
        debug_assert_eq!(next, total);

        Ok(Self {
            n,
            k,
            depth,
            secret: sorted,
            parent,
            children,
            height,
            level_bound,
            leafset,
        })
    }

    /// Builds the tree from 1-based secret indices.
    pub fn from_one_based(n: usize, k: usize, secret: &[usize]) -> Result<Self> {
        if let Some(&z) = secret.iter().find(|&&j| j == 0) {
            return Err(Error::SecretOutOfRange { index: z, n });
        }
        let zero: Vec<usize> = secret.iter().map(|j| j - 1).collect();
        Self::new(n, k, &zero)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of layers / curriculum stages, `L = log2 k`.
    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Sequence length `T = n + k - 1`.
    pub fn len(&self) -> usize {
        self.n + self.k - 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn root(&self) -> usize {
        self.len() - 1
    }

    /// Sorted 0-based secret indices.
    pub fn secret(&self) -> &[usize] {
        &self.secret
    }

    pub fn secret_one_based(&self) -> Vec<usize> {
        self.secret.iter().map(|j| j + 1).collect()
    }

    pub fn parent(&self, pos: usize) -> Option<usize> {
        self.parent[pos]
    }

    pub fn children(&self, pos: usize) -> Option<(usize, usize)> {
        self.children[pos]
    }

    /// Tree level of a position, in `1..=L+1`.
    pub fn height(&self, pos: usize) -> usize {
        self.height[pos]
    }

    /// `n_l` for `l` in `1..=L+1`: one past the last 0-based position of level `l`.
    pub fn level_bound(&self, level: usize) -> usize {
        self.level_bound[level - 1]
    }

    /// `(n_1, ..., n_{L+1})`.
    pub fn level_bounds(&self) -> &[usize] {
        &self.level_bound
    }

    /// Positions at `level` (1 = inputs).
    pub fn level_range(&self, level: usize) -> Range<usize> {
        if level == 1 {
            0..self.n
        } else {
            self.level_bound(level - 1)..self.level_bound(level)
        }
    }

    pub fn leafset(&self, pos: usize) -> &LeafSet {
        &self.leafset[pos]
    }

    pub fn manifest(&self) -> TreeManifest {
        TreeManifest {
            n: self.n,
            k: self.k,
            depth: self.depth,
            secret: self.secret_one_based(),
        }
    }

    pub fn from_manifest(m: &TreeManifest) -> Result<Self> {
        let tree = Self::from_one_based(m.n, m.k, &m.secret)?;
        if tree.depth != m.depth {
            return Err(Error::config(
                "L",
                format!("L = {} but log2(k) = {}", m.depth, tree.depth),
            ));
        }
        Ok(tree)
    }

    /// True iff the product of the positions' values is identically +1.
    pub fn is_trivial_tuple(&self, positions: &[usize]) -> bool {
        let mut acc = LeafSet::empty(self.n);
        for &p in positions {
            acc.xor_assign(&self.leafset[p]);
        }
        acc.is_empty()
    }

    /// Exact number of 4-tuples over positions `0..m` with trivial product.
    ///
    /// Counts ordered pairs by the symmetric difference of their leafsets;
    /// a 4-tuple is trivial iff its two halves share the same difference, so
    /// the answer is the sum of squared pair counts.
    pub fn count_trivial_4tuples(&self, m: usize) -> Result<u64> {
        if m < self.n || m >= self.len() {
            return Err(Error::PositionOutOfRange {
                position: m,
                len: self.len(),
            });
        }
        let mut pairs: HashMap<LeafSet, u64> = HashMap::new();
        for a in 0..m {
            for b in 0..m {
                *pairs.entry(self.leafset[a].xor(&self.leafset[b])).or_insert(0) += 1;
            }
        }
        Ok(pairs.values().map(|c| c * c).sum())
    }
}
