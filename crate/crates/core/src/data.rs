//! Input sampling, chain-of-thought expansion and curriculum padding.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{streams, SeedSpec};
use crate::tree::ParityTree;

/// Which positions of a batch are padded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageTag {
    /// Curriculum stage `t`: CoT positions `n..n_t` are zeroed.
    Train(usize),
    /// Every CoT position is zeroed.
    Test,
}

impl StageTag {
    /// First CoT position that keeps its value, i.e. the padded range is `n..this`.
    pub fn padding_end(&self, tree: &ParityTree) -> usize {
        match *self {
            StageTag::Train(t) => tree.level_bound(t),
            StageTag::Test => tree.len(),
        }
    }

    fn validate(&self, tree: &ParityTree) -> Result<()> {
        match *self {
            StageTag::Train(t) if t == 0 || t > tree.depth() => Err(Error::StageOutOfRange {
                stage: t,
                depth: tree.depth(),
            }),
            _ => Ok(()),
        }
    }
}

/// `B` samples over all `T` positions, stored position-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    len: usize,
    size: usize,
    bits: Vec<i8>,
    full_cot: Vec<i8>,
    stage: StageTag,
    seed: Option<SeedSpec>,
}

impl Batch {
    /// Builds a batch from explicit `+-1` input rows.
    pub fn from_inputs(tree: &ParityTree, inputs: &[Vec<i8>], stage: StageTag) -> Result<Self> {
        stage.validate(tree)?;
        if inputs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let rows = inputs
            .iter()
            .map(|row| expand_cot(row, tree))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_rows(tree, &rows, stage, None))
    }

    fn from_rows(tree: &ParityTree, rows: &[Vec<i8>], stage: StageTag, seed: Option<SeedSpec>) -> Self {
        let len = tree.len();
        let size = rows.len();
        let mut full_cot = vec![0i8; len * size];
        for (i, row) in rows.iter().enumerate() {
            for (m, &v) in row.iter().enumerate() {
                full_cot[m * size + i] = v;
            }
        }
        let mut bits = full_cot.clone();
        let pad = tree.n() * size..stage.padding_end(tree) * size;
        bits[pad].fill(0);
        Self {
            len,
            size,
            bits,
            full_cot,
            stage,
            seed,
        }
    }

    /// Same inputs with the padding of another stage.
    pub fn repad(&self, tree: &ParityTree, stage: StageTag) -> Result<Self> {
        stage.validate(tree)?;
        let mut out = self.clone();
        out.bits.copy_from_slice(&self.full_cot);
        let pad = tree.n() * self.size..stage.padding_end(tree) * self.size;
        out.bits[pad].fill(0);
        out.stage = stage;
        Ok(out)
    }

    /// Sequence length `T`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    /// Number of samples `B`.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn stage(&self) -> StageTag {
        self.stage
    }

    pub fn seed(&self) -> Option<SeedSpec> {
        self.seed
    }

    /// Visible values at position `m` across samples.
    pub fn column(&self, m: usize) -> &[i8] {
        &self.bits[m * self.size..(m + 1) * self.size]
    }

    /// Ground-truth values at position `m` across samples.
    pub fn cot_column(&self, m: usize) -> &[i8] {
        &self.full_cot[m * self.size..(m + 1) * self.size]
    }

    pub fn bit(&self, sample: usize, m: usize) -> i8 {
        self.bits[m * self.size + sample]
    }

    pub fn cot(&self, sample: usize, m: usize) -> i8 {
        self.full_cot[m * self.size + sample]
    }

    /// Visible row of one sample.
    pub fn row(&self, sample: usize) -> Vec<i8> {
        (0..self.len).map(|m| self.bit(sample, m)).collect()
    }

    /// Labels: the ground truth at the root.
    pub fn targets(&self) -> &[i8] {
        self.cot_column(self.len - 1)
    }
}

/// Fills in CoT positions via `b_m = b_{c1} * b_{c2}`.
pub fn expand_cot(input: &[i8], tree: &ParityTree) -> Result<Vec<i8>> {
    if input.len() != tree.n() {
        return Err(Error::DimensionMismatch(format!(
            "input has {} bits, tree expects n = {}",
            input.len(),
            tree.n()
        )));
    }
    if let Some((position, &value)) = input.iter().enumerate().find(|(_, &v)| v != 1 && v != -1) {
        return Err(Error::NotABit { position, value });
    }
    let mut out = input.to_vec();
    out.resize(tree.len(), 0);
    for m in tree.n()..tree.len() {
        let (a, b) = tree.children(m).expect("internal node has children");
        out[m] = out[a] * out[b];
    }
    Ok(out)
}

fn random_inputs(n: usize, size: usize, seed: SeedSpec) -> Vec<Vec<i8>> {
    (0..size)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed.rng(i as u64);
            (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect()
        })
        .collect()
}

/// Uniform inputs with given padding; sample `i` uses substream `i` of `seed`.
pub fn sample_with_seed(tree: &ParityTree, size: usize, stage: StageTag, seed: SeedSpec) -> Result<Batch> {
    stage.validate(tree)?;
    if size == 0 {
        return Err(Error::EmptyBatch);
    }
    let rows: Vec<Vec<i8>> = random_inputs(tree.n(), size, seed)
        .iter()
        .map(|row| expand_cot(row, tree))
        .collect::<Result<_>>()?;
    Ok(Batch::from_rows(tree, &rows, stage, Some(seed)))
}

/// Fresh stage-`t` training batch from the run seed.
pub fn sample_batch(seed: u64, size: usize, tree: &ParityTree, stage: usize) -> Result<Batch> {
    sample_with_seed(
        tree,
        size,
        StageTag::Train(stage),
        SeedSpec::new(seed, streams::TRAIN_BATCH + stage as u64),
    )
}

/// Test batch with every CoT position padded.
pub fn make_test_batch(seed: u64, size: usize, tree: &ParityTree) -> Result<Batch> {
    sample_with_seed(tree, size, StageTag::Test, SeedSpec::new(seed, streams::TEST))
}

/// Uniform `k`-subset of `0..n`, sorted.
pub fn sample_secret(seed: u64, n: usize, k: usize) -> Vec<usize> {
    let mut rng = SeedSpec::new(seed, streams::SECRET).rng(0);
    let mut s = sample(&mut rng, n, k.min(n)).into_vec();
    s.sort_unstable();
    s
}

/// Checks that a batch hides exactly the CoT positions its stage requires.
pub fn check_padding(batch: &Batch, tree: &ParityTree) -> Result<()> {
    let end = batch.stage().padding_end(tree);
    let t = match batch.stage() {
        StageTag::Train(t) => t,
        StageTag::Test => tree.depth() + 1,
    };
    for m in 0..tree.len() {
        let visible = m < tree.n() || m >= end;
        let col = batch.column(m);
        let ok = if visible {
            col == batch.cot_column(m)
        } else {
            col.iter().all(|&v| v == 0)
        };
        if !ok {
            return Err(Error::PaddingViolation { stage: t, position: m });
        }
    }
    Ok(())
}
