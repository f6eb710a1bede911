//! The L-layer attention model on the block recursion of the residual stream.
//!
//! Block `0` holds the embedded bits. Layer `l` reads block `l - 1` and
//! writes block `l`: a gated query (one at tree level `l + 1`) stores
//! `phi(sum_j softmax(w_m)_j x[j][l-1])`, every other query copies its block
//! `l - 1` value forward. The stage-`t` prediction at position `m` is
//! `x[m][t]`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::link::{CosineLink, Link};
use crate::mask::{softmax_prefix, AttentionMask};
use crate::matrix::LogitMatrix;
use crate::scalar::Scalar;
use crate::tree::ParityTree;

/// Gate vector of layer `l` (1-based): open exactly at level-`l + 1` positions.
pub fn gates_for_layer(tree: &ParityTree, layer: usize) -> Vec<bool> {
    let active = tree.level_range(layer + 1);
    (0..tree.len()).map(|m| active.contains(&m)).collect()
}

/// Trainable logits plus the fixed structure around them.
#[derive(Debug, Clone)]
pub struct ModelParams<S: Scalar> {
    pub weights: Vec<LogitMatrix<S>>,
    pub gates: Vec<Vec<bool>>,
    pub link: Arc<dyn Link<S>>,
    pub kn: u32,
}

impl<S: Scalar> ModelParams<S> {
    pub fn zeros(tree: &ParityTree, kn: u32) -> Self {
        Self::with_link(tree, kn, Arc::new(CosineLink))
    }

    pub fn with_link(tree: &ParityTree, kn: u32, link: Arc<dyn Link<S>>) -> Self {
        let depth = tree.depth();
        Self {
            weights: vec![LogitMatrix::zeros(tree.len()); depth],
            gates: (1..=depth).map(|l| gates_for_layer(tree, l)).collect(),
            link,
            kn,
        }
    }

    /// Every layer well-trained by construction: `value` at both children of
    /// each gated query, zero elsewhere.
    pub fn planted(tree: &ParityTree, kn: u32, value: S) -> Self {
        let mut p = Self::zeros(tree, kn);
        for layer in 1..=tree.depth() {
            p.plant_layer(tree, layer, value);
        }
        p
    }

    pub fn plant_layer(&mut self, tree: &ParityTree, layer: usize, value: S) {
        let w = &mut self.weights[layer - 1];
        for m in tree.level_range(layer + 1) {
            let (a, b) = tree.children(m).expect("gated query is internal");
            w.set(a, m, value);
            w.set(b, m, value);
        }
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn len(&self) -> usize {
        self.weights.first().map_or(0, |w| w.dim())
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn layer(&self, layer: usize) -> &LogitMatrix<S> {
        &self.weights[layer - 1]
    }

    pub fn gate(&self, layer: usize, m: usize) -> bool {
        self.gates[layer - 1][m]
    }

    /// Zeroes logits the mask excludes.
    pub fn canonicalize(&mut self, mask: &AttentionMask) {
        for w in &mut self.weights {
            for m in 0..mask.len() {
                w.column_mut(m)[mask.key_limit(m)..].fill(S::zero());
            }
        }
    }

    fn check(&self, tree: &ParityTree) -> Result<()> {
        if self.depth() != tree.depth() || self.len() != tree.len() {
            return Err(Error::DimensionMismatch(format!(
                "params have {} layers of size {}, tree needs {} of size {}",
                self.depth(),
                self.len(),
                tree.depth(),
                tree.len()
            )));
        }
        for layer in 1..=self.depth() {
            if self.gates[layer - 1] != gates_for_layer(tree, layer) {
                return Err(Error::DimensionMismatch(format!(
                    "gates of layer {layer} differ from the tree's level-{} positions",
                    layer + 1
                )));
            }
        }
        Ok(())
    }
}

/// Activations `x[m][block][sample]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualStream<S> {
    len: usize,
    blocks: usize,
    size: usize,
    data: Vec<S>,
}

impl<S: Scalar> ResidualStream<S> {
    fn embed(batch: &Batch, blocks: usize) -> Self {
        let (len, size) = (batch.len(), batch.size());
        let mut data = vec![S::zero(); len * blocks * size];
        for m in 0..len {
            let start = m * blocks * size;
            for (x, &b) in data[start..start + size].iter_mut().zip(batch.column(m)) {
                *x = S::of(b as f64);
            }
        }
        Self {
            len,
            blocks,
            size,
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn size(&self) -> usize {
        self.size
    }

    fn offset(&self, m: usize, block: usize) -> usize {
        (m * self.blocks + block) * self.size
    }

    pub fn x(&self, m: usize, block: usize) -> &[S] {
        let o = self.offset(m, block);
        &self.data[o..o + self.size]
    }

    fn x_mut(&mut self, m: usize, block: usize) -> &mut [S] {
        let o = self.offset(m, block);
        &mut self.data[o..o + self.size]
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }
}

/// Softmax weights and pre-link values of the gated queries of one layer.
#[derive(Debug, Clone)]
pub struct LayerTrace<S> {
    pub first: usize,
    pub sigma: Vec<Vec<S>>,
    pub z: Vec<Vec<S>>,
}

/// Everything the backward pass needs from the forward pass.
#[derive(Debug, Clone)]
pub struct Trace<S> {
    pub layers: Vec<LayerTrace<S>>,
}

/// Forward pass returning the residual stream only.
pub fn forward<S: Scalar>(
    params: &ModelParams<S>,
    batch: &Batch,
    tree: &ParityTree,
    mask: &AttentionMask,
) -> Result<ResidualStream<S>> {
    forward_traced(params, batch, tree, mask).map(|(s, _)| s)
}

/// Forward pass that also records softmax weights and link inputs.
pub fn forward_traced<S: Scalar>(
    params: &ModelParams<S>,
    batch: &Batch,
    tree: &ParityTree,
    mask: &AttentionMask,
) -> Result<(ResidualStream<S>, Trace<S>)> {
    params.check(tree)?;
    if batch.len() != tree.len() || mask.len() != tree.len() {
        return Err(Error::DimensionMismatch(format!(
            "batch length {} and mask length {} must equal T = {}",
            batch.len(),
            mask.len(),
            tree.len()
        )));
    }
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let depth = tree.depth();
    let mut stream = ResidualStream::embed(batch, depth + 1);
    let mut layers = Vec::with_capacity(depth);
    for layer in 1..=depth {
        let active = tree.level_range(layer + 1);
        let w = params.layer(layer);
        let link = params.link.as_ref();
        let stream_ref = &stream;
        let outputs: Vec<(Vec<S>, Vec<S>, Vec<S>)> = active
            .clone()
            .into_par_iter()
            .map(|m| {
                let limit = mask.key_limit(m);
                let mut sigma = vec![S::zero(); limit];
                softmax_prefix(&w.column(m)[..limit], &mut sigma);
                let mut z = vec![S::zero(); stream_ref.size()];
                for (j, &s) in sigma.iter().enumerate() {
                    for (zi, &xj) in z.iter_mut().zip(stream_ref.x(j, layer - 1)) {
                        *zi += s * xj;
                    }
                }
                let out = z.iter().map(|&v| link.eval(v)).collect();
                (sigma, z, out)
            })
            .collect();
        for m in 0..tree.len() {
            if !active.contains(&m) {
                let o_prev = stream.offset(m, layer - 1);
                let o = stream.offset(m, layer);
                stream.data.copy_within(o_prev..o_prev + stream.size, o);
            }
        }
        let mut trace = LayerTrace {
            first: active.start,
            sigma: Vec::with_capacity(outputs.len()),
            z: Vec::with_capacity(outputs.len()),
        };
        for (m, (sigma, z, out)) in active.zip(outputs) {
            stream.x_mut(m, layer).copy_from_slice(&out);
            trace.sigma.push(sigma);
            trace.z.push(z);
        }
        layers.push(trace);
    }
    Ok((stream, Trace { layers }))
}

/// Stage-`t` prediction at position `m`: block `t`.
pub fn readout<S: Scalar>(stream: &ResidualStream<S>, stage: usize, m: usize) -> &[S] {
    stream.x(m, stage)
}

/// `(1/2B) sum_{m >= n_t} |x[m][t] - b_m|^2`.
pub fn loss_stage<S: Scalar>(stream: &ResidualStream<S>, batch: &Batch, tree: &ParityTree, stage: usize) -> Result<S> {
    if stage == 0 || stage > tree.depth() {
        return Err(Error::StageOutOfRange {
            stage,
            depth: tree.depth(),
        });
    }
    let mut total = S::zero();
    for m in tree.level_bound(stage)..tree.len() {
        for (&x, &y) in stream.x(m, stage).iter().zip(batch.cot_column(m)) {
            let d = x - S::of(y as f64);
            total += d * d;
        }
    }
    Ok(total / (S::of(2.0) * S::of_usize(batch.size())))
}

/// Forward then stage loss.
pub fn stage_loss<S: Scalar>(
    params: &ModelParams<S>,
    batch: &Batch,
    tree: &ParityTree,
    mask: &AttentionMask,
    stage: usize,
) -> Result<S> {
    let stream = forward(params, batch, tree, mask)?;
    loss_stage(&stream, batch, tree, stage)
}

/// Per-layer softmax matrices `(key, query)`; queries without keys are zero.
pub fn attention_maps<S: Scalar>(params: &ModelParams<S>, mask: &AttentionMask) -> Vec<LogitMatrix<S>> {
    params
        .weights
        .iter()
        .map(|w| {
            let mut out = LogitMatrix::zeros(w.dim());
            for m in 0..w.dim() {
                let limit = mask.key_limit(m);
                if limit > 0 {
                    softmax_prefix(&w.column(m)[..limit], &mut out.column_mut(m)[..limit]);
                }
            }
            out
        })
        .collect()
}

/// Closed-form value class of `x[beta][layer]` at stage `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HiddenState {
    /// Equals the ground truth exactly.
    Exact,
    /// Ground truth plus a small error from the softmax leak.
    Approx,
    /// Padding that no trained layer has filled in.
    Zero,
}

/// Which case describes block `layer` at position `beta` on a stage-`s`
/// batch, assuming layers `1..s` are well-trained. Requires `layer < s`.
pub fn hidden_state_oracle(tree: &ParityTree, stage: usize, layer: usize, beta: usize) -> Result<HiddenState> {
    if stage == 0 || stage > tree.depth() {
        return Err(Error::StageOutOfRange {
            stage,
            depth: tree.depth(),
        });
    }
    if layer >= stage {
        return Err(Error::LayerOutOfRange {
            layer,
            depth: stage - 1,
        });
    }
    if beta >= tree.len() {
        return Err(Error::PositionOutOfRange {
            position: beta,
            len: tree.len(),
        });
    }
    Ok(if beta < tree.n() || beta >= tree.level_bound(stage) {
        HiddenState::Exact
    } else if beta < tree.level_bound(layer + 1) {
        HiddenState::Approx
    } else {
        HiddenState::Zero
    })
}
