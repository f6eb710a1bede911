//! Gradients of the stage loss with respect to every attention logit.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::link::Link;
use crate::mask::AttentionMask;
use crate::matrix::LogitMatrix;
use crate::model::{forward, forward_traced, loss_stage, ModelParams, ResidualStream, Trace};
use crate::scalar::Scalar;
use crate::tree::ParityTree;

/// One matrix per layer, aligned with `ModelParams::weights`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTensor<S> {
    pub layers: Vec<LogitMatrix<S>>,
}

impl<S: Scalar> GradientTensor<S> {
    pub fn zeros(depth: usize, len: usize) -> Self {
        Self {
            layers: vec![LogitMatrix::zeros(len); depth],
        }
    }

    pub fn layer(&self, layer: usize) -> &LogitMatrix<S> {
        &self.layers[layer - 1]
    }

    pub fn max_abs(&self) -> S {
        self.layers.iter().fold(S::zero(), |m, g| m.max(g.max_abs()))
    }

    pub fn norm(&self) -> S {
        self.layers
            .iter()
            .flat_map(|g| g.as_slice())
            .map(|&x| x * x)
            .sum::<S>()
            .sqrt()
    }

    /// Entries the mask allows, in `(layer, query, key)` order.
    fn unmasked_mut<'a>(&'a mut self, mask: &'a AttentionMask) -> impl Iterator<Item = &'a mut S> + 'a {
        self.layers.iter_mut().flat_map(move |g| {
            let dim = g.dim();
            g.as_mut_slice()
                .chunks_mut(dim)
                .enumerate()
                .flat_map(move |(m, col)| col[..mask.key_limit(m)].iter_mut())
        })
    }
}

fn check_stage(tree: &ParityTree, stage: usize) -> Result<()> {
    if stage == 0 || stage > tree.depth() {
        return Err(Error::StageOutOfRange {
            stage,
            depth: tree.depth(),
        });
    }
    Ok(())
}

/// Propagates an adjoint placed on block `stage` back to every logit.
///
/// `seed[m]` is `dF/dx[m][stage]` per sample; positions without a seed are
/// treated as zero. Layers above `stage` never influence block `stage`.
pub fn backward<S: Scalar>(
    params: &ModelParams<S>,
    tree: &ParityTree,
    mask: &AttentionMask,
    stream: &ResidualStream<S>,
    trace: &Trace<S>,
    stage: usize,
    seed: &[Vec<S>],
) -> Result<GradientTensor<S>> {
    check_stage(tree, stage)?;
    let (len, size) = (tree.len(), stream.size());
    if seed.len() != len || seed.iter().any(|s| !s.is_empty() && s.len() != size) {
        return Err(Error::DimensionMismatch(format!(
            "adjoint seed must have {len} positions of {size} samples"
        )));
    }
    let link = params.link.as_ref();
    let mut grad = GradientTensor::zeros(tree.depth(), len);
    let mut current: Vec<Vec<S>> = seed
        .iter()
        .map(|s| if s.is_empty() { vec![S::zero(); size] } else { s.clone() })
        .collect();
    for layer in (1..=stage).rev() {
        let active = tree.level_range(layer + 1);
        let lt = &trace.layers[layer - 1];
        let mut previous = vec![vec![S::zero(); size]; len];
        for m in (0..len).filter(|m| !active.contains(m)) {
            std::mem::swap(&mut previous[m], &mut current[m]);
        }
        // dz = adj * phi'(z); u_j = <dz, x_j>; dw_j = sigma_j (u_j - sum sigma u)
        let per_query: Vec<(Vec<S>, Vec<S>)> = active
            .clone()
            .into_par_iter()
            .map(|m| {
                let q = m - lt.first;
                let (sigma, z) = (&lt.sigma[q], &lt.z[q]);
                let dz: Vec<S> = current[m].iter().zip(z).map(|(&a, &zi)| a * link.deriv(zi)).collect();
                let u: Vec<S> = (0..sigma.len())
                    .map(|j| dz.iter().zip(stream.x(j, layer - 1)).map(|(&d, &x)| d * x).sum::<S>())
                    .collect();
                let mean: S = sigma.iter().zip(&u).map(|(&s, &v)| s * v).sum();
                let col = sigma.iter().zip(&u).map(|(&s, &v)| s * (v - mean)).collect();
                (col, dz)
            })
            .collect();
        let g = &mut grad.layers[layer - 1];
        for (m, (col, dz)) in active.zip(per_query) {
            g.column_mut(m)[..col.len()].copy_from_slice(&col);
            let sigma = &lt.sigma[m - lt.first];
            for (j, &s) in sigma.iter().enumerate() {
                for (p, &d) in previous[j].iter_mut().zip(&dz) {
                    *p += s * d;
                }
            }
        }
        current = previous;
    }
    debug_assert!(mask.len() == len);
    Ok(grad)
}

/// Stage loss and its exact gradient.
pub fn loss_and_grad<S: Scalar>(
    params: &ModelParams<S>,
    batch: &Batch,
    tree: &ParityTree,
    mask: &AttentionMask,
    stage: usize,
) -> Result<(S, GradientTensor<S>)> {
    check_stage(tree, stage)?;
    let (stream, trace) = forward_traced(params, batch, tree, mask)?;
    let loss = loss_stage(&stream, batch, tree, stage)?;
    let scale = S::one() / S::of_usize(batch.size());
    let seed: Vec<Vec<S>> = (0..tree.len())
        .map(|m| {
            if m < tree.level_bound(stage) {
                Vec::new()
            } else {
                stream
                    .x(m, stage)
                    .iter()
                    .zip(batch.cot_column(m))
                    .map(|(&x, &y)| (x - S::of(y as f64)) * scale)
                    .collect()
            }
        })
        .collect();
    let grad = backward(params, tree, mask, &stream, &trace, stage, &seed)?;
    Ok((loss, grad))
}

/// Exact gradient of the stage-`t` loss by reverse traversal.
pub fn grad_reverse<S: Scalar>(
    params: &ModelParams<S>,
    batch: &Batch,
    tree: &ParityTree,
    mask: &AttentionMask,
    stage: usize,
) -> Result<GradientTensor<S>> {
    loss_and_grad(params, batch, tree, mask, stage).map(|(_, g)| g)
}

/// Euclidean norm of the Jacobian of every stage-`t` output `x[m][t][i]`
/// with respect to all logits, one backward pass per output.
pub fn output_jacobian_norm<S: Scalar>(
    params: &ModelParams<S>,
    batch: &Batch,
    tree: &ParityTree,
    mask: &AttentionMask,
    stage: usize,
) -> Result<S> {
    check_stage(tree, stage)?;
    let (stream, trace) = forward_traced(params, batch, tree, mask)?;
    let size = batch.size();
    let mut total = S::zero();
    for m in 0..tree.len() {
        for i in 0..size {
            let mut seed = vec![Vec::new(); tree.len()];
            let mut e = vec![S::zero(); size];
            e[i] = S::one();
            seed[m] = e;
            let g = backward(params, tree, mask, &stream, &trace, stage, &seed)?;
            let n = g.norm();
            total += n * n;
        }
    }
    Ok(total.sqrt())
}

/// Central differences `(L(w + h) - L(w - h)) / 2h` over every unmasked logit.
pub fn grad_fd<S: Scalar>(
    params: &ModelParams<S>,
    batch: &Batch,
    tree: &ParityTree,
    mask: &AttentionMask,
    stage: usize,
    h: S,
) -> Result<GradientTensor<S>> {
    check_stage(tree, stage)?;
    let entries: Vec<(usize, usize, usize)> = (1..=tree.depth())
        .flat_map(|l| (0..tree.len()).flat_map(move |m| (0..mask.key_limit(m)).map(move |j| (l, j, m))))
        .collect();
    let values = entries
        .par_iter()
        .map(|&(l, j, m)| {
            let mut p = params.clone();
            let w0 = p.weights[l - 1].get(j, m);
            p.weights[l - 1].set(j, m, w0 + h);
            let up = loss_stage(&forward(&p, batch, tree, mask)?, batch, tree, stage)?;
            p.weights[l - 1].set(j, m, w0 - h);
            let down = loss_stage(&forward(&p, batch, tree, mask)?, batch, tree, stage)?;
            Ok((up - down) / (h + h))
        })
        .collect::<Result<Vec<S>>>()?;
    let mut grad = GradientTensor::zeros(tree.depth(), tree.len());
    for (&(l, j, m), v) in entries.iter().zip(values) {
        grad.layers[l - 1].set(j, m, v);
    }
    Ok(grad)
}

/// `max |a - b| / max |b|` over entries where `|b| > floor`; zero if none.
pub fn relative_error<S: Scalar>(a: &GradientTensor<S>, reference: &GradientTensor<S>, floor: f64) -> f64 {
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (ga, gb) in a.layers.iter().zip(&reference.layers) {
        for (&x, &y) in ga.as_slice().iter().zip(gb.as_slice()) {
            let y = y.as_f64();
            if y.abs() > floor {
                diff = diff.max((x.as_f64() - y).abs());
                scale = scale.max(y.abs());
            }
        }
    }
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Leading-order gradient of the stage-`t` loss at zero logits of the active
/// layer: `-2c / n_t^2` at the two children of `m`, zero at other keys.
pub fn analytic_signal<S: Scalar>(
    tree: &ParityTree,
    stage: usize,
    query: usize,
    key: usize,
    link: &dyn Link<S>,
) -> Result<S> {
    check_stage(tree, stage)?;
    if !tree.level_range(stage + 1).contains(&query) {
        return Err(Error::InactiveQuery { query, stage });
    }
    let (a, b) = tree.children(query).expect("active query is internal");
    if key == a || key == b {
        let nt = S::of_usize(tree.level_bound(stage));
        Ok(-S::of(2.0) * link.curvature() / (nt * nt))
    } else {
        Ok(S::zero())
    }
}

/// Adds a perturbation of Euclidean norm below `eps` to the unmasked entries.
///
/// The direction is uniform on the sphere and the radius uniform in `[0, eps)`.
pub fn noisy_oracle<S: Scalar, R: Rng + ?Sized>(
    grad: &GradientTensor<S>,
    eps: f64,
    mask: &AttentionMask,
    rng: &mut R,
) -> GradientTensor<S> {
    let mut out = grad.clone();
    if eps <= 0.0 {
        return out;
    }
    let count: usize = (0..mask.len()).map(|m| mask.key_limit(m)).sum::<usize>() * grad.layers.len();
    let direction: Vec<f64> = (0..count).map(|_| rng.sample(StandardNormal)).collect();
    let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
    let radius = eps * rng.random::<f64>() * (1.0 - 1e-9);
    let scale = if norm > 0.0 { radius / norm } else { 0.0 };
    for (g, d) in out.unmasked_mut(mask).zip(direction) {
        *g += S::of(d * scale);
    }
    out
}

/// Child versus non-child gradient magnitudes of one gated query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub layer: usize,
    /// 1-based position.
    pub query: usize,
    pub child_values: [f64; 2],
    pub max_nonchild_abs: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientSummary {
    pub max_abs: Vec<f64>,
    pub columns: Vec<ColumnSummary>,
}

pub fn summarize<S: Scalar>(grad: &GradientTensor<S>, tree: &ParityTree, mask: &AttentionMask) -> GradientSummary {
    let mut columns = Vec::new();
    for layer in 1..=grad.layers.len() {
        let g = grad.layer(layer);
        for m in tree.level_range(layer + 1) {
            let (a, b) = tree.children(m).expect("gated query is internal");
            let child_values = [g.get(a, m).as_f64(), g.get(b, m).as_f64()];
            let max_nonchild_abs = (0..mask.key_limit(m))
                .filter(|&j| j != a && j != b)
                .map(|j| g.get(j, m).as_f64().abs())
                .fold(0.0, f64::max);
            let child_min = child_values[0].abs().min(child_values[1].abs());
            columns.push(ColumnSummary {
                layer,
                query: m + 1,
                child_values,
                max_nonchild_abs,
                ratio: if child_min > 0.0 {
                    max_nonchild_abs / child_min
                } else {
                    f64::INFINITY
                },
            });
        }
    }
    GradientSummary {
        max_abs: grad.layers.iter().map(|g| g.max_abs().as_f64()).collect(),
        columns,
    }
}
