//! Curriculum trainers and evaluation.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{EtaRule, Mode, TrainConfig};
use crate::data::{sample_batch, sample_secret, sample_with_seed, Batch, StageTag};
use crate::error::{Error, Result};
use crate::grad::{loss_and_grad, noisy_oracle};
use crate::mask::AttentionMask;
use crate::matrix::LogitMatrix;
use crate::model::{attention_maps, forward, loss_stage, readout, ModelParams};
use crate::optim::AdamW;
use crate::rng::{streams, SeedSpec};
use crate::scalar::Scalar;
use crate::tree::ParityTree;

/// Entrywise nearest integer, halves away from zero.
pub fn quantize<S: Scalar>(w: &LogitMatrix<S>) -> Result<LogitMatrix<S>> {
    let dim = w.dim();
    if let Some(i) = w.as_slice().iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            layer: 0,
            key: i % dim,
            query: i / dim,
            value: w.as_slice()[i].as_f64(),
        });
    }
    Ok(w.map(|x| x.round()))
}

/// `K_n n_t^2 / (2c)`.
pub fn eta_for_stage(stage: usize, tree: &ParityTree, kn: f64, c: f64) -> Result<f64> {
    if stage == 0 || stage > tree.depth() {
        return Err(Error::StageOutOfRange {
            stage,
            depth: tree.depth(),
        });
    }
    let nt = tree.level_bound(stage) as f64;
    Ok(kn * nt * nt / (2.0 * c))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub sign_accuracy: f64,
    pub linf_error: f64,
    /// Root mean squared error.
    pub l2_error: f64,
}

/// Scores the stage-`L` prediction at the root on a fully padded batch.
pub fn evaluate<S: Scalar>(
    params: &ModelParams<S>,
    tree: &ParityTree,
    mask: &AttentionMask,
    test: &Batch,
) -> Result<Evaluation> {
    if test.stage() != StageTag::Test {
        let t = match test.stage() {
            StageTag::Train(t) => t,
            StageTag::Test => unreachable!(),
        };
        return Err(Error::PaddingViolation {
            stage: t,
            position: tree.n(),
        });
    }
    let stream = forward(params, test, tree, mask)?;
    let pred = readout(&stream, tree.depth(), tree.root());
    let mut correct = 0usize;
    let mut linf: f64 = 0.0;
    let mut sq = 0.0;
    for (&f, &y) in pred.iter().zip(test.targets()) {
        let f = f.as_f64();
        let y = y as f64;
        if f * y > 0.0 {
            correct += 1;
        }
        let d = (f - y).abs();
        linf = linf.max(d);
        sq += d * d;
    }
    let b = test.size() as f64;
    Ok(Evaluation {
        sign_accuracy: correct as f64 / b,
        linf_error: linf,
        l2_error: (sq / b).sqrt(),
    })
}

/// `eps_t = max_{m < n_{t+1}} |x[m][t] - b_m|` on the unpadded inputs, `t = 1..L`.
pub fn forward_error_trace<S: Scalar>(
    params: &ModelParams<S>,
    tree: &ParityTree,
    mask: &AttentionMask,
    batch: &Batch,
) -> Result<Vec<f64>> {
    let full = batch.repad(tree, StageTag::Train(1))?;
    let stream = forward(params, &full, tree, mask)?;
    Ok((1..=tree.depth())
        .map(|t| {
            (tree.n()..tree.level_bound(t + 1))
                .flat_map(|m| {
                    stream
                        .x(m, t)
                        .iter()
                        .zip(full.cot_column(m))
                        .map(|(&x, &y)| (x.as_f64() - y as f64).abs())
                })
                .fold(0.0, f64::max)
        })
        .collect())
}

/// Smallest total softmax mass on the two children over a layer's gated queries.
pub fn child_mass_min<S: Scalar>(params: &ModelParams<S>, tree: &ParityTree, mask: &AttentionMask) -> Vec<f64> {
    attention_maps(params, mask)
        .iter()
        .enumerate()
        .map(|(i, a)| {
            tree.level_range(i + 2)
                .map(|m| {
                    let (c1, c2) = tree.children(m).expect("gated query is internal");
                    (a.get(c1, m) + a.get(c2, m)).as_f64()
                })
                .fold(1.0, f64::min)
        })
        .collect()
}

/// SHA-256 of all logits as little-endian `f64`, hex encoded.
pub fn weights_hash<S: Scalar>(params: &ModelParams<S>) -> String {
    let mut h = Sha256::new();
    for w in &params.weights {
        for x in w.as_slice() {
            h.update(x.as_f64().to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: usize,
    pub stage: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    /// Theory-mode step size.
    pub eta: Option<f64>,
    /// Validation loss of this stage with the previous stage's final weights.
    pub boundary_val_loss: Option<f64>,
    /// Last validation loss of the previous stage.
    pub pre_boundary_val_loss: Option<f64>,
    pub final_train_loss: f64,
    pub final_val_loss: f64,
    pub weights_hash: String,
    /// Per layer, the smallest child softmax mass over gated queries.
    pub child_mass_min: Vec<f64>,
    /// Forward error `eps_t` after this stage.
    pub forward_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub seed: u64,
    pub secret: SeedSpec,
    pub train: SeedSpec,
    pub oracle: SeedSpec,
    pub validation: SeedSpec,
    pub test: SeedSpec,
}

impl RunSeeds {
    pub fn new(seed: u64, mode: Mode) -> Self {
        Self {
            seed,
            secret: SeedSpec::new(seed, streams::SECRET),
            train: SeedSpec::new(
                seed,
                match mode {
                    Mode::Theory => streams::TRAIN_BATCH,
                    Mode::Experiment => streams::EXPERIMENT_STEP,
                },
            ),
            oracle: SeedSpec::new(seed, streams::ORACLE_NOISE),
            validation: SeedSpec::new(seed, streams::VALIDATION),
            test: SeedSpec::new(seed, streams::TEST),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub tool_version: String,
    pub config: TrainConfig,
    /// 1-based, sorted.
    pub secret: Vec<usize>,
    pub kn: u32,
    pub seeds: RunSeeds,
    pub stages: Vec<StageRecord>,
    pub loss_curve: Vec<LossRow>,
    pub test: Evaluation,
    pub wall_time_s: f64,
}

impl RunRecord {
    /// The record without its wall-clock time, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }
}

/// Tree for a config: the fixed secret if given, otherwise sampled from the seed.
pub fn tree_for_config(config: &TrainConfig) -> Result<ParityTree> {
    config.validate()?;
    match &config.secret {
        Some(s) => ParityTree::from_one_based(config.n, config.k(), s),
        None => ParityTree::new(config.n, config.k(), &sample_secret(config.seed, config.n, config.k())),
    }
}

struct Validation {
    inputs: Batch,
    test: Batch,
}

impl Validation {
    fn new(tree: &ParityTree, size: usize, seed: SeedSpec) -> Result<Self> {
        let inputs = sample_with_seed(tree, size, StageTag::Train(1), seed)?;
        let test = inputs.repad(tree, StageTag::Test)?;
        Ok(Self { inputs, test })
    }

    fn loss<S: Scalar>(
        &self,
        params: &ModelParams<S>,
        tree: &ParityTree,
        mask: &AttentionMask,
        stage: usize,
    ) -> Result<f64> {
        let batch = self.inputs.repad(tree, StageTag::Train(stage))?;
        let stream = forward(params, &batch, tree, mask)?;
        let loss = loss_stage(&stream, &batch, tree, stage)?.as_f64();
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(stage));
        }
        Ok(loss)
    }

    fn accuracy<S: Scalar>(&self, params: &ModelParams<S>, tree: &ParityTree, mask: &AttentionMask) -> Result<f64> {
        Ok(evaluate(params, tree, mask, &self.test)?.sign_accuracy)
    }
}

fn stage_record<S: Scalar>(
    params: &ModelParams<S>,
    tree: &ParityTree,
    mask: &AttentionMask,
    val: &Validation,
    stage: usize,
) -> Result<StageRecord> {
    Ok(StageRecord {
        stage,
        eta: None,
        boundary_val_loss: None,
        pre_boundary_val_loss: None,
        final_train_loss: f64::NAN,
        final_val_loss: val.loss(params, tree, mask, stage)?,
        weights_hash: weights_hash(params),
        child_mass_min: child_mass_min(params, tree, mask),
        forward_error: forward_error_trace(params, tree, mask, &val.inputs)?[stage - 1],
    })
}

fn check_mode(config: &TrainConfig, mode: Mode) -> Result<()> {
    if config.mode != mode {
        return Err(Error::config(
            "mode",
            format!("expected {mode:?}, got {:?}", config.mode),
        ));
    }
    config.validate()
}

/// One theory-mode stage update: `W <- q(W - eta * oracle(grad))` for every layer.
///
/// Returns the stage-`t` loss before the update.
#[allow(clippy::too_many_arguments)]
pub fn theory_step<S: Scalar, R: Rng + ?Sized>(
    params: &mut ModelParams<S>,
    batch: &Batch,
    tree: &ParityTree,
    mask: &AttentionMask,
    stage: usize,
    eta: f64,
    oracle_eps: f64,
    rng: &mut R,
) -> Result<f64> {
    let (loss, grad) = loss_and_grad(params, batch, tree, mask, stage)?;
    let loss = loss.as_f64();
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss(stage));
    }
    let grad = noisy_oracle(&grad, oracle_eps, mask, rng);
    let eta = S::of(eta);
    for (l, (w, g)) in params.weights.iter_mut().zip(&grad.layers).enumerate() {
        let mut next = w.clone();
        for (x, &d) in next.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *x -= eta * d;
        }
        *w = quantize(&next).map_err(|e| match e {
            Error::NonFinite { key, query, value, .. } => Error::NonFinite {
                layer: l + 1,
                key,
                query,
                value,
            },
            e => e,
        })?;
    }
    params.canonicalize(mask);
    Ok(loss)
}

/// Theory mode: for each stage, one fresh batch, one noisy gradient, one quantized update.
pub fn train_theory<S: Scalar>(config: &TrainConfig, tree: &ParityTree) -> Result<(ModelParams<S>, RunRecord)> {
    check_mode(config, Mode::Theory)?;
    let start = Instant::now();
    let seeds = RunSeeds::new(config.seed, Mode::Theory);
    let mask = AttentionMask::new(tree);
    let mut params = ModelParams::<S>::zeros(tree, config.kn());
    let val = Validation::new(tree, config.test_size, seeds.validation)?;
    let c = params.link.curvature().as_f64();
    let mut stages = Vec::new();
    let mut rows = Vec::new();
    let mut previous_val = None;
    for t in 1..=tree.depth() {
        let boundary = if t > 1 {
            Some(val.loss(&params, tree, &mask, t)?)
        } else {
            None
        };
        let batch = sample_batch(config.seed, config.batch(), tree, t)?;
        let eta = match config.eta_rule {
            EtaRule::Theory => eta_for_stage(t, tree, config.kn() as f64, c)?,
            EtaRule::Constant(eta) => eta,
        };
        let mut rng = seeds.oracle.with_stream(streams::ORACLE_NOISE + t as u64).rng(0);
        let train_loss = theory_step(&mut params, &batch, tree, &mask, t, eta, config.oracle_eps, &mut rng)?;
        let mut rec = stage_record(&params, tree, &mask, &val, t)?;
        rec.eta = Some(eta);
        rec.boundary_val_loss = boundary;
        rec.pre_boundary_val_loss = previous_val;
        rec.final_train_loss = loss_stage(&forward(&params, &batch, tree, &mask)?, &batch, tree, t)?.as_f64();
        rows.push(LossRow {
            step: t,
            stage: t,
            train_loss,
            val_loss: rec.final_val_loss,
            val_acc: val.accuracy(&params, tree, &mask)?,
        });
        previous_val = Some(rec.final_val_loss);
        stages.push(rec);
    }
    let test = crate::data::make_test_batch(config.seed, config.test_size, tree)?;
    let record = RunRecord {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone().resolved(),
        secret: tree.secret_one_based(),
        kn: config.kn(),
        seeds,
        stages,
        loss_curve: rows,
        test: evaluate(&params, tree, &mask, &test)?,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok((params, record))
}

/// Experiment mode: AdamW on fresh minibatches, `steps_per_stage` per stage.
pub fn train_experiment<S: Scalar>(config: &TrainConfig, tree: &ParityTree) -> Result<(ModelParams<S>, RunRecord)> {
    check_mode(config, Mode::Experiment)?;
    let start = Instant::now();
    let exp = &config.experiment;
    let seeds = RunSeeds::new(config.seed, Mode::Experiment);
    let mask = AttentionMask::new(tree);
    let mut params = ModelParams::<S>::zeros(tree, config.kn());
    let val = Validation::new(tree, exp.eval_size, seeds.validation)?;
    let dim = tree.len() * tree.len();
    let mut opt = AdamW::<S>::new(exp.adamw(), dim * tree.depth());
    let mut flat = vec![S::zero(); dim * tree.depth()];
    let mut flat_grad = vec![S::zero(); dim * tree.depth()];
    let mut stages = Vec::new();
    let mut rows = Vec::new();
    let mut previous_val = None;
    let mut global = 0usize;
    for t in 1..=tree.depth() {
        let boundary = if t > 1 {
            Some(val.loss(&params, tree, &mask, t)?)
        } else {
            None
        };
        let mut last_train = f64::NAN;
        for step in 1..=exp.steps_per_stage {
            global += 1;
            let seed = seeds.train.with_stream(streams::EXPERIMENT_STEP + global as u64);
            let batch = sample_with_seed(tree, exp.batch, StageTag::Train(t), seed)?;
            let (loss, grad) = loss_and_grad(&params, &batch, tree, &mask, t)?;
            last_train = loss.as_f64();
            if !last_train.is_finite() {
                return Err(Error::NonFiniteLoss(t));
            }
            for (l, (w, g)) in params.weights.iter().zip(&grad.layers).enumerate() {
                flat[l * dim..(l + 1) * dim].copy_from_slice(w.as_slice());
                flat_grad[l * dim..(l + 1) * dim].copy_from_slice(g.as_slice());
            }
            opt.step(&mut flat, &flat_grad);
            for (l, w) in params.weights.iter_mut().enumerate() {
                w.as_mut_slice().copy_from_slice(&flat[l * dim..(l + 1) * dim]);
            }
            if step % exp.eval_every == 0 {
                rows.push(LossRow {
                    step: global,
                    stage: t,
                    train_loss: last_train,
                    val_loss: val.loss(&params, tree, &mask, t)?,
                    val_acc: val.accuracy(&params, tree, &mask)?,
                });
            }
        }
        let mut rec = stage_record(&params, tree, &mask, &val, t)?;
        rec.boundary_val_loss = boundary;
        rec.pre_boundary_val_loss = previous_val;
        rec.final_train_loss = last_train;
        previous_val = Some(rec.final_val_loss);
        stages.push(rec);
    }
    let test = crate::data::make_test_batch(config.seed, config.test_size, tree)?;
    let record = RunRecord {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone().resolved(),
        secret: tree.secret_one_based(),
        kn: config.kn(),
        seeds,
        stages,
        loss_curve: rows,
        test: evaluate(&params, tree, &mask, &test)?,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok((params, record))
}

/// Dispatches on `config.mode`.
pub fn train<S: Scalar>(config: &TrainConfig, tree: &ParityTree) -> Result<(ModelParams<S>, RunRecord)> {
    match config.mode {
        Mode::Theory => train_theory(config, tree),
        Mode::Experiment => train_experiment(config, tree),
    }
}
