//! Seeded numerical checks of the training analysis.
//!
//! Each check returns a [`LemmaReport`] with the measured statistic, the
//! bound it is compared against (numeric and symbolic) and the seeds used.

use std::collections::HashSet;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{default_k, parse_config_str, TrainConfig};
use crate::data::{sample_batch, sample_with_seed, Batch, StageTag};
use crate::error::Result;
use crate::grad::{grad_reverse, output_jacobian_norm};
use crate::link::{CosineLink, Link};
use crate::mask::AttentionMask;
use crate::model::{attention_maps, forward, hidden_state_oracle, HiddenState, ModelParams};
use crate::rng::{stream_rng, streams, SeedSpec};
use crate::train::{eta_for_stage, theory_step, tree_for_config};
use crate::tree::{LeafSet, ParityTree};

/// Failure probability used in every high-probability bound.
pub const P_FAIL: f64 = 0.135_335_283_236_612_7; // e^-2

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// Failed where failure is the anticipated outcome (a contrast run).
    ExpectedFail,
    /// The data violate the check's premise.
    Inapplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub id: String,
    pub params: Value,
    pub statistic: f64,
    pub bound: f64,
    pub bound_formula: String,
    pub status: Status,
    pub seeds: Vec<u64>,
    pub p: f64,
    #[serde(default)]
    pub details: Value,
}

impl LemmaReport {
    fn new(id: &str, params: Value, statistic: f64, bound: f64, formula: &str, pass: bool, seeds: Vec<u64>) -> Self {
        Self {
            id: id.to_string(),
            params,
            statistic,
            bound,
            bound_formula: formula.to_string(),
            status: if pass { Status::Pass } else { Status::Fail },
            seeds,
            p: P_FAIL,
            details: Value::Null,
        }
    }

    fn with_details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    /// True for a failure nobody anticipated.
    pub fn is_unexpected_failure(&self) -> bool {
        self.status == Status::Fail
    }
}

fn c2() -> f64 {
    Link::<f64>::second_order_bound(&CosineLink)
}

fn random_rows(n: usize, rows: usize, seed: SeedSpec) -> Vec<i8> {
    let mut out = vec![0i8; n * rows];
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let mut rng = seed.rng(i as u64);
        for x in row {
            *x = if rng.random::<bool>() { 1 } else { -1 };
        }
    });
    out
}

/// Outcome of one collapse trial on a `B x n` sample (row-major).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollapseTrial {
    /// `max_m sup_i (phi(mean of first m-1 bits) + 1) / bound(m)`.
    pub worst_ratio: f64,
    /// Every column mean lies within a Hoeffding radius at failure probability `1e-9`.
    pub premise_ok: bool,
}

/// `C2 (2/m) log(2TB/p)`.
pub fn collapse_bound(m: usize, t_len: usize, b: usize) -> f64 {
    c2() * (2.0 / m as f64) * (2.0 * t_len as f64 * b as f64 / P_FAIL).ln()
}

pub fn collapse_trial(rows: &[i8], n: usize, t_len: usize, eps: f64) -> CollapseTrial {
    let b = rows.len() / n;
    let radius = (2.0 * (2.0 * n as f64 / 1e-9).ln() / b as f64).sqrt();
    let premise_ok = (0..n).all(|j| {
        let mean = rows.chunks(n).map(|r| r[j] as f64).sum::<f64>() / b as f64;
        mean.abs() <= radius
    });
    let m_min = ((n as f64).powf(eps / 8.0).ceil() as usize).max(2);
    let mut worst: f64 = 0.0;
    for row in rows.chunks(n) {
        let mut prefix = 0.0;
        // 1-based m uses the first m - 1 bits
        for m in 2..=n {
            prefix += row[m - 2] as f64;
            if m < m_min {
                continue;
            }
            let dev = CosineLink.eval(prefix / (m - 1) as f64) + 1.0;
            worst = worst.max(dev / collapse_bound(m, t_len, b));
        }
    }
    CollapseTrial {
        worst_ratio: worst,
        premise_ok,
    }
}

/// Near-uniform link outputs at zero logits, `trials` independent samples.
pub fn check_collapse(n: usize, b: usize, trials: usize, eps: f64, seed: u64) -> LemmaReport {
    let t_len = n + default_k(n) - 1;
    let results: Vec<CollapseTrial> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let rows = random_rows(n, b, SeedSpec::new(seed, streams::LEMMA + 0x100 + i as u64));
            collapse_trial(&rows, n, t_len, eps)
        })
        .collect();
    let applicable = results.iter().filter(|r| r.premise_ok).count();
    let passes = results.iter().filter(|r| r.worst_ratio <= 1.0).count();
    let needed = (trials * 99).div_ceil(100);
    let worst = results.iter().map(|r| r.worst_ratio).fold(0.0, f64::max);
    let mut report = LemmaReport::new(
        "collapse",
        json!({"n": n, "B": b, "T": t_len, "trials": trials, "eps": eps, "m_min": ((n as f64).powf(eps / 8.0).ceil() as usize).max(2)}),
        worst,
        1.0,
        "max_m ||phi(mean_{j<m} b_j) + 1||_inf / (C2 (2/m) log(2TB/p)) <= 1 in >= 99% of trials",
        passes >= needed,
        vec![seed],
    )
    .with_details(json!({"trials_passing": passes, "trials_applicable": applicable}));
    if applicable < trials {
        report.status = Status::Inapplicable;
    }
    report
}

/// `sqrt((2/B) log(32 n^4 / p))`.
pub fn kappa_bound(n: usize, b: usize) -> f64 {
    ((2.0 / b as f64) * (32.0 * (n as f64).powi(4) / P_FAIL).ln()).sqrt()
}

/// Distinct nontrivial leafsets of tuples of order `<= 4` over `0..m`,
/// each with one representative tuple.
fn nontrivial_tuples(tree: &ParityTree, m: usize, seed: u64) -> (Vec<Vec<usize>>, bool) {
    let mut seen: HashSet<LeafSet> = HashSet::new();
    let mut out = Vec::new();
    let mut add = |tuple: Vec<usize>| {
        let mut s = LeafSet::empty(tree.n());
        for &p in &tuple {
            s.xor_assign(tree.leafset(p));
        }
        if !s.is_empty() && seen.insert(s) {
            out.push(tuple);
        }
    };
    if m <= 24 {
        for a in 0..m {
            add(vec![a]);
            for b in a + 1..m {
                add(vec![a, b]);
                for c in b + 1..m {
                    add(vec![a, b, c]);
                    for d in c + 1..m {
                        add(vec![a, b, c, d]);
                    }
                }
            }
        }
        (out, true)
    } else {
        let mut rng = stream_rng(seed, streams::LEMMA + 0x200, 0);
        for _ in 0..100_000 {
            let r = rng.random_range(1..=4);
            add((0..r).map(|_| rng.random_range(0..m)).collect());
        }
        (out, false)
    }
}

fn max_correlation(batch: &Batch, tuples: &[Vec<usize>]) -> f64 {
    let b = batch.size() as f64;
    tuples
        .par_iter()
        .map(|t| {
            let cols: Vec<&[i8]> = t.iter().map(|&p| batch.cot_column(p)).collect();
            let sum: i64 = (0..batch.size())
                .map(|i| cols.iter().map(|c| c[i] as i64).product::<i64>())
                .sum();
            (sum as f64 / b).abs()
        })
        .reduce(|| 0.0, f64::max)
}

/// Empirical correlations of nontrivial parity tuples stay below `kappa`.
pub fn check_kappa(n: usize, k: usize, b: usize, seed: u64) -> Result<LemmaReport> {
    let cfg = parse_config_str(&format!(r#"{{"n": {n}, "k": {k}, "seed": {seed}}}"#))?;
    let tree = tree_for_config(&cfg)?;
    let m = tree.len();
    let (tuples, exact) = nontrivial_tuples(&tree, m, seed);
    let batch = sample_with_seed(
        &tree,
        b,
        StageTag::Train(1),
        SeedSpec::new(seed, streams::LEMMA + 0x300),
    )?;
    let measured = max_correlation(&batch, &tuples);
    let kappa = kappa_bound(n, b);
    let doubled = sample_with_seed(
        &tree,
        2 * b,
        StageTag::Train(1),
        SeedSpec::new(seed, streams::LEMMA + 0x301),
    )?;
    let measured_2b = max_correlation(&doubled, &tuples);
    Ok(LemmaReport::new(
        "kappa",
        json!({"n": n, "k": k, "B": b, "m": m, "order_max": 4}),
        measured,
        kappa,
        "max over nontrivial tuples of |<b_j1 ... b_jr>| / B <= sqrt((2/B) log(32 n^4 / p))",
        measured <= kappa,
        vec![seed],
    )
    .with_details(json!({
        "distinct_leafsets": tuples.len(),
        "enumeration": if exact { "exact" } else { "sampled 100000" },
        "measured_2B": measured_2b,
        "kappa_2B": kappa_bound(n, 2 * b),
    })))
}

/// Softmax concentration and forward error of every layer.
pub fn check_well_trained(params: &ModelParams<f64>, tree: &ParityTree, batch: &Batch) -> Result<LemmaReport> {
    let mask = AttentionMask::new(tree);
    let n = tree.n() as f64;
    let delta = n * (-(params.kn as f64)).exp();
    let mass_low = (1.0 - delta) / 2.0;
    let fwd_bound = c2() * (2.0 * delta).powi(2);
    let maps = attention_maps(params, &mask);
    let full = batch.repad(tree, StageTag::Train(1))?;
    let stream = forward(params, &full, tree, &mask)?;
    let mut layers = Vec::new();
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for layer in 1..=tree.depth() {
        let a = &maps[layer - 1];
        let mut mass_ok = true;
        let mut min_mass: f64 = 0.5;
        let mut max_gap: f64 = 0.0;
        for m in tree.level_range(layer + 1) {
            let (c1, c2) = tree.children(m).expect("gated query is internal");
            let (s1, s2) = (a.get(c1, m), a.get(c2, m));
            min_mass = min_mass.min(s1.min(s2));
            max_gap = max_gap.max((s1 - s2).abs());
            mass_ok &= s1 >= mass_low && s1 <= 0.5 && s2 >= mass_low && s2 <= 0.5 && (s1 - s2).abs() <= 1e-12;
        }
        let err = tree
            .level_range(layer + 1)
            .flat_map(|m| {
                stream
                    .x(m, layer)
                    .iter()
                    .zip(full.cot_column(m))
                    .map(|(x, &y)| (x - y as f64).abs())
            })
            .fold(0.0, f64::max);
        ok &= mass_ok && err <= fwd_bound;
        worst = worst.max(err);
        layers.push(json!({
            "layer": layer,
            "min_child_mass": min_mass,
            "max_child_gap": max_gap,
            "mass_ok": mass_ok,
            "forward_error": err,
        }));
    }
    Ok(LemmaReport::new(
        "well_trained",
        json!({"n": tree.n(), "k": tree.k(), "K_n": params.kn, "B": batch.size()}),
        worst,
        fwd_bound,
        "child mass in [(1 - n e^-K_n)/2, 1/2], equal within 1e-12; forward error <= C2 (2 n e^-K_n)^2",
        ok,
        batch.seed().map(|s| vec![s.seed]).unwrap_or_default(),
    )
    .with_details(json!({"mass_lower": mass_low, "layers": layers})))
}

/// Params after `stages` theory-mode stages of `config`, using the trainer's seeds.
pub fn theory_snapshot(config: &TrainConfig, tree: &ParityTree, stages: usize) -> Result<ModelParams<f64>> {
    let mask = AttentionMask::new(tree);
    let mut params = ModelParams::<f64>::zeros(tree, config.kn());
    let c = params.link.curvature();
    for t in 1..=stages {
        let batch = sample_batch(config.seed, config.batch(), tree, t)?;
        let eta = eta_for_stage(t, tree, config.kn() as f64, c)?;
        let mut rng = SeedSpec::new(config.seed, streams::ORACLE_NOISE + t as u64).rng(0);
        theory_step(&mut params, &batch, tree, &mask, t, eta, config.oracle_eps, &mut rng)?;
    }
    Ok(params)
}

/// Stage-`t + 1` gradients on layers `<= t` are too small to survive rounding.
pub fn check_frozen(
    params: &ModelParams<f64>,
    tree: &ParityTree,
    config: &TrainConfig,
    stage: usize,
) -> Result<LemmaReport> {
    let mask = AttentionMask::new(tree);
    let next = stage + 1;
    let batch = sample_batch(config.seed, config.batch(), tree, next)?;
    let grad = grad_reverse(params, &batch, tree, &mask, next)?;
    let eta = eta_for_stage(next, tree, params.kn as f64, params.link.curvature())?;
    let max_grad = (1..=stage).map(|l| grad.layer(l).max_abs()).fold(0.0, f64::max);
    let scaled = eta * max_grad;
    let mut updated = params.clone();
    let mut rng = SeedSpec::new(config.seed, streams::ORACLE_NOISE + next as u64).rng(0);
    theory_step(
        &mut updated,
        &batch,
        tree,
        &mask,
        next,
        eta,
        config.oracle_eps,
        &mut rng,
    )?;
    let unchanged = (1..=stage).all(|l| updated.layer(l) == params.layer(l));
    let mut report = LemmaReport::new(
        "frozen",
        json!({"n": tree.n(), "k": tree.k(), "K_n": params.kn, "t": stage, "B": batch.size()}),
        scaled,
        0.5,
        "eta_{t+1} max_{l<=t} |dL^(t+1)/dw^(l)| < 1/2 and layers <= t bit-identical after the update",
        scaled < 0.5 && unchanged,
        vec![config.seed],
    )
    .with_details(json!({"eta": eta, "max_grad": max_grad, "frozen_layers_unchanged": unchanged}));
    if params.kn < 16 {
        report.id = "frozen_small_kn".to_string();
        if report.status == Status::Fail {
            report.status = Status::ExpectedFail;
        }
    }
    Ok(report)
}

/// Forward activations match the closed-form hidden-state cases.
pub fn check_hidden_state(
    params: &ModelParams<f64>,
    tree: &ParityTree,
    stage: usize,
    batch: &Batch,
) -> Result<LemmaReport> {
    let mask = AttentionMask::new(tree);
    let stream = forward(params, batch, tree, &mask)?;
    let delta = tree.n() as f64 * (-(params.kn as f64)).exp();
    let tol = c2() * (2.0 * delta).powi(2) * 10.0;
    let mut counts = [0usize; 3];
    let mut worst_exact: f64 = 0.0;
    let mut worst_approx: f64 = 0.0;
    for layer in 0..stage {
        for beta in 0..tree.len() {
            let x = stream.x(beta, layer);
            let truth = batch.cot_column(beta);
            match hidden_state_oracle(tree, stage, layer, beta)? {
                HiddenState::Exact => {
                    counts[0] += 1;
                    for (v, &y) in x.iter().zip(truth) {
                        worst_exact = worst_exact.max((v - y as f64).abs());
                    }
                }
                HiddenState::Zero => {
                    counts[1] += 1;
                    for v in x {
                        worst_exact = worst_exact.max(v.abs());
                    }
                }
                HiddenState::Approx => {
                    counts[2] += 1;
                    for (v, &y) in x.iter().zip(truth) {
                        worst_approx = worst_approx.max((v - y as f64).abs());
                    }
                }
            }
        }
    }
    Ok(LemmaReport::new(
        "hidden_state",
        json!({"n": tree.n(), "k": tree.k(), "K_n": params.kn, "stage": stage, "B": batch.size()}),
        worst_approx,
        tol,
        "exact and zero cases bit-exact; computed cases within 10 C2 (2 n e^-K_n)^2",
        worst_exact == 0.0 && worst_approx <= tol,
        batch.seed().map(|s| vec![s.seed]).unwrap_or_default(),
    )
    .with_details(json!({
        "exact_cases": counts[0],
        "zero_cases": counts[1],
        "approx_cases": counts[2],
        "max_exact_deviation": worst_exact,
    })))
}

/// Least-squares slope of `ys` against `xs`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let num: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

/// Growth of the output-Jacobian norm with `n` at random logits.
pub fn check_grad_norm_scaling(ns: &[usize], trials: usize, seed: u64) -> Result<LemmaReport> {
    let mut norms = Vec::new();
    let mut all_finite = true;
    for &n in ns {
        let k = default_k(n);
        let cfg = parse_config_str(&format!(r#"{{"n": {n}, "k": {k}, "seed": {seed}}}"#))?;
        let tree = tree_for_config(&cfg)?;
        let mask = AttentionMask::new(&tree);
        let stage = tree.depth();
        let values = (0..trials)
            .into_par_iter()
            .map(|trial| {
                let mut rng = stream_rng(seed, streams::LEMMA + 0x400 + n as u64, trial as u64);
                let mut params = ModelParams::<f64>::zeros(&tree, 16);
                for w in &mut params.weights {
                    for x in w.as_mut_slice() {
                        *x = rng.random_range(-2.0..2.0);
                    }
                }
                params.canonicalize(&mask);
                let batch = sample_with_seed(
                    &tree,
                    1,
                    StageTag::Train(stage),
                    SeedSpec::new(seed, streams::LEMMA + 0x500 + n as u64 * 1000 + trial as u64),
                )?;
                output_jacobian_norm(&params, &batch, &tree, &mask, stage)
            })
            .collect::<Result<Vec<f64>>>()?;
        all_finite &= values.iter().all(|v| v.is_finite());
        norms.push(values.iter().sum::<f64>() / trials as f64);
    }
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let slope = loglog_slope(&xs, &norms);
    let bound = std::f64::consts::PI.log2() + 1.5;
    Ok(LemmaReport::new(
        "grad_norm_scaling",
        json!({"n": ns, "k_rule": "largest power of two <= n/2", "trials": trials, "stage": "L"}),
        slope,
        bound,
        "log-log slope of ||grad_theta f^(L)||_2 over n <= log2(L_phi) + 1 + 1/2, L_phi = pi",
        all_finite && slope <= bound,
        vec![seed],
    )
    .with_details(json!({"mean_norms": norms})))
}

/// Trivial 4-tuple counts grow at most quadratically in `n`.
pub fn check_trivial_count(ns: &[usize], seed: u64) -> Result<LemmaReport> {
    let mut ratios = Vec::new();
    for &n in ns {
        let k = default_k(n);
        let cfg = parse_config_str(&format!(r#"{{"n": {n}, "k": {k}, "seed": {seed}}}"#))?;
        let tree = tree_for_config(&cfg)?;
        ratios.push(tree.count_trivial_4tuples(tree.root())? as f64 / (n * n) as f64);
    }
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    Ok(LemmaReport::new(
        "trivial_4tuples",
        json!({"n": ns, "m": "T"}),
        worst,
        16.0,
        "count of trivial 4-tuples over [T-1] / n^2 <= 16",
        worst <= 16.0,
        vec![seed],
    )
    .with_details(json!({"ratios": ratios})))
}

/// Every check at its reference parameters.
pub fn run_all(seed: u64) -> Result<Vec<LemmaReport>> {
    let mut out = Vec::new();
    out.push(check_collapse(64, 10_000, 100, 0.5, seed));
    out.push(check_kappa(16, 4, 4096, seed)?);

    let cfg = parse_config_str(&format!(r#"{{"n": 32, "k": 8, "eps": 0.5, "seed": {seed}}}"#))?;
    let tree = tree_for_config(&cfg)?;
    let eval = sample_with_seed(
        &tree,
        2000,
        StageTag::Train(1),
        SeedSpec::new(seed, streams::LEMMA + 0x600),
    )?;

    let trained = theory_snapshot(&cfg, &tree, tree.depth())?;
    let mut r = check_well_trained(&trained, &tree, &eval)?;
    r.id = "well_trained_theory".into();
    out.push(r);
    let mut r = check_well_trained(&ModelParams::planted(&tree, 16, 50.0), &tree, &eval)?;
    r.id = "well_trained_planted".into();
    out.push(r);
    let mut r = check_well_trained(&ModelParams::zeros(&tree, 16), &tree, &eval)?;
    r.id = "well_trained_zero".into();
    if r.status == Status::Fail {
        r.status = Status::ExpectedFail;
    }
    out.push(r);

    let after_one = theory_snapshot(&cfg, &tree, 1)?;
    out.push(check_frozen(&after_one, &tree, &cfg, 1)?);
    let small = parse_config_str(&format!(
        r#"{{"n": 32, "k": 8, "eps": 0.5, "kn_mode": {{"fixed": 1}}, "seed": {seed}}}"#
    ))?;
    let small_params = theory_snapshot(&small, &tree, 1)?;
    out.push(check_frozen(&small_params, &tree, &small, 1)?);

    let stage = tree.depth();
    let padded = eval.repad(&tree, StageTag::Train(stage))?;
    out.push(check_hidden_state(
        &ModelParams::planted(&tree, 16, 16.0),
        &tree,
        stage,
        &padded,
    )?);

    out.push(check_grad_norm_scaling(&[8, 16, 32, 64], 3, seed)?);
    out.push(check_trivial_count(&[8, 16, 32], seed)?);
    Ok(out)
}
