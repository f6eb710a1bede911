//! Acceptance criteria. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits nonzero if any fails.

#[path = "../../core/tests/common/literal.rs"]
mod literal;

use std::process::{Command, ExitCode};
use std::time::Instant;

use loglab_core::config::theory_oracle_eps;
use loglab_core::grad::{relative_error, summarize};
use loglab_core::lemmas;
use loglab_core::train::{train, tree_for_config, weights_hash};
use loglab_core::{
    analytic_signal, forward, grad_fd, grad_reverse, parse_config_str, sample_batch, AttentionMask, CosineLink, Params,
    ParityTree, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_params(tree: &ParityTree, scale: f64, rng: &mut ChaCha8Rng) -> Params {
    let mut p = Params::zeros(tree, 16);
    for w in &mut p.weights {
        for x in w.as_mut_slice() {
            *x = rng.random_range(-scale..=scale);
        }
    }
    p
}

fn experiment_replication() -> Outcome {
    let cfg = parse_config_str(r#"{"n": 30, "k": 16, "mode": "experiment", "seed": 0}"#).unwrap();
    let tree = tree_for_config(&cfg).unwrap();
    let start = Instant::now();
    let (_, rec) = train::<f64>(&cfg, &tree).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let acc = rec.loss_curve.last().map_or(0.0, |r| r.val_acc);
    let mut spikes = Vec::new();
    let mut ok = acc >= 0.99 && rec.loss_curve.len() == 80 && tree.depth() == 4 && secs <= 600.0;
    for s in &rec.stages[1..] {
        let (pre, at) = (s.pre_boundary_val_loss.unwrap(), s.boundary_val_loss.unwrap());
        spikes.push(format!("{:.1e}x", at / pre));
        ok &= at >= 3.0 * pre && s.final_val_loss < 0.05;
    }
    outcome(
        ok,
        format!(
            "val acc {acc}, test acc {}, rows {}, spikes [{}], final val losses [{}], {secs:.1}s",
            rec.test.sign_accuracy,
            rec.loss_curve.len(),
            spikes.join(", "),
            rec.stages
                .iter()
                .map(|s| format!("{:.1e}", s.final_val_loss))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

fn theory_config(seed: u64) -> TrainConfig {
    parse_config_str(&format!(
        r#"{{"n": 32, "k": 8, "eps": 0.5, "kn_mode": {{"fixed": 16}}, "seed": {seed}}}"#
    ))
    .unwrap()
}

fn exact_children(params: &Params, tree: &ParityTree) -> bool {
    (1..=tree.depth()).all(|l| {
        let w = params.layer(l);
        tree.level_range(l + 1).all(|m| {
            let (a, b) = tree.children(m).unwrap();
            (0..tree.len()).all(|j| {
                let want = if j == a || j == b { 16.0 } else { 0.0 };
                w.get(j, m) == want
            })
        })
    })
}

fn theory_convergence() -> Outcome {
    let start = Instant::now();
    let (mut a, mut b, mut c) = (0, 0, 0);
    let mut accs = Vec::new();
    for seed in 0..20 {
        let cfg = theory_config(seed);
        assert_eq!(cfg.batch(), 5793);
        let tree = tree_for_config(&cfg).unwrap();
        let (params, rec) = train::<f64>(&cfg, &tree).unwrap();
        a += exact_children(&params, &tree) as usize;
        b += (rec.test.sign_accuracy == 1.0) as usize;
        c += (rec.test.linf_error <= 1e-6) as usize;
        accs.push(rec.test.sign_accuracy);
    }
    let secs = start.elapsed().as_secs_f64();
    let mean_acc = accs.iter().sum::<f64>() / accs.len() as f64;
    outcome(
        a >= 18 && b >= 18 && c >= 18 && secs <= 120.0,
        format!("(a) exact children {a}/20, (b) acc = 1 {b}/20, (c) linf <= 1e-6 {c}/20, mean acc {mean_acc:.3}, {secs:.1}s"),
    )
}

fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xfd);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for i in 0..20u64 {
        let mut secret: Vec<usize> = (0..8).collect();
        for j in (1..8).rev() {
            secret.swap(j, rng.random_range(0..=j));
        }
        let tree = ParityTree::new(8, 4, &secret[..4]).unwrap();
        let mask = AttentionMask::new(&tree);
        let params = random_params(&tree, 3.0, &mut rng);
        for t in 1..=tree.depth() {
            let batch = sample_batch(i, 16, &tree, t).unwrap();
            let g = grad_reverse(&params, &batch, &tree, &mask, t).unwrap();
            let fd = grad_fd(&params, &batch, &tree, &mask, t, 1e-5).unwrap();
            worst = worst.max(relative_error(&g, &fd, 1e-8));
            count += 1;
        }
    }
    outcome(
        worst <= 1e-6,
        format!("{count} instances, worst relative linf error {worst:.2e}"),
    )
}

fn gradient_signal() -> Outcome {
    let c = std::f64::consts::PI.powi(2) / 2.0;
    let mut good = 0;
    let mut ratio_range = (f64::INFINITY, f64::NEG_INFINITY);
    let mut worst_leak: f64 = 0.0;
    for seed in 0..20 {
        let tree = tree_for_config(&theory_config(seed)).unwrap();
        let mask = AttentionMask::new(&tree);
        let batch = sample_batch(seed, 32usize.pow(3), &tree, 1).unwrap();
        let g = grad_reverse(&Params::zeros(&tree, 16), &batch, &tree, &mask, 1).unwrap();
        let target = -2.0 * c / (32.0 * 32.0);
        let mut ok = true;
        for col in summarize(&g, &tree, &mask).columns.iter().filter(|c| c.layer == 1) {
            let (a, _) = tree.children(col.query - 1).unwrap();
            assert_eq!(
                analytic_signal::<f64>(&tree, 1, col.query - 1, a, &CosineLink).unwrap(),
                target
            );
            for v in col.child_values {
                let r = v / target;
                ratio_range = (ratio_range.0.min(r), ratio_range.1.max(r));
                ok &= v < 0.0 && (0.8..=1.2).contains(&r);
            }
            let child = col.child_values[0].abs().min(col.child_values[1].abs());
            worst_leak = worst_leak.max(col.max_nonchild_abs / child);
            ok &= col.max_nonchild_abs <= 0.25 * child;
        }
        good += ok as usize;
    }
    outcome(
        good >= 18,
        format!(
            "{good}/20 seeds, child/(-2c/n^2) in [{:.3}, {:.3}], worst non-child/child {worst_leak:.3}",
            ratio_range.0, ratio_range.1
        ),
    )
}

fn lemma_suite() -> Outcome {
    let start = Instant::now();
    let reports = lemmas::run_all(0).unwrap();
    let failing: Vec<String> = reports
        .iter()
        .filter(|r| r.is_unexpected_failure())
        .map(|r| format!("{} ({:.3e} vs {:.3e})", r.id, r.statistic, r.bound))
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_loglab"))
        .args(["verify-lemmas", "--out"])
        .arg(dir.path().join("report.json"))
        .output()
        .unwrap()
        .status;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        failing.is_empty() && status.success() && secs <= 300.0,
        format!(
            "{} reports, failing [{}], verify-lemmas exit {:?}, {secs:.1}s",
            reports.len(),
            failing.join(", "),
            status.code()
        ),
    )
}

fn oracle_robustness() -> Outcome {
    let eps = theory_oracle_eps(32, 0.5);
    let mut same = 0;
    let mut diffs = Vec::new();
    for seed in 0..20 {
        let clean = theory_config(seed);
        let mut noisy = clean.clone();
        noisy.oracle_eps = eps;
        let tree = tree_for_config(&clean).unwrap();
        let (p0, _) = train::<f64>(&clean, &tree).unwrap();
        let (p1, _) = train::<f64>(&noisy, &tree).unwrap();
        same += (weights_hash(&p0) == weights_hash(&p1)) as usize;
        let differing: usize = p0
            .weights
            .iter()
            .zip(&p1.weights)
            .map(|(a, b)| a.as_slice().iter().zip(b.as_slice()).filter(|(x, y)| x != y).count())
            .sum();
        diffs.push(differing);
    }
    diffs.sort_unstable();
    outcome(
        same >= 18,
        format!(
            "{same}/20 seeds identical at eps_acc = {eps:.3e}, median differing logits {}",
            diffs[10]
        ),
    )
}

fn dual_implementation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xd0a1);
    let mut worst: f64 = 0.0;
    for draw in 0..100u64 {
        let a = rng.random_range(0..4);
        let b = (a + rng.random_range(1..4)) % 4;
        let tree = ParityTree::new(4, 2, &[a, b]).unwrap();
        let params = random_params(&tree, 5.0, &mut rng);
        let stage = 1;
        let batch = sample_batch(draw, 3, &tree, stage).unwrap();
        let stream = forward(&params, &batch, &tree, &AttentionMask::new(&tree)).unwrap();
        let lit = literal::run(&params, &tree, &batch);
        for m in 0..tree.len() {
            for block in 0..=tree.depth() {
                for (x, y) in stream.x(m, block).iter().zip(lit.block(m, block + 1)) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
    }
    outcome(
        worst <= 1e-12,
        format!("100 draws, max |block - literal| = {worst:.2e}"),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("experiment replication", experiment_replication),
        ("theory-mode convergence", theory_convergence),
        ("gradient correctness", gradient_correctness),
        ("gradient signal", gradient_signal),
        ("lemma suite", lemma_suite),
        ("oracle robustness", oracle_robustness),
        ("dual implementation", dual_implementation),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        failed += !o.pass as usize;
        println!("{tag} {name}: {} [{:.1}s]", o.detail, start.elapsed().as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
