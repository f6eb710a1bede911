use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use loglab_core::grad::summarize;
use loglab_core::io::{self, Manifest};
use loglab_core::lemmas::{self, Status};
use loglab_core::model::attention_maps;
use loglab_core::train::{train, tree_for_config};
use loglab_core::{
    grad_reverse, make_test_batch, parse_config, sample_batch, AttentionMask, Mode, Params, ParityTree, TrainConfig,
};

/// Curriculum training lab for k-parity with a level-restricted attention model.
#[derive(Parser)]
#[command(name = "loglab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One quantized gradient step per stage.
    RunTheory(RunArgs),
    /// Adaptive-moment training, many steps per stage.
    RunGd(RunArgs),
    /// Score saved params on a fresh test batch.
    Eval {
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        size: usize,
    },
    /// Run the lemma checks and write their reports.
    VerifyLemmas {
        #[arg(long, default_value = "lemma_report.json")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Attention matrices of saved params as CSV and SVG.
    ExportAttn {
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value = "attn")]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("LOGLAB_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("LOGLAB_THREADS={v} is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(args: &RunArgs, mode: Mode, command: &str) -> Result<()> {
    let mut config: TrainConfig =
        parse_config(&args.config).with_context(|| format!("reading config {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.mode = mode;
    let tree = tree_for_config(&config)?;
    let (params, record) = train::<f64>(&config, &tree)?;
    let dir = &args.out_dir;
    fs::create_dir_all(dir)?;
    let mut names = vec!["params.json", "loss.csv", "record.json"];
    io::save_params(&params, &tree, dir.join("params.json"))?;
    io::write_loss_csv(&record.loss_curve, dir.join("loss.csv"))?;
    io::write_json(&record.without_timing(), dir.join("record.json"))?;
    if mode == Mode::Theory {
        let mask = AttentionMask::new(&tree);
        let batch = sample_batch(config.seed, config.batch(), &tree, 1)?;
        let g = grad_reverse(&Params::zeros(&tree, config.kn()), &batch, &tree, &mask, 1)?;
        io::write_json(&summarize(&g, &tree, &mask), dir.join("gradient.json"))?;
        names.push("gradient.json");
    }
    let mut manifest = Manifest::for_run(command, &record);
    manifest.hash_outputs(dir, &names)?;
    io::write_json(&manifest, dir.join("manifest.json"))?;
    println!(
        "{command}: n={} k={} secret={:?} test acc={} linf={:.3e} ({:.1}s) -> {}",
        tree.n(),
        tree.k(),
        record.secret,
        record.test.sign_accuracy,
        record.test.linf_error,
        record.wall_time_s,
        dir.display()
    );
    Ok(())
}

fn eval(path: &Path, seed: u64, size: usize) -> Result<()> {
    let (params, tree) = io::load_params(path).with_context(|| format!("loading {}", path.display()))?;
    let test = make_test_batch(seed, size, &tree)?;
    let result = loglab_core::evaluate(&params, &tree, &AttentionMask::new(&tree), &test)?;
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}

fn verify(out: &Path, seed: u64) -> Result<bool> {
    let start = Instant::now();
    let reports = lemmas::run_all(seed)?;
    io::write_json(&reports, out)?;
    for r in &reports {
        let status = match r.status {
            Status::Pass => "pass",
            Status::Fail => "FAIL",
            Status::ExpectedFail => "expected-fail",
            Status::Inapplicable => "inapplicable",
        };
        println!("{:<20} {:<14} {:.4e} vs {:.4e}", r.id, status, r.statistic, r.bound);
    }
    let bad = reports.iter().filter(|r| r.is_unexpected_failure()).count();
    println!(
        "{} reports, {bad} unexpected failures ({:.1}s)",
        reports.len(),
        start.elapsed().as_secs_f64()
    );
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        let name = out.file_name().and_then(|s| s.to_str()).unwrap_or("lemma_report.json");
        let mut manifest = Manifest::new("verify-lemmas", seed);
        manifest.hash_outputs(dir, &[name])?;
        manifest.wall_time_s = start.elapsed().as_secs_f64();
        io::write_json(&manifest, dir.join("lemma_manifest.json"))?;
    }
    Ok(bad == 0)
}

fn export_attn(path: &Path, dir: &Path) -> Result<()> {
    let (params, tree): (Params, ParityTree) = io::load_params(path)?;
    fs::create_dir_all(dir)?;
    let mut names = Vec::new();
    for (l, a) in attention_maps(&params, &AttentionMask::new(&tree)).iter().enumerate() {
        let csv = format!("attn_layer{}.csv", l + 1);
        let svg = format!("attn_layer{}.svg", l + 1);
        io::write_matrix_csv(a, dir.join(&csv))?;
        io::emit_heatmap(a, &tree, dir.join(&svg))?;
        names.push(csv);
        names.push(svg);
    }
    let mut manifest = Manifest::new("export-attn", 0);
    manifest.secret = tree.secret_one_based();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    manifest.hash_outputs(dir, &refs)?;
    io::write_json(&manifest, dir.join("manifest.json"))?;
    println!("wrote {} layers to {}", tree.depth(), dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match &cli.command {
        Command::RunTheory(a) => run(a, Mode::Theory, "run-theory").map(|()| true),
        Command::RunGd(a) => run(a, Mode::Experiment, "run-gd").map(|()| true),
        Command::Eval { params, seed, size } => {
            if *size == 0 {
                bail!("--size must be at least 1");
            }
            eval(params, *seed, *size).map(|()| true)
        }
        Command::VerifyLemmas { out, seed } => verify(out, *seed),
        Command::ExportAttn { params, out_dir } => export_attn(params, out_dir).map(|()| true),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
