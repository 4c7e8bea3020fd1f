//! `acc`: corpus synthesis, training, evaluation and reports.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use acc_core::config::RunConfig;
use acc_core::corpus::{class_histogram, synthesize_corpus, Manifest, SynthSpec};
use acc_core::evaluation::{emit_report, summary, ReportFormat};
use acc_core::experiment::{combine, eval_checkpoint, load_result, save_result, train_fold, Split};
use acc_core::phonology::{Dimension, PhonemeMap};
use acc_core::training::{FoldPolicy, TrainOptions};
use acc_tensor::Checkpoint;
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "acc", version, about = "Articulatory phonology classification from vocal-tract video and speech")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a deterministic synthetic corpus.
    Synth {
        /// TOML synthesis spec; defaults apply to missing keys.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Frames per phonological class.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        dimension: Option<Dimension>,
        #[command(flatten)]
        common: Common,
    },
    /// Train one mode on one fold.
    Train(TrainArgs),
    /// Evaluate a checkpoint on its fold.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Defaults to the fold the checkpoint was trained on.
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Comma-separated: csv, svg.
        #[arg(long, value_delimiter = ',', default_value = "csv")]
        report: Vec<ReportFormat>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        phoneme_map: Option<PathBuf>,
    },
    /// Combine saved evaluation results into tables and charts.
    Report {
        /// Result files written by `acc eval`.
        #[arg(required = true)]
        results: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "csv,svg")]
        format: Vec<ReportFormat>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML). Flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    phoneme_map: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    dimension: Dimension,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    fold: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    fold_policy: Option<String>,
    #[arg(long, default_value = "run")]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn load_map(path: Option<&Path>) -> Result<PhonemeMap> {
    Ok(match path {
        Some(p) => PhonemeMap::load(p)?,
        None => PhonemeMap::default(),
    })
}

fn cmd_synth(spec: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut spec = match spec {
        Some(p) => SynthSpec::load(p)?,
        None => SynthSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let manifest = synthesize_corpus(&spec, out)?;
    println!("{}", out.join("manifest.json").display());
    let map = PhonemeMap::default();
    for d in Dimension::ALL {
        println!("\n{}", class_histogram(&manifest, d, spec.fps, &map)?);
    }
    Ok(())
}

fn cmd_stats(manifest: &Path, dimension: Option<Dimension>, common: &Common) -> Result<()> {
    let cfg = load_config(common.config.as_deref())?;
    let map = load_map(common.phoneme_map.as_deref())?;
    let manifest = Manifest::load(manifest)?;
    let dims = dimension.map_or(Dimension::ALL.to_vec(), |d| vec![d]);
    for (i, d) in dims.into_iter().enumerate() {
        if i > 0 {
            println!();
        }
        println!("{}", class_histogram(&manifest, d, cfg.data.fps, &map)?);
    }
    Ok(())
}

fn resolve_train_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = load_config(a.common.config.as_deref())?;
    cfg.model.mode.dimension = a.dimension;
    if let Some(m) = &a.mode {
        cfg.model.mode.mode = acc_core::model::lookup(m)?.name().into();
    }
    if let Some(f) = a.fold {
        cfg.train.fold = f;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr = lr;
    }
    if let Some(p) = &a.fold_policy {
        cfg.train.fold_policy = match p.as_str() {
            "default" => FoldPolicy::Default,
            "paper-literal" => FoldPolicy::PaperLiteral,
            other => return Err(acc_core::Error::Config(format!("unknown fold policy {other:?} (default | paper-literal)")).into()),
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = resolve_train_config(a)?;
    let map = load_map(a.common.phoneme_map.as_deref())?;
    let manifest = Manifest::load(&a.manifest)?;
    print!("{}", cfg.to_toml());
    println!("# config hash {}", cfg.hash_hex());
    std::fs::create_dir_all(&a.out).with_context(|| a.out.display().to_string())?;
    let resolved = a.out.join("run.toml");
    std::fs::write(&resolved, cfg.to_toml()).with_context(|| resolved.display().to_string())?;
    let opts = TrainOptions { dump_dir: Some(a.out.clone()) };
    let outcome = train_fold(&manifest, &cfg, &map, &opts)?;
    for p in outcome.write(&a.out)? {
        println!("wrote {}", p.display());
    }
    if let Some(e) = outcome.history.epochs.get(outcome.best_epoch - 1) {
        println!("best epoch {} (val macro-F1 {})", e.epoch, e.val_macro_f1.map_or("n/a".into(), |f| format!("{f:.4}")));
    }
    Ok(())
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("reading checkpoint {}", path.display()))
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    checkpoint: &Path,
    manifest: &Path,
    fold: Option<usize>,
    split: Split,
    report: &[ReportFormat],
    out: &Path,
    phoneme_map: Option<&Path>,
) -> Result<()> {
    let ck = read_checkpoint(checkpoint)?;
    let map = load_map(phoneme_map)?;
    let manifest = Manifest::load(manifest)?;
    let result = eval_checkpoint(&ck, &manifest, fold, split, &map)?;
    println!("{}", summary(&result));
    std::fs::create_dir_all(out).with_context(|| out.display().to_string())?;
    let f = &result.folds[0];
    let json = out.join(format!("eval_{}_{}_fold{}_{}.json", result.mode, result.dimension, f.fold, f.split));
    save_result(&result, &json)?;
    println!("wrote {}", json.display());
    for p in emit_report(std::slice::from_ref(&result), out, report)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_report(results: &[PathBuf], formats: &[ReportFormat], out: &Path) -> Result<()> {
    let loaded = results.iter().map(|p| load_result(p)).collect::<acc_core::Result<Vec<_>>>()?;
    let merged = combine(loaded);
    for r in &merged {
        println!("{}\n", summary(r));
    }
    for p in emit_report(&merged, out, formats)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth { spec, seed, out } => cmd_synth(spec.as_deref(), *seed, out),
        Command::Stats { manifest, dimension, common } => cmd_stats(manifest, *dimension, common),
        Command::Train(a) => cmd_train(a),
        Command::Eval { checkpoint, manifest, fold, split, report, out, phoneme_map } => {
            cmd_eval(checkpoint, manifest, *fold, *split, report, out, phoneme_map.as_deref())
        }
        Command::Report { results, format, out } => cmd_report(results, format, out),
    }
}

/// 2 usage/config, 3 data, 4 numeric.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<acc_core::Error>() {
        Some(acc_core::Error::Config(_)) => 2,
        Some(acc_core::Error::NonFiniteLoss { .. }) => 4,
        Some(_) => 3,
        None if err.downcast_ref::<acc_tensor::TensorError>().is_some() => 3,
        None => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = Cli::parse();
    if let Some(n) = std::env::var("ACC_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("ACC_THREADS ignored: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
