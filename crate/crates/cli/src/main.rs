//! `merw` — orchestrates the robustness study: data preparation, multi-seed
//! training, evaluation attacks, and report generation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use merw_core::config::{DataSource, ExperimentConfig};
use merw_core::data::cache::store_dataset;
use merw_core::data::synth::synth_dataset;
use merw_core::data::make_split;
use merw_core::experiment::{run_experiment, RunArtifacts};
use merw_core::gradcheck::{run_suite, FD_STEP, FD_TOL};
use merw_core::models::Variant;
use merw_core::pipeline::{
    evaluate_run, load_samples, read_predictions_csv, resolve_cache_dir, variant_runs,
};
use merw_core::report::{robustness_report, VariantPredictions};
use merw_core::{Error, Result};

#[derive(Parser)]
#[command(name = "merw", version, about = "Music-emotion robustness workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config file (JSON).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration; `toy` is a desk-scale synthetic study.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Output directory for all artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Toy,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    A2e,
    A2b2e,
    A2m2e,
}

impl VariantArg {
    fn variant(self) -> Variant {
        match self {
            VariantArg::A2e => Variant::A2E,
            VariantArg::A2b2e => Variant::A2B2E,
            VariantArg::A2m2e => Variant::A2M2E,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Preprocess the configured data source into the spectrogram cache.
    Prepare {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Generate a synthetic dataset into a cache directory.
    Synth {
        /// Number of samples.
        #[arg(long, default_value_t = 400)]
        n: usize,
        /// Spectrogram rows.
        #[arg(long, default_value_t = 32)]
        bands: usize,
        /// Spectrogram columns.
        #[arg(long, default_value_t = 64)]
        frames: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Cache directory to write into.
        #[arg(long, default_value = "out/cache")]
        out: PathBuf,
    },
    /// Train the experiment grid (or one variant of it) across seeds.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Restrict to one architecture.
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        /// Select the adversarially trained row of the chosen architecture.
        #[arg(long)]
        adversarial: bool,
        /// Override the number of seeds per variant.
        #[arg(long)]
        seeds: Option<usize>,
        /// Parallel training workers.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Attack trained checkpoints on the test split and persist predictions.
    Attack {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        #[arg(long)]
        adversarial: bool,
    },
    /// Assemble the report bundle from persisted predictions.
    Report {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Verify analytic gradients against finite differences.
    Gradcheck {
        /// Number of random seeds to sweep.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    match (&args.config, args.preset) {
        (Some(path), None) => ExperimentConfig::load(path),
        (None, Some(Preset::Toy)) => Ok(ExperimentConfig::toy_preset()),
        (None, None) => Err(Error::config(
            "no configuration given; pass --config PATH or --preset toy".to_string(),
        )),
        (Some(_), Some(_)) => unreachable!("clap rejects --config with --preset"),
    }
}

/// Grid rows matching the optional --variant/--adversarial selection.
fn select_labels(
    cfg: &ExperimentConfig,
    variant: Option<VariantArg>,
    adversarial: bool,
) -> Result<Vec<String>> {
    let selected: Vec<String> = cfg
        .variants
        .iter()
        .filter(|e| {
            variant.is_none_or(|v| e.variant == v.variant())
                && (variant.is_none() || e.train.adversarial.is_some() == adversarial)
        })
        .map(|e| e.label.clone())
        .collect();
    if selected.is_empty() {
        return Err(Error::config(format!(
            "config defines no {}variant matching the selection",
            if adversarial { "adversarially trained " } else { "" }
        )));
    }
    Ok(selected)
}

fn trained_artifacts(cfg: &ExperimentConfig, out: &Path, labels: &[String]) -> Vec<RunArtifacts> {
    let mut arts = Vec::new();
    for entry in cfg.variants.iter().filter(|e| labels.contains(&e.label)) {
        for seed in 0..entry.train.n_seeds as u64 {
            let dir = out.join(&entry.label).join(seed.to_string());
            arts.push(RunArtifacts {
                label: entry.label.clone(),
                seed,
                checkpoint: dir.join(merw_core::experiment::CHECKPOINT_FILE),
                trainlog: dir.join(merw_core::experiment::TRAINLOG_FILE),
                dir,
            });
        }
    }
    arts
}

fn cmd_prepare(args: &ConfigArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let cache = resolve_cache_dir(&args.out);
    let samples = load_samples(&cfg, &cache)?;
    // audio sources are cached by load_samples; synthetic ones are cheap to
    // regenerate but are materialized here too so the manifest is inspectable
    if matches!(cfg.source, DataSource::Synthetic { .. }) {
        store_dataset(&cache, &samples)?;
    }
    println!("prepared {} samples, cache at {}", samples.len(), cache.display());
    Ok(())
}

fn cmd_train(
    args: &ConfigArgs,
    variant: Option<VariantArg>,
    adversarial: bool,
    seeds: Option<usize>,
    workers: usize,
) -> Result<()> {
    let mut cfg = load_config(args)?;
    if let Some(n) = seeds {
        for entry in &mut cfg.variants {
            entry.train.n_seeds = n;
        }
        cfg.validate()?;
    }
    let labels = select_labels(&cfg, variant, adversarial)?;
    let data = load_samples(&cfg, &resolve_cache_dir(&args.out))?;
    let split = make_split(data.len(), cfg.split_seed)?;
    let runs: Vec<_> =
        variant_runs(&cfg).into_iter().filter(|r| labels.contains(&r.label)).collect();
    let arts = run_experiment(&runs, &data, &split, &args.out, workers)?;
    cfg.save(&args.out.join("experiment.json"))?;
    for a in &arts {
        println!("trained {}/{} -> {}", a.label, a.seed, a.checkpoint.display());
    }
    Ok(())
}

fn cmd_attack(args: &ConfigArgs, variant: Option<VariantArg>, adversarial: bool) -> Result<()> {
    let cfg = load_config(args)?;
    let labels = select_labels(&cfg, variant, adversarial)?;
    let data = load_samples(&cfg, &resolve_cache_dir(&args.out))?;
    let split = make_split(data.len(), cfg.split_seed)?;
    for entry in cfg.variants.iter().filter(|e| labels.contains(&e.label)) {
        let spec = cfg.spec_for(entry);
        for a in trained_artifacts(&cfg, &args.out, std::slice::from_ref(&entry.label)) {
            if !a.checkpoint.exists() {
                return Err(Error::ingestion(
                    &a.checkpoint,
                    format!("no checkpoint for {}/{}; run `merw train` first", a.label, a.seed),
                ));
            }
            let preds = evaluate_run(&spec, &a, &data, &split, &cfg.eval_attack)?;
            let snr: Vec<f64> =
                preds.snr_db.iter().flatten().filter_map(|s| *s).collect();
            let mean_snr = if snr.is_empty() {
                "unperturbed".to_string()
            } else {
                format!("{:.2} dB mean SNR", snr.iter().sum::<f64>() / snr.len() as f64)
            };
            println!("attacked {}/{}: {} test samples, {}", a.label, a.seed, preds.clip_ids.len(), mean_snr);
        }
    }
    Ok(())
}

fn cmd_report(args: &ConfigArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let mut variants = Vec::new();
    for entry in &cfg.variants {
        let mut seeds = Vec::new();
        for a in trained_artifacts(&cfg, &args.out, std::slice::from_ref(&entry.label)) {
            let csv_path = a.dir.join("predictions.csv");
            if csv_path.exists() {
                seeds.push(read_predictions_csv(&csv_path, a.seed)?);
            }
        }
        if !seeds.is_empty() {
            variants.push(VariantPredictions { label: entry.label.clone(), seeds });
        }
    }
    if variants.is_empty() {
        return Err(Error::ingestion(
            args.out.clone(),
            "no predictions found for any variant; run `merw attack` first".to_string(),
        ));
    }
    let report_dir = args.out.join("report");
    let report = robustness_report(&variants, &report_dir)?;
    println!("report for {} variants -> {}", report.variants.len(), report_dir.display());
    for gap in &report.gaps {
        println!("gap: {gap}");
    }
    Ok(())
}

fn cmd_gradcheck(seeds: u64) -> Result<()> {
    let results = run_suite(0..seeds, FD_STEP, FD_TOL)?;
    let mut failed = false;
    for r in &results {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!(
            "{status:4} {:<24} max rel err {:.3e} (tol {:.0e}, {} of {} coords skipped at kinks)",
            r.name, r.max_rel_err, r.tol, r.skipped, r.total
        );
        failed |= !r.passed();
    }
    if failed {
        return Err(Error::numerical("gradient check failed".to_string()));
    }
    println!("all {} checks passed over {seeds} seeds", results.len());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare { cfg } => cmd_prepare(&cfg),
        Command::Synth { n, bands, frames, seed, out } => {
            let samples = synth_dataset(n, (bands, frames), seed)?;
            let manifest = store_dataset(&out, &samples)?;
            println!("wrote {} samples to {}", manifest.entries.len(), out.display());
            Ok(())
        }
        Command::Train { cfg, variant, adversarial, seeds, workers } => {
            cmd_train(&cfg, variant, adversarial, seeds, workers)
        }
        Command::Attack { cfg, variant, adversarial } => cmd_attack(&cfg, variant, adversarial),
        Command::Report { cfg } => cmd_report(&cfg),
        Command::Gradcheck { seeds } => cmd_gradcheck(seeds),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
