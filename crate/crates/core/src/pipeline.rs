//! End-to-end glue: materializes samples from a configured source (with an
//! on-disk cache for audio), evaluates trained runs on the test split
//! (clean + attacked predictions, persisted deltas), and assembles the
//! report bundle.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::attack::{bim_attack, save_perturbation, AttackConfig};
use crate::config::{DataSource, ExperimentConfig};
use crate::data::annotations::{load_annotations, normalize_targets};
use crate::data::audio::{crop_10s, load_audio, SAMPLE_RATE};
use crate::data::cache::{load_dataset, store_dataset, CacheManifest};
use crate::data::spectrogram::spectrogram;
use crate::data::synth::synth_dataset;
use crate::data::{make_split, DatasetSplit, Sample, N_EMOTIONS};
use crate::error::{Error, Result};
use crate::experiment::{load_run, run_experiment, RunArtifacts, VariantRun};
use crate::models::{predict, ModelSpec};
use crate::metrics::snr_db;
use crate::report::{robustness_report, RunReport, SeedPredictions, VariantPredictions};
use crate::tensor::Tensor;
use crate::train::make_batch;

/// Environment variable overriding where preprocessed spectrograms are cached.
pub const CACHE_DIR_ENV: &str = "MERW_CACHE_DIR";

/// Evaluation batch size; fixed so results do not depend on training config.
pub const EVAL_BATCH: usize = 8;

/// Cache directory for an output tree, honoring the env override.
pub fn resolve_cache_dir(out_dir: &Path) -> PathBuf {
    match std::env::var_os(CACHE_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => out_dir.join("cache"),
    }
}

fn wav_path(audio_dir: &Path, clip_id: &str) -> PathBuf {
    audio_dir.join(format!("{clip_id}.wav"))
}

/// Preprocesses every annotated clip into a model-ready sample, reusing the
/// cache when it already covers all clip ids. Crop offsets are a pure
/// function of the clip id, so reruns are reproducible.
pub fn prepare_audio_samples(
    audio_dir: &Path,
    emotion_csv: &Path,
    midlevel_csv: Option<&Path>,
    cache_dir: &Path,
) -> Result<Vec<Sample>> {
    let table = normalize_targets(&load_annotations(emotion_csv, midlevel_csv)?)?;
    let clip_ids: Vec<String> = table.rows.iter().map(|r| r.clip_id.clone()).collect();

    if let Ok(manifest) = CacheManifest::load(cache_dir) {
        if manifest.is_complete_for(&clip_ids) {
            let mut by_id: HashMap<String, Sample> =
                load_dataset(cache_dir)?.into_iter().map(|s| (s.clip_id.clone(), s)).collect();
            return clip_ids
                .iter()
                .map(|id| {
                    by_id.remove(id).ok_or_else(|| {
                        Error::ingestion(cache_dir, format!("cache lost clip {id}"))
                    })
                })
                .collect();
        }
    }

    if !audio_dir.is_dir() {
        return Err(Error::ingestion(audio_dir, "audio directory does not exist".to_string()));
    }
    let has_wavs = fs::read_dir(audio_dir)?
        .filter_map(|e| e.ok())
        .any(|e| e.path().extension().is_some_and(|x| x == "wav"));
    if !has_wavs {
        return Err(Error::ingestion(
            audio_dir,
            "no .wav files found; expected one <clip_id>.wav per row of the annotation CSV"
                .to_string(),
        ));
    }

    let mut samples = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let path = wav_path(audio_dir, &row.clip_id);
        if !path.exists() {
            return Err(Error::ingestion(
                &path,
                format!("clip {} is annotated but has no audio file", row.clip_id),
            ));
        }
        let waveform = load_audio(&path)?;
        let (crop, offset, _padded) = crop_10s(&waveform, 0, &row.clip_id)?;
        let spec = spectrogram(&crop, SAMPLE_RATE)?;
        let sample = Sample {
            clip_id: row.clip_id.clone(),
            spectrogram: spec,
            y_emotion: row.emotions.iter().map(|&v| v as f32).collect(),
            y_midlevel: row.midlevel.as_ref().map(|m| m.iter().map(|&v| v as f32).collect()),
            crop_offset_seconds: offset as f64 / SAMPLE_RATE as f64,
        };
        sample.validate()?;
        samples.push(sample);
    }
    store_dataset(cache_dir, &samples)?;
    Ok(samples)
}

/// Materializes the configured data source. Synthetic sources are generated
/// in memory; audio sources go through the preprocessing cache.
pub fn load_samples(cfg: &ExperimentConfig, cache_dir: &Path) -> Result<Vec<Sample>> {
    match &cfg.source {
        DataSource::Synthetic { n, bands, frames, seed } => {
            synth_dataset(*n, (*bands, *frames), *seed)
        }
        DataSource::Audio { audio_dir, emotion_csv, midlevel_csv } => {
            prepare_audio_samples(audio_dir, emotion_csv, midlevel_csv.as_deref(), cache_dir)
        }
    }
}

/// Expands the config's variant grid into concrete runs.
pub fn variant_runs(cfg: &ExperimentConfig) -> Vec<VariantRun> {
    cfg.variants
        .iter()
        .map(|entry| VariantRun {
            label: entry.label.clone(),
            spec: cfg.spec_for(entry),
            cfg: entry.train.clone(),
        })
        .collect()
}

fn tensor_rows(t: &Tensor<f32>) -> Vec<Vec<f64>> {
    let cols: usize = t.shape()[1..].iter().product();
    t.data().chunks(cols).map(|row| row.iter().map(|&v| v as f64).collect()).collect()
}

/// Evaluates one trained seed on the test split: clean predictions, a BIM
/// attack per batch (deltas persisted under `<run dir>/delta/`), attacked
/// predictions, and per-sample SNR. Also writes `predictions.csv` in the
/// run directory.
pub fn evaluate_run(
    spec: &ModelSpec,
    artifacts: &RunArtifacts,
    data: &[Sample],
    split: &DatasetSplit,
    attack_cfg: &AttackConfig,
) -> Result<SeedPredictions> {
    let (params, _log) = load_run(artifacts, spec)?;
    let delta_dir = artifacts.dir.join("delta");
    fs::create_dir_all(&delta_dir)?;

    let n = split.test.len();
    let mut clip_ids = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    let mut clean = Vec::with_capacity(n);
    let mut attacked = Vec::with_capacity(n);
    let mut snrs = Vec::with_capacity(n);

    for (bi, chunk) in split.test.chunks(EVAL_BATCH).enumerate() {
        let (x, ye, ym) = make_batch(data, chunk)?;
        let clean_out = predict(&params, spec, &x)?;
        let p = bim_attack(&params, spec, &x, &ye, ym.as_ref(), attack_cfg)?;
        save_perturbation(&delta_dir.join(format!("batch_{bi:04}")), &x, &p, attack_cfg)?;
        let adv_x = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().zip(p.delta.data()).map(|(a, b)| a + b).collect(),
        )?;
        let adv_out = predict(&params, spec, &adv_x)?;

        let clean_rows = tensor_rows(&clean_out.emotions);
        let adv_rows = tensor_rows(&adv_out.emotions);
        let row_len: usize = x.shape()[1..].iter().product();
        for (r, &i) in chunk.iter().enumerate() {
            clip_ids.push(data[i].clip_id.clone());
            truth.push(data[i].y_emotion.iter().map(|&v| v as f64).collect());
            clean.push(clean_rows[r].clone());
            attacked.push(adv_rows[r].clone());
            let xs: Vec<f64> =
                x.data()[r * row_len..(r + 1) * row_len].iter().map(|&v| v as f64).collect();
            let ds: Vec<f64> =
                p.delta.data()[r * row_len..(r + 1) * row_len].iter().map(|&v| v as f64).collect();
            snrs.push(snr_db(&xs, &ds)?);
        }
    }

    let preds = SeedPredictions {
        seed: artifacts.seed,
        clip_ids,
        truth,
        clean,
        attacked: Some(attacked),
        snr_db: Some(snrs),
    };
    write_predictions_csv(&artifacts.dir.join("predictions.csv"), &preds)?;
    Ok(preds)
}

fn write_predictions_csv(path: &Path, p: &SeedPredictions) -> Result<()> {
    let csv_err = |e: csv::Error| Error::format(format!("predictions csv: {e}"));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["clip_id".to_string()];
    for prefix in ["truth", "clean", "attacked"] {
        for name in crate::data::EMOTION_NAMES {
            header.push(format!("{prefix}_{name}"));
        }
    }
    header.push("snr_db".to_string());
    w.write_record(&header).map_err(csv_err)?;
    for (i, id) in p.clip_ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        let attacked = p.attacked.as_ref().map(|a| &a[i]);
        for row in [Some(&p.truth[i]), Some(&p.clean[i]), attacked] {
            match row {
                Some(vals) => rec.extend(vals.iter().map(|v| format!("{v:.9}"))),
                None => rec.extend(std::iter::repeat_n(String::new(), N_EMOTIONS)),
            }
        }
        let snr = p.snr_db.as_ref().and_then(|s| s[i]);
        rec.push(snr.map(|v| format!("{v:.6}")).unwrap_or_default());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `predictions.csv` written by [`evaluate_run`] back into memory.
pub fn read_predictions_csv(path: &Path, seed: u64) -> Result<SeedPredictions> {
    let csv_err = |e: csv::Error| Error::format(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut clip_ids = Vec::new();
    let mut truth = Vec::new();
    let mut clean = Vec::new();
    let mut attacked = Vec::new();
    let mut snrs = Vec::new();
    let parse = |field: &str| -> Result<f64> {
        field
            .parse()
            .map_err(|_| Error::format(format!("{}: bad number {field:?}", path.display())))
    };
    for record in r.records() {
        let rec = record.map_err(csv_err)?;
        if rec.len() != 1 + 3 * N_EMOTIONS + 1 {
            return Err(Error::format(format!(
                "{}: expected {} columns, got {}",
                path.display(),
                2 + 3 * N_EMOTIONS,
                rec.len()
            )));
        }
        clip_ids.push(rec[0].to_string());
        let block = |offset: usize| -> Result<Vec<f64>> {
            (0..N_EMOTIONS).map(|i| parse(&rec[1 + offset * N_EMOTIONS + i])).collect()
        };
        truth.push(block(0)?);
        clean.push(block(1)?);
        attacked.push(block(2)?);
        let snr_field = &rec[1 + 3 * N_EMOTIONS];
        snrs.push(if snr_field.is_empty() { None } else { Some(parse(snr_field)?) });
    }
    Ok(SeedPredictions { seed, clip_ids, truth, clean, attacked: Some(attacked), snr_db: Some(snrs) })
}

/// Evaluates every trained run against the configured evaluation attack,
/// grouped by variant in config order.
pub fn evaluate_runs(
    cfg: &ExperimentConfig,
    data: &[Sample],
    split: &DatasetSplit,
    artifacts: &[RunArtifacts],
) -> Result<Vec<VariantPredictions>> {
    let mut out = Vec::with_capacity(cfg.variants.len());
    for entry in &cfg.variants {
        let spec = cfg.spec_for(entry);
        let mut seeds = Vec::new();
        for a in artifacts.iter().filter(|a| a.label == entry.label) {
            seeds.push(evaluate_run(&spec, a, data, split, &cfg.eval_attack)?);
        }
        if seeds.is_empty() {
            return Err(Error::config(format!(
                "no trained runs found for variant {}",
                entry.label
            )));
        }
        out.push(VariantPredictions { label: entry.label.clone(), seeds });
    }
    Ok(out)
}

/// Runs the whole study: prepare data, train the grid (resuming completed
/// cells), evaluate under attack, and write the report bundle under
/// `<out>/report/`.
pub fn full_pipeline(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    workers: usize,
) -> Result<RunReport> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    cfg.save(&out_dir.join("experiment.json"))?;
    let data = load_samples(cfg, &resolve_cache_dir(out_dir))?;
    let split = make_split(data.len(), cfg.split_seed)?;
    let runs = variant_runs(cfg);
    let artifacts = run_experiment(&runs, &data, &split, out_dir, workers)?;
    let predictions = evaluate_runs(cfg, &data, &split, &artifacts)?;
    robustness_report(&predictions, &out_dir.join("report"))
}
