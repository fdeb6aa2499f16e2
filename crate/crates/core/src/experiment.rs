//! Multi-seed experiment runner: trains each configured variant across its
//! seeds, persists checkpoints and logs under a fixed layout, and resumes by
//! skipping runs whose artifacts already exist with a matching config digest.

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use crate::data::{DatasetSplit, Sample};
use crate::error::{Error, Result};
use crate::models::{load_params, save_params, ModelParams, ModelSpec};
use crate::train::{train, TrainConfig, TrainLog};

/// One variant row of the experiment grid. The label names the output
/// directory (e.g. "a2e", "a_a2b2e" for the adversarially trained models).
#[derive(Clone, Debug)]
pub struct VariantRun {
    pub label: String,
    pub spec: ModelSpec,
    pub cfg: TrainConfig,
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub label: String,
    pub seed: u64,
    pub dir: PathBuf,
    pub checkpoint: PathBuf,
    pub trainlog: PathBuf,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAINLOG_FILE: &str = "trainlog.jsonl";
pub const DIGEST_FILE: &str = "config.digest";

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hex digest covering the model spec and the training config.
pub fn config_digest(spec: &ModelSpec, cfg: &TrainConfig) -> String {
    let mut h = Sha256::new();
    h.update(spec.digest());
    h.update(serde_json::to_string(cfg).expect("config serializes"));
    hex(&h.finalize())
}

fn run_dir(out_dir: &Path, label: &str, seed: u64) -> PathBuf {
    out_dir.join(label).join(seed.to_string())
}

/// True when the run directory holds a finished run for this digest.
/// A present directory with a different digest is a hard error: mixing
/// configs in one output tree would corrupt the report.
fn check_existing(dir: &Path, digest: &str) -> Result<bool> {
    let digest_path = dir.join(DIGEST_FILE);
    if !digest_path.exists() {
        return Ok(false);
    }
    let found = fs::read_to_string(&digest_path)?;
    if found.trim() != digest {
        return Err(Error::config(format!(
            "{}: existing run was produced by a different config (digest {} vs {})",
            dir.display(),
            found.trim(),
            digest
        )));
    }
    Ok(dir.join(CHECKPOINT_FILE).exists() && dir.join(TRAINLOG_FILE).exists())
}

fn execute_run(
    run: &VariantRun,
    data: &[Sample],
    split: &DatasetSplit,
    out_dir: &Path,
    seed: u64,
) -> Result<RunArtifacts> {
    let dir = run_dir(out_dir, &run.label, seed);
    let digest = config_digest(&run.spec, &run.cfg);
    let artifacts = RunArtifacts {
        label: run.label.clone(),
        seed,
        checkpoint: dir.join(CHECKPOINT_FILE),
        trainlog: dir.join(TRAINLOG_FILE),
        dir: dir.clone(),
    };
    if check_existing(&dir, &digest)? {
        return Ok(artifacts);
    }
    let (params, log) = train(&run.spec, data, split, &run.cfg, seed)?;
    fs::create_dir_all(&dir)?;
    fs::write(&artifacts.checkpoint, save_params(&params, &run.spec))?;
    fs::write(&artifacts.trainlog, log.to_jsonl())?;
    // digest last: its presence marks the run complete
    fs::write(dir.join(DIGEST_FILE), &digest)?;
    Ok(artifacts)
}

/// Trains every (variant, seed) cell, `workers` runs in parallel. Completed
/// cells (matching digest) are skipped; a config change over existing output
/// is refused. Returns artifacts ordered by (variant, seed).
pub fn run_experiment(
    runs: &[VariantRun],
    data: &[Sample],
    split: &DatasetSplit,
    out_dir: &Path,
    workers: usize,
) -> Result<Vec<RunArtifacts>> {
    for run in runs {
        run.cfg.validate()?;
        run.spec.validate()?;
        if run.label.is_empty() || run.label.contains(['/', '\\']) {
            return Err(Error::config(format!("bad variant label {:?}", run.label)));
        }
    }
    let queue: Mutex<VecDeque<(usize, u64)>> = Mutex::new(
        runs.iter()
            .enumerate()
            .flat_map(|(i, r)| (0..r.cfg.n_seeds as u64).map(move |s| (i, s)))
            .collect(),
    );
    let results: Mutex<Vec<Result<RunArtifacts>>> = Mutex::new(Vec::new());
    let workers = workers.max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let task = queue.lock().expect("queue lock").pop_front();
                let Some((i, seed)) = task else { break };
                let res = execute_run(&runs[i], data, split, out_dir, seed);
                let failed = res.is_err();
                results.lock().expect("results lock").push(res);
                if failed {
                    break;
                }
            });
        }
    });
    let mut collected = Vec::new();
    for res in results.into_inner().expect("results lock") {
        collected.push(res?);
    }
    let order: Vec<&str> = runs.iter().map(|r| r.label.as_str()).collect();
    collected.sort_by_key(|a| {
        (order.iter().position(|&l| l == a.label).unwrap_or(usize::MAX), a.seed)
    });
    Ok(collected)
}

/// Loads a persisted run back (checkpoint + log).
pub fn load_run(artifacts: &RunArtifacts, spec: &ModelSpec) -> Result<(ModelParams<f32>, TrainLog)> {
    let bytes = fs::read(&artifacts.checkpoint)
        .map_err(|e| Error::ingestion(&artifacts.checkpoint, format!("cannot read checkpoint: {e}")))?;
    let params = load_params(&bytes, spec)?;
    let text = fs::read_to_string(&artifacts.trainlog)
        .map_err(|e| Error::ingestion(&artifacts.trainlog, format!("cannot read trainlog: {e}")))?;
    Ok((params, TrainLog::from_jsonl(&text)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_split;
    use crate::data::synth::synth_dataset;
    use crate::gradcheck::tiny_spec;
    use crate::models::Variant;

    fn toy_runs(n_seeds: usize, max_epochs: usize) -> (Vec<VariantRun>, Vec<Sample>, DatasetSplit) {
        let data = synth_dataset(30, (8, 12), 2).unwrap();
        let split = make_split(30, 1).unwrap();
        let cfg = TrainConfig {
            max_epochs,
            patience: usize::MAX,
            n_seeds,
            ..TrainConfig::default()
        };
        let runs = vec![
            VariantRun { label: "a2e".into(), spec: tiny_spec(Variant::A2E), cfg: cfg.clone() },
            VariantRun { label: "a2b2e".into(), spec: tiny_spec(Variant::A2B2E), cfg },
        ];
        (runs, data, split)
    }

    #[test]
    fn one_seed_yields_one_checkpoint_per_variant() {
        let dir = tempfile::tempdir().unwrap();
        let (runs, data, split) = toy_runs(1, 2);
        let arts = run_experiment(&runs, &data, &split, dir.path(), 1).unwrap();
        assert_eq!(arts.len(), 2);
        for a in &arts {
            assert!(a.checkpoint.exists());
            assert!(a.trainlog.exists());
            let (params, log) = load_run(a, &runs.iter().find(|r| r.label == a.label).unwrap().spec).unwrap();
            assert_eq!(log.epochs.len(), 2);
            assert!(params.n_params() > 0);
        }
    }

    #[test]
    fn resume_skips_completed_runs() {
        let dir = tempfile::tempdir().unwrap();
        let (runs, data, split) = toy_runs(3, 2);
        let first = run_experiment(&runs[..1], &data, &split, dir.path(), 1).unwrap();
        // mark seed 0's log; a rerun must not touch it
        let marker = "marker";
        let log0 = std::fs::read_to_string(&first[0].trainlog).unwrap();
        std::fs::write(&first[0].trainlog, format!("{log0}{marker}\n")).unwrap();
        // delete seed 1's artifacts to force a retrain of just that cell
        std::fs::remove_dir_all(&first[1].dir).unwrap();
        let second = run_experiment(&runs[..1], &data, &split, dir.path(), 1).unwrap();
        assert_eq!(second.len(), 3);
        let log0_after = std::fs::read_to_string(&second[0].trainlog).unwrap();
        assert!(log0_after.ends_with(&format!("{marker}\n")), "seed 0 was retrained");
        assert!(second[1].checkpoint.exists());
    }

    #[test]
    fn config_change_over_existing_output_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let (mut runs, data, split) = toy_runs(1, 2);
        run_experiment(&runs[..1], &data, &split, dir.path(), 1).unwrap();
        runs[0].cfg.learning_rate = 0.001;
        let err = run_experiment(&runs[..1], &data, &split, dir.path(), 1).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(err.to_string().contains("digest"));
    }

    #[test]
    fn seed_rerun_reproduces_checkpoint_bitwise() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let (runs, data, split) = toy_runs(2, 2);
        let a = run_experiment(&runs[..1], &data, &split, dir_a.path(), 1).unwrap();
        // train seed 1 alone in a fresh tree
        let mut solo = runs[0].clone();
        solo.cfg.n_seeds = 2;
        let b = run_experiment(&[solo], &data, &split, dir_b.path(), 1).unwrap();
        let bytes_a = std::fs::read(&a[1].checkpoint).unwrap();
        let bytes_b = std::fs::read(&b[1].checkpoint).unwrap();
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn parallel_workers_match_serial_run() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let (runs, data, split) = toy_runs(2, 2);
        let a = run_experiment(&runs, &data, &split, dir_a.path(), 1).unwrap();
        let b = run_experiment(&runs, &data, &split, dir_b.path(), 3).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!((&x.label, x.seed), (&y.label, y.seed));
            assert_eq!(std::fs::read(&x.checkpoint).unwrap(), std::fs::read(&y.checkpoint).unwrap());
        }
    }
}
