//! Training loops: Adam with early stopping, seeded batch shuffling, and
//! the adversarial schedule (clean step + attacked step on every n-th epoch).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{bim_attack, AttackConfig};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::models::{
    forward, insert_params, loss_emotion, loss_joint, ModelParams, ModelSpec, Variant,
};
use crate::tensor::{Element, Graph, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialConfig {
    pub every_n_epochs: usize,
    pub attack: AttackConfig,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        AdversarialConfig {
            every_n_epochs: 5,
            attack: AttackConfig { max_iterations: 50, ..AttackConfig::default() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub n_seeds: usize,
    pub adversarial: Option<AdversarialConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.0005,
            batch_size: 8,
            max_epochs: 200,
            patience: 50,
            n_seeds: 10,
            adversarial: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1".to_string()));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::config(format!("bad learning rate {}", self.learning_rate)));
        }
        if let Some(adv) = &self.adversarial {
            if adv.every_n_epochs == 0 {
                return Err(Error::config("every_n_epochs must be >= 1".to_string()));
            }
            adv.attack.validate()?;
        }
        Ok(())
    }
}

/// First/second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams<f32>) -> Self {
        let m = params.entries().iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        let v = params.entries().iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        AdamState { m, v, step: 0 }
    }
}

/// Standard Adam update with bias correction.
pub fn adam_step(
    params: &mut ModelParams<f32>,
    grads: &[Vec<f32>],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.entries().len() {
        return Err(Error::dimension(format!(
            "adam: {} gradients for {} parameters",
            grads.len(),
            params.entries().len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for (i, (_, tensor)) in params.entries_mut().iter_mut().enumerate() {
        let g = &grads[i];
        if g.len() != tensor.numel() {
            return Err(Error::dimension(format!(
                "adam: gradient {i} has {} values for {} parameters",
                g.len(),
                tensor.numel()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!("non-finite gradient in parameter {i}")));
        }
        for (j, w) in tensor.data_mut().iter_mut().enumerate() {
            let gj = g[j] as f64;
            let m = &mut state.m[i][j];
            let v = &mut state.v[i][j];
            *m = (ADAM_BETA1 * *m as f64 + (1.0 - ADAM_BETA1) * gj) as f32;
            *v = (ADAM_BETA2 * *v as f64 + (1.0 - ADAM_BETA2) * gj * gj) as f32;
            let m_hat = *m as f64 / bc1;
            let v_hat = *v as f64 / bc2;
            *w = (*w as f64 - lr * m_hat / (v_hat.sqrt() + ADAM_EPS)) as f32;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss over the epoch's clean optimizer steps.
    pub train_loss: f64,
    pub val_loss: f64,
    pub adversarial: bool,
    /// Attack invocations this epoch (batches on scheduled epochs).
    pub attacks_run: usize,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainLog {
    pub fn attacks_total(&self) -> usize {
        self.epochs.iter().map(|e| e.attacks_run).sum()
    }

    /// One JSON object per line, in epoch order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("epoch record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<TrainLog> {
        let mut epochs = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            epochs.push(
                serde_json::from_str(line).map_err(|e| Error::format(format!("trainlog: {e}")))?,
            );
        }
        let (best_epoch, best_val_loss) = epochs
            .iter()
            .map(|e: &EpochRecord| (e.epoch, e.val_loss))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap_or((0, f64::INFINITY));
        Ok(TrainLog { epochs, best_epoch, best_val_loss })
    }

    /// Equality ignoring wall-clock times (the only non-deterministic field).
    pub fn same_trajectory(&self, other: &TrainLog) -> bool {
        self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.train_loss == b.train_loss
                    && a.val_loss == b.val_loss
                    && a.adversarial == b.adversarial
                    && a.attacks_run == b.attacks_run
            })
    }
}

/// Shuffled positions 0..n for one epoch, fixed by (run_seed, epoch).
pub fn epoch_order(n: usize, run_seed: u64, epoch: usize) -> Vec<usize> {
    let mixed = run_seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(mixed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Stacks samples into batch tensors: x [B x 1 x F x T], y_emotion [B x 8],
/// and y_midlevel [B x 7] when every sample carries mid-level targets.
#[allow(clippy::type_complexity)]
pub fn make_batch(
    data: &[Sample],
    idx: &[usize],
) -> Result<(Tensor<f32>, Tensor<f32>, Option<Tensor<f32>>)> {
    if idx.is_empty() {
        return Err(Error::config("empty batch".to_string()));
    }
    let first = &data[idx[0]].spectrogram;
    let (f, t) = (first.shape()[1], first.shape()[2]);
    let b = idx.len();
    let mut x = Vec::with_capacity(b * f * t);
    let mut ye = Vec::with_capacity(b * 8);
    let mut ym = Vec::new();
    let mut all_mid = true;
    for &i in idx {
        let s = &data[i];
        if s.spectrogram.shape() != first.shape() {
            return Err(Error::dimension(format!(
                "batch mixes spectrogram shapes {:?} and {:?}",
                first.shape(),
                s.spectrogram.shape()
            )));
        }
        x.extend_from_slice(s.spectrogram.data());
        ye.extend_from_slice(&s.y_emotion);
        match &s.y_midlevel {
            Some(m) => ym.extend_from_slice(m),
            None => all_mid = false,
        }
    }
    let n_e = ye.len() / b;
    let x = Tensor::new(vec![b, 1, f, t], x)?;
    let ye = Tensor::new(vec![b, n_e], ye)?;
    let ym = if all_mid {
        let n_m = ym.len() / b;
        Some(Tensor::new(vec![b, n_m], ym)?)
    } else {
        None
    };
    Ok((x, ye, ym))
}

fn variant_loss(
    g: &mut Graph<f32>,
    spec: &ModelSpec,
    out: &crate::models::ForwardOutput,
    ye: crate::tensor::NodeId,
    ym: Option<crate::tensor::NodeId>,
) -> Result<crate::tensor::NodeId> {
    if spec.variant == Variant::A2M2E {
        let ym = ym.ok_or_else(|| {
            Error::config("A2M2E requires mid-level targets for every sample".to_string())
        })?;
        loss_joint(g, out, ye, ym)
    } else {
        loss_emotion(g, out, ye)
    }
}

/// One optimizer step on a batch; returns the batch loss before the update.
pub fn grad_step(
    params: &mut ModelParams<f32>,
    adam: &mut AdamState,
    spec: &ModelSpec,
    lr: f64,
    x: &Tensor<f32>,
    ye: &Tensor<f32>,
    ym: Option<&Tensor<f32>>,
) -> Result<f64> {
    let mut g = Graph::new();
    let xid = g.leaf(x.clone(), false);
    let nodes = insert_params(&mut g, params, true);
    let out = forward(&mut g, &nodes, spec, xid)?;
    let yid = g.leaf(ye.clone(), false);
    let ymid = ym.map(|m| g.leaf(m.clone(), false));
    let loss_id = variant_loss(&mut g, spec, &out, yid, ymid)?;
    let loss = g.value(loss_id).item()?.as_f64();
    if !loss.is_finite() {
        return Err(Error::numerical(format!("non-finite training loss {loss}")));
    }
    g.backward(loss_id)?;
    let grads: Vec<Vec<f32>> =
        nodes.ids.iter().map(|&id| g.grad(id).expect("param requires grad").to_vec()).collect();
    adam_step(params, &grads, adam, lr)?;
    Ok(loss)
}

/// Mean variant loss over an index set, without gradient tracking.
pub fn eval_loss(
    params: &ModelParams<f32>,
    spec: &ModelSpec,
    data: &[Sample],
    idx: &[usize],
    batch_size: usize,
) -> Result<f64> {
    if idx.is_empty() {
        return Err(Error::config("empty evaluation split".to_string()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in idx.chunks(batch_size) {
        let (x, ye, ym) = make_batch(data, chunk)?;
        let mut g = Graph::new();
        let xid = g.leaf(x, false);
        let nodes = insert_params(&mut g, params, false);
        let out = forward(&mut g, &nodes, spec, xid)?;
        let yid = g.leaf(ye, false);
        let ymid = ym.map(|m| g.leaf(m, false));
        let loss_id = variant_loss(&mut g, spec, &out, yid, ymid)?;
        total += g.value(loss_id).item()?.as_f64() * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(total / count as f64)
}

fn add_tensors(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<Tensor<f32>> {
    if a.shape() != b.shape() {
        return Err(Error::dimension(format!("add: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Tensor::new(a.shape().to_vec(), a.data().iter().zip(b.data()).map(|(x, d)| x + d).collect())
}

/// Trains one model from `seed`, honoring the adversarial schedule when
/// configured. Returns the best-validation parameters and the full log.
pub fn train(
    spec: &ModelSpec,
    data: &[Sample],
    split: &crate::data::DatasetSplit,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(ModelParams<f32>, TrainLog)> {
    cfg.validate()?;
    spec.validate()?;
    if split.train.is_empty() || split.val.is_empty() {
        return Err(Error::config("train/val split must be non-empty".to_string()));
    }
    if spec.variant == Variant::A2M2E {
        for &i in split.train.iter().chain(&split.val) {
            if data[i].y_midlevel.is_none() {
                return Err(Error::config(format!(
                    "A2M2E requires mid-level targets; {} has none",
                    data[i].clip_id
                )));
            }
        }
    }

    let mut params = crate::models::build_model::<f32>(spec, seed)?;
    let mut adam = AdamState::new(&params);
    let mut best = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut since_best = 0usize;
    let mut log = TrainLog::default();

    for epoch in 1..=cfg.max_epochs {
        let t0 = std::time::Instant::now();
        let adv = cfg
            .adversarial
            .as_ref()
            .filter(|a| epoch % a.every_n_epochs == 0);
        let order = epoch_order(split.train.len(), seed, epoch);
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        let mut attacks_run = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let idx: Vec<usize> = chunk.iter().map(|&o| split.train[o]).collect();
            let (x, ye, ym) = make_batch(data, &idx)?;
            let loss = grad_step(&mut params, &mut adam, spec, cfg.learning_rate, &x, &ye, ym.as_ref())?;
            loss_sum += loss;
            n_batches += 1;
            if let Some(a) = adv {
                let p = bim_attack(&params, spec, &x, &ye, ym.as_ref(), &a.attack)?;
                let x_adv = add_tensors(&x, &p.delta)?;
                grad_step(&mut params, &mut adam, spec, cfg.learning_rate, &x_adv, &ye, ym.as_ref())?;
                attacks_run += 1;
            }
        }
        let val_loss = eval_loss(&params, spec, data, &split.val, cfg.batch_size)?;
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n_batches as f64,
            val_loss,
            adversarial: adv.is_some(),
            attacks_run,
            wall_time_s: t0.elapsed().as_secs_f64(),
        });
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best = params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > cfg.patience {
                break;
            }
        }
    }
    log.best_epoch = best_epoch;
    log.best_val_loss = best_val;
    Ok((best, log))
}

/// Clean training: any adversarial schedule in the config is ignored.
pub fn train_clean(
    spec: &ModelSpec,
    data: &[Sample],
    split: &crate::data::DatasetSplit,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(ModelParams<f32>, TrainLog)> {
    let cfg = TrainConfig { adversarial: None, ..cfg.clone() };
    train(spec, data, split, &cfg, seed)
}

/// Adversarial training; the config must carry a schedule.
pub fn train_adversarial(
    spec: &ModelSpec,
    data: &[Sample],
    split: &crate::data::DatasetSplit,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(ModelParams<f32>, TrainLog)> {
    if cfg.adversarial.is_none() {
        return Err(Error::config(
            "adversarial training requires an adversarial schedule".to_string(),
        ));
    }
    train(spec, data, split, cfg, seed)
}
