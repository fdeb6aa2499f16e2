//! Iterative sign-gradient attack for regression models: starting from
//! delta = 0, each step moves delta by eta along sign(d loss / d delta) and
//! clips to the l-infinity ball of radius epsilon around the clean input.
//! The attacked loss is the emotion MSE (joint loss available for ablations).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::cache::{decode_tensor, encode_tensor};
use crate::error::{Error, Result};
use crate::metrics::column_correlations;
pub use crate::metrics::snr_db;
use crate::models::{forward, insert_params, loss_emotion, loss_joint, ModelParams, ModelSpec};
use crate::tensor::{Element, Graph, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "threshold", rename_all = "snake_case")]
pub enum StopRule {
    None,
    MseAbove(f64),
    AvgCorrBelow(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackLoss {
    Emotion,
    Joint,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// l-infinity ball radius, in spectrogram units.
    pub epsilon: f64,
    /// Step size per iteration.
    pub eta: f64,
    pub max_iterations: usize,
    pub stop_rule: StopRule,
    pub loss: AttackLoss,
    /// When true the stop rule is applied per sample and finished samples
    /// freeze; otherwise it is evaluated on the whole batch.
    pub per_sample_stop: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon: 0.001,
            eta: 0.002,
            max_iterations: 1000,
            stop_rule: StopRule::AvgCorrBelow(-1.0),
            loss: AttackLoss::Emotion,
            per_sample_stop: false,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon < 0.0 || !self.epsilon.is_finite() {
            return Err(Error::config(format!("attack epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.eta <= 0.0 || !self.eta.is_finite() {
            return Err(Error::config(format!("attack eta must be > 0, got {}", self.eta)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Ran out of iterations.
    Budget,
    /// The configured stop rule fired.
    Threshold,
}

#[derive(Clone, Debug)]
pub struct Perturbation<T> {
    pub delta: Tensor<T>,
    pub iterations_run: usize,
    /// Loss at delta_0 (clean) through the final delta; length iterations_run + 1.
    pub loss_trace: Vec<f64>,
    pub stop_reason: StopReason,
    /// Columns whose correlation was undefined (constant) at the final stop
    /// check; their correlation was taken as 0.
    pub degenerate_corr_columns: usize,
}

/// Batch stop check on predictions vs ground truth, both [B x K].
/// Constant columns contribute correlation 0; the count is reported.
pub fn evaluate_stop<T: Element>(
    rule: StopRule,
    pred: &Tensor<T>,
    y: &Tensor<T>,
) -> Result<(bool, usize)> {
    match rule {
        StopRule::None => Ok((false, 0)),
        StopRule::MseAbove(tau) => {
            let mse = mse_value(pred, y)?;
            Ok((mse >= tau, 0))
        }
        StopRule::AvgCorrBelow(rho) => {
            if pred.shape() != y.shape() || pred.shape().len() != 2 {
                return Err(Error::dimension(format!(
                    "stop rule: pred {:?} vs target {:?}",
                    pred.shape(),
                    y.shape()
                )));
            }
            let n_cols = pred.shape()[1];
            let p: Vec<f64> = pred.data().iter().map(|v| v.as_f64()).collect();
            let t: Vec<f64> = y.data().iter().map(|v| v.as_f64()).collect();
            // undefined (constant) columns count as correlation 0
            let cols = column_correlations(&p, &t, n_cols)?;
            let flagged = cols.iter().filter(|c| c.is_none()).count();
            let mean =
                cols.iter().map(|c| c.unwrap_or(0.0)).sum::<f64>() / n_cols.max(1) as f64;
            Ok((mean <= rho, flagged))
        }
    }
}

fn mse_value<T: Element>(pred: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    if pred.shape() != y.shape() {
        return Err(Error::dimension(format!(
            "stop rule: pred {:?} vs target {:?}",
            pred.shape(),
            y.shape()
        )));
    }
    let n = pred.numel().max(1) as f64;
    Ok(pred
        .data()
        .iter()
        .zip(y.data())
        .map(|(&p, &t)| (p.as_f64() - t.as_f64()).powi(2))
        .sum::<f64>()
        / n)
}

/// Per-sample stop flags (row-wise rule evaluation).
fn per_sample_fired<T: Element>(rule: StopRule, pred: &Tensor<T>, y: &Tensor<T>) -> Vec<bool> {
    let b = pred.shape()[0];
    let k = pred.shape()[1];
    (0..b)
        .map(|i| {
            let row_p: Vec<f64> = (0..k).map(|j| pred.data()[i * k + j].as_f64()).collect();
            let row_y: Vec<f64> = (0..k).map(|j| y.data()[i * k + j].as_f64()).collect();
            match rule {
                StopRule::None => false,
                StopRule::MseAbove(tau) => {
                    let mse: f64 =
                        row_p.iter().zip(&row_y).map(|(p, t)| (p - t).powi(2)).sum::<f64>()
                            / k as f64;
                    mse >= tau
                }
                StopRule::AvgCorrBelow(rho) => {
                    // correlation across the K outputs of this sample
                    crate::metrics::pearson(&row_p, &row_y).map(|c| c <= rho).unwrap_or(false)
                }
            }
        })
        .collect()
}

/// One gradient pass: loss value, emotion predictions, and d loss / d delta.
type GradFn<'a, T> = dyn Fn(&Tensor<T>) -> Result<(f64, Tensor<T>, Tensor<T>)> + 'a;

/// Core loop over an arbitrary differentiable objective; `grad_fn` maps the
/// current delta to (loss, predictions, gradient w.r.t. delta).
pub fn bim_attack_with<T: Element>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    cfg: &AttackConfig,
    grad_fn: &GradFn<'_, T>,
) -> Result<Perturbation<T>> {
    cfg.validate()?;
    let eps = T::elem(cfg.epsilon);
    let eta = cfg.eta;
    let mut delta = Tensor::zeros(x.shape().to_vec());
    let mut trace = Vec::with_capacity(cfg.max_iterations + 1);
    let mut stop_reason = StopReason::Budget;
    let mut iterations_run = 0usize;
    let mut degenerate = 0usize;
    let mut frozen: Option<Vec<bool>> = None;

    for i in 0..cfg.max_iterations {
        let (loss, preds, grad) = grad_fn(&delta)?;
        if !loss.is_finite() {
            return Err(Error::numerical(format!(
                "attack diverged: non-finite loss at iteration {i} (max|delta| = {})",
                delta.max_abs().as_f64()
            )));
        }
        trace.push(loss);
        // stop check covers the state after the previous update
        if i > 0 {
            if cfg.per_sample_stop {
                let fired = per_sample_fired(cfg.stop_rule, &preds, y);
                if fired.iter().all(|&f| f) {
                    stop_reason = StopReason::Threshold;
                    break;
                }
                frozen = Some(fired);
            } else {
                let (fired, flagged) = evaluate_stop(cfg.stop_rule, &preds, y)?;
                degenerate = flagged;
                if fired {
                    stop_reason = StopReason::Threshold;
                    break;
                }
            }
        }
        let per_sample = delta.numel() / delta.shape()[0].max(1);
        for (j, (d, g)) in delta.data_mut().iter_mut().zip(grad.data()).enumerate() {
            if let Some(mask) = &frozen {
                if mask[j / per_sample.max(1)] {
                    continue;
                }
            }
            let step = if *g > T::elem(0.0) {
                T::elem(eta)
            } else if *g < T::elem(0.0) {
                T::elem(-eta)
            } else {
                T::elem(0.0)
            };
            let moved = *d + step;
            *d = if moved > eps {
                eps
            } else if moved < -eps {
                -eps
            } else {
                moved
            };
        }
        debug_assert!(delta.max_abs() <= eps);
        iterations_run = i + 1;
    }

    if stop_reason == StopReason::Budget {
        // final loss and stop check after the last update
        let (loss, preds, _) = grad_fn(&delta)?;
        trace.push(loss);
        let (fired, flagged) = evaluate_stop(cfg.stop_rule, &preds, y)?;
        degenerate = flagged;
        if fired && cfg.max_iterations > 0 {
            stop_reason = StopReason::Threshold;
        }
    }

    Ok(Perturbation {
        delta,
        iterations_run,
        loss_trace: trace,
        stop_reason,
        degenerate_corr_columns: degenerate,
    })
}

/// Attack a model on a batch: x is [B x 1 x F x T], y_emotion is [B x 8].
/// The joint objective additionally needs y_midlevel [B x 7].
pub fn bim_attack<T: Element>(
    params: &ModelParams<T>,
    spec: &ModelSpec,
    x: &Tensor<T>,
    y_emotion: &Tensor<T>,
    y_midlevel: Option<&Tensor<T>>,
    cfg: &AttackConfig,
) -> Result<Perturbation<T>> {
    if cfg.loss == AttackLoss::Joint && y_midlevel.is_none() {
        return Err(Error::config("joint attack loss requires mid-level targets".to_string()));
    }
    let grad_fn = |delta: &Tensor<T>| -> Result<(f64, Tensor<T>, Tensor<T>)> {
        if delta.shape() != x.shape() {
            return Err(Error::dimension(format!(
                "attack delta {:?} vs input {:?}",
                delta.shape(),
                x.shape()
            )));
        }
        let mut g = Graph::new();
        let xid = g.leaf(x.clone(), false);
        let did = g.leaf(delta.clone(), true);
        let xin = g.add(xid, did)?;
        let nodes = insert_params(&mut g, params, false);
        let out = forward(&mut g, &nodes, spec, xin)?;
        let yid = g.leaf(y_emotion.clone(), false);
        let loss_id = match cfg.loss {
            AttackLoss::Emotion => loss_emotion(&mut g, &out, yid)?,
            AttackLoss::Joint => {
                let ymid = g.leaf(y_midlevel.unwrap().clone(), false);
                loss_joint(&mut g, &out, yid, ymid)?
            }
        };
        let loss = g.value(loss_id).item()?.as_f64();
        let preds = g.value(out.emotions).clone();
        g.backward(loss_id)?;
        let grad = Tensor::new(
            delta.shape().to_vec(),
            g.grad(did).expect("delta requires grad").to_vec(),
        )?;
        Ok((loss, preds, grad))
    };
    bim_attack_with(x, y_emotion, cfg, &grad_fn)
}

/// Audit sidecar stored next to each perturbation tensor.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerturbationSidecar {
    pub config: AttackConfig,
    pub iterations_run: usize,
    pub stop_reason: StopReason,
    pub snr_db: Option<f64>,
    pub clean_loss: f64,
    pub final_loss: f64,
}

/// Writes `<path>.bin` (tensor container) and `<path>.json` (audit record).
pub fn save_perturbation(
    path_stem: &Path,
    x: &Tensor<f32>,
    p: &Perturbation<f32>,
    cfg: &AttackConfig,
) -> Result<()> {
    let xv: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let dv: Vec<f64> = p.delta.data().iter().map(|&v| v as f64).collect();
    let sidecar = PerturbationSidecar {
        config: *cfg,
        iterations_run: p.iterations_run,
        stop_reason: p.stop_reason,
        snr_db: snr_db(&xv, &dv)?,
        clean_loss: *p.loss_trace.first().unwrap_or(&f64::NAN),
        final_loss: *p.loss_trace.last().unwrap_or(&f64::NAN),
    };
    fs::write(path_stem.with_extension("bin"), encode_tensor(&p.delta))?;
    fs::write(
        path_stem.with_extension("json"),
        serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"),
    )?;
    Ok(())
}

pub fn load_perturbation(path_stem: &Path) -> Result<(Tensor<f32>, PerturbationSidecar)> {
    let bin = path_stem.with_extension("bin");
    let bytes =
        fs::read(&bin).map_err(|e| Error::ingestion(&bin, format!("cannot read delta: {e}")))?;
    let delta = decode_tensor(&bytes)?;
    let js = path_stem.with_extension("json");
    let text =
        fs::read_to_string(&js).map_err(|e| Error::ingestion(&js, format!("cannot read sidecar: {e}")))?;
    let sidecar = serde_json::from_str(&text).map_err(|e| Error::format(format!("sidecar: {e}")))?;
    Ok((delta, sidecar))
}
