//! Central finite-difference verification of analytic gradients.
//!
//! The numeric side only ever evaluates forward passes, so it stays
//! independent of the backward rules it checks. All checks run in f64.
//!
//! Relu and max-pool make the loss piecewise linear. A finite difference
//! that straddles a kink measures nothing, so each coordinate's two
//! evaluations are compared against the base activation fingerprint and the
//! coordinate is skipped when the perturbation left the smooth piece. The
//! skipped count is reported; on random data it stays near zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::models::{self, Activation, ConvBlock, HeadInput, ModelSpec, Variant};
use crate::tensor::{Graph, NodeId, Tensor};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-3;
/// Default relative-error tolerance.
pub const FD_TOL: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub tol: f64,
    /// Coordinates whose finite difference crossed a kink and was not compared.
    pub skipped: usize,
    /// Total coordinates examined.
    pub total: usize,
}

impl GradCheckResult {
    pub fn passed(&self) -> bool {
        // a check that skipped everything verified nothing
        self.max_rel_err <= self.tol && self.skipped < self.total
    }
}

/// Relative error between an analytic and a numeric gradient entry.
/// Entries that are both negligibly small count as exact.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-6 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic.iter().zip(numeric).map(|(&a, &n)| rel_err(a, n)).fold(0.0, f64::max)
}

/// Central finite differences of a scalar function of one flattened input.
/// Returns (gradient, valid mask) where invalid coordinates crossed a kink.
pub fn finite_diff<F>(
    f: F,
    inputs: &[Tensor<f64>],
    which: usize,
    step: f64,
) -> Result<(Vec<f64>, Vec<bool>)>
where
    F: Fn(&[Tensor<f64>]) -> Result<(f64, u64)>,
{
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let (_, base_fp) = f(&work)?;
    let n = work[which].numel();
    let mut grad = vec![0.0; n];
    let mut valid = vec![true; n];
    for j in 0..n {
        let orig = work[which].data()[j];
        work[which].data_mut()[j] = orig + step;
        let (fp_val, fp_fp) = f(&work)?;
        work[which].data_mut()[j] = orig - step;
        let (fm_val, fm_fp) = f(&work)?;
        work[which].data_mut()[j] = orig;
        grad[j] = (fp_val - fm_val) / (2.0 * step);
        valid[j] = fp_fp == base_fp && fm_fp == base_fp;
    }
    Ok((grad, valid))
}

/// Compares the recorded backward of `build` against finite differences for
/// every input, returning the worst relative error over valid coordinates.
pub fn check<F>(
    name: &str,
    inputs: &[Tensor<f64>],
    build: F,
    step: f64,
    tol: f64,
) -> Result<GradCheckResult>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    // analytic side
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = build(&mut g, &ids)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> =
        ids.iter().map(|&id| g.grad(id).unwrap_or(&[]).to_vec()).collect();

    // numeric side: forward evaluations only
    let eval = |ts: &[Tensor<f64>]| -> Result<(f64, u64)> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = ts.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let loss = build(&mut g, &ids)?;
        Ok((g.value(loss).item()?, g.activation_fingerprint()))
    };

    let mut worst = 0.0f64;
    let mut skipped = 0usize;
    let mut total = 0usize;
    for (i, a) in analytic.iter().enumerate() {
        if a.is_empty() {
            continue;
        }
        let (numeric, valid) = finite_diff(eval, inputs, i, step)?;
        for j in 0..a.len() {
            total += 1;
            if valid[j] {
                worst = worst.max(rel_err(a[j], numeric[j]));
            } else {
                skipped += 1;
            }
        }
    }
    Ok(GradCheckResult { name: name.to_string(), max_rel_err: worst, tol, skipped, total })
}

fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Gradient checks for every differentiable op, one seed each call.
pub fn check_ops(seed: u64, step: f64, tol: f64) -> Result<Vec<GradCheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results = Vec::new();

    let a = random_tensor(vec![4, 3], &mut rng, -1.0, 1.0);
    let b = random_tensor(vec![3, 5], &mut rng, -1.0, 1.0);
    results.push(check(
        "matmul",
        &[a, b],
        |g, ids| {
            let c = g.matmul(ids[0], ids[1])?;
            Ok(g.mean(c))
        },
        step,
        tol,
    )?);

    let x = random_tensor(vec![1, 2, 5, 5], &mut rng, -1.0, 1.0);
    let k = random_tensor(vec![3, 2, 3, 3], &mut rng, -1.0, 1.0);
    let bias = random_tensor(vec![3], &mut rng, -0.5, 0.5);
    results.push(check(
        "conv2d",
        &[x, k, bias],
        |g, ids| {
            let c = g.conv2d(ids[0], ids[1], ids[2], 1, 1)?;
            Ok(g.mean(c))
        },
        step,
        tol,
    )?);

    let x = random_tensor(vec![1, 2, 5, 5], &mut rng, -1.0, 1.0);
    let k = random_tensor(vec![3, 2, 3, 3], &mut rng, -1.0, 1.0);
    let bias = random_tensor(vec![3], &mut rng, -0.5, 0.5);
    let target = random_tensor(vec![1, 3, 3, 3], &mut rng, -1.0, 1.0);
    results.push(check(
        "conv2d_stride2_mse",
        &[x, k, bias, target],
        |g, ids| {
            let c = g.conv2d(ids[0], ids[1], ids[2], 1, 2)?;
            g.mse_loss(c, ids[3])
        },
        step,
        tol,
    )?);

    let x = random_tensor(vec![1, 1, 6, 6], &mut rng, -1.0, 1.0);
    results.push(check(
        "maxpool2d",
        &[x],
        |g, ids| {
            let p = g.maxpool2d(ids[0], 2, 2)?;
            Ok(g.mean(p))
        },
        step,
        tol,
    )?);

    let x = random_tensor(vec![3, 4], &mut rng, -1.0, 1.0);
    results.push(check(
        "relu",
        &[x],
        |g, ids| {
            let r = g.relu(ids[0]);
            Ok(g.mean(r))
        },
        step,
        tol,
    )?);

    let a = random_tensor(vec![2, 3], &mut rng, -1.0, 1.0);
    let b = random_tensor(vec![2, 3], &mut rng, -1.0, 1.0);
    results.push(check(
        "add_sub_mul_scalar",
        &[a, b],
        |g, ids| {
            let s = g.add(ids[0], ids[1])?;
            let d = g.sub(s, ids[1])?;
            let m = g.mul_scalar(d, 1.7);
            Ok(g.sum(m))
        },
        step,
        tol,
    )?);

    let x = random_tensor(vec![2, 3, 4, 4], &mut rng, -1.0, 1.0);
    results.push(check(
        "global_avg_pool",
        &[x],
        |g, ids| {
            let p = g.global_avg_pool(ids[0])?;
            let sq = g.mul_scalar(p, 0.5);
            Ok(g.sum(sq))
        },
        step,
        tol,
    )?);

    let p = random_tensor(vec![4, 8], &mut rng, 0.0, 1.0);
    let t = random_tensor(vec![4, 8], &mut rng, 0.0, 1.0);
    results.push(check("mse_loss", &[p, t], |g, ids| g.mse_loss(ids[0], ids[1]), step, tol)?);

    let x = random_tensor(vec![2, 4], &mut rng, -1.0, 1.0);
    let bias = random_tensor(vec![4], &mut rng, -1.0, 1.0);
    results.push(check(
        "add_bias",
        &[x, bias],
        |g, ids| {
            let y = g.add_bias(ids[0], ids[1])?;
            Ok(g.mean(y))
        },
        step,
        tol,
    )?);

    Ok(results)
}

pub fn tiny_spec(variant: Variant) -> ModelSpec {
    ModelSpec {
        variant,
        conv_blocks: vec![
            ConvBlock { out_channels: 2, kernel: 3, pool: 2 },
            ConvBlock { out_channels: 3, kernel: 3, pool: 2 },
        ],
        embedding_dim: 6,
        n_midlevel: 7,
        n_emotions: 8,
        activation: Activation::Relu,
        head_input: HeadInput::GlobalAvgPool,
        input_bands: 8,
        input_frames: 12,
    }
}

/// End-to-end gradient check of a full model variant: every parameter and
/// the input itself against finite differences of the training loss.
pub fn check_model(variant: Variant, seed: u64, step: f64, tol: f64) -> Result<GradCheckResult> {
    let spec = tiny_spec(variant);
    let params = models::build_model::<f64>(&spec, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    let x = random_tensor(vec![2, 1, 8, 12], &mut rng, 0.0, 1.0);
    let ye = random_tensor(vec![2, 8], &mut rng, 0.0, 1.0);
    let ym = random_tensor(vec![2, 7], &mut rng, 0.0, 1.0);

    let mut inputs: Vec<Tensor<f64>> = vec![x, ye, ym];
    for (_, t) in params.entries() {
        inputs.push(t.clone());
    }
    let spec2 = spec.clone();
    let build = move |g: &mut Graph<f64>, ids: &[NodeId]| -> Result<NodeId> {
        let x = ids[0];
        let ye = ids[1];
        let ym = ids[2];
        let nodes = models::ParamNodes { ids: ids[3..].to_vec() };
        let out = models::forward(g, &nodes, &spec2, x)?;
        match spec2.variant {
            Variant::A2M2E => models::loss_joint(g, &out, ye, ym),
            _ => models::loss_emotion(g, &out, ye),
        }
    };
    let name = format!("model_{}", variant.as_str());
    check(&name, &inputs, build, step, tol)
}

/// The full verification suite: all ops and all three variants over the
/// given seeds.
pub fn run_suite(seeds: std::ops::Range<u64>, step: f64, tol: f64) -> Result<Vec<GradCheckResult>> {
    let mut merged: Vec<GradCheckResult> = Vec::new();
    let mut absorb = |r: GradCheckResult| {
        if let Some(existing) = merged.iter_mut().find(|e| e.name == r.name) {
            existing.max_rel_err = existing.max_rel_err.max(r.max_rel_err);
            existing.skipped += r.skipped;
            existing.total += r.total;
        } else {
            merged.push(r);
        }
    };
    for seed in seeds {
        for r in check_ops(seed, step, tol)? {
            absorb(r);
        }
        for variant in [Variant::A2E, Variant::A2B2E, Variant::A2M2E] {
            absorb(check_model(variant, seed, step, tol)?);
        }
    }
    Ok(merged)
}
