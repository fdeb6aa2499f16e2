//! Synthetic substitute corpus with known concept structure.
//!
//! Each sample draws 7 latent concepts z in [0,1], renders them as disjoint
//! horizontal bands of a spectrogram-shaped image plus Gaussian noise, and
//! derives emotion targets through a fixed affine map: y = clip01(A z + b).
//! Row sums of |A| stay <= 0.8 and b recenters at 0.5, so for z in [0,1]
//! the affine output already lies in [0.1, 0.9] and the clip is inert.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Sample, N_EMOTIONS, N_MIDLEVEL};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NOISE_SIGMA: f64 = 0.05;

/// Full-rank 8x7 mixing matrix (first 7 rows diagonally dominant).
pub const MIX_A: [[f64; N_MIDLEVEL]; N_EMOTIONS] = [
    [0.45, -0.10, 0.05, 0.08, -0.04, 0.03, 0.05],
    [-0.08, 0.42, 0.10, -0.05, 0.06, 0.04, 0.05],
    [0.05, 0.08, 0.44, 0.06, -0.07, 0.05, 0.05],
    [0.06, -0.05, 0.07, 0.46, 0.05, -0.06, 0.05],
    [0.04, 0.06, -0.05, 0.07, 0.43, 0.08, 0.07],
    [0.05, 0.04, 0.06, -0.08, 0.07, 0.45, 0.05],
    [0.03, 0.05, 0.04, 0.06, -0.08, 0.07, 0.47],
    [0.10, 0.10, 0.10, 0.10, 0.10, 0.10, 0.10],
];

/// Offset recentering the affine map at 0.5: b = 0.5 - A . (0.5 * 1).
pub fn mix_offset() -> [f64; N_EMOTIONS] {
    let mut b = [0.0; N_EMOTIONS];
    for (i, row) in MIX_A.iter().enumerate() {
        b[i] = 0.5 - 0.5 * row.iter().sum::<f64>();
    }
    b
}

/// y = clip01(A z + b).
pub fn emotion_targets(z: &[f64; N_MIDLEVEL]) -> [f64; N_EMOTIONS] {
    let b = mix_offset();
    let mut y = [0.0; N_EMOTIONS];
    for i in 0..N_EMOTIONS {
        let v: f64 = MIX_A[i].iter().zip(z).map(|(a, zj)| a * zj).sum::<f64>() + b[i];
        y[i] = v.clamp(0.0, 1.0);
    }
    y
}

/// Band index for row f: the F rows are cut into 7 contiguous bands.
pub fn band_of_row(f: usize, n_rows: usize) -> usize {
    (f * N_MIDLEVEL / n_rows).min(N_MIDLEVEL - 1)
}

/// Noiseless rendering: every pixel in band j carries z_j.
pub fn render_pattern(z: &[f64; N_MIDLEVEL], shape: (usize, usize)) -> Result<Tensor<f32>> {
    let (n_f, n_t) = shape;
    if n_f < N_MIDLEVEL || n_t == 0 {
        return Err(Error::config(format!(
            "synthetic shape ({n_f}, {n_t}) degenerate: need F >= {N_MIDLEVEL}, T >= 1"
        )));
    }
    let mut data = vec![0.0f32; n_f * n_t];
    for f in 0..n_f {
        let v = z[band_of_row(f, n_f)] as f32;
        for t in 0..n_t {
            data[f * n_t + t] = v;
        }
    }
    Tensor::new(vec![1, n_f, n_t], data)
}

/// n samples with latent concepts z ~ U[0,1]^7, rendered bands plus
/// N(0, 0.05) pixel noise, y_midlevel = z, y_emotion = clip01(A z + b).
pub fn synth_dataset(n: usize, shape: (usize, usize), seed: u64) -> Result<Vec<Sample>> {
    if n < 20 {
        return Err(Error::config(format!("synthetic corpus needs n >= 20, got {n}")));
    }
    // shape validation up front
    render_pattern(&[0.0; N_MIDLEVEL], shape)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut z = [0.0f64; N_MIDLEVEL];
        for zj in &mut z {
            *zj = rng.gen::<f64>();
        }
        let mut spec = render_pattern(&z, shape)?;
        for v in spec.data_mut() {
            *v += noise.sample(&mut rng) as f32;
        }
        let y = emotion_targets(&z);
        out.push(Sample {
            clip_id: format!("synth_{i:04}"),
            spectrogram: spec,
            y_emotion: y.iter().map(|&v| v as f32).collect(),
            y_midlevel: Some(z.iter().map(|&v| v as f32).collect()),
            crop_offset_seconds: 0.0,
        });
    }
    Ok(out)
}
