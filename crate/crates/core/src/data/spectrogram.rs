//! Log-frequency spectrograms: centered STFT, triangular log-spaced
//! filterbank (24 filters per octave from 65.4 Hz), amplitude normalization
//! and log scaling.

use rustfft::{num_complex::Complex, FftPlanner};

use super::audio::SAMPLE_RATE;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FRAME_SIZE: usize = 2048;
pub const HOP_SIZE: usize = 705;
pub const FILTERS_PER_OCTAVE: f64 = 24.0;
/// Lower edge of the filterbank (note C2).
pub const MIN_FREQ_HZ: f64 = 65.4;
pub const LOG_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Filterbank {
    /// Per filter: first FFT bin and triangle weights from that bin on.
    filters: Vec<(usize, Vec<f64>)>,
    centers_hz: Vec<f64>,
}

impl Filterbank {
    /// Triangular filters with geometrically spaced centers, 24 per octave,
    /// edges at the neighbouring centers, clipped at Nyquist.
    pub fn new(sample_rate: u32, frame_size: usize) -> Self {
        let nyquist = sample_rate as f64 / 2.0;
        let ratio = 2.0f64.powf(1.0 / FILTERS_PER_OCTAVE);
        let mut centers = Vec::new();
        let mut c = MIN_FREQ_HZ;
        while c < nyquist {
            centers.push(c);
            c *= ratio;
        }
        let n_bins = frame_size / 2 + 1;
        let bin_hz = sample_rate as f64 / frame_size as f64;
        let mut filters = Vec::with_capacity(centers.len());
        for (i, &center) in centers.iter().enumerate() {
            let left = if i == 0 { center / ratio } else { centers[i - 1] };
            let right = if i + 1 < centers.len() { centers[i + 1] } else { nyquist.min(center * ratio) };
            let lo_bin = (left / bin_hz).ceil() as usize;
            let hi_bin = ((right / bin_hz).floor() as usize).min(n_bins - 1);
            let mut weights = Vec::new();
            for b in lo_bin..=hi_bin {
                let f = b as f64 * bin_hz;
                let w = if f <= center {
                    if center > left { (f - left) / (center - left) } else { 0.0 }
                } else if right > center {
                    (right - f) / (right - center)
                } else {
                    0.0
                };
                weights.push(w.max(0.0));
            }
            // narrow filters at the low end may cover no bin cleanly; fall
            // back to the nearest bin so every band stays populated
            if weights.iter().all(|&w| w == 0.0) {
                let nearest = (center / bin_hz).round() as usize;
                filters.push((nearest.min(n_bins - 1), vec![1.0]));
            } else {
                filters.push((lo_bin, weights));
            }
        }
        Filterbank { filters, centers_hz: centers }
    }

    pub fn n_bands(&self) -> usize {
        self.filters.len()
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Applies the filterbank to one magnitude spectrum.
    pub fn apply(&self, magnitudes: &[f64]) -> Vec<f64> {
        self.filters
            .iter()
            .map(|(start, weights)| {
                weights
                    .iter()
                    .enumerate()
                    .map(|(i, &w)| w * magnitudes.get(start + i).copied().unwrap_or(0.0))
                    .sum()
            })
            .collect()
    }
}

/// Number of STFT frames for a centered transform: floor(len / hop) + 1.
pub fn n_frames(len: usize, hop: usize) -> usize {
    len / hop + 1
}

/// Magnitude STFT with Hann window and half-frame reflection padding, so
/// frame t is centered at sample t * hop.
pub fn stft_magnitudes(waveform: &[f32], frame_size: usize, hop: usize) -> Vec<Vec<f64>> {
    let half = frame_size / 2;
    let n = waveform.len();
    let padded: Vec<f64> = (0..n + frame_size)
        .map(|i| {
            let idx = i as isize - half as isize;
            let j = if idx < 0 {
                (-idx) as usize % n.max(1)
            } else if (idx as usize) < n {
                idx as usize
            } else {
                let over = idx as usize - (n - 1);
                n.saturating_sub(1 + over % n.max(1))
            };
            waveform.get(j).copied().unwrap_or(0.0) as f64
        })
        .collect();

    let window: Vec<f64> = (0..frame_size)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / frame_size as f64).cos())
        .collect();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(frame_size);
    let frames = n_frames(n, hop);
    let n_bins = frame_size / 2 + 1;
    let mut out = Vec::with_capacity(frames);
    let mut buf = vec![Complex::new(0.0, 0.0); frame_size];
    for t in 0..frames {
        let start = t * hop;
        for i in 0..frame_size {
            let v = padded.get(start + i).copied().unwrap_or(0.0);
            buf[i] = Complex::new(v * window[i], 0.0);
        }
        fft.process(&mut buf);
        out.push(buf[..n_bins].iter().map(|c| c.norm()).collect());
    }
    out
}

/// Peak-normalizes nonnegative magnitudes and applies log10 with a fixed
/// floor: S <- log10(S / max(S) + 1e-5). All-zero input maps to the floor.
pub fn normalize_spectrogram(mag: &Tensor<f32>) -> Tensor<f32> {
    let max = mag.data().iter().fold(0.0f32, |acc, &v| acc.max(v)) as f64;
    mag.map(|v| {
        let s = if max > 0.0 { v as f64 / max } else { 0.0 };
        ((s + LOG_FLOOR).log10()) as f32
    })
}

/// Full pipeline: 22.05 kHz mono waveform to a normalized log-frequency
/// spectrogram of shape [1 x F x T].
pub fn spectrogram(waveform: &[f32], sample_rate: u32) -> Result<Tensor<f32>> {
    if sample_rate != SAMPLE_RATE {
        return Err(Error::config(format!(
            "spectrogram expects {SAMPLE_RATE} Hz input, got {sample_rate}"
        )));
    }
    if waveform.is_empty() {
        return Err(Error::config("spectrogram: empty waveform".to_string()));
    }
    let fb = Filterbank::new(sample_rate, FRAME_SIZE);
    let frames = stft_magnitudes(waveform, FRAME_SIZE, HOP_SIZE);
    let n_t = frames.len();
    let n_f = fb.n_bands();
    let mut data = vec![0.0f32; n_f * n_t];
    for (t, frame) in frames.iter().enumerate() {
        let bands = fb.apply(frame);
        for (f, &v) in bands.iter().enumerate() {
            data[f * n_t + t] = v as f32;
        }
    }
    let raw = Tensor::new(vec![1, n_f, n_t], data)?;
    Ok(normalize_spectrogram(&raw))
}
