//! WAV ingestion: mono mixdown, resampling to 22.05 kHz, 10 s crops.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 22_050;
pub const CROP_SECONDS: usize = 10;
pub const CROP_SAMPLES: usize = CROP_SECONDS * SAMPLE_RATE as usize;

/// Reads a PCM WAV file (8/16/24-bit int or float32), mixes channels to
/// mono, and linearly resamples to 22,050 Hz. Output values lie in [-1, 1].
pub fn load_audio(path: &Path) -> Result<Vec<f32>> {
    let reader = hound::WavReader::open(path)
        .map_err(|e| Error::ingestion(path, format!("cannot open WAV: {e}")))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::ingestion(path, "zero channels".to_string()));
    }

    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => {
            if spec.bits_per_sample != 32 {
                return Err(Error::ingestion(
                    path,
                    format!("unsupported float width {}", spec.bits_per_sample),
                ));
            }
            reader
                .into_samples::<f32>()
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::ingestion(path, format!("decode failure: {e}")))?
        }
        hound::SampleFormat::Int => {
            let bits = spec.bits_per_sample;
            if !matches!(bits, 8 | 16 | 24) {
                return Err(Error::ingestion(path, format!("unsupported bit depth {bits}")));
            }
            let scale = (1i64 << (bits - 1)) as f32;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f32 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::ingestion(path, format!("decode failure: {e}")))?
        }
    };

    let mono = mixdown(&interleaved, channels);
    Ok(resample_linear(&mono, spec.sample_rate, SAMPLE_RATE))
}

/// Mean over channels.
pub fn mixdown(interleaved: &[f32], channels: usize) -> Vec<f32> {
    if channels == 1 {
        return interleaved.to_vec();
    }
    let frames = interleaved.len() / channels;
    let inv = 1.0 / channels as f32;
    (0..frames)
        .map(|i| interleaved[i * channels..(i + 1) * channels].iter().sum::<f32>() * inv)
        .collect()
}

/// Linear-interpolation resampler. Identity when rates match.
pub fn resample_linear(input: &[f32], from_rate: u32, to_rate: u32) -> Vec<f32> {
    if from_rate == to_rate || input.is_empty() {
        return input.to_vec();
    }
    let ratio = from_rate as f64 / to_rate as f64;
    let out_len = ((input.len() as f64) / ratio).floor() as usize;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let lo = pos.floor() as usize;
            let frac = (pos - lo as f64) as f32;
            let a = input[lo];
            let b = input[(lo + 1).min(input.len() - 1)];
            a + (b - a) * frac
        })
        .collect()
}

/// Deterministic crop offset for (seed, clip_id).
fn crop_offset(seed: u64, clip_id: &str, max_offset: usize) -> usize {
    if max_offset == 0 {
        return 0;
    }
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(clip_id.as_bytes());
    let digest = h.finalize();
    let v = u64::from_le_bytes(digest[..8].try_into().unwrap());
    (v % (max_offset as u64 + 1)) as usize
}

/// A 10 s crop at an offset drawn deterministically from (seed, clip_id).
/// Shorter inputs are zero-padded at the tail; the flag reports it.
pub fn crop_10s(waveform: &[f32], seed: u64, clip_id: &str) -> Result<(Vec<f32>, usize, bool)> {
    if waveform.is_empty() {
        return Err(Error::ingestion(clip_id, "empty waveform".to_string()));
    }
    if waveform.len() <= CROP_SAMPLES {
        let mut out = waveform.to_vec();
        let padded = out.len() < CROP_SAMPLES;
        out.resize(CROP_SAMPLES, 0.0);
        return Ok((out, 0, padded));
    }
    let offset = crop_offset(seed, clip_id, waveform.len() - CROP_SAMPLES);
    Ok((waveform[offset..offset + CROP_SAMPLES].to_vec(), offset, false))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_resample() {
        let x = vec![0.1, -0.2, 0.3, 0.5];
        assert_eq!(resample_linear(&x, 22_050, 22_050), x);
    }

    #[test]
    fn symmetric_stereo_cancels() {
        let interleaved = vec![0.5, -0.5, -0.3, 0.3, 0.9, -0.9];
        let mono = mixdown(&interleaved, 2);
        assert!(mono.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn resampled_sine_keeps_dominant_bin() {
        // 440 Hz at 44.1 kHz, resampled to 22.05 kHz; check DFT peak
        let n_in = 44_100;
        let x: Vec<f32> = (0..n_in)
            .map(|i| (2.0 * std::f32::consts::PI * 440.0 * i as f32 / 44_100.0).sin())
            .collect();
        let y = resample_linear(&x, 44_100, 22_050);
        let n = 4096.min(y.len());
        // plain DFT magnitude over the first n samples
        let mut best = (0usize, 0.0f64);
        for k in 1..n / 2 {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for (i, &v) in y[..n].iter().enumerate() {
                let ph = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                re += v as f64 * ph.cos();
                im += v as f64 * ph.sin();
            }
            let mag = re * re + im * im;
            if mag > best.1 {
                best = (k, mag);
            }
        }
        let peak_hz = best.0 as f64 * 22_050.0 / n as f64;
        let bin_width = 22_050.0 / n as f64;
        assert!((peak_hz - 440.0).abs() <= bin_width + 1e-9, "peak at {peak_hz} Hz");
    }

    #[test]
    fn exact_length_crop_is_identity() {
        let x = vec![0.25f32; CROP_SAMPLES];
        let (crop, offset, padded) = crop_10s(&x, 7, "clip").unwrap();
        assert_eq!(offset, 0);
        assert!(!padded);
        assert_eq!(crop, x);
    }

    #[test]
    fn crops_are_deterministic() {
        let x: Vec<f32> = (0..CROP_SAMPLES + 50_000).map(|i| (i as f32 * 0.001).sin()).collect();
        let a = crop_10s(&x, 3, "clip_a").unwrap();
        let b = crop_10s(&x, 3, "clip_a").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn offsets_cover_range_roughly_uniformly() {
        // 17 s input -> offsets live in [0, 7 s]; chi-square sanity over 4 bins
        let len_17s = 17 * SAMPLE_RATE as usize;
        let x = vec![0.1f32; len_17s];
        let max_offset = len_17s - CROP_SAMPLES;
        let mut counts = [0usize; 4];
        let n_seeds = 100;
        for seed in 0..n_seeds {
            let (_, offset, _) = crop_10s(&x, seed, "clip").unwrap();
            assert!(offset <= max_offset);
            let bin = (offset * 4 / (max_offset + 1)).min(3);
            counts[bin] += 1;
        }
        let expected = n_seeds as f64 / 4.0;
        let chi2: f64 =
            counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 3 dof, alpha=0.001 cutoff is 16.27
        assert!(chi2 < 16.27, "chi2 = {chi2}, counts {counts:?}");
    }

    #[test]
    fn empty_waveform_is_ingestion_error() {
        assert!(matches!(crop_10s(&[], 0, "c"), Err(Error::Ingestion { .. })));
    }
}
