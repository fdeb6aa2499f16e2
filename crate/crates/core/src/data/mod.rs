//! Data pipeline: audio ingestion, spectrograms, annotations, splits,
//! the synthetic substitute corpus, and the on-disk sample cache.

pub mod annotations;
pub mod audio;
pub mod cache;
pub mod spectrogram;
pub mod split;
pub mod synth;

pub use annotations::{AnnotationRow, AnnotationTable, EMOTION_NAMES, MIDLEVEL_NAMES};
pub use split::{make_split, DatasetSplit};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const N_EMOTIONS: usize = 8;
pub const N_MIDLEVEL: usize = 7;

/// One model-ready example: normalized log-spectrogram plus targets in [0,1].
#[derive(Clone, Debug)]
pub struct Sample {
    pub clip_id: String,
    /// Shape [1 x F x T].
    pub spectrogram: Tensor<f32>,
    pub y_emotion: Vec<f32>,
    pub y_midlevel: Option<Vec<f32>>,
    pub crop_offset_seconds: f64,
}

impl Sample {
    /// Shape, finiteness, and target-range invariants.
    pub fn validate(&self) -> Result<()> {
        if self.spectrogram.shape().len() != 3 || self.spectrogram.shape()[0] != 1 {
            return Err(Error::validation(format!(
                "{}: spectrogram must be [1 x F x T], got {:?}",
                self.clip_id,
                self.spectrogram.shape()
            )));
        }
        if !self.spectrogram.is_finite() {
            return Err(Error::validation(format!(
                "{}: non-finite spectrogram values",
                self.clip_id
            )));
        }
        if self.y_emotion.len() != N_EMOTIONS {
            return Err(Error::validation(format!(
                "{}: expected {N_EMOTIONS} emotion targets, got {}",
                self.clip_id,
                self.y_emotion.len()
            )));
        }
        let in_unit = |v: &f32| (0.0..=1.0).contains(v);
        if !self.y_emotion.iter().all(in_unit) {
            return Err(Error::validation(format!(
                "{}: emotion targets outside [0,1]",
                self.clip_id
            )));
        }
        if let Some(ml) = &self.y_midlevel {
            if ml.len() != N_MIDLEVEL {
                return Err(Error::validation(format!(
                    "{}: expected {N_MIDLEVEL} mid-level targets, got {}",
                    self.clip_id,
                    ml.len()
                )));
            }
            if !ml.iter().all(in_unit) {
                return Err(Error::validation(format!(
                    "{}: mid-level targets outside [0,1]",
                    self.clip_id
                )));
            }
        }
        Ok(())
    }
}
