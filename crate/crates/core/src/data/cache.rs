//! On-disk sample cache: one binary tensor per clip plus a JSON manifest
//! mapping clip_id to file, crop offset, and target vectors. The tensor
//! container mirrors the checkpoint layout (magic, version, dims, f32 LE).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const TENSOR_MAGIC: &[u8; 8] = b"MERWTENS";
const TENSOR_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";

pub fn encode_tensor(t: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * t.numel());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor<f32>> {
    let err = |msg: &str| Error::format(format!("tensor container: {msg}"));
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = pos.checked_add(n).ok_or_else(|| err("overflow"))?;
        let s = bytes.get(pos..end).ok_or_else(|| err("truncated"))?;
        pos = end;
        Ok(s)
    };
    if take(8)? != TENSOR_MAGIC {
        return Err(err("bad magic"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != TENSOR_VERSION {
        return Err(err(&format!("unsupported version {version}")));
    }
    let rank = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
    }
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    for _ in 0..numel {
        data.push(f32::from_le_bytes(take(4)?.try_into().unwrap()));
    }
    if pos != bytes.len() {
        return Err(err("trailing bytes"));
    }
    Tensor::new(shape, data)
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub file: String,
    pub crop_offset_seconds: f64,
    pub y_emotion: Vec<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_midlevel: Option<Vec<f32>>,
}

/// BTreeMap keeps manifest serialization order-stable across runs.
#[derive(Clone, Debug, Serialize, Deserialize, Default, PartialEq)]
pub struct CacheManifest {
    pub entries: BTreeMap<String, ManifestEntry>,
}

impl CacheManifest {
    pub fn load(dir: &Path) -> Result<CacheManifest> {
        let path = dir.join(MANIFEST_NAME);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::ingestion(&path, format!("cannot read manifest: {e}")))?;
        serde_json::from_str(&text).map_err(|e| Error::format(format!("manifest: {e}")))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(dir.join(MANIFEST_NAME), text)?;
        Ok(())
    }

    pub fn is_complete_for(&self, clip_ids: &[String]) -> bool {
        clip_ids.iter().all(|id| self.entries.contains_key(id))
    }
}

fn tensor_file_name(clip_id: &str) -> String {
    // clip ids may contain path-hostile characters; keep [A-Za-z0-9_-]
    let safe: String = clip_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect();
    format!("{safe}.bin")
}

/// Writes one sample's tensor and returns its manifest entry. Existing files
/// are left untouched (the cache is write-once).
pub fn store_sample(dir: &Path, sample: &Sample) -> Result<(String, ManifestEntry)> {
    fs::create_dir_all(dir)?;
    let file = tensor_file_name(&sample.clip_id);
    let path = dir.join(&file);
    if !path.exists() {
        fs::write(&path, encode_tensor(&sample.spectrogram))?;
    }
    Ok((
        sample.clip_id.clone(),
        ManifestEntry {
            file,
            crop_offset_seconds: sample.crop_offset_seconds,
            y_emotion: sample.y_emotion.clone(),
            y_midlevel: sample.y_midlevel.clone(),
        },
    ))
}

/// Writes all samples plus the manifest; idempotent on rerun.
pub fn store_dataset(dir: &Path, samples: &[Sample]) -> Result<CacheManifest> {
    let mut manifest = CacheManifest::default();
    for s in samples {
        let (id, entry) = store_sample(dir, s)?;
        manifest.entries.insert(id, entry);
    }
    manifest.save(dir)?;
    Ok(manifest)
}

pub fn load_sample(dir: &Path, clip_id: &str, entry: &ManifestEntry) -> Result<Sample> {
    let path: PathBuf = dir.join(&entry.file);
    let bytes = fs::read(&path)
        .map_err(|e| Error::ingestion(&path, format!("cannot read tensor: {e}")))?;
    let sample = Sample {
        clip_id: clip_id.to_string(),
        spectrogram: decode_tensor(&bytes)?,
        y_emotion: entry.y_emotion.clone(),
        y_midlevel: entry.y_midlevel.clone(),
        crop_offset_seconds: entry.crop_offset_seconds,
    };
    sample.validate()?;
    Ok(sample)
}

/// Loads the whole cache in manifest (clip_id) order.
pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let manifest = CacheManifest::load(dir)?;
    manifest
        .entries
        .iter()
        .map(|(id, entry)| load_sample(dir, id, entry))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::synth_dataset;

    #[test]
    fn tensor_container_round_trips_bitwise() {
        let t = Tensor::<f32>::new(vec![2, 3], vec![0.1, -2.5, 1e-7, 3.25, f32::MIN_POSITIVE, 0.0])
            .unwrap();
        let back = decode_tensor(&encode_tensor(&t)).unwrap();
        assert_eq!(back.shape(), t.shape());
        for (a, b) in t.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_container_is_format_error() {
        let t = Tensor::<f32>::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = encode_tensor(&t);
        assert!(matches!(decode_tensor(&bytes[..bytes.len() - 2]), Err(Error::Format(_))));
        assert!(matches!(decode_tensor(b"NOTMAGIC"), Err(Error::Format(_))));
    }

    #[test]
    fn dataset_round_trip_through_cache() {
        let dir = tempfile::tempdir().unwrap();
        let samples = synth_dataset(20, (14, 5), 7).unwrap();
        let manifest = store_dataset(dir.path(), &samples).unwrap();
        assert_eq!(manifest.entries.len(), 20);
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.len(), 20);
        // manifest order is clip-id sorted; synth ids are zero-padded so it
        // matches generation order
        for (a, b) in samples.iter().zip(&loaded) {
            assert_eq!(a.clip_id, b.clip_id);
            assert_eq!(a.spectrogram.data(), b.spectrogram.data());
            assert_eq!(a.y_emotion, b.y_emotion);
            assert_eq!(a.y_midlevel, b.y_midlevel);
        }
    }

    #[test]
    fn rerun_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let samples = synth_dataset(20, (14, 5), 7).unwrap();
        let m1 = store_dataset(dir.path(), &samples).unwrap();
        let m2 = store_dataset(dir.path(), &samples).unwrap();
        assert_eq!(m1, m2);
        assert!(m2.is_complete_for(
            &samples.iter().map(|s| s.clip_id.clone()).collect::<Vec<_>>()
        ));
    }

    #[test]
    fn missing_manifest_is_ingestion_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Ingestion { .. })));
    }
}
