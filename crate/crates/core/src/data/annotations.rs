//! Annotation CSVs: eight emotion ratings per clip, optionally joined with
//! seven mid-level ratings from a second file. Raw ratings are min-max
//! mapped to [0,1] from their declared scales.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const EMOTION_NAMES: [&str; 8] = [
    "anger",
    "fear",
    "sadness",
    "happiness",
    "tenderness",
    "valence",
    "energy",
    "tension",
];

pub const MIDLEVEL_NAMES: [&str; 7] = [
    "melodiousness",
    "articulation",
    "rhythmic_stability",
    "rhythmic_complexity",
    "tonal_stability",
    "dissonance",
    "modality",
];

/// Declared rating scale for the emotion columns.
pub const EMOTION_RANGE: (f64, f64) = (1.0, 7.83);
/// Declared rating scale for the mid-level columns.
pub const MIDLEVEL_RANGE: (f64, f64) = (1.0, 10.0);

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationRow {
    pub clip_id: String,
    pub emotions: Vec<f64>,
    pub midlevel: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationTable {
    pub rows: Vec<AnnotationRow>,
    /// False for raw rating scales, true once mapped to [0,1].
    pub normalized: bool,
}

fn check_header(got: &csv::StringRecord, want_first: &str, want_rest: &[&str]) -> Result<()> {
    let expected: Vec<&str> = std::iter::once(want_first).chain(want_rest.iter().copied()).collect();
    let got_cols: Vec<&str> = got.iter().map(|s| s.trim()).collect();
    if got_cols != expected {
        return Err(Error::format(format!(
            "bad CSV header: expected {expected:?}, got {got_cols:?}"
        )));
    }
    Ok(())
}

fn parse_rows(path: &Path, columns: &[&str]) -> Result<Vec<(String, Vec<f64>)>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::ingestion(path, format!("cannot open CSV: {e}")))?;
    check_header(
        reader.headers().map_err(|e| Error::format(format!("{e}")))?,
        "clip_id",
        columns,
    )?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::format(format!("{e}")))?;
        if record.len() != columns.len() + 1 {
            return Err(Error::format(format!(
                "row with {} fields, expected {}",
                record.len(),
                columns.len() + 1
            )));
        }
        let clip_id = record[0].trim().to_string();
        let values = record
            .iter()
            .skip(1)
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| {
                    Error::format(format!("{clip_id}: non-numeric rating {s:?}"))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push((clip_id, values));
    }
    Ok(out)
}

/// Reads the emotion CSV, joining an optional mid-level CSV by clip_id.
/// Every emotion clip must have a mid-level row when the second file is given.
pub fn load_annotations(emotion_csv: &Path, midlevel_csv: Option<&Path>) -> Result<AnnotationTable> {
    let emotions = parse_rows(emotion_csv, &EMOTION_NAMES)?;
    let midlevel: Option<HashMap<String, Vec<f64>>> = match midlevel_csv {
        Some(p) => Some(parse_rows(p, &MIDLEVEL_NAMES)?.into_iter().collect()),
        None => None,
    };
    let mut rows = Vec::with_capacity(emotions.len());
    for (clip_id, vals) in emotions {
        let ml = match &midlevel {
            Some(map) => Some(map.get(&clip_id).cloned().ok_or_else(|| {
                Error::validation(format!("{clip_id}: missing mid-level annotations"))
            })?),
            None => None,
        };
        rows.push(AnnotationRow { clip_id, emotions: vals, midlevel: ml });
    }
    Ok(AnnotationTable { rows, normalized: false })
}

fn to_unit(v: f64, range: (f64, f64), clip_id: &str, column: &str) -> Result<f64> {
    if v < range.0 || v > range.1 {
        return Err(Error::validation(format!(
            "{clip_id}: {column} rating {v} outside declared range [{}, {}]",
            range.0, range.1
        )));
    }
    Ok((v - range.0) / (range.1 - range.0))
}

/// Min-max maps all ratings from their declared scales to [0,1].
pub fn normalize_targets(table: &AnnotationTable) -> Result<AnnotationTable> {
    if table.normalized {
        return Err(Error::usage("annotations already normalized".to_string()));
    }
    let mut rows = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let emotions = row
            .emotions
            .iter()
            .zip(EMOTION_NAMES)
            .map(|(&v, name)| to_unit(v, EMOTION_RANGE, &row.clip_id, name))
            .collect::<Result<Vec<f64>>>()?;
        let midlevel = match &row.midlevel {
            Some(ml) => Some(
                ml.iter()
                    .zip(MIDLEVEL_NAMES)
                    .map(|(&v, name)| to_unit(v, MIDLEVEL_RANGE, &row.clip_id, name))
                    .collect::<Result<Vec<f64>>>()?,
            ),
            None => None,
        };
        rows.push(AnnotationRow { clip_id: row.clip_id.clone(), emotions, midlevel });
    }
    Ok(AnnotationTable { rows, normalized: true })
}

/// Inverse of the min-max map for a single value.
pub fn denormalize(v: f64, range: (f64, f64)) -> f64 {
    range.0 + v * (range.1 - range.0)
}
