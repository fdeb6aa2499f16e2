//! Reported measures: MAE, Pearson correlation, quartiles, paired t-test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Mean absolute error over all elements.
pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::dimension(format!(
            "mae: lengths {} and {} incompatible",
            pred.len(),
            target.len()
        )));
    }
    let s: f64 = pred.iter().zip(target).map(|(&p, &t)| (p - t).abs()).sum();
    Ok(s / pred.len() as f64)
}

/// Sample Pearson correlation. Constant input is flagged as a numerical
/// error; the consumer decides how to treat it.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::dimension(format!(
            "pearson: need equal lengths >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::numerical("pearson: constant column".to_string()));
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// Per-column Pearson correlations of row-major `[n_rows x n_cols]` data.
/// `None` marks columns where the correlation is undefined.
pub fn column_correlations(pred: &[f64], target: &[f64], n_cols: usize) -> Result<Vec<Option<f64>>> {
    if n_cols == 0 || pred.len() != target.len() || !pred.len().is_multiple_of(n_cols) {
        return Err(Error::dimension(format!(
            "column_correlations: {} and {} values over {n_cols} columns",
            pred.len(),
            target.len()
        )));
    }
    let n_rows = pred.len() / n_cols;
    let mut out = Vec::with_capacity(n_cols);
    for c in 0..n_cols {
        let pc: Vec<f64> = (0..n_rows).map(|r| pred[r * n_cols + c]).collect();
        let tc: Vec<f64> = (0..n_rows).map(|r| target[r * n_cols + c]).collect();
        out.push(pearson(&pc, &tc).ok());
    }
    Ok(out)
}

/// Mean of the per-column correlations; undefined columns are excluded and
/// their count reported.
pub fn avg_correlation(pred: &[f64], target: &[f64], n_cols: usize) -> Result<(f64, usize)> {
    let cols = column_correlations(pred, target, n_cols)?;
    let defined: Vec<f64> = cols.iter().flatten().copied().collect();
    let flagged = cols.len() - defined.len();
    if defined.is_empty() {
        return Err(Error::numerical("avg_correlation: all columns constant".to_string()));
    }
    Ok((defined.iter().sum::<f64>() / defined.len() as f64, flagged))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub df: usize,
    pub p: f64,
    /// Bonferroni-corrected significance threshold (alpha / n_tests).
    pub threshold: f64,
    pub significant: bool,
    /// Zero-variance differences make the statistic undefined.
    pub degenerate: bool,
}

/// Two-sided one-sample t-test on paired differences with Bonferroni
/// correction: significant iff p < alpha / n_tests.
pub fn paired_ttest(d: &[f64], alpha: f64, n_tests: usize) -> Result<TTestResult> {
    if d.len() < 2 {
        return Err(Error::dimension("paired_ttest: need at least 2 differences".to_string()));
    }
    if n_tests == 0 {
        return Err(Error::config("paired_ttest: n_tests must be positive".to_string()));
    }
    let n = d.len() as f64;
    let df = d.len() - 1;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    let threshold = alpha / n_tests as f64;
    if var == 0.0 {
        return Ok(TTestResult {
            t: f64::NAN,
            df,
            p: f64::NAN,
            threshold,
            significant: false,
            degenerate: true,
        });
    }
    let t = mean / (var.sqrt() / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, df as f64)
        .map_err(|e| Error::numerical(format!("t-distribution: {e}")))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(TTestResult { t, df, p, threshold, significant: p < threshold, degenerate: false })
}

/// Quartiles by linear interpolation (type 7), the convention the box plots
/// document.
pub fn quantile_type7(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub outliers: Vec<f64>,
    pub n: usize,
}

/// Box-plot statistics with 1.5 IQR whiskers clamped to observed values.
pub fn box_stats(values: &[f64]) -> Result<BoxStats> {
    if values.is_empty() {
        return Err(Error::dimension("box_stats: empty input".to_string()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q1 = quantile_type7(&sorted, 0.25);
    let median = quantile_type7(&sorted, 0.5);
    let q3 = quantile_type7(&sorted, 0.75);
    let iqr = q3 - q1;
    let lo_fence = q1 - 1.5 * iqr;
    let hi_fence = q3 + 1.5 * iqr;
    let whisker_lo = sorted.iter().copied().find(|&v| v >= lo_fence).unwrap_or(q1);
    let whisker_hi = sorted.iter().rev().copied().find(|&v| v <= hi_fence).unwrap_or(q3);
    let outliers = sorted.iter().copied().filter(|&v| v < lo_fence || v > hi_fence).collect();
    Ok(BoxStats { median, q1, q3, whisker_lo, whisker_hi, outliers, n: values.len() })
}

/// 10 log10(sum x^2 / sum delta^2); `None` marks an unperturbed input.
pub fn snr_db(x: &[f64], delta: &[f64]) -> Result<Option<f64>> {
    if x.len() != delta.len() || x.is_empty() {
        return Err(Error::dimension(format!(
            "snr_db: lengths {} and {} incompatible",
            x.len(),
            delta.len()
        )));
    }
    let ex: f64 = x.iter().map(|&v| v * v).sum();
    let ed: f64 = delta.iter().map(|&v| v * v).sum();
    if ed == 0.0 {
        return Ok(None);
    }
    Ok(Some(10.0 * (ex / ed).log10()))
}
