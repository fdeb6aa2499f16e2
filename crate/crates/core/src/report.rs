//! Report assembly: per-variant robustness numbers, significance tests, and
//! the emitted bundle (report.json, table1.md, SVG plots, prediction CSVs).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::annotations::EMOTION_NAMES;
use crate::error::{Error, Result};
use crate::metrics::{avg_correlation, box_stats, mae, paired_ttest, BoxStats, TTestResult};
use crate::plot::{box_plot_svg, scatter_svg, Marker, ScatterSeries};

/// Test-split predictions of one trained seed. Rows are samples; the inner
/// vectors hold the 8 emotion values.
#[derive(Clone, Debug)]
pub struct SeedPredictions {
    pub seed: u64,
    pub clip_ids: Vec<String>,
    pub truth: Vec<Vec<f64>>,
    pub clean: Vec<Vec<f64>>,
    pub attacked: Option<Vec<Vec<f64>>>,
    /// Per-sample SNR; None entries are unperturbed samples.
    pub snr_db: Option<Vec<Option<f64>>>,
}

#[derive(Clone, Debug)]
pub struct VariantPredictions {
    pub label: String,
    pub seeds: Vec<SeedPredictions>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SeedEval {
    pub seed: u64,
    pub clean_mae: f64,
    pub clean_avg_corr: f64,
    pub attacked_mae: Option<f64>,
    pub delta_mae: Option<f64>,
    /// Mean over perturbed samples; unperturbed sentinels excluded.
    pub mean_snr_db: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct VariantReport {
    pub label: String,
    pub seeds: Vec<SeedEval>,
    pub mean_clean_mae: f64,
    pub std_clean_mae: f64,
    pub mean_clean_corr: f64,
    pub std_clean_corr: f64,
    pub mean_attacked_mae: Option<f64>,
    pub std_attacked_mae: Option<f64>,
    pub mean_delta_mae: Option<f64>,
    pub std_delta_mae: Option<f64>,
    pub delta_mae_box: Option<BoxStats>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TTestEntry {
    pub variant_a: String,
    pub variant_b: String,
    pub result: TTestResult,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunReport {
    pub variants: Vec<VariantReport>,
    pub ttests: Vec<TTestEntry>,
    /// Human-readable notes about missing inputs (e.g. unattacked variants).
    pub gaps: Vec<String>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn flat(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

fn eval_seed(sp: &SeedPredictions) -> Result<SeedEval> {
    let truth = flat(&sp.truth);
    let clean = flat(&sp.clean);
    let clean_mae = mae(&clean, &truth)?;
    let (clean_avg_corr, _) = avg_correlation(&clean, &truth, EMOTION_NAMES.len())?;
    let attacked_mae = match &sp.attacked {
        Some(a) => Some(mae(&flat(a), &truth)?),
        None => None,
    };
    let mean_snr_db = sp.snr_db.as_ref().and_then(|snrs| {
        let defined: Vec<f64> = snrs.iter().flatten().copied().collect();
        if defined.is_empty() {
            None
        } else {
            Some(defined.iter().sum::<f64>() / defined.len() as f64)
        }
    });
    Ok(SeedEval {
        seed: sp.seed,
        clean_mae,
        clean_avg_corr,
        attacked_mae,
        delta_mae: attacked_mae.map(|a| a - clean_mae),
        mean_snr_db,
    })
}

fn eval_variant(vp: &VariantPredictions, gaps: &mut Vec<String>) -> Result<VariantReport> {
    if vp.seeds.is_empty() {
        return Err(Error::config(format!("{}: no seed predictions", vp.label)));
    }
    let seeds: Vec<SeedEval> = vp.seeds.iter().map(eval_seed).collect::<Result<_>>()?;
    let clean: Vec<f64> = seeds.iter().map(|s| s.clean_mae).collect();
    let corr: Vec<f64> = seeds.iter().map(|s| s.clean_avg_corr).collect();
    let attacked: Vec<f64> = seeds.iter().filter_map(|s| s.attacked_mae).collect();
    let delta: Vec<f64> = seeds.iter().filter_map(|s| s.delta_mae).collect();
    if attacked.len() < seeds.len() {
        gaps.push(format!(
            "{}: attacked predictions missing for {} of {} seeds",
            vp.label,
            seeds.len() - attacked.len(),
            seeds.len()
        ));
    }
    let (mean_clean_mae, std_clean_mae) = mean_std(&clean);
    let (mean_clean_corr, std_clean_corr) = mean_std(&corr);
    let (mean_attacked_mae, std_attacked_mae) = if attacked.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_std(&attacked);
        (Some(m), Some(s))
    };
    let (mean_delta_mae, std_delta_mae, delta_mae_box) = if delta.is_empty() {
        (None, None, None)
    } else {
        let (m, s) = mean_std(&delta);
        (Some(m), Some(s), Some(box_stats(&delta)?))
    };
    Ok(VariantReport {
        label: vp.label.clone(),
        seeds,
        mean_clean_mae,
        std_clean_mae,
        mean_clean_corr,
        std_clean_corr,
        mean_attacked_mae,
        std_attacked_mae,
        mean_delta_mae,
        std_delta_mae,
        delta_mae_box,
    })
}

/// Per-sample mean absolute error of the attacked predictions, pooled over
/// seeds in order, paired by (seed, sample) for the t-test.
fn pooled_attacked_errors(vp: &VariantPredictions) -> Option<Vec<f64>> {
    let mut out = Vec::new();
    for sp in &vp.seeds {
        let attacked = sp.attacked.as_ref()?;
        for (pred, truth) in attacked.iter().zip(&sp.truth) {
            let e: f64 =
                pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / truth.len() as f64;
            out.push(e);
        }
    }
    Some(out)
}

const TTEST_ALPHA: f64 = 0.05;

/// Builds the report and writes the bundle into `out_dir`:
/// report.json, table1.md, delta_mae_box.svg, scatter_<emotion>.svg, and
/// predictions_<variant>_<seed>.csv. Missing attacked runs produce a
/// partial report with explicit gap notes instead of an error.
pub fn robustness_report(variants: &[VariantPredictions], out_dir: &Path) -> Result<RunReport> {
    if variants.is_empty() {
        return Err(Error::config("report needs at least one variant".to_string()));
    }
    let mut gaps = Vec::new();
    let reports: Vec<VariantReport> =
        variants.iter().map(|vp| eval_variant(vp, &mut gaps)).collect::<Result<_>>()?;

    // pairwise t-tests on pooled per-sample attacked errors
    let pooled: Vec<Option<Vec<f64>>> = variants.iter().map(pooled_attacked_errors).collect();
    let mut pairs = Vec::new();
    for i in 0..variants.len() {
        for j in i + 1..variants.len() {
            if let (Some(a), Some(b)) = (&pooled[i], &pooled[j]) {
                if a.len() == b.len() && a.len() >= 2 {
                    pairs.push((i, j));
                } else {
                    gaps.push(format!(
                        "t-test skipped for {} vs {}: unpaired sample counts",
                        variants[i].label, variants[j].label
                    ));
                }
            }
        }
    }
    let n_tests = pairs.len().max(1);
    let mut ttests = Vec::new();
    for (i, j) in pairs {
        let a = pooled[i].as_ref().unwrap();
        let b = pooled[j].as_ref().unwrap();
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        ttests.push(TTestEntry {
            variant_a: variants[i].label.clone(),
            variant_b: variants[j].label.clone(),
            result: paired_ttest(&d, TTEST_ALPHA, n_tests)?,
        });
    }

    let report = RunReport { variants: reports, ttests, gaps };
    write_bundle(&report, variants, out_dir)?;
    Ok(report)
}

fn write_bundle(
    report: &RunReport,
    variants: &[VariantPredictions],
    out_dir: &Path,
) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(report).expect("report serializes"),
    )?;
    fs::write(out_dir.join("table1.md"), table_markdown(report))?;

    let groups: Vec<(String, BoxStats)> = report
        .variants
        .iter()
        .filter_map(|v| v.delta_mae_box.clone().map(|b| (v.label.clone(), b)))
        .collect();
    fs::write(
        out_dir.join("delta_mae_box.svg"),
        box_plot_svg(&groups, "Robustness: MAE increase under attack", "delta MAE"),
    )?;

    for (e, name) in EMOTION_NAMES.iter().enumerate() {
        let svg = scatter_emotion(variants, e, name);
        fs::write(out_dir.join(format!("scatter_{name}.svg")), svg)?;
    }

    for vp in variants {
        for sp in &vp.seeds {
            fs::write(
                out_dir.join(format!("predictions_{}_{}.csv", vp.label, sp.seed)),
                predictions_csv(sp),
            )?;
        }
    }
    Ok(())
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn scatter_emotion(variants: &[VariantPredictions], col: usize, name: &str) -> String {
    let mut series = Vec::new();
    for (vi, vp) in variants.iter().enumerate() {
        let color = PALETTE[vi % PALETTE.len()];
        let mut clean = Vec::new();
        let mut adv = Vec::new();
        for sp in &vp.seeds {
            for (row, truth) in sp.clean.iter().zip(&sp.truth) {
                clean.push((truth[col], row[col]));
            }
            if let Some(attacked) = &sp.attacked {
                for (row, truth) in attacked.iter().zip(&sp.truth) {
                    adv.push((truth[col], row[col]));
                }
            }
        }
        series.push(ScatterSeries {
            label: format!("{} clean", vp.label),
            marker: Marker::Cross,
            color: color.to_string(),
            points: clean,
        });
        if !adv.is_empty() {
            series.push(ScatterSeries {
                label: format!("{} attacked", vp.label),
                marker: Marker::Circle,
                color: color.to_string(),
                points: adv,
            });
        }
    }
    scatter_svg(&series, name, "annotation", "prediction")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".to_string())
}

fn table_markdown(report: &RunReport) -> String {
    let mut out = String::from(
        "| model | avg corr | MAE | attacked MAE | delta MAE | mean SNR (dB) |\n\
         |---|---|---|---|---|---|\n",
    );
    for v in &report.variants {
        let snrs: Vec<f64> = v.seeds.iter().filter_map(|s| s.mean_snr_db).collect();
        let snr = if snrs.is_empty() {
            "-".to_string()
        } else {
            format!("{:.1}", snrs.iter().sum::<f64>() / snrs.len() as f64)
        };
        out.push_str(&format!(
            "| {} | {:.2} ± {:.2} | {:.3} ± {:.3} | {} ± {} | {} ± {} | {} |\n",
            v.label,
            v.mean_clean_corr,
            v.std_clean_corr,
            v.mean_clean_mae,
            v.std_clean_mae,
            opt(v.mean_attacked_mae),
            opt(v.std_attacked_mae),
            opt(v.mean_delta_mae),
            opt(v.std_delta_mae),
            snr,
        ));
    }
    if !report.ttests.is_empty() {
        out.push_str("\nPaired t-tests on per-sample attacked errors:\n\n");
        out.push_str("| pair | t | df | p | significant |\n|---|---|---|---|---|\n");
        for t in &report.ttests {
            out.push_str(&format!(
                "| {} vs {} | {:.2} | {} | {:.4} | {} |\n",
                t.variant_a,
                t.variant_b,
                t.result.t,
                t.result.df,
                t.result.p,
                if t.result.degenerate {
                    "degenerate"
                } else if t.result.significant {
                    "yes"
                } else {
                    "no"
                },
            ));
        }
    }
    if !report.gaps.is_empty() {
        out.push_str("\nGaps:\n");
        for g in &report.gaps {
            out.push_str(&format!("- {g}\n"));
        }
    }
    out
}

/// clip_id, truth, clean prediction, and (when present) attacked prediction
/// per emotion.
fn predictions_csv(sp: &SeedPredictions) -> String {
    let mut header = String::from("clip_id");
    for n in EMOTION_NAMES {
        header.push_str(&format!(",truth_{n}"));
    }
    for n in EMOTION_NAMES {
        header.push_str(&format!(",clean_{n}"));
    }
    if sp.attacked.is_some() {
        for n in EMOTION_NAMES {
            header.push_str(&format!(",adv_{n}"));
        }
    }
    let mut out = header;
    out.push('\n');
    for (i, id) in sp.clip_ids.iter().enumerate() {
        out.push_str(id);
        for v in &sp.truth[i] {
            out.push_str(&format!(",{v:.6}"));
        }
        for v in &sp.clean[i] {
            out.push_str(&format!(",{v:.6}"));
        }
        if let Some(a) = &sp.attacked {
            for v in &a[i] {
                out.push_str(&format!(",{v:.6}"));
            }
        }
        out.push('\n');
    }
    out
}
