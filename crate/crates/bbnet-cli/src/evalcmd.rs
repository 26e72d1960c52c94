//! `eval` subcommand: compare a directory of predicted maps against ground
//! truth and write a JSON report plus per-image and PR-curve CSVs.

use std::path::{Path, PathBuf};

use bbnet_core::metrics::{evaluate_set, f_measure_adaptive, EvalPair};
use serde::Serialize;

use crate::dataset::png_stems;
use crate::error::{AppError, AppResult};
use crate::fsutil::{write_json_atomic, write_text_atomic};
use crate::imgio;
use crate::train::MeanMetrics;

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    /// Pairs that entered the means; degenerate pairs are listed separately.
    pub images: usize,
    pub degenerate: Vec<String>,
    pub mae: f64,
    pub s_alpha: f64,
    pub e_mean: f64,
    pub e_max: f64,
    pub f_mean: f64,
    pub f_max: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adaptive_f: Option<f64>,
}

#[derive(Debug)]
pub struct EvalArtifacts {
    pub report: EvalReport,
    pub report_path: PathBuf,
    pub images_csv: PathBuf,
    pub pr_csv: PathBuf,
}

/// Ground-truth stems drive the pairing; every stem must have a prediction.
pub fn cmd_eval(
    pred_dir: &Path,
    gt_dir: &Path,
    report_path: &Path,
    adaptive: bool,
) -> AppResult<EvalArtifacts> {
    let gts = png_stems(gt_dir)?;
    if gts.is_empty() {
        return Err(AppError::Dataset(format!(
            "no ground-truth masks in {}",
            gt_dir.display()
        )));
    }
    let preds = png_stems(pred_dir)?;
    let missing: Vec<String> = gts.keys().filter(|k| !preds.contains_key(*k)).cloned().collect();
    if !missing.is_empty() {
        return Err(AppError::MissingPredictions(missing.join(", ")));
    }

    let mut items = Vec::with_capacity(gts.len());
    let mut adaptive_sum = 0.0;
    let mut adaptive_n = 0usize;
    for (stem, gt_path) in &gts {
        let g = imgio::load_gray(gt_path)?.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
        let p = imgio::load_gray(&preds[stem])?;
        let pair = EvalPair::new(&p, &g)?;
        if adaptive && pair.foreground_count() > 0 {
            adaptive_sum += f_measure_adaptive(&pair)?;
            adaptive_n += 1;
        }
        items.push((stem.clone(), pair));
    }
    let set = evaluate_set(items)?;

    let report = EvalReport {
        images: set.evaluated(),
        degenerate: set.degenerate.clone(),
        mae: set.mean.mae,
        s_alpha: set.mean.s_alpha,
        e_mean: set.mean.e_mean,
        e_max: set.mean.e_max,
        f_mean: set.mean.f_mean,
        f_max: set.mean.f_max,
        adaptive_f: if adaptive && adaptive_n > 0 {
            Some(adaptive_sum / adaptive_n as f64)
        } else {
            None
        },
    };

    write_json_atomic(report_path, &report)?;

    let stem_path = report_path.with_extension("");
    let stem = stem_path.to_string_lossy();
    let images_csv = PathBuf::from(format!("{stem}_images.csv"));
    let pr_csv = PathBuf::from(format!("{stem}_pr.csv"));

    let mut rows = String::from("name,mae,s_alpha,e_mean,e_max,f_mean,f_max\n");
    for (name, m) in &set.rows {
        rows.push_str(&format!(
            "{name},{},{},{},{},{},{}\n",
            m.mae, m.s_alpha, m.e_mean, m.e_max, m.f_mean, m.f_max
        ));
    }
    write_text_atomic(&images_csv, &rows)?;

    let mut pr = String::from("threshold,precision,recall\n");
    for t in 0..set.pr_precision.len() {
        pr.push_str(&format!("{t},{},{}\n", set.pr_precision[t], set.pr_recall[t]));
    }
    write_text_atomic(&pr_csv, &pr)?;

    println!(
        "evaluated {} images: s_alpha {:.4} mae {:.4} e_max {:.4} f_max {:.4}",
        report.images, report.s_alpha, report.mae, report.e_max, report.f_max
    );
    Ok(EvalArtifacts {
        report,
        report_path: report_path.to_path_buf(),
        images_csv,
        pr_csv,
    })
}

impl From<&EvalReport> for MeanMetrics {
    fn from(r: &EvalReport) -> Self {
        MeanMetrics {
            mae: r.mae,
            s_alpha: r.s_alpha,
            e_mean: r.e_mean,
            e_max: r.e_max,
            f_mean: r.f_mean,
            f_max: r.f_max,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;
    use tempfile::tempdir;

    fn write_map(path: &Path, size: u32, f: impl Fn(u32, u32) -> u8) {
        let img = image::GrayImage::from_fn(size, size, |x, y| image::Luma([f(x, y)]));
        img.save(path).unwrap();
    }

    fn square_mask(x: u32, y: u32) -> u8 {
        if (8..24).contains(&x) && (8..24).contains(&y) {
            255
        } else {
            0
        }
    }

    #[test]
    fn perfect_predictions_score_perfectly() {
        let dir = tempdir().unwrap();
        let gt = dir.path().join("gt");
        let pred = dir.path().join("pred");
        fs::create_dir_all(&gt).unwrap();
        fs::create_dir_all(&pred).unwrap();
        for stem in ["a", "b"] {
            write_map(&gt.join(format!("{stem}.png")), 32, square_mask);
            write_map(&pred.join(format!("{stem}.png")), 32, square_mask);
        }
        let report_path = dir.path().join("report.json");
        let arts = cmd_eval(&pred, &gt, &report_path, true).unwrap();
        assert_eq!(arts.report.images, 2);
        assert_eq!(arts.report.mae, 0.0);
        assert!(arts.report.s_alpha > 1.0 - 1e-9);
        assert!(arts.report.f_max > 1.0 - 1e-9);
        assert!(arts.report.adaptive_f.unwrap() > 1.0 - 1e-9);
        let json = fs::read_to_string(&report_path).unwrap();
        assert!(json.contains("\"s_alpha\""));
        let csv = fs::read_to_string(&arts.pr_csv).unwrap();
        assert_eq!(csv.lines().count(), 257, "header plus 256 thresholds");
        let rows = fs::read_to_string(&arts.images_csv).unwrap();
        assert_eq!(rows.lines().count(), 3);
    }

    #[test]
    fn missing_prediction_is_reported_by_stem() {
        let dir = tempdir().unwrap();
        let gt = dir.path().join("gt");
        let pred = dir.path().join("pred");
        fs::create_dir_all(&gt).unwrap();
        fs::create_dir_all(&pred).unwrap();
        write_map(&gt.join("a.png"), 32, square_mask);
        write_map(&gt.join("b.png"), 32, square_mask);
        write_map(&pred.join("a.png"), 32, square_mask);
        let err = cmd_eval(&pred, &gt, &dir.path().join("r.json"), false).unwrap_err();
        assert_eq!(err.kind(), "missing-predictions");
        assert!(err.to_string().contains('b'));
    }

    #[test]
    fn prediction_resized_to_gt_shape() {
        let dir = tempdir().unwrap();
        let gt = dir.path().join("gt");
        let pred = dir.path().join("pred");
        fs::create_dir_all(&gt).unwrap();
        fs::create_dir_all(&pred).unwrap();
        write_map(&gt.join("a.png"), 32, square_mask);
        write_map(&pred.join("a.png"), 64, |x, y| square_mask(x / 2, y / 2));
        let arts = cmd_eval(&pred, &gt, &dir.path().join("r.json"), false).unwrap();
        assert!(arts.report.mae < 0.05);
        assert!(arts.report.f_max > 0.9);
    }

    #[test]
    fn all_empty_gt_is_an_error() {
        let dir = tempdir().unwrap();
        let gt = dir.path().join("gt");
        let pred = dir.path().join("pred");
        fs::create_dir_all(&gt).unwrap();
        fs::create_dir_all(&pred).unwrap();
        write_map(&gt.join("a.png"), 16, |_, _| 0);
        write_map(&pred.join("a.png"), 16, |_, _| 0);
        let err = cmd_eval(&pred, &gt, &dir.path().join("r.json"), false).unwrap_err();
        assert_eq!(err.kind(), "core");
    }

    #[test]
    fn report_bytes_are_deterministic() {
        let dir = tempdir().unwrap();
        let gt = dir.path().join("gt");
        let pred = dir.path().join("pred");
        fs::create_dir_all(&gt).unwrap();
        fs::create_dir_all(&pred).unwrap();
        write_map(&gt.join("a.png"), 32, square_mask);
        write_map(&pred.join("a.png"), 32, |x, y| {
            ((x * 3 + y * 5) % 251) as u8
        });
        let r1 = dir.path().join("r1.json");
        let r2 = dir.path().join("r2.json");
        cmd_eval(&pred, &gt, &r1, false).unwrap();
        cmd_eval(&pred, &gt, &r2, false).unwrap();
        assert_eq!(fs::read(r1).unwrap(), fs::read(r2).unwrap());
    }
}
