//! Dataset statistics: resolution, object size, center bias, and the two
//! color-contrast measures (global, and local in a boundary band).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use bbnet_core::Tensor;
use serde::Serialize;

use crate::dataset::GroupRecord;
use crate::error::{AppError, AppResult};
use crate::imgio;

/// Half-width of the boundary band used for local contrast, in pixels.
pub const BAND_RADIUS: usize = 15;

/// Bins per channel in the contrast color histograms.
const COLOR_BINS: usize = 8;

/// Bins for the [0,1]-valued per-image statistics.
const UNIT_BINS: usize = 20;

#[derive(Debug, Clone, Serialize)]
pub struct Histogram {
    pub name: String,
    pub labels: Vec<String>,
    pub counts: Vec<usize>,
    /// Images that contributed to this histogram.
    pub measured: usize,
}

impl Histogram {
    fn unit(name: &str) -> Self {
        let labels = (0..UNIT_BINS)
            .map(|i| {
                format!(
                    "[{:.2},{:.2})",
                    i as f64 / UNIT_BINS as f64,
                    (i + 1) as f64 / UNIT_BINS as f64
                )
            })
            .collect();
        Histogram {
            name: name.to_string(),
            labels,
            counts: vec![0; UNIT_BINS],
            measured: 0,
        }
    }

    fn push_unit(&mut self, v: f64) {
        let bin = ((v * UNIT_BINS as f64) as usize).min(UNIT_BINS - 1);
        self.counts[bin] += 1;
        self.measured += 1;
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StatMeans {
    pub global_contrast: f64,
    pub local_contrast: f64,
    pub object_size: f64,
    pub center_bias: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetStats {
    pub images: usize,
    pub skipped_degenerate: usize,
    pub resolution: Histogram,
    pub global_contrast: Histogram,
    pub local_contrast: Histogram,
    pub object_size: Histogram,
    pub center_bias: Histogram,
    pub means: StatMeans,
}

/// Per-image statistics; `None` contrast entries mean the image had no
/// background (full-foreground masks have nothing to compare against).
#[derive(Debug, Clone, Copy)]
pub struct ImageStatRow {
    pub object_size: f64,
    pub center_bias: f64,
    pub global_contrast: Option<f64>,
    pub local_contrast: Option<f64>,
}

/// Normalized per-channel color histogram over the selected pixels.
fn color_histogram(img: &Tensor, select: impl Fn(usize) -> bool) -> Option<Vec<f64>> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let plane = h * w;
    let mut hist = vec![0.0; 3 * COLOR_BINS];
    let mut count = 0.0;
    for i in 0..plane {
        if select(i) {
            count += 1.0;
            for c in 0..3 {
                let v = img.data()[c * plane + i].clamp(0.0, 1.0);
                let bin = ((v * COLOR_BINS as f64) as usize).min(COLOR_BINS - 1);
                hist[c * COLOR_BINS + bin] += 1.0;
            }
        }
    }
    if count == 0.0 {
        return None;
    }
    for v in hist.iter_mut() {
        *v /= 3.0 * count;
    }
    Some(hist)
}

/// Chi-square distance between two normalized histograms, in [0,1].
fn chi_square(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let s = x + y;
        if s > 0.0 {
            acc += (x - y) * (x - y) / s;
        }
    }
    acc / 2.0
}

/// Chebyshev dilation by `r` via two separable 1D max passes.
fn max_filter(mask: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let x0 = x.saturating_sub(r);
            let x1 = (x + r + 1).min(w);
            let mut m = 0.0;
            for i in x0..x1 {
                if mask[y * w + i] > m {
                    m = mask[y * w + i];
                }
            }
            rows[y * w + x] = m;
        }
    }
    let mut out = vec![0.0; h * w];
    for x in 0..w {
        for y in 0..h {
            let y0 = y.saturating_sub(r);
            let y1 = (y + r + 1).min(h);
            let mut m = 0.0;
            for i in y0..y1 {
                if rows[i * w + x] > m {
                    m = rows[i * w + x];
                }
            }
            out[y * w + x] = m;
        }
    }
    out
}

/// Statistics of one image/mask pair at native resolution. Returns `None`
/// for all-background masks, which are skipped and counted by the caller.
pub fn image_stats(img: &Tensor, mask: &Tensor) -> Option<ImageStatRow> {
    let (h, w) = (mask.shape()[0], mask.shape()[1]);
    let md = mask.data();
    let fg: f64 = md.iter().sum();
    if fg == 0.0 {
        return None;
    }
    let n = (h * w) as f64;
    let object_size = fg / n;

    let mut cx = 0.0;
    let mut cy = 0.0;
    for y in 0..h {
        for x in 0..w {
            let v = md[y * w + x];
            cx += v * (x as f64 + 0.5);
            cy += v * (y as f64 + 0.5);
        }
    }
    cx /= fg;
    cy /= fg;
    let dx = cx - w as f64 / 2.0;
    let dy = cy - h as f64 / 2.0;
    let diag = ((h * h + w * w) as f64).sqrt();
    let center_bias = ((dx * dx + dy * dy).sqrt() / diag * 2.0).clamp(0.0, 1.0);

    let obj_hist = color_histogram(img, |i| md[i] == 1.0);
    let bg_hist = color_histogram(img, |i| md[i] == 0.0);
    let global_contrast = match (&obj_hist, &bg_hist) {
        (Some(a), Some(b)) => Some(chi_square(a, b)),
        _ => None,
    };

    // Band pixels have both classes inside their (2r+1)^2 neighborhood:
    // dilation exceeds erosion there. Erosion of m is 1 - dilation of 1-m.
    let local_contrast = if global_contrast.is_some() {
        let dil = max_filter(md, h, w, BAND_RADIUS);
        let inv: Vec<f64> = md.iter().map(|v| 1.0 - v).collect();
        let dil_inv = max_filter(&inv, h, w, BAND_RADIUS);
        let band: Vec<bool> = dil
            .iter()
            .zip(&dil_inv)
            .map(|(&d, &di)| d == 1.0 && di == 1.0)
            .collect();
        let band_obj = color_histogram(img, |i| band[i] && md[i] == 1.0);
        let band_bg = color_histogram(img, |i| band[i] && md[i] == 0.0);
        match (band_obj, band_bg) {
            (Some(a), Some(b)) => Some(chi_square(&a, &b)),
            _ => None,
        }
    } else {
        None
    };

    Some(ImageStatRow {
        object_size,
        center_bias,
        global_contrast,
        local_contrast,
    })
}

/// Aggregates statistics over every image of every record at native
/// resolution. All-background masks are skipped and counted.
pub fn compute_stats(records: &[GroupRecord]) -> AppResult<DatasetStats> {
    if records.is_empty() {
        return Err(AppError::Dataset("no records to measure".to_string()));
    }
    let mut resolution_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut global = Histogram::unit("global_contrast");
    let mut local = Histogram::unit("local_contrast");
    let mut size_h = Histogram::unit("object_size");
    let mut bias_h = Histogram::unit("center_bias");
    let mut sums = StatMeans {
        global_contrast: 0.0,
        local_contrast: 0.0,
        object_size: 0.0,
        center_bias: 0.0,
    };
    let mut images = 0usize;
    let mut skipped = 0usize;

    for record in records {
        for (img_path, mask_path) in record.image_paths.iter().zip(&record.mask_paths) {
            let img = imgio::load_rgb(img_path)?;
            let mask = imgio::load_gray(mask_path)?.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
            let (ih, iw) = (img.shape()[1], img.shape()[2]);
            if (mask.shape()[0], mask.shape()[1]) != (ih, iw) {
                return Err(AppError::Image {
                    path: mask_path.clone(),
                    detail: "mask and image dimensions differ".to_string(),
                });
            }
            match image_stats(&img, &mask) {
                None => {
                    log::warn!("skipping degenerate (all-zero) mask {}", mask_path.display());
                    skipped += 1;
                }
                Some(row) => {
                    images += 1;
                    *resolution_counts.entry(format!("{iw}x{ih}")).or_default() += 1;
                    size_h.push_unit(row.object_size);
                    bias_h.push_unit(row.center_bias);
                    sums.object_size += row.object_size;
                    sums.center_bias += row.center_bias;
                    if let Some(v) = row.global_contrast {
                        global.push_unit(v);
                        sums.global_contrast += v;
                    }
                    if let Some(v) = row.local_contrast {
                        local.push_unit(v);
                        sums.local_contrast += v;
                    }
                }
            }
        }
    }
    if images == 0 {
        return Err(AppError::Dataset(
            "every mask was degenerate; nothing to measure".to_string(),
        ));
    }

    let resolution = Histogram {
        name: "resolution".to_string(),
        labels: resolution_counts.keys().cloned().collect(),
        counts: resolution_counts.values().cloned().collect(),
        measured: images,
    };
    let means = StatMeans {
        global_contrast: sums.global_contrast / global.measured.max(1) as f64,
        local_contrast: sums.local_contrast / local.measured.max(1) as f64,
        object_size: sums.object_size / images as f64,
        center_bias: sums.center_bias / images as f64,
    };
    Ok(DatasetStats {
        images,
        skipped_degenerate: skipped,
        resolution,
        global_contrast: global,
        local_contrast: local,
        object_size: size_h,
        center_bias: bias_h,
        means,
    })
}

/// `stats` subcommand. A root holding `train`/`test` splits is measured
/// across every split present; otherwise the root is treated as one split.
pub fn cmd_stats(root: &Path, out_prefix: &Path) -> AppResult<(PathBuf, PathBuf)> {
    let mut records = Vec::new();
    let mut any_split = false;
    for split in ["train", "test"] {
        let dir = root.join(split);
        if dir.is_dir() {
            any_split = true;
            records.extend(crate::dataset::scan_dataset(&dir)?.records);
        }
    }
    if !any_split {
        records = crate::dataset::scan_dataset(root)?.records;
    }
    let stats = compute_stats(&records)?;
    let paths = write_stats(&stats, out_prefix)?;
    println!(
        "measured {} images ({} degenerate skipped): mean object_size {:.4}, \
         mean global_contrast {:.4}, mean local_contrast {:.4}",
        stats.images,
        stats.skipped_degenerate,
        stats.means.object_size,
        stats.means.global_contrast,
        stats.means.local_contrast
    );
    Ok(paths)
}

/// Writes `<prefix>.json` (summary) and `<prefix>.csv` (one row per bin).
pub fn write_stats(stats: &DatasetStats, prefix: &Path) -> AppResult<(PathBuf, PathBuf)> {
    let json_path = prefix.with_extension("json");
    let csv_path = prefix.with_extension("csv");
    if let Some(parent) = json_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| AppError::io(parent, e))?;
        }
    }
    let json = serde_json::to_string_pretty(stats).expect("stats serialize");
    fs::write(&json_path, json).map_err(|e| AppError::io(&json_path, e))?;

    let mut csv = String::from("histogram,bin,count\n");
    for h in [
        &stats.resolution,
        &stats.global_contrast,
        &stats.local_contrast,
        &stats.object_size,
        &stats.center_bias,
    ] {
        for (label, count) in h.labels.iter().zip(&h.counts) {
            csv.push_str(&format!("{},{label},{count}\n", h.name));
        }
    }
    let mut f = fs::File::create(&csv_path).map_err(|e| AppError::io(&csv_path, e))?;
    f.write_all(csv.as_bytes())
        .map_err(|e| AppError::io(&csv_path, e))?;
    Ok((json_path, csv_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::scan_dataset;
    use crate::synth::{synth_generate_styled, Style};
    use tempfile::tempdir;

    fn flat_image(h: usize, w: usize, rgb: [f64; 3]) -> Tensor {
        let mut data = vec![0.0; 3 * h * w];
        for c in 0..3 {
            for i in 0..h * w {
                data[c * h * w + i] = rgb[c];
            }
        }
        Tensor::new(vec![3, h, w], data)
    }

    #[test]
    fn full_mask_gives_size_one_and_no_bias() {
        let img = flat_image(10, 10, [0.5, 0.5, 0.5]);
        let mask = Tensor::new(vec![10, 10], vec![1.0; 100]);
        let row = image_stats(&img, &mask).unwrap();
        assert_eq!(row.object_size, 1.0);
        assert_eq!(row.center_bias, 0.0);
        assert!(row.global_contrast.is_none(), "no background to compare");
    }

    #[test]
    fn center_pixel_has_no_bias() {
        let img = flat_image(9, 9, [0.5, 0.5, 0.5]);
        let mut m = vec![0.0; 81];
        m[4 * 9 + 4] = 1.0;
        let mask = Tensor::new(vec![9, 9], m);
        let row = image_stats(&img, &mask).unwrap();
        assert!(row.center_bias.abs() < 1e-12);
        assert!((row.object_size - 1.0 / 81.0).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_is_degenerate() {
        let img = flat_image(8, 8, [0.2, 0.2, 0.2]);
        let mask = Tensor::new(vec![8, 8], vec![0.0; 64]);
        assert!(image_stats(&img, &mask).is_none());
    }

    #[test]
    fn identical_colors_have_zero_contrast() {
        let img = flat_image(12, 12, [0.4, 0.4, 0.4]);
        let mut m = vec![0.0; 144];
        for y in 4..8 {
            for x in 4..8 {
                m[y * 12 + x] = 1.0;
            }
        }
        let mask = Tensor::new(vec![12, 12], m);
        let row = image_stats(&img, &mask).unwrap();
        assert_eq!(row.global_contrast.unwrap(), 0.0);
        assert_eq!(row.local_contrast.unwrap(), 0.0);
    }

    #[test]
    fn opposite_colors_have_high_contrast() {
        let mut img = flat_image(12, 12, [0.05, 0.05, 0.05]);
        let mut m = vec![0.0; 144];
        for y in 4..8 {
            for x in 4..8 {
                m[y * 12 + x] = 1.0;
                for c in 0..3 {
                    img.data_mut()[c * 144 + y * 12 + x] = 0.95;
                }
            }
        }
        let mask = Tensor::new(vec![12, 12], m);
        let row = image_stats(&img, &mask).unwrap();
        assert!(row.global_contrast.unwrap() > 0.9);
        assert!(row.local_contrast.unwrap() > 0.9);
    }

    #[test]
    fn histogram_totals_match_image_count() {
        let dir = tempdir().unwrap();
        synth_generate_styled(dir.path(), 2, 6, 48, 7, Style::Camouflaged).unwrap();
        let outcome = scan_dataset(&dir.path().join("train")).unwrap();
        let stats = compute_stats(&outcome.records).unwrap();
        assert_eq!(stats.images, 12);
        assert_eq!(stats.skipped_degenerate, 0);
        assert_eq!(stats.object_size.counts.iter().sum::<usize>(), 12);
        assert_eq!(stats.center_bias.counts.iter().sum::<usize>(), 12);
        assert_eq!(stats.resolution.counts.iter().sum::<usize>(), 12);
        assert_eq!(stats.resolution.labels, vec!["48x48".to_string()]);
    }

    #[test]
    fn camouflaged_style_has_lower_local_contrast_than_matte() {
        let cam_dir = tempdir().unwrap();
        let mat_dir = tempdir().unwrap();
        synth_generate_styled(cam_dir.path(), 3, 8, 48, 5, Style::Camouflaged).unwrap();
        synth_generate_styled(mat_dir.path(), 3, 8, 48, 5, Style::Matte).unwrap();
        let cam = compute_stats(
            &scan_dataset(&cam_dir.path().join("train")).unwrap().records,
        )
        .unwrap();
        let mat = compute_stats(
            &scan_dataset(&mat_dir.path().join("train")).unwrap().records,
        )
        .unwrap();
        assert!(
            cam.means.local_contrast < mat.means.local_contrast,
            "camouflaged {} vs matte {}",
            cam.means.local_contrast,
            mat.means.local_contrast
        );
    }

    #[test]
    fn stats_files_are_written() {
        let dir = tempdir().unwrap();
        synth_generate_styled(dir.path(), 1, 5, 48, 2, Style::Camouflaged).unwrap();
        let outcome = scan_dataset(&dir.path().join("train")).unwrap();
        let stats = compute_stats(&outcome.records).unwrap();
        let (json_path, csv_path) = write_stats(&stats, &dir.path().join("stats")).unwrap();
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(json_path).unwrap()).unwrap();
        assert_eq!(json["images"], 5);
        let csv = fs::read_to_string(csv_path).unwrap();
        assert!(csv.starts_with("histogram,bin,count\n"));
        assert!(csv.lines().count() > UNIT_BINS);
    }
}
