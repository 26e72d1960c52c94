//! Evaluation measures: MAE, F-measure sweep, E-measure sweep, S-measure,
//! and dataset aggregation with a pointwise-averaged PR curve.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, CoreResult};
use crate::tensor::{self, Tensor};

/// Thresholds swept for F and E: t/255 for t in 0..=255.
pub const NUM_THRESHOLDS: usize = 256;

/// beta^2 in the F-measure.
pub const F_BETA2: f64 = 0.3;

/// Denominator guard in the E-measure alignment term.
pub const E_EPS: f64 = 1e-8;

/// Mix between object- and region-oriented similarity in the S-measure.
pub const S_ALPHA: f64 = 0.5;

/// A prediction aligned to its binary ground truth: same height and width,
/// prediction values in [0,1].
#[derive(Debug, Clone)]
pub struct EvalPair {
    h: usize,
    w: usize,
    p: Vec<f64>,
    g: Vec<f64>,
}

impl EvalPair {
    /// Aligns `p` to `g`: resizes bilinearly when shapes differ, then
    /// min-max normalizes `p` when its range leaves [0,1]. `g` must be
    /// strictly binary. Both tensors are rank-2 (H,W).
    pub fn new(p: &Tensor, g: &Tensor) -> CoreResult<Self> {
        let gs = g.shape();
        let ps = p.shape();
        if gs.len() != 2 || ps.len() != 2 {
            return Err(CoreError::Shape {
                context: "eval pair",
                expected: String::from("rank-2 maps"),
                got: format!("p rank {}, g rank {}", ps.len(), gs.len()),
            });
        }
        let (h, w) = (gs[0], gs[1]);
        if h == 0 || w == 0 {
            return Err(CoreError::Shape {
                context: "eval pair",
                expected: String::from("non-empty ground truth"),
                got: format!("{h}x{w}"),
            });
        }
        for &v in g.data() {
            if v != 0.0 && v != 1.0 {
                return Err(CoreError::Config(format!(
                    "ground truth is not binary (found {v})"
                )));
            }
        }
        p.assert_finite("eval prediction")?;
        let mut pd: Vec<f64> = if ps[0] == h && ps[1] == w {
            p.data().to_vec()
        } else {
            let p4 = Tensor::new(vec![1, 1, ps[0], ps[1]], p.data().to_vec());
            tensor::resize_bilinear_forward(&p4, h, w).data().to_vec()
        };
        let lo = pd.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = pd.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if lo < 0.0 || hi > 1.0 {
            if hi > lo {
                for v in &mut pd {
                    *v = (*v - lo) / (hi - lo);
                }
            } else {
                for v in &mut pd {
                    *v = v.clamp(0.0, 1.0);
                }
            }
        }
        Ok(Self {
            h,
            w,
            p: pd,
            g: g.data().to_vec(),
        })
    }

    pub fn from_raw(h: usize, w: usize, p: Vec<f64>, g: Vec<f64>) -> CoreResult<Self> {
        let pt = Tensor::new(vec![h, w], p);
        let gt = Tensor::new(vec![h, w], g);
        Self::new(&pt, &gt)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn prediction(&self) -> &[f64] {
        &self.p
    }

    pub fn ground_truth(&self) -> &[f64] {
        &self.g
    }

    pub fn foreground_count(&self) -> usize {
        self.g.iter().filter(|&&v| v == 1.0).count()
    }

    /// True when the mask is all-background or all-foreground.
    pub fn is_degenerate(&self) -> bool {
        let n = self.foreground_count();
        n == 0 || n == self.g.len()
    }
}

/// Largest t in 0..=255 with t/255 <= p, matching the comparison
/// `p >= t/255` exactly despite floating-point rounding.
fn threshold_index(p: f64) -> usize {
    let mut idx = ((p * 255.0) as i64).clamp(0, 255);
    while idx < 255 && (idx + 1) as f64 / 255.0 <= p {
        idx += 1;
    }
    while idx > 0 && idx as f64 / 255.0 > p {
        idx -= 1;
    }
    idx as usize
}

/// Per-threshold true-positive and predicted-positive counts from suffix
/// sums of the prediction histogram. `tp[t]` and `pp[t]` are the counts at
/// threshold t/255.
fn sweep_counts(pair: &EvalPair) -> (Vec<f64>, Vec<f64>) {
    let mut hist_fg = [0u64; NUM_THRESHOLDS];
    let mut hist_all = [0u64; NUM_THRESHOLDS];
    for (pv, gv) in pair.p.iter().zip(&pair.g) {
        let idx = threshold_index(*pv);
        hist_all[idx] += 1;
        if *gv == 1.0 {
            hist_fg[idx] += 1;
        }
    }
    let mut tp = vec![0.0; NUM_THRESHOLDS];
    let mut pp = vec![0.0; NUM_THRESHOLDS];
    let mut acc_fg = 0u64;
    let mut acc_all = 0u64;
    for t in (0..NUM_THRESHOLDS).rev() {
        acc_fg += hist_fg[t];
        acc_all += hist_all[t];
        tp[t] = acc_fg as f64;
        pp[t] = acc_all as f64;
    }
    (tp, pp)
}

/// Mean absolute error.
pub fn mae(pair: &EvalPair) -> f64 {
    let mut acc = 0.0;
    for (pv, gv) in pair.p.iter().zip(&pair.g) {
        acc += (pv - gv).abs();
    }
    acc / pair.p.len() as f64
}

/// F-measure sweep outcome. `precision[t]`/`recall[t]` binarize at t/255.
#[derive(Debug, Clone)]
pub struct FMeasure {
    pub f_max: f64,
    pub f_mean: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

fn f_beta(precision: f64, recall: f64) -> f64 {
    let den = F_BETA2 * precision + recall;
    if den > 0.0 {
        (1.0 + F_BETA2) * precision * recall / den
    } else {
        0.0
    }
}

/// Threshold-swept F-measure. Errors on empty ground truth; callers count
/// such images instead of aggregating them.
pub fn f_measure(pair: &EvalPair) -> CoreResult<FMeasure> {
    let n_fg = pair.foreground_count() as f64;
    if n_fg == 0.0 {
        return Err(CoreError::DegenerateGt);
    }
    let (tp, pp) = sweep_counts(pair);
    let mut precision = vec![0.0; NUM_THRESHOLDS];
    let mut recall = vec![0.0; NUM_THRESHOLDS];
    let mut f_max = 0.0;
    let mut f_sum = 0.0;
    for t in 0..NUM_THRESHOLDS {
        let pr = if pp[t] > 0.0 { tp[t] / pp[t] } else { 0.0 };
        let rc = tp[t] / n_fg;
        precision[t] = pr;
        recall[t] = rc;
        let f = f_beta(pr, rc);
        f_sum += f;
        if f > f_max {
            f_max = f;
        }
    }
    Ok(FMeasure {
        f_max,
        f_mean: f_sum / NUM_THRESHOLDS as f64,
        precision,
        recall,
    })
}

/// Adaptive-threshold F-measure: binarize at min(2 * mean(P), 1). Offered
/// for comparison with tooling that reports it; not part of the sweep stats.
pub fn f_measure_adaptive(pair: &EvalPair) -> CoreResult<f64> {
    let n_fg = pair.foreground_count() as f64;
    if n_fg == 0.0 {
        return Err(CoreError::DegenerateGt);
    }
    let thr = (2.0 * pair.p.iter().sum::<f64>() / pair.p.len() as f64).min(1.0);
    let mut tp = 0.0;
    let mut pp = 0.0;
    for (pv, gv) in pair.p.iter().zip(&pair.g) {
        if *pv >= thr {
            pp += 1.0;
            tp += gv;
        }
    }
    let pr = if pp > 0.0 { tp / pp } else { 0.0 };
    let rc = tp / n_fg;
    Ok(f_beta(pr, rc))
}

/// E-measure sweep outcome.
#[derive(Debug, Clone, Copy)]
pub struct EMeasure {
    pub e_max: f64,
    pub e_mean: f64,
}

/// Enhanced-alignment measure over the 256-threshold sweep. Because both
/// maps are binary at each threshold, the alignment map takes only four
/// values, weighted by the confusion counts.
pub fn e_measure(pair: &EvalPair) -> EMeasure {
    let n = pair.p.len() as f64;
    let n_fg = pair.foreground_count() as f64;
    let (tp, pp) = sweep_counts(pair);
    let mut e_max = 0.0;
    let mut e_sum = 0.0;
    for t in 0..NUM_THRESHOLDS {
        let e = if n_fg == 0.0 {
            1.0 - pp[t] / n
        } else if n_fg == n {
            pp[t] / n
        } else {
            let mu_g = n_fg / n;
            let mu_b = pp[t] / n;
            let enhanced = |phi_g: f64, phi_b: f64| {
                let xi = 2.0 * phi_g * phi_b / (phi_g * phi_g + phi_b * phi_b + E_EPS);
                (xi + 1.0) * (xi + 1.0) / 4.0
            };
            let tp_t = tp[t];
            let fp_t = pp[t] - tp_t;
            let fn_t = n_fg - tp_t;
            let tn_t = n - n_fg - fp_t;
            (tp_t * enhanced(1.0 - mu_g, 1.0 - mu_b)
                + fn_t * enhanced(1.0 - mu_g, -mu_b)
                + fp_t * enhanced(-mu_g, 1.0 - mu_b)
                + tn_t * enhanced(-mu_g, -mu_b))
                / n
        };
        e_sum += e;
        if e > e_max {
            e_max = e;
        }
    }
    EMeasure {
        e_max,
        e_mean: e_sum / NUM_THRESHOLDS as f64,
    }
}

struct Moments {
    n: f64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn new() -> Self {
        Moments {
            n: 0.0,
            sum: 0.0,
            sum_sq: 0.0,
        }
    }

    fn push(&mut self, v: f64) {
        self.n += 1.0;
        self.sum += v;
        self.sum_sq += v * v;
    }

    fn mean(&self) -> f64 {
        if self.n > 0.0 {
            self.sum / self.n
        } else {
            0.0
        }
    }

    fn sample_std(&self) -> f64 {
        if self.n < 2.0 {
            return 0.0;
        }
        let var = (self.sum_sq - self.sum * self.sum / self.n) / (self.n - 1.0);
        libm::sqrt(var.max(0.0))
    }
}

fn object_similarity(m: &Moments) -> f64 {
    let x = m.mean();
    2.0 * x / (x * x + 1.0 + m.sample_std() + f64::EPSILON)
}

struct RegionAcc {
    n: f64,
    sp: f64,
    sg: f64,
    spp: f64,
    sgg: f64,
    spg: f64,
}

impl RegionAcc {
    fn new() -> Self {
        RegionAcc {
            n: 0.0,
            sp: 0.0,
            sg: 0.0,
            spp: 0.0,
            sgg: 0.0,
            spg: 0.0,
        }
    }

    fn push(&mut self, p: f64, g: f64) {
        self.n += 1.0;
        self.sp += p;
        self.sg += g;
        self.spp += p * p;
        self.sgg += g * g;
        self.spg += p * g;
    }

    fn ssim(&self) -> f64 {
        if self.n == 0.0 {
            return 1.0;
        }
        let x = self.sp / self.n;
        let y = self.sg / self.n;
        let den = self.n - 1.0 + f64::EPSILON;
        let sx2 = (self.spp - self.n * x * x) / den;
        let sy2 = (self.sgg - self.n * y * y) / den;
        let sxy = (self.spg - self.n * x * y) / den;
        let alpha = 4.0 * x * y * sxy;
        let beta = (x * x + y * y) * (sx2 + sy2);
        if alpha != 0.0 {
            alpha / (beta + f64::EPSILON)
        } else if beta == 0.0 {
            1.0
        } else {
            0.0
        }
    }
}

/// Structure measure S = alpha * S_object + (1 - alpha) * S_region, with the
/// degenerate rules S = 1 - mean(P) on empty masks and S = mean(P) on full
/// ones. Single pass over pixels with accumulator statistics.
pub fn s_measure(pair: &EvalPair) -> f64 {
    let n = pair.p.len() as f64;
    let n_fg = pair.foreground_count() as f64;
    let p_mean = pair.p.iter().sum::<f64>() / n;
    if n_fg == 0.0 {
        return 1.0 - p_mean;
    }
    if n_fg == n {
        return p_mean;
    }
    let mu = n_fg / n;

    let mut fg = Moments::new();
    let mut bg = Moments::new();
    for (pv, gv) in pair.p.iter().zip(&pair.g) {
        if *gv == 1.0 {
            fg.push(*pv);
        } else {
            bg.push(1.0 - *pv);
        }
    }
    let s_object = mu * object_similarity(&fg) + (1.0 - mu) * object_similarity(&bg);

    // Mask centroid in 1-based coordinates, rounded half away from zero;
    // quadrant (0,0) spans cy rows by cx columns.
    let (h, w) = (pair.h, pair.w);
    let mut col_acc = 0.0;
    let mut row_acc = 0.0;
    for y in 0..h {
        let row = &pair.g[y * w..(y + 1) * w];
        for (x, gv) in row.iter().enumerate() {
            col_acc += gv * (x as f64 + 1.0);
            row_acc += gv * (y as f64 + 1.0);
        }
    }
    let cx = libm::round(col_acc / n_fg) as usize;
    let cy = libm::round(row_acc / n_fg) as usize;

    let mut quads = [
        RegionAcc::new(),
        RegionAcc::new(),
        RegionAcc::new(),
        RegionAcc::new(),
    ];
    for y in 0..h {
        for x in 0..w {
            let qi = usize::from(y >= cy) * 2 + usize::from(x >= cx);
            quads[qi].push(pair.p[y * w + x], pair.g[y * w + x]);
        }
    }
    let mut s_region = 0.0;
    for q in &quads {
        s_region += q.n / n * q.ssim();
    }

    (S_ALPHA * s_object + (1.0 - S_ALPHA) * s_region).clamp(0.0, 1.0)
}

/// Scalar metrics for one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageMetrics {
    pub mae: f64,
    pub s_alpha: f64,
    pub e_mean: f64,
    pub e_max: f64,
    pub f_mean: f64,
    pub f_max: f64,
}

/// All scalar metrics plus the PR curve for one non-degenerate pair.
pub fn evaluate_pair(pair: &EvalPair) -> CoreResult<(ImageMetrics, FMeasure)> {
    let f = f_measure(pair)?;
    let e = e_measure(pair);
    let m = ImageMetrics {
        mae: mae(pair),
        s_alpha: s_measure(pair),
        e_mean: e.e_mean,
        e_max: e.e_max,
        f_mean: f.f_mean,
        f_max: f.f_max,
    };
    Ok((m, f))
}

/// Per-image rows plus dataset means and the pointwise-averaged PR curve.
/// Images with empty masks are listed in `degenerate` and excluded from
/// every aggregate.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub rows: Vec<(String, ImageMetrics)>,
    pub mean: ImageMetrics,
    pub pr_precision: Vec<f64>,
    pub pr_recall: Vec<f64>,
    pub degenerate: Vec<String>,
}

impl MetricReport {
    pub fn evaluated(&self) -> usize {
        self.rows.len()
    }
}

/// Evaluates named pairs and aggregates. Rows are sorted by name so sums are
/// order-independent regardless of input order.
pub fn evaluate_set(items: Vec<(String, EvalPair)>) -> CoreResult<MetricReport> {
    let mut items = items;
    items.sort_by(|a, b| a.0.cmp(&b.0));
    let mut rows = Vec::new();
    let mut degenerate = Vec::new();
    let mut pr_p = vec![0.0; NUM_THRESHOLDS];
    let mut pr_r = vec![0.0; NUM_THRESHOLDS];
    let mut sums = [0.0; 6];
    for (name, pair) in items {
        if pair.foreground_count() == 0 {
            degenerate.push(name);
            continue;
        }
        let (m, f) = evaluate_pair(&pair)?;
        for t in 0..NUM_THRESHOLDS {
            pr_p[t] += f.precision[t];
            pr_r[t] += f.recall[t];
        }
        sums[0] += m.mae;
        sums[1] += m.s_alpha;
        sums[2] += m.e_mean;
        sums[3] += m.e_max;
        sums[4] += m.f_mean;
        sums[5] += m.f_max;
        rows.push((name, m));
    }
    let n = rows.len();
    if n == 0 {
        return Err(CoreError::Config(String::from(
            "no non-degenerate images to evaluate",
        )));
    }
    let nf = n as f64;
    for t in 0..NUM_THRESHOLDS {
        pr_p[t] /= nf;
        pr_r[t] /= nf;
    }
    Ok(MetricReport {
        rows,
        mean: ImageMetrics {
            mae: sums[0] / nf,
            s_alpha: sums[1] / nf,
            e_mean: sums[2] / nf,
            e_max: sums[3] / nf,
            f_mean: sums[4] / nf,
            f_max: sums[5] / nf,
        },
        pr_precision: pr_p,
        pr_recall: pr_r,
        degenerate,
    })
}
