//! Naive scalar reference implementations.
//!
//! Everything here trades speed for obviousness: explicit nested loops,
//! materialized sub-regions, no histogram or suffix-sum shortcuts. Tests
//! compare the optimized library code against these.

use alloc::vec;
use alloc::vec::Vec;

/// Mean over the k x k window centred at each pixel, dividing by the number
/// of in-bounds taps.
pub fn window_mean(g: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    assert_eq!(g.len(), h * w);
    let r = (k / 2) as isize;
    let mut out = vec![0.0; h * w];
    for oy in 0..h as isize {
        for ox in 0..w as isize {
            let mut acc = 0.0;
            let mut count = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let iy = oy + dy;
                    let ix = ox + dx;
                    if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                        acc += g[(iy * w as isize + ix) as usize];
                        count += 1.0;
                    }
                }
            }
            out[(oy * w as isize + ox) as usize] = acc / count;
        }
    }
    out
}

fn conv3_replicate(
    f: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
    oc: usize,
    oy: usize,
    ox: usize,
) -> f64 {
    let mut acc = bias[oc];
    for ic in 0..c_in {
        for ky in 0..3usize {
            for kx in 0..3usize {
                let iy = (oy as isize + ky as isize - 1).clamp(0, h as isize - 1) as usize;
                let ix = (ox as isize + kx as isize - 1).clamp(0, w as isize - 1) as usize;
                acc += weight[((oc * c_in + ic) * 3 + ky) * 3 + kx] * f[(ic * h + iy) * w + ix];
            }
        }
    }
    acc
}

/// Affinity attention on one image: replicate-padded 3x3 query/key
/// convolutions, dense pairwise affinity, then the 1/HW-scaled product with
/// the input. Returns (query, key, affinity, context) flattened.
#[allow(clippy::too_many_arguments)]
pub fn ofs_context(
    f: &[f64],
    c: usize,
    h: usize,
    w: usize,
    wq: &[f64],
    bq: &[f64],
    wk: &[f64],
    bk: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    assert_eq!(f.len(), c * h * w);
    let hw = h * w;
    let mut q = vec![0.0; c * hw];
    let mut k = vec![0.0; c * hw];
    for oc in 0..c {
        for oy in 0..h {
            for ox in 0..w {
                q[(oc * h + oy) * w + ox] = conv3_replicate(f, c, h, w, wq, bq, oc, oy, ox);
                k[(oc * h + oy) * w + ox] = conv3_replicate(f, c, h, w, wk, bk, oc, oy, ox);
            }
        }
    }
    let mut a = vec![0.0; hw * hw];
    for i in 0..hw {
        for j in 0..hw {
            let mut acc = 0.0;
            for ch in 0..c {
                acc += q[ch * hw + i] * k[ch * hw + j];
            }
            a[i * hw + j] = acc;
        }
    }
    let mut ctx = vec![0.0; c * hw];
    for ch in 0..c {
        for i in 0..hw {
            let mut acc = 0.0;
            for j in 0..hw {
                acc += a[i * hw + j] * f[ch * hw + j];
            }
            ctx[ch * hw + i] = acc / hw as f64;
        }
    }
    (q, k, a, ctx)
}

/// Mean absolute error, one pixel at a time.
pub fn mae(p: &[f64], g: &[f64]) -> f64 {
    assert_eq!(p.len(), g.len());
    let mut acc = 0.0;
    for (pv, gv) in p.iter().zip(g) {
        acc += (pv - gv).abs();
    }
    acc / p.len() as f64
}

/// Precision, recall, and F_beta at all 256 thresholds, recomputing the
/// binary map from scratch for each threshold.
pub fn f_curve(p: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    assert_eq!(p.len(), g.len());
    let beta2 = 0.3;
    let mut precision = vec![0.0; 256];
    let mut recall = vec![0.0; 256];
    let mut f = vec![0.0; 256];
    for t in 0..256usize {
        let thr = t as f64 / 255.0;
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fng = 0.0;
        for (pv, gv) in p.iter().zip(g) {
            let b = if *pv >= thr { 1.0 } else { 0.0 };
            tp += b * gv;
            fp += b * (1.0 - gv);
            fng += (1.0 - b) * gv;
        }
        let pr = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let rc = if tp + fng > 0.0 { tp / (tp + fng) } else { 0.0 };
        precision[t] = pr;
        recall[t] = rc;
        let den = beta2 * pr + rc;
        f[t] = if den > 0.0 {
            (1.0 + beta2) * pr * rc / den
        } else {
            0.0
        };
    }
    (precision, recall, f)
}

/// Enhanced-alignment score per threshold, building the full alignment map.
pub fn e_curve(p: &[f64], g: &[f64]) -> Vec<f64> {
    assert_eq!(p.len(), g.len());
    let eps = 1e-8;
    let n = p.len() as f64;
    let g_sum: f64 = g.iter().sum();
    let mut out = vec![0.0; 256];
    for t in 0..256usize {
        let thr = t as f64 / 255.0;
        let b: Vec<f64> = p.iter().map(|&v| if v >= thr { 1.0 } else { 0.0 }).collect();
        let b_mean: f64 = b.iter().sum::<f64>() / n;
        out[t] = if g_sum == 0.0 {
            1.0 - b_mean
        } else if g_sum == n {
            b_mean
        } else {
            let g_mean = g_sum / n;
            let mut acc = 0.0;
            for (bv, gv) in b.iter().zip(g) {
                let phi_g = gv - g_mean;
                let phi_b = bv - b_mean;
                let xi = 2.0 * phi_g * phi_b / (phi_g * phi_g + phi_b * phi_b + eps);
                acc += (xi + 1.0) * (xi + 1.0) / 4.0;
            }
            acc / n
        };
    }
    out
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    let ss: f64 = v.iter().map(|&x| (x - m) * (x - m)).sum();
    libm::sqrt(ss / (v.len() as f64 - 1.0))
}

fn object_score(vals: &[f64]) -> f64 {
    let x = mean(vals);
    let s = sample_std(vals);
    2.0 * x / (x * x + 1.0 + s + f64::EPSILON)
}

fn region_ssim(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len() as f64;
    if p.is_empty() {
        return 1.0;
    }
    let x = mean(p);
    let y = mean(g);
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxy = 0.0;
    for (pv, gv) in p.iter().zip(g) {
        sx += (pv - x) * (pv - x);
        sy += (gv - y) * (gv - y);
        sxy += (pv - x) * (gv - y);
    }
    let den = n - 1.0 + f64::EPSILON;
    let sx2 = sx / den;
    let sy2 = sy / den;
    let sxy = sxy / den;
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

fn sub_rect(
    m: &[f64],
    w: usize,
    y0: usize,
    y1: usize,
    x0: usize,
    x1: usize,
) -> Vec<f64> {
    let mut out = Vec::with_capacity((y1 - y0) * (x1 - x0));
    for y in y0..y1 {
        for x in x0..x1 {
            out.push(m[y * w + x]);
        }
    }
    out
}

/// Structure measure with alpha = 0.5, materializing foreground, background,
/// and the four centroid quadrants as explicit vectors.
pub fn s_measure(p: &[f64], g: &[f64], h: usize, w: usize) -> f64 {
    assert_eq!(p.len(), h * w);
    assert_eq!(g.len(), h * w);
    let total: f64 = g.iter().sum();
    let n = (h * w) as f64;
    if total == 0.0 {
        return 1.0 - mean(p);
    }
    if total == n {
        return mean(p);
    }
    let mu = total / n;

    let fg: Vec<f64> = p.iter().zip(g).filter(|(_, &gv)| gv == 1.0).map(|(&pv, _)| pv).collect();
    let bg: Vec<f64> = p
        .iter()
        .zip(g)
        .filter(|(_, &gv)| gv == 0.0)
        .map(|(&pv, _)| 1.0 - pv)
        .collect();
    let s_object = mu * object_score(&fg) + (1.0 - mu) * object_score(&bg);

    // Centroid of the mask in 1-based coordinates, rounded half away from
    // zero; the split keeps cy rows in the top half and cx columns on the
    // left.
    let mut col_acc = 0.0;
    let mut row_acc = 0.0;
    for y in 0..h {
        for x in 0..w {
            let gv = g[y * w + x];
            col_acc += gv * (x as f64 + 1.0);
            row_acc += gv * (y as f64 + 1.0);
        }
    }
    let cx = libm::round(col_acc / total) as usize;
    let cy = libm::round(row_acc / total) as usize;

    let area = n;
    let quads = [
        (0, cy, 0, cx),
        (0, cy, cx, w),
        (cy, h, 0, cx),
        (cy, h, cx, w),
    ];
    let mut s_region = 0.0;
    for &(y0, y1, x0, x1) in &quads {
        let pw = sub_rect(p, w, y0, y1, x0, x1);
        let gw = sub_rect(g, w, y0, y1, x0, x1);
        let weight = ((y1 - y0) * (x1 - x0)) as f64 / area;
        s_region += weight * region_ssim(&pw, &gw);
    }

    let s = 0.5 * s_object + 0.5 * s_region;
    s.clamp(0.0, 1.0)
}
