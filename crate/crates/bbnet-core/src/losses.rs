//! Weighted BCE + weighted IoU objective over the two supervision sites.

use alloc::vec;

use crate::network::ForwardOutput;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Probability clamp applied before any logarithm.
pub const PROB_EPS: f64 = 1e-7;

/// Window size of the boundary-emphasis average pool.
pub const WEIGHT_WINDOW: usize = 31;

/// Scale factor on the local ground-truth deviation.
pub const WEIGHT_FACTOR: f64 = 5.0;

/// Per-pixel emphasis weights: 1 + 5 * |avgpool_31x31(G) - G|.
///
/// The pool uses stride 1, padding 15, and divides by the number of valid
/// taps, so constant masks (all background or all foreground) produce a
/// uniform weight of exactly 1. Values always lie in [1, 6].
///
/// Window sums come from a 2D prefix table, which is O(1) per pixel instead
/// of O(k^2) and exact for binary masks (integer window sums).
pub fn pixel_weights(g: &Tensor) -> Tensor {
    let (nb, c, h, w) = g.sh4();
    let gd = g.data();
    let r = (WEIGHT_WINDOW / 2) as isize;
    let mut data = vec![0.0; gd.len()];
    let mut prefix = vec![0.0; (h + 1) * (w + 1)];
    for plane in 0..nb * c {
        let base = plane * h * w;
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += gd[base + y * w + x];
                prefix[(y + 1) * (w + 1) + (x + 1)] = prefix[y * (w + 1) + (x + 1)] + row;
            }
        }
        for y in 0..h as isize {
            let y0 = (y - r).max(0) as usize;
            let y1 = ((y + r + 1) as usize).min(h);
            for x in 0..w as isize {
                let x0 = (x - r).max(0) as usize;
                let x1 = ((x + r + 1) as usize).min(w);
                let sum = prefix[y1 * (w + 1) + x1] - prefix[y0 * (w + 1) + x1]
                    - prefix[y1 * (w + 1) + x0]
                    + prefix[y0 * (w + 1) + x0];
                let count = ((y1 - y0) * (x1 - x0)) as f64;
                let i = base + (y * w as isize + x) as usize;
                data[i] = 1.0 + WEIGHT_FACTOR * (sum / count - gd[i]).abs();
            }
        }
    }
    Tensor::new(g.shape().to_vec(), data)
}

/// Weighted binary cross-entropy on the tape:
/// -sum(w * (G*ln P + (1-G)*ln(1-P))) / sum(w).
///
/// P is squashed affinely onto [PROB_EPS, 1 - PROB_EPS] rather than hard
/// clamped: both keep the logarithms finite, but a clamp zeroes the gradient
/// exactly on the saturated pixels that most need correcting, which lets a
/// branch drift ever further once its sigmoid saturates. The squash leaves
/// P = 0.5 untouched and moves the endpoints by only PROB_EPS.
pub fn weighted_bce(tape: &mut Tape, p: Var, g: &Tensor, w: &Tensor) -> Var {
    let ps = tape.scale(p, 1.0 - 2.0 * PROB_EPS);
    let pc = tape.add_scalar(ps, PROB_EPS);
    let lp = tape.ln(pc);
    let pm = tape.rsub_scalar(1.0, pc);
    let l1p = tape.ln(pm);
    let gv = tape.leaf(g.clone());
    let wv = tape.leaf(w.clone());
    let pos = tape.mul(gv, lp);
    let gc = tape.rsub_scalar(1.0, gv);
    let neg = tape.mul(gc, l1p);
    let inner = tape.add(pos, neg);
    let weighted = tape.mul(wv, inner);
    let num = tape.sum_all(weighted);
    let num = tape.scale(num, -1.0);
    let den = tape.sum_all(wv);
    tape.div_scalars(num, den)
}

/// Weighted BCE from pre-sigmoid logits:
/// sum(w * (softplus(Z) - G*Z)) / sum(w).
///
/// Identical in value to `weighted_bce(sigmoid(Z))` away from saturation but
/// keeps the gradient sigmoid(Z) - G exact there. Going through the
/// probability instead multiplies in d sigmoid/dZ, which underflows to zero
/// once the sigmoid saturates in f64, permanently killing the pixel; an
/// auxiliary head that overshoots early would never recover.
pub fn weighted_bce_logits(tape: &mut Tape, z: Var, g: &Tensor, w: &Tensor) -> Var {
    let sp = tape.softplus(z);
    let gv = tape.leaf(g.clone());
    let wv = tape.leaf(w.clone());
    let gz = tape.mul(gv, z);
    let neg_gz = tape.scale(gz, -1.0);
    let inner = tape.add(sp, neg_gz);
    let weighted = tape.mul(wv, inner);
    let num = tape.sum_all(weighted);
    let den = tape.sum_all(wv);
    tape.div_scalars(num, den)
}

/// Weighted IoU loss on the tape:
/// 1 - (sum(w*P*G) + 1) / (sum(w*(P + G - P*G)) + 1).
pub fn weighted_iou(tape: &mut Tape, p: Var, g: &Tensor, w: &Tensor) -> Var {
    let gv = tape.leaf(g.clone());
    let wv = tape.leaf(w.clone());
    let pg = tape.mul(p, gv);
    let winter = tape.mul(wv, pg);
    let inter = tape.sum_all(winter);
    let inter = tape.add_scalar(inter, 1.0);
    let s = tape.add(p, gv);
    let neg_pg = tape.scale(pg, -1.0);
    let union = tape.add(s, neg_pg);
    let wunion = tape.mul(wv, union);
    let uni = tape.sum_all(wunion);
    let uni = tape.add_scalar(uni, 1.0);
    let ratio = tape.div_scalars(inter, uni);
    tape.rsub_scalar(1.0, ratio)
}

/// Scalar loss values extracted from a built loss graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub l_wbce_final: f64,
    pub l_wiou_final: f64,
    pub l_wbce_ofs: f64,
    pub l_wiou_ofs: f64,
    pub l_total: f64,
}

/// Tape variables for each loss term plus the differentiable total.
#[derive(Debug, Clone, Copy)]
pub struct LossGraph {
    pub l_wbce_final: Var,
    pub l_wiou_final: Var,
    pub l_wbce_ofs: Var,
    pub l_wiou_ofs: Var,
    pub l_total: Var,
}

impl LossGraph {
    pub fn terms(&self, tape: &Tape) -> LossTerms {
        LossTerms {
            l_wbce_final: tape.value(self.l_wbce_final).item(),
            l_wiou_final: tape.value(self.l_wiou_final).item(),
            l_wbce_ofs: tape.value(self.l_wbce_ofs).item(),
            l_wiou_ofs: tape.value(self.l_wiou_ofs).item(),
            l_total: tape.value(self.l_total).item(),
        }
    }
}

/// Both supervision sites with shared pixel weights. BCE terms run on the
/// logits, IoU terms on the probabilities. With `bce_only` the IoU terms are
/// still evaluated for logging but excluded from the total.
pub fn total_loss(tape: &mut Tape, out: &ForwardOutput, g: &Tensor, bce_only: bool) -> LossGraph {
    let w = pixel_weights(g);
    let l_wbce_final = weighted_bce_logits(tape, out.logit, g, &w);
    let l_wiou_final = weighted_iou(tape, out.p, g, &w);
    let l_wbce_ofs = weighted_bce_logits(tape, out.logit_ofs, g, &w);
    let l_wiou_ofs = weighted_iou(tape, out.p_ofs, g, &w);
    let bce_sum = tape.add(l_wbce_final, l_wbce_ofs);
    let l_total = if bce_only {
        bce_sum
    } else {
        let iou_sum = tape.add(l_wiou_final, l_wiou_ofs);
        tape.add(bce_sum, iou_sum)
    };
    LossGraph {
        l_wbce_final,
        l_wiou_final,
        l_wbce_ofs,
        l_wiou_ofs,
        l_total,
    }
}
