//! Local-global refinement: branch aggregation, highest-probability 3x3
//! sub-block selection with a local conv path, a global conv path, and fusion.

use alloc::format;
use alloc::vec::Vec;

use crate::config::LGR_GRID;
use crate::error::{CoreError, CoreResult};
use crate::params::BoundParams;
use crate::tape::{Tape, Var};
use crate::tensor::{math, Tensor};

/// Element-wise product of the two branch features.
pub fn aggregate(tape: &mut Tape, f_col: Var, f_obj: Var) -> CoreResult<Var> {
    let a = tape.value(f_col).shape().to_vec();
    let b = tape.value(f_obj).shape().to_vec();
    if a != b {
        return Err(CoreError::Shape {
            context: "aggregate",
            expected: format!("{a:?}"),
            got: format!("{b:?}"),
        });
    }
    Ok(tape.mul(f_col, f_obj))
}

/// Per-image probabilities of the 3x3 sub-blocks: mean of sigmoid over each
/// block's channels and pixels, row-major block order.
pub fn block_probs(t: &Tensor) -> Vec<[f64; LGR_GRID * LGR_GRID]> {
    let (nb, c, h, w) = t.sh4();
    assert!(h % LGR_GRID == 0 && w % LGR_GRID == 0);
    let bh = h / LGR_GRID;
    let bw = w / LGR_GRID;
    let mut out = Vec::with_capacity(nb);
    for bi in 0..nb {
        let mut probs = [0.0; LGR_GRID * LGR_GRID];
        for (bidx, slot) in probs.iter_mut().enumerate() {
            let (by, bx) = (bidx / LGR_GRID, bidx % LGR_GRID);
            let mut acc = 0.0;
            for ch in 0..c {
                let base = (bi * c + ch) * h * w;
                for dy in 0..bh {
                    let row = base + (by * bh + dy) * w + bx * bw;
                    for dx in 0..bw {
                        acc += math::sigmoid(t.data()[row + dx]);
                    }
                }
            }
            *slot = acc / (c * bh * bw) as f64;
        }
        out.push(probs);
    }
    out
}

/// Picks the `top_n` most probable blocks per image, ties broken toward the
/// first block in row-major order.
pub fn select_blocks(probs: &[[f64; LGR_GRID * LGR_GRID]], top_n: usize) -> Vec<Vec<(usize, usize)>> {
    probs
        .iter()
        .map(|p| {
            let mut order: Vec<usize> = (0..p.len()).collect();
            // Stable sort keeps earlier indices first among equal probabilities.
            order.sort_by(|&a, &b| p[b].partial_cmp(&p[a]).unwrap());
            order
                .iter()
                .take(top_n)
                .map(|&i| (i / LGR_GRID, i % LGR_GRID))
                .collect()
        })
        .collect()
}

/// Extracts the selected sub-block(s) and applies the local 1x3 then 3x1
/// convolutions, producing (B, C, H/3, W/3).
pub fn local_refine(tape: &mut Tape, p: &BoundParams, f_ag: Var, top_n: usize) -> CoreResult<Var> {
    let (_, _, h, w) = tape.value(f_ag).sh4();
    if h % LGR_GRID != 0 {
        return Err(CoreError::Dims { what: "lgr height", value: h, divisor: LGR_GRID });
    }
    if w % LGR_GRID != 0 {
        return Err(CoreError::Dims { what: "lgr width", value: w, divisor: LGR_GRID });
    }
    if top_n < 1 || top_n > LGR_GRID * LGR_GRID {
        return Err(CoreError::Config(format!("lgr top_n {top_n} out of range [1, 9]")));
    }
    let probs = block_probs(tape.value(f_ag));
    let picks = select_blocks(&probs, top_n);
    let block = tape.block_select(f_ag, picks, h / LGR_GRID, w / LGR_GRID);
    let (w13, b13) = p.conv("lgr.local13");
    let t = tape.conv2d(block, w13, Some(b13), 1, 0, 1);
    let (w31, b31) = p.conv("lgr.local31");
    Ok(tape.conv2d(t, w31, Some(b31), 1, 1, 0))
}

/// Whole-map 1x3 then 3x1 convolution path, shape preserving.
pub fn global_refine(tape: &mut Tape, p: &BoundParams, f_ag: Var) -> Var {
    let (w13, b13) = p.conv("lgr.global13");
    let t = tape.conv2d(f_ag, w13, Some(b13), 1, 0, 1);
    let (w31, b31) = p.conv("lgr.global31");
    tape.conv2d(t, w31, Some(b31), 1, 1, 0)
}

/// 3x-upsamples the local feature, concatenates with the global feature, and
/// reduces 2C -> C with a 3x3 convolution.
pub fn fuse(tape: &mut Tape, p: &BoundParams, f_local: Var, f_global: Var) -> CoreResult<Var> {
    let (_, _, gh, gw) = tape.value(f_global).sh4();
    let (_, _, lh, lw) = tape.value(f_local).sh4();
    if lh * LGR_GRID != gh || lw * LGR_GRID != gw {
        return Err(CoreError::Shape {
            context: "fuse",
            expected: format!("local spatial {}x{}", gh / LGR_GRID, gw / LGR_GRID),
            got: format!("{lh}x{lw}"),
        });
    }
    let up = tape.resize(f_local, gh, gw);
    let cat = tape.concat_channels(&[up, f_global]);
    let (fw, fb) = p.conv("lgr.fuse");
    Ok(tape.conv2d(cat, fw, Some(fb), 1, 1, 1))
}

/// The full refinement pipeline on aggregated features.
pub fn refine(tape: &mut Tape, p: &BoundParams, f_ag: Var, top_n: usize) -> CoreResult<Var> {
    let f_local = local_refine(tape, p, f_ag, top_n)?;
    let f_global = global_refine(tape, p, f_ag);
    fuse(tape, p, f_local, f_global)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::params::{BoundParams, ParamStore};
    use alloc::vec;

    fn setup(c: usize, seed: u64) -> (Tape, BoundParams) {
        let mut cfg = ModelConfig::tiny();
        cfg.channels = c;
        let store = ParamStore::init(&cfg, seed);
        let mut tape = Tape::new();
        let p = BoundParams::bind(&mut tape, &store);
        (tape, p)
    }

    fn rng_data(n: usize, salt: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (((i + salt) * 48271 % 7919) as f64 / 7919.0) * 2.0 - 1.0)
            .collect()
    }

    #[test]
    fn aggregate_identity_zero_commute() {
        let (mut tape, _p) = setup(2, 0);
        let x = Tensor::new(vec![1, 2, 3, 3], rng_data(18, 1));
        let a = tape.leaf(x.clone());
        let ones = tape.leaf(Tensor::full(&[1, 2, 3, 3], 1.0));
        let zero = tape.leaf(Tensor::zeros(&[1, 2, 3, 3]));
        let id = aggregate(&mut tape, a, ones).unwrap();
        assert_eq!(tape.value(id).data(), x.data());
        let z = aggregate(&mut tape, a, zero).unwrap();
        assert!(tape.value(z).data().iter().all(|&v| v == 0.0));
        let b = tape.leaf(Tensor::new(vec![1, 2, 3, 3], rng_data(18, 9)));
        let ab = aggregate(&mut tape, a, b).unwrap();
        let ba = aggregate(&mut tape, b, a).unwrap();
        assert_eq!(tape.value(ab).data(), tape.value(ba).data());
        let bad = tape.leaf(Tensor::zeros(&[1, 2, 3, 4]));
        assert!(matches!(
            aggregate(&mut tape, a, bad),
            Err(CoreError::Shape { .. })
        ));
    }

    #[test]
    fn dominant_block_is_selected() {
        let mut t = Tensor::full(&[1, 2, 12, 12], 0.0);
        // Block (1,1): rows 4..8, cols 4..8 hold a large value.
        for ch in 0..2 {
            for y in 4..8 {
                for x in 4..8 {
                    t.data_mut()[(ch * 12 + y) * 12 + x] = 10.0;
                }
            }
        }
        let probs = block_probs(&t);
        let picks = select_blocks(&probs, 1);
        assert_eq!(picks[0], vec![(1, 1)]);
    }

    #[test]
    fn uniform_input_tiebreaks_to_first_block() {
        let t = Tensor::full(&[2, 3, 6, 6], 0.42);
        let picks = select_blocks(&block_probs(&t), 1);
        for p in picks {
            assert_eq!(p, vec![(0, 0)]);
        }
    }

    #[test]
    fn rescaling_preserves_selection_when_distinct() {
        let t = Tensor::new(vec![1, 1, 6, 6], rng_data(36, 77));
        let p1 = select_blocks(&block_probs(&t), 1);
        let doubled = t.map(|v| v * 2.0);
        let p2 = select_blocks(&block_probs(&doubled), 1);
        assert_eq!(p1, p2);
    }

    #[test]
    fn local_refine_shape_and_divisibility() {
        let (mut tape, p) = setup(4, 5);
        let f = tape.leaf(Tensor::new(vec![2, 4, 12, 12], rng_data(2 * 4 * 144, 3)));
        let local = local_refine(&mut tape, &p, f, 1).unwrap();
        assert_eq!(tape.value(local).shape(), &[2, 4, 4, 4]);
        let odd = tape.leaf(Tensor::zeros(&[1, 4, 10, 12]));
        assert!(matches!(
            local_refine(&mut tape, &p, odd, 1),
            Err(CoreError::Dims { divisor: 3, .. })
        ));
    }

    #[test]
    fn top_n_averages_blocks() {
        let (mut tape, p) = setup(2, 6);
        let f = tape.leaf(Tensor::new(vec![1, 2, 6, 6], rng_data(72, 13)));
        for top_n in 1..=4 {
            let local = local_refine(&mut tape, &p, f, top_n).unwrap();
            assert_eq!(tape.value(local).shape(), &[1, 2, 2, 2]);
            assert!(tape.value(local).all_finite());
        }
        assert!(local_refine(&mut tape, &p, f, 0).is_err());
        assert!(local_refine(&mut tape, &p, f, 10).is_err());
    }

    #[test]
    fn global_refine_zero_and_shape() {
        let (mut tape, p) = setup(4, 7);
        let z = tape.leaf(Tensor::zeros(&[1, 4, 12, 12]));
        let g = global_refine(&mut tape, &p, z);
        assert_eq!(tape.value(g).shape(), &[1, 4, 12, 12]);
        assert!(tape.value(g).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fuse_shapes_and_large_scale_stays_finite() {
        let (mut tape, p) = setup(4, 8);
        let local = tape.leaf(Tensor::new(vec![2, 4, 4, 4], rng_data(128, 21)));
        let global = tape.leaf(Tensor::new(vec![2, 4, 12, 12], rng_data(1152, 22)));
        let out = fuse(&mut tape, &p, local, global).unwrap();
        assert_eq!(tape.value(out).shape(), &[2, 4, 12, 12]);
        let zl = tape.leaf(Tensor::zeros(&[2, 4, 4, 4]));
        let zg = tape.leaf(Tensor::zeros(&[2, 4, 12, 12]));
        let zout = fuse(&mut tape, &p, zl, zg).unwrap();
        assert!(tape.value(zout).data().iter().all(|&v| v == 0.0));
        let big_l = tape.leaf(Tensor::new(vec![1, 4, 4, 4], rng_data(64, 5).iter().map(|v| v * 1e3).collect()));
        let big_g = tape.leaf(Tensor::new(vec![1, 4, 12, 12], rng_data(576, 6).iter().map(|v| v * 1e3).collect()));
        let big = fuse(&mut tape, &p, big_l, big_g).unwrap();
        assert!(tape.value(big).all_finite());
        let mismatched = tape.leaf(Tensor::zeros(&[2, 4, 5, 5]));
        assert!(matches!(
            fuse(&mut tape, &p, mismatched, global),
            Err(CoreError::Shape { .. })
        ));
    }

    #[test]
    fn full_pipeline_preserves_shape() {
        let (mut tape, p) = setup(4, 9);
        let f = tape.leaf(Tensor::new(vec![3, 4, 12, 12], rng_data(3 * 4 * 144, 33)));
        let out = refine(&mut tape, &p, f, 1).unwrap();
        assert_eq!(tape.value(out).shape(), &[3, 4, 12, 12]);
    }
}
