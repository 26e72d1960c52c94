//! Collaborative feature exploration: level concatenation, spatial feature
//! shuffle, iterated multi-view attention, and the group-consensus gate.

use crate::error::{CoreError, CoreResult};
use crate::params::BoundParams;
use crate::tape::{Tape, Var};
use crate::tensor::perfect_shuffle_map;

/// Multi-view scale set and iteration count. The factors are fixed; only the
/// iteration count is configurable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiViewConfig {
    pub down_factor: f64,
    pub up_factors: [f64; 2],
    pub iterations: usize,
}

impl MultiViewConfig {
    pub fn with_iterations(iterations: usize) -> Self {
        MultiViewConfig {
            down_factor: 0.5,
            up_factors: [2.0, 4.0],
            iterations,
        }
    }
}

impl Default for MultiViewConfig {
    fn default() -> Self {
        MultiViewConfig::with_iterations(2)
    }
}

/// Resizes f4p/f5p up to f3p's spatial size, channel-concatenates all three
/// (3C), and reduces back to C with a 1x1 convolution.
pub fn concat_levels(tape: &mut Tape, p: &BoundParams, f3p: Var, f4p: Var, f5p: Var) -> Var {
    let (_, _, h, w) = tape.value(f3p).sh4();
    let f4u = tape.resize(f4p, h, w);
    let f5u = tape.resize(f5p, h, w);
    let cat = tape.concat_channels(&[f3p, f4u, f5u]);
    let (rw, rb) = p.conv("cfe.reduce_cat");
    tape.conv2d(cat, rw, Some(rb), 1, 0, 0)
}

/// The two permuted views before fusion: branch-h perfect-shuffles rows,
/// branch-w perfect-shuffles columns.
pub fn shuffle_branches(tape: &mut Tape, f_cat: Var) -> CoreResult<(Var, Var)> {
    let (_, _, h, w) = tape.value(f_cat).sh4();
    if h % 2 != 0 {
        return Err(CoreError::Dims { what: "shuffle height", value: h, divisor: 2 });
    }
    if w % 2 != 0 {
        return Err(CoreError::Dims { what: "shuffle width", value: w, divisor: 2 });
    }
    let row_map = perfect_shuffle_map(h);
    let col_map = perfect_shuffle_map(w);
    let branch_h = tape.permute_rows(f_cat, &row_map);
    let branch_w = tape.permute_cols(f_cat, &col_map);
    Ok((branch_h, branch_w))
}

/// Full shuffle step: both branches channel-concatenated (2C) and reduced to
/// C by a 1x1 convolution.
pub fn shuffle(tape: &mut Tape, p: &BoundParams, f_cat: Var) -> CoreResult<Var> {
    let (branch_h, branch_w) = shuffle_branches(tape, f_cat)?;
    let cat = tape.concat_channels(&[branch_h, branch_w]);
    let (rw, rb) = p.conv("cfe.reduce_sh");
    Ok(tape.conv2d(cat, rw, Some(rb), 1, 0, 0))
}

/// One multi-view attention pass: rescaled 0.5x/2x/4x views are brought back
/// to base resolution, concatenated, reduced to C, and turned into per-pixel
/// channel weights by a softmax over channels. Returns (weights, output).
pub fn attention_pass(tape: &mut Tape, p: &BoundParams, f: Var) -> (Var, Var) {
    let (_, _, h, w) = tape.value(f).sh4();
    let down = tape.resize(f, (h / 2).max(1), (w / 2).max(1));
    let down = tape.resize(down, h, w);
    let up2 = tape.resize(f, 2 * h, 2 * w);
    let up2 = tape.resize(up2, h, w);
    let up4 = tape.resize(f, 4 * h, 4 * w);
    let up4 = tape.resize(up4, h, w);
    let cat = tape.concat_channels(&[down, up2, up4]);
    let (cw, cb) = p.conv("cfe.mv.conv");
    let mixed = tape.conv2d(cat, cw, Some(cb), 1, 0, 0);
    let weights = tape.softmax_channels(mixed);
    let out = tape.mul(f, weights);
    (weights, out)
}

/// Gates each image's features by the sigmoid of the group (batch) mean.
pub fn group_consensus(tape: &mut Tape, f: Var) -> Var {
    let mean = tape.batch_mean(f);
    let gate = tape.sigmoid(mean);
    tape.mul_broadcast_b(f, gate)
}

/// Iterated multi-view attention producing f_col. Zero iterations bypass
/// both the attention and the consensus gate. The pass convolution weights
/// are shared across iterations.
pub fn multi_view(
    tape: &mut Tape,
    p: &BoundParams,
    f_sh: Var,
    cfg: MultiViewConfig,
    consensus: bool,
) -> Var {
    if cfg.iterations == 0 {
        return f_sh;
    }
    let mut f = f_sh;
    for _ in 0..cfg.iterations {
        let (_, out) = attention_pass(tape, p, f);
        f = out;
    }
    if consensus {
        f = group_consensus(tape, f);
    }
    f
}
