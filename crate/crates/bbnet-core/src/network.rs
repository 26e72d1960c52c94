//! The composed bilateral-branch forward pass: backbone, projection, the
//! collaborative and object-search branches, refinement, two gated decoders,
//! and the prediction heads.

use alloc::vec::Vec;

use crate::backbone;
use crate::cfe::{self, MultiViewConfig};
use crate::config::ModelConfig;
use crate::error::CoreResult;
use crate::lgr;
use crate::ofs;
use crate::params::{BoundParams, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{validate_dims, FeatureMap, Stage, Tensor};

/// Module bypass switches for ablation runs. Each `no_*` replaces its module
/// with an identity of matching shape.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Ablation {
    pub no_cfe: bool,
    pub no_ofs: bool,
    pub no_lgr: bool,
    /// Fixes gamma to the constant 1 instead of the learnable scalar.
    pub no_gamma: bool,
}

/// Fixed input normalization applied to all channels before the backbone.
/// Keeps the [0,1] image range centered and unit-scaled so symmetric conv
/// inits see a well-conditioned input.
pub const INPUT_MEAN: f64 = 0.449;
pub const INPUT_STD: f64 = 0.226;

/// Tape handles of one forward pass. Predictions are kept in both logit and
/// probability form: the BCE loss consumes logits so its gradient survives
/// sigmoid saturation, while metrics and serialization consume probabilities.
pub struct ForwardOutput {
    /// Final prediction, (B,1,S,S) in (0,1).
    pub p: Var,
    /// OFS-branch prediction, (B,1,S,S) in (0,1).
    pub p_ofs: Var,
    /// Pre-sigmoid final logits, (B,1,S,S).
    pub logit: Var,
    /// Pre-sigmoid OFS-branch logits, (B,1,S,S).
    pub logit_ofs: Var,
    /// Named intermediate stages, captured when requested.
    pub trace: Vec<FeatureMap>,
}

/// One gated decoder step: project and resize a skip feature to the gate's
/// spatial size, multiply by sigmoid(gate), add the skip back, 1x1-fuse.
fn decoder(
    tape: &mut Tape,
    p: &BoundParams,
    name: &str,
    skip: Var,
    gate: Var,
) -> Var {
    let (_, _, gh, gw) = tape.value(gate).sh4();
    let (pw, pb) = p.conv(&alloc::format!("{name}.proj"));
    let projected = tape.conv2d(skip, pw, Some(pb), 1, 0, 0);
    let aligned = tape.resize(projected, gh, gw);
    let g = tape.sigmoid(gate);
    let gated = tape.mul(g, aligned);
    let sum = tape.add(gated, aligned);
    let (fw, fb) = p.conv(&alloc::format!("{name}.fuse"));
    tape.conv2d(sum, fw, Some(fb), 1, 0, 0)
}

/// Full forward pass over one group batch (B,3,S,S). `collect_trace` records
/// the named intermediate stages (at a memory cost) for inspection.
pub fn forward(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    ab: Ablation,
    images: Tensor,
    collect_trace: bool,
) -> CoreResult<(ForwardOutput, BoundParams)> {
    validate_dims(images.dims(), cfg)?;
    images.assert_finite("forward input")?;
    let p = BoundParams::bind(tape, store);
    let raw = tape.leaf(images);
    let centered = tape.add_scalar(raw, -INPUT_MEAN);
    let input = tape.scale(centered, 1.0 / INPUT_STD);

    let pyr = backbone::extract(tape, &p, input, cfg.backbone);
    let (f3p, f4p, f5p) = backbone::project(tape, &p, &pyr);

    let mut trace = Vec::new();
    let mut record = |tape: &Tape, stage: Stage, v: Var| -> CoreResult<()> {
        if collect_trace {
            trace.push(FeatureMap::new(stage, tape.value(v).clone())?);
        }
        Ok(())
    };

    // Collaborative branch.
    let f_cat = cfe::concat_levels(tape, &p, f3p, f4p, f5p);
    record(tape, Stage::FCat, f_cat)?;
    let f_col = if ab.no_cfe {
        f_cat
    } else {
        let f_sh = cfe::shuffle(tape, &p, f_cat)?;
        record(tape, Stage::FSh, f_sh)?;
        let mv = MultiViewConfig::with_iterations(cfg.multiview_iters);
        cfe::multi_view(tape, &p, f_sh, mv, cfg.group_consensus)
    };
    record(tape, Stage::FCol, f_col)?;

    // Object-search branch on the third-level projected features.
    let f_sin = f3p;
    record(tape, Stage::FSin, f_sin)?;
    let f_obj = if ab.no_ofs {
        f_sin
    } else {
        ofs::ofs_forward(tape, &p, f_sin, ab.no_gamma)
    };
    record(tape, Stage::FObj, f_obj)?;
    let logit_ofs = ofs::ofs_head(tape, &p, f_obj, cfg.input_size);
    let p_ofs = tape.sigmoid(logit_ofs);

    // Aggregation and refinement.
    let f_ag = lgr::aggregate(tape, f_col, f_obj)?;
    record(tape, Stage::FAg, f_ag)?;
    let f_lgr = if ab.no_lgr {
        f_ag
    } else {
        lgr::refine(tape, &p, f_ag, cfg.lgr_top_n)?
    };
    record(tape, Stage::FLgr, f_lgr)?;

    // Cascaded decoders: d4 gates the projected f4 skip with f_lgr, d3 gates
    // the projected f3 skip with d4.
    let d4 = decoder(tape, &p, "dec4", pyr.f[3], f_lgr);
    let d3 = decoder(tape, &p, "dec3", pyr.f[2], d4);

    let (hw, hb) = p.conv("head");
    let raw_logit = tape.conv2d(d3, hw, Some(hb), 1, 0, 0);
    let logit = tape.resize(raw_logit, cfg.input_size, cfg.input_size);
    let prob = tape.sigmoid(logit);

    tape.value(prob).assert_finite("forward output P")?;
    tape.value(p_ofs).assert_finite("forward output P_OFS")?;
    Ok((
        ForwardOutput {
            p: prob,
            p_ofs,
            logit,
            logit_ofs,
            trace,
        },
        p,
    ))
}

/// Exact learnable-scalar count and a FLOP estimate (2x multiply-adds of all
/// conv and matmul ops) for one single-image forward at the configured size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSummary {
    pub param_count: usize,
    pub flop_estimate: u64,
}

pub fn model_summary(store: &ParamStore, cfg: &ModelConfig) -> CoreResult<ModelSummary> {
    let mut tape = Tape::new();
    let images = Tensor::zeros(&[1, 3, cfg.input_size, cfg.input_size]);
    forward(&mut tape, store, cfg, Ablation::default(), images, false)?;
    Ok(ModelSummary {
        param_count: store.param_count(),
        flop_estimate: 2 * tape.macs,
    })
}
