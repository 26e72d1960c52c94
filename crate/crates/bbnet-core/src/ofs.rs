//! Object feature search: dense intra-image affinity attention, pooling-based
//! channel gating, and a zero-initialized residual gate gamma.

use crate::params::BoundParams;
use crate::tape::{Tape, Var};
use crate::tensor::Pad;

/// Every intermediate of one OFS pass, exposed for tests and oracles.
pub struct OfsDetail {
    /// (B, HW, HW) raw affinity q·k.
    pub affinity: Var,
    /// (B, C, H, W) affinity-propagated features, normalized by HW.
    pub context: Var,
    pub f_sum: Var,
    pub f_w: Var,
    pub f_obj: Var,
}

/// Runs OFS on per-image features. With `gamma_fixed_one` the learnable gate
/// is replaced by the constant 1 (the residual is always added).
pub fn ofs_forward_detail(
    tape: &mut Tape,
    p: &BoundParams,
    f_sin: Var,
    gamma_fixed_one: bool,
) -> OfsDetail {
    let (_, _, h, w) = tape.value(f_sin).sh4();
    let hw = (h * w) as f64;
    // Replicate padding keeps the query/key maps exactly constant for
    // constant inputs, which makes every affinity row identical there.
    let (qw, qb) = p.conv("ofs.query");
    let q = tape.conv2d_pad(f_sin, qw, Some(qb), 1, 1, 1, Pad::Replicate);
    let (kw, kb) = p.conv("ofs.key");
    let k = tape.conv2d_pad(f_sin, kw, Some(kb), 1, 1, 1, Pad::Replicate);
    let affinity = tape.affinity(q, k);
    let context = tape.attend(f_sin, affinity, 1.0 / hw);
    let mx = tape.maxpool3(context);
    let av = tape.avgpool(context, 3, 1);
    let f_sum = tape.add(mx, av);
    let gate = tape.gap(f_sum);
    let modulated = tape.mul_gate(context, gate);
    let (w13, b13) = p.conv("ofs.conv13");
    let t = tape.conv2d(modulated, w13, Some(b13), 1, 0, 1);
    let (w31, b31) = p.conv("ofs.conv31");
    let f_w = tape.conv2d(t, w31, Some(b31), 1, 1, 0);
    let f_obj = if gamma_fixed_one {
        tape.add(f_sin, f_w)
    } else {
        let gamma = p.var("ofs.gamma");
        let gated = tape.mul_scalar_var(f_w, gamma);
        tape.add(f_sin, gated)
    };
    OfsDetail { affinity, context, f_sum, f_w, f_obj }
}

pub fn ofs_forward(tape: &mut Tape, p: &BoundParams, f_sin: Var, gamma_fixed_one: bool) -> Var {
    ofs_forward_detail(tape, p, f_sin, gamma_fixed_one).f_obj
}

/// OFS supervision head: 1x1 conv to one channel, bilinear upsample to the
/// input resolution, sigmoid.
/// Returns the upsampled pre-sigmoid logits; the caller owns the sigmoid so
/// the loss can work in logit space.
pub fn ofs_head(tape: &mut Tape, p: &BoundParams, f_obj: Var, input_size: usize) -> Var {
    let (hw, hb) = p.conv("ofs.head");
    let logit = tape.conv2d(f_obj, hw, Some(hb), 1, 0, 0);
    tape.resize(logit, input_size, input_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::params::{BoundParams, ParamStore};
    use crate::tensor::Tensor;
    use alloc::vec;
    use alloc::vec::Vec;

    fn cfg_c(c: usize) -> ModelConfig {
        let mut cfg = ModelConfig::tiny();
        cfg.channels = c;
        cfg
    }

    fn rng_data(n: usize, salt: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (((i + salt) * 1103515245 % 9973) as f64 / 9973.0) * 2.0 - 1.0)
            .collect()
    }

    #[test]
    fn gamma_zero_is_bitexact_identity() {
        for seed in 0..5 {
            let cfg = cfg_c(4);
            let store = ParamStore::init(&cfg, seed);
            let mut tape = Tape::new();
            let p = BoundParams::bind(&mut tape, &store);
            let x = Tensor::new(vec![2, 4, 6, 6], rng_data(2 * 4 * 36, seed as usize));
            let f = tape.leaf(x.clone());
            let out = ofs_forward(&mut tape, &p, f, false);
            assert_eq!(tape.value(out).data(), x.data(), "seed {seed}");
        }
    }

    #[test]
    fn shape_contract_including_affinity() {
        let cfg = cfg_c(4);
        let store = ParamStore::init(&cfg, 1);
        let mut tape = Tape::new();
        let p = BoundParams::bind(&mut tape, &store);
        let f = tape.leaf(Tensor::new(vec![2, 4, 12, 12], rng_data(2 * 4 * 144, 3)));
        let d = ofs_forward_detail(&mut tape, &p, f, false);
        assert_eq!(tape.value(d.affinity).shape(), &[2, 144, 144]);
        assert_eq!(tape.value(d.f_obj).shape(), &[2, 4, 12, 12]);
        assert_eq!(tape.value(d.context).shape(), &[2, 4, 12, 12]);
    }

    #[test]
    fn constant_input_gives_spatially_constant_context() {
        let cfg = cfg_c(3);
        let store = ParamStore::init(&cfg, 4);
        let mut tape = Tape::new();
        let p = BoundParams::bind(&mut tape, &store);
        let f = tape.leaf(Tensor::full(&[1, 3, 4, 4], 0.7));
        let d = ofs_forward_detail(&mut tape, &p, f, false);
        let ctx = tape.value(d.context);
        for ch in 0..3 {
            let plane = &ctx.data()[ch * 16..(ch + 1) * 16];
            for &v in plane {
                assert!((v - plane[0]).abs() < 1e-12, "channel {ch} not constant");
            }
        }
    }

    #[test]
    fn gamma_fixed_one_adds_residual() {
        let cfg = cfg_c(3);
        let store = ParamStore::init(&cfg, 8);
        let mut tape = Tape::new();
        let p = BoundParams::bind(&mut tape, &store);
        let x = Tensor::new(vec![1, 3, 4, 4], rng_data(48, 9));
        let f = tape.leaf(x.clone());
        let d = ofs_forward_detail(&mut tape, &p, f, true);
        let fw = tape.value(d.f_w).data().to_vec();
        let out = tape.value(d.f_obj).data();
        let mut differs = false;
        for i in 0..out.len() {
            assert!((out[i] - (x.data()[i] + fw[i])).abs() < 1e-15);
            if fw[i] != 0.0 {
                differs = true;
            }
        }
        assert!(differs, "residual should be nonzero for random weights");
    }

    #[test]
    fn head_outputs_full_size_logits() {
        let cfg = cfg_c(4);
        let store = ParamStore::init(&cfg, 2);
        let mut tape = Tape::new();
        let p = BoundParams::bind(&mut tape, &store);
        let f = tape.leaf(Tensor::new(vec![2, 4, 12, 12], rng_data(2 * 4 * 144, 11)));
        let z = ofs_head(&mut tape, &p, f, 96);
        let prob = tape.sigmoid(z);
        let t = tape.value(prob);
        assert_eq!(t.shape(), &[2, 1, 96, 96]);
        assert!(t.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn zero_features_zero_bias_head_gives_half() {
        let cfg = cfg_c(4);
        let store = ParamStore::init(&cfg, 2);
        let mut tape = Tape::new();
        let p = BoundParams::bind(&mut tape, &store);
        let f = tape.leaf(Tensor::zeros(&[1, 4, 12, 12]));
        let z = ofs_head(&mut tape, &p, f, 96);
        let prob = tape.sigmoid(z);
        for &v in tape.value(z).data() {
            assert_eq!(v, 0.0, "zero features and zero bias give zero logits");
        }
        for &v in tape.value(prob).data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }
}
