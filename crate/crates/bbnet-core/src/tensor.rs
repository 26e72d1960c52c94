//! Dense f64 tensors, shape contracts, and the scalar numeric kernels every
//! network op is built from.
//!
//! Kernels are deliberately plain sequential loops: evaluation order is fixed,
//! so results are bit-reproducible across runs on the same target.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::config::ModelConfig;
use crate::error::{CoreError, CoreResult};

/// Scalar math routed through `libm` so the crate works without `std`.
pub mod math {
    pub fn exp(x: f64) -> f64 {
        libm::exp(x)
    }
    pub fn ln(x: f64) -> f64 {
        libm::log(x)
    }
    pub fn sqrt(x: f64) -> f64 {
        libm::sqrt(x)
    }
    pub fn floor(x: f64) -> f64 {
        libm::floor(x)
    }
    pub fn round(x: f64) -> f64 {
        libm::round(x)
    }
    pub fn abs(x: f64) -> f64 {
        libm::fabs(x)
    }
    pub fn powf(x: f64, y: f64) -> f64 {
        libm::pow(x, y)
    }
    pub fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + exp(-x))
    }
    /// ln(1 + e^x) in the overflow-free split form.
    pub fn softplus(x: f64) -> f64 {
        x.max(0.0) + libm::log1p(exp(-libm::fabs(x)))
    }
}

/// Batch/channel/height/width of one activation tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub b: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn new(b: usize, c: usize, h: usize, w: usize) -> Self {
        Dims { b, c, h, w }
    }
}

/// Checks that `d` describes an input batch compatible with `cfg` and that
/// the stride-8 working resolution splits evenly for the shuffle (by 2) and
/// the 3x3 block grid (by 3).
pub fn validate_dims(d: Dims, cfg: &ModelConfig) -> CoreResult<()> {
    if d.b == 0 || d.c == 0 || d.h == 0 || d.w == 0 {
        return Err(CoreError::Shape {
            context: "validate_dims",
            expected: String::from("all dims positive"),
            got: format!("{d:?}"),
        });
    }
    if d.h != cfg.input_size || d.w != cfg.input_size {
        return Err(CoreError::Shape {
            context: "validate_dims",
            expected: format!("spatial {}x{}", cfg.input_size, cfg.input_size),
            got: format!("{}x{}", d.h, d.w),
        });
    }
    if cfg.input_size % 8 != 0 {
        return Err(CoreError::Dims {
            what: "input_size",
            value: cfg.input_size,
            divisor: 8,
        });
    }
    let working = cfg.input_size / 8;
    if working % 2 != 0 {
        return Err(CoreError::Dims {
            what: "working resolution",
            value: working,
            divisor: 2,
        });
    }
    if working % 3 != 0 {
        return Err(CoreError::Dims {
            what: "working resolution",
            value: working,
            divisor: 3,
        });
    }
    Ok(())
}

/// Dense row-major tensor of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(n, data.len(), "shape {shape:?} does not match {} values", data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The four axes of an activation tensor. Panics if the rank is not 4;
    /// rank mismatches are programming errors, not runtime conditions.
    pub fn sh4(&self) -> (usize, usize, usize, usize) {
        assert_eq!(self.shape.len(), 4, "expected rank-4 tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2], self.shape[3])
    }

    pub fn dims(&self) -> Dims {
        let (b, c, h, w) = self.sh4();
        Dims::new(b, c, h, w)
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of {} values", self.data.len());
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn assert_finite(&self, context: &'static str) -> CoreResult<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(CoreError::NonFinite { context })
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Semantic tag naming which symbol of the architecture a map carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    FCat,
    FSh,
    FMv,
    FCol,
    FSin,
    FMm,
    FSum,
    FW,
    FObj,
    FAg,
    FLocal,
    FGlobal,
    FLgr,
}

/// An activation tensor together with its semantic stage. Construction
/// checks rank and finiteness so a poisoned map cannot propagate silently.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub stage: Stage,
    pub tensor: Tensor,
}

impl FeatureMap {
    pub fn new(stage: Stage, tensor: Tensor) -> CoreResult<Self> {
        if tensor.shape().len() != 4 && !(stage == Stage::FMm && tensor.shape().len() == 3) {
            return Err(CoreError::Shape {
                context: "FeatureMap::new",
                expected: String::from("rank 4 (or rank 3 for the affinity map)"),
                got: format!("{:?}", tensor.shape()),
            });
        }
        tensor.assert_finite("FeatureMap::new")?;
        Ok(FeatureMap { stage, tensor })
    }
}

#[inline]
fn conv_out(n: usize, k: usize, s: usize, p: usize) -> usize {
    (n + 2 * p - k) / s + 1
}

/// How convolution windows treat out-of-bounds taps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pad {
    /// Out-of-bounds taps contribute zero.
    Zero,
    /// Out-of-bounds taps read the nearest edge pixel, so a constant map
    /// convolves to an exactly constant map.
    Replicate,
}

#[inline]
fn tap(i: isize, n: usize, pad: Pad) -> Option<usize> {
    if i >= 0 && i < n as isize {
        Some(i as usize)
    } else {
        match pad {
            Pad::Zero => None,
            Pad::Replicate => Some(i.clamp(0, n as isize - 1) as usize),
        }
    }
}

/// 2-D convolution; `x` (B,Ci,H,W), `w` (Co,Ci,Kh,Kw), optional bias (Co).
/// Padding is independent per axis so 1x3 / 3x1 convolutions stay
/// shape-preserving.
pub fn conv2d_forward(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    stride: usize,
    ph: usize,
    pw: usize,
    pad: Pad,
) -> Tensor {
    let (nb, ci, h, wd) = x.sh4();
    let (co, ciw, kh, kw) = w.sh4();
    assert_eq!(ci, ciw, "conv2d channel mismatch");
    let oh = conv_out(h, kh, stride, ph);
    let ow = conv_out(wd, kw, stride, pw);
    let xd = x.data();
    let wv = w.data();
    let mut out = vec![0.0; nb * co * oh * ow];
    for bi in 0..nb {
        for o in 0..co {
            let bias = b.map_or(0.0, |t| t.data()[o]);
            let out_base = (bi * co + o) * oh * ow;
            out[out_base..out_base + oh * ow].fill(bias);
            for c in 0..ci {
                let w_base = ((o * ci + c) * kh) * kw;
                let x_base = (bi * ci + c) * h * wd;
                for oy in 0..oh {
                    let iy0 = (oy * stride) as isize - ph as isize;
                    for ky in 0..kh {
                        let Some(iy) = tap(iy0 + ky as isize, h, pad) else {
                            continue;
                        };
                        let x_row = x_base + iy * wd;
                        let w_row = w_base + ky * kw;
                        let o_row = out_base + oy * ow;
                        for ox in 0..ow {
                            let ix0 = (ox * stride) as isize - pw as isize;
                            let mut acc = 0.0;
                            for kx in 0..kw {
                                let Some(ix) = tap(ix0 + kx as isize, wd, pad) else {
                                    continue;
                                };
                                acc += xd[x_row + ix] * wv[w_row + kx];
                            }
                            out[o_row + ox] += acc;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![nb, co, oh, ow], out)
}

/// Gradients of `conv2d_forward` with respect to input, weight, and bias.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    ph: usize,
    pw: usize,
    pad: Pad,
    go: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (nb, ci, h, wd) = x.sh4();
    let (co, _, kh, kw) = w.sh4();
    let (_, _, oh, ow) = go.sh4();
    let xd = x.data();
    let wv = w.data();
    let gd = go.data();
    let mut gx = vec![0.0; xd.len()];
    let mut gw = vec![0.0; wv.len()];
    let mut gb = vec![0.0; co];
    for bi in 0..nb {
        for o in 0..co {
            let out_base = (bi * co + o) * oh * ow;
            for v in &gd[out_base..out_base + oh * ow] {
                gb[o] += v;
            }
            for c in 0..ci {
                let w_base = ((o * ci + c) * kh) * kw;
                let x_base = (bi * ci + c) * h * wd;
                for oy in 0..oh {
                    let iy0 = (oy * stride) as isize - ph as isize;
                    for ky in 0..kh {
                        let Some(iy) = tap(iy0 + ky as isize, h, pad) else {
                            continue;
                        };
                        let x_row = x_base + iy * wd;
                        let w_row = w_base + ky * kw;
                        let o_row = out_base + oy * ow;
                        for ox in 0..ow {
                            let g = gd[o_row + ox];
                            if g == 0.0 {
                                continue;
                            }
                            let ix0 = (ox * stride) as isize - pw as isize;
                            for kx in 0..kw {
                                let Some(ix) = tap(ix0 + kx as isize, wd, pad) else {
                                    continue;
                                };
                                gx[x_row + ix] += g * wv[w_row + kx];
                                gw[w_row + kx] += g * xd[x_row + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::new(x.shape().to_vec(), gx),
        Tensor::new(w.shape().to_vec(), gw),
        Tensor::new(vec![co], gb),
    )
}

/// 3x3 stride-1 pad-1 max pooling. Padded cells are excluded from the max;
/// ties resolve to the first candidate in row-major scan order. Returns the
/// chosen flat input index per output cell for exact backward routing.
pub fn maxpool3_forward(x: &Tensor) -> (Tensor, Vec<usize>) {
    let (nb, c, h, w) = x.sh4();
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    let mut arg = vec![0usize; xd.len()];
    for bc in 0..nb * c {
        let base = bc * h * w;
        for oy in 0..h {
            for ox in 0..w {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = base;
                for ky in 0..3usize {
                    let iy = oy as isize + ky as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..3usize {
                        let ix = ox as isize + kx as isize - 1;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let i = base + iy as usize * w + ix as usize;
                        if xd[i] > best {
                            best = xd[i];
                            best_i = i;
                        }
                    }
                }
                let o = base + oy * w + ox;
                out[o] = best;
                arg[o] = best_i;
            }
        }
    }
    (Tensor::new(x.shape().to_vec(), out), arg)
}

pub fn maxpool3_backward(argmax: &[usize], go: &Tensor, in_shape: &[usize]) -> Tensor {
    let mut gx = vec![0.0; in_shape.iter().product()];
    for (o, &src) in argmax.iter().enumerate() {
        gx[src] += go.data()[o];
    }
    Tensor::new(in_shape.to_vec(), gx)
}

/// k x k stride-1 average pooling with pad `p`, dividing by the number of
/// in-bounds cells per window rather than k². A constant map therefore stays
/// exactly constant at the borders.
pub fn avgpool_forward(x: &Tensor, k: usize, p: usize) -> Tensor {
    let (nb, c, h, w) = x.sh4();
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for bc in 0..nb * c {
        let base = bc * h * w;
        for oy in 0..h {
            let y0 = (oy as isize - p as isize).max(0) as usize;
            let y1 = (oy + k - p).min(h);
            for ox in 0..w {
                let x0 = (ox as isize - p as isize).max(0) as usize;
                let x1 = (ox + k - p).min(w);
                let mut acc = 0.0;
                for iy in y0..y1 {
                    let row = base + iy * w;
                    for ix in x0..x1 {
                        acc += xd[row + ix];
                    }
                }
                let count = (y1 - y0) * (x1 - x0);
                out[base + oy * w + ox] = acc / count as f64;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub fn avgpool_backward(in_shape: &[usize], k: usize, p: usize, go: &Tensor) -> Tensor {
    let (nb, c, h, w) = go.sh4();
    let _ = (nb, c);
    let gd = go.data();
    let mut gx = vec![0.0; in_shape.iter().product()];
    let planes = gx.len() / (h * w);
    for bc in 0..planes {
        let base = bc * h * w;
        for oy in 0..h {
            let y0 = (oy as isize - p as isize).max(0) as usize;
            let y1 = (oy + k - p).min(h);
            for ox in 0..w {
                let x0 = (ox as isize - p as isize).max(0) as usize;
                let x1 = (ox + k - p).min(w);
                let count = ((y1 - y0) * (x1 - x0)) as f64;
                let g = gd[base + oy * w + ox] / count;
                for iy in y0..y1 {
                    let row = base + iy * w;
                    for ix in x0..x1 {
                        gx[row + ix] += g;
                    }
                }
            }
        }
    }
    Tensor::new(in_shape.to_vec(), gx)
}

/// Global average pooling to (B,C,1,1).
pub fn gap_forward(x: &Tensor) -> Tensor {
    let (nb, c, h, w) = x.sh4();
    let n = (h * w) as f64;
    let xd = x.data();
    let mut out = vec![0.0; nb * c];
    for (bc, slot) in out.iter_mut().enumerate() {
        let base = bc * h * w;
        let mut acc = 0.0;
        for v in &xd[base..base + h * w] {
            acc += v;
        }
        *slot = acc / n;
    }
    Tensor::new(vec![nb, c, 1, 1], out)
}

pub fn gap_backward(in_shape: &[usize], go: &Tensor) -> Tensor {
    let h = in_shape[2];
    let w = in_shape[3];
    let n = (h * w) as f64;
    let mut gx = vec![0.0; in_shape.iter().product()];
    for bc in 0..in_shape[0] * in_shape[1] {
        let g = go.data()[bc] / n;
        let base = bc * h * w;
        for v in &mut gx[base..base + h * w] {
            *v += g;
        }
    }
    Tensor::new(in_shape.to_vec(), gx)
}

#[inline]
fn bilinear_taps(out_i: usize, scale: f64, in_n: usize) -> (usize, usize, f64) {
    // Half-pixel-center source coordinate, negative values clamped to 0.
    let src = ((out_i as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = math::floor(src) as usize;
    let i0 = i0.min(in_n - 1);
    let i1 = (i0 + 1).min(in_n - 1);
    (i0, i1, src - i0 as f64)
}

/// Bilinear resize to (oh, ow) with half-pixel alignment.
pub fn resize_bilinear_forward(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    let (nb, c, h, w) = x.sh4();
    if oh == h && ow == w {
        return x.clone();
    }
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    let xd = x.data();
    let mut out = vec![0.0; nb * c * oh * ow];
    let mut xtaps = Vec::with_capacity(ow);
    for ox in 0..ow {
        xtaps.push(bilinear_taps(ox, sx, w));
    }
    for bc in 0..nb * c {
        let in_base = bc * h * w;
        let out_base = bc * oh * ow;
        for oy in 0..oh {
            let (y0, y1, fy) = bilinear_taps(oy, sy, h);
            let r0 = in_base + y0 * w;
            let r1 = in_base + y1 * w;
            let orow = out_base + oy * ow;
            for (ox, &(x0, x1, fx)) in xtaps.iter().enumerate() {
                let top = xd[r0 + x0] * (1.0 - fx) + xd[r0 + x1] * fx;
                let bot = xd[r1 + x0] * (1.0 - fx) + xd[r1 + x1] * fx;
                out[orow + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    Tensor::new(vec![nb, c, oh, ow], out)
}

pub fn resize_bilinear_backward(in_shape: &[usize], go: &Tensor) -> Tensor {
    let (nb, c, oh, ow) = go.sh4();
    let h = in_shape[2];
    let w = in_shape[3];
    if oh == h && ow == w {
        return go.clone();
    }
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    let gd = go.data();
    let mut gx = vec![0.0; in_shape.iter().product()];
    let mut xtaps = Vec::with_capacity(ow);
    for ox in 0..ow {
        xtaps.push(bilinear_taps(ox, sx, w));
    }
    for bc in 0..nb * c {
        let in_base = bc * h * w;
        let out_base = bc * oh * ow;
        for oy in 0..oh {
            let (y0, y1, fy) = bilinear_taps(oy, sy, h);
            let r0 = in_base + y0 * w;
            let r1 = in_base + y1 * w;
            let orow = out_base + oy * ow;
            for (ox, &(x0, x1, fx)) in xtaps.iter().enumerate() {
                let g = gd[orow + ox];
                gx[r0 + x0] += g * (1.0 - fy) * (1.0 - fx);
                gx[r0 + x1] += g * (1.0 - fy) * fx;
                gx[r1 + x0] += g * fy * (1.0 - fx);
                gx[r1 + x1] += g * fy * fx;
            }
        }
    }
    Tensor::new(in_shape.to_vec(), gx)
}

/// Numerically stable softmax across the channel axis, per (batch, pixel).
pub fn softmax_channels_forward(x: &Tensor) -> Tensor {
    let (nb, c, h, w) = x.sh4();
    let hw = h * w;
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for bi in 0..nb {
        let base = bi * c * hw;
        for p in 0..hw {
            let mut m = f64::NEG_INFINITY;
            for ch in 0..c {
                m = m.max(xd[base + ch * hw + p]);
            }
            let mut z = 0.0;
            for ch in 0..c {
                let e = math::exp(xd[base + ch * hw + p] - m);
                out[base + ch * hw + p] = e;
                z += e;
            }
            for ch in 0..c {
                out[base + ch * hw + p] /= z;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Backward of channel softmax given the forward output `y`.
pub fn softmax_channels_backward(y: &Tensor, go: &Tensor) -> Tensor {
    let (nb, c, h, w) = y.sh4();
    let hw = h * w;
    let yd = y.data();
    let gd = go.data();
    let mut gx = vec![0.0; yd.len()];
    for bi in 0..nb {
        let base = bi * c * hw;
        for p in 0..hw {
            let mut dot = 0.0;
            for ch in 0..c {
                let i = base + ch * hw + p;
                dot += gd[i] * yd[i];
            }
            for ch in 0..c {
                let i = base + ch * hw + p;
                gx[i] = yd[i] * (gd[i] - dot);
            }
        }
    }
    Tensor::new(y.shape().to_vec(), gx)
}

/// Perfect shuffle of `n` indices in gather form: `map[dest] = src`, where
/// source index `a·(n/2)+b` lands at destination `2b+a`.
pub fn perfect_shuffle_map(n: usize) -> Vec<usize> {
    assert_eq!(n % 2, 0, "perfect shuffle needs an even length");
    let half = n / 2;
    (0..n)
        .map(|p| if p % 2 == 0 { p / 2 } else { half + p / 2 })
        .collect()
}

pub fn invert_permutation(map: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; map.len()];
    for (dest, &src) in map.iter().enumerate() {
        inv[src] = dest;
    }
    inv
}

/// Row gather: output row `i` is input row `map[i]`, per (batch, channel).
pub fn permute_rows(x: &Tensor, map: &[usize]) -> Tensor {
    let (nb, c, h, w) = x.sh4();
    assert_eq!(map.len(), h);
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for bc in 0..nb * c {
        let base = bc * h * w;
        for (dest, &src) in map.iter().enumerate() {
            out[base + dest * w..base + (dest + 1) * w]
                .copy_from_slice(&xd[base + src * w..base + (src + 1) * w]);
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Column gather: output column `j` is input column `map[j]`.
pub fn permute_cols(x: &Tensor, map: &[usize]) -> Tensor {
    let (nb, c, h, w) = x.sh4();
    assert_eq!(map.len(), w);
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for bc in 0..nb * c {
        let base = bc * h * w;
        for y in 0..h {
            let row = base + y * w;
            for (dest, &src) in map.iter().enumerate() {
                out[row + dest] = xd[row + src];
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Channel concatenation of maps sharing (B, H, W).
pub fn concat_channels(xs: &[&Tensor]) -> Tensor {
    let (nb, _, h, w) = xs[0].sh4();
    let total_c: usize = xs.iter().map(|t| t.sh4().1).sum();
    let mut out = vec![0.0; nb * total_c * h * w];
    for bi in 0..nb {
        let mut c_off = 0;
        for t in xs {
            let (_, c, th, tw) = t.sh4();
            assert!(th == h && tw == w, "concat spatial mismatch");
            let src = &t.data()[bi * c * h * w..(bi + 1) * c * h * w];
            let dst = (bi * total_c + c_off) * h * w;
            out[dst..dst + c * h * w].copy_from_slice(src);
            c_off += c;
        }
    }
    Tensor::new(vec![nb, total_c, h, w], out)
}

/// Channel slice `[c0, c0+c)`, the inverse of `concat_channels`.
pub fn slice_channels(x: &Tensor, c0: usize, c: usize) -> Tensor {
    let (nb, total_c, h, w) = x.sh4();
    assert!(c0 + c <= total_c);
    let xd = x.data();
    let mut out = vec![0.0; nb * c * h * w];
    for bi in 0..nb {
        let src = (bi * total_c + c0) * h * w;
        out[bi * c * h * w..(bi + 1) * c * h * w].copy_from_slice(&xd[src..src + c * h * w]);
    }
    Tensor::new(vec![nb, c, h, w], out)
}

/// Affinity of two (B,C,H,W) maps over flattened pixels:
/// `A[b,i,j] = Σ_c q[b,c,i]·k[b,c,j]`, shape (B, HW, HW).
pub fn affinity_forward(q: &Tensor, k: &Tensor) -> Tensor {
    let (nb, c, h, w) = q.sh4();
    assert_eq!(q.shape(), k.shape(), "affinity shape mismatch");
    let hw = h * w;
    let qd = q.data();
    let kd = k.data();
    let mut out = vec![0.0; nb * hw * hw];
    for bi in 0..nb {
        let a_base = bi * hw * hw;
        for ch in 0..c {
            let q_base = (bi * c + ch) * hw;
            let k_row = &kd[q_base..q_base + hw];
            for i in 0..hw {
                let qv = qd[q_base + i];
                if qv == 0.0 {
                    continue;
                }
                let row = &mut out[a_base + i * hw..a_base + (i + 1) * hw];
                for (slot, &kv) in row.iter_mut().zip(k_row) {
                    *slot += qv * kv;
                }
            }
        }
    }
    Tensor::new(vec![nb, hw, hw], out)
}

pub fn affinity_backward(q: &Tensor, k: &Tensor, go: &Tensor) -> (Tensor, Tensor) {
    let (nb, c, h, w) = q.sh4();
    let hw = h * w;
    let qd = q.data();
    let kd = k.data();
    let gd = go.data();
    let mut gq = vec![0.0; qd.len()];
    let mut gk = vec![0.0; kd.len()];
    for bi in 0..nb {
        let a_base = bi * hw * hw;
        for ch in 0..c {
            let base = (bi * c + ch) * hw;
            let k_row = &kd[base..base + hw];
            let q_row = &qd[base..base + hw];
            for i in 0..hw {
                let g_row = &gd[a_base + i * hw..a_base + (i + 1) * hw];
                let mut acc = 0.0;
                for (gv, &kv) in g_row.iter().zip(k_row) {
                    acc += gv * kv;
                }
                gq[base + i] += acc;
                let qv = q_row[i];
                if qv != 0.0 {
                    let gk_row = &mut gk[base..base + hw];
                    for (slot, &gv) in gk_row.iter_mut().zip(g_row) {
                        *slot += qv * gv;
                    }
                }
            }
        }
    }
    (
        Tensor::new(q.shape().to_vec(), gq),
        Tensor::new(k.shape().to_vec(), gk),
    )
}

/// Applies an affinity map to values: `out[b,c,i] = scale·Σ_j a[b,i,j]·v[b,c,j]`.
pub fn attend_forward(v: &Tensor, a: &Tensor, scale: f64) -> Tensor {
    let (nb, c, h, w) = v.sh4();
    let hw = h * w;
    assert_eq!(a.shape(), &[nb, hw, hw], "attend affinity shape mismatch");
    let vd = v.data();
    let ad = a.data();
    let mut out = vec![0.0; vd.len()];
    for bi in 0..nb {
        let a_base = bi * hw * hw;
        for ch in 0..c {
            let base = (bi * c + ch) * hw;
            let v_row = &vd[base..base + hw];
            for i in 0..hw {
                let a_row = &ad[a_base + i * hw..a_base + (i + 1) * hw];
                let mut acc = 0.0;
                for (&av, &vv) in a_row.iter().zip(v_row) {
                    acc += av * vv;
                }
                out[base + i] = scale * acc;
            }
        }
    }
    Tensor::new(v.shape().to_vec(), out)
}

pub fn attend_backward(v: &Tensor, a: &Tensor, scale: f64, go: &Tensor) -> (Tensor, Tensor) {
    let (nb, c, h, w) = v.sh4();
    let hw = h * w;
    let vd = v.data();
    let ad = a.data();
    let gd = go.data();
    let mut gv = vec![0.0; vd.len()];
    let mut ga = vec![0.0; ad.len()];
    for bi in 0..nb {
        let a_base = bi * hw * hw;
        for ch in 0..c {
            let base = (bi * c + ch) * hw;
            let v_row = &vd[base..base + hw];
            for i in 0..hw {
                let g = scale * gd[base + i];
                if g == 0.0 {
                    continue;
                }
                let a_row = &ad[a_base + i * hw..a_base + (i + 1) * hw];
                let gv_row = &mut gv[base..base + hw];
                for (slot, &av) in gv_row.iter_mut().zip(a_row) {
                    *slot += g * av;
                }
                let ga_row = &mut ga[a_base + i * hw..a_base + (i + 1) * hw];
                for (slot, &vv) in ga_row.iter_mut().zip(v_row) {
                    *slot += g * vv;
                }
            }
        }
    }
    (
        Tensor::new(v.shape().to_vec(), gv),
        Tensor::new(a.shape().to_vec(), ga),
    )
}

/// Mean over the batch axis, keeping a leading axis of 1.
pub fn batch_mean_forward(x: &Tensor) -> Tensor {
    let (nb, c, h, w) = x.sh4();
    let plane = c * h * w;
    let xd = x.data();
    let mut out = vec![0.0; plane];
    for bi in 0..nb {
        for (slot, &v) in out.iter_mut().zip(&xd[bi * plane..(bi + 1) * plane]) {
            *slot += v;
        }
    }
    let inv = 1.0 / nb as f64;
    for v in &mut out {
        *v *= inv;
    }
    Tensor::new(vec![1, c, h, w], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;

    fn t4(b: usize, c: usize, h: usize, w: usize, f: impl Fn(usize) -> f64) -> Tensor {
        let n = b * c * h * w;
        Tensor::new(vec![b, c, h, w], (0..n).map(f).collect())
    }

    #[test]
    fn validate_dims_divisors() {
        let mut cfg = ModelConfig::default();
        cfg.input_size = 288;
        assert!(validate_dims(Dims::new(1, 3, 288, 288), &cfg).is_ok());
        cfg.input_size = 256;
        match validate_dims(Dims::new(1, 3, 256, 256), &cfg) {
            Err(CoreError::Dims { divisor, .. }) => assert_eq!(divisor, 3),
            other => panic!("expected divisor-3 error, got {other:?}"),
        }
        cfg.input_size = 240;
        assert!(validate_dims(Dims::new(1, 3, 240, 240), &cfg).is_ok());
    }

    #[test]
    fn validate_dims_iff_mod6() {
        for s in (24..=480).step_by(8) {
            let mut cfg = ModelConfig::default();
            cfg.input_size = s;
            let ok = validate_dims(Dims::new(1, 3, s, s), &cfg).is_ok();
            assert_eq!(ok, (s / 8) % 6 == 0, "input_size {s}");
        }
    }

    #[test]
    fn conv2d_identity_kernel() {
        let x = t4(1, 1, 4, 4, |i| i as f64);
        let mut w = Tensor::zeros(&[1, 1, 3, 3]);
        w.data_mut()[4] = 1.0;
        let y = conv2d_forward(&x, &w, None, 1, 1, 1, Pad::Zero);
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv2d_stride2_shape() {
        let x = t4(2, 3, 96, 96, |i| (i % 7) as f64 * 0.1);
        let w = Tensor::full(&[5, 3, 3, 3], 0.01);
        let y = conv2d_forward(&x, &w, None, 2, 1, 1, Pad::Zero);
        assert_eq!(y.shape(), &[2, 5, 48, 48]);
    }

    #[test]
    fn conv2d_asymmetric_padding_preserves_shape() {
        let x = t4(1, 2, 5, 7, |i| i as f64 * 0.3 - 2.0);
        let w13 = Tensor::full(&[2, 2, 1, 3], 0.2);
        let w31 = Tensor::full(&[2, 2, 3, 1], -0.1);
        assert_eq!(conv2d_forward(&x, &w13, None, 1, 0, 1, Pad::Zero).shape(), x.shape());
        assert_eq!(conv2d_forward(&x, &w31, None, 1, 1, 0, Pad::Zero).shape(), x.shape());
    }

    #[test]
    fn conv2d_gradients_match_finite_differences() {
        let x = t4(1, 2, 5, 5, |i| ((i * 37 % 11) as f64 - 5.0) * 0.21);
        let w = t4(3, 2, 3, 3, |i| ((i * 29 % 13) as f64 - 6.0) * 0.13);
        let b = Tensor::new(vec![3], vec![0.1, -0.2, 0.3]);
        let loss = |x: &Tensor, w: &Tensor, b: &Tensor| -> f64 {
            conv2d_forward(x, w, Some(b), 1, 1, 1, Pad::Zero)
                .data()
                .iter()
                .enumerate()
                .map(|(i, v)| v * (i as f64 * 0.01 - 0.3))
                .sum()
        };
        let go_shape = conv2d_forward(&x, &w, Some(&b), 1, 1, 1, Pad::Zero);
        let go = Tensor::new(
            go_shape.shape().to_vec(),
            (0..go_shape.len()).map(|i| i as f64 * 0.01 - 0.3).collect(),
        );
        let (gx, gw, gb) = conv2d_backward(&x, &w, 1, 1, 1, Pad::Zero, &go);
        let eps = 1e-6;
        for idx in [0usize, 7, 23, 49] {
            let mut xp = x.clone();
            xp.data_mut()[idx] += eps;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= eps;
            let fd = (loss(&xp, &w, &b) - loss(&xm, &w, &b)) / (2.0 * eps);
            assert!((fd - gx.data()[idx]).abs() < 1e-6, "gx[{idx}]");
        }
        for idx in [0usize, 11, 35, 53] {
            let mut wp = w.clone();
            wp.data_mut()[idx] += eps;
            let mut wm = w.clone();
            wm.data_mut()[idx] -= eps;
            let fd = (loss(&x, &wp, &b) - loss(&x, &wm, &b)) / (2.0 * eps);
            assert!((fd - gw.data()[idx]).abs() < 1e-6, "gw[{idx}]");
        }
        for idx in 0..3 {
            let mut bp = b.clone();
            bp.data_mut()[idx] += eps;
            let mut bm = b.clone();
            bm.data_mut()[idx] -= eps;
            let fd = (loss(&x, &w, &bp) - loss(&x, &w, &bm)) / (2.0 * eps);
            assert!((fd - gb.data()[idx]).abs() < 1e-6, "gb[{idx}]");
        }
    }

    #[test]
    fn conv2d_replicate_keeps_constant_maps_constant() {
        let x = Tensor::full(&[1, 2, 5, 5], 0.6);
        let w = t4(3, 2, 3, 3, |i| ((i * 19 % 11) as f64 - 5.0) * 0.1);
        let y = conv2d_forward(&x, &w, None, 1, 1, 1, Pad::Replicate);
        for o in 0..3 {
            let plane = &y.data()[o * 25..(o + 1) * 25];
            for &v in plane {
                assert!((v - plane[0]).abs() < 1e-14, "channel {o}");
            }
        }
        // Zero padding breaks the property at borders for generic weights.
        let yz = conv2d_forward(&x, &w, None, 1, 1, 1, Pad::Zero);
        assert!((yz.data()[0] - yz.data()[12]).abs() > 1e-9);
    }

    #[test]
    fn conv2d_replicate_gradients_match_fd() {
        let x = t4(1, 2, 4, 4, |i| ((i * 41 % 23) as f64 - 11.0) * 0.09);
        let w = t4(2, 2, 3, 3, |i| ((i * 31 % 17) as f64 - 8.0) * 0.07);
        let go = conv2d_forward(&x, &w, None, 1, 1, 1, Pad::Replicate);
        let go = Tensor::new(
            go.shape().to_vec(),
            (0..go.len()).map(|i| i as f64 * 0.02 - 0.3).collect(),
        );
        let loss = |x: &Tensor, w: &Tensor| -> f64 {
            conv2d_forward(x, w, None, 1, 1, 1, Pad::Replicate)
                .data()
                .iter()
                .zip(go.data())
                .map(|(a, b)| a * b)
                .sum()
        };
        let (gx, gw, _) = conv2d_backward(&x, &w, 1, 1, 1, Pad::Replicate, &go);
        let eps = 1e-6;
        for idx in [0usize, 3, 15, 31] {
            let mut p = x.clone();
            p.data_mut()[idx] += eps;
            let mut m = x.clone();
            m.data_mut()[idx] -= eps;
            let fd = (loss(&p, &w) - loss(&m, &w)) / (2.0 * eps);
            assert!((fd - gx.data()[idx]).abs() < 1e-7, "gx[{idx}]");
        }
        for idx in [0usize, 8, 17, 35] {
            let mut p = w.clone();
            p.data_mut()[idx] += eps;
            let mut m = w.clone();
            m.data_mut()[idx] -= eps;
            let fd = (loss(&x, &p) - loss(&x, &m)) / (2.0 * eps);
            assert!((fd - gw.data()[idx]).abs() < 1e-7, "gw[{idx}]");
        }
    }

    #[test]
    fn maxpool_first_max_tiebreak_and_backward() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 1.0, 1.0, 1.0]);
        let (y, arg) = maxpool3_forward(&x);
        assert_eq!(y.data(), &[1.0; 4]);
        // Every clipped window starts scanning at the top-left cell.
        assert_eq!(arg, vec![0, 0, 0, 0]);
        let go = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let gx = maxpool3_backward(&arg, &go, &[1, 1, 2, 2]);
        assert_eq!(gx.data(), &[10.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn avgpool_constant_stays_constant() {
        let x = Tensor::full(&[1, 1, 8, 8], 0.75);
        for (k, p) in [(3usize, 1usize), (31, 15)] {
            let y = avgpool_forward(&x, k, p);
            for &v in y.data() {
                assert!((v - 0.75).abs() < 1e-15, "k={k}");
            }
        }
    }

    #[test]
    fn avgpool_backward_matches_fd() {
        let x = t4(1, 1, 6, 6, |i| ((i * 13 % 17) as f64 - 8.0) * 0.11);
        let go = t4(1, 1, 6, 6, |i| (i as f64 * 0.07) - 1.0);
        let gx = avgpool_backward(x.shape(), 3, 1, &go);
        let loss = |x: &Tensor| -> f64 {
            avgpool_forward(x, 3, 1)
                .data()
                .iter()
                .zip(go.data())
                .map(|(a, b)| a * b)
                .sum()
        };
        let eps = 1e-6;
        for idx in [0usize, 5, 17, 35] {
            let mut xp = x.clone();
            xp.data_mut()[idx] += eps;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= eps;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * eps);
            assert!((fd - gx.data()[idx]).abs() < 1e-7);
        }
    }

    #[test]
    fn resize_identity_and_constant() {
        let x = t4(1, 2, 6, 6, |i| i as f64);
        assert_eq!(resize_bilinear_forward(&x, 6, 6).data(), x.data());
        let c = Tensor::full(&[1, 1, 5, 5], 2.5);
        let up = resize_bilinear_forward(&c, 20, 20);
        for &v in up.data() {
            assert!((v - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn resize_backward_is_adjoint() {
        // <resize(x), g> == <x, resize^T(g)> for the linear resize map.
        let x = t4(1, 1, 5, 7, |i| ((i * 31 % 19) as f64 - 9.0) * 0.17);
        let g = t4(1, 1, 11, 4, |i| ((i * 23 % 13) as f64 - 6.0) * 0.09);
        let y = resize_bilinear_forward(&x, 11, 4);
        let gx = resize_bilinear_backward(x.shape(), &g);
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(gx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn softmax_channels_normalized() {
        let x = t4(2, 5, 3, 3, |i| ((i * 7 % 23) as f64 - 11.0) * 0.4);
        let y = softmax_channels_forward(&x);
        let (nb, c, h, w) = y.sh4();
        for bi in 0..nb {
            for p in 0..h * w {
                let s: f64 = (0..c).map(|ch| y.data()[(bi * c + ch) * h * w + p]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_backward_matches_fd() {
        let x = t4(1, 4, 2, 2, |i| ((i * 11 % 7) as f64 - 3.0) * 0.5);
        let go = t4(1, 4, 2, 2, |i| (i as f64 * 0.13) - 0.8);
        let y = softmax_channels_forward(&x);
        let gx = softmax_channels_backward(&y, &go);
        let loss = |x: &Tensor| -> f64 {
            softmax_channels_forward(x)
                .data()
                .iter()
                .zip(go.data())
                .map(|(a, b)| a * b)
                .sum()
        };
        let eps = 1e-6;
        for idx in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[idx] += eps;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= eps;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * eps);
            assert!((fd - gx.data()[idx]).abs() < 1e-8);
        }
    }

    #[test]
    fn perfect_shuffle_h4() {
        assert_eq!(perfect_shuffle_map(4), vec![0, 2, 1, 3]);
        let map = perfect_shuffle_map(12);
        let inv = invert_permutation(&map);
        for i in 0..12 {
            assert_eq!(map[inv[i]], i);
        }
    }

    #[test]
    fn permutations_roundtrip() {
        let x = t4(2, 3, 4, 6, |i| i as f64);
        let rmap = perfect_shuffle_map(4);
        let cmap = perfect_shuffle_map(6);
        let xr = permute_rows(&x, &rmap);
        assert_eq!(permute_rows(&xr, &invert_permutation(&rmap)).data(), x.data());
        let xc = permute_cols(&x, &cmap);
        assert_eq!(permute_cols(&xc, &invert_permutation(&cmap)).data(), x.data());
    }

    #[test]
    fn concat_slice_roundtrip() {
        let a = t4(2, 2, 3, 3, |i| i as f64);
        let b = t4(2, 3, 3, 3, |i| 100.0 + i as f64);
        let cat = concat_channels(&[&a, &b]);
        assert_eq!(cat.shape(), &[2, 5, 3, 3]);
        assert_eq!(slice_channels(&cat, 0, 2).data(), a.data());
        assert_eq!(slice_channels(&cat, 2, 3).data(), b.data());
    }

    #[test]
    fn affinity_attend_small_oracle() {
        let q = t4(1, 2, 1, 2, |i| (i + 1) as f64);
        let k = t4(1, 2, 1, 2, |i| (i as f64) - 1.5);
        // q rows: c0=[1,2], c1=[3,4]; k rows: c0=[-1.5,-0.5], c1=[0.5,1.5].
        let a = affinity_forward(&q, &k);
        assert_eq!(a.shape(), &[1, 2, 2]);
        assert_eq!(a.data(), &[
            1.0 * -1.5 + 3.0 * 0.5,
            1.0 * -0.5 + 3.0 * 1.5,
            2.0 * -1.5 + 4.0 * 0.5,
            2.0 * -0.5 + 4.0 * 1.5,
        ]);
        let v = t4(1, 2, 1, 2, |i| (i as f64) * 0.5 + 0.25);
        let ctx = attend_forward(&v, &a, 0.5);
        let vd = v.data();
        let ad = a.data();
        for ch in 0..2 {
            for i in 0..2 {
                let want = 0.5 * (ad[i * 2] * vd[ch * 2] + ad[i * 2 + 1] * vd[ch * 2 + 1]);
                assert!((ctx.data()[ch * 2 + i] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn affinity_attend_backward_adjoint() {
        let q = t4(2, 3, 2, 2, |i| ((i * 17 % 13) as f64 - 6.0) * 0.2);
        let k = t4(2, 3, 2, 2, |i| ((i * 7 % 11) as f64 - 5.0) * 0.3);
        let v = t4(2, 3, 2, 2, |i| ((i * 5 % 9) as f64 - 4.0) * 0.25);
        let a = affinity_forward(&q, &k);
        let ga = Tensor::new(a.shape().to_vec(), (0..a.len()).map(|i| (i as f64) * 0.01 - 0.1).collect());
        let (gq, gk) = affinity_backward(&q, &k, &ga);
        let dot = |a: &Tensor, b: &Tensor| -> f64 {
            a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
        };
        // Directional check: d/dt <affinity(q + t·dq, k), ga> at t=0 equals <gq, dq>.
        let dq = t4(2, 3, 2, 2, |i| ((i * 3 % 7) as f64 - 3.0) * 0.1);
        let eps = 1e-6;
        let mut qp = q.clone();
        for (s, d) in qp.data_mut().iter_mut().zip(dq.data()) {
            *s += eps * d;
        }
        let mut qm = q.clone();
        for (s, d) in qm.data_mut().iter_mut().zip(dq.data()) {
            *s -= eps * d;
        }
        let fd = (dot(&affinity_forward(&qp, &k), &ga) - dot(&affinity_forward(&qm, &k), &ga))
            / (2.0 * eps);
        assert!((fd - dot(&gq, &dq)).abs() < 1e-8);
        let dk = t4(2, 3, 2, 2, |i| ((i * 13 % 5) as f64 - 2.0) * 0.15);
        let mut kp = k.clone();
        for (s, d) in kp.data_mut().iter_mut().zip(dk.data()) {
            *s += eps * d;
        }
        let mut km = k.clone();
        for (s, d) in km.data_mut().iter_mut().zip(dk.data()) {
            *s -= eps * d;
        }
        let fd = (dot(&affinity_forward(&q, &kp), &ga) - dot(&affinity_forward(&q, &km), &ga))
            / (2.0 * eps);
        assert!((fd - dot(&gk, &dk)).abs() < 1e-8);
        let go = Tensor::new(v.shape().to_vec(), (0..v.len()).map(|i| (i as f64) * 0.02 - 0.2).collect());
        let (gv, ga2) = attend_backward(&v, &a, 0.25, &go);
        let dv = t4(2, 3, 2, 2, |i| ((i * 11 % 6) as f64 - 2.5) * 0.12);
        let mut vp = v.clone();
        for (s, d) in vp.data_mut().iter_mut().zip(dv.data()) {
            *s += eps * d;
        }
        let mut vm = v.clone();
        for (s, d) in vm.data_mut().iter_mut().zip(dv.data()) {
            *s -= eps * d;
        }
        let fd = (dot(&attend_forward(&vp, &a, 0.25), &go) - dot(&attend_forward(&vm, &a, 0.25), &go))
            / (2.0 * eps);
        assert!((fd - dot(&gv, &dv)).abs() < 1e-8);
        let da = Tensor::new(a.shape().to_vec(), (0..a.len()).map(|i| ((i * 7 % 10) as f64 - 4.0) * 0.05).collect());
        let mut ap = a.clone();
        for (s, d) in ap.data_mut().iter_mut().zip(da.data()) {
            *s += eps * d;
        }
        let mut am = a.clone();
        for (s, d) in am.data_mut().iter_mut().zip(da.data()) {
            *s -= eps * d;
        }
        let fd = (dot(&attend_forward(&v, &ap, 0.25), &go) - dot(&attend_forward(&v, &am, 0.25), &go))
            / (2.0 * eps);
        assert!((fd - dot(&ga2, &da)).abs() < 1e-8);
    }

    #[test]
    fn batch_mean_shape_and_values() {
        let x = Tensor::new(vec![2, 1, 1, 2], vec![1.0, 3.0, 5.0, 7.0]);
        let m = batch_mean_forward(&x);
        assert_eq!(m.shape(), &[1, 1, 1, 2]);
        assert_eq!(m.data(), &[3.0, 5.0]);
    }

    #[test]
    fn feature_map_rejects_nan() {
        let mut t = Tensor::zeros(&[1, 1, 2, 2]);
        t.data_mut()[1] = f64::NAN;
        assert!(FeatureMap::new(Stage::FCat, t).is_err());
        assert!(FeatureMap::new(Stage::FSh, Tensor::zeros(&[1, 2, 2])).is_err());
        assert!(FeatureMap::new(Stage::FMm, Tensor::zeros(&[1, 4, 4])).is_ok());
    }
}
