//! Reverse-mode automatic differentiation over a closed set of ops.
//!
//! A `Tape` records one forward pass as a flat node list; `backward` walks it
//! in reverse accumulating gradients. Ops are an enum rather than closures so
//! each node stores only its parents plus whatever bookkeeping (pool argmax,
//! permutation inverses) exact backward routing needs.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{self, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        ph: usize,
        pw: usize,
        pad: tensor::Pad,
    },
    MaxPool3 {
        x: Var,
        argmax: Vec<usize>,
    },
    AvgPool {
        x: Var,
        k: usize,
        p: usize,
    },
    Gap {
        x: Var,
    },
    Resize {
        x: Var,
    },
    SoftmaxC {
        x: Var,
    },
    PermRows {
        x: Var,
        inv: Vec<usize>,
    },
    PermCols {
        x: Var,
        inv: Vec<usize>,
    },
    ConcatC {
        xs: Vec<Var>,
    },
    SliceC {
        x: Var,
        c0: usize,
    },
    BlockSelect {
        x: Var,
        picks: Vec<Vec<(usize, usize)>>,
        bh: usize,
        bw: usize,
    },
    Affinity {
        q: Var,
        k: Var,
    },
    Attend {
        v: Var,
        a: Var,
        scale: f64,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        s: f64,
    },
    AddScalar {
        x: Var,
        // constant c in x + c; not differentiated
    },
    RsubScalar {
        x: Var,
        // constant c in c - x
    },
    MulScalarVar {
        x: Var,
        s: Var,
    },
    MulGate {
        x: Var,
        g: Var,
    },
    BatchMean {
        x: Var,
    },
    MulBroadcastB {
        x: Var,
        m: Var,
    },
    Sigmoid {
        x: Var,
    },
    Softplus {
        x: Var,
    },
    Relu {
        x: Var,
    },
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    Ln {
        x: Var,
    },
    SumAll {
        x: Var,
    },
    DivScalars {
        a: Var,
        b: Var,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients indexed by `Var`; untouched nodes hold `None`.
pub struct Grads {
    slots: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.slots[v.0].as_ref()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Multiply-add count of conv and matmul ops, doubled into FLOPs by the
    /// model summary.
    pub macs: u64,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        ph: usize,
        pw: usize,
    ) -> Var {
        self.conv2d_pad(x, w, b, stride, ph, pw, tensor::Pad::Zero)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv2d_pad(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        ph: usize,
        pw: usize,
        pad: tensor::Pad,
    ) -> Var {
        let y = tensor::conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|bv| self.value(bv)),
            stride,
            ph,
            pw,
            pad,
        );
        let (nb, co, oh, ow) = y.sh4();
        let (_, ci, kh, kw) = self.value(w).sh4();
        self.macs += (nb * co * oh * ow * ci * kh * kw) as u64;
        self.push(y, Op::Conv2d { x, w, b, stride, ph, pw, pad })
    }

    pub fn maxpool3(&mut self, x: Var) -> Var {
        let (y, argmax) = tensor::maxpool3_forward(self.value(x));
        self.push(y, Op::MaxPool3 { x, argmax })
    }

    pub fn avgpool(&mut self, x: Var, k: usize, p: usize) -> Var {
        let y = tensor::avgpool_forward(self.value(x), k, p);
        self.push(y, Op::AvgPool { x, k, p })
    }

    pub fn gap(&mut self, x: Var) -> Var {
        let y = tensor::gap_forward(self.value(x));
        self.push(y, Op::Gap { x })
    }

    pub fn resize(&mut self, x: Var, oh: usize, ow: usize) -> Var {
        let y = tensor::resize_bilinear_forward(self.value(x), oh, ow);
        self.push(y, Op::Resize { x })
    }

    pub fn softmax_channels(&mut self, x: Var) -> Var {
        let y = tensor::softmax_channels_forward(self.value(x));
        self.push(y, Op::SoftmaxC { x })
    }

    pub fn permute_rows(&mut self, x: Var, map: &[usize]) -> Var {
        let y = tensor::permute_rows(self.value(x), map);
        let inv = tensor::invert_permutation(map);
        self.push(y, Op::PermRows { x, inv })
    }

    pub fn permute_cols(&mut self, x: Var, map: &[usize]) -> Var {
        let y = tensor::permute_cols(self.value(x), map);
        let inv = tensor::invert_permutation(map);
        self.push(y, Op::PermCols { x, inv })
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Var {
        let tensors: Vec<&Tensor> = xs.iter().map(|&v| self.value(v)).collect();
        let y = tensor::concat_channels(&tensors);
        self.push(y, Op::ConcatC { xs: xs.to_vec() })
    }

    pub fn slice_channels(&mut self, x: Var, c0: usize, c: usize) -> Var {
        let y = tensor::slice_channels(self.value(x), c0, c);
        self.push(y, Op::SliceC { x, c0 })
    }

    /// Per-image gather of sub-blocks on a (bh, bw) grid tiling: output is
    /// (B, C, bh, bw), the mean of the blocks listed in `picks[b]` (block
    /// coordinates (by, bx) in units of whole blocks).
    pub fn block_select(&mut self, x: Var, picks: Vec<Vec<(usize, usize)>>, bh: usize, bw: usize) -> Var {
        let xv = self.value(x);
        let (nb, c, h, w) = xv.sh4();
        assert_eq!(picks.len(), nb);
        assert!(h % bh == 0 && w % bw == 0, "blocks must tile the map");
        let xd = xv.data();
        let mut out = vec![0.0; nb * c * bh * bw];
        for bi in 0..nb {
            assert!(!picks[bi].is_empty(), "empty block pick");
            let inv = 1.0 / picks[bi].len() as f64;
            for ch in 0..c {
                let in_base = (bi * c + ch) * h * w;
                let out_base = (bi * c + ch) * bh * bw;
                for &(by, bx) in &picks[bi] {
                    for dy in 0..bh {
                        let row = in_base + (by * bh + dy) * w + bx * bw;
                        let orow = out_base + dy * bw;
                        for dx in 0..bw {
                            out[orow + dx] += xd[row + dx] * inv;
                        }
                    }
                }
            }
        }
        let y = Tensor::new(vec![nb, c, bh, bw], out);
        self.push(y, Op::BlockSelect { x, picks, bh, bw })
    }

    pub fn affinity(&mut self, q: Var, k: Var) -> Var {
        let y = tensor::affinity_forward(self.value(q), self.value(k));
        let (nb, c, h, w) = self.value(q).sh4();
        let hw = (h * w) as u64;
        self.macs += nb as u64 * c as u64 * hw * hw;
        self.push(y, Op::Affinity { q, k })
    }

    pub fn attend(&mut self, v: Var, a: Var, scale: f64) -> Var {
        let y = tensor::attend_forward(self.value(v), self.value(a), scale);
        let (nb, c, h, w) = self.value(v).sh4();
        let hw = (h * w) as u64;
        self.macs += nb as u64 * c as u64 * hw * hw;
        self.push(y, Op::Attend { v, a, scale })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape(), bv.shape(), "add shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let y = Tensor::new(av.shape().to_vec(), data);
        self.push(y, Op::Add { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape(), bv.shape(), "mul shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let y = Tensor::new(av.shape().to_vec(), data);
        self.push(y, Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let y = self.value(x).map(|v| v * s);
        self.push(y, Op::Scale { x, s })
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let y = self.value(x).map(|v| v + c);
        self.push(y, Op::AddScalar { x })
    }

    /// c - x, elementwise.
    pub fn rsub_scalar(&mut self, c: f64, x: Var) -> Var {
        let y = self.value(x).map(|v| c - v);
        self.push(y, Op::RsubScalar { x })
    }

    /// Broadcast-multiplies `x` by a single-element tensor `s`.
    pub fn mul_scalar_var(&mut self, x: Var, s: Var) -> Var {
        let sv = self.value(s).item();
        let y = self.value(x).map(|v| v * sv);
        self.push(y, Op::MulScalarVar { x, s })
    }

    /// Multiplies (B,C,H,W) by a per-channel gate (B,C,1,1).
    pub fn mul_gate(&mut self, x: Var, g: Var) -> Var {
        let xv = self.value(x);
        let gv = self.value(g);
        let (nb, c, h, w) = xv.sh4();
        assert_eq!(gv.shape(), &[nb, c, 1, 1], "gate shape mismatch");
        let mut data = xv.data().to_vec();
        for bc in 0..nb * c {
            let gain = gv.data()[bc];
            for v in &mut data[bc * h * w..(bc + 1) * h * w] {
                *v *= gain;
            }
        }
        let y = Tensor::new(xv.shape().to_vec(), data);
        self.push(y, Op::MulGate { x, g })
    }

    /// Mean over the batch axis, keeping shape (1,C,H,W).
    pub fn batch_mean(&mut self, x: Var) -> Var {
        let y = tensor::batch_mean_forward(self.value(x));
        self.push(y, Op::BatchMean { x })
    }

    /// Multiplies (B,C,H,W) by a batch-broadcast map (1,C,H,W).
    pub fn mul_broadcast_b(&mut self, x: Var, m: Var) -> Var {
        let xv = self.value(x);
        let mv = self.value(m);
        let (nb, c, h, w) = xv.sh4();
        assert_eq!(mv.shape(), &[1, c, h, w], "broadcast shape mismatch");
        let plane = c * h * w;
        let mut data = xv.data().to_vec();
        for bi in 0..nb {
            for (v, &g) in data[bi * plane..(bi + 1) * plane].iter_mut().zip(mv.data()) {
                *v *= g;
            }
        }
        let y = Tensor::new(xv.shape().to_vec(), data);
        self.push(y, Op::MulBroadcastB { x, m })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(tensor::math::sigmoid);
        self.push(y, Op::Sigmoid { x })
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let y = self.value(x).map(tensor::math::softplus);
        self.push(y, Op::Softplus { x })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(y, Op::Relu { x })
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let y = self.value(x).map(|v| v.clamp(lo, hi));
        self.push(y, Op::Clamp { x, lo, hi })
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let y = self.value(x).map(tensor::math::ln);
        self.push(y, Op::Ln { x })
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll { x })
    }

    /// Scalar division a / b of two single-element tensors.
    pub fn div_scalars(&mut self, a: Var, b: Var) -> Var {
        let y = Tensor::scalar(self.value(a).item() / self.value(b).item());
        self.push(y, Op::DivScalars { a, b })
    }

    /// Runs reverse accumulation from scalar `root` (seed gradient 1).
    pub fn backward(&self, root: Var) -> Grads {
        assert_eq!(
            self.value(root).len(),
            1,
            "backward root must be a scalar"
        );
        let mut slots: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        slots[root.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=root.0).rev() {
            let Some(g) = slots[idx].take() else { continue };
            self.accumulate_parents(idx, &g, &mut slots);
            slots[idx] = Some(g);
        }
        Grads { slots }
    }

    fn accumulate_parents(&self, idx: usize, g: &Tensor, slots: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let mut give = |v: Var, contrib: Tensor| {
            match &mut slots[v.0] {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(contrib.data()) {
                        *a += b;
                    }
                }
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, ph, pw, pad } => {
                let (gx, gw, gb) =
                    tensor::conv2d_backward(self.value(*x), self.value(*w), *stride, *ph, *pw, *pad, g);
                give(*x, gx);
                give(*w, gw);
                if let Some(bv) = b {
                    give(*bv, gb);
                }
            }
            Op::MaxPool3 { x, argmax } => {
                give(*x, tensor::maxpool3_backward(argmax, g, self.value(*x).shape()));
            }
            Op::AvgPool { x, k, p } => {
                give(*x, tensor::avgpool_backward(self.value(*x).shape(), *k, *p, g));
            }
            Op::Gap { x } => {
                give(*x, tensor::gap_backward(self.value(*x).shape(), g));
            }
            Op::Resize { x } => {
                give(*x, tensor::resize_bilinear_backward(self.value(*x).shape(), g));
            }
            Op::SoftmaxC { x } => {
                give(*x, tensor::softmax_channels_backward(&node.value, g));
            }
            Op::PermRows { x, inv } => {
                give(*x, tensor::permute_rows(g, inv));
            }
            Op::PermCols { x, inv } => {
                give(*x, tensor::permute_cols(g, inv));
            }
            Op::ConcatC { xs } => {
                let mut c0 = 0;
                for &xv in xs {
                    let c = self.value(xv).sh4().1;
                    give(xv, tensor::slice_channels(g, c0, c));
                    c0 += c;
                }
            }
            Op::SliceC { x, c0 } => {
                let xv = self.value(*x);
                let (nb, total_c, h, w) = xv.sh4();
                let (_, c, _, _) = node.value.sh4();
                let mut gx = vec![0.0; xv.len()];
                for bi in 0..nb {
                    let dst = (bi * total_c + c0) * h * w;
                    gx[dst..dst + c * h * w]
                        .copy_from_slice(&g.data()[bi * c * h * w..(bi + 1) * c * h * w]);
                }
                give(*x, Tensor::new(xv.shape().to_vec(), gx));
            }
            Op::BlockSelect { x, picks, bh, bw } => {
                let xv = self.value(*x);
                let (nb, c, h, w) = xv.sh4();
                let mut gx = vec![0.0; xv.len()];
                for bi in 0..nb {
                    let inv = 1.0 / picks[bi].len() as f64;
                    for ch in 0..c {
                        let in_base = (bi * c + ch) * h * w;
                        let out_base = (bi * c + ch) * bh * bw;
                        for &(by, bx) in &picks[bi] {
                            for dy in 0..*bh {
                                let row = in_base + (by * bh + dy) * w + bx * bw;
                                let orow = out_base + dy * bw;
                                for dx in 0..*bw {
                                    gx[row + dx] += g.data()[orow + dx] * inv;
                                }
                            }
                        }
                    }
                }
                give(*x, Tensor::new(xv.shape().to_vec(), gx));
            }
            Op::Affinity { q, k } => {
                let (gq, gk) = tensor::affinity_backward(self.value(*q), self.value(*k), g);
                give(*q, gq);
                give(*k, gk);
            }
            Op::Attend { v, a, scale } => {
                let (gv, ga) = tensor::attend_backward(self.value(*v), self.value(*a), *scale, g);
                give(*v, gv);
                give(*a, ga);
            }
            Op::Add { a, b } => {
                give(*a, g.clone());
                give(*b, g.clone());
            }
            Op::Mul { a, b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let ga = Tensor::new(
                    g.shape().to_vec(),
                    g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect(),
                );
                let gb = Tensor::new(
                    g.shape().to_vec(),
                    g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect(),
                );
                give(*a, ga);
                give(*b, gb);
            }
            Op::Scale { x, s } => {
                give(*x, g.map(|v| v * s));
            }
            Op::AddScalar { x } => {
                give(*x, g.clone());
            }
            Op::RsubScalar { x } => {
                give(*x, g.map(|v| -v));
            }
            Op::MulScalarVar { x, s } => {
                let sv = self.value(*s).item();
                give(*x, g.map(|v| v * sv));
                let dot: f64 = g
                    .data()
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(a, b)| a * b)
                    .sum();
                give(*s, Tensor::scalar(dot));
            }
            Op::MulGate { x, g: gate } => {
                let xv = self.value(*x);
                let gatev = self.value(*gate);
                let (nb, c, h, w) = xv.sh4();
                let mut gx = g.data().to_vec();
                let mut gg = vec![0.0; nb * c];
                for bc in 0..nb * c {
                    let gain = gatev.data()[bc];
                    let mut acc = 0.0;
                    for (slot, &xvv) in gx[bc * h * w..(bc + 1) * h * w]
                        .iter_mut()
                        .zip(&xv.data()[bc * h * w..(bc + 1) * h * w])
                    {
                        acc += *slot * xvv;
                        *slot *= gain;
                    }
                    gg[bc] = acc;
                }
                give(*x, Tensor::new(xv.shape().to_vec(), gx));
                give(*gate, Tensor::new(vec![nb, c, 1, 1], gg));
            }
            Op::BatchMean { x } => {
                let (nb, c, h, w) = self.value(*x).sh4();
                let plane = c * h * w;
                let inv = 1.0 / nb as f64;
                let mut gx = vec![0.0; nb * plane];
                for bi in 0..nb {
                    for (slot, &gv) in gx[bi * plane..(bi + 1) * plane].iter_mut().zip(g.data()) {
                        *slot = gv * inv;
                    }
                }
                give(*x, Tensor::new(self.value(*x).shape().to_vec(), gx));
            }
            Op::MulBroadcastB { x, m } => {
                let xv = self.value(*x);
                let mv = self.value(*m);
                let (nb, c, h, w) = xv.sh4();
                let plane = c * h * w;
                let mut gx = g.data().to_vec();
                let mut gm = vec![0.0; plane];
                for bi in 0..nb {
                    for p in 0..plane {
                        let i = bi * plane + p;
                        gm[p] += g.data()[i] * xv.data()[i];
                        gx[i] *= mv.data()[p];
                    }
                }
                give(*x, Tensor::new(xv.shape().to_vec(), gx));
                give(*m, Tensor::new(vec![1, c, h, w], gm));
            }
            Op::Sigmoid { x } => {
                let y = &node.value;
                let gx = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(y.data())
                        .map(|(gv, yv)| gv * yv * (1.0 - yv))
                        .collect(),
                );
                give(*x, gx);
            }
            Op::Softplus { x } => {
                let xv = self.value(*x);
                let gx = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(xv.data())
                        .map(|(gv, &v)| gv * tensor::math::sigmoid(v))
                        .collect(),
                );
                give(*x, gx);
            }
            Op::Relu { x } => {
                let xv = self.value(*x);
                let gx = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(xv.data())
                        .map(|(gv, &v)| if v > 0.0 { *gv } else { 0.0 })
                        .collect(),
                );
                give(*x, gx);
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.value(*x);
                let gx = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(xv.data())
                        .map(|(gv, &v)| if v > *lo && v < *hi { *gv } else { 0.0 })
                        .collect(),
                );
                give(*x, gx);
            }
            Op::Ln { x } => {
                let xv = self.value(*x);
                let gx = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(xv.data())
                        .map(|(gv, &v)| gv / v)
                        .collect(),
                );
                give(*x, gx);
            }
            Op::SumAll { x } => {
                let gv = g.item();
                give(*x, Tensor::full(self.value(*x).shape(), gv));
            }
            Op::DivScalars { a, b } => {
                let av = self.value(*a).item();
                let bv = self.value(*b).item();
                let gv = g.item();
                give(*a, Tensor::scalar(gv / bv));
                give(*b, Tensor::scalar(-gv * av / (bv * bv)));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn chain_through_elementwise_ops() {
        // y = sum(sigmoid(2x + 1) * x); check dy/dx against finite differences.
        let xs = vec![0.3, -0.7, 1.2, 0.0];
        let f = |vals: &[f64]| -> (f64, Vec<f64>) {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::new(vec![1, 1, 2, 2], vals.to_vec()));
            let a = tape.scale(x, 2.0);
            let b = tape.add_scalar(a, 1.0);
            let s = tape.sigmoid(b);
            let m = tape.mul(s, x);
            let y = tape.sum_all(m);
            let grads = tape.backward(y);
            (tape.value(y).item(), grads.get(x).unwrap().data().to_vec())
        };
        let (_, gx) = f(&xs);
        let eps = 1e-6;
        for i in 0..4 {
            let mut p = xs.clone();
            p[i] += eps;
            let mut m = xs.clone();
            m[i] -= eps;
            let fd = (f(&p).0 - f(&m).0) / (2.0 * eps);
            assert!((fd - gx[i]).abs() < 1e-8, "coord {i}: fd {fd} vs ad {}", gx[i]);
        }
    }

    #[test]
    fn grad_accumulates_over_fanout() {
        // y = sum(x * x) has gradient 2x; x is used twice by the same node.
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 1, 1, 3], vec![1.0, -2.0, 3.0]));
        let m = tape.mul(x, x);
        let y = tape.sum_all(m);
        let grads = tape.backward(y);
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn div_scalars_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::scalar(3.0));
        let b = tape.leaf(Tensor::scalar(4.0));
        let y = tape.div_scalars(a, b);
        let grads = tape.backward(y);
        assert!((grads.get(a).unwrap().item() - 0.25).abs() < 1e-15);
        assert!((grads.get(b).unwrap().item() + 3.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn gate_and_broadcast_gradients_match_fd() {
        let xs: Vec<f64> = (0..12).map(|i| (i as f64) * 0.3 - 1.5).collect();
        let gs: Vec<f64> = (0..6).map(|i| (i as f64) * 0.4 - 1.0).collect();
        let f = |xv: &[f64], gv: &[f64]| -> (f64, Vec<f64>, Vec<f64>) {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::new(vec![2, 3, 1, 2], xv.to_vec()));
            let g = tape.leaf(Tensor::new(vec![2, 3, 1, 1], gv.to_vec()));
            let m = tape.mul_gate(x, g);
            let sq = tape.mul(m, m);
            let y = tape.sum_all(sq);
            let grads = tape.backward(y);
            (
                tape.value(y).item(),
                grads.get(x).unwrap().data().to_vec(),
                grads.get(g).unwrap().data().to_vec(),
            )
        };
        let (_, gx, gg) = f(&xs, &gs);
        let eps = 1e-6;
        for i in 0..xs.len() {
            let mut p = xs.clone();
            p[i] += eps;
            let mut m = xs.clone();
            m[i] -= eps;
            let fd = (f(&p, &gs).0 - f(&m, &gs).0) / (2.0 * eps);
            assert!((fd - gx[i]).abs() < 1e-7);
        }
        for i in 0..gs.len() {
            let mut p = gs.clone();
            p[i] += eps;
            let mut m = gs.clone();
            m[i] -= eps;
            let fd = (f(&xs, &p).0 - f(&xs, &m).0) / (2.0 * eps);
            assert!((fd - gg[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn batch_mean_broadcast_gradient() {
        let xs: Vec<f64> = (0..8).map(|i| (i as f64) * 0.25 - 1.0).collect();
        let f = |xv: &[f64]| -> (f64, Vec<f64>) {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::new(vec![2, 1, 2, 2], xv.to_vec()));
            let m = tape.batch_mean(x);
            let s = tape.sigmoid(m);
            let o = tape.mul_broadcast_b(x, s);
            let y = tape.sum_all(o);
            let grads = tape.backward(y);
            (tape.value(y).item(), grads.get(x).unwrap().data().to_vec())
        };
        let (_, gx) = f(&xs);
        let eps = 1e-6;
        for i in 0..xs.len() {
            let mut p = xs.clone();
            p[i] += eps;
            let mut m = xs.clone();
            m[i] -= eps;
            let fd = (f(&p).0 - f(&m).0) / (2.0 * eps);
            assert!((fd - gx[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn macs_counted_for_conv_and_matmul() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[1, 2, 4, 4]));
        let w = tape.leaf(Tensor::zeros(&[3, 2, 3, 3]));
        tape.conv2d(x, w, None, 1, 1, 1);
        assert_eq!(tape.macs, (1 * 3 * 4 * 4 * 2 * 3 * 3) as u64);
        let q = tape.leaf(Tensor::zeros(&[1, 2, 2, 2]));
        let k = tape.leaf(Tensor::zeros(&[1, 2, 2, 2]));
        let before = tape.macs;
        tape.affinity(q, k);
        assert_eq!(tape.macs - before, (1 * 2 * 16) as u64);
    }
}
