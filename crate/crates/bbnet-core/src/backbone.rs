//! Pluggable feature extractors producing the five-level pyramid f1..f5 at
//! strides {2, 4, 8, 16, 32}, plus the 1x1 channel projection feeding the
//! two branches.
//!
//! Block internals are intentionally lightweight stand-ins for the named
//! families; only the stride/channel contract is load-bearing downstream.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::config::BackboneId;
use crate::params::{push_conv, BoundParams, ParamSpec};
use crate::tape::{Tape, Var};

pub const STRIDES: [usize; 5] = [2, 4, 8, 16, 32];

/// Channel widths of f1..f5 per backbone family.
pub fn channels(id: BackboneId) -> [usize; 5] {
    match id {
        BackboneId::TinyCnn => [16, 32, 64, 96, 128],
        BackboneId::Res2Net50Like | BackboneId::ResNet50Like => [64, 256, 512, 1024, 2048],
        BackboneId::Vgg16Like => [64, 128, 256, 512, 512],
    }
}

/// Static description of a backbone choice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneDescriptor {
    pub id: BackboneId,
    pub channels: [usize; 5],
    pub pretrained_path: Option<String>,
}

impl BackboneDescriptor {
    pub fn new(id: BackboneId) -> Self {
        BackboneDescriptor {
            id,
            channels: channels(id),
            pretrained_path: None,
        }
    }
}

/// Tape handles for the five pyramid levels of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct FeaturePyramid {
    pub f: [Var; 5],
}

pub fn param_specs(id: BackboneId) -> Vec<ParamSpec> {
    let ch = channels(id);
    let mut specs = Vec::new();
    match id {
        BackboneId::TinyCnn => {
            let mut cin = 3;
            for (i, &cout) in ch.iter().enumerate() {
                push_conv(&mut specs, &format!("backbone.s{}", i + 1), cout, cin, 3, 3);
                cin = cout;
            }
        }
        BackboneId::Vgg16Like => {
            let mut cin = 3;
            for (i, &cout) in ch.iter().enumerate() {
                let base = format!("backbone.b{}", i + 1);
                push_conv(&mut specs, &format!("{base}.conv1"), cout, cin, 3, 3);
                push_conv(&mut specs, &format!("{base}.conv2"), cout, cout, 3, 3);
                push_conv(&mut specs, &format!("{base}.down"), cout, cout, 3, 3);
                cin = cout;
            }
        }
        BackboneId::ResNet50Like | BackboneId::Res2Net50Like => {
            push_conv(&mut specs, "backbone.stem", ch[0], 3, 3, 3);
            let mut cin = ch[0];
            for (i, &cout) in ch.iter().enumerate().skip(1) {
                let base = format!("backbone.r{}", i + 1);
                let mid = cout / 4;
                push_conv(&mut specs, &format!("{base}.reduce"), mid, cin, 1, 1);
                if id == BackboneId::Res2Net50Like {
                    // Split 3x3 over two half-width scale groups.
                    push_conv(&mut specs, &format!("{base}.mid_a"), mid / 2, mid / 2, 3, 3);
                    push_conv(&mut specs, &format!("{base}.mid_b"), mid / 2, mid / 2, 3, 3);
                } else {
                    push_conv(&mut specs, &format!("{base}.mid"), mid, mid, 3, 3);
                }
                push_conv(&mut specs, &format!("{base}.expand"), cout, mid, 1, 1);
                push_conv(&mut specs, &format!("{base}.short"), cout, cin, 1, 1);
                cin = cout;
            }
        }
    }
    specs
}

fn conv_relu(tape: &mut Tape, p: &BoundParams, name: &str, x: Var, stride: usize) -> Var {
    let (w, b) = p.conv(name);
    let y = tape.conv2d(x, w, Some(b), stride, 1, 1);
    tape.relu(y)
}

/// Runs the backbone on `images` (B,3,S,S). Spatial sizes follow the conv
/// arithmetic, which matches `S / stride` exactly when S is divisible by 32.
pub fn extract(tape: &mut Tape, p: &BoundParams, images: Var, id: BackboneId) -> FeaturePyramid {
    match id {
        BackboneId::TinyCnn => {
            let mut x = images;
            let mut f = [images; 5];
            for (i, slot) in f.iter_mut().enumerate() {
                x = conv_relu(tape, p, &format!("backbone.s{}", i + 1), x, 2);
                *slot = x;
            }
            FeaturePyramid { f }
        }
        BackboneId::Vgg16Like => {
            let mut x = images;
            let mut f = [images; 5];
            for (i, slot) in f.iter_mut().enumerate() {
                let base = format!("backbone.b{}", i + 1);
                x = conv_relu(tape, p, &format!("{base}.conv1"), x, 1);
                x = conv_relu(tape, p, &format!("{base}.conv2"), x, 1);
                x = conv_relu(tape, p, &format!("{base}.down"), x, 2);
                *slot = x;
            }
            FeaturePyramid { f }
        }
        BackboneId::ResNet50Like | BackboneId::Res2Net50Like => {
            let mut x = conv_relu(tape, p, "backbone.stem", images, 2);
            let mut f = [x; 5];
            for i in 1..5 {
                let base = format!("backbone.r{}", i + 1);
                let (rw, rb) = p.conv(&format!("{base}.reduce"));
                let t = tape.conv2d(x, rw, Some(rb), 1, 0, 0);
                let t = tape.relu(t);
                let mid = if id == BackboneId::Res2Net50Like {
                    let half = tape.value(t).sh4().1 / 2;
                    let x1 = tape.slice_channels(t, 0, half);
                    let x2 = tape.slice_channels(t, half, half);
                    let (aw, ab) = p.conv(&format!("{base}.mid_a"));
                    let y1 = tape.conv2d(x1, aw, Some(ab), 2, 1, 1);
                    let y1 = tape.relu(y1);
                    let (bw, bb) = p.conv(&format!("{base}.mid_b"));
                    let y2 = tape.conv2d(x2, bw, Some(bb), 2, 1, 1);
                    let y2 = tape.add(y2, y1);
                    let y2 = tape.relu(y2);
                    tape.concat_channels(&[y1, y2])
                } else {
                    conv_relu(tape, p, &format!("{base}.mid"), t, 2)
                };
                let (ew, eb) = p.conv(&format!("{base}.expand"));
                let expanded = tape.conv2d(mid, ew, Some(eb), 1, 0, 0);
                let (sw, sb) = p.conv(&format!("{base}.short"));
                let short = tape.conv2d(x, sw, Some(sb), 2, 0, 0);
                let sum = tape.add(expanded, short);
                x = tape.relu(sum);
                f[i] = x;
            }
            FeaturePyramid { f }
        }
    }
}

/// 1x1-projects f3, f4, f5 to `c` channels at their native spatial sizes.
pub fn project(tape: &mut Tape, p: &BoundParams, pyr: &FeaturePyramid) -> (Var, Var, Var) {
    let mut out = [pyr.f[2]; 3];
    for (i, slot) in out.iter_mut().enumerate() {
        let (w, b) = p.conv(&format!("proj.f{}", i + 3));
        *slot = tape.conv2d(pyr.f[2 + i], w, Some(b), 1, 0, 0);
    }
    (out[0], out[1], out[2])
}
