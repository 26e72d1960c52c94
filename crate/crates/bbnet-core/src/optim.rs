//! Stochastic gradient descent with momentum, weight decay, and global-norm
//! gradient clipping.
//!
//! Update rule per parameter, applied uniformly to every tensor in the
//! store (including biases and gamma):
//!   g <- grad * min(1, GRAD_CLIP_NORM / ||grad||_global)
//!   v <- momentum * v + g + weight_decay * theta
//!   theta <- theta - lr * v
//!
//! Clipping is load-bearing here, not a nicety: the scalar gate gamma
//! multiplies a whole feature map, so its gradient sums contributions from
//! every pixel of every batch element and can exceed per-weight gradients
//! by two to three orders of magnitude at init. Unclipped, one step throws
//! the gate far enough to saturate the branch sigmoid past the point where
//! f64 can represent a restoring gradient.

use alloc::collections::BTreeMap;
use alloc::string::String;

use crate::config::TrainConfig;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Ceiling on the L2 norm of the full gradient (all parameters together).
pub const GRAD_CLIP_NORM: f64 = 5.0;

#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: BTreeMap<String, Tensor>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            lr,
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        }
    }

    pub fn from_train_config(tc: &TrainConfig) -> Self {
        Sgd::new(tc.learning_rate, tc.momentum, tc.weight_decay)
    }

    /// Applies one update. Gradients are looked up by parameter name;
    /// parameters without an entry are treated as zero-gradient (they still
    /// decay and keep their velocity). The decay term is not part of the
    /// clipped quantity.
    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Tensor>) {
        let mut sq = 0.0;
        for g in grads.values() {
            for &v in g.data() {
                sq += v * v;
            }
        }
        let norm = libm::sqrt(sq);
        let scale = if norm > GRAD_CLIP_NORM {
            GRAD_CLIP_NORM / norm
        } else {
            1.0
        };

        let names: alloc::vec::Vec<String> = store.names().cloned().collect();
        for name in names {
            let theta = store.get_mut(&name).expect("name from store");
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(theta.shape()));
            let g = grads.get(&name);
            let vd = v.data_mut();
            let td = theta.data_mut();
            for i in 0..td.len() {
                let gi = scale * g.map_or(0.0, |g| g.data()[i]);
                vd[i] = self.momentum * vd[i] + gi + self.weight_decay * td[i];
                td[i] -= self.lr * vd[i];
            }
        }
    }
}
