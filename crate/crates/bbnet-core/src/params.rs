//! Named learnable parameters: declaration, deterministic initialization,
//! and binding onto a tape for one forward/backward pass.
//!
//! The spec list built from a `ModelConfig` is the single source of truth
//! for parameter names and shapes; initialization, checkpoints, the
//! optimizer, and the model summary all walk it in the same fixed order.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone;
use crate::config::ModelConfig;
use crate::error::{CoreError, CoreResult};
use crate::tape::{Tape, Var};
use crate::tensor::{math, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform(-b, b) with b = sqrt(6 / fan_in); fan_in from the weight shape.
    HeUniform,
    Zero,
}

#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, init: Init) -> Self {
        ParamSpec { name: name.into(), shape, init }
    }
}

/// Adds a conv weight + zero-init bias pair to `specs`.
pub fn push_conv(specs: &mut Vec<ParamSpec>, name: &str, co: usize, ci: usize, kh: usize, kw: usize) {
    specs.push(ParamSpec::new(format!("{name}.weight"), vec![co, ci, kh, kw], Init::HeUniform));
    specs.push(ParamSpec::new(format!("{name}.bias"), vec![co], Init::Zero));
}

/// Every learnable tensor of the full model, in a fixed declaration order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let c = cfg.channels;
    let ch = backbone::channels(cfg.backbone);
    let mut specs = backbone::param_specs(cfg.backbone);
    push_conv(&mut specs, "proj.f3", c, ch[2], 1, 1);
    push_conv(&mut specs, "proj.f4", c, ch[3], 1, 1);
    push_conv(&mut specs, "proj.f5", c, ch[4], 1, 1);
    push_conv(&mut specs, "cfe.reduce_cat", c, 3 * c, 1, 1);
    push_conv(&mut specs, "cfe.reduce_sh", c, 2 * c, 1, 1);
    push_conv(&mut specs, "cfe.mv.conv", c, 3 * c, 1, 1);
    push_conv(&mut specs, "ofs.query", c, c, 3, 3);
    push_conv(&mut specs, "ofs.key", c, c, 3, 3);
    push_conv(&mut specs, "ofs.conv13", c, c, 1, 3);
    push_conv(&mut specs, "ofs.conv31", c, c, 3, 1);
    specs.push(ParamSpec::new("ofs.gamma".to_string(), vec![1], Init::Zero));
    push_conv(&mut specs, "ofs.head", 1, c, 1, 1);
    push_conv(&mut specs, "lgr.local13", c, c, 1, 3);
    push_conv(&mut specs, "lgr.local31", c, c, 3, 1);
    push_conv(&mut specs, "lgr.global13", c, c, 1, 3);
    push_conv(&mut specs, "lgr.global31", c, c, 3, 1);
    push_conv(&mut specs, "lgr.fuse", c, 2 * c, 3, 3);
    push_conv(&mut specs, "dec4.proj", c, ch[3], 1, 1);
    push_conv(&mut specs, "dec4.fuse", c, c, 1, 1);
    push_conv(&mut specs, "dec3.proj", c, ch[2], 1, 1);
    push_conv(&mut specs, "dec3.fuse", c, c, 1, 1);
    push_conv(&mut specs, "head", 1, c, 1, 1);
    specs
}

/// All learnable tensors keyed by name.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    map: BTreeMap<String, Tensor>,
}

impl ParamStore {
    /// Deterministic initialization: specs are visited in declaration order
    /// and filled from one seeded stream, so a seed fully fixes every weight.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut map = BTreeMap::new();
        for spec in param_specs(cfg) {
            let n: usize = spec.shape.iter().product();
            let data = match spec.init {
                Init::Zero => vec![0.0; n],
                Init::HeUniform => {
                    // fan_in = everything but the leading output axis.
                    let fan_in: usize = spec.shape[1..].iter().product::<usize>().max(1);
                    let b = math::sqrt(6.0 / fan_in as f64);
                    (0..n).map(|_| rng.random_range(-b..b)).collect()
                }
            };
            map.insert(spec.name, Tensor::new(spec.shape, data));
        }
        ParamStore { map }
    }

    /// Rebuilds a store from name/tensor pairs, validating the exact name set
    /// and every shape against what `cfg` declares.
    pub fn from_pairs(cfg: &ModelConfig, pairs: Vec<(String, Tensor)>) -> CoreResult<Self> {
        let specs = param_specs(cfg);
        let mut incoming: BTreeMap<String, Tensor> = pairs.into_iter().collect();
        let mut map = BTreeMap::new();
        for spec in &specs {
            let Some(t) = incoming.remove(&spec.name) else {
                return Err(CoreError::WeightLoad(format!("missing parameter '{}'", spec.name)));
            };
            if t.shape() != spec.shape.as_slice() {
                return Err(CoreError::WeightLoad(format!(
                    "parameter '{}' has shape {:?}, expected {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
            map.insert(spec.name.clone(), t);
        }
        if let Some((name, _)) = incoming.into_iter().next() {
            return Err(CoreError::WeightLoad(format!("unexpected parameter '{name}'")));
        }
        Ok(ParamStore { map })
    }

    pub fn get(&self, name: &str) -> CoreResult<&Tensor> {
        self.map
            .get(name)
            .ok_or_else(|| CoreError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> CoreResult<&mut Tensor> {
        self.map
            .get_mut(name)
            .ok_or_else(|| CoreError::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total learnable scalar count.
    pub fn param_count(&self) -> usize {
        self.map.values().map(Tensor::len).sum()
    }

    pub fn to_pairs(&self) -> Vec<(String, Tensor)> {
        self.map.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }
}

/// Tape handles for every parameter of one forward pass.
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn bind(tape: &mut Tape, store: &ParamStore) -> Self {
        let mut vars = BTreeMap::new();
        for (name, t) in store.iter() {
            vars.insert(name.clone(), tape.leaf(t.clone()));
        }
        BoundParams { vars }
    }

    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter '{name}' not bound"))
    }

    /// Weight/bias var pair for a conv named like the spec list.
    pub fn conv(&self, name: &str) -> (Var, Var) {
        (self.var(&format!("{name}.weight")), self.var(&format!("{name}.bias")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Gradient tensor per parameter name. Parameters a variant never
    /// touches (ablation bypasses) get zero gradients of matching shape.
    pub fn collect_grads(
        &self,
        store: &ParamStore,
        grads: &crate::tape::Grads,
    ) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (name, t) in store.iter() {
            let g = match grads.get(self.var(name)) {
                Some(g) => g.clone(),
                None => Tensor::zeros(t.shape()),
            };
            out.insert(name.clone(), g);
        }
        out
    }
}
