//! Model and training configuration with a flat `key=value` text format.
//!
//! Unknown keys are a hard error: a typo in a config file must fail fast
//! rather than silently train with a default.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{CoreError, CoreResult};

/// Which feature extractor to build. All of them honour the stride contract
/// `{2, 4, 8, 16, 32}`; they differ in channel widths and block structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackboneId {
    TinyCnn,
    Res2Net50Like,
    ResNet50Like,
    Vgg16Like,
}

impl BackboneId {
    pub fn as_str(self) -> &'static str {
        match self {
            BackboneId::TinyCnn => "tiny_cnn",
            BackboneId::Res2Net50Like => "res2net50_like",
            BackboneId::ResNet50Like => "resnet50_like",
            BackboneId::Vgg16Like => "vgg16_like",
        }
    }

    pub fn parse(s: &str) -> CoreResult<Self> {
        match s {
            "tiny_cnn" => Ok(BackboneId::TinyCnn),
            "res2net50_like" => Ok(BackboneId::Res2Net50Like),
            "resnet50_like" => Ok(BackboneId::ResNet50Like),
            "vgg16_like" => Ok(BackboneId::Vgg16Like),
            other => Err(CoreError::Config(format!("unknown backbone '{other}'"))),
        }
    }
}

/// Side length of the 3x3 sub-block grid used by local refinement.
pub const LGR_GRID: usize = 3;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Input resolution `S`; images are resized to `S x S`.
    pub input_size: usize,
    /// Working channel width `C` of every internal feature map.
    pub channels: usize,
    /// Multi-view attention iterations `n`.
    pub multiview_iters: usize,
    /// How many of the 9 sub-blocks local refinement averages.
    pub lgr_top_n: usize,
    /// Batch-mean gating across the group after multi-view attention.
    pub group_consensus: bool,
    pub backbone: BackboneId,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 288,
            channels: 64,
            multiview_iters: 2,
            lgr_top_n: 1,
            group_consensus: true,
            backbone: BackboneId::Res2Net50Like,
        }
    }
}

impl ModelConfig {
    /// The CPU test profile: small working width and a small backbone.
    pub fn tiny() -> Self {
        ModelConfig {
            input_size: 96,
            channels: 16,
            backbone: BackboneId::TinyCnn,
            ..ModelConfig::default()
        }
    }

    /// Spatial size of the stride-8 working resolution where CFE/OFS/LGR
    /// operate.
    pub fn working_size(&self) -> usize {
        self.input_size / 8
    }

    pub fn validate(&self) -> CoreResult<()> {
        if self.input_size == 0 || self.input_size % 24 != 0 {
            return Err(CoreError::Config(format!(
                "input_size {} must be a positive multiple of 24",
                self.input_size
            )));
        }
        if self.channels == 0 {
            return Err(CoreError::Config("channels must be positive".to_string()));
        }
        if self.multiview_iters > 4 {
            return Err(CoreError::Config(format!(
                "multiview_iters {} out of range [0, 4]",
                self.multiview_iters
            )));
        }
        if self.lgr_top_n < 1 || self.lgr_top_n > LGR_GRID * LGR_GRID {
            return Err(CoreError::Config(format!(
                "lgr_top_n {} out of range [1, {}]",
                self.lgr_top_n,
                LGR_GRID * LGR_GRID
            )));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        alloc::vec![
            ("input_size".to_string(), self.input_size.to_string()),
            ("channels".to_string(), self.channels.to_string()),
            (
                "multiview_iters".to_string(),
                self.multiview_iters.to_string()
            ),
            ("lgr_top_n".to_string(), self.lgr_top_n.to_string()),
            (
                "group_consensus".to_string(),
                self.group_consensus.to_string()
            ),
            ("backbone".to_string(), self.backbone.as_str().to_string()),
        ]
    }

    /// Consumes the keys this struct understands from `kv`, leaving the rest.
    pub fn apply_kv(&mut self, kv: &mut BTreeMap<String, String>) -> CoreResult<()> {
        if let Some(v) = kv.remove("input_size") {
            self.input_size = parse_usize("input_size", &v)?;
        }
        if let Some(v) = kv.remove("channels") {
            self.channels = parse_usize("channels", &v)?;
        }
        if let Some(v) = kv.remove("multiview_iters") {
            self.multiview_iters = parse_usize("multiview_iters", &v)?;
        }
        if let Some(v) = kv.remove("lgr_top_n") {
            self.lgr_top_n = parse_usize("lgr_top_n", &v)?;
        }
        if let Some(v) = kv.remove("group_consensus") {
            self.group_consensus = parse_bool("group_consensus", &v)?;
        }
        if let Some(v) = kv.remove("backbone") {
            self.backbone = BackboneId::parse(&v)?;
        }
        self.validate()
    }
}

/// Optimisation hyperparameters. The seed fully determines initialisation
/// and data order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Images drawn per group sample (the batch is one group).
    pub batch_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    /// Drop the IoU terms and train on weighted BCE alone.
    pub bce_only: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 10,
            max_steps: 100,
            seed: 0,
            bce_only: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> CoreResult<()> {
        if !(self.learning_rate > 0.0) {
            return Err(CoreError::Config("learning_rate must be positive".to_string()));
        }
        if !(self.momentum >= 0.0 && self.momentum < 1.0) {
            return Err(CoreError::Config("momentum must be in [0, 1)".to_string()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(CoreError::Config("weight_decay must be non-negative".to_string()));
        }
        if self.batch_size == 0 {
            return Err(CoreError::Config("batch_size must be positive".to_string()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        alloc::vec![
            ("learning_rate".to_string(), format_f64(self.learning_rate)),
            ("momentum".to_string(), format_f64(self.momentum)),
            ("weight_decay".to_string(), format_f64(self.weight_decay)),
            ("batch_size".to_string(), self.batch_size.to_string()),
            ("max_steps".to_string(), self.max_steps.to_string()),
            ("seed".to_string(), self.seed.to_string()),
            ("bce_only".to_string(), self.bce_only.to_string()),
        ]
    }

    pub fn apply_kv(&mut self, kv: &mut BTreeMap<String, String>) -> CoreResult<()> {
        if let Some(v) = kv.remove("learning_rate") {
            self.learning_rate = parse_f64("learning_rate", &v)?;
        }
        if let Some(v) = kv.remove("momentum") {
            self.momentum = parse_f64("momentum", &v)?;
        }
        if let Some(v) = kv.remove("weight_decay") {
            self.weight_decay = parse_f64("weight_decay", &v)?;
        }
        if let Some(v) = kv.remove("batch_size") {
            self.batch_size = parse_usize("batch_size", &v)?;
        }
        if let Some(v) = kv.remove("max_steps") {
            self.max_steps = parse_usize("max_steps", &v)?;
        }
        if let Some(v) = kv.remove("seed") {
            self.seed = parse_u64("seed", &v)?;
        }
        if let Some(v) = kv.remove("bce_only") {
            self.bce_only = parse_bool("bce_only", &v)?;
        }
        self.validate()
    }
}

fn format_f64(v: f64) -> String {
    // `{}` prints the shortest representation that round-trips.
    format!("{v}")
}

fn parse_usize(key: &str, v: &str) -> CoreResult<usize> {
    v.trim()
        .parse()
        .map_err(|_| CoreError::Config(format!("{key}: '{v}' is not a non-negative integer")))
}

fn parse_u64(key: &str, v: &str) -> CoreResult<u64> {
    v.trim()
        .parse()
        .map_err(|_| CoreError::Config(format!("{key}: '{v}' is not a non-negative integer")))
}

fn parse_f64(key: &str, v: &str) -> CoreResult<f64> {
    v.trim()
        .parse()
        .map_err(|_| CoreError::Config(format!("{key}: '{v}' is not a number")))
}

fn parse_bool(key: &str, v: &str) -> CoreResult<bool> {
    match v.trim() {
        "true" | "1" | "on" => Ok(true),
        "false" | "0" | "off" => Ok(false),
        _ => Err(CoreError::Config(format!("{key}: '{v}' is not a boolean"))),
    }
}

/// Parses flat `key=value` text. `#` starts a comment; blank lines are
/// skipped; duplicate keys are an error.
pub fn parse_kv_text(text: &str) -> CoreResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CoreError::Config(format!(
                "line {}: expected key=value, got '{line}'",
                lineno + 1
            )));
        };
        let key = k.trim().to_string();
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(CoreError::Config(format!("duplicate key '{key}'")));
        }
    }
    Ok(out)
}

/// Renders `kv` pairs back to the text format, one per line.
pub fn render_kv_text(pairs: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        s.push_str(k);
        s.push('=');
        s.push_str(v);
        s.push('\n');
    }
    s
}
