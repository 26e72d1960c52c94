//! Training harness: run config, the momentum-SGD loop with loss logging
//! and checkpoints, and full-set evaluation of a trained model.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use bbnet_core::config::{parse_kv_text, render_kv_text, ModelConfig, TrainConfig};
use bbnet_core::losses::{total_loss, LossTerms};
use bbnet_core::metrics::{evaluate_set, EvalPair, ImageMetrics, MetricReport};
use bbnet_core::network::{forward, Ablation};
use bbnet_core::optim::Sgd;
use bbnet_core::params::ParamStore;
use bbnet_core::tape::Tape;
use bbnet_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint::{self, Checkpoint};
use crate::dataset::{load_group, sample_group, scan_dataset, GroupRecord};
use crate::error::{AppError, AppResult};
use crate::fsutil::{write_json_atomic, write_text_atomic};

/// A checkpoint is written every this many steps, and always at the end.
pub const CHECKPOINT_EVERY: usize = 50;

/// One flat key=value file drives a whole run. Model and train keys are
/// disjoint, so both configs consume from the same map; whatever is left
/// after `data_root` and `out_dir` is an unknown key.
#[derive(Debug, Clone)]
pub struct HarnessConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data_root: PathBuf,
    pub out_dir: PathBuf,
}

impl HarnessConfig {
    pub fn from_text(text: &str) -> AppResult<Self> {
        let mut kv = parse_kv_text(text)?;
        let data_root = kv
            .remove("data_root")
            .ok_or_else(|| AppError::Config("missing key `data_root`".to_string()))?;
        let out_dir = kv
            .remove("out_dir")
            .ok_or_else(|| AppError::Config("missing key `out_dir`".to_string()))?;
        let mut model = ModelConfig::default();
        model.apply_kv(&mut kv)?;
        let mut train = TrainConfig::default();
        train.apply_kv(&mut kv)?;
        if let Some(key) = kv.keys().next() {
            return Err(AppError::Config(format!("unknown key `{key}`")));
        }
        model.validate()?;
        train.validate()?;
        Ok(HarnessConfig {
            model,
            train,
            data_root: PathBuf::from(data_root),
            out_dir: PathBuf::from(out_dir),
        })
    }

    pub fn from_file(path: &Path) -> AppResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Self::from_text(&text)
    }

    /// Canonical echo of the effective configuration.
    pub fn render(&self) -> String {
        let mut pairs = self.model.to_kv();
        pairs.extend(self.train.to_kv());
        pairs.push(("data_root".to_string(), self.data_root.display().to_string()));
        pairs.push(("out_dir".to_string(), self.out_dir.display().to_string()));
        render_kv_text(&pairs)
    }
}

/// Serializable mirror of the per-image metric means.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MeanMetrics {
    pub mae: f64,
    pub s_alpha: f64,
    pub e_mean: f64,
    pub e_max: f64,
    pub f_mean: f64,
    pub f_max: f64,
}

impl From<ImageMetrics> for MeanMetrics {
    fn from(m: ImageMetrics) -> Self {
        MeanMetrics {
            mae: m.mae,
            s_alpha: m.s_alpha,
            e_mean: m.e_mean,
            e_max: m.e_max,
            f_mean: m.f_mean,
            f_max: m.f_max,
        }
    }
}

/// Written next to the artifacts; paths are file names relative to the run
/// directory so the manifest is location-independent.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config_text: String,
    pub seed: u64,
    pub steps: usize,
    pub code_hash: String,
    pub loss_log: String,
    pub checkpoints: Vec<String>,
    pub final_checkpoint: String,
    pub train_metrics: Option<MeanMetrics>,
}

#[derive(Debug)]
pub struct TrainedRun {
    pub store: ParamStore,
    pub losses: Vec<LossTerms>,
    pub loss_log: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub final_checkpoint: PathBuf,
}

fn loss_csv_header() -> &'static str {
    "step,l_wbce_final,l_wiou_final,l_wbce_ofs,l_wiou_ofs,l_total\n"
}

/// Runs the optimization loop and writes the loss log and checkpoints into
/// `out_dir`. With `max_steps = 0` the final checkpoint equals the init.
pub fn train_model(
    model: &ModelConfig,
    train: &TrainConfig,
    records: &[GroupRecord],
    ablation: Ablation,
    out_dir: &Path,
) -> AppResult<TrainedRun> {
    model.validate()?;
    train.validate()?;
    if records.is_empty() {
        return Err(AppError::Dataset("no training groups available".to_string()));
    }
    fs::create_dir_all(out_dir).map_err(|e| AppError::io(out_dir, e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let mut store = ParamStore::init(model, train.seed);
    let mut sgd = Sgd::from_train_config(train);

    let loss_log = out_dir.join("loss_log.csv");
    let mut log_file = fs::File::create(&loss_log).map_err(|e| AppError::io(&loss_log, e))?;
    log_file
        .write_all(loss_csv_header().as_bytes())
        .map_err(|e| AppError::io(&loss_log, e))?;

    let mut losses = Vec::with_capacity(train.max_steps as usize);
    let mut checkpoints = Vec::new();

    for step in 1..=train.max_steps {
        let group = sample_group(records, train.batch_size, model.input_size, &mut rng)?;
        let mut tape = Tape::new();
        let (out, bound) = forward(&mut tape, &store, model, ablation, group.images, false)?;
        let graph = total_loss(&mut tape, &out, &group.masks, train.bce_only);
        let terms = graph.terms(&tape);
        let grads = tape.backward(graph.l_total);
        let gmap = bound.collect_grads(&store, &grads);
        sgd.step(&mut store, &gmap);

        let row = format!(
            "{},{},{},{},{},{}\n",
            step,
            terms.l_wbce_final,
            terms.l_wiou_final,
            terms.l_wbce_ofs,
            terms.l_wiou_ofs,
            terms.l_total
        );
        log_file
            .write_all(row.as_bytes())
            .map_err(|e| AppError::io(&loss_log, e))?;
        if step % 25 == 0 || step == train.max_steps {
            log::info!("step {step}: l_total {:.6}", terms.l_total);
        }
        losses.push(terms);

        if step % CHECKPOINT_EVERY == 0 {
            let path = out_dir.join(format!("ckpt_{step:05}.bbck"));
            checkpoint::save(
                &Checkpoint {
                    step: step as u64,
                    seed: train.seed,
                    config: model.clone(),
                    store: store.clone(),
                },
                &path,
            )?;
            checkpoints.push(path);
        }
    }
    log_file.flush().map_err(|e| AppError::io(&loss_log, e))?;

    let final_checkpoint = out_dir.join("ckpt_final.bbck");
    checkpoint::save(
        &Checkpoint {
            step: train.max_steps as u64,
            seed: train.seed,
            config: model.clone(),
            store: store.clone(),
        },
        &final_checkpoint,
    )?;

    Ok(TrainedRun {
        store,
        losses,
        loss_log,
        checkpoints,
        final_checkpoint,
    })
}

/// Evaluates the model over every image of every record. Each group runs as
/// one batch so group consensus sees the same context as training.
pub fn evaluate_model(
    store: &ParamStore,
    model: &ModelConfig,
    records: &[GroupRecord],
    ablation: Ablation,
) -> AppResult<MetricReport> {
    let s = model.input_size;
    let mut items = Vec::new();
    for record in records {
        let indices: Vec<usize> = (0..record.len()).collect();
        let group = load_group(record, &indices, s)?;
        let mut tape = Tape::new();
        let (out, _) = forward(&mut tape, store, model, ablation, group.images, false)?;
        let p = tape.value(out.p);
        for (slot, &i) in indices.iter().enumerate() {
            let plane = s * s;
            let start = slot * plane;
            let pred = Tensor::new(
                vec![s, s],
                p.data()[start..start + plane].to_vec(),
            );
            let mask = Tensor::new(
                vec![s, s],
                group.masks.data()[start..start + plane].to_vec(),
            );
            let stem = record.image_paths[i]
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("img_{i}"));
            let pair = EvalPair::new(&pred, &mask)?;
            items.push((format!("{}/{stem}", record.id()), pair));
        }
    }
    Ok(evaluate_set(items)?)
}

/// `train` subcommand: train on `<data_root>/train`, then evaluate the final
/// model on the same split and record the means in the manifest.
pub fn cmd_train(config_path: &Path) -> AppResult<RunManifest> {
    let cfg = HarnessConfig::from_file(config_path)?;
    let outcome = scan_dataset(&cfg.data_root.join("train"))?;
    let run = train_model(
        &cfg.model,
        &cfg.train,
        &outcome.records,
        Ablation::default(),
        &cfg.out_dir,
    )?;
    let report = evaluate_model(&run.store, &cfg.model, &outcome.records, Ablation::default())?;

    let rel = |p: &Path| -> String {
        p.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| p.display().to_string())
    };
    let manifest = RunManifest {
        config_text: cfg.render(),
        seed: cfg.train.seed,
        steps: cfg.train.max_steps,
        code_hash: env!("BBNET_CODE_HASH").to_string(),
        loss_log: rel(&run.loss_log),
        checkpoints: run.checkpoints.iter().map(|p| rel(p)).collect(),
        final_checkpoint: rel(&run.final_checkpoint),
        train_metrics: Some(report.mean.into()),
    };
    write_json_atomic(&cfg.out_dir.join("manifest.json"), &manifest)?;

    let echo_path = cfg.out_dir.join("config_echo.txt");
    write_text_atomic(&echo_path, &manifest.config_text)?;

    println!(
        "trained {} steps; s_alpha {:.4} mae {:.4}; artifacts in {}",
        cfg.train.max_steps,
        report.mean.s_alpha,
        report.mean.mae,
        cfg.out_dir.display()
    );
    Ok(manifest)
}
