//! `ablate` subcommand: train the full model and one variant from identical
//! seeds, evaluate both on the train split, and emit a side-by-side report.

use std::path::Path;

use bbnet_core::config::{ModelConfig, TrainConfig};
use bbnet_core::network::Ablation;
use serde::Serialize;

use crate::dataset::scan_dataset;
use crate::error::{AppError, AppResult};
use crate::fsutil::write_json_atomic;
use crate::train::{evaluate_model, train_model, HarnessConfig, MeanMetrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Switch {
    NoCfe,
    NoOfs,
    NoLgr,
    NoGamma,
    Iters(usize),
    TopN(usize),
    BceOnly,
    ConsensusOff,
}

impl Switch {
    pub fn parse(s: &str) -> AppResult<Switch> {
        let bad = |detail: &str| AppError::Config(format!("switch `{s}`: {detail}"));
        if let Some(v) = s.strip_prefix("iters=") {
            let n: usize = v.parse().map_err(|_| bad("iters must be an integer"))?;
            if n > 3 {
                return Err(bad("iters must be in [0, 3]"));
            }
            return Ok(Switch::Iters(n));
        }
        if let Some(v) = s.strip_prefix("top_n=") {
            let n: usize = v.parse().map_err(|_| bad("top_n must be an integer"))?;
            if !(1..=4).contains(&n) {
                return Err(bad("top_n must be in [1, 4]"));
            }
            return Ok(Switch::TopN(n));
        }
        match s {
            "no_cfe" => Ok(Switch::NoCfe),
            "no_ofs" => Ok(Switch::NoOfs),
            "no_lgr" => Ok(Switch::NoLgr),
            "no_gamma" => Ok(Switch::NoGamma),
            "bce_only" => Ok(Switch::BceOnly),
            "consensus_off" => Ok(Switch::ConsensusOff),
            _ => Err(bad(
                "expected one of no_cfe, no_ofs, no_lgr, no_gamma, iters=N, top_n=N, bce_only, consensus_off",
            )),
        }
    }

    /// File-name-safe label.
    pub fn label(&self) -> String {
        match self {
            Switch::NoCfe => "no_cfe".to_string(),
            Switch::NoOfs => "no_ofs".to_string(),
            Switch::NoLgr => "no_lgr".to_string(),
            Switch::NoGamma => "no_gamma".to_string(),
            Switch::Iters(n) => format!("iters_{n}"),
            Switch::TopN(n) => format!("top_n_{n}"),
            Switch::BceOnly => "bce_only".to_string(),
            Switch::ConsensusOff => "consensus_off".to_string(),
        }
    }

    /// Maps the switch onto the three places a variant can differ.
    pub fn apply(&self, model: &mut ModelConfig, train: &mut TrainConfig, ab: &mut Ablation) {
        match *self {
            Switch::NoCfe => ab.no_cfe = true,
            Switch::NoOfs => ab.no_ofs = true,
            Switch::NoLgr => ab.no_lgr = true,
            Switch::NoGamma => ab.no_gamma = true,
            Switch::Iters(n) => model.multiview_iters = n,
            Switch::TopN(n) => model.lgr_top_n = n,
            Switch::BceOnly => train.bce_only = true,
            Switch::ConsensusOff => model.group_consensus = false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub switch: String,
    pub seed: u64,
    pub steps: usize,
    pub full: MeanMetrics,
    pub variant: MeanMetrics,
    pub delta_s_alpha: f64,
}

/// Both runs share the seed, so they see identical batch sequences and start
/// from identical weights wherever shapes agree.
pub fn run_ablation(cfg: &HarnessConfig, switch: Switch) -> AppResult<AblationReport> {
    let records = scan_dataset(&cfg.data_root.join("train"))?.records;
    if records.is_empty() {
        return Err(AppError::Dataset("no training groups available".to_string()));
    }

    let full_dir = cfg.out_dir.join("full");
    let full_run = train_model(
        &cfg.model,
        &cfg.train,
        &records,
        Ablation::default(),
        &full_dir,
    )?;
    let full_report = evaluate_model(&full_run.store, &cfg.model, &records, Ablation::default())?;

    let mut v_model = cfg.model.clone();
    let mut v_train = cfg.train.clone();
    let mut v_ab = Ablation::default();
    switch.apply(&mut v_model, &mut v_train, &mut v_ab);
    let v_dir = cfg.out_dir.join(switch.label());
    let v_run = train_model(&v_model, &v_train, &records, v_ab, &v_dir)?;
    let v_report = evaluate_model(&v_run.store, &v_model, &records, v_ab)?;

    let report = AblationReport {
        switch: switch.label(),
        seed: cfg.train.seed,
        steps: cfg.train.max_steps,
        full: full_report.mean.into(),
        variant: v_report.mean.into(),
        delta_s_alpha: full_report.mean.s_alpha - v_report.mean.s_alpha,
    };
    write_json_atomic(
        &cfg.out_dir.join(format!("ablate_{}.json", switch.label())),
        &report,
    )?;
    Ok(report)
}

pub fn cmd_ablate(config_path: &Path, switch_str: &str) -> AppResult<AblationReport> {
    let cfg = HarnessConfig::from_file(config_path)?;
    let switch = Switch::parse(switch_str)?;
    let report = run_ablation(&cfg, switch)?;
    println!("config      s_alpha   mae      e_max    f_max");
    println!(
        "full        {:.4}   {:.4}   {:.4}   {:.4}",
        report.full.s_alpha, report.full.mae, report.full.e_max, report.full.f_max
    );
    println!(
        "{:<11} {:.4}   {:.4}   {:.4}   {:.4}",
        report.switch, report.variant.s_alpha, report.variant.mae, report.variant.e_max,
        report.variant.f_max
    );
    println!("delta s_alpha: {:+.4}", report.delta_s_alpha);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_accepts_every_documented_switch() {
        assert_eq!(Switch::parse("no_cfe").unwrap(), Switch::NoCfe);
        assert_eq!(Switch::parse("no_ofs").unwrap(), Switch::NoOfs);
        assert_eq!(Switch::parse("no_lgr").unwrap(), Switch::NoLgr);
        assert_eq!(Switch::parse("no_gamma").unwrap(), Switch::NoGamma);
        assert_eq!(Switch::parse("iters=0").unwrap(), Switch::Iters(0));
        assert_eq!(Switch::parse("iters=3").unwrap(), Switch::Iters(3));
        assert_eq!(Switch::parse("top_n=1").unwrap(), Switch::TopN(1));
        assert_eq!(Switch::parse("top_n=4").unwrap(), Switch::TopN(4));
        assert_eq!(Switch::parse("bce_only").unwrap(), Switch::BceOnly);
        assert_eq!(Switch::parse("consensus_off").unwrap(), Switch::ConsensusOff);
    }

    #[test]
    fn parse_rejects_out_of_range_and_unknown() {
        assert!(Switch::parse("iters=4").is_err());
        assert!(Switch::parse("top_n=0").is_err());
        assert!(Switch::parse("top_n=5").is_err());
        assert!(Switch::parse("warp_drive").is_err());
        assert_eq!(Switch::parse("nope").unwrap_err().kind(), "config");
    }

    #[test]
    fn apply_touches_the_right_knob() {
        let mut m = ModelConfig::tiny();
        let mut t = TrainConfig::default();
        let mut a = Ablation::default();
        Switch::Iters(0).apply(&mut m, &mut t, &mut a);
        assert_eq!(m.multiview_iters, 0);
        Switch::TopN(4).apply(&mut m, &mut t, &mut a);
        assert_eq!(m.lgr_top_n, 4);
        Switch::ConsensusOff.apply(&mut m, &mut t, &mut a);
        assert!(!m.group_consensus);
        Switch::BceOnly.apply(&mut m, &mut t, &mut a);
        assert!(t.bce_only);
        Switch::NoOfs.apply(&mut m, &mut t, &mut a);
        assert!(a.no_ofs && !a.no_cfe && !a.no_lgr && !a.no_gamma);
    }

    #[test]
    fn labels_are_file_name_safe() {
        for s in [
            Switch::NoCfe,
            Switch::Iters(2),
            Switch::TopN(3),
            Switch::ConsensusOff,
        ] {
            let l = s.label();
            assert!(l.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'));
        }
    }
}
