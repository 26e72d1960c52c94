use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bbnet_cli::error::AppResult;
use bbnet_cli::{ablate, checkpoint, evalcmd, predict, stats, synth, train};

#[derive(Parser)]
#[command(
    name = "bbnet",
    version,
    about = "Bilateral-branch network for collaborative camouflaged object detection"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model from a key=value run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a checkpoint over a directory of images.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted maps against ground-truth masks.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Also report the adaptive-threshold F-measure.
        #[arg(long = "adaptive-f")]
        adaptive_f: bool,
    },
    /// Generate a deterministic synthetic camouflage dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        groups: usize,
        #[arg(long = "per-group")]
        per_group: usize,
        #[arg(long, default_value_t = 96)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Measure dataset statistics into <out>.json and <out>.csv.
    Stats {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the full model and one ablated variant, then compare.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        switch: String,
    },
    /// Print a checkpoint's configuration and model size.
    Summary {
        #[arg(long)]
        ckpt: PathBuf,
    },
}

fn run(cli: Cli) -> AppResult<()> {
    match cli.cmd {
        Cmd::Train { config } => {
            train::cmd_train(&config)?;
        }
        Cmd::Predict { ckpt, input, out } => {
            let written = predict::cmd_predict(&ckpt, &input, &out)?;
            println!("wrote {} prediction maps to {}", written.len(), out.display());
        }
        Cmd::Eval {
            pred,
            gt,
            report,
            adaptive_f,
        } => {
            evalcmd::cmd_eval(&pred, &gt, &report, adaptive_f)?;
        }
        Cmd::Synth {
            out,
            groups,
            per_group,
            size,
            seed,
        } => {
            let summary = synth::synth_generate(&out, groups, per_group, size, seed)?;
            println!(
                "wrote {} images in {} groups under {}",
                summary.image_files,
                summary.groups,
                summary.root.display()
            );
        }
        Cmd::Stats { root, out } => {
            stats::cmd_stats(&root, &out)?;
        }
        Cmd::Ablate { config, switch } => {
            ablate::cmd_ablate(&config, &switch)?;
        }
        Cmd::Summary { ckpt } => {
            checkpoint::cmd_summary(&ckpt)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // One machine-parseable line: error[kind]: message.
            let msg = err.to_string().replace('\n', "; ");
            eprintln!("error[{}]: {msg}", err.kind());
            ExitCode::FAILURE
        }
    }
}
