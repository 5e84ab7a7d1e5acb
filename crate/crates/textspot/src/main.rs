use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use textspot::cli::{self, RunConfig};
use textspot::evaluation::Task;
use textspot::fusion::DecayMode;

#[derive(Parser)]
#[command(
    name = "textspot",
    about = "Scene-text detection fusion (soft-NMS ensemble) and IV/OOV evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Merge multi-model, multi-scale detections and write the fused file.
    Fuse {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Score detections against ground truth and write the reports.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Detections file to score (default: the fused output path).
        #[arg(long)]
        detections: Option<PathBuf>,
    },
    /// Build a vocabulary file from the ground-truth directory.
    BuildVocab {
        #[command(flatten)]
        common: CommonArgs,
        /// Ground-truth directory (default: from the config file).
        #[arg(long)]
        gt_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Matching IoU threshold for evaluation.
    #[arg(long)]
    iou_threshold: Option<f64>,
    /// Final score filter applied after soft-NMS.
    #[arg(long)]
    final_threshold: Option<f64>,
    /// Gaussian decay width for soft-NMS.
    #[arg(long)]
    sigma: Option<f64>,
    /// Soft-NMS decay mode.
    #[arg(long, value_enum)]
    decay: Option<DecayArg>,
    /// Case-fold transcriptions before comparison.
    #[arg(long, value_enum)]
    case_fold: Option<OnOff>,
    /// Evaluation task.
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    /// Primary output path of the subcommand.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DecayArg {
    Linear,
    Gaussian,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Detection,
    E2e,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

impl CommonArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = cli::load_run_config(&self.config)?;
        if let Some(v) = self.iou_threshold {
            cfg.eval.iou_threshold = v;
        }
        if let Some(v) = self.final_threshold {
            cfg.fusion.final_threshold = v;
        }
        if let Some(v) = self.sigma {
            cfg.fusion.sigma = v;
        }
        if let Some(v) = self.decay {
            cfg.fusion.decay_mode = match v {
                DecayArg::Linear => DecayMode::Linear,
                DecayArg::Gaussian => DecayMode::Gaussian,
            };
        }
        if let Some(v) = self.case_fold {
            let on = matches!(v, OnOff::On);
            cfg.eval.case_fold = on;
            cfg.fusion.case_fold = on;
        }
        if let Some(v) = self.task {
            cfg.eval.task = match v {
                TaskArg::Detection => Task::Detection,
                TaskArg::E2e => Task::EndToEnd,
            };
        }
        Ok(cfg)
    }
}

fn run() -> Result<()> {
    let args = Cli::parse();
    match args.command {
        Command::Fuse { common } => {
            let mut cfg = common.load()?;
            if let Some(out) = &common.out {
                cfg.output.fused = out.clone();
            }
            let counts = cli::cmd_fuse(&cfg)?;
            eprintln!(
                "fuse: merged={} post_nms={} post_threshold={} post_ignore={}",
                counts.merged, counts.post_nms, counts.post_threshold, counts.post_ignore
            );
        }
        Command::Eval { common, detections } => {
            let mut cfg = common.load()?;
            if let Some(d) = detections {
                cfg.eval.detections = Some(d);
            }
            if let Some(out) = &common.out {
                cfg.output.report_json = out.clone();
                cfg.output.report_text = out.with_extension("txt");
            }
            let report = cli::cmd_eval(&cfg)?;
            println!("{}", report.oov_summary());
        }
        Command::BuildVocab { common, gt_dir } => {
            let mut cfg = common.load()?;
            if let Some(d) = gt_dir {
                cfg.gt_dir = Some(d);
            }
            if let Some(out) = &common.out {
                cfg.output.vocabulary = out.clone();
            }
            let n = cli::cmd_build_vocab(&cfg)?;
            eprintln!("build-vocab: {n} words -> {}", cfg.output.vocabulary.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
