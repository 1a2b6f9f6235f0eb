//! Command-line entry point tying corpus generation, training, evaluation
//! and analysis into reproducible runs. Every run writes `run_meta.json`
//! (command, resolved config, seed, version) plus command-specific outputs
//! under `--out`; re-running with the same inputs reproduces the outputs
//! byte for byte.
//!
//! Exit codes: 0 success, 1 validation error (arguments, config, schema),
//! 2 runtime failure (divergence, I/O).

mod commands;
mod configs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "monoframe",
    version,
    about = "Single-frame video-text training with multi-frame ensemble inference",
    after_help = "Run `monoframe <command> --help` for the command's default config JSON."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// JSON config file; fields override the built-in defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root random seed for this run.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (default: runs/<command>).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Model checkpoint to start from / evaluate.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Frames sampled per video at inference.
    #[arg(long = "t-test")]
    pub t_test: Option<usize>,
    /// Ensemble strategy: concat | lse | max | mean.
    #[arg(long)]
    pub strategy: Option<String>,
}

macro_rules! subcommands {
    ($(($variant:ident, $name:literal, $about:literal, $default:expr)),+ $(,)?) => {
        #[derive(Subcommand)]
        enum Cmd {
            $(
                #[command(name = $name, about = $about, after_help = default_help($default))]
                $variant(CommonArgs),
            )+
        }

        impl Cmd {
            fn name(&self) -> &'static str {
                match self {
                    $(Cmd::$variant(_) => $name,)+
                }
            }

            fn args(&self) -> &CommonArgs {
                match self {
                    $(Cmd::$variant(a) => a,)+
                }
            }
        }
    };
}

subcommands![
    (GenStatic, "gen-static", "Generate the static (shape+color) synthetic corpus", configs::GenStaticConfig::default_json()),
    (GenTemporal, "gen-temporal", "Generate the temporal-order synthetic corpus", configs::GenTemporalConfig::default_json()),
    (BuildSsv2, "build-ssv2", "Build template/label retrieval tasks from annotations", configs::BuildSsv2Config::default_json()),
    (Pretrain, "pretrain", "Train from scratch with VTC + MLM + VTM", configs::TrainConfig::default_pretrain_json()),
    (Finetune, "finetune", "Train for retrieval with VTC + VTM (or QA via config)", configs::TrainConfig::default_finetune_json()),
    (TrainTemporal, "train-temporal", "Second-stage multi-frame training from a checkpoint", configs::TrainConfig::default_temporal_json()),
    (EvalRetrieval, "eval-retrieval", "Text-to-video retrieval metrics for a checkpoint", configs::EvalRetrievalConfig::default_json()),
    (EvalQa, "eval-qa", "Exact-match QA accuracy for a checkpoint", configs::EvalQaConfig::default_json()),
    (CompareEnsembles, "compare-ensembles", "Sweep ensemble strategies over frame counts", configs::CompareEnsemblesConfig::default_json()),
    (Gradcheck, "gradcheck", "Finite-difference check of every loss gradient", configs::GradcheckConfig::default_json()),
];

fn default_help(json: String) -> String {
    format!("Default config (override fields via --config):\n{json}")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own exit code scheme is replaced by ours: any usage
            // problem is a validation error unless help/version was asked
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match commands::run(cli.cmd.name(), cli.cmd.args()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
