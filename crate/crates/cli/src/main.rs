use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ecpec_core::corpus::{load_dataset, DatasetFormat};
use ecpec_core::error::{Error, Result};
use ecpec_core::evaluation::{cee_pos_f1, ensemble_records, gold_records, read_predictions, span_proportional_f1, write_predictions};
use ecpec_core::pipeline::{self, PipelineConfig, RunArtifacts};

#[derive(Parser)]
#[command(name = "ecpec", version, about = "Emotion-cause pair and span extraction in conversations")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config JSON; falls back to $ECPEC_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set cee.dim=32`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic corpus split into train/dev/test.
    GenData {
        /// Target directory; defaults to `<output_dir>/data`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the bag-of-words ERC baseline on the training split.
    TrainErcBaseline,
    /// Train the pair extraction model.
    TrainCee,
    /// Train the span extraction model.
    TrainCse,
    /// Fit modality feature selection on the training split.
    SelectFeatures,
    /// Run the configured stages over the test split.
    Predict,
    /// Score a prediction file against a gold dataset.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Gold dataset format: `native` or `ecf`.
        #[arg(long, default_value = "native")]
        format: String,
        /// Match pairs without requiring the emotion label to agree.
        #[arg(long)]
        ignore_label: bool,
    },
    /// Majority vote over several prediction files.
    Ensemble {
        #[arg(long, num_args = 1.., required = true)]
        pred: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Votes needed to keep a pair; defaults to a strict majority.
        #[arg(long)]
        quorum: Option<usize>,
    },
    /// Print the metrics of a finished run.
    Report {
        /// Report JSON; defaults to `<output_dir>/report.json`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    PipelineConfig::load(common.config.as_deref(), &common.overrides)
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serialisable"));
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { out } => {
            let cfg = load_config(&cli.common)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.join("data"));
            for p in pipeline::generate_data(&cfg, &dir)? {
                println!("{}", p.display());
            }
        }
        Command::TrainErcBaseline => {
            let cfg = load_config(&cli.common)?;
            let path = pipeline::train_erc_stage(&cfg)?;
            println!("{}", path.display());
        }
        Command::TrainCee => {
            let cfg = load_config(&cli.common)?;
            pipeline::train_cee_stage(&cfg, |log| {
                println!("{}", serde_json::to_string(log).expect("serialisable"));
            })?;
        }
        Command::TrainCse => {
            let cfg = load_config(&cli.common)?;
            pipeline::train_cse_stage(&cfg, |log| {
                println!("{}", serde_json::to_string(log).expect("serialisable"));
            })?;
        }
        Command::SelectFeatures => {
            let cfg = load_config(&cli.common)?;
            let sel = pipeline::select_features_stage(&cfg)?;
            println!("{}", serde_json::to_string(&sel.indices).expect("serialisable"));
        }
        Command::Predict => {
            let cfg = load_config(&cli.common)?;
            let (report, artifacts) = pipeline::run_pipeline(&cfg)?;
            println!("{}", report.to_text());
            println!("predictions: {}", artifacts.predictions.display());
        }
        Command::Evaluate {
            pred,
            gold,
            format,
            ignore_label,
        } => {
            let format: DatasetFormat = format.parse()?;
            let predictions = read_predictions(&pred)?;
            let gold = gold_records(&load_dataset(&gold, format)?);
            print_json(&serde_json::json!({
                "pairs": cee_pos_f1(&predictions, &gold, !ignore_label),
                "spans": span_proportional_f1(&predictions, &gold),
            }));
        }
        Command::Ensemble { pred, out, quorum } => {
            let files = pred.iter().map(read_predictions).collect::<Result<Vec<_>>>()?;
            let merged = ensemble_records(&files, quorum)?;
            write_predictions(&out, &merged)?;
            println!("{} pairs -> {}", merged.len(), out.display());
        }
        Command::Report { report } => {
            let path = match report {
                Some(p) => p,
                None => RunArtifacts::under(&load_config(&cli.common)?.output_dir).report,
            };
            if !path.exists() {
                return Err(Error::Config(format!("{} not found; run `predict` first", path.display())));
            }
            let r = pipeline::read_report(&path)?;
            println!("{}\n", r.to_text());
            print_json(&r);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
