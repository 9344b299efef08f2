use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use mtss::harness::{
    cmd_eval, cmd_gradcheck, cmd_prepare, cmd_train, export_report, format_evaluation, summary_row, Checkpoint,
    ExperimentConfig,
};
use mtss::train::SplitName;
use mtss::{EmbeddingKind, Error, Mode, Result};

/// Multitask polarity and subjectivity classifier.
#[derive(Parser)]
#[command(name = "mtss", version)]
struct Cli {
    /// Log progress (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split and encode the corpora into the prepared directory.
    Prepare(Common),
    /// Train, writing a timestamped run directory under --out.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint's parameters, optimizer state and epoch.
        #[arg(long, value_name = "CHECKPOINT")]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on one split.
    Eval {
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "test")]
        split: SplitName,
        /// Print one JSON summary row instead of the report.
        #[arg(long)]
        machine: bool,
    },
    /// Run the 64-bit finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Collect run directories into curves.csv and summary.csv.
    ExportReport {
        /// Run directories, or directories containing runs.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Print the resolved configuration with every key documented.
    Config(Common),
}

#[derive(Args, Default)]
struct Common {
    /// Configuration file (`key = value` lines).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    embedding: Option<EmbeddingKind>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Use 64-bit floats.
    #[arg(long)]
    f64: bool,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    /// `base`, then the config file, then `--set`, then the named flags.
    fn resolve(&self, base: ExperimentConfig) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => base,
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k.trim(), v)?;
        }
        if let Some(seed) = self.seed {
            cfg.plan.seed = seed;
        }
        if let Some(mode) = self.mode {
            cfg.plan.mode = mode;
        }
        if let Some(e) = self.embedding {
            cfg.model.embedding = e;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if self.f64 {
            cfg.f64 = true;
        }
        Ok(cfg)
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Prepare(common) => {
            let cfg = common.resolve(ExperimentConfig::default())?;
            cfg.validate()?;
            for (task, p) in cmd_prepare(&cfg)? {
                println!(
                    "{task}: {} records, vocabulary {}, train/dev/test {}/{}/{}{}",
                    p.set.len(),
                    p.vocab.len(),
                    p.splits.train.len(),
                    p.splits.dev.len(),
                    p.splits.test.len(),
                    if p.regenerated { "" } else { " (up to date)" }
                );
            }
            println!("prepared data in {}", cfg.prepared_dir().display());
        }
        Command::Train { common, resume } => {
            let cfg = common.resolve(ExperimentConfig::default())?;
            let report = cmd_train(&cfg, resume.as_deref())?;
            println!("run directory {}", report.run_dir.display());
            println!(
                "best epoch {} (mean dev accuracy {:.4})",
                report.result.best_epoch, report.result.best_dev_accuracy
            );
            print!("{}", format_evaluation(&report.test));
        }
        Command::Eval { checkpoint, common, split, machine } => {
            let base = Checkpoint::load(&checkpoint)?.config;
            let cfg = common.resolve(base)?;
            let (eval, mode) = cmd_eval(&checkpoint, Some(cfg), None, split)?;
            if machine {
                println!("{}", summary_row(&eval, mode, &checkpoint));
            } else {
                print!("{}", format_evaluation(&eval));
            }
        }
        Command::Gradcheck { seed } => {
            let report = cmd_gradcheck(seed)?;
            print!("{}", report.to_table());
            if !report.passed() {
                return Ok(ExitCode::from(3));
            }
        }
        Command::ExportReport { runs, out } => {
            let report = export_report(&runs, &out)?;
            print!("{}", report.to_text());
            info!("{} runs", report.runs);
            println!("wrote {} and {}", out.join("curves.csv").display(), out.join("summary.csv").display());
        }
        Command::Config(common) => {
            print!("{}", common.resolve(ExperimentConfig::default())?.to_text());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(cli.verbose);
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

