use std::path::PathBuf;
use std::process::ExitCode;

use cdgan_core::commands::{self, TrainStart};
use cdgan_core::config::RunConfig;
use cdgan_core::data::DatasetLayout;
use cdgan_core::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cdgan", version, about = "Change detection with a conditional GAN")]
struct Cli {
    /// Overrides the training and simulator seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    deterministic: bool,
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write simulated image pairs and masks in the triplet-dirs layout.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
    },
    /// Train on DATA/train, validating on DATA/val.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        layout: LayoutArg,
        /// Continue from a full training checkpoint.
        #[arg(long, conflicts_with = "init")]
        resume: Option<PathBuf>,
        /// Start a new run from the network weights of a checkpoint.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Predict the change mask of one image pair.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image_a: PathBuf,
        #[arg(long)]
        image_b: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the raw change map as 8-bit gray.
        #[arg(long)]
        raw: Option<PathBuf>,
    },
    /// Score a checkpoint on a dataset and write a TSV report.
    Eval {
        #[arg(long, required_unless_present = "oracle")]
        checkpoint: Option<PathBuf>,
        /// Use the ground truth as the prediction.
        #[arg(long, conflicts_with = "checkpoint")]
        oracle: bool,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        layout: LayoutArg,
    },
}

#[derive(Args)]
struct LayoutArg {
    /// `triplet-dirs` or `aicd-style`.
    #[arg(long, default_value = "triplet-dirs")]
    layout: String,
}

impl LayoutArg {
    fn parse(&self) -> Result<DatasetLayout, Error> {
        self.layout.parse()
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Data(_) | Error::Io { .. } | Error::Image { .. } | Error::Checkpoint(_) => 2,
        Error::Tensor(_) | Error::Contract(_) | Error::NonFiniteGradient { .. } => 3,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.train.seed = seed;
        config.sim.seed = seed;
    }
    config.train.deterministic |= cli.deterministic;
    match cli.command {
        Command::Simulate { out, count } => commands::simulate(&config, &out, count),
        Command::Train {
            data,
            out,
            layout,
            resume,
            init,
        } => {
            let start = match (resume, init) {
                (Some(p), _) => TrainStart::Resume(p),
                (None, Some(p)) => TrainStart::WarmStart(p),
                (None, None) => TrainStart::Fresh,
            };
            commands::train(&config, &data, layout.parse()?, &out, &start).map(|_| ())
        }
        Command::Infer {
            checkpoint,
            image_a,
            image_b,
            out,
            raw,
        } => commands::infer(&checkpoint, &image_a, &image_b, &out, raw.as_deref(), &config.tile).map(|_| ()),
        Command::Eval {
            checkpoint,
            oracle: _,
            data,
            report,
            layout,
        } => {
            let r = commands::eval(
                checkpoint.as_deref(),
                &data,
                layout.parse()?,
                &report,
                &config.tile,
                config.train.iou_threshold,
            )?;
            println!("{}", cdgan_core::metrics::EvalReport::header());
            println!("{}", r.aggregate_row());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
