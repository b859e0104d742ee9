use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use pict::config::{RunConfig, Task};
use pict::datagen::{make_dataset, Split};
use pict::error::{Error, Result};
use pict::sweep::{sweep, SweepParam};

#[derive(Parser)]
#[command(name = "pict", version, about = "Weakly supervised pavement distress classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Det,
    Rec,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParamArg {
    K,
    DeltaRel,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train and test splits described by a config.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a generated dataset; writes checkpoint, log and config to --out.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint; prints metric,value,config_hash rows.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Also write the CSV to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render teacher token overlays and heatmaps for images.
    Viz {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        images: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate once per value of k or delta-rel.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        param: ParamArg,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Dataset to use; generated under --out when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out } => {
            let config = RunConfig::load(&config)?;
            let (train, test) = make_dataset(&config.data, &out)?;
            println!("{} train and {} test images under {}", train.entries.len(), test.entries.len(), out.display());
        }
        Command::Train { config, data, out } => {
            let config = RunConfig::load(&config)?;
            let (trainer, logs) = pict::train::train(&config, &data, Some(&out))?;
            if let Some(last) = logs.last() {
                println!("{}\n{}", pict::train::EpochLog::HEADER, last.row());
            }
            println!("checkpoint after epoch {}: {}", trainer.epoch, pict::train::checkpoint_path(&out).display());
        }
        Command::Eval {
            ckpt,
            data,
            task,
            split,
            out,
        } => {
            let task = match task {
                TaskArg::Det => Task::Detection,
                TaskArg::Rec => Task::Recognition,
            };
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            let csv = pict::eval::evaluate_checkpoint(&ckpt, &data, task, split)?;
            print!("{csv}");
            if let Some(path) = out {
                fs::write(&path, &csv).map_err(|e| Error::Io { path, source: e })?;
            }
        }
        Command::Viz { ckpt, images, out } => {
            for p in pict::viz::visualize(&ckpt, &images, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Sweep {
            config,
            param,
            values,
            data,
            out,
        } => {
            let config = RunConfig::load(&config)?;
            let param = match param {
                ParamArg::K => SweepParam::K,
                ParamArg::DeltaRel => SweepParam::DeltaRel,
            };
            let data = match data {
                Some(d) => d,
                None => {
                    let d = out.join("data");
                    make_dataset(&config.data, &d)?;
                    d
                }
            };
            print!("{}", sweep(&config, param, &values, &data, Some(&out))?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
