use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dpsad::commands::{self, LabelSpec, StudentOutcome};
use dpsad::config::RunConfig;
use dpsad::CliResult;

#[derive(Parser)]
#[command(name = "dpsad", version, about = "Differentially private diffusion distillation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set privacy.epsilon=10
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> CliResult<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the teacher on the configured data.
    TrainTeacher(ConfigArgs),
    /// Distill a private student from a teacher checkpoint.
    TrainStudent {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        teacher: PathBuf,
        /// Continue from the resume state in the output directory, if any.
        #[arg(long)]
        resume: bool,
    },
    /// Draw samples from a teacher or student checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        n: usize,
        /// none, balanced, or a class index.
        #[arg(long)]
        label: Option<LabelSpec>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Guidance weight; defaults to the one stored in the checkpoint.
        #[arg(long)]
        guidance: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report the privacy spend of a config without reading data.
    Account(ConfigArgs),
    /// Compare samples with real data.
    Eval {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        real: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the eight-Gaussian toy dataset.
    Toy {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::TrainTeacher(c) => {
            for p in commands::cmd_train_teacher(&c.load()?)? {
                println!("wrote {}", p.display());
            }
        }
        Command::TrainStudent { config, teacher, resume } => {
            match commands::cmd_train_student(&config.load()?, &teacher, resume)? {
                StudentOutcome::Finished(paths) => {
                    for p in paths {
                        println!("wrote {}", p.display());
                    }
                }
                StudentOutcome::Stopped { iteration, state } => {
                    println!("stopped after iteration {iteration}; resume state in {}", state.display());
                }
            }
        }
        Command::Sample { checkpoint, n, label, seed, guidance, out } => {
            let p = commands::cmd_sample(&checkpoint, n, label, seed, guidance, &out)?;
            println!("wrote {}", p.display());
        }
        Command::Account(c) => print!("{}", commands::cmd_account(&c.load()?)?.to_text()),
        Command::Eval { samples, real, config, out } => {
            print!("{}", commands::cmd_eval(&samples, &real, &config.load()?, &out)?.to_text());
        }
        Command::Toy { n, seed, out } => {
            let p = commands::cmd_toy(n, seed, &out)?;
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
