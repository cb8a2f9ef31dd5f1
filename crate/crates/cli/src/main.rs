use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use iwm_cli::curves::Source;
use iwm_cli::{compare, eval, load_config, oracle, plot, thread_limit, train, CliError, Result};

#[derive(Parser)]
#[command(name = "iwm", version, about = "Train and evaluate informed world models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotSource {
    Eval,
    Success,
    Episodes,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Reconstruct the information (true) or the observation (false).
        #[arg(long)]
        informed: Option<bool>,
    },
    /// Evaluate a checkpoint (or a run directory's final checkpoint).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Environment to evaluate on; defaults to the training environment.
        #[arg(long)]
        env: Option<String>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Paired informed and uninformed runs over several seeds.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0, 1, 2, 3])]
        seeds: Vec<u64>,
        #[arg(long, default_value = "runs/compare")]
        out: PathBuf,
        /// Success rate that counts as solved in the summary.
        #[arg(long, default_value_t = 0.8)]
        success_threshold: f64,
    },
    /// Run an exact oracle suite: mi, sufficiency, elbo or markov-blanket.
    Oracle {
        suite: String,
        #[arg(default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw learning curves of run directories as SVG.
    Plot {
        runs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = PlotSource::Eval)]
        source: PlotSource,
        #[arg(long, default_value = "curves.svg")]
        out: PathBuf,
    },
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::Format(e.to_string()))
}

fn write_file(path: &PathBuf, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::Io(path.display().to_string(), e))
}

fn execute(command: Command) -> Result<bool> {
    match command {
        Command::Train {
            config,
            out,
            seed,
            informed,
        } => {
            let config = load_config(&config, seed, informed)?;
            let outcome = train(&config, &out)?;
            println!(
                "{}",
                to_json(&serde_json::json!({
                    "out": out,
                    "env_steps": outcome.env_steps,
                    "grad_steps": outcome.grad_steps,
                    "episodes": outcome.episodes,
                    "final_checkpoint": outcome.final_checkpoint,
                    "last_eval": outcome.evaluations.last().map(|e| &e.stats),
                }))?
            );
        }
        Command::Eval {
            checkpoint,
            env,
            episodes,
            seed,
        } => {
            let stats = eval(&checkpoint, env.as_deref(), episodes, seed)?;
            println!("{}", to_json(&stats)?);
        }
        Command::Compare {
            config,
            seeds,
            out,
            success_threshold,
        } => {
            let config = load_config(&config, None, None)?;
            let summary = compare(&config, &seeds, &out, thread_limit()?, success_threshold)?;
            println!("task,uninformed,informed");
            println!(
                "{},{},{}",
                summary.task, summary.uninformed.final_return, summary.informed.final_return
            );
        }
        Command::Oracle {
            suite,
            count,
            seed,
            out,
        } => {
            let report = oracle(&suite, count, seed)?;
            let text = to_json(&report)?;
            match out {
                Some(path) => write_file(&path, &(text + "\n"))?,
                None => println!("{text}"),
            }
            eprintln!(
                "{}: {} instances, {} violations",
                report.suite, report.count, report.violations
            );
            return Ok(report.pass);
        }
        Command::Plot { runs, source, out } => {
            let source = match source {
                PlotSource::Eval => Source::EvalReturn,
                PlotSource::Success => Source::EvalSuccess,
                PlotSource::Episodes => Source::Episodes,
            };
            write_file(&out, &plot(&runs, source)?)?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
