//! Commands behind the `iwm` binary: training runs, evaluation, paired
//! informed/uninformed comparisons, oracle suites and plots.

pub mod curves;
pub mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::json;

use iwm_core::oracle::{run_suite, OracleReport};
use iwm_core::trainer::{self, code_version, content_hash, EvalStats, RunOutcome, TrainConfig};

use curves::{band, read_curve, Band, Curve, Source};
use svg::{Chart, Series};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] iwm_core::Error),
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
    #[error("{0}")]
    Format(String),
    #[error("alignment: {0}")]
    Alignment(String),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::Io(path.display().to_string(), e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::Io(path.display().to_string(), e))
}

/// Reads a config file; `seed` and `informed` override the file.
pub fn load_config(path: &Path, seed: Option<u64>, informed: Option<bool>) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(path.display().to_string(), e))?;
    let mut config = TrainConfig::from_json_str(&text)
        .map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(i) = informed {
        config.informed = i;
    }
    Ok(config)
}

pub fn train(config: &TrainConfig, out: &Path) -> Result<RunOutcome> {
    Ok(trainer::run(config, out)?)
}

/// Accepts a checkpoint stem or a run directory (its final checkpoint).
pub fn resolve_checkpoint(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("checkpoints").join("final")
    } else {
        path.to_path_buf()
    }
}

pub fn eval(checkpoint: &Path, env: Option<&str>, episodes: usize, seed: u64) -> Result<EvalStats> {
    Ok(trainer::evaluate(&resolve_checkpoint(checkpoint), env, episodes, seed)?)
}

/// Runs an oracle suite; the report's `pass` field decides the exit code.
pub fn oracle(suite: &str, count: usize, seed: u64) -> Result<OracleReport> {
    Ok(run_suite(suite, count, seed)?)
}

/// Concurrency cap: `IWM_THREADS` if set, else the available cores.
pub fn thread_limit() -> Result<usize> {
    match std::env::var("IWM_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Usage(format!("IWM_THREADS = `{v}` must be a positive integer"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs independent jobs on at most `threads` workers, keeping input order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<R>>> = Mutex::new(items.iter().map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, items.len().max(1)) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(k) else { break };
                let r = f(item);
                results.lock().expect("worker panicked")[k] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

/// Aggregate of one arm (informed or uninformed) across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub returns: Band,
    pub success: Option<Band>,
    /// Mean over seeds of the last evaluation's mean return.
    pub final_return: f64,
    /// Per seed: first evaluation step with success rate ≥ the threshold.
    pub steps_to_success: Vec<Option<u64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub task: String,
    pub seeds: Vec<u64>,
    pub success_threshold: f64,
    pub uninformed: ArmSummary,
    pub informed: ArmSummary,
}

fn arm_dir(out: &Path, informed: bool, seed: u64) -> PathBuf {
    out.join(if informed { "informed" } else { "uninformed" })
        .join(format!("seed-{seed}"))
}

fn summarize_arm(out: &Path, informed: bool, seeds: &[u64], threshold: f64) -> Result<ArmSummary> {
    let runs: Vec<PathBuf> = seeds.iter().map(|&s| arm_dir(out, informed, s)).collect();
    let returns = runs
        .iter()
        .map(|r| read_curve(r, Source::EvalReturn))
        .collect::<Result<Vec<Curve>>>()?;
    let successes = runs
        .iter()
        .map(|r| read_curve(r, Source::EvalSuccess))
        .collect::<Result<Vec<Curve>>>()?;
    let has_success = successes.iter().all(|c| !c.is_empty());
    let returns_band = band(&returns)?;
    Ok(ArmSummary {
        final_return: returns_band.mean.last().copied().unwrap_or(f64::NAN),
        returns: returns_band,
        success: if has_success { Some(band(&successes)?) } else { None },
        steps_to_success: successes.iter().map(|c| c.first_reaching(threshold)).collect(),
    })
}

fn band_series(label: &str, b: &Band) -> Series {
    Series {
        label: label.into(),
        xs: b.steps.iter().map(|&s| s as f64).collect(),
        ys: b.mean.clone(),
        band: Some((b.min.clone(), b.max.clone())),
    }
}

/// Paired informed/uninformed runs over `seeds`, aggregated into mean,
/// minimum and maximum evaluation curves.
///
/// Early stopping is disabled so that every run shares one evaluation grid.
pub fn compare(config: &TrainConfig, seeds: &[u64], out: &Path, threads: usize, threshold: f64) -> Result<CompareSummary> {
    if seeds.len() < 2 {
        return Err(CliError::Usage("compare needs at least two seeds".into()));
    }
    if config.eval_interval == 0 {
        return Err(CliError::Usage("compare needs train.eval_interval > 0".into()));
    }
    let jobs: Vec<(bool, u64)> = [false, true]
        .iter()
        .flat_map(|&i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    create_dir(out)?;
    let results = parallel_map(&jobs, threads, |&(informed, seed)| {
        let c = TrainConfig {
            informed,
            seed,
            stop_success: None,
            ..config.clone()
        };
        trainer::run(&c, &arm_dir(out, informed, seed)).map(|_| ())
    });
    for r in results {
        r?;
    }

    let summary = CompareSummary {
        task: config.env.clone(),
        seeds: seeds.to_vec(),
        success_threshold: threshold,
        uninformed: summarize_arm(out, false, seeds, threshold)?,
        informed: summarize_arm(out, true, seeds, threshold)?,
    };
    write(&out.join("summary.json"), serde_json::to_string_pretty(&summary).map_err(fmt_err)? + "\n")?;
    write(
        &out.join("summary.csv"),
        format!(
            "task,uninformed,informed\n{},{},{}\n",
            summary.task, summary.uninformed.final_return, summary.informed.final_return
        ),
    )?;
    let chart = Chart {
        title: format!("{}: evaluation return over {} seeds", summary.task, seeds.len()),
        x_label: "environment steps".into(),
        y_label: "mean evaluation return".into(),
        series: vec![
            band_series("uninformed", &summary.uninformed.returns),
            band_series("informed", &summary.informed.returns),
        ],
    };
    write(&out.join("compare.svg"), chart.render())?;
    let version = code_version();
    let manifest = json!({
        "code_version": version,
        "code_hash": content_hash(&version),
        "command": "compare",
        "config": config.to_json(),
        "seeds": seeds,
        "success_threshold": threshold,
    });
    write(&out.join("manifest.json"), serde_json::to_string_pretty(&manifest).map_err(fmt_err)? + "\n")?;
    Ok(summary)
}

fn fmt_err(e: serde_json::Error) -> CliError {
    CliError::Format(e.to_string())
}

/// Renders the curves of `runs` from their metric files only.
pub fn plot(runs: &[PathBuf], source: Source) -> Result<String> {
    if runs.is_empty() {
        return Err(CliError::Usage("plot needs at least one run directory".into()));
    }
    let series = runs
        .iter()
        .map(|r| {
            let c = read_curve(r, source)?;
            Ok(Series {
                label: r.file_name().map_or_else(|| r.display().to_string(), |n| n.to_string_lossy().into()),
                xs: c.steps.iter().map(|&s| s as f64).collect(),
                ys: c.values,
                band: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let y_label = match source {
        Source::EvalReturn => "mean evaluation return",
        Source::EvalSuccess => "evaluation success rate",
        Source::Episodes => "episode return",
    };
    Ok(Chart {
        title: "learning curves".into(),
        x_label: "environment steps".into(),
        y_label: y_label.into(),
        series,
    }
    .render())
}
