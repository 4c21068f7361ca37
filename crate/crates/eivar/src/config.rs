//! JSON experiment configuration and the command implementations behind the
//! `run`, `replicate`, and `schedule` subcommands. All numeric outputs land
//! as CSV; run metadata as summary.json.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::design::{run_async, run_batch, run_sequential, RunConfig, RunResult};
use crate::error::Error;
use crate::scheduler::{idle_time, makespan, simulate_async, simulate_sync, write_trace_csv};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Sequential,
    Batch,
    Async,
}

fn default_mode() -> RunMode {
    RunMode::Sequential
}

/// Top-level config file for `run` and `replicate`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_mode")]
    pub mode: RunMode,
    pub run: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicate_seeds: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleStyle {
    Sync,
    Async,
}

/// Config file for `schedule`: a pure scheduler simulation over an explicit
/// duration table, no emulator involved.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub style: ScheduleStyle,
    pub workers: usize,
    pub durations: Vec<f64>,
    /// batch size for sync style; defaults to the worker count
    #[serde(default)]
    pub batch: Option<usize>,
    /// completion trigger c for async style
    #[serde(default)]
    pub trigger: Option<usize>,
    /// acquisitions per trigger a for async style
    #[serde(default)]
    pub per_trigger: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

/// Process exit code for an error, per the documented contract:
/// 2 config, 3 simulator, 4 numerical or other failure.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::ConfigInvalid(_)
        | Error::UnknownProblem(_)
        | Error::InvalidBounds
        | Error::Io(_) => 2,
        Error::SimulatorFailure(_)
        | Error::Timeout(_)
        | Error::ProtocolViolation(_)
        | Error::NonzeroExit(_) => 3,
        _ => 4,
    }
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))
}

fn write_acquisitions_csv(result: &RunResult, path: &Path) -> Result<(), Error> {
    let p = result.acquisitions.first().map_or(0, |a| a.theta.len());
    let d = result.acquisitions.first().map_or(0, |a| a.eta.len());
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    let mut header = vec!["stage".to_string()];
    header.extend((0..p).map(|i| format!("theta_{i}")));
    header.extend((0..d).map(|i| format!("eta_{i}")));
    header.extend(["score", "t_start", "t_end"].map(String::from));
    w.write_record(&header).map_err(io_err)?;
    for acq in &result.acquisitions {
        let mut row = vec![acq.stage.to_string()];
        row.extend(acq.theta.iter().map(|v| format!("{v:.12e}")));
        row.extend(acq.eta.iter().map(|v| format!("{v:.12e}")));
        row.push(format!("{:.12e}", acq.score));
        row.push(format!("{:.6}", acq.t_start));
        row.push(format!("{:.6}", acq.t_end));
        w.write_record(&row).map_err(io_err)?;
    }
    w.flush()?;
    Ok(())
}

fn write_mad_csv(mad_trace: &[f64], path: &Path) -> Result<(), Error> {
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    w.write_record(["eval_index", "mad"]).map_err(io_err)?;
    for (i, m) in mad_trace.iter().enumerate() {
        w.write_record([(i + 1).to_string(), format!("{m:.12e}")])
            .map_err(io_err)?;
    }
    w.flush()?;
    Ok(())
}

fn io_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn execute(config: &ExperimentConfig) -> Result<RunResult, Error> {
    match config.mode {
        RunMode::Sequential => run_sequential(&config.run),
        RunMode::Batch => run_batch(&config.run),
        RunMode::Async => run_async(&config.run),
    }
}

fn run_to_dir(config: &ExperimentConfig, dir: &Path) -> Result<RunResult, Error> {
    std::fs::create_dir_all(dir)?;
    let started = std::time::Instant::now();
    let result = execute(config)?;
    let wall = started.elapsed().as_secs_f64();
    write_acquisitions_csv(&result, &dir.join("acquisitions.csv"))?;
    write_mad_csv(&result.mad_trace, &dir.join("mad_trace.csv"))?;
    let trace = std::fs::File::create(dir.join("jobs_trace.csv"))?;
    write_trace_csv(&result.job_trace, trace)?;
    let summary = serde_json::json!({
        "final_mad": result.final_mad(),
        "wall_time_seconds": wall,
        "seed": config.run.seed,
        "completed": result.acquisitions.len(),
        "aborted": result.aborted,
        "config": config,
    });
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("serializable") + "\n",
    )?;
    if result.aborted {
        return Err(Error::SimulatorFailure(
            "run aborted early; partial results written".to_string(),
        ));
    }
    Ok(result)
}

/// Executes one experiment; returns the output directory on success.
pub fn cmd_run(
    config_path: &Path,
    out_override: Option<&Path>,
    seed_override: Option<u64>,
) -> Result<PathBuf, Error> {
    let mut config: ExperimentConfig = load_json(config_path)?;
    if let Some(seed) = seed_override {
        config.run.seed = seed;
    }
    let dir = out_override
        .map(Path::to_path_buf)
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("eivar_out"));
    log::info!("run: problem={} mode={:?}", config.run.problem, config.mode);
    run_to_dir(&config, &dir)?;
    Ok(dir)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    // nearest-rank on a sorted slice
    let idx = ((sorted.len() as f64 - 1.0) * q).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

/// Runs one replicate per seed (concurrently up to `jobs`), writing per-seed
/// outputs under seed_<s>/ plus an aggregate mad_quantiles.csv.
pub fn cmd_replicate(
    config_path: &Path,
    out_override: Option<&Path>,
    jobs: usize,
) -> Result<PathBuf, Error> {
    let config: ExperimentConfig = load_json(config_path)?;
    let seeds = config
        .replicate_seeds
        .clone()
        .ok_or_else(|| Error::ConfigInvalid("replicate requires replicate_seeds".to_string()))?;
    if seeds.is_empty() {
        return Err(Error::ConfigInvalid("replicate_seeds is empty".to_string()));
    }
    let dir = out_override
        .map(Path::to_path_buf)
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("eivar_out"));
    std::fs::create_dir_all(&dir)?;

    let jobs = jobs.max(1).min(seeds.len());
    let next = std::sync::atomic::AtomicUsize::new(0);
    let traces: Mutex<Vec<Option<Result<Vec<f64>, Error>>>> =
        Mutex::new((0..seeds.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= seeds.len() {
                    return;
                }
                let mut replicate = config.clone();
                replicate.run.seed = seeds[i];
                let sub = dir.join(format!("seed_{}", seeds[i]));
                let outcome = run_to_dir(&replicate, &sub).map(|r| r.mad_trace);
                traces.lock().unwrap()[i] = Some(outcome);
            });
        }
    });
    let traces = traces.into_inner().unwrap();
    let mut collected = Vec::with_capacity(seeds.len());
    for outcome in traces {
        collected.push(outcome.expect("every replicate attempted")?);
    }

    let rows = collected.iter().map(Vec::len).min().unwrap_or(0);
    let mut w = csv::Writer::from_path(dir.join("mad_quantiles.csv")).map_err(io_err)?;
    w.write_record(["acquisition", "eval_index", "q05", "median", "q95"])
        .map_err(io_err)?;
    let kind = config.run.acquisition.to_string();
    for i in 0..rows {
        let mut column: Vec<f64> = collected.iter().map(|t| t[i]).collect();
        column.sort_by(|a, b| a.partial_cmp(b).unwrap());
        w.write_record([
            kind.clone(),
            (i + 1).to_string(),
            format!("{:.12e}", quantile(&column, 0.05)),
            format!("{:.12e}", quantile(&column, 0.5)),
            format!("{:.12e}", quantile(&column, 0.95)),
        ])
        .map_err(io_err)?;
    }
    w.flush()?;
    Ok(dir)
}

/// Pure scheduler simulation; emits jobs_trace.csv and an idle-time summary.
pub fn cmd_schedule(config_path: &Path, out_override: Option<&Path>) -> Result<PathBuf, Error> {
    let config: ScheduleConfig = load_json(config_path)?;
    if config.workers == 0 || config.durations.is_empty() {
        return Err(Error::ConfigInvalid(
            "schedule needs at least one worker and one duration".to_string(),
        ));
    }
    let trace = match config.style {
        ScheduleStyle::Sync => {
            let b = config.batch.unwrap_or(config.workers);
            if b == 0 {
                return Err(Error::ConfigInvalid("batch must be positive".to_string()));
            }
            simulate_sync(config.workers, &config.durations, b)
        }
        ScheduleStyle::Async => {
            let c = config.trigger.unwrap_or(1);
            let a = config.per_trigger.unwrap_or(1);
            if c == 0 || a == 0 || c > config.workers {
                return Err(Error::ConfigInvalid(
                    "trigger and per_trigger must be positive, trigger <= workers".to_string(),
                ));
            }
            simulate_async(config.workers, &config.durations, c, a)
        }
    };
    let dir = out_override
        .map(Path::to_path_buf)
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("eivar_out"));
    std::fs::create_dir_all(&dir)?;
    let file = std::fs::File::create(dir.join("jobs_trace.csv"))?;
    write_trace_csv(&trace, file)?;
    let summary = serde_json::json!({
        "makespan": makespan(&trace),
        "idle_time": idle_time(&trace, config.workers),
        "jobs": trace.len(),
        "generations": trace.iter().map(|j| j.generation_id).max().unwrap_or(0),
        "config": config,
    });
    std::fs::write(
        dir.join("schedule_summary.json"),
        serde_json::to_string_pretty(&summary).expect("serializable") + "\n",
    )?;
    Ok(dir)
}
