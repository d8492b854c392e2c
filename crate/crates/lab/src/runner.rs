//! `run`: evaluate every configured check and persist the results.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::dump::{save_matrix, Series};
use crate::experiments::{run_check, Outcome, Setup};
use crate::report::{sha256_hex, RunReport};
use crate::{dimension_cap, LabError};

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Overrides `output.dir`; the default is `out`.
    pub out: Option<PathBuf>,
    /// Worker threads; `None` uses one per core.
    pub workers: Option<usize>,
}

impl RunOptions {
    pub fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

/// A parsed configuration and the hash of its source text.
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub sha256: String,
}

pub fn load(path: &Path) -> Result<LoadedConfig, LabError> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
    Ok(LoadedConfig {
        config: ExperimentConfig::from_json(&text)?,
        sha256: sha256_hex(text.as_bytes()),
    })
}

pub(crate) fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, LabError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| LabError::Config(format!("--workers: {e}")))?;
    Ok(pool.install(f))
}

/// Evaluates all checks concurrently; outcomes come back in check order
/// together with the wall time of each check.
pub fn evaluate(cfg: &ExperimentConfig) -> Result<Vec<(Outcome, f64)>, LabError> {
    let setup = Setup::new(cfg, dimension_cap()?)?;
    Ok(cfg
        .checks
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let t = Instant::now();
            let o = run_check(&setup, i, spec);
            (o, t.elapsed().as_secs_f64())
        })
        .collect())
}

pub fn run(path: &Path, opts: &RunOptions) -> Result<RunReport, LabError> {
    let loaded = load(path)?;
    run_config(&loaded.config, &loaded.sha256, opts)
}

pub fn run_config(cfg: &ExperimentConfig, sha256: &str, opts: &RunOptions) -> Result<RunReport, LabError> {
    let started = Instant::now();
    let outcomes = with_pool(opts.workers, || evaluate(cfg))??;
    let dir = opts.out_dir(cfg);
    std::fs::create_dir_all(&dir)?;
    let setup_basis = if cfg.output.dump_matrices {
        Some(scatterlab_core::fock::OccupationBasis::build(&cfg.params()?, dimension_cap()?)?)
    } else {
        None
    };
    let mut records = Vec::new();
    let mut timings = Vec::new();
    for (i, (outcome, secs)) in outcomes.into_iter().enumerate() {
        timings.push(format!("{}={secs:.3}", cfg.checks[i].kind()));
        for s in &outcome.series {
            save_series(&dir, i, s)?;
        }
        if let Some(basis) = &setup_basis {
            for (name, m) in &outcome.matrices {
                save_matrix(&dir.join(format!("{i:02}_{name}.bin")), m, basis)?;
            }
        }
        records.extend(outcome.records);
    }
    let report = RunReport::new(&cfg.name, sha256.to_string(), cfg.seed, records);
    std::fs::write(dir.join("report.json"), report.to_json()?)?;
    append_log(&dir, "run", &report, started, &timings)?;
    Ok(report)
}

fn save_series(dir: &Path, index: usize, s: &Series) -> Result<(), LabError> {
    let mut named = s.clone();
    named.name = format!("{index:02}_{}", s.name);
    named.save(dir)
}

/// Appends one line per invocation to `run.log`; timings live here and
/// never in the report.
pub(crate) fn append_log(
    dir: &Path,
    command: &str,
    report: &RunReport,
    started: Instant,
    timings: &[String],
) -> Result<(), LabError> {
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let failed = report.checks.iter().filter(|c| !c.pass).count();
    let mut log = std::fs::OpenOptions::new().create(true).append(true).open(dir.join("run.log"))?;
    writeln!(
        log,
        "{now} {command} config={} sha256={} checks={} failed={failed} elapsed_s={:.3} {}",
        report.config_name,
        report.config_sha256,
        report.checks.len(),
        started.elapsed().as_secs_f64(),
        timings.join(" ")
    )?;
    Ok(())
}
