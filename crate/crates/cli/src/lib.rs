//! Experiment runner: configs, verification suites, decay tables and bound
//! curves for the OU-Levy lab.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod cli;
pub mod config;
pub mod decay;
pub mod error;
pub mod suites;
pub mod tags;

use std::io::Write;
use std::path::Path;

use ou_levy_core::coupling::run_mineka_coupling;

use crate::cli::{Cli, Command, Common, THREADS_ENV};
use crate::config::{Experiment, ExperimentConfig, Format};
pub use crate::error::CliError;

/// Runs a parsed command line and returns the exit status.
pub fn run(cli: Cli) -> Result<i32, CliError> {
    configure_threads(cli.common.threads)?;
    let common = &cli.common;
    match cli.command {
        Command::Verify { suite } => {
            let seed = match common.seed {
                Some(s) => s,
                None => load_config(common)?
                    .map(|c| c.run.seed)
                    .ok_or_else(|| CliError::usage("a seed is required (--seed or a config)"))?,
            };
            let report = suites::verify(suite, seed, common.replicas)?;
            let mut text = serde_json::to_string_pretty(&report)?;
            text.push('\n');
            let name = format!(
                "verify_{}.json",
                serde_json::to_value(suite)?.as_str().unwrap_or("suite")
            );
            emit(common.out.as_deref(), &name, text.as_bytes())?;
            for s in &report.suites {
                for c in s.checks.iter().filter(|c| !c.pass) {
                    eprintln!("FAIL {:?}/{}: {} > {}", s.suite, c.name, c.statistic, c.threshold);
                }
            }
            Ok(if report.pass { 0 } else { 1 })
        }
        Command::TvDecay => {
            let exp = experiment(common)?;
            let table = decay::tv_decay(&exp)?;
            let out = out_dir(common, &exp);
            let formats = &exp.config.output.formats;
            if formats.contains(&Format::Csv) || out.is_none() {
                emit(out.as_deref(), "tv_decay.csv", &decay::decay_csv(&table)?)?;
            }
            if formats.contains(&Format::Json) && out.is_some() {
                let mut text = serde_json::to_string_pretty(&table)?;
                text.push('\n');
                emit(out.as_deref(), "tv_decay.json", text.as_bytes())?;
            }
            Ok(0)
        }
        Command::Bounds => {
            let exp = experiment(common)?;
            let curves = bounds::bound_curves(&exp)?;
            emit(
                out_dir(common, &exp).as_deref(),
                "bounds.csv",
                &bounds::bounds_csv(&curves)?,
            )?;
            Ok(0)
        }
        Command::CoupleTrace { count } => {
            if count == 0 {
                return Err(CliError::usage("count must be positive"));
            }
            let exp = experiment(common)?;
            let horizon = *exp
                .config
                .run
                .times
                .last()
                .ok_or_else(|| CliError::usage("time grid is empty"))?;
            config::validate_times(&exp.config.run.times, false)?;
            let lines = exp
                .master()
                .substream(tags::TRACE)
                .map(count, |_, rng| {
                    run_mineka_coupling(&exp.spec, &exp.model, &exp.x, &exp.y, horizon, rng).map(|t| t.to_json_line())
                })
                .into_iter()
                .collect::<ou_levy_core::Result<Vec<_>>>()?;
            let mut bytes = Vec::new();
            for line in lines {
                bytes.extend_from_slice(line.as_bytes());
                bytes.push(b'\n');
            }
            emit(out_dir(common, &exp).as_deref(), "trace.jsonl", &bytes)?;
            Ok(0)
        }
    }
}

fn configure_threads(flag: Option<usize>) -> Result<(), CliError> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| CliError::usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?,
        ),
        Err(_) => flag,
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::usage("thread count must be positive"));
        }
        // a pool may already exist when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn load_config(common: &Common) -> Result<Option<ExperimentConfig>, CliError> {
    match (&common.config, &common.preset) {
        (Some(path), _) => ExperimentConfig::load(path).map(Some),
        (None, Some(name)) => ExperimentConfig::preset(name).map(Some),
        (None, None) => Ok(None),
    }
}

fn experiment(common: &Common) -> Result<Experiment, CliError> {
    let config = load_config(common)?.ok_or_else(|| CliError::usage("--config or --preset is required"))?;
    Experiment::new(config, common.seed, common.replicas)
}

fn out_dir(common: &Common, exp: &Experiment) -> Option<std::path::PathBuf> {
    common.out.clone().or_else(|| exp.config.output.dir.clone())
}

/// Writes `bytes` to `dir/name`, or to stdout without a directory.
fn emit(dir: Option<&Path>, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    match dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)
                .and_then(|_| out.flush())
                .map_err(|e| CliError::io(Path::new("<stdout>"), e))
        }
    }
}
