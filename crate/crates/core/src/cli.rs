//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime error, 3 output error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use clap::Parser;
use serde::Serialize;

use crate::config::{parse_config, RunConfig};
use crate::engine::StepEvents;
use crate::error::{ConfigError, OutputError, SimError};
use crate::metrics::{run_scenarios_with, ScenarioResult, ScenarioSpec, Stratum};
use crate::output::emit_results;
use crate::policy::PolicyKind;

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_OUTPUT: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "liversim",
    version,
    about = "Simulate liver allocation policies under organ shortage"
)]
pub struct Cli {
    /// Scenario configuration file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed (overrides the config).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated policies: EDF, ESDF, SCORE.
    #[arg(long, value_delimiter = ',')]
    pub policies: Option<Vec<PolicyKind>>,
    /// Comma-separated shortage fractions in [0, 1).
    #[arg(long, value_delimiter = ',')]
    pub shortage: Option<Vec<f64>>,
    /// Replications per scenario.
    #[arg(long)]
    pub replications: Option<u32>,
    /// Print nothing on success.
    #[arg(long, conflicts_with = "verbose")]
    pub quiet: bool,
    /// Print progress and timings to stderr.
    #[arg(long)]
    pub verbose: bool,
    /// Write per-step event records (NDJSON) under `<out>/events/`.
    #[arg(long)]
    pub emit_events: bool,
}

#[derive(Debug)]
pub enum Failure {
    Config(ConfigError),
    Runtime(SimError),
    Output(OutputError),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Runtime(_) => EXIT_RUNTIME,
            Failure::Output(_) => EXIT_OUTPUT,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "configuration error: {e}"),
            Failure::Runtime(e) => write!(f, "simulation error: {e}"),
            Failure::Output(e) => write!(f, "output error: {e}"),
        }
    }
}

/// Applies command-line overrides to a parsed config and revalidates it.
pub fn effective_config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut cfg = parse_config(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(p) = &cli.policies {
        cfg.scenarios.policies = p.clone();
    }
    if let Some(s) = &cli.shortage {
        cfg.scenarios.shortage_levels = s.clone();
    }
    if let Some(r) = cli.replications {
        cfg.scenarios.replications = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct EventLine<'e> {
    step: u64,
    #[serde(flatten)]
    events: &'e StepEvents,
}

fn event_file_name(spec: &ScenarioSpec, replication: u32) -> String {
    format!(
        "{}_s{:.2}_rep{:02}.ndjson",
        spec.policy, spec.shortage_fraction, replication
    )
}

/// Runs the configured matrix, optionally streaming events to NDJSON files.
pub fn execute(
    cfg: &RunConfig,
    emit_events: bool,
) -> Result<Vec<ScenarioResult>, Failure> {
    let prepared = cfg.prepare().map_err(Failure::Config)?;
    let specs = cfg.scenarios();
    if !emit_events {
        return run_scenarios_with(&specs, &prepared.engine, &prepared.models, None)
            .map_err(Failure::Runtime);
    }
    let dir = cfg.output_dir.join("events");
    std::fs::create_dir_all(&dir).map_err(|source| {
        Failure::Output(OutputError::Io {
            path: dir.display().to_string(),
            source,
        })
    })?;
    let writers: Mutex<BTreeMap<(usize, u32), BufWriter<File>>> = Mutex::new(BTreeMap::new());
    let sink = |k: usize, r: u32, step: u64, events: &StepEvents| -> Result<(), SimError> {
        let mut map = writers.lock().expect("event writer lock");
        let w = match map.entry((k, r)) {
            std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::btree_map::Entry::Vacant(e) => {
                let file = File::create(dir.join(event_file_name(&specs[k], r)))?;
                e.insert(BufWriter::new(file))
            }
        };
        serde_json::to_writer(&mut *w, &EventLine { step, events })
            .map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
        Ok(())
    };
    let results = run_scenarios_with(&specs, &prepared.engine, &prepared.models, Some(&sink));
    let flushed = writers
        .into_inner()
        .expect("event writer lock")
        .into_values()
        .try_for_each(|mut w| w.flush());
    let results = results.map_err(|e| match e {
        SimError::EventLog(source) => Failure::Output(OutputError::Io {
            path: dir.display().to_string(),
            source,
        }),
        e => Failure::Runtime(e),
    })?;
    flushed.map_err(|source| {
        Failure::Output(OutputError::Io {
            path: dir.display().to_string(),
            source,
        })
    })?;
    Ok(results)
}

/// One line per scenario.
pub fn summary_line(r: &ScenarioResult) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "  NA ".to_string(), |x| format!("{x:.3}"));
    let overall = r.rates_for(Stratum::Overall);
    let cohort = r.stratum(Stratum::Overall).map_or(0.0, |s| s.mean_cohort_size);
    format!(
        "{:<5} shortage {:.2}  reps {:>2}  cohort {:>7.1}  DDTS {}  LTx {}  alive {}  var(DDTS) {}",
        r.spec.policy.as_str(),
        r.spec.shortage_fraction,
        r.spec.replications,
        cohort,
        fmt(overall.map(|x| x.ddts)),
        fmt(overall.map(|x| x.ltx)),
        fmt(overall.map(|x| x.alive)),
        r.ddts_variance
            .map_or_else(|| "NA".to_string(), |v| format!("{v:.5}")),
    )
}

fn write_effective_config(cfg: &RunConfig, dir: &Path) -> Result<(), OutputError> {
    let path = dir.join("config.toml");
    std::fs::write(&path, cfg.to_toml_string()).map_err(|source| OutputError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn run(cli: &Cli) -> Result<Vec<ScenarioResult>, Failure> {
    let started = Instant::now();
    let cfg = effective_config(cli).map_err(Failure::Config)?;
    if cli.verbose {
        eprintln!(
            "config {} (hash {}), {} scenarios x {} replications, seed {}",
            cli.config.display(),
            &cfg.hash()[..12],
            cfg.scenarios().len(),
            cfg.scenarios.replications,
            cfg.seed
        );
    }
    let results = execute(&cfg, cli.emit_events)?;
    if cli.verbose {
        eprintln!("simulated in {:.1}s", started.elapsed().as_secs_f64());
    }
    emit_results(&results, &cfg.output_dir, &cfg.hash(), cfg.seed).map_err(Failure::Output)?;
    write_effective_config(&cfg, &cfg.output_dir).map_err(Failure::Output)?;
    if !cli.quiet {
        for r in &results {
            println!("{}", summary_line(r));
        }
    }
    if cli.verbose {
        eprintln!("wrote {}", cfg.output_dir.display());
    }
    Ok(results)
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(_) => 0,
        Err(f) => {
            eprintln!("liversim: {f}");
            f.exit_code()
        }
    }
}
