//! Batch front end: ingest observation files, simulate synthetic data, fit
//! the model and write summaries, all as files.

pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{fit_cmd, graph_cmd, refit_cmd, resolve_fit_config, simulate_cmd, summarize_cmd, FitInputs};
use crate::config::{output_dir, ConfigSource, IngestFlags, ModelFlags, RunFlags, SimulateFlags};
use crate::error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "sfcr", version, about = "Spatial functional concurrent regression with an unknown lag")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset with known truth.
    Simulate(SimulateArgs),
    /// Fit the model to observation files.
    Fit(FitArgs),
    /// Rebuild summaries from chain checkpoints.
    Summarize(SummarizeArgs),
    /// Write the neighbour weights and CAR precision for a geometry file.
    Graph(GraphArgs),
}

#[derive(Args, Debug)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (relative paths resolve against SFCR_OUTPUT_ROOT).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub sim: SimulateFlags,
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub id_property: Option<String>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: Common,
    /// Positivity CSV (site_id, date, value and/or positives, tests).
    #[arg(long, required_unless_present = "manifest")]
    pub y: Option<PathBuf>,
    /// Wastewater CSV (site_id, date, value).
    #[arg(long, required_unless_present = "manifest")]
    pub x: Option<PathBuf>,
    /// GeoJSON FeatureCollection of service areas.
    #[arg(long, required_unless_present = "manifest")]
    pub geo: Option<PathBuf>,
    /// Repeat the fit recorded in this manifest.
    #[arg(long, conflicts_with_all = ["y", "x", "geo", "config"])]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub run: RunFlags,
    #[command(flatten)]
    pub ingest: IngestFlags,
}

#[derive(Args, Debug)]
pub struct SummarizeArgs {
    /// Checkpoint files or directories holding them.
    pub checkpoints: Vec<PathBuf>,
    /// Output directory (relative paths resolve against SFCR_OUTPUT_ROOT).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GraphArgs {
    #[command(flatten)]
    pub common: Common,
    /// GeoJSON FeatureCollection of service areas.
    #[arg(long)]
    pub geo: PathBuf,
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub id_property: Option<String>,
    #[arg(long)]
    pub allow_geographic: bool,
}

fn id_patch(id_property: &Option<String>, allow_geographic: bool) -> serde_json::Value {
    let mut m = serde_json::Map::new();
    if let Some(id) = id_property {
        m.insert("id_property".into(), id.clone().into());
    }
    if allow_geographic {
        m.insert("allow_geographic".into(), true.into());
    }
    serde_json::Value::Object(m)
}

pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(a) => {
            let src = ConfigSource::load(a.common.config.as_deref())?
                .with_flags("simulate", a.sim.patch())
                .with_flags("model", a.model.patch())
                .with_flags("ingest", id_patch(&a.id_property, false));
            let out = output_dir(a.common.out.as_deref(), "simulate")?;
            simulate_cmd(&src, &out)?;
        }
        Command::Fit(a) => {
            let out = output_dir(a.common.out.as_deref(), "fit")?;
            if let Some(m) = &a.manifest {
                refit_cmd(m, &out)?;
                return Ok(());
            }
            let src = ConfigSource::load(a.common.config.as_deref())?
                .with_flags("model", a.model.patch())
                .with_flags("run", a.run.patch())
                .with_flags("ingest", a.ingest.patch());
            let (Some(y), Some(x), Some(geo)) = (a.y, a.x, a.geo) else {
                return Err(CliError::Config("fit needs --y, --x and --geo".into()));
            };
            let inputs = FitInputs { y, x, geo };
            let cfg = resolve_fit_config(&inputs, &src)?;
            fit_cmd(&inputs, &cfg, &out)?;
        }
        Command::Summarize(a) => {
            let out = output_dir(a.out.as_deref(), "summary")?;
            summarize_cmd(&a.checkpoints, &out)?;
        }
        Command::Graph(a) => {
            let src = ConfigSource::load(a.common.config.as_deref())?
                .with_flags("model", a.model.patch())
                .with_flags("ingest", id_patch(&a.id_property, a.allow_geographic));
            let out = output_dir(a.common.out.as_deref(), "graph")?;
            graph_cmd(&a.geo, &src, &out)?;
        }
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
/// Failures print a human-readable line and a JSON report to stderr.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { CliError::Config(String::new()).exit_code() } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("sfcr: {}: {e}", e.code().replace('_', " "));
            eprintln!("{}", e.report());
            e.exit_code()
        }
    }
}
