//! Configuration: a TOML file with `[model]`, `[run]`, `[ingest]` and
//! `[simulate]` tables, overridden key by key by command-line flags.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use sfcr_core::inference::RunConfig;
use sfcr_core::model::{Hyperparams, Scenario, Schedule};

use crate::error::{CliError, CliResult};

/// Environment variable naming the directory that relative output paths
/// are resolved against.
pub const OUTPUT_ROOT_ENV: &str = "SFCR_OUTPUT_ROOT";

const SECTIONS: [&str; 4] = ["model", "run", "ingest", "simulate"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestRules {
    /// Positivity days with fewer positive tests than this are missing.
    pub min_positives: f64,
    /// GeoJSON feature property holding the site id.
    pub id_property: String,
    /// Accept geometry that looks like longitude/latitude degrees.
    pub allow_geographic: bool,
    /// First grid day; defaults to the earliest observation.
    pub start_date: Option<NaiveDate>,
    /// Last grid day; defaults to the latest observation.
    pub end_date: Option<NaiveDate>,
}

impl Default for IngestRules {
    fn default() -> Self {
        Self {
            min_positives: 5.0,
            id_property: "site_id".into(),
            allow_geographic: false,
            start_date: None,
            end_date: None,
        }
    }
}

/// Synthetic scenario settings for `simulate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateSettings {
    pub n_sites: usize,
    pub days: usize,
    pub lag: Option<usize>,
    pub seed: u64,
    /// Calendar date of grid day 0.
    pub start_date: NaiveDate,
    pub sd_x: f64,
    pub sd_y: f64,
    pub gamma_level: f64,
    pub theta_rms: f64,
    pub region_size: f64,
    pub schedule: Schedule,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        let sc = Scenario::new(Hyperparams::default(), 10, 300);
        Self {
            n_sites: sc.n_sites,
            days: sc.days,
            lag: None,
            seed: 1,
            start_date: NaiveDate::from_ymd_opt(2021, 1, 1).expect("valid date"),
            sd_x: sc.sd_x,
            sd_y: sc.sd_y,
            gamma_level: sc.gamma_level,
            theta_rms: sc.theta_rms,
            region_size: sc.region_size,
            schedule: sc.schedule,
        }
    }
}

impl SimulateSettings {
    pub fn scenario(&self, hp: Hyperparams) -> Scenario {
        Scenario {
            hp,
            n_sites: self.n_sites,
            days: self.days,
            first_day: 0,
            lag: self.lag,
            sd_x: self.sd_x,
            sd_y: self.sd_y,
            gamma_level: self.gamma_level,
            theta_rms: self.theta_rms,
            region_size: self.region_size,
            schedule: self.schedule.clone(),
        }
    }

    pub fn validate(&self, hp: &Hyperparams) -> CliResult<()> {
        let bad = |field: &str, what: &str| Err(CliError::Config(format!("simulate.{field} {what}")));
        if self.n_sites < 2 {
            return bad("n_sites", "must be at least 2");
        }
        if self.days < 2 {
            return bad("days", "must be at least 2");
        }
        if let Some(lag) = self.lag {
            if lag > hp.max_lag {
                return Err(CliError::Config(format!(
                    "simulate.lag {lag} exceeds model.max_lag {}",
                    hp.max_lag
                )));
            }
        }
        for (field, v) in [("sd_x", self.sd_x), ("sd_y", self.sd_y), ("region_size", self.region_size)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(field, "must be positive");
            }
        }
        let s = &self.schedule;
        if s.x_every == 0 || s.y_every == 0 {
            return bad("schedule", "x_every and y_every must be at least 1");
        }
        for (field, v) in [
            ("schedule.y_tail_missing", s.y_tail_missing),
            ("schedule.y_random_missing", s.y_random_missing),
            ("schedule.x_random_missing", s.x_random_missing),
        ] {
            if !(0.0..1.0).contains(&v) {
                return bad(field, "must lie in [0, 1)");
            }
        }
        if let Some(&i) = s.withheld_sites.iter().find(|&&i| i >= self.n_sites) {
            return Err(CliError::Config(format!("simulate.schedule.withheld_sites: no site {i}")));
        }
        Ok(())
    }
}

/// Everything `fit` needs besides the input files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub model: Hyperparams,
    pub run: RunConfig,
    pub ingest: IngestRules,
}

/// The parsed configuration file plus flag overrides, not yet resolved.
#[derive(Clone, Debug, Default)]
pub struct ConfigSource {
    file: Map<String, Value>,
    flags: Map<String, Value>,
}

impl ConfigSource {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let Value::Object(file) = toml_to_json(toml::Value::Table(table)) else {
            return Err(CliError::Config("configuration is not a table".into()));
        };
        if let Some(k) = file.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
            return Err(CliError::Config(format!("unknown section '{k}'")));
        }
        Ok(Self { file, flags: Map::new() })
    }

    /// Adds flag overrides for one section.
    pub fn with_flags(mut self, section: &str, patch: Value) -> Self {
        let entry = self.flags.entry(section.to_string()).or_insert_with(|| Value::Object(Map::new()));
        merge_into(entry, patch);
        self
    }

    fn patch(&self, section: &str) -> Value {
        let mut v = self.file.get(section).cloned().unwrap_or_else(|| Value::Object(Map::new()));
        if let Some(f) = self.flags.get(section) {
            merge_into(&mut v, f.clone());
        }
        v
    }

    /// `max_lag` as configured, needed before the grid is known.
    pub fn max_lag(&self) -> CliResult<usize> {
        match self.patch("model").get("max_lag") {
            None => Ok(Hyperparams::default().max_lag),
            Some(v) => v
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| CliError::Config(format!("model.max_lag: expected a nonnegative integer, got {v}"))),
        }
    }

    /// `simulate.days` as configured, needed to pick the basis defaults.
    pub fn sim_days(&self) -> CliResult<usize> {
        match self.patch("simulate").get("days") {
            None => Ok(SimulateSettings::default().days),
            Some(v) => v
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| CliError::Config(format!("simulate.days: expected a positive integer, got {v}"))),
        }
    }

    pub fn resolve<T: Serialize + DeserializeOwned>(&self, section: &str, base: &T) -> CliResult<T> {
        overlay(base, &self.patch(section), section)
    }

    pub fn model(&self, grid_days: usize) -> CliResult<Hyperparams> {
        let hp = self.resolve("model", &Hyperparams::for_grid(grid_days))?;
        hp.validate().map_err(|e| CliError::Config(format!("model: {e}")))?;
        Ok(hp)
    }

    pub fn run(&self) -> CliResult<RunConfig> {
        let run = self.resolve("run", &RunConfig::default())?;
        run.validate().map_err(|e| CliError::Config(format!("run: {e}")))?;
        Ok(run)
    }

    pub fn ingest(&self) -> CliResult<IngestRules> {
        let rules = self.resolve("ingest", &IngestRules::default())?;
        if !(rules.min_positives >= 0.0) {
            return Err(CliError::Config("ingest.min_positives must be nonnegative".into()));
        }
        if let (Some(a), Some(b)) = (rules.start_date, rules.end_date) {
            if b < a {
                return Err(CliError::Config("ingest.end_date precedes ingest.start_date".into()));
            }
        }
        Ok(rules)
    }

    pub fn simulate(&self, hp: &Hyperparams) -> CliResult<SimulateSettings> {
        let s = self.resolve("simulate", &SimulateSettings::default())?;
        s.validate(hp)?;
        Ok(s)
    }
}

/// TOML dates become ISO strings.
fn toml_to_json(v: toml::Value) -> Value {
    match v {
        toml::Value::String(s) => Value::String(s),
        toml::Value::Integer(i) => Value::from(i),
        toml::Value::Float(f) => Value::from(f),
        toml::Value::Boolean(b) => Value::Bool(b),
        toml::Value::Datetime(d) => Value::String(d.to_string()),
        toml::Value::Array(a) => Value::Array(a.into_iter().map(toml_to_json).collect()),
        toml::Value::Table(t) => Value::Object(t.into_iter().map(|(k, v)| (k, toml_to_json(v))).collect()),
    }
}

fn merge_into(target: &mut Value, patch: Value) {
    match (target, patch) {
        (Value::Object(t), Value::Object(p)) => {
            for (k, v) in p {
                match t.get_mut(&k) {
                    Some(existing) if existing.is_object() && v.is_object() => merge_into(existing, v),
                    _ => {
                        t.insert(k, v);
                    }
                }
            }
        }
        (t, p) => *t = p,
    }
}

/// Checks every key of `patch` against `base`, reporting unknown keys with
/// their dotted path.
fn check_keys(base: &Value, patch: &Value, path: &str) -> CliResult<()> {
    let (Value::Object(b), Value::Object(p)) = (base, patch) else { return Ok(()) };
    for (k, v) in p {
        let here = format!("{path}.{k}");
        match b.get(k) {
            None => return Err(CliError::Config(format!("unknown key '{here}'"))),
            Some(inner) if inner.is_object() => {
                if !v.is_object() {
                    return Err(CliError::Config(format!("'{here}' must be a table")));
                }
                check_keys(inner, v, &here)?;
            }
            Some(_) => {}
        }
    }
    Ok(())
}

fn overlay<T: Serialize + DeserializeOwned>(base: &T, patch: &Value, section: &str) -> CliResult<T> {
    let mut merged = serde_json::to_value(base).map_err(|e| CliError::Config(e.to_string()))?;
    if !patch.is_object() {
        return Err(CliError::Config(format!("'{section}' must be a table")));
    }
    check_keys(&merged, patch, section)?;
    merge_into(&mut merged, patch.clone());
    serde_path_to_error::deserialize(merged)
        .map_err(|e| CliError::Config(format!("{section}.{}: {}", e.path(), e.inner())))
}

/// Serializes a flag struct, dropping unset flags and nesting keys that
/// carry one of `nested` as a prefix (`spatial_k` becomes `spatial.k`).
fn flag_patch<T: Serialize>(flags: &T, nested: &[&str]) -> Value {
    let Ok(Value::Object(flat)) = serde_json::to_value(flags) else { return Value::Object(Map::new()) };
    let mut out = Map::new();
    for (k, v) in flat {
        if v.is_null() || v == Value::Bool(false) || v.as_array().is_some_and(Vec::is_empty) {
            continue;
        }
        match nested.iter().find(|p| k.starts_with(&format!("{p}_"))) {
            Some(p) => {
                let inner = out.entry(p.to_string()).or_insert_with(|| Value::Object(Map::new()));
                if let Value::Object(m) = inner {
                    m.insert(k[p.len() + 1..].to_string(), v);
                }
            }
            None => {
                out.insert(k, v);
            }
        }
    }
    Value::Object(out)
}

/// Overrides for every hyperparameter.
#[derive(Args, Clone, Debug, Default, Serialize)]
pub struct ModelFlags {
    /// Number of wastewater factors K.
    #[arg(long)]
    pub k_factors: Option<usize>,
    /// Number of spatial factors L.
    #[arg(long)]
    pub l_factors: Option<usize>,
    /// B-spline coefficients for γ.
    #[arg(long)]
    pub p_gamma: Option<usize>,
    /// Low-rank thin-plate basis size H.
    #[arg(long)]
    pub h_lrtps: Option<usize>,
    /// Demmler–Reinsch directions J.
    #[arg(long)]
    pub j_dr: Option<usize>,
    /// Largest lag in days.
    #[arg(long)]
    pub max_lag: Option<usize>,
    #[arg(long)]
    pub a_eps_x: Option<f64>,
    #[arg(long)]
    pub b_eps_x: Option<f64>,
    #[arg(long)]
    pub a_eps_y: Option<f64>,
    #[arg(long)]
    pub b_eps_y: Option<f64>,
    #[arg(long)]
    pub a_theta: Option<f64>,
    #[arg(long)]
    pub b_theta: Option<f64>,
    #[arg(long)]
    pub lambda_sd_upper: Option<f64>,
    #[arg(long)]
    pub nu_lower: Option<f64>,
    #[arg(long)]
    pub nu_upper: Option<f64>,
    #[arg(long)]
    pub a_prior_shape: Option<f64>,
    #[arg(long)]
    pub a_prior_rate: Option<f64>,
    #[arg(long)]
    pub null_precision: Option<f64>,
    /// Neighbours per site.
    #[arg(long)]
    pub spatial_k: Option<usize>,
    /// Quantile of the extended Hausdorff distance.
    #[arg(long)]
    pub spatial_quantile: Option<f64>,
    /// Boundary and interior sampling density (points per unit length).
    #[arg(long)]
    pub spatial_resolution: Option<f64>,
    /// CAR jitter relative to the mean neighbour count.
    #[arg(long)]
    pub spatial_jitter_rel: Option<f64>,
    #[arg(long)]
    pub slice_width_shape: Option<f64>,
    #[arg(long)]
    pub slice_width_nu: Option<f64>,
    #[arg(long)]
    pub slice_max_steps: Option<usize>,
}

impl ModelFlags {
    pub fn patch(&self) -> Value {
        flag_patch(self, &["spatial", "slice"])
    }
}

/// Overrides for the sampler run.
#[derive(Args, Clone, Debug, Default, Serialize)]
pub struct RunFlags {
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sweeps between checkpoint writes; 0 writes only the final one.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

impl RunFlags {
    pub fn patch(&self) -> Value {
        flag_patch(self, &[])
    }
}

/// Overrides for ingestion.
#[derive(Args, Clone, Debug, Default, Serialize)]
pub struct IngestFlags {
    #[arg(long)]
    pub min_positives: Option<f64>,
    #[arg(long)]
    pub id_property: Option<String>,
    /// Accept longitude/latitude geometry.
    #[arg(long)]
    pub allow_geographic: bool,
    #[arg(long)]
    pub start_date: Option<NaiveDate>,
    #[arg(long)]
    pub end_date: Option<NaiveDate>,
}

impl IngestFlags {
    pub fn patch(&self) -> Value {
        flag_patch(self, &[])
    }
}

/// Overrides for the synthetic scenario.
#[derive(Args, Clone, Debug, Default, Serialize)]
pub struct SimulateFlags {
    #[arg(long = "sites")]
    pub n_sites: Option<usize>,
    #[arg(long)]
    pub days: Option<usize>,
    /// True lag; drawn at random when unset.
    #[arg(long)]
    pub lag: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "start-date")]
    pub start_date: Option<NaiveDate>,
    #[arg(long)]
    pub sd_x: Option<f64>,
    #[arg(long)]
    pub sd_y: Option<f64>,
    #[arg(long)]
    pub gamma_level: Option<f64>,
    #[arg(long)]
    pub theta_rms: Option<f64>,
    #[arg(long)]
    pub region_size: Option<f64>,
    #[arg(long = "x-every")]
    pub schedule_x_every: Option<usize>,
    #[arg(long = "y-every")]
    pub schedule_y_every: Option<usize>,
    #[arg(long = "y-tail-missing")]
    pub schedule_y_tail_missing: Option<f64>,
    #[arg(long = "y-random-missing")]
    pub schedule_y_random_missing: Option<f64>,
    #[arg(long = "x-random-missing")]
    pub schedule_x_random_missing: Option<f64>,
    /// Site indices whose positivity series is left out.
    #[arg(long = "withhold", value_delimiter = ',')]
    pub schedule_withheld_sites: Vec<usize>,
}

impl SimulateFlags {
    pub fn patch(&self) -> Value {
        flag_patch(self, &["schedule"])
    }
}

/// Output directory: `out` when given (relative paths resolved against the
/// output root variable when set), else `<root>/<default_name>`.
pub fn output_dir(out: Option<&Path>, default_name: &str) -> CliResult<PathBuf> {
    let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from);
    match (out, root) {
        (Some(p), Some(root)) if p.is_relative() => Ok(root.join(p)),
        (Some(p), _) => Ok(p.to_path_buf()),
        (None, Some(root)) => Ok(root.join(default_name)),
        (None, None) => Err(CliError::Config(format!("no output directory: pass --out or set {OUTPUT_ROOT_ENV}"))),
    }
}
