//! The four subcommands as library functions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::Days;
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use sfcr_core::basis::Grid;
use sfcr_core::inference::{
    checkpoint, contiguous_interval, ess, hpd_discrete, lag_posterior, mu_gamma_density, run, summarize_curves,
    write_curve_csv, write_histogram_csv, write_lag_csv, ChainOutput, FitProblem,
};
use sfcr_core::model::{simulate, site_graph, DerivedCurves, Hyperparams, ModelBases};
use sfcr_core::spatial::regions_to_geojson;

use crate::config::{ConfigSource, FitConfig, IngestRules};
use crate::error::{CliError, CliResult};
use crate::ingest::{ingest, read_regions, series_csv};
use crate::manifest::{OutputSet, RunManifest};

/// Credible mass of the reported lag set.
pub const HPD_LEVEL: f64 = 0.95;
/// Bins per axis of the μ-γ histogram.
pub const DENSITY_BINS: usize = 40;

fn core_io(e: impl std::fmt::Display) -> CliError {
    CliError::Output(e.to_string())
}

fn seconds(t: Instant) -> f64 {
    (t.elapsed().as_secs_f64() * 1e3).round() / 1e3
}

fn matrix_csv(ids: &[String], m: &DMatrix<f64>) -> String {
    let mut out = format!("site_id,{}\n", ids.join(","));
    for (i, id) in ids.iter().enumerate() {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{id},{}", row.join(","));
    }
    out
}

fn pretty_json(v: &impl Serialize) -> CliResult<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v).map_err(core_io)?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// File-name-safe form of a site id, prefixed by its index so that distinct
/// ids never collide.
pub fn site_file(index: usize, id: &str) -> String {
    let clean: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{index:03}_{clean}.csv")
}

/// Writes y.csv, x.csv, geo.geojson, truth.json, fit.toml and the manifest.
pub fn simulate_cmd(src: &ConfigSource, out: &Path) -> CliResult<RunManifest> {
    let start = Instant::now();
    let days = src.sim_days()?;
    let hp = src.model(days)?;
    let settings = src.simulate(&hp)?;
    let rules = src.ingest()?;
    let scenario = settings.scenario(hp.clone());
    let sim = simulate(&scenario, None, settings.seed).map_err(CliError::from_core)?;
    let bases = ModelBases::build(&sim.data.grid, &hp).map_err(CliError::from_core)?;
    let curves = DerivedCurves::compute(&sim.truth, &bases).map_err(CliError::from_core)?;
    let origin = settings.start_date;

    let mut files = OutputSet::create(out)?;
    files.write("y.csv", series_csv(&sim.data, false, origin).as_bytes())?;
    files.write("x.csv", series_csv(&sim.data, true, origin).as_bytes())?;
    files.write("geo.geojson", regions_to_geojson(&sim.data.regions, &rules.id_property).as_bytes())?;
    let columns = |m: &DMatrix<f64>| -> Vec<Vec<f64>> { m.column_iter().map(|c| c.iter().copied().collect()).collect() };
    let truth = json!({
        "lag": sim.truth.lag,
        "origin": origin,
        "sites": sim.data.sites,
        "state": sim.truth,
        "gamma": curves.gamma.as_slice(),
        "mu": curves.mu.as_slice(),
        "x": columns(&curves.x),
        "mean_y": columns(&sim.mean_y),
        "full_y": columns(&sim.full_y),
    });
    files.write("truth.json", &pretty_json(&truth)?)?;
    let fit_rules = IngestRules {
        start_date: Some(origin),
        end_date: Some(origin + Days::new(settings.days as u64 - 1)),
        ..rules.clone()
    };
    #[derive(Serialize)]
    struct FitFile<'a> {
        model: &'a Hyperparams,
        ingest: &'a IngestRules,
    }
    let fit_toml = toml::to_string(&FitFile { model: &hp, ingest: &fit_rules }).map_err(core_io)?;
    files.write("fit.toml", fit_toml.as_bytes())?;

    let config = json!({ "model": hp, "simulate": settings, "ingest": rules });
    let mut manifest = RunManifest::new("simulate", Some(settings.seed), config);
    manifest.outputs = files.entries()?;
    manifest.details = json!({ "truth_lag": sim.truth.lag, "origin": origin });
    manifest.timings.insert("total".into(), seconds(start));
    manifest.write(out)?;
    Ok(manifest)
}

/// Input files of a fit.
#[derive(Clone, Debug)]
pub struct FitInputs {
    pub y: PathBuf,
    pub x: PathBuf,
    pub geo: PathBuf,
}

/// Resolves the configuration against the ingested grid.
pub fn resolve_fit_config(inputs: &FitInputs, src: &ConfigSource) -> CliResult<FitConfig> {
    let ingest_rules = src.ingest()?;
    let max_lag = src.max_lag()?;
    let data = ingest(&inputs.y, &inputs.x, &inputs.geo, &ingest_rules, max_lag)?;
    Ok(FitConfig { model: src.model(data.dataset.grid.len)?, run: src.run()?, ingest: ingest_rules })
}

/// Samples, summarizes and writes every fit output plus the manifest.
pub fn fit_cmd(inputs: &FitInputs, cfg: &FitConfig, out: &Path) -> CliResult<RunManifest> {
    let start = Instant::now();
    cfg.model.validate().map_err(|e| CliError::Config(format!("model: {e}")))?;
    cfg.run.validate().map_err(|e| CliError::Config(format!("run: {e}")))?;
    let ingested = ingest(&inputs.y, &inputs.x, &inputs.geo, &cfg.ingest, cfg.model.max_lag)?;
    let problem = FitProblem::new(ingested.dataset.clone(), cfg.model.clone()).map_err(|e| match e {
        sfcr_core::Error::Argument(_) => CliError::Config(e.to_string()),
        other => CliError::Input(other.to_string()),
    })?;
    let t_setup = seconds(start);

    let mut files = OutputSet::create(out)?;
    let sampling = Instant::now();
    let ckpt_dir = out.join("checkpoints");
    let outputs = run(&problem, &cfg.run, Some(&ckpt_dir)).map_err(CliError::from_core)?;
    for c in 0..cfg.run.chains {
        files.record(&format!("checkpoints/chain{c}.ckpt"));
    }
    let t_sampling = seconds(sampling);

    let summarizing = Instant::now();
    let lag = write_summaries(&outputs, &problem.data.grid, &problem.data.sites, &mut files)?;

    let mut manifest =
        RunManifest::new("fit", Some(cfg.run.seed), serde_json::to_value(cfg).map_err(core_io)?);
    manifest.add_input("y", &inputs.y)?;
    manifest.add_input("x", &inputs.x)?;
    manifest.add_input("geo", &inputs.geo)?;
    manifest.outputs = files.entries()?;
    manifest.details = json!({
        "origin": ingested.origin,
        "grid": problem.data.grid,
        "ingest": ingested.report,
        "fingerprint": problem.fingerprint(),
        "lag": lag,
    });
    manifest.warnings = problem.graph.warnings.clone();
    manifest.timings = BTreeMap::from([
        ("setup".to_string(), t_setup),
        ("sampling".to_string(), t_sampling),
        ("summaries".to_string(), seconds(summarizing)),
        ("total".to_string(), seconds(start)),
    ]);
    manifest.write(out)?;
    Ok(manifest)
}

/// Re-runs a fit with the inputs and resolved configuration recorded in a
/// manifest, after checking the input digests.
pub fn refit_cmd(manifest_path: &Path, out: &Path) -> CliResult<RunManifest> {
    let m = RunManifest::read(manifest_path)?;
    if m.command != "fit" {
        return Err(CliError::input_at(manifest_path, format!("manifest records '{}', not a fit", m.command)));
    }
    let cfg: FitConfig = serde_json::from_value(m.config.clone())
        .map_err(|e| CliError::input_at(manifest_path, format!("configuration: {e}")))?;
    let inputs = FitInputs { y: m.verified_input("y")?, x: m.verified_input("x")?, geo: m.verified_input("geo")? };
    fit_cmd(&inputs, &cfg, out)
}

/// Lag posterior, HPD set, curve bands, μ-γ histogram and ESS table, from
/// chains sorted by index.
pub fn write_summaries(outputs: &[ChainOutput], grid: &Grid, sites: &[String], files: &mut OutputSet) -> CliResult<Value> {
    let mut sorted: Vec<&ChainOutput> = outputs.iter().collect();
    sorted.sort_by_key(|o| o.chain);
    let owned: Vec<ChainOutput> = sorted.iter().map(|o| (*o).clone()).collect();

    let probs = lag_posterior(&owned);
    let mut buf = Vec::new();
    write_lag_csv(&mut buf, &probs).map_err(core_io)?;
    files.write("lag_posterior.csv", &buf)?;

    let draws: usize = owned.iter().map(ChainOutput::draws).sum();
    let lag = if draws == 0 {
        json!({ "draws": 0, "chains": owned.len(), "mode": null, "hpd_level": HPD_LEVEL, "hpd_set": [], "hpd_interval": null })
    } else {
        let mode = (0..probs.len()).max_by(|&a, &b| probs[a].total_cmp(&probs[b]).then(b.cmp(&a))).unwrap_or(0);
        let set = hpd_discrete(&probs, HPD_LEVEL).map_err(CliError::from_core)?;
        let mean: f64 = probs.iter().enumerate().map(|(l, p)| l as f64 * p).sum();
        json!({
            "draws": draws,
            "chains": owned.len(),
            "mode": mode,
            "mean": mean,
            "hpd_level": HPD_LEVEL,
            "hpd_set": set,
            "hpd_interval": contiguous_interval(&set),
        })
    };
    files.write("lag_summary.json", &pretty_json(&lag)?)?;

    let summary = summarize_curves(&owned, grid).map_err(CliError::from_core)?;
    let ext_first = grid.first_day - grid.extension as i64;
    let mut curve = |rel: String, first_day: i64, band| -> CliResult<()> {
        let mut buf = Vec::new();
        write_curve_csv(&mut buf, first_day, band).map_err(core_io)?;
        files.write(&rel, &buf)
    };
    curve("curves/gamma.csv".into(), grid.first_day, &summary.gamma)?;
    curve("curves/mu.csv".into(), ext_first, &summary.mu)?;
    for (i, id) in sites.iter().enumerate() {
        if let Some(b) = summary.x.get(i) {
            curve(format!("curves/x/{}", site_file(i, id)), ext_first, b)?;
        }
        if let Some(b) = summary.fitted_y.get(i) {
            curve(format!("curves/fitted_y/{}", site_file(i, id)), grid.first_day, b)?;
        }
    }

    let mut buf = Vec::new();
    if summary.draws > 0 {
        let h = mu_gamma_density(&summary, DENSITY_BINS).map_err(CliError::from_core)?;
        write_histogram_csv(&mut buf, &h).map_err(core_io)?;
    } else {
        buf.extend_from_slice(b"mu,gamma,count\n");
    }
    files.write("mu_gamma_density.csv", &buf)?;

    let mut table = String::from("chain,parameter,draws,ess,degenerate\n");
    for o in &owned {
        let lag_trace: Vec<f64> = o.scalars.lag.iter().map(|&l| l as f64).collect();
        let traces: [(&str, &[f64]); 5] = [
            ("lag", &lag_trace),
            ("sigma2_eps_y", &o.scalars.sigma2_eps_y),
            ("sigma2_eps_x", &o.scalars.sigma2_eps_x),
            ("mu1", &o.scalars.mu1),
            ("log_joint", &o.scalars.log_joint),
        ];
        for (name, trace) in traces {
            match ess(trace) {
                Ok(e) => {
                    let _ = writeln!(table, "{},{name},{},{},{}", o.chain, trace.len(), e.value, e.degenerate);
                }
                Err(_) => {
                    let _ = writeln!(table, "{},{name},{},,", o.chain, trace.len());
                }
            }
        }
    }
    files.write("ess.csv", table.as_bytes())?;
    Ok(lag)
}

/// Checkpoint files named directly or found (as `*.ckpt`) in directories.
pub fn expand_checkpoints(paths: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| CliError::input_at(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "ckpt"))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(CliError::Input("no checkpoint files given".into()));
    }
    Ok(out)
}

/// Regenerates every summary file from stored chains, pooling all given
/// checkpoints.
pub fn summarize_cmd(paths: &[PathBuf], out: &Path) -> CliResult<RunManifest> {
    let start = Instant::now();
    let paths = expand_checkpoints(paths)?;
    let mut ckpts = Vec::with_capacity(paths.len());
    for p in &paths {
        ckpts.push(checkpoint::read(p).map_err(|e| CliError::Input(e.to_string()))?);
    }
    let first = &ckpts[0];
    let mut seen = BTreeMap::new();
    for (c, p) in ckpts.iter().zip(&paths) {
        if c.fingerprint != first.fingerprint || c.grid != first.grid || c.sites != first.sites {
            return Err(CliError::input_at(p, format!("chain was run on different data than {}", paths[0].display())));
        }
        if let Some(prev) = seen.insert(c.chain, p) {
            return Err(CliError::Input(format!(
                "{} and {} both hold chain {}",
                prev.display(),
                p.display(),
                c.chain
            )));
        }
    }
    let outputs: Vec<ChainOutput> = ckpts.iter().map(|c| c.output.clone()).collect();
    let mut files = OutputSet::create(out)?;
    let lag = write_summaries(&outputs, &first.grid, &first.sites, &mut files)?;
    let config = json!({ "model": first.hp, "run": first.config });
    let mut manifest = RunManifest::new("summarize", Some(first.config.seed), config);
    for (c, p) in ckpts.iter().zip(&paths) {
        manifest.add_input(&format!("chain{}", c.chain), p)?;
    }
    manifest.outputs = files.entries()?;
    manifest.details = json!({ "fingerprint": first.fingerprint, "iterations": ckpts.iter().map(|c| c.iteration).collect::<Vec<_>>(), "lag": lag });
    manifest.timings.insert("total".into(), seconds(start));
    manifest.write(out)?;
    Ok(manifest)
}

/// Writes the neighbour weights D, the CAR precision Q and the pairwise
/// distances for a geometry file.
pub fn graph_cmd(geo: &Path, src: &ConfigSource, out: &Path) -> CliResult<RunManifest> {
    let start = Instant::now();
    let rules = src.ingest()?;
    let spatial = src.resolve("model", &Hyperparams::default())?.spatial;
    if spatial.k == 0 || !(spatial.quantile > 0.0 && spatial.quantile <= 1.0) || spatial.jitter_rel < 0.0 {
        return Err(CliError::Config("model.spatial: need k >= 1, 0 < quantile <= 1 and jitter_rel >= 0".into()));
    }
    let text = std::fs::read_to_string(geo).map_err(|e| CliError::input_at(geo, e))?;
    let regions = read_regions(&text, &geo.display().to_string(), &rules)?;
    if regions.len() < 2 {
        return Err(CliError::input_at(geo, "a neighbour graph needs at least two regions"));
    }
    let graph = site_graph(&regions, &spatial).map_err(|e| CliError::Input(e.to_string()))?;

    let mut files = OutputSet::create(out)?;
    files.write("weights.csv", matrix_csv(&graph.ids, &graph.weights).as_bytes())?;
    files.write("precision.csv", matrix_csv(&graph.ids, &graph.q).as_bytes())?;
    if let Some(d) = &graph.distances {
        files.write("distances.csv", matrix_csv(&graph.ids, d).as_bytes())?;
    }
    let info = json!({ "sites": graph.ids, "jitter": graph.jitter, "warnings": graph.warnings });
    files.write("graph.json", &pretty_json(&info)?)?;

    let mut manifest = RunManifest::new("graph", None, json!({ "spatial": spatial, "ingest": rules }));
    manifest.add_input("geo", geo)?;
    manifest.outputs = files.entries()?;
    manifest.warnings = graph.warnings.clone();
    manifest.timings.insert("total".into(), seconds(start));
    manifest.write(out)?;
    Ok(manifest)
}
