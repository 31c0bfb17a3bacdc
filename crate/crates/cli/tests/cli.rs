use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use sfcr_cli::commands::{fit_cmd, resolve_fit_config, simulate_cmd, summarize_cmd, FitInputs};
use sfcr_cli::config::ConfigSource;
use sfcr_cli::ingest::ingest;
use sfcr_cli::manifest::RunManifest;
use sfcr_core::inference::checkpoint;
use sfcr_core::model::{simulate, Hyperparams};
use sfcr_core::spatial::{regions_to_geojson, Region};

const SMALL: &str = "
[simulate]
n_sites = 5
days = 60
lag = 3
seed = 11

[simulate.schedule]
y_random_missing = 0.1

[model]
k_factors = 2
l_factors = 1
h_lrtps = 8
j_dr = 6
max_lag = 5
";

fn sfcr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfcr")).args(args).env_remove("SFCR_OUTPUT_ROOT").output().unwrap()
}

fn stderr_report(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().unwrap_or("")).unwrap_or(Value::Null)
}

fn simulate_into(dir: &Path, extra: &str) -> PathBuf {
    let cfg = dir.join("sim.toml");
    fs::write(&cfg, format!("{SMALL}{extra}")).unwrap();
    let out = dir.join("sim");
    simulate_cmd(&ConfigSource::load(Some(&cfg)).unwrap(), &out).unwrap();
    out
}

fn inputs(sim: &Path) -> FitInputs {
    FitInputs { y: sim.join("y.csv"), x: sim.join("x.csv"), geo: sim.join("geo.geojson") }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Every file under `dir` except the manifest, keyed by relative path.
fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for e in fs::read_dir(dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                if rel != "manifest.json" {
                    out.push((rel, fs::read(&path).unwrap()));
                }
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

#[test]
fn ingest_of_simulated_files_is_the_identity() {
    let dir = tempfile::tempdir().unwrap();
    let sim_dir = simulate_into(dir.path(), "");
    let src = ConfigSource::load(Some(&dir.path().join("sim.toml"))).unwrap();
    let hp = src.model(60).unwrap();
    let settings = src.simulate(&hp).unwrap();
    let direct = simulate(&settings.scenario(hp.clone()), None, settings.seed).unwrap();

    let fit_src = ConfigSource::load(Some(&sim_dir.join("fit.toml"))).unwrap();
    let rules = fit_src.ingest().unwrap();
    let back = ingest(&sim_dir.join("y.csv"), &sim_dir.join("x.csv"), &sim_dir.join("geo.geojson"), &rules, hp.max_lag)
        .unwrap();
    assert_eq!(back.origin, settings.start_date);
    let (a, b) = (&back.dataset, &direct.data);
    assert_eq!(a.grid, b.grid);
    assert_eq!(a.sites, b.sites);
    assert_eq!(a.regions, b.regions);
    for (sa, sb) in a.y.iter().zip(&b.y).chain(a.x.iter().zip(&b.x)) {
        assert_eq!(sa.times, sb.times);
        for (va, vb) in sa.values.iter().zip(&sb.values) {
            assert!((va - vb).abs() <= 1e-12);
        }
    }
    assert_eq!(fit_src.model(60).unwrap(), hp);
}

#[test]
fn simulate_is_deterministic_and_records_the_lag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.toml");
    fs::write(&cfg, SMALL).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = sfcr(&["simulate", "--config", p(&cfg), "--out", p(out), "--lag", "4"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(tree(&a), tree(&b));
    let ma = RunManifest::read(&a.join("manifest.json")).unwrap();
    let mb = RunManifest::read(&b.join("manifest.json")).unwrap();
    assert_eq!(ma.outputs, mb.outputs);
    let names: Vec<&str> = ma.outputs.iter().map(|e| e.path.as_str()).collect();
    assert_eq!(names, ["fit.toml", "geo.geojson", "truth.json", "x.csv", "y.csv"]);
    let truth: Value = serde_json::from_str(&fs::read_to_string(a.join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth["lag"], 4);
    assert_eq!(truth["state"]["lag"], 4);
    assert_eq!(ma.config["simulate"]["lag"], 4);
}

#[test]
fn fit_rerun_summarize_and_merge_are_byte_exact() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate_into(dir.path(), "");
    let src = ConfigSource::load(Some(&sim.join("fit.toml")))
        .unwrap()
        .with_flags("run", serde_json::json!({"iterations": 60, "burn_in": 20, "thin": 2, "chains": 2, "seed": 5}));
    let cfg = resolve_fit_config(&inputs(&sim), &src).unwrap();
    let first = dir.path().join("fit");
    let manifest = fit_cmd(&inputs(&sim), &cfg, &first).unwrap();
    assert!(manifest.timings.contains_key("sampling"));
    assert_eq!(manifest.inputs.len(), 3);
    let listed: Vec<&str> = manifest.outputs.iter().map(|e| e.path.as_str()).collect();
    for (rel, _) in tree(&first) {
        assert!(listed.contains(&rel.as_str()), "{rel} missing from the manifest");
    }

    let again = dir.path().join("again");
    let o = sfcr(&["fit", "--manifest", p(&first.join("manifest.json")), "--out", p(&again)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(tree(&first), tree(&again));

    // summaries from checkpoints, with the chains given in either order
    let c0 = first.join("checkpoints/chain0.ckpt");
    let c1 = first.join("checkpoints/chain1.ckpt");
    let summary_files = |d: &Path| -> Vec<(String, Vec<u8>)> {
        tree(d).into_iter().filter(|(r, _)| !r.starts_with("checkpoints")).collect()
    };
    for order in [vec![c0.clone(), c1.clone()], vec![c1.clone(), c0.clone()]] {
        let out = dir.path().join("summary");
        summarize_cmd(&order, &out).unwrap();
        assert_eq!(summary_files(&out), summary_files(&first));
    }
    let out = dir.path().join("summary_dir");
    let o = sfcr(&["summarize", p(&first.join("checkpoints")), "--out", p(&out)]);
    assert!(o.status.success());
    assert_eq!(summary_files(&out), summary_files(&first));

    // one chain alone differs from the pooled summary
    let out = dir.path().join("single");
    summarize_cmd(std::slice::from_ref(&c0), &out).unwrap();
    assert_ne!(fs::read(out.join("lag_posterior.csv")).unwrap(), fs::read(first.join("lag_posterior.csv")).unwrap());
    assert!(summarize_cmd(&[c0.clone(), c0], &dir.path().join("dup")).is_err());
}

#[test]
fn summarize_rejects_empty_and_incompatible_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let o = sfcr(&["summarize", "--out", p(&dir.path().join("s"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("s").exists());
    fs::create_dir(dir.path().join("empty")).unwrap();
    let o = sfcr(&["summarize", p(&dir.path().join("empty")), "--out", p(&dir.path().join("s"))]);
    assert_eq!(o.status.code(), Some(2));

    let sim = simulate_into(dir.path(), "");
    let src = ConfigSource::load(Some(&sim.join("fit.toml")))
        .unwrap()
        .with_flags("run", serde_json::json!({"iterations": 4, "burn_in": 0, "thin": 1, "chains": 1}));
    let cfg = resolve_fit_config(&inputs(&sim), &src).unwrap();
    fit_cmd(&inputs(&sim), &cfg, &dir.path().join("fit")).unwrap();
    let path = dir.path().join("fit/checkpoints/chain0.ckpt");
    let mut bytes = fs::read(&path).unwrap();
    bytes[8..12].copy_from_slice(&(checkpoint::VERSION + 1).to_le_bytes());
    let bad = dir.path().join("bad.ckpt");
    fs::write(&bad, bytes).unwrap();
    let o = sfcr(&["summarize", p(&bad), "--out", p(&dir.path().join("s"))]);
    assert_eq!(o.status.code(), Some(2));
    let report = stderr_report(&o);
    assert_eq!(report["error"]["code"], "input_error");
    assert!(report["error"]["message"].as_str().unwrap().contains("incompatible"), "{report}");
}

#[test]
fn exit_codes_follow_the_error_taxonomy() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate_into(dir.path(), "");
    let cfg = sim.join("fit.toml");
    let out = dir.path().join("out");
    let fit = |extra: &[&str], geo: &Path| {
        let mut args = vec![
            "fit", "--config", p(&cfg), "--y", p(&sim.join("y.csv")).to_string().leak(),
            "--x", p(&sim.join("x.csv")).to_string().leak(), "--geo", p(geo), "--out", p(&out),
            "--iterations", "6", "--burn-in", "2", "--thin", "1", "--chains", "1",
        ];
        args.extend_from_slice(extra);
        sfcr(&args)
    };
    let geo = sim.join("geo.geojson");
    assert_eq!(fit(&[], &geo).status.code(), Some(0));
    let missing = fit(&[], &dir.path().join("missing.geojson"));
    assert_eq!(missing.status.code(), Some(2));
    assert!(stderr_report(&missing)["error"]["message"].as_str().unwrap().contains("missing.geojson"));
    let bad = fit(&["--k-factors", "0"], &geo);
    assert_eq!(bad.status.code(), Some(3));
    assert_eq!(stderr_report(&bad)["error"]["code"], "config_error");
    assert_eq!(fit(&["--no-such-flag"], &geo).status.code(), Some(3));
    let failed = fit(&["--a-eps-y", "1e308"], &geo);
    assert_eq!(failed.status.code(), Some(4));
    let report = stderr_report(&failed);
    assert_eq!(report["error"]["code"], "sampler_failure");
    assert!(report["error"]["message"].as_str().unwrap().contains("chain 0"), "{report}");
    assert!(dir.path().join("out/checkpoints/chain0.ckpt").exists());

    fs::write(dir.path().join("bad.toml"), "[model]\nk_factors = \"two\"\n").unwrap();
    let o = sfcr(&["simulate", "--config", p(&dir.path().join("bad.toml")), "--out", p(&dir.path().join("s"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr_report(&o)["error"]["message"].as_str().unwrap().contains("model.k_factors"));
}

#[test]
fn output_root_variable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.toml");
    fs::write(&cfg, SMALL).unwrap();
    let run = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_sfcr")).args(args).env("SFCR_OUTPUT_ROOT", dir.path()).output().unwrap()
    };
    assert!(run(&["simulate", "--config", p(&cfg)]).status.success());
    assert!(dir.path().join("simulate/y.csv").exists());
    assert!(run(&["simulate", "--config", p(&cfg), "--out", "named"]).status.success());
    assert!(dir.path().join("named/x.csv").exists());
    assert_eq!(sfcr(&["simulate", "--config", p(&cfg)]).status.code(), Some(3));
}

#[test]
fn graph_writes_weights_and_precision() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate_into(dir.path(), "");
    let out = dir.path().join("graph");
    let o = sfcr(&["graph", "--geo", p(&sim.join("geo.geojson")), "--out", p(&out), "--spatial-k", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let read = |name: &str| -> Vec<Vec<f64>> {
        fs::read_to_string(out.join(name))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
            .collect()
    };
    let (d, q) = (read("weights.csv"), read("precision.csv"));
    assert_eq!(d.len(), 5);
    for i in 0..5 {
        assert!(d[i].iter().filter(|&&w| w == 1.0).count() >= 2);
        assert!(q[i].iter().sum::<f64>().abs() < 1e-12);
        for j in 0..5 {
            assert_eq!(d[i][j], d[j][i]);
        }
    }
    let geo = dir.path().join("deg.geojson");
    let degrees: Vec<Region> =
        (0..4).map(|i| Region::rectangle(format!("s{i}"), -95.4 + 0.1 * i as f64, 29.7, -95.3 + 0.1 * i as f64, 29.8)).collect();
    fs::write(&geo, regions_to_geojson(&degrees, "site_id")).unwrap();
    let o = sfcr(&["graph", "--geo", p(&geo), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let o = sfcr(&["graph", "--geo", p(&geo), "--out", p(&out), "--allow-geographic"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn empty_y_file_fits_from_x_alone() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate_into(dir.path(), "");
    fs::write(sim.join("y.csv"), "").unwrap();
    let src = ConfigSource::load(Some(&sim.join("fit.toml")))
        .unwrap()
        .with_flags("run", serde_json::json!({"iterations": 10, "burn_in": 0, "thin": 1, "chains": 1}));
    let cfg = resolve_fit_config(&inputs(&sim), &src).unwrap();
    let m = fit_cmd(&inputs(&sim), &cfg, &dir.path().join("fit")).unwrap();
    assert_eq!(m.details["ingest"]["y_rows"], 0);
    assert_eq!(m.details["lag"]["draws"], 10);
    let hp: Hyperparams = serde_json::from_value(m.config["model"].clone()).unwrap();
    assert_eq!(hp.max_lag, 5);
}
