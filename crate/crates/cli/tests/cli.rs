use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use jlsgev::basis::BasisPair;
use jlsgev::ingest::read_dataset_csv;
use jlsgev::mcmc::PosteriorSamples;
use jlsgev::model::{surfaces, ModelContext, SitePredictor};
use jlsgev::scoring::quantile_type7;
use jlsgev::simgen::read_truth_csv;
use jlsgev::Process;

fn jlsgev(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jlsgev")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulate(dir: &Path, scenario: usize, seed: u64, name: &str) -> PathBuf {
    let o = jlsgev(&["simulate", "--scenario", &scenario.to_string(), "--seed", &seed.to_string(), "--out", name], dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir.join(name)
}

fn write_fit_config(dir: &Path, name: &str, data: &str, out: &str, variant: &str, n_iter: usize, seed: u64) -> PathBuf {
    let path = dir.join(name);
    let body = format!(
        r#"{{"data": "{data}", "out": "{out}", "variant": "{variant}",
            "basis": {{"levels": 2, "domain": [0, 5, 0, 5]}},
            "sampler": {{"n_iter": {n_iter}, "n_burnin": {}, "thin": 2, "n_chains": 2, "seed": {seed}}}}}"#,
        n_iter / 2
    );
    std::fs::write(&path, body).unwrap();
    path
}

fn fit(dir: &Path, config: &Path) -> Output {
    jlsgev(&["fit", "--config", config.to_str().unwrap(), "--allow-unconverged"], dir)
}

#[test]
fn simulate_writes_scenario_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = simulate(tmp.path(), 20, 7, "s20");
    for f in ["train.csv", "holdout.csv", "truth.csv", "scenario.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let cfg = std::fs::read_to_string(out.join("scenario.json")).unwrap();
    assert!(cfg.contains("\"1/50\""), "{cfg}");
    assert!(cfg.contains("asymmetric") && cfg.contains("location_and_scale"));
    let train = read_dataset_csv(&out.join("train.csv")).unwrap();
    assert_eq!((train.n(), train.m()), (400, 8));
}

#[test]
fn simulate_all_enumerates_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let o = jlsgev(&["simulate", "--all", "--seeds", "1..3", "--out", "grid"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let dirs = std::fs::read_dir(tmp.path().join("grid")).unwrap().count();
    assert_eq!(dirs, 60);
}

#[test]
fn invalid_fraction_names_allowed_set() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"observed_fraction": "1/7", "cross_cov": "symmetric", "spatial_variation": "location_only"}"#).unwrap();
    let o = jlsgev(&["simulate", "--config", "bad.json", "--out", "x"], tmp.path());
    assert_eq!(code(&o), 2);
    let msg = stderr(&o);
    assert!(msg.contains("observed_fraction") && msg.contains("1/10, 1/15, 1/25, 1/35, 1/50"), "{msg}");
    assert!(!tmp.path().join("x").exists());
}

#[test]
fn config_errors_carry_field_paths() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("f.json"),
        r#"{"data": "d.csv", "out": "o", "variant": "independent", "sampler": {"n_iter": "lots"}}"#,
    )
    .unwrap();
    let o = jlsgev(&["fit", "--config", "f.json"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("sampler.n_iter"), "{}", stderr(&o));
    std::fs::write(tmp.path().join("g.json"), r#"{"data": "d.csv", "out": "o", "variant": "sideways"}"#).unwrap();
    let o = jlsgev(&["fit", "--config", "g.json"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("variant"), "{}", stderr(&o));
}

#[test]
fn unreadable_data_is_an_io_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_fit_config(tmp.path(), "f.json", "missing.csv", "out", "independent", 100, 1);
    let o = jlsgev(&["fit", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn fit_smoke_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), 1, 3, "s1");
    let a = write_fit_config(tmp.path(), "a.json", "s1/train.csv", "fit_a", "independent", 300, 11);
    let b = write_fit_config(tmp.path(), "b.json", "s1/train.csv", "fit_b", "independent", 300, 11);
    for cfg in [&a, &b] {
        let o = fit(tmp.path(), cfg);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let draws_a = std::fs::read(tmp.path().join("fit_a/posterior.csv")).unwrap();
    let draws_b = std::fs::read(tmp.path().join("fit_b/posterior.csv")).unwrap();
    assert_eq!(draws_a, draws_b);
    let s = PosteriorSamples::read_csv(&tmp.path().join("fit_a/posterior.csv")).unwrap();
    assert_eq!(s.n_chains(), 2);
    assert_eq!(s.n_draws(), 2 * 75);
    for f in ["config.json", "knots.json", "diagnostics.json"] {
        assert!(tmp.path().join("fit_a").join(f).is_file());
    }
    // the resolved config echoes defaults that were not in the input
    let echoed = std::fs::read_to_string(tmp.path().join("fit_a/config.json")).unwrap();
    assert!(echoed.contains("target_accept") && echoed.contains("offset_var"), "{echoed}");
}

#[test]
fn convergence_exit_code_follows_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), 1, 2, "s1");
    let cfg = write_fit_config(tmp.path(), "f.json", "s1/train.csv", "fit", "joint_asymmetric", 40, 5);
    let o = jlsgev(&["fit", "--config", cfg.to_str().unwrap()], tmp.path());
    let diag: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("fit/diagnostics.json")).unwrap()).unwrap();
    let flagged = !diag["flagged"].as_array().unwrap().is_empty();
    assert_eq!(code(&o), if flagged { 3 } else { 0 }, "{}", stderr(&o));
    assert_eq!(code(&fit(tmp.path(), &cfg)), 0);
}

/// Rows of a predict CSV as (process, site, quantity) → [mean, median, q025, q975, outside].
fn read_predictions(path: &Path) -> Vec<(usize, String, String, [f64; 5])> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), jlsgev_cli::commands::predict::PREDICT_HEADER);
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let v = |i: usize| f[i].parse::<f64>().unwrap();
            (f[0].parse().unwrap(), f[1].to_string(), f[4].to_string(), [v(5), v(6), v(7), v(8), v(9)])
        })
        .collect()
}

#[test]
fn predict_matches_per_draw_definitions() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), 4, 1, "s4");
    let cfg = write_fit_config(tmp.path(), "f.json", "s4/train.csv", "fit", "joint_asymmetric", 200, 2);
    assert_eq!(code(&fit(tmp.path(), &cfg)), 0);
    let o = jlsgev(
        &["predict", "--fit", "fit", "--sites", "s4/train.csv", "--periods", "10", "--out", "pred/train.csv"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(tmp.path().join("pred/train.config.json").is_file());
    let rows = read_predictions(&tmp.path().join("pred/train.csv"));

    let train = read_dataset_csv(&tmp.path().join("s4/train.csv")).unwrap();
    let bases: BasisPair = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("fit/knots.json")).unwrap()).unwrap();
    let samples = PosteriorSamples::read_csv(&tmp.path().join("fit/posterior.csv")).unwrap();
    let variant = jlsgev::model::ModelVariant::new(jlsgev::model::VariantKind::JointAsymmetric, true);
    let ctx = ModelContext::new(&train, &bases).unwrap();
    let pred1 = SitePredictor::new(&bases, train.locations(Process::One), Process::One).unwrap();
    let pred2 = SitePredictor::new(&bases, train.locations(Process::Two), Process::Two).unwrap();
    let params = samples.params();
    // predictions at training sites reproduce the in-fit surfaces draw by draw
    for p in params.iter().step_by(17) {
        let (mu, sigma) = surfaces(p, &ctx, &variant).unwrap();
        let g: Vec<_> = pred1.gev_params(p, &variant).unwrap().into_iter().chain(pred2.gev_params(p, &variant).unwrap()).collect();
        for i in 0..mu.len() {
            assert_eq!(g[i].mu().to_bits(), mu[i].to_bits());
            assert_eq!(g[i].sigma().to_bits(), sigma[i].to_bits());
        }
    }
    // the T = 10 column summarises the per-draw 0.9 quantile
    let site = 3;
    let rl: Vec<f64> = params.iter().map(|p| pred2.gev_params(p, &variant).unwrap()[site].quantile(0.9).unwrap()).collect();
    let row = rows.iter().find(|r| r.0 == 2 && r.1 == site.to_string() && r.2 == "rl10").expect("rl10 row");
    assert!((row.3[1] - quantile_type7(&rl, 0.5).unwrap()).abs() < 1e-12);
    assert!((row.3[2] - quantile_type7(&rl, 0.025).unwrap()).abs() < 1e-12);
    assert!((row.3[0] - rl.iter().sum::<f64>() / rl.len() as f64).abs() < 1e-9);
    assert!(rows.iter().all(|r| r.3[4] == 0.0));
    assert_eq!(rows.len(), (train.n() + train.m()) * 3);
}

#[test]
fn predict_flags_sites_outside_the_basis() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), 1, 1, "s1");
    let cfg = write_fit_config(tmp.path(), "f.json", "s1/train.csv", "fit", "independent", 100, 1);
    assert_eq!(code(&fit(tmp.path(), &cfg)), 0);
    std::fs::write(tmp.path().join("sites.csv"), "site,x,y\na,2.5,2.5\nfar,40,40\n").unwrap();
    let o = jlsgev(&["predict", "--fit", "fit", "--sites", "sites.csv", "--out", "p.csv"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = read_predictions(&tmp.path().join("p.csv"));
    assert_eq!(rows.len(), 2 * 2 * 4);
    for r in rows {
        assert_eq!(r.3[4], if r.1 == "far" { 1.0 } else { 0.0 });
    }
}

#[test]
fn holdout_prediction_agrees_with_score() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), 8, 2, "s8");
    let cfg = write_fit_config(tmp.path(), "f.json", "s8/train.csv", "fit", "joint_symmetric", 300, 3);
    assert_eq!(code(&fit(tmp.path(), &cfg)), 0);
    let o = jlsgev(&["predict", "--fit", "fit", "--sites", "s8/holdout.csv", "--periods", "10", "--out", "p.csv"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = jlsgev(
        &["score", "--fit", "fit", "--holdout", "s8/holdout.csv", "--truth", "s8/truth.csv", "--out", "m.csv"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let truth: Vec<_> = read_truth_csv(&tmp.path().join("s8/truth.csv")).unwrap().into_iter().filter(|r| r.split == "holdout").collect();
    let rows = read_predictions(&tmp.path().join("p.csv"));
    let metrics = std::fs::read_to_string(tmp.path().join("m.csv")).unwrap();
    for process in [1usize, 2] {
        let sq: Vec<f64> = rows
            .iter()
            .filter(|r| r.0 == process && r.2 == "rl10")
            .map(|r| {
                let t = &truth[r.1.parse::<usize>().unwrap()];
                let want = if process == 1 { t.rl10_1 } else { t.rl10_2 };
                (r.3[0] - want).powi(2)
            })
            .collect();
        let rmse = (sq.iter().sum::<f64>() / sq.len() as f64).sqrt();
        let scored: f64 = metrics
            .lines()
            .find(|l| l.starts_with(&format!("rmse_rl10,joint_symmetric,{process},")))
            .and_then(|l| l.rsplit(',').next())
            .unwrap()
            .parse()
            .unwrap();
        assert!((rmse - scored).abs() < 1e-9 * scored.max(1.0), "process {process}: {rmse} vs {scored}");
    }
}

#[test]
fn score_tables_and_missing_directories() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), 3, 1, "s3");
    for v in ["joint_asymmetric", "joint_symmetric", "independent"] {
        let cfg = write_fit_config(tmp.path(), &format!("{v}.json"), "s3/train.csv", v, v, 100, 1);
        assert_eq!(code(&fit(tmp.path(), &cfg)), 0);
    }
    let o = jlsgev(
        &[
            "score", "--fit", "independent", "--fit", "joint_asymmetric", "--fit", "joint_symmetric", "--holdout",
            "s3/holdout.csv", "--truth", "s3/truth.csv", "--out", "m.csv", "--paper-table", "t.csv",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = std::fs::read_to_string(tmp.path().join("t.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "metric,process,joint_asymmetric,joint_symmetric,independent");
    assert!(table.lines().skip(1).all(|l| l.split(',').count() == 5 && !l.contains(",,")));
    assert!(table.contains("rmse_rl10,2,"));

    let o = jlsgev(&["score", "--fit", "independent", "--fit", "no_such_fit", "--holdout", "s3/holdout.csv", "--out", "m2.csv"], tmp.path());
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("no_such_fit"), "{}", stderr(&o));
    assert!(!tmp.path().join("m2.csv").exists());
}

#[test]
fn sweep_runs_grid_and_honours_thread_cap() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("sweep.json"),
        r#"{"out": "sw", "scenarios": [19, 20], "seeds": [1], "variants": ["joint_asymmetric", "independent"],
            "n_train": 150, "n_holdout": 50, "basis": {"levels": 2},
            "sampler": {"n_iter": 120, "n_burnin": 60, "thin": 2, "n_chains": 1}}"#,
    )
    .unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_jlsgev"))
        .args(["sweep", "--config", "sweep.json", "--jobs", "4"])
        .env("JLSGEV_THREADS", "1")
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("4 fits on 1 worker(s)"));
    let out = tmp.path().join("sw");
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("scenario,metric,process,joint_asymmetric,independent\n"));
    assert!(summary.lines().any(|l| l.starts_with("20,rmse_rl10,2,")));
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 4 * 18);
    assert!(out.join("scenario_19_seed_1/joint_asymmetric/diagnostics.json").is_file());
    assert!(!out.join("scenario_19_seed_1/joint_asymmetric/posterior.csv").exists());
    assert!(out.join("sweep.config.json").is_file());
}
