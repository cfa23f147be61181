use jlsgev::basis::{build_knots, BasisPair, Rect};
use jlsgev::ingest::read_dataset_csv;
use jlsgev::mcmc::{diagnostics, fit, SamplerConfig};
use jlsgev::model::{ModelVariant, PriorSettings, VariantKind};
use jlsgev::scoring::{report, ReportOptions, TruthSurfaces, METRICS};
use jlsgev::simgen::{export_scenario, make_scenario, read_truth_csv, ScenarioConfig};

fn small_scenario(number: usize) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::from_number(number, 3).unwrap();
    cfg.n_train = 150;
    cfg.n_holdout = 60;
    cfg.replicates = 5;
    cfg
}

#[test]
fn exported_files_read_back() {
    let truth = make_scenario(&small_scenario(7)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_scenario(&truth, dir.path()).unwrap();
    let train = read_dataset_csv(&dir.path().join("train.csv")).unwrap();
    assert_eq!(train, truth.train_dataset());
    let hold = read_dataset_csv(&dir.path().join("holdout.csv")).unwrap();
    assert_eq!(hold, truth.holdout_dataset());
    let rows = read_truth_csv(&dir.path().join("truth.csv")).unwrap();
    assert_eq!(rows.len(), 210);
    assert_eq!(rows.iter().filter(|r| r.split == "holdout").count(), 60);
}

#[test]
fn short_fit_scores_every_metric() {
    let truth = make_scenario(&small_scenario(12)).unwrap();
    let bases = BasisPair::shared(build_knots(Rect::square(0.0, 5.0), 2).unwrap());
    let variant = ModelVariant::new(VariantKind::JointAsymmetric, true);
    let sc = SamplerConfig { n_iter: 400, n_burnin: 200, thin: 2, n_chains: 2, seed: 5, ..Default::default() };
    let samples = fit(&truth.train_dataset(), &bases, &variant, &PriorSettings::default(), &sc).unwrap();
    assert_eq!(samples.n_draws(), 200);
    let d = diagnostics(&samples).unwrap();
    assert!(d.max_rhat.is_finite());
    let rows = report(
        &samples,
        &bases,
        &variant,
        &truth.holdout_dataset(),
        Some(&TruthSurfaces::holdout_of(&truth)),
        &ReportOptions::default(),
    )
    .unwrap();
    for m in METRICS {
        for p in [1, 2] {
            let r = rows.iter().find(|r| r.metric == m && r.process == p).unwrap();
            assert!(r.value.is_finite(), "{m} process {p}: {}", r.value);
        }
    }
}
