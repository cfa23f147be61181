use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use jlsgev::mcmc::SamplerConfig;
use jlsgev::model::{PriorSettings, VariantKind};
use jlsgev::scoring::{report, MetricRow, ReportOptions, TruthSurfaces};
use jlsgev::simgen::{export_scenario, make_scenario, ScenarioConfig, SimulatedTruth, SpatialVariation};

use super::fit::{self, BasisConfig, FitConfig};
use super::simulate::scenario_dir_name;
use crate::config;
use crate::{io_err, CliError, CliResult};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "JLSGEV_THREADS";

fn all_scenarios() -> Vec<usize> {
    (1..=20).collect()
}

fn one_seed() -> Vec<u64> {
    vec![1]
}

fn all_variants() -> Vec<VariantKind> {
    vec![VariantKind::JointAsymmetric, VariantKind::JointSymmetric, VariantKind::Independent]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub out: PathBuf,
    #[serde(default = "all_scenarios")]
    pub scenarios: Vec<usize>,
    #[serde(default = "one_seed")]
    pub seeds: Vec<u64>,
    #[serde(default = "all_variants")]
    pub variants: Vec<VariantKind>,
    /// Whether the scale surface varies in the fit; follows the scenario when absent.
    #[serde(default)]
    pub spatial_scale: Option<bool>,
    #[serde(default)]
    pub n_train: Option<usize>,
    #[serde(default)]
    pub n_holdout: Option<usize>,
    #[serde(default)]
    pub replicates: Option<usize>,
    /// Domain defaults to the generative domain of the scenario.
    #[serde(default)]
    pub basis: BasisConfig,
    /// `seed` is replaced by the scenario seed of each job.
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub prior: PriorSettings,
    #[serde(default)]
    pub report: ReportOptions,
    /// Keep posterior CSVs of every fit.
    #[serde(default)]
    pub keep_draws: bool,
}

impl SweepConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.scenarios.is_empty() || self.seeds.is_empty() || self.variants.is_empty() {
            return Err(CliError::Validation("scenarios, seeds and variants must be non-empty".into()));
        }
        for cfg in self.scenario_configs()? {
            cfg.validate()?;
        }
        let mut s = self.sampler.clone();
        s.seed = 0;
        s.validate()?;
        Ok(())
    }

    fn scenario_configs(&self) -> CliResult<Vec<ScenarioConfig>> {
        let mut out = Vec::new();
        for &seed in &self.seeds {
            for &k in &self.scenarios {
                let mut c = ScenarioConfig::from_number(k, seed)?;
                if let Some(n) = self.n_train {
                    c.n_train = n;
                }
                if let Some(n) = self.n_holdout {
                    c.n_holdout = n;
                }
                if let Some(r) = self.replicates {
                    c.replicates = r;
                }
                out.push(c);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobResult {
    pub scenario: usize,
    pub seed: u64,
    pub variant: VariantKind,
    pub max_rhat: f64,
    pub converged: bool,
    pub metrics: Vec<MetricRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub jobs: Vec<JobResult>,
}

impl SweepResult {
    /// Mean over seeds of one metric, keyed by scenario then variant.
    pub fn mean_metric(&self, metric: &str, process: usize) -> BTreeMap<usize, BTreeMap<String, f64>> {
        let mut acc: BTreeMap<usize, BTreeMap<String, (f64, usize)>> = BTreeMap::new();
        for j in &self.jobs {
            for r in j.metrics.iter().filter(|r| r.metric == metric && r.process == process) {
                let e = acc.entry(j.scenario).or_default().entry(r.variant.clone()).or_insert((0.0, 0));
                e.0 += r.value;
                e.1 += 1;
            }
        }
        acc.into_iter().map(|(k, m)| (k, m.into_iter().map(|(v, (s, n))| (v, s / n as f64)).collect())).collect()
    }
}

/// Worker count: `--jobs` capped by the environment variable, at least 1.
pub fn worker_count(jobs: Option<usize>) -> usize {
    let cap = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()).filter(|&v| v > 0);
    let want = jobs.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    cap.map_or(want, |c| want.min(c)).max(1)
}

pub fn load_config(path: &Path) -> CliResult<SweepConfig> {
    let mut cfg: SweepConfig = config::load(path)?;
    cfg.out = config::resolve(path, &cfg.out);
    Ok(cfg)
}

pub fn run(cfg: &SweepConfig, workers: usize) -> CliResult<SweepResult> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| io_err(&cfg.out, e))?;
    config::write_resolved(cfg, &cfg.out.join("sweep.config.json"))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Failed(format!("worker pool: {e}")))?;
    let scenarios = cfg.scenario_configs()?;
    let result = pool.install(|| -> CliResult<SweepResult> {
        let truths: Vec<(PathBuf, SimulatedTruth)> = scenarios
            .par_iter()
            .map(|c| {
                let dir = cfg.out.join(scenario_dir_name(c.number(), c.seed));
                let truth = make_scenario(c)?;
                export_scenario(&truth, &dir)?;
                Ok((dir, truth))
            })
            .collect::<CliResult<_>>()?;
        let jobs: Vec<(usize, VariantKind)> =
            (0..truths.len()).flat_map(|t| cfg.variants.iter().map(move |&v| (t, v))).collect();
        let results = jobs
            .par_iter()
            .map(|&(t, variant)| run_job(cfg, &truths[t].0, &truths[t].1, variant))
            .collect::<CliResult<Vec<_>>>()?;
        Ok(SweepResult { jobs: results })
    })?;
    write_outputs(cfg, &result)?;
    Ok(result)
}

fn run_job(cfg: &SweepConfig, dir: &Path, truth: &SimulatedTruth, variant: VariantKind) -> CliResult<JobResult> {
    let sc = &truth.config;
    let mut basis = cfg.basis.clone();
    if basis.domain.is_none() {
        let d = &sc.generative.domain;
        basis.domain = Some([d.xmin, d.xmax, d.ymin, d.ymax]);
    }
    let fit_cfg = FitConfig {
        data: dir.join("train.csv"),
        out: dir.join(variant.as_str()),
        variant,
        spatial_scale: cfg.spatial_scale.unwrap_or(sc.spatial_variation == SpatialVariation::LocationAndScale),
        basis,
        sampler: SamplerConfig { seed: sc.seed, ..cfg.sampler.clone() },
        prior: cfg.prior,
    };
    let (outcome, samples) = fit::run_on(&fit_cfg, &truth.train_dataset(), cfg.keep_draws)?;
    let bases = fit_cfg.basis.build(&truth.train_dataset())?;
    let metrics = report(
        &samples,
        &bases,
        &fit_cfg.model_variant(),
        &truth.holdout_dataset(),
        Some(&TruthSurfaces::holdout_of(truth)),
        &cfg.report,
    )?;
    log::info!("scenario {} seed {} {}: max R̂ {:.3}", sc.number(), sc.seed, variant.as_str(), outcome.diagnostics.max_rhat);
    Ok(JobResult {
        scenario: sc.number(),
        seed: sc.seed,
        variant,
        max_rhat: outcome.diagnostics.max_rhat,
        converged: outcome.diagnostics.converged(),
        metrics,
    })
}

fn write_outputs(cfg: &SweepConfig, res: &SweepResult) -> CliResult<()> {
    let mut metrics = String::from("scenario,seed,metric,variant,process,value\n");
    let mut conv = String::from("scenario,seed,variant,max_rhat,converged\n");
    for j in &res.jobs {
        for r in &j.metrics {
            let _ = writeln!(metrics, "{},{},{},{},{},{:?}", j.scenario, j.seed, r.metric, r.variant, r.process, r.value);
        }
        let _ = writeln!(conv, "{},{},{},{:?},{}", j.scenario, j.seed, j.variant.as_str(), j.max_rhat, j.converged);
    }
    let variants: Vec<&str> = cfg.variants.iter().map(|v| v.as_str()).collect();
    let mut summary = format!("scenario,metric,process,{}\n", variants.join(","));
    for metric in jlsgev::scoring::METRICS {
        for process in [1, 2] {
            for (scenario, by_variant) in res.mean_metric(metric, process) {
                let cells: Vec<String> =
                    variants.iter().map(|v| by_variant.get(*v).map(|x| format!("{x:?}")).unwrap_or_default()).collect();
                let _ = writeln!(summary, "{scenario},{metric},{process},{}", cells.join(","));
            }
        }
    }
    for (name, body) in [("metrics.csv", metrics), ("convergence.csv", conv), ("summary.csv", summary)] {
        let path = cfg.out.join(name);
        std::fs::write(&path, body).map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}
