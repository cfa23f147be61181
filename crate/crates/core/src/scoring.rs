//! Verification metrics and the per-variant metric table.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::BasisPair;
use crate::error::{Error, Result};
use crate::gev::GevParams;
use crate::mcmc::PosteriorSamples;
use crate::model::{Dataset, ModelParams, ModelVariant, SitePredictor};
use crate::simgen::{SimulatedTruth, TruthRow};
use crate::Process;

/// Below this many draws the mixture LogS is noisy.
pub const MIN_STABLE_DRAWS: usize = 100;

pub fn rmse(truth: &[f64], pred: &[f64]) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::DimensionMismatch(format!("truth has {} values, prediction {}", truth.len(), pred.len())));
    }
    if truth.is_empty() {
        return Err(Error::EmptySample);
    }
    let ss: f64 = truth.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / truth.len() as f64).sqrt())
}

/// CRPS of the empirical law of `draws` at `y`:
/// `mean|X - y| - (1 / 2m²) ΣΣ |X_i - X_j|`, via the sorted-sample identity.
pub fn crps_sample(draws: &[f64], y: f64) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut x = draws.to_vec();
    x.sort_by(f64::total_cmp);
    Ok(crps_sorted(&x, y))
}

fn crps_sorted(x: &[f64], y: f64) -> f64 {
    let m = x.len() as f64;
    let abs_term = x.iter().map(|v| (v - y).abs()).sum::<f64>() / m;
    let spread: f64 = x.iter().enumerate().map(|(i, v)| v * (2.0 * i as f64 - m + 1.0)).sum();
    (abs_term - spread / (m * m)).max(0.0)
}

/// Negative log of the parameter-mixture predictive density at `y`.
pub fn logs_mixture(ensemble: &[GevParams], y: f64) -> Result<f64> {
    if ensemble.is_empty() {
        return Err(Error::EmptySample);
    }
    let lp: Vec<f64> = ensemble.iter().map(|g| g.ln_pdf(y)).collect();
    let max = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(f64::INFINITY);
    }
    let sum: f64 = lp.iter().map(|v| (v - max).exp()).sum();
    Ok(-(max + (sum / lp.len() as f64).ln()))
}

/// Type-7 sample quantile at probability `prob`.
pub fn quantile_type7(values: &[f64], prob: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut x = values.to_vec();
    x.sort_by(f64::total_cmp);
    let h = (x.len() - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(x.len() - 1);
    Ok(x[lo] + (h - lo as f64) * (x[hi] - x[lo]))
}

/// Indices of values at or above the empirical `1 - q` quantile; ties with
/// the threshold are included.
pub fn tail_subset(obs: &[f64], q: f64) -> Vec<usize> {
    let Ok(threshold) = quantile_type7(obs, 1.0 - q) else { return Vec::new() };
    (0..obs.len()).filter(|&i| obs[i] >= threshold).collect()
}

pub fn median(values: &[f64]) -> Result<f64> {
    quantile_type7(values, 0.5)
}

pub fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Posterior parameter draws at each site of one process.
#[derive(Debug, Clone)]
pub struct PredictiveEnsemble {
    /// `draws[i][m]`: draw `m` at site `i`.
    pub draws: Vec<Vec<GevParams>>,
}

impl PredictiveEnsemble {
    pub fn from_samples(
        params: &[ModelParams],
        predictor: &SitePredictor,
        variant: &ModelVariant,
    ) -> Result<Self> {
        let mut draws = vec![Vec::with_capacity(params.len()); predictor.sites.len()];
        for p in params {
            for (site, g) in predictor.gev_params(p, variant)?.into_iter().enumerate() {
                draws[site].push(g);
            }
        }
        if params.len() < MIN_STABLE_DRAWS {
            log::warn!("{} posterior draws; LogS estimates are unstable below {MIN_STABLE_DRAWS}", params.len());
        }
        Ok(Self { draws })
    }

    pub fn n_sites(&self) -> usize {
        self.draws.len()
    }

    /// Posterior mean of `f` at every site.
    pub fn mean_of(&self, f: impl Fn(&GevParams) -> f64) -> Vec<f64> {
        self.draws.iter().map(|d| d.iter().map(&f).sum::<f64>() / d.len() as f64).collect()
    }
}

/// True surfaces at evaluation sites, aligned with the holdout dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthSurfaces {
    pub mu: [Vec<f64>; 2],
    pub sigma: [Vec<f64>; 2],
    pub xi: [f64; 2],
}

impl TruthSurfaces {
    /// Holdout part of a simulated truth; both processes share the sites.
    pub fn holdout_of(truth: &SimulatedTruth) -> Self {
        let r = truth.n_train..truth.sites.len();
        Self {
            mu: [truth.mu[0][r.clone()].to_vec(), truth.mu[1][r.clone()].to_vec()],
            sigma: [truth.sigma[0][r.clone()].to_vec(), truth.sigma[1][r].to_vec()],
            xi: truth.xi,
        }
    }

    pub fn holdout_of_rows(rows: &[TruthRow]) -> Result<Self> {
        let hold: Vec<&TruthRow> = rows.iter().filter(|r| r.split == "holdout").collect();
        let first = hold.first().ok_or_else(|| Error::Alignment("truth has no holdout rows".into()))?;
        if hold.iter().enumerate().any(|(i, r)| r.site != i) {
            return Err(Error::Alignment("holdout truth rows are not ordered by site".into()));
        }
        Ok(Self {
            mu: [hold.iter().map(|r| r.mu1).collect(), hold.iter().map(|r| r.mu2).collect()],
            sigma: [hold.iter().map(|r| r.sigma1).collect(), hold.iter().map(|r| r.sigma2).collect()],
            xi: [first.xi1, first.xi2],
        })
    }

    pub fn gev(&self, k: usize, i: usize) -> GevParams {
        GevParams::new(self.mu[k][i], self.sigma[k][i], self.xi[k]).expect("valid truth")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Summary {
    Mean,
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportOptions {
    /// How per-observation CRPS and LogS are aggregated.
    pub summary: Summary,
    pub tail_q: f64,
    /// Upper bound on posterior draws used, taken evenly spaced.
    pub max_draws: usize,
    /// Seed of the predictive samples behind CRPS.
    pub seed: u64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { summary: Summary::Mean, tail_q: 0.05, max_draws: 500, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub variant: String,
    pub process: usize,
    pub value: f64,
}

/// Metric names in report order.
pub const METRICS: [&str; 9] = [
    "rmse_mu", "rmse_sigma", "rmse_rl10", "rmse_rl100", "crps", "logs", "crps_tail", "logs_tail", "rmse_tail",
];

/// Evenly spaced subset of at most `max` items.
pub fn thin_evenly<T: Clone>(items: &[T], max: usize) -> Vec<T> {
    if items.len() <= max || max == 0 {
        return items.to_vec();
    }
    (0..max).map(|j| items[j * items.len() / max].clone()).collect()
}

/// Scores a fitted variant on the holdout sites.
///
/// Surface and return-level rMSEs compare posterior means with `truth` when
/// given. CRPS uses one predictive draw per posterior draw; LogS uses the
/// parameter mixture. Tail sets are the held-out observations of each
/// process, pooled over sites and replicates, at or above their empirical
/// `1 - tail_q` quantile; `rmse_tail` compares them with the posterior-mean
/// `1 - tail_q` quantile at their site.
pub fn report(
    samples: &PosteriorSamples,
    bases: &BasisPair,
    variant: &ModelVariant,
    holdout: &Dataset,
    truth: Option<&TruthSurfaces>,
    opts: &ReportOptions,
) -> Result<Vec<MetricRow>> {
    let params = thin_evenly(&samples.params(), opts.max_draws);
    if params.is_empty() {
        return Err(Error::EmptySample);
    }
    let summarize = |v: &[f64]| match opts.summary {
        Summary::Mean => mean(v),
        Summary::Median => median(v),
    };
    let name = variant.kind.as_str().to_string();
    let mut rows = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for process in [Process::One, Process::Two] {
        let k = process.index();
        let sites = holdout.locations(process);
        let obs = holdout.observations(process);
        if let Some(t) = truth {
            if t.mu[k].len() != sites.len() || t.sigma[k].len() != sites.len() {
                return Err(Error::Alignment(format!(
                    "process {}: {} truth sites but {} holdout sites",
                    process.number(),
                    t.mu[k].len(),
                    sites.len()
                )));
            }
        }
        let predictor = SitePredictor::new(bases, sites, process)?;
        let ens = PredictiveEnsemble::from_samples(&params, &predictor, variant)?;
        let mut push = |metric: &str, value: f64| {
            rows.push(MetricRow { metric: metric.to_string(), variant: name.clone(), process: process.number(), value })
        };
        let rl = |period: f64| move |g: &GevParams| g.return_level(period).unwrap_or(f64::NAN);
        if let Some(t) = truth {
            let n = sites.len();
            let true_of = |f: &dyn Fn(&GevParams) -> f64| (0..n).map(|i| f(&t.gev(k, i))).collect::<Vec<f64>>();
            push("rmse_mu", rmse(&t.mu[k], &ens.mean_of(|g| g.mu()))?);
            push("rmse_sigma", rmse(&t.sigma[k], &ens.mean_of(|g| g.sigma()))?);
            push("rmse_rl10", rmse(&true_of(&rl(10.0)), &ens.mean_of(rl(10.0)))?);
            push("rmse_rl100", rmse(&true_of(&rl(100.0)), &ens.mean_of(rl(100.0)))?);
        }
        let q_tail = ens.mean_of(|g| g.quantile(1.0 - opts.tail_q).unwrap_or(f64::NAN));
        let mut crps = Vec::new();
        let mut logs = Vec::new();
        let mut values = Vec::new();
        let mut site_of = Vec::new();
        for (i, row) in obs.iter().enumerate() {
            let mut pred: Vec<f64> = ens.draws[i].iter().map(|g| g.sample(&mut rng)).collect();
            pred.sort_by(f64::total_cmp);
            for y in row.iter().flatten() {
                crps.push(crps_sorted(&pred, *y));
                logs.push(logs_mixture(&ens.draws[i], *y)?);
                values.push(*y);
                site_of.push(i);
            }
        }
        push("crps", summarize(&crps)?);
        push("logs", summarize(&logs)?);
        let tail = tail_subset(&values, opts.tail_q);
        let pick = |v: &[f64]| tail.iter().map(|&j| v[j]).collect::<Vec<f64>>();
        push("crps_tail", summarize(&pick(&crps))?);
        push("logs_tail", summarize(&pick(&logs))?);
        let tail_pred: Vec<f64> = tail.iter().map(|&j| q_tail[site_of[j]]).collect();
        push("rmse_tail", rmse(&pick(&values), &tail_pred)?);
    }
    Ok(rows)
}

pub const METRIC_HEADER: &str = "metric,variant,process,value";

pub fn write_metrics_csv(rows: &[MetricRow], path: &Path) -> Result<()> {
    let mut out = String::from(METRIC_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{},{:?}\n", r.metric, r.variant, r.process, r.value));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// One row per (metric, process) and one column per variant, in the given
/// variant order. Missing cells are empty.
pub fn paper_table(rows: &[MetricRow], variants: &[&str]) -> String {
    let mut out = format!("metric,process,{}\n", variants.join(","));
    for process in [1, 2] {
        for metric in METRICS {
            let cells: Vec<Option<f64>> = variants
                .iter()
                .map(|v| rows.iter().find(|r| r.metric == metric && r.process == process && r.variant == *v).map(|r| r.value))
                .collect();
            if cells.iter().all(Option::is_none) {
                continue;
            }
            let cells: Vec<String> = cells.iter().map(|c| c.map(|v| format!("{v:.4}")).unwrap_or_default()).collect();
            out.push_str(&format!("{metric},{process},{}\n", cells.join(",")));
        }
    }
    out
}

pub fn write_paper_table(rows: &[MetricRow], variants: &[&str], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(paper_table(rows, variants).as_bytes()).map_err(|e| Error::io(path, e))
}
