//! Synthetic data for the 20-scenario benchmark.
//!
//! Sites are uniform on `[0, 5]²`. Process 1 carries a Matérn field `w1`;
//! process 2 is negatively coupled to it, `w2(s) = -c w1(s') + sqrt(1 - c²) u(s)`
//! with `s' = s` (symmetric) or `s' = s - h` for a delay vector `h`
//! (asymmetric). Location surfaces are affine in the fields, scale surfaces
//! log-affine when they vary in space.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::Rect;
use crate::error::{Error, Result};
use crate::gev::GevParams;
use crate::ingest::write_dataset_csv;
use crate::model::Dataset;
use crate::{dist, Point};

/// Dense factorization is used up to this many points; larger site sets are
/// generated on a grid and interpolated bilinearly.
pub const DENSE_LIMIT: usize = 3000;
const GRID_SIDE: usize = 48;

/// Share of training sites where process 2 is observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObservedFraction {
    OneIn10,
    OneIn15,
    OneIn25,
    OneIn35,
    OneIn50,
}

impl ObservedFraction {
    pub const ALL: [ObservedFraction; 5] = [
        ObservedFraction::OneIn10,
        ObservedFraction::OneIn15,
        ObservedFraction::OneIn25,
        ObservedFraction::OneIn35,
        ObservedFraction::OneIn50,
    ];

    pub fn denominator(&self) -> u32 {
        match self {
            ObservedFraction::OneIn10 => 10,
            ObservedFraction::OneIn15 => 15,
            ObservedFraction::OneIn25 => 25,
            ObservedFraction::OneIn35 => 35,
            ObservedFraction::OneIn50 => 50,
        }
    }

    pub fn value(&self) -> f64 {
        1.0 / self.denominator() as f64
    }

    /// Accepts `1/k` or the decimal value.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let found = match s.strip_prefix("1/") {
            Some(d) => d.trim().parse::<u32>().ok().and_then(|d| Self::ALL.into_iter().find(|f| f.denominator() == d)),
            None => s.parse::<f64>().ok().and_then(|v| Self::ALL.into_iter().find(|f| (f.value() - v).abs() < 1e-12)),
        };
        found.ok_or_else(|| Error::Validation(format!("observed_fraction {s:?} is not one of 1/10, 1/15, 1/25, 1/35, 1/50")))
    }
}

impl fmt::Display for ObservedFraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "1/{}", self.denominator())
    }
}

impl Serialize for ObservedFraction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ObservedFraction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Self::parse(&raw).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossCovKind {
    Symmetric,
    Asymmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialVariation {
    LocationOnly,
    LocationAndScale,
}

/// Generative constants not fixed by the scenario grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerativeSettings {
    pub domain: Rect,
    pub matern_range: f64,
    pub matern_sill: f64,
    pub matern_smoothness: f64,
    /// Magnitude `c` of the negative coupling between the two fields.
    pub coupling: f64,
    pub delay: Point,
    pub xi: [f64; 2],
    pub mu_offset: [f64; 2],
    pub mu_scale: [f64; 2],
    pub log_sigma_offset: [f64; 2],
    pub log_sigma_scale: [f64; 2],
}

impl Default for GenerativeSettings {
    fn default() -> Self {
        Self {
            domain: Rect::square(0.0, 5.0),
            matern_range: 1.0,
            matern_sill: 1.0,
            matern_smoothness: 1.5,
            coupling: 0.8,
            delay: [0.5, 0.0],
            xi: [0.1, 0.1],
            mu_offset: [10.0, 5.0],
            mu_scale: [2.0, 2.0],
            log_sigma_offset: [0.5, 0.0],
            log_sigma_scale: [0.3, 0.3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub observed_fraction: ObservedFraction,
    pub cross_cov: CrossCovKind,
    pub spatial_variation: SpatialVariation,
    #[serde(default = "default_sites")]
    pub n_train: usize,
    #[serde(default = "default_sites")]
    pub n_holdout: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub generative: GenerativeSettings,
}

fn default_sites() -> usize {
    400
}

fn default_replicates() -> usize {
    10
}

impl ScenarioConfig {
    /// Scenario `number` (1..=20) of the benchmark grid: fractions 1/10 to 1/50
    /// in blocks of four, each block ordered symmetric/asymmetric then
    /// location-only/location-and-scale.
    pub fn from_number(number: usize, seed: u64) -> Result<Self> {
        if !(1..=20).contains(&number) {
            return Err(Error::Validation(format!("scenario must be in 1..=20, got {number}")));
        }
        let k = number - 1;
        let cross_cov = if k % 4 < 2 { CrossCovKind::Symmetric } else { CrossCovKind::Asymmetric };
        let spatial_variation = if k % 2 == 0 { SpatialVariation::LocationOnly } else { SpatialVariation::LocationAndScale };
        Ok(Self {
            observed_fraction: ObservedFraction::ALL[k / 4],
            cross_cov,
            spatial_variation,
            n_train: default_sites(),
            n_holdout: default_sites(),
            replicates: default_replicates(),
            seed,
            generative: GenerativeSettings::default(),
        })
    }

    /// Inverse of [`ScenarioConfig::from_number`].
    pub fn number(&self) -> usize {
        let f = ObservedFraction::ALL.iter().position(|f| *f == self.observed_fraction).unwrap();
        let c = match self.cross_cov {
            CrossCovKind::Symmetric => 0,
            CrossCovKind::Asymmetric => 2,
        };
        let v = match self.spatial_variation {
            SpatialVariation::LocationOnly => 0,
            SpatialVariation::LocationAndScale => 1,
        };
        4 * f + c + v + 1
    }

    pub fn all(seed: u64) -> Vec<Self> {
        (1..=20).map(|k| Self::from_number(k, seed).unwrap()).collect()
    }

    pub fn n_observed2(&self) -> usize {
        (self.n_train as f64 * self.observed_fraction.value()).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.generative;
        if self.n_train == 0 || self.n_holdout == 0 || self.replicates == 0 {
            return Err(Error::Validation("n_train, n_holdout and replicates must be positive".into()));
        }
        if self.n_observed2() == 0 {
            return Err(Error::Validation("no process-2 training site at this fraction".into()));
        }
        if !(0.0..=1.0).contains(&g.coupling) {
            return Err(Error::Validation(format!("coupling must lie in [0, 1], got {}", g.coupling)));
        }
        if !(g.matern_range > 0.0) || !(g.matern_sill >= 0.0) {
            return Err(Error::Validation("matern_range must be > 0 and matern_sill >= 0".into()));
        }
        matern_correlation(0.0, 1.0, g.matern_smoothness)?;
        if g.xi.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("xi must be finite".into()));
        }
        Ok(())
    }
}

/// Matérn correlation at distance `d` for half-integer smoothness, with
/// argument `d / range` (the fields/geoR convention).
pub fn matern_correlation(d: f64, range: f64, smoothness: f64) -> Result<f64> {
    let h = d / range;
    let r = if (smoothness - 0.5).abs() < 1e-12 {
        (-h).exp()
    } else if (smoothness - 1.5).abs() < 1e-12 {
        (1.0 + h) * (-h).exp()
    } else if (smoothness - 2.5).abs() < 1e-12 {
        (1.0 + h + h * h / 3.0) * (-h).exp()
    } else {
        return Err(Error::Validation(format!("Matérn smoothness must be 0.5, 1.5 or 2.5, got {smoothness}")));
    };
    Ok(r)
}

fn matern_cholesky(sites: &[Point], range: f64, sill: f64, smoothness: f64) -> Result<DMatrix<f64>> {
    let n = sites.len();
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let c = sill * matern_correlation(dist(&sites[i], &sites[j]), range, smoothness)?;
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }
    let mut jitter = 1e-10 * sill;
    loop {
        let mut attempt = cov.clone();
        for i in 0..n {
            attempt[(i, i)] += jitter;
        }
        if let Some(ch) = attempt.cholesky() {
            return Ok(ch.unpack());
        }
        jitter *= 10.0;
        if jitter > 1e-4 * sill {
            return Err(Error::Factorization(format!("Matérn covariance on {n} sites is not positive definite")));
        }
    }
}

/// `count` independent zero-mean Matérn field draws at `sites`.
pub fn sample_matern_fields<R: Rng + ?Sized>(
    sites: &[Point],
    range: f64,
    sill: f64,
    smoothness: f64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    matern_correlation(0.0, range, smoothness)?;
    if sill == 0.0 || sites.is_empty() {
        return Ok(vec![vec![0.0; sites.len()]; count]);
    }
    if sites.len() > DENSE_LIMIT {
        return sample_on_grid(sites, range, sill, smoothness, count, rng);
    }
    let l = matern_cholesky(sites, range, sill, smoothness)?;
    Ok((0..count)
        .map(|_| {
            let z = DVector::from_iterator(sites.len(), (0..sites.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
            (&l * z).iter().copied().collect()
        })
        .collect())
}

pub fn sample_matern_field<R: Rng + ?Sized>(
    sites: &[Point],
    range: f64,
    sill: f64,
    smoothness: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(sample_matern_fields(sites, range, sill, smoothness, 1, rng)?.remove(0))
}

fn sample_on_grid<R: Rng + ?Sized>(
    sites: &[Point],
    range: f64,
    sill: f64,
    smoothness: f64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let bb = Rect::bounding(sites).expect("nonempty");
    let (w, h) = (bb.width().max(1e-9), bb.height().max(1e-9));
    let g = GRID_SIDE;
    let grid: Vec<Point> = (0..g * g)
        .map(|k| {
            let (i, j) = (k % g, k / g);
            [bb.xmin + w * i as f64 / (g - 1) as f64, bb.ymin + h * j as f64 / (g - 1) as f64]
        })
        .collect();
    let fields = sample_matern_fields(&grid, range, sill, smoothness, count, rng)?;
    Ok(fields
        .iter()
        .map(|f| {
            sites
                .iter()
                .map(|s| {
                    let fx = ((s[0] - bb.xmin) / w * (g - 1) as f64).clamp(0.0, (g - 1) as f64);
                    let fy = ((s[1] - bb.ymin) / h * (g - 1) as f64).clamp(0.0, (g - 1) as f64);
                    let (i0, j0) = ((fx.floor() as usize).min(g - 2), (fy.floor() as usize).min(g - 2));
                    let (tx, ty) = (fx - i0 as f64, fy - j0 as f64);
                    let at = |i: usize, j: usize| f[j * g + i];
                    (1.0 - tx) * (1.0 - ty) * at(i0, j0)
                        + tx * (1.0 - ty) * at(i0 + 1, j0)
                        + (1.0 - tx) * ty * at(i0, j0 + 1)
                        + tx * ty * at(i0 + 1, j0 + 1)
                })
                .collect()
        })
        .collect())
}

/// Generated surfaces, observations and the process-2 training mask.
/// Site vectors hold the training sites first, then the holdout sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedTruth {
    pub config: ScenarioConfig,
    pub sites: Vec<Point>,
    pub n_train: usize,
    pub mu: [Vec<f64>; 2],
    pub sigma: [Vec<f64>; 2],
    pub xi: [f64; 2],
    /// Latent location fields `w1`, `w2` at the sites.
    pub fields: [Vec<f64>; 2],
    /// `obs[k][i][j]`: replicate `j` of process `k + 1` at site `i`.
    pub obs: [Vec<Vec<f64>>; 2],
    /// Training sites where process 2 is observed.
    pub observed2: Vec<bool>,
}

impl SimulatedTruth {
    pub fn train_sites(&self) -> &[Point] {
        &self.sites[..self.n_train]
    }

    pub fn holdout_sites(&self) -> &[Point] {
        &self.sites[self.n_train..]
    }

    pub fn gev(&self, process: usize, site: usize) -> GevParams {
        GevParams::new(self.mu[process][site], self.sigma[process][site], self.xi[process]).expect("valid truth")
    }

    pub fn return_level(&self, process: usize, site: usize, period: f64) -> f64 {
        self.gev(process, site).return_level(period).expect("period > 1")
    }

    fn rows(&self, process: usize, idx: &[usize]) -> Vec<Vec<Option<f64>>> {
        idx.iter().map(|&i| self.obs[process][i].iter().map(|&v| Some(v)).collect()).collect()
    }

    /// Process 1 at every training site, process 2 at the observed subset.
    pub fn train_dataset(&self) -> Dataset {
        let all: Vec<usize> = (0..self.n_train).collect();
        let seen: Vec<usize> = all.iter().copied().filter(|&i| self.observed2[i]).collect();
        Dataset {
            locations1: all.iter().map(|&i| self.sites[i]).collect(),
            locations2: seen.iter().map(|&i| self.sites[i]).collect(),
            obs1: self.rows(0, &all),
            obs2: self.rows(1, &seen),
        }
    }

    /// Both processes at every holdout site.
    pub fn holdout_dataset(&self) -> Dataset {
        let idx: Vec<usize> = (self.n_train..self.sites.len()).collect();
        Dataset {
            locations1: self.holdout_sites().to_vec(),
            locations2: self.holdout_sites().to_vec(),
            obs1: self.rows(0, &idx),
            obs2: self.rows(1, &idx),
        }
    }
}

/// `count` independent pairs `(w1, w2)` of coupled fields at `sites`.
pub fn coupled_fields<R: Rng + ?Sized>(
    sites: &[Point],
    g: &GenerativeSettings,
    kind: CrossCovKind,
    count: usize,
    rng: &mut R,
) -> Result<Vec<[Vec<f64>; 2]>> {
    let n = sites.len();
    // w1 is needed at the sites and, for the asymmetric coupling, at s - h
    let mut support = sites.to_vec();
    if kind == CrossCovKind::Asymmetric {
        support.extend(sites.iter().map(|s| [s[0] - g.delay[0], s[1] - g.delay[1]]));
    }
    let draws = sample_matern_fields(&support, g.matern_range, g.matern_sill, g.matern_smoothness, 2 * count, rng)?;
    let c = g.coupling;
    let s = (1.0 - c * c).sqrt();
    Ok(draws
        .chunks(2)
        .map(|pair| {
            let (lead, own) = (&pair[0], &pair[1]);
            let src = match kind {
                CrossCovKind::Symmetric => &lead[..n],
                CrossCovKind::Asymmetric => &lead[n..],
            };
            [lead[..n].to_vec(), (0..n).map(|i| -c * src[i] + s * own[i]).collect()]
        })
        .collect())
}

pub fn make_scenario(cfg: &ScenarioConfig) -> Result<SimulatedTruth> {
    cfg.validate()?;
    let g = &cfg.generative;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let total = cfg.n_train + cfg.n_holdout;
    let d = g.domain;
    let sites: Vec<Point> = (0..total)
        .map(|_| [rng.random_range(d.xmin..d.xmax), rng.random_range(d.ymin..d.ymax)])
        .collect();

    let n_surfaces = match cfg.spatial_variation {
        SpatialVariation::LocationOnly => 1,
        SpatialVariation::LocationAndScale => 2,
    };
    let mut fields = coupled_fields(&sites, g, cfg.cross_cov, n_surfaces, &mut rng)?;
    let loc = fields.remove(0);
    let mu = [0, 1].map(|k| loc[k].iter().map(|w| g.mu_offset[k] + g.mu_scale[k] * w).collect::<Vec<f64>>());
    let sigma = match cfg.spatial_variation {
        SpatialVariation::LocationOnly => [0, 1].map(|k| vec![g.log_sigma_offset[k].exp(); total]),
        SpatialVariation::LocationAndScale => {
            let sc = &fields[0];
            [0, 1].map(|k| sc[k].iter().map(|w| (g.log_sigma_offset[k] + g.log_sigma_scale[k] * w).exp()).collect())
        }
    };
    let mut obs: [Vec<Vec<f64>>; 2] = [Vec::with_capacity(total), Vec::with_capacity(total)];
    for i in 0..total {
        for k in 0..2 {
            let gev = GevParams::new(mu[k][i], sigma[k][i], g.xi[k])?;
            obs[k].push((0..cfg.replicates).map(|_| gev.sample(&mut rng)).collect());
        }
    }
    let mut observed2 = vec![false; cfg.n_train];
    for i in sample_indices(&mut rng, cfg.n_train, cfg.n_observed2()).into_iter() {
        observed2[i] = true;
    }
    Ok(SimulatedTruth {
        config: cfg.clone(),
        sites,
        n_train: cfg.n_train,
        mu,
        sigma,
        xi: g.xi,
        fields: loc,
        obs,
        observed2,
    })
}

/// Writes `train.csv`, `holdout.csv`, `truth.csv` and `scenario.json`.
pub fn export_scenario(truth: &SimulatedTruth, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_dataset_csv(&truth.train_dataset(), &dir.join("train.csv"))?;
    write_dataset_csv(&truth.holdout_dataset(), &dir.join("holdout.csv"))?;
    write_truth_csv(truth, &dir.join("truth.csv"))?;
    let cfg = serde_json::to_string_pretty(&truth.config)?;
    let path = dir.join("scenario.json");
    std::fs::write(&path, cfg).map_err(|e| Error::io(&path, e))
}

/// Site-level truth row as exported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub split: String,
    pub site: usize,
    pub x: f64,
    pub y: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub xi1: f64,
    pub xi2: f64,
    pub rl10_1: f64,
    pub rl10_2: f64,
    pub rl100_1: f64,
    pub rl100_2: f64,
}

pub fn truth_rows(truth: &SimulatedTruth) -> Vec<TruthRow> {
    (0..truth.sites.len())
        .map(|i| {
            let (split, site) = if i < truth.n_train { ("train", i) } else { ("holdout", i - truth.n_train) };
            TruthRow {
                split: split.to_string(),
                site,
                x: truth.sites[i][0],
                y: truth.sites[i][1],
                mu1: truth.mu[0][i],
                mu2: truth.mu[1][i],
                sigma1: truth.sigma[0][i],
                sigma2: truth.sigma[1][i],
                xi1: truth.xi[0],
                xi2: truth.xi[1],
                rl10_1: truth.return_level(0, i, 10.0),
                rl10_2: truth.return_level(1, i, 10.0),
                rl100_1: truth.return_level(0, i, 100.0),
                rl100_2: truth.return_level(1, i, 100.0),
            }
        })
        .collect()
}

pub fn write_truth_csv(truth: &SimulatedTruth, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse { path: path.into(), message: e.to_string() })?;
    for row in truth_rows(truth) {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_truth_csv(path: &Path) -> Result<Vec<TruthRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Parse { path: path.into(), message: e.to_string() })?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
