//! Joint log-posterior of the two-process spatial GEV hierarchy.
//!
//! Data model: `Z_k(site) ~ GEV(μ_k(site), σ_k(site), ξ_k)` independently given
//! the surfaces. Location `μ = μ0 + A*_μ Φ δ_μ`, scale
//! `σ = exp(σ0 + A*_σ Φ δ_σ)`. Coefficients `(δ1, δ2)` are jointly Gaussian
//! with cross-correlation ρ (see [`crate::crosscov`]).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{eval_matrix, BasisMatrix, BasisPair};
use crate::crosscov::{coef_log_density, latent_surface, CoefCovariance, LmcCoefficients};
use crate::error::{Error, Result};
use crate::gev::{GevParams, XI_EPS};
use crate::{Point, Process};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Block maxima of both processes at their own site sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub locations1: Vec<Point>,
    pub locations2: Vec<Point>,
    /// `obs1[i][j]`: replicate `j` at process-1 site `i`; `None` is missing.
    pub obs1: Vec<Vec<Option<f64>>>,
    pub obs2: Vec<Vec<Option<f64>>>,
}

impl Dataset {
    pub fn new(
        locations1: Vec<Point>,
        locations2: Vec<Point>,
        obs1: Vec<Vec<Option<f64>>>,
        obs2: Vec<Vec<Option<f64>>>,
    ) -> Result<Self> {
        let d = Self { locations1, locations2, obs1, obs2 };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        for (process, locs, obs) in [
            (Process::One, &self.locations1, &self.obs1),
            (Process::Two, &self.locations2, &self.obs2),
        ] {
            let k = process.number();
            if locs.is_empty() {
                return Err(Error::Validation(format!("process {k} has no sites")));
            }
            if locs.len() != obs.len() {
                return Err(Error::DimensionMismatch(format!(
                    "process {k}: {} locations but {} observation rows",
                    locs.len(),
                    obs.len()
                )));
            }
            for (i, row) in obs.iter().enumerate() {
                if !row.iter().any(|v| v.is_some()) {
                    return Err(Error::Validation(format!("process {k} site {i} has no observations")));
                }
                if row.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::Validation(format!("process {k} site {i} has a non-finite observation")));
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.locations1.len()
    }

    pub fn m(&self) -> usize {
        self.locations2.len()
    }

    pub fn locations(&self, process: Process) -> &[Point] {
        match process {
            Process::One => &self.locations1,
            Process::Two => &self.locations2,
        }
    }

    pub fn observations(&self, process: Process) -> &[Vec<Option<f64>>] {
        match process {
            Process::One => &self.obs1,
            Process::Two => &self.obs2,
        }
    }

    /// Non-missing values of process `process`, pooled over sites.
    pub fn pooled(&self, process: Process) -> Vec<f64> {
        self.observations(process).iter().flatten().flatten().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    JointAsymmetric,
    JointSymmetric,
    Independent,
}

impl VariantKind {
    pub const ALL: [VariantKind; 3] = [VariantKind::JointAsymmetric, VariantKind::JointSymmetric, VariantKind::Independent];

    pub fn as_str(&self) -> &'static str {
        match self {
            VariantKind::JointAsymmetric => "joint_asymmetric",
            VariantKind::JointSymmetric => "joint_symmetric",
            VariantKind::Independent => "independent",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Cross-correlations ρ are free parameters.
    pub fn free_rho(&self) -> bool {
        matches!(self, VariantKind::JointAsymmetric)
    }

    /// Coregionalization coefficients a21 are free parameters.
    pub fn free_a21(&self) -> bool {
        !matches!(self, VariantKind::Independent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelVariant {
    pub kind: VariantKind,
    /// Scale surfaces vary in space; otherwise `σ_k = exp(σ0_k)`.
    pub spatial_scale: bool,
}

impl ModelVariant {
    pub fn new(kind: VariantKind, spatial_scale: bool) -> Self {
        Self { kind, spatial_scale }
    }

    /// Pin the parameters this variant holds fixed.
    pub fn constrain(&self, params: &mut ModelParams) {
        if !self.kind.free_rho() {
            params.rho_mu = 0.0;
            params.rho_sigma = 0.0;
        }
        if !self.kind.free_a21() {
            params.lmc_mu.a21 = 0.0;
            params.lmc_sigma.a21 = 0.0;
        }
    }
}

/// Prior hyperparameters. Normal variances, half-normal variance for ξ and
/// inverse-gamma shape/scale for the coefficient variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorSettings {
    pub lmc_var: f64,
    pub offset_var: f64,
    pub xi_var: f64,
    pub tau_shape: f64,
    pub tau_scale: f64,
}

impl Default for PriorSettings {
    fn default() -> Self {
        Self { lmc_var: 100.0, offset_var: 100.0, xi_var: 100.0, tau_shape: 0.5, tau_scale: 2000.0 }
    }
}

/// Full parameter state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub mu_offsets: [f64; 2],
    pub sigma_offsets: [f64; 2],
    pub lmc_mu: LmcCoefficients,
    pub lmc_sigma: LmcCoefficients,
    pub delta_mu: [Vec<f64>; 2],
    pub delta_sigma: [Vec<f64>; 2],
    pub rho_mu: f64,
    pub rho_sigma: f64,
    pub xi: [f64; 2],
    /// Coefficient variances τ² of the location coefficients.
    pub tau_mu: [f64; 2],
    pub tau_sigma: [f64; 2],
}

impl ModelParams {
    /// All-zero coefficients, unit LMC diagonal, unit variances.
    pub fn baseline(dim: usize) -> Self {
        Self {
            mu_offsets: [0.0; 2],
            sigma_offsets: [0.0; 2],
            lmc_mu: LmcCoefficients::identity(),
            lmc_sigma: LmcCoefficients::identity(),
            delta_mu: [vec![0.0; dim], vec![0.0; dim]],
            delta_sigma: [vec![0.0; dim], vec![0.0; dim]],
            rho_mu: 0.0,
            rho_sigma: 0.0,
            xi: [0.1; 2],
            tau_mu: [1.0; 2],
            tau_sigma: [1.0; 2],
        }
    }

    pub fn dim(&self) -> usize {
        self.delta_mu[0].len()
    }

    pub fn mu_cov(&self) -> Result<CoefCovariance> {
        CoefCovariance::new(self.tau_mu[0], self.tau_mu[1], self.rho_mu, self.dim())
    }

    pub fn sigma_cov(&self) -> Result<CoefCovariance> {
        CoefCovariance::new(self.tau_sigma[0], self.tau_sigma[1], self.rho_sigma, self.dim())
    }

    /// Column names of [`ModelParams::to_flat`], in order.
    /// Number of non-coefficient entries at the head of the flat layout.
    pub const N_SCALARS: usize = 18;

    pub fn scalar_names(dim: usize) -> Vec<String> {
        let mut names: Vec<String> = [
            "mu0_1", "mu0_2", "sigma0_1", "sigma0_2", "a11_mu", "a21_mu", "a22_mu", "a11_sigma", "a21_sigma",
            "a22_sigma", "rho_mu", "rho_sigma", "xi_1", "xi_2", "tau2_mu_1", "tau2_mu_2", "tau2_sigma_1",
            "tau2_sigma_2",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for prefix in ["delta_mu1", "delta_mu2", "delta_sigma1", "delta_sigma2"] {
            names.extend((0..dim).map(|m| format!("{prefix}_{m}")));
        }
        names
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = vec![
            self.mu_offsets[0],
            self.mu_offsets[1],
            self.sigma_offsets[0],
            self.sigma_offsets[1],
            self.lmc_mu.a11,
            self.lmc_mu.a21,
            self.lmc_mu.a22,
            self.lmc_sigma.a11,
            self.lmc_sigma.a21,
            self.lmc_sigma.a22,
            self.rho_mu,
            self.rho_sigma,
            self.xi[0],
            self.xi[1],
            self.tau_mu[0],
            self.tau_mu[1],
            self.tau_sigma[0],
            self.tau_sigma[1],
        ];
        for d in self.delta_mu.iter().chain(&self.delta_sigma) {
            v.extend_from_slice(d);
        }
        v
    }

    pub fn from_flat(values: &[f64], dim: usize) -> Result<Self> {
        if values.len() != 18 + 4 * dim {
            return Err(Error::DimensionMismatch(format!(
                "expected {} scalars for dim {dim}, got {}",
                18 + 4 * dim,
                values.len()
            )));
        }
        let v = values;
        let chunk = |k: usize| v[18 + k * dim..18 + (k + 1) * dim].to_vec();
        Ok(Self {
            mu_offsets: [v[0], v[1]],
            sigma_offsets: [v[2], v[3]],
            lmc_mu: LmcCoefficients::new(v[4], v[5], v[6]),
            lmc_sigma: LmcCoefficients::new(v[7], v[8], v[9]),
            rho_mu: v[10],
            rho_sigma: v[11],
            xi: [v[12], v[13]],
            tau_mu: [v[14], v[15]],
            tau_sigma: [v[16], v[17]],
            delta_mu: [chunk(0), chunk(1)],
            delta_sigma: [chunk(2), chunk(3)],
        })
    }
}

/// Stacked sites (process 1 first), basis evaluations at every site and the
/// non-missing observations per site.
#[derive(Debug, Clone)]
pub struct ModelContext {
    pub sites: Vec<Point>,
    pub owner: Vec<Process>,
    pub phi1: BasisMatrix,
    pub phi2: BasisMatrix,
    pub obs: Vec<Vec<f64>>,
    pub n: usize,
}

impl ModelContext {
    pub fn new(data: &Dataset, bases: &BasisPair) -> Result<Self> {
        data.validate()?;
        let sites: Vec<Point> = data.locations1.iter().chain(&data.locations2).copied().collect();
        let owner: Vec<Process> = std::iter::repeat(Process::One)
            .take(data.n())
            .chain(std::iter::repeat(Process::Two).take(data.m()))
            .collect();
        let phi1 = eval_matrix(&sites, &bases.process1)?;
        let phi2 = eval_matrix(&sites, &bases.process2)?;
        let obs = data
            .obs1
            .iter()
            .chain(&data.obs2)
            .map(|row| row.iter().flatten().copied().collect())
            .collect();
        Ok(Self { sites, owner, phi1, phi2, obs, n: data.n() })
    }

    pub fn r(&self) -> usize {
        self.sites.len()
    }

    pub fn dim(&self) -> usize {
        self.phi1.n_cols
    }

    /// Index range of the stacked sites owned by `process`.
    pub fn range(&self, process: Process) -> std::ops::Range<usize> {
        match process {
            Process::One => 0..self.n,
            Process::Two => self.n..self.r(),
        }
    }
}

fn check_finite(params: &ModelParams) -> Result<()> {
    if params.to_flat().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Validation("non-finite parameter value".into()))
    }
}

/// Location and scale at every stacked site.
pub fn surfaces(params: &ModelParams, ctx: &ModelContext, variant: &ModelVariant) -> Result<(Vec<f64>, Vec<f64>)> {
    check_finite(params)?;
    if params.dim() != ctx.dim() || params.delta_mu[1].len() != ctx.dim() {
        return Err(Error::DimensionMismatch(format!(
            "coefficients have length {}, basis has {} functions",
            params.dim(),
            ctx.dim()
        )));
    }
    let mu = latent_surface(
        &ctx.phi1,
        &ctx.phi2,
        &params.delta_mu[0],
        &params.delta_mu[1],
        &params.lmc_mu,
        (params.mu_offsets[0], params.mu_offsets[1]),
        &ctx.owner,
    )?;
    let sigma = if variant.spatial_scale {
        latent_surface(
            &ctx.phi1,
            &ctx.phi2,
            &params.delta_sigma[0],
            &params.delta_sigma[1],
            &params.lmc_sigma,
            (params.sigma_offsets[0], params.sigma_offsets[1]),
            &ctx.owner,
        )?
        .into_iter()
        .map(f64::exp)
        .collect()
    } else {
        ctx.owner.iter().map(|p| params.sigma_offsets[p.index()].exp()).collect()
    };
    Ok((mu, sigma))
}

/// Sum of GEV log densities of `obs` under one parameter triple; `-inf` as
/// soon as a value leaves the support.
#[inline]
pub(crate) fn site_loglik(obs: &[f64], mu: f64, sigma: f64, xi: f64) -> f64 {
    if !(sigma > 0.0) || !sigma.is_finite() || !mu.is_finite() {
        return f64::NEG_INFINITY;
    }
    let ln_sigma = sigma.ln();
    let mut acc = 0.0;
    if xi.abs() < XI_EPS {
        for &x in obs {
            let z = (x - mu) / sigma;
            acc += -ln_sigma - z - (-z).exp();
        }
    } else {
        let inv_xi = 1.0 / xi;
        for &x in obs {
            let xz = xi * ((x - mu) / sigma);
            if xz <= -1.0 {
                return f64::NEG_INFINITY;
            }
            let ln_t = xz.ln_1p();
            acc += -ln_sigma - (1.0 + inv_xi) * ln_t - (-ln_t * inv_xi).exp();
        }
    }
    acc
}

fn site_terms(params: &ModelParams, ctx: &ModelContext, variant: &ModelVariant) -> Option<(Vec<f64>, Vec<f64>)> {
    surfaces(params, ctx, variant).ok()
}

/// Sequential reference evaluation of the data log-likelihood.
pub fn log_likelihood(params: &ModelParams, ctx: &ModelContext, variant: &ModelVariant) -> f64 {
    let Some((mu, sigma)) = site_terms(params, ctx, variant) else {
        return f64::NEG_INFINITY;
    };
    let mut total = 0.0;
    for i in 0..ctx.r() {
        total += site_loglik(&ctx.obs[i], mu[i], sigma[i], params.xi[ctx.owner[i].index()]);
        if total == f64::NEG_INFINITY {
            break;
        }
    }
    total
}

const PAR_CHUNK: usize = 256;

/// Parallel evaluation with a fixed chunking so the reduction order, and the
/// result, do not depend on the thread count.
pub fn log_likelihood_par(params: &ModelParams, ctx: &ModelContext, variant: &ModelVariant) -> f64 {
    let Some((mu, sigma)) = site_terms(params, ctx, variant) else {
        return f64::NEG_INFINITY;
    };
    let idx: Vec<usize> = (0..ctx.r()).collect();
    let partial: Vec<f64> = idx
        .par_chunks(PAR_CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .map(|&i| site_loglik(&ctx.obs[i], mu[i], sigma[i], params.xi[ctx.owner[i].index()]))
                .sum::<f64>()
        })
        .collect();
    partial.into_iter().sum()
}

/// Basis evaluations at new sites of one process, for posterior prediction.
#[derive(Debug, Clone)]
pub struct SitePredictor {
    pub process: Process,
    pub sites: Vec<Point>,
    phi1: BasisMatrix,
    phi2: BasisMatrix,
    /// Whether each site lies inside the support of the coarsest level.
    pub covered: Vec<bool>,
}

impl SitePredictor {
    pub fn new(bases: &BasisPair, sites: &[Point], process: Process) -> Result<Self> {
        let phi1 = eval_matrix(sites, &bases.process1)?;
        let phi2 = eval_matrix(sites, &bases.process2)?;
        let covered = sites
            .iter()
            .map(|s| match process {
                Process::One => bases.process1.covers(s),
                Process::Two => bases.process1.covers(s) && bases.process2.covers(s),
            })
            .collect();
        Ok(Self { process, sites: sites.to_vec(), phi1, phi2, covered })
    }

    /// GEV parameters at every site under one parameter draw.
    pub fn gev_params(&self, params: &ModelParams, variant: &ModelVariant) -> Result<Vec<GevParams>> {
        let owner = vec![self.process; self.sites.len()];
        let mu = latent_surface(
            &self.phi1,
            &self.phi2,
            &params.delta_mu[0],
            &params.delta_mu[1],
            &params.lmc_mu,
            (params.mu_offsets[0], params.mu_offsets[1]),
            &owner,
        )?;
        let k = self.process.index();
        let log_sigma = if variant.spatial_scale {
            latent_surface(
                &self.phi1,
                &self.phi2,
                &params.delta_sigma[0],
                &params.delta_sigma[1],
                &params.lmc_sigma,
                (params.sigma_offsets[0], params.sigma_offsets[1]),
                &owner,
            )?
        } else {
            vec![params.sigma_offsets[k]; self.sites.len()]
        };
        mu.iter()
            .zip(&log_sigma)
            .map(|(&m, &ls)| GevParams::new(m, ls.exp(), params.xi[k]))
            .collect()
    }
}

/// Lanczos approximation (g = 7, 9 terms) of `ln Γ(x)` for `x > 0`.
pub(crate) fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let mut a = COEF[0];
    for (k, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + k as f64);
    }
    0.5 * LN_2PI + (x + 0.5) * t.ln() - t + a.ln()
}

pub(crate) fn normal_lpdf(x: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln()) - 0.5 * x * x / var
}

pub(crate) fn inv_gamma_lpdf(x: f64, shape: f64, scale: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NEG_INFINITY;
    }
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

fn lmc_log_prior(lmc: &LmcCoefficients, var: f64) -> f64 {
    // a11, a22 > 0: normal priors truncated to the positive half-line
    if !(lmc.a11 > 0.0 && lmc.a22 > 0.0) {
        return f64::NEG_INFINITY;
    }
    let ln2 = std::f64::consts::LN_2;
    normal_lpdf(lmc.a11, var) + ln2 + normal_lpdf(lmc.a21, var) + normal_lpdf(lmc.a22, var) + ln2
}

fn rho_log_prior(rho: f64) -> f64 {
    if (-1.0..=1.0).contains(&rho) {
        0.0
    } else {
        f64::NEG_INFINITY
    }
}

/// Log prior density. Scale-surface terms are dropped when the variant
/// keeps scales constant, since those parameters then do not enter the model.
pub fn log_prior(params: &ModelParams, variant: &ModelVariant, hyper: &PriorSettings) -> f64 {
    let mut lp = 0.0;
    for k in 0..2 {
        lp += normal_lpdf(params.mu_offsets[k], hyper.offset_var);
        lp += normal_lpdf(params.sigma_offsets[k], hyper.offset_var);
        if !(params.xi[k] >= 0.0) {
            return f64::NEG_INFINITY;
        }
        lp += std::f64::consts::LN_2 + normal_lpdf(params.xi[k], hyper.xi_var);
    }
    lp += rho_log_prior(params.rho_mu);
    lp += lmc_log_prior(&params.lmc_mu, hyper.lmc_var);
    if !lp.is_finite() {
        return f64::NEG_INFINITY;
    }
    let Ok(cov_mu) = params.mu_cov() else {
        return f64::NEG_INFINITY;
    };
    lp += coef_log_density(&cov_mu, &params.delta_mu[0], &params.delta_mu[1]);
    for &t in &params.tau_mu {
        lp += inv_gamma_lpdf(t, hyper.tau_shape, hyper.tau_scale);
    }
    if variant.spatial_scale {
        lp += rho_log_prior(params.rho_sigma);
        lp += lmc_log_prior(&params.lmc_sigma, hyper.lmc_var);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        let Ok(cov_sigma) = params.sigma_cov() else {
            return f64::NEG_INFINITY;
        };
        lp += coef_log_density(&cov_sigma, &params.delta_sigma[0], &params.delta_sigma[1]);
        for &t in &params.tau_sigma {
            lp += inv_gamma_lpdf(t, hyper.tau_shape, hyper.tau_scale);
        }
    }
    if lp.is_nan() {
        f64::NEG_INFINITY
    } else {
        lp
    }
}

pub fn log_posterior(params: &ModelParams, ctx: &ModelContext, variant: &ModelVariant, hyper: &PriorSettings) -> f64 {
    let ll = log_likelihood(params, ctx, variant);
    if ll == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let lp = log_prior(params, variant, hyper);
    if lp == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    ll + lp
}
