//! Adaptive blocked random-walk Metropolis.
//!
//! The model is sampled in unconstrained, non-centred coordinates: standard
//! normal coefficient vectors `z`, `log a11`, the identified coupling
//! `β = a21 τ1 + a22 τ2 ρ`, `log(a22 τ2 sqrt(1 - ρ²))`, `logit((ρ + 1) / 2)`,
//! `log ξ` and `log τ²`. The target in these coordinates is the log posterior
//! plus the log-Jacobian of the map back to model parameters.
//!
//! During burn-in each block adapts a proposal covariance from its own
//! history and a global scale toward the target acceptance rate. Both are
//! frozen afterwards.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisMatrix, BasisPair};
use crate::error::{Error, Result};
use crate::model::{log_posterior, log_prior, site_loglik, Dataset, ModelContext, ModelParams, ModelVariant, PriorSettings};
use crate::Process;

/// Location or scale surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surface {
    Mu,
    Sigma,
}

impl Surface {
    fn index(self) -> usize {
        match self {
            Surface::Mu => 0,
            Surface::Sigma => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Surface::Mu => "mu",
            Surface::Sigma => "sigma",
        }
    }

    const BOTH: [Surface; 2] = [Surface::Mu, Surface::Sigma];
}

/// Parameter block of the model sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockId {
    /// Coefficients of one resolution level (1-based) of one process.
    Coef { surface: Surface, process: Process, level: usize },
    /// Joint rescaling of one process's coefficients against its loading.
    Scale { surface: Surface, process: Process },
    /// Moves an offset against the near-constant combination of its coefficients.
    Shift { surface: Surface, process: Process },
    /// Moves the cross loading against the process-2 coefficients.
    Tilt(Surface),
    /// Moves `a22 τ2 ρ` at fixed `a21 τ1` and fixed process-2 surface.
    Lag(Surface),
    /// `μ0_k` and `σ0_k`.
    Offsets(Process),
    /// `a11` together with the coupling parameters `(a21, a22, ρ)`.
    Lmc(Surface),
    Shape(Process),
    /// `τ²` of both processes.
    Variance(Surface),
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockId::Coef { surface, process, level } => write!(f, "coef_{}_p{}_l{}", surface.name(), process.number(), level),
            BlockId::Scale { surface, process } => write!(f, "scale_{}_p{}", surface.name(), process.number()),
            BlockId::Shift { surface, process } => write!(f, "shift_{}_p{}", surface.name(), process.number()),
            BlockId::Tilt(s) => write!(f, "tilt_{}", s.name()),
            BlockId::Lag(s) => write!(f, "lag_{}", s.name()),
            BlockId::Offsets(p) => write!(f, "offsets_p{}", p.number()),
            BlockId::Lmc(s) => write!(f, "lmc_{}", s.name()),
            BlockId::Shape(p) => write!(f, "xi_p{}", p.number()),
            BlockId::Variance(s) => write!(f, "tau_{}", s.name()),
        }
    }
}

impl FromStr for BlockId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Validation(format!("unknown block {s:?}"));
        let surface = |t: &str| match t {
            "mu" => Ok(Surface::Mu),
            "sigma" => Ok(Surface::Sigma),
            _ => Err(bad()),
        };
        let process = |t: &str| t.strip_prefix('p').and_then(|d| d.parse().ok()).and_then(Process::from_number).ok_or_else(bad);
        let parts: Vec<&str> = s.split('_').collect();
        match parts.as_slice() {
            ["coef", sf, p, l] => Ok(BlockId::Coef {
                surface: surface(sf)?,
                process: process(p)?,
                level: l.strip_prefix('l').and_then(|d| d.parse().ok()).ok_or_else(bad)?,
            }),
            ["scale", sf, p] => Ok(BlockId::Scale { surface: surface(sf)?, process: process(p)? }),
            ["shift", sf, p] => Ok(BlockId::Shift { surface: surface(sf)?, process: process(p)? }),
            ["tilt", sf] => Ok(BlockId::Tilt(surface(sf)?)),
            ["lag", sf] => Ok(BlockId::Lag(surface(sf)?)),
            ["offsets", p] => Ok(BlockId::Offsets(process(p)?)),
            ["lmc", sf] => Ok(BlockId::Lmc(surface(sf)?)),
            ["xi", p] => Ok(BlockId::Shape(process(p)?)),
            ["tau", sf] => Ok(BlockId::Variance(surface(sf)?)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for BlockId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BlockId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_iter: usize,
    pub n_burnin: usize,
    pub thin: usize,
    pub n_chains: usize,
    pub seed: u64,
    /// Update order; `None` uses every block of the variant.
    pub blocks: Option<Vec<BlockId>>,
    pub target_accept: f64,
    pub adapt_window: usize,
    /// Sample the coefficient variances τ² instead of holding them at 1.
    pub estimate_tau: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_iter: 6000,
            n_burnin: 3000,
            thin: 3,
            n_chains: 2,
            seed: 1,
            blocks: None,
            target_accept: 0.25,
            adapt_window: 50,
            estimate_tau: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Validation(m.to_string()));
        if self.n_iter == 0 || self.thin == 0 || self.adapt_window == 0 {
            return fail("n_iter, thin and adapt_window must be positive");
        }
        if self.n_burnin >= self.n_iter {
            return fail("n_burnin must be smaller than n_iter");
        }
        if self.n_chains == 0 {
            return fail("n_chains must be at least 1");
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return fail("target_accept must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn retained_per_chain(&self) -> usize {
        (self.n_iter - self.n_burnin) / self.thin
    }
}

/// A density over a flat coordinate vector that can score block moves.
pub trait BlockTarget {
    fn state(&self) -> &[f64];
    /// Log density of the current state.
    fn current(&self) -> f64;
    /// Log density with the `coords` entries replaced by `values`. The
    /// evaluation is kept pending until [`BlockTarget::accept`].
    fn propose(&mut self, block: usize, coords: &[usize], values: &[f64]) -> f64;
    fn accept(&mut self);
    /// Direction of a [`MoveKind::Shift`] block, one entry per coordinate.
    fn direction(&self, block: usize, out: &mut [f64]) {
        let _ = (block, out);
        panic!("target has no shift directions");
    }
    /// New values of a [`MoveKind::Custom`] block for step `eps`; returns
    /// the log-Jacobian of the map.
    fn transform(&self, block: usize, eps: f64, out: &mut [f64]) -> f64 {
        let _ = (block, eps, out);
        panic!("target has no custom moves");
    }
    /// Value recorded in the per-iteration trace.
    fn trace_value(&self) -> f64 {
        self.current()
    }
}

#[derive(Debug, Clone)]
pub struct BlockSpec {
    pub name: String,
    /// Every coordinate the move may change.
    pub coords: Vec<usize>,
    pub init_sd: Vec<f64>,
    pub kind: MoveKind,
}

#[derive(Debug, Clone)]
pub enum MoveKind {
    RandomWalk,
    Scale(ScaleMove),
    /// `coords += ε d` along a state-dependent direction `d` that must not
    /// depend on the block's own coordinates.
    Shift,
    /// Target-defined involutive map in one step `ε` (`T_{-ε} = T_ε⁻¹`).
    Custom,
}

/// Draws one `ε ~ N(0, s²)` and maps `shift += ε`, `up *= e^ε`,
/// `down *= e^-ε`; the log-Jacobian `(|up| - |down|) ε` enters the
/// acceptance ratio.
#[derive(Debug, Clone, Default)]
pub struct ScaleMove {
    pub shift: Vec<usize>,
    pub up: Vec<usize>,
    pub down: Vec<usize>,
}

impl BlockSpec {
    pub fn random_walk(name: impl Into<String>, coords: Vec<usize>, init_sd: Vec<f64>) -> Self {
        Self { name: name.into(), coords, init_sd, kind: MoveKind::RandomWalk }
    }

    pub fn shift(name: impl Into<String>, coords: Vec<usize>, init_sd: f64) -> Self {
        Self { name: name.into(), coords, init_sd: vec![init_sd], kind: MoveKind::Shift }
    }

    pub fn custom(name: impl Into<String>, coords: Vec<usize>, init_sd: f64) -> Self {
        Self { name: name.into(), coords, init_sd: vec![init_sd], kind: MoveKind::Custom }
    }

    pub fn scaling(name: impl Into<String>, mv: ScaleMove, init_sd: f64) -> Self {
        let coords = mv.shift.iter().chain(&mv.up).chain(&mv.down).copied().collect();
        Self { name: name.into(), coords, init_sd: vec![init_sd], kind: MoveKind::Scale(mv) }
    }

    fn is_random_walk(&self) -> bool {
        matches!(self.kind, MoveKind::RandomWalk)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Schedule {
    pub n_iter: usize,
    pub n_burnin: usize,
    pub thin: usize,
    pub target_accept: f64,
    pub adapt_window: usize,
}

impl From<&SamplerConfig> for Schedule {
    fn from(c: &SamplerConfig) -> Self {
        Self { n_iter: c.n_iter, n_burnin: c.n_burnin, thin: c.thin, target_accept: c.target_accept, adapt_window: c.adapt_window }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    pub block: String,
    /// Acceptance rate after burn-in.
    pub accept_rate: f64,
    pub scale_at_freeze: f64,
    pub final_scale: f64,
}

#[derive(Debug, Clone)]
pub struct RawChain {
    /// 1-based iteration numbers of retained states.
    pub iterations: Vec<usize>,
    pub states: Vec<Vec<f64>>,
    pub trace: Vec<f64>,
    pub blocks: Vec<BlockStats>,
}

struct Adapter {
    dim: usize,
    chol: DMatrix<f64>,
    log_scale: f64,
    win_acc: usize,
    win_prop: usize,
    windows: usize,
    acc: usize,
    prop: usize,
    count: usize,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
    learned: bool,
}

impl Adapter {
    fn new(init_sd: &[f64]) -> Self {
        let d = init_sd.len();
        Self {
            dim: d,
            chol: DMatrix::from_diagonal(&DVector::from_column_slice(init_sd)),
            log_scale: 0.0,
            win_acc: 0,
            win_prop: 0,
            windows: 0,
            acc: 0,
            prop: 0,
            count: 0,
            mean: DVector::zeros(d),
            m2: DMatrix::zeros(d, d),
            learned: false,
        }
    }

    fn observe(&mut self, x: &DVector<f64>) {
        self.count += 1;
        let delta = x - &self.mean;
        self.mean += &delta / self.count as f64;
        let delta2 = x - &self.mean;
        self.m2 += &delta * delta2.transpose();
    }

    fn reset_history(&mut self) {
        self.count = 0;
        self.mean.fill(0.0);
        self.m2.fill(0.0);
    }

    fn end_window(&mut self, target: f64) {
        self.windows += 1;
        let rate = self.win_acc as f64 / self.win_prop.max(1) as f64;
        self.log_scale += (rate - target) / (self.windows as f64).sqrt();
        self.log_scale = self.log_scale.clamp(-12.0, 6.0);
        self.win_acc = 0;
        self.win_prop = 0;
        let d = self.dim;
        if self.count >= (2 * d).max(20) {
            let cov = &self.m2 / (self.count - 1) as f64;
            let shrink = (d as f64 / self.count as f64).clamp(0.05, 1.0);
            let mut c = cov.clone() * (1.0 - shrink);
            for i in 0..d {
                c[(i, i)] = cov[(i, i)] + 1e-12;
            }
            c *= 2.38 * 2.38 / d as f64;
            if let Some(ch) = c.cholesky() {
                self.chol = ch.unpack();
                if !self.learned {
                    self.learned = true;
                    self.log_scale = 0.0;
                }
            }
        }
    }
}

/// Runs one chain of blocked random-walk Metropolis on `target`.
pub fn run_chain<T: BlockTarget, R: Rng>(target: &mut T, blocks: &[BlockSpec], sched: &Schedule, rng: &mut R) -> RawChain {
    let mut adapters: Vec<Adapter> = blocks.iter().map(|b| Adapter::new(&b.init_sd)).collect();
    debug_assert!(blocks.iter().all(|b| !b.is_random_walk() || b.init_sd.len() == b.coords.len()));
    let mut frozen = vec![0.0; blocks.len()];
    let mut out = RawChain { iterations: Vec::new(), states: Vec::new(), trace: Vec::with_capacity(sched.n_iter), blocks: Vec::new() };
    let hist_start = sched.n_burnin / 4;
    let hist_reset = sched.n_burnin / 2;
    let mut values = Vec::new();
    let mut dir = Vec::new();
    for it in 0..sched.n_iter {
        let burning = it < sched.n_burnin;
        if it == sched.n_burnin {
            for (f, a) in frozen.iter_mut().zip(&adapters) {
                *f = a.log_scale.exp();
            }
        }
        for (b, spec) in blocks.iter().enumerate() {
            let a = &mut adapters[b];
            let eps = DVector::from_iterator(a.dim, (0..a.dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let step = (&a.chol * eps) * a.log_scale.exp();
            let state = target.state();
            values.clear();
            let mut log_jac = 0.0;
            match &spec.kind {
                MoveKind::RandomWalk => values.extend(spec.coords.iter().zip(step.iter()).map(|(&c, s)| state[c] + s)),
                MoveKind::Shift => {
                    dir.resize(spec.coords.len(), 0.0);
                    target.direction(b, &mut dir);
                    let state = target.state();
                    values.extend(spec.coords.iter().zip(&dir).map(|(&c, d)| state[c] + step[0] * d));
                }
                MoveKind::Custom => {
                    values.resize(spec.coords.len(), 0.0);
                    log_jac = target.transform(b, step[0], &mut values);
                }
                MoveKind::Scale(mv) => {
                    let e = step[0];
                    let (up, down) = (e.exp(), (-e).exp());
                    values.extend(mv.shift.iter().map(|&c| state[c] + e));
                    values.extend(mv.up.iter().map(|&c| state[c] * up));
                    values.extend(mv.down.iter().map(|&c| state[c] * down));
                    log_jac = (mv.up.len() as f64 - mv.down.len() as f64) * e;
                }
            }
            let proposed = target.propose(b, &spec.coords, &values);
            let log_u = rng.random::<f64>().ln();
            let accepted = proposed.is_finite() && log_u < proposed + log_jac - target.current();
            if accepted {
                target.accept();
            }
            if burning {
                a.win_prop += 1;
                a.win_acc += accepted as usize;
            } else {
                a.prop += 1;
                a.acc += accepted as usize;
            }
        }
        out.trace.push(target.trace_value());
        if burning {
            if it == hist_reset {
                adapters.iter_mut().for_each(Adapter::reset_history);
            }
            if it >= hist_start {
                let state = target.state();
                for (a, spec) in adapters.iter_mut().zip(blocks).filter(|(_, s)| s.is_random_walk()) {
                    let x = DVector::from_iterator(a.dim, spec.coords.iter().map(|&c| state[c]));
                    a.observe(&x);
                }
            }
            if (it + 1) % sched.adapt_window == 0 {
                adapters.iter_mut().for_each(|a| a.end_window(sched.target_accept));
            }
        } else if (it + 1 - sched.n_burnin) % sched.thin == 0 {
            out.iterations.push(it + 1);
            out.states.push(target.state().to_vec());
        }
    }
    out.blocks = blocks
        .iter()
        .zip(&adapters)
        .zip(&frozen)
        .map(|((spec, a), &f)| {
            let final_scale = a.log_scale.exp();
            assert_eq!(f.to_bits(), final_scale.to_bits(), "step size of {} changed after burn-in", spec.name);
            BlockStats {
                block: spec.name.clone(),
                accept_rate: a.acc as f64 / a.prop.max(1) as f64,
                scale_at_freeze: f,
                final_scale,
            }
        })
        .collect();
    out
}

/// Private random stream of chain `chain` under `seed`.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

// ---------------------------------------------------------------------------
// model coordinates

const SCALARS_PER_SURFACE: usize = 4; // log a11, β, γ, η

/// Positions of the sampler coordinates in the flat state vector.
#[derive(Debug, Clone)]
struct Layout {
    p: usize,
}

impl Layout {
    fn z(&self, s: usize, k: usize) -> std::ops::Range<usize> {
        let start = (2 * s + k) * self.p;
        start..start + self.p
    }
    fn offset(&self, s: usize, k: usize) -> usize {
        4 * self.p + 2 * s + k
    }
    fn lmc(&self, s: usize, j: usize) -> usize {
        4 * self.p + 4 + SCALARS_PER_SURFACE * s + j
    }
    fn log_xi(&self, k: usize) -> usize {
        4 * self.p + 12 + k
    }
    fn log_tau(&self, s: usize, k: usize) -> usize {
        4 * self.p + 14 + 2 * s + k
    }
    fn len(&self) -> usize {
        4 * self.p + 18
    }
}

const LA11: usize = 0;
const BETA: usize = 1;
const GAMMA: usize = 2;
const ETA: usize = 3;

fn decode(layout: &Layout, th: &[f64], out: &mut ModelParams) {
    for s in 0..2 {
        let t1_sq = th[layout.log_tau(s, 0)].exp();
        let t2_sq = th[layout.log_tau(s, 1)].exp();
        let (t1, t2) = (t1_sq.sqrt(), t2_sq.sqrt());
        let half = 0.5 * th[layout.lmc(s, ETA)];
        let rho = half.tanh();
        let c = 1.0 / half.cosh();
        let a11 = th[layout.lmc(s, LA11)].exp();
        let g = th[layout.lmc(s, GAMMA)].exp();
        let a22 = g / (t2 * c);
        let a21 = (th[layout.lmc(s, BETA)] - a22 * t2 * rho) / t1;
        let (z1, z2) = (&th[layout.z(s, 0)], &th[layout.z(s, 1)]);
        let (lmc, delta, tau, rho_out, offsets) = if s == 0 {
            (&mut out.lmc_mu, &mut out.delta_mu, &mut out.tau_mu, &mut out.rho_mu, &mut out.mu_offsets)
        } else {
            (&mut out.lmc_sigma, &mut out.delta_sigma, &mut out.tau_sigma, &mut out.rho_sigma, &mut out.sigma_offsets)
        };
        lmc.a11 = a11;
        lmc.a21 = a21;
        lmc.a22 = a22;
        *rho_out = rho;
        *tau = [t1_sq, t2_sq];
        *offsets = [th[layout.offset(s, 0)], th[layout.offset(s, 1)]];
        let [d1, d2] = delta;
        d1.resize(layout.p, 0.0);
        d2.resize(layout.p, 0.0);
        for m in 0..layout.p {
            d1[m] = t1 * z1[m];
            d2[m] = t2 * (rho * z1[m] + c * z2[m]);
        }
    }
    out.xi = [th[layout.log_xi(0)].exp(), th[layout.log_xi(1)].exp()];
}

fn encode(layout: &Layout, params: &ModelParams) -> Result<Vec<f64>> {
    let mut th = vec![0.0; layout.len()];
    for s in 0..2 {
        let (lmc, delta, tau, rho, offsets) = if s == 0 {
            (&params.lmc_mu, &params.delta_mu, &params.tau_mu, params.rho_mu, &params.mu_offsets)
        } else {
            (&params.lmc_sigma, &params.delta_sigma, &params.tau_sigma, params.rho_sigma, &params.sigma_offsets)
        };
        if !(lmc.a11 > 0.0 && lmc.a22 > 0.0 && tau[0] > 0.0 && tau[1] > 0.0 && rho.abs() < 1.0) {
            return Err(Error::InitializationFailed("start lies on the parameter boundary".into()));
        }
        let (t1, t2) = (tau[0].sqrt(), tau[1].sqrt());
        let c = (1.0 - rho * rho).sqrt();
        th[layout.log_tau(s, 0)] = tau[0].ln();
        th[layout.log_tau(s, 1)] = tau[1].ln();
        th[layout.lmc(s, LA11)] = lmc.a11.ln();
        th[layout.lmc(s, BETA)] = lmc.a21 * t1 + lmc.a22 * t2 * rho;
        th[layout.lmc(s, GAMMA)] = (lmc.a22 * t2 * c).ln();
        th[layout.lmc(s, ETA)] = 2.0 * rho.atanh();
        th[layout.offset(s, 0)] = offsets[0];
        th[layout.offset(s, 1)] = offsets[1];
        for m in 0..layout.p {
            let z1 = delta[0][m] / t1;
            th[layout.z(s, 0).start + m] = z1;
            th[layout.z(s, 1).start + m] = (delta[1][m] / t2 - rho * z1) / c;
        }
    }
    for k in 0..2 {
        if !(params.xi[k] > 0.0) {
            return Err(Error::InitializationFailed("ξ must be positive at the start".into()));
        }
        th[layout.log_xi(k)] = params.xi[k].ln();
    }
    Ok(th)
}

/// `argmin_w |Φ w - 1|² + |w|²` over the given rows.
fn ridge_ones(rows: &[Vec<(u32, f64)>], p: usize) -> Vec<f64> {
    let mut gram = DMatrix::<f64>::identity(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    for row in rows {
        for &(a, va) in row {
            rhs[a as usize] += va;
            for &(b, vb) in row {
                gram[(a as usize, b as usize)] += va * vb;
            }
        }
    }
    let chol = gram.cholesky().expect("identity-shifted gram matrix is positive definite");
    chol.solve(&rhs).iter().copied().collect()
}

/// Row-wise nonzero basis entries.
fn sparse_rows(phi: &BasisMatrix, rows: std::ops::Range<usize>) -> Vec<Vec<(u32, f64)>> {
    rows.map(|i| {
        phi.row(i)
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(m, v)| (m as u32, *v))
            .collect()
    })
    .collect()
}

#[derive(Clone)]
struct State {
    theta: Vec<f64>,
    params: ModelParams,
    /// `v[s][k]`: `Φ_k δ_k` of surface `s`; process-2 vectors cover process-2 sites only.
    v: [[Vec<f64>; 2]; 2],
    site_ll: Vec<f64>,
    ll: [f64; 2],
    lprior: f64,
    logj: f64,
}

impl State {
    fn post(&self) -> f64 {
        self.ll[0] + self.ll[1] + self.lprior
    }
    fn total(&self) -> f64 {
        self.post() + self.logj
    }
}

struct ModelTarget<'a> {
    ctx: &'a ModelContext,
    variant: ModelVariant,
    hyper: PriorSettings,
    layout: Layout,
    estimate_tau: bool,
    rows1: Vec<Vec<(u32, f64)>>,
    rows2: Vec<Vec<(u32, f64)>>,
    /// Processes whose likelihood each block touches.
    affects: Vec<[bool; 2]>,
    ids: Vec<BlockId>,
    /// Coefficient vectors whose basis expansion is close to 1 at each process's sites.
    flat: [Vec<f64>; 2],
    cur: State,
    pend: State,
    pend_total: f64,
}

impl<'a> ModelTarget<'a> {
    fn new(
        ctx: &'a ModelContext,
        variant: ModelVariant,
        hyper: PriorSettings,
        estimate_tau: bool,
        theta: Vec<f64>,
        blocks: &[BlockId],
    ) -> Self {
        let layout = Layout { p: ctx.dim() };
        let rows1 = sparse_rows(&ctx.phi1, 0..ctx.r());
        let rows2 = sparse_rows(&ctx.phi2, ctx.range(Process::Two));
        let affects = blocks
            .iter()
            .map(|b| match b {
                BlockId::Coef { process: Process::Two, .. }
                | BlockId::Scale { process: Process::Two, .. }
                | BlockId::Shift { process: Process::Two, .. }
                | BlockId::Tilt(_)
                | BlockId::Lag(_) => [false, true],
                BlockId::Offsets(p) | BlockId::Shape(p) => [p.index() == 0, p.index() == 1],
                _ => [true, true],
            })
            .collect();
        let mut params = ModelParams::baseline(layout.p);
        decode(&layout, &theta, &mut params);
        let r = ctx.r();
        let m = ctx.range(Process::Two).len();
        let cur = State {
            theta,
            params,
            v: [[vec![0.0; r], vec![0.0; m]], [vec![0.0; r], vec![0.0; m]]],
            site_ll: vec![0.0; r],
            ll: [0.0; 2],
            lprior: 0.0,
            logj: 0.0,
        };
        let flat = [ridge_ones(&rows1[..ctx.n], layout.p), ridge_ones(&rows2, layout.p)];
        let mut t = Self {
            ctx,
            variant,
            hyper,
            layout,
            estimate_tau,
            rows1,
            rows2,
            affects,
            ids: blocks.to_vec(),
            flat,
            pend: cur.clone(),
            cur,
            pend_total: 0.0,
        };
        t.refresh_all();
        t
    }

    fn surfaces_active(&self) -> usize {
        if self.variant.spatial_scale {
            2
        } else {
            1
        }
    }

    fn log_jacobian(&self, th: &[f64], params: &ModelParams) -> f64 {
        let l = &self.layout;
        let p = l.p as f64;
        let mut j = th[l.log_xi(0)] + th[l.log_xi(1)];
        for s in 0..self.surfaces_active() {
            let (lmc, tau) = if s == 0 { (&params.lmc_mu, &params.tau_mu) } else { (&params.lmc_sigma, &params.tau_sigma) };
            let half = 0.5 * th[l.lmc(s, ETA)];
            let ln_c = -half.cosh().ln();
            let (ln_t1, ln_t2) = (0.5 * th[l.log_tau(s, 0)], 0.5 * th[l.log_tau(s, 1)]);
            debug_assert!((tau[0].ln() - 2.0 * ln_t1).abs() < 1e-9);
            j += th[l.lmc(s, LA11)] + lmc.a22.ln() + p * ln_t1 + p * (ln_t2 + ln_c);
            if self.variant.kind.free_a21() {
                j -= ln_t1;
            }
            if self.variant.kind.free_rho() {
                j += 2.0 * ln_c - std::f64::consts::LN_2;
            }
            if self.estimate_tau {
                j += th[l.log_tau(s, 0)] + th[l.log_tau(s, 1)];
            }
        }
        j
    }

    fn latent(rows: &[Vec<(u32, f64)>], delta: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(rows) {
            let mut acc = 0.0;
            for &(m, v) in row {
                acc += v * delta[m as usize];
            }
            *o = acc;
        }
    }

    fn site_values(&self, st: &State, i: usize) -> (f64, f64) {
        let ctx = self.ctx;
        let p = &st.params;
        let n = ctx.n;
        let (mu, log_sigma);
        if i < n {
            mu = p.mu_offsets[0] + p.lmc_mu.a11 * st.v[0][0][i];
            log_sigma = if self.variant.spatial_scale {
                p.sigma_offsets[0] + p.lmc_sigma.a11 * st.v[1][0][i]
            } else {
                p.sigma_offsets[0]
            };
        } else {
            mu = p.mu_offsets[1] + p.lmc_mu.a21 * st.v[0][0][i] + p.lmc_mu.a22 * st.v[0][1][i - n];
            log_sigma = if self.variant.spatial_scale {
                p.sigma_offsets[1] + p.lmc_sigma.a21 * st.v[1][0][i] + p.lmc_sigma.a22 * st.v[1][1][i - n]
            } else {
                p.sigma_offsets[1]
            };
        }
        (mu, log_sigma.exp())
    }

    /// Fills the pending state's likelihood for `process`; `-inf` stops early.
    fn eval_process(&mut self, k: usize) {
        let range = self.ctx.range(if k == 0 { Process::One } else { Process::Two });
        let xi = self.pend.params.xi[k];
        let mut total = 0.0;
        for i in range {
            let (mu, sigma) = self.site_values(&self.pend, i);
            let ll = site_loglik(&self.ctx.obs[i], mu, sigma, xi);
            self.pend.site_ll[i] = ll;
            total += ll;
            if ll == f64::NEG_INFINITY {
                break;
            }
        }
        self.pend.ll[k] = total;
    }

    fn refresh_all(&mut self) {
        for s in 0..2 {
            let d = if s == 0 { &self.pend.params.delta_mu } else { &self.pend.params.delta_sigma };
            let (d0, d1) = (d[0].clone(), d[1].clone());
            Self::latent(&self.rows1, &d0, &mut self.pend.v[s][0]);
            Self::latent(&self.rows2, &d1, &mut self.pend.v[s][1]);
        }
        self.eval_process(0);
        self.eval_process(1);
        self.pend.lprior = log_prior(&self.pend.params, &self.variant, &self.hyper);
        self.pend.logj = self.log_jacobian(&self.pend.theta, &self.pend.params);
        self.cur = self.pend.clone();
    }
}

impl BlockTarget for ModelTarget<'_> {
    fn state(&self) -> &[f64] {
        &self.cur.theta
    }

    fn direction(&self, block: usize, out: &mut [f64]) {
        let (l, th) = (&self.layout, &self.cur.theta);
        out[0] = 1.0;
        let (surface, process) = match self.ids[block] {
            BlockId::Shift { surface, process } => (surface, process),
            BlockId::Tilt(surface) => {
                let s = surface.index();
                let load = th[l.lmc(s, GAMMA)].exp();
                for (o, z) in out[1..].iter_mut().zip(&th[l.z(s, 0)]) {
                    *o = -z / load;
                }
                return;
            }
            other => panic!("block {other} is not a shift move"),
        };
        let s = surface.index();
        match process {
            Process::One => {
                let load = (th[l.lmc(s, LA11)] + 0.5 * th[l.log_tau(s, 0)]).exp();
                for (o, w) in out[1..=l.p].iter_mut().zip(&self.flat[0]) {
                    *o = -w / load;
                }
                out[l.p + 1] = th[l.lmc(s, BETA)] / load;
            }
            Process::Two => {
                let load = th[l.lmc(s, GAMMA)].exp();
                for (o, w) in out[1..=l.p].iter_mut().zip(&self.flat[1]) {
                    *o = -w / load;
                }
            }
        }
    }

    fn transform(&self, block: usize, eps: f64, out: &mut [f64]) -> f64 {
        let BlockId::Lag(surface) = self.ids[block] else {
            panic!("block {} is not a custom move", self.ids[block]);
        };
        let (l, th, s) = (&self.layout, &self.cur.theta, surface.index());
        // κ = a22 τ2 ρ = e^γ sinh(η/2)
        let load = th[l.lmc(s, GAMMA)].exp();
        let half = 0.5 * th[l.lmc(s, ETA)];
        let half_new = (half.sinh() + eps / load).asinh();
        out[0] = th[l.lmc(s, BETA)] + eps;
        out[1] = 2.0 * half_new;
        for ((o, z2), z1) in out[2..].iter_mut().zip(&th[l.z(s, 1)]).zip(&th[l.z(s, 0)]) {
            *o = z2 - eps * z1 / load;
        }
        half.cosh().ln() - half_new.cosh().ln()
    }

    fn current(&self) -> f64 {
        let t = self.cur.total();
        if t.is_nan() {
            f64::NEG_INFINITY
        } else {
            t
        }
    }

    fn trace_value(&self) -> f64 {
        self.cur.post()
    }

    fn propose(&mut self, block: usize, coords: &[usize], values: &[f64]) -> f64 {
        self.pend.theta.copy_from_slice(&self.cur.theta);
        for (&c, &v) in coords.iter().zip(values) {
            self.pend.theta[c] = v;
        }
        decode(&self.layout, &self.pend.theta, &mut self.pend.params);
        for s in 0..2 {
            let (new, old) = if s == 0 {
                (&self.pend.params.delta_mu, &self.cur.params.delta_mu)
            } else {
                (&self.pend.params.delta_sigma, &self.cur.params.delta_sigma)
            };
            for k in 0..2 {
                if new[k] == old[k] {
                    self.pend.v[s][k].copy_from_slice(&self.cur.v[s][k]);
                } else {
                    let rows = if k == 0 { &self.rows1 } else { &self.rows2 };
                    Self::latent(rows, &new[k], &mut self.pend.v[s][k]);
                }
            }
        }
        self.pend.lprior = log_prior(&self.pend.params, &self.variant, &self.hyper);
        if self.pend.lprior == f64::NEG_INFINITY {
            self.pend_total = f64::NEG_INFINITY;
            return f64::NEG_INFINITY;
        }
        let affects = self.affects[block];
        for k in 0..2 {
            if affects[k] {
                self.eval_process(k);
                if self.pend.ll[k] == f64::NEG_INFINITY {
                    self.pend_total = f64::NEG_INFINITY;
                    return f64::NEG_INFINITY;
                }
            } else {
                let range = self.ctx.range(if k == 0 { Process::One } else { Process::Two });
                self.pend.site_ll[range.clone()].copy_from_slice(&self.cur.site_ll[range]);
                self.pend.ll[k] = self.cur.ll[k];
            }
        }
        self.pend.logj = self.log_jacobian(&self.pend.theta, &self.pend.params);
        self.pend_total = self.pend.total();
        if self.pend_total.is_nan() {
            self.pend_total = f64::NEG_INFINITY;
        }
        self.pend_total
    }

    fn accept(&mut self) {
        std::mem::swap(&mut self.cur, &mut self.pend);
    }
}

/// Blocks updated by default for `variant`, in sweep order.
pub fn default_blocks(variant: &ModelVariant, levels: usize, estimate_tau: bool) -> Vec<BlockId> {
    let surfaces: &[Surface] = if variant.spatial_scale { &Surface::BOTH } else { &Surface::BOTH[..1] };
    let mut out = Vec::new();
    for &surface in surfaces {
        for process in [Process::One, Process::Two] {
            for level in 1..=levels {
                out.push(BlockId::Coef { surface, process, level });
            }
        }
        for process in [Process::One, Process::Two] {
            out.push(BlockId::Scale { surface, process });
            out.push(BlockId::Shift { surface, process });
        }
        if variant.kind.free_a21() {
            out.push(BlockId::Tilt(surface));
        }
        if variant.kind.free_rho() {
            out.push(BlockId::Lag(surface));
        }
    }
    out.push(BlockId::Offsets(Process::One));
    out.push(BlockId::Offsets(Process::Two));
    for &s in surfaces {
        out.push(BlockId::Lmc(s));
    }
    out.push(BlockId::Shape(Process::One));
    out.push(BlockId::Shape(Process::Two));
    if estimate_tau {
        for &s in surfaces {
            out.push(BlockId::Variance(s));
        }
    }
    out
}

fn block_spec(id: &BlockId, layout: &Layout, bases: &BasisPair, variant: &ModelVariant, estimate_tau: bool) -> Result<BlockSpec> {
    let invalid = |why: &str| Err(Error::Validation(format!("block {id}: {why}")));
    let surface_ok = |s: &Surface| *s == Surface::Mu || variant.spatial_scale;
    let (coords, init_sd): (Vec<usize>, Vec<f64>) = match id {
        BlockId::Coef { surface, process, level } => {
            if !surface_ok(surface) {
                return invalid("scale surface is constant in this variant");
            }
            let knots = match process {
                Process::One => &bases.process1,
                Process::Two => &bases.process2,
            };
            if *level == 0 || *level > knots.levels {
                return invalid("no such resolution level");
            }
            let base = layout.z(surface.index(), process.index()).start;
            let idx: Vec<usize> = knots.level_indices(*level).into_iter().map(|m| base + m).collect();
            let sd = vec![0.1; idx.len()];
            (idx, sd)
        }
        BlockId::Scale { surface, process } => {
            if !surface_ok(surface) {
                return invalid("scale surface is constant in this variant");
            }
            let si = surface.index();
            let mv = match process {
                Process::One => ScaleMove {
                    shift: vec![layout.lmc(si, LA11)],
                    up: if variant.kind.free_a21() { vec![layout.lmc(si, BETA)] } else { vec![] },
                    down: layout.z(si, 0).collect(),
                },
                Process::Two => ScaleMove { shift: vec![layout.lmc(si, GAMMA)], up: vec![], down: layout.z(si, 1).collect() },
            };
            return Ok(BlockSpec::scaling(id.to_string(), mv, 0.05));
        }
        BlockId::Shift { surface, process } => {
            if !surface_ok(surface) {
                return invalid("scale surface is constant in this variant");
            }
            let si = surface.index();
            let mut coords = vec![layout.offset(si, process.index())];
            coords.extend(layout.z(si, process.index()));
            if *process == Process::One {
                coords.push(layout.offset(si, 1));
            }
            return Ok(BlockSpec::shift(id.to_string(), coords, [0.1, 0.05][si]));
        }
        BlockId::Tilt(surface) => {
            if !surface_ok(surface) {
                return invalid("scale surface is constant in this variant");
            }
            if !variant.kind.free_a21() {
                return invalid("the cross loading is fixed in this variant");
            }
            let si = surface.index();
            let mut coords = vec![layout.lmc(si, BETA)];
            coords.extend(layout.z(si, 1));
            return Ok(BlockSpec::shift(id.to_string(), coords, 0.05));
        }
        BlockId::Lag(surface) => {
            if !surface_ok(surface) {
                return invalid("scale surface is constant in this variant");
            }
            if !variant.kind.free_rho() {
                return invalid("the coefficient correlation is fixed in this variant");
            }
            let si = surface.index();
            let mut coords = vec![layout.lmc(si, BETA), layout.lmc(si, ETA)];
            coords.extend(layout.z(si, 1));
            return Ok(BlockSpec::custom(id.to_string(), coords, 0.05));
        }
        BlockId::Offsets(p) => {
            let k = p.index();
            (vec![layout.offset(0, k), layout.offset(1, k)], vec![0.1, 0.05])
        }
        BlockId::Lmc(s) => {
            if !surface_ok(s) {
                return invalid("scale surface is constant in this variant");
            }
            let si = s.index();
            let mut c = vec![layout.lmc(si, LA11), layout.lmc(si, GAMMA)];
            let mut sd = vec![0.05, 0.05];
            if variant.kind.free_a21() {
                c.push(layout.lmc(si, BETA));
                sd.push(0.05);
            }
            if variant.kind.free_rho() {
                c.push(layout.lmc(si, ETA));
                sd.push(0.2);
            }
            (c, sd)
        }
        BlockId::Shape(p) => (vec![layout.log_xi(p.index())], vec![0.1]),
        BlockId::Variance(s) => {
            if !estimate_tau {
                return invalid("coefficient variances are fixed unless estimate_tau is set");
            }
            if !surface_ok(s) {
                return invalid("scale surface is constant in this variant");
            }
            (vec![layout.log_tau(s.index(), 0), layout.log_tau(s.index(), 1)], vec![0.2, 0.2])
        }
    };
    Ok(BlockSpec::random_walk(id.to_string(), coords, init_sd))
}

fn moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Method-of-moments start with zero coefficients and a unit LMC diagonal.
pub fn init_params(data: &Dataset, bases: &BasisPair, variant: &ModelVariant, hyper: &PriorSettings) -> Result<ModelParams> {
    let ctx = ModelContext::new(data, bases)?;
    init_params_ctx(data, &ctx, variant, hyper)
}

fn init_params_ctx(data: &Dataset, ctx: &ModelContext, variant: &ModelVariant, hyper: &PriorSettings) -> Result<ModelParams> {
    let mut params = ModelParams::baseline(ctx.dim());
    for process in [Process::One, Process::Two] {
        let k = process.index();
        let (mean, sd) = moments(&data.pooled(process));
        let log_sigma = (sd * 6f64.sqrt() / std::f64::consts::PI).max(1e-6).ln();
        params.sigma_offsets[k] = log_sigma;
        params.mu_offsets[k] = mean - 0.5772 * log_sigma.exp();
    }
    variant.constrain(&mut params);
    let mut xi = 0.1;
    loop {
        params.xi = [xi; 2];
        if log_posterior(&params, ctx, variant, hyper).is_finite() {
            return Ok(params);
        }
        xi = ((xi + 0.1) * 10.0).round() / 10.0;
        if xi > 1.0 + 1e-9 {
            return Err(Error::InitializationFailed("log posterior is -inf for every start ξ up to 1.0".into()));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSamples {
    pub iterations: Vec<usize>,
    /// Retained states as flat [`ModelParams`] vectors.
    pub draws: Vec<Vec<f64>>,
    pub log_post_trace: Vec<f64>,
    pub blocks: Vec<BlockStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub names: Vec<String>,
    pub dim: usize,
    pub chains: Vec<ChainSamples>,
}

impl PosteriorSamples {
    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(|c| c.draws.len()).sum()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Per-chain draws of one scalar.
    pub fn scalar(&self, name: &str) -> Option<Vec<Vec<f64>>> {
        let j = self.column_index(name)?;
        Some(self.chains.iter().map(|c| c.draws.iter().map(|d| d[j]).collect()).collect())
    }

    /// All draws of one scalar, chains concatenated.
    pub fn pooled(&self, name: &str) -> Option<Vec<f64>> {
        self.scalar(name).map(|c| c.concat())
    }

    /// Every retained draw as parameters, chains concatenated.
    pub fn params(&self) -> Vec<ModelParams> {
        self.chains
            .iter()
            .flat_map(|c| c.draws.iter())
            .map(|d| ModelParams::from_flat(d, self.dim).expect("consistent width"))
            .collect()
    }

    /// Acceptance rate of each block, averaged over chains.
    pub fn accept_rates(&self) -> Vec<(String, f64)> {
        let Some(first) = self.chains.first() else { return Vec::new() };
        first
            .blocks
            .iter()
            .enumerate()
            .map(|(b, stats)| {
                let mean = self.chains.iter().map(|c| c.blocks[b].accept_rate).sum::<f64>() / self.chains.len() as f64;
                (stats.block.clone(), mean)
            })
            .collect()
    }

    /// `chain,iteration,<scalars>`; one row per retained draw.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "chain,iteration,{}", self.names.join(",")).map_err(io)?;
        let mut line = String::new();
        for (c, chain) in self.chains.iter().enumerate() {
            for (it, d) in chain.iterations.iter().zip(&chain.draws) {
                line.clear();
                line.push_str(&format!("{c},{it}"));
                for v in d {
                    line.push(',');
                    line.push_str(&format!("{v:?}"));
                }
                writeln!(w, "{line}").map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    /// Reads draws written by [`PosteriorSamples::write_csv`]. Traces and
    /// block statistics are not stored in the CSV and come back empty.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let perr = |message: String| Error::Parse { path: path.into(), message };
        let mut rdr = csv::Reader::from_path(path).map_err(|e| perr(e.to_string()))?;
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header.len() < 2 || header[0] != "chain" || header[1] != "iteration" {
            return Err(perr("posterior CSV must start with chain,iteration".into()));
        }
        let names: Vec<String> = header[2..].to_vec();
        let dim = names.len().checked_sub(18).filter(|d| d % 4 == 0).map(|d| d / 4).ok_or_else(|| perr("unexpected column count".into()))?;
        if names != ModelParams::scalar_names(dim) {
            return Err(perr("column names do not match the model parameters".into()));
        }
        let mut chains: Vec<ChainSamples> = Vec::new();
        for (k, row) in rdr.records().enumerate() {
            let row = row?;
            let bad = |what: &str| perr(format!("row {}: bad {what}", k + 2));
            let c: usize = row[0].parse().map_err(|_| bad("chain"))?;
            let it: usize = row[1].parse().map_err(|_| bad("iteration"))?;
            let d = row.iter().skip(2).map(|v| v.parse::<f64>()).collect::<std::result::Result<Vec<_>, _>>().map_err(|_| bad("value"))?;
            if c > chains.len() {
                return Err(bad("chain order"));
            }
            if c == chains.len() {
                chains.push(ChainSamples { iterations: vec![], draws: vec![], log_post_trace: vec![], blocks: vec![] });
            }
            chains[c].iterations.push(it);
            chains[c].draws.push(d);
        }
        Ok(Self { names, dim, chains })
    }
}

/// Samples the posterior of `variant` given `data`.
pub fn fit(data: &Dataset, bases: &BasisPair, variant: &ModelVariant, hyper: &PriorSettings, cfg: &SamplerConfig) -> Result<PosteriorSamples> {
    cfg.validate()?;
    let ctx = ModelContext::new(data, bases)?;
    let start = init_params_ctx(data, &ctx, variant, hyper)?;
    fit_from(&ctx, bases, variant, hyper, cfg, &start)
}

/// As [`fit`], from a given start and prepared context.
pub fn fit_from(
    ctx: &ModelContext,
    bases: &BasisPair,
    variant: &ModelVariant,
    hyper: &PriorSettings,
    cfg: &SamplerConfig,
    start: &ModelParams,
) -> Result<PosteriorSamples> {
    cfg.validate()?;
    let layout = Layout { p: ctx.dim() };
    let ids = match &cfg.blocks {
        Some(b) => b.clone(),
        None => default_blocks(variant, bases.process1.levels, cfg.estimate_tau),
    };
    let specs = ids.iter().map(|id| block_spec(id, &layout, bases, variant, cfg.estimate_tau)).collect::<Result<Vec<_>>>()?;
    let mut start = start.clone();
    variant.constrain(&mut start);
    let theta0 = encode(&layout, &start)?;
    let sched = Schedule::from(cfg);
    let chains: Vec<Result<ChainSamples>> = (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = chain_rng(cfg.seed, c);
            let mut target = ModelTarget::new(ctx, *variant, *hyper, cfg.estimate_tau, theta0.clone(), &ids);
            if !target.current().is_finite() {
                return Err(Error::InitializationFailed("log posterior at the start is not finite".into()));
            }
            if c > 0 {
                disperse(&mut target, &specs, &mut rng);
            }
            let raw = run_chain(&mut target, &specs, &sched, &mut rng);
            let mut params = ModelParams::baseline(layout.p);
            let draws = raw
                .states
                .iter()
                .map(|th| {
                    decode(&layout, th, &mut params);
                    params.to_flat()
                })
                .collect();
            Ok(ChainSamples { iterations: raw.iterations, draws, log_post_trace: raw.trace, blocks: raw.blocks })
        })
        .collect();
    Ok(PosteriorSamples { names: ModelParams::scalar_names(layout.p), dim: layout.p, chains: chains.into_iter().collect::<Result<_>>()? })
}

/// Perturbs the start of a secondary chain, block by block, keeping only
/// perturbations with finite density.
fn disperse<T: BlockTarget, R: Rng>(target: &mut T, specs: &[BlockSpec], rng: &mut R) {
    for (b, spec) in specs.iter().enumerate().filter(|(_, s)| s.is_random_walk()) {
        for _ in 0..10 {
            let state = target.state();
            let values: Vec<f64> = spec
                .coords
                .iter()
                .zip(&spec.init_sd)
                .map(|(&c, sd)| state[c] + 2.0 * sd * rng.sample::<f64, _>(StandardNormal))
                .collect();
            if target.propose(b, &spec.coords, &values).is_finite() {
                target.accept();
                break;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// diagnostics

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarDiagnostics {
    pub name: String,
    /// `None` when every draw of every chain is identical.
    pub rhat: Option<f64>,
    pub ess: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub scalars: Vec<ScalarDiagnostics>,
    pub accept: Vec<(String, f64)>,
    /// Scalars with R̂ above [`RHAT_LIMIT`].
    pub flagged: Vec<String>,
    pub max_rhat: f64,
}

impl Diagnostics {
    pub fn converged(&self) -> bool {
        self.flagged.is_empty()
    }
}

pub const RHAT_LIMIT: f64 = 1.1;

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Split-R̂ over the halves of every chain. `None` for constant input,
/// infinite when only the within-half variance vanishes.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<Option<f64>> {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0) / 2;
    if n < 2 {
        return Err(Error::TooFewDraws(format!("split-R̂ needs at least 4 draws per chain, have {}", 2 * n)));
    }
    let mut halves = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let len = c.len();
        halves.push(&c[..n]);
        halves.push(&c[len - n..]);
    }
    let stats: Vec<(f64, f64)> = halves.iter().map(|h| mean_var(h)).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / stats.len() as f64;
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let (_, b_over_n) = mean_var(&means);
    if w == 0.0 {
        return Ok(if b_over_n == 0.0 { None } else { Some(f64::INFINITY) });
    }
    let nf = n as f64;
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    Ok(Some((var_plus / w).sqrt()))
}

/// Batch-means effective sample size of one chain, batches of `floor(sqrt(n))`.
pub fn ess_batch_means(x: &[f64]) -> Result<Option<f64>> {
    let n = x.len();
    let b = (n as f64).sqrt().floor() as usize;
    let a = if b == 0 { 0 } else { n / b };
    if a < 2 || b < 1 {
        return Err(Error::TooFewDraws(format!("batch means need at least 4 draws, have {n}")));
    }
    let used = &x[n - a * b..];
    let (_, s2) = mean_var(used);
    let batch_means: Vec<f64> = used.chunks(b).map(|c| c.iter().sum::<f64>() / b as f64).collect();
    let (_, vb) = mean_var(&batch_means);
    let sigma2 = b as f64 * vb;
    if sigma2 == 0.0 || s2 == 0.0 {
        return Ok(None);
    }
    Ok(Some(used.len() as f64 * s2 / sigma2))
}

pub fn diagnostics(samples: &PosteriorSamples) -> Result<Diagnostics> {
    let min_len = samples.chains.iter().map(|c| c.draws.len()).min().unwrap_or(0);
    if samples.chains.is_empty() || min_len < 4 {
        return Err(Error::TooFewDraws(format!("need at least 4 retained draws per chain, have {min_len}")));
    }
    let mut scalars = Vec::with_capacity(samples.names.len());
    let mut flagged = Vec::new();
    let mut max_rhat: f64 = 1.0;
    for (j, name) in samples.names.iter().enumerate() {
        let per_chain: Vec<Vec<f64>> = samples.chains.iter().map(|c| c.draws.iter().map(|d| d[j]).collect()).collect();
        let rhat = split_rhat(&per_chain)?;
        let mut ess_total = 0.0;
        let mut any = false;
        for c in &per_chain {
            if let Some(e) = ess_batch_means(c)? {
                ess_total += e;
                any = true;
            }
        }
        if let Some(r) = rhat.filter(|_| j < ModelParams::N_SCALARS) {
            if !(r <= RHAT_LIMIT) {
                flagged.push(name.clone());
            }
            if r.is_nan() || r > max_rhat {
                max_rhat = r;
            }
        }
        scalars.push(ScalarDiagnostics { name: name.clone(), rhat, ess: any.then_some(ess_total) });
    }
    Ok(Diagnostics { scalars, accept: samples.accept_rates(), flagged, max_rhat })
}
