use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use jlsgev::basis::{build_knots, BasisPair, Rect};
use jlsgev::ingest::read_dataset_csv;
use jlsgev::mcmc::{diagnostics, fit, Diagnostics, PosteriorSamples, SamplerConfig};
use jlsgev::model::{Dataset, ModelVariant, PriorSettings, VariantKind};
use jlsgev::Process;

use crate::config;
use crate::{io_err, CliError, CliResult};

pub const CONFIG_FILE: &str = "config.json";
pub const KNOTS_FILE: &str = "knots.json";
pub const POSTERIOR_FILE: &str = "posterior.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisConfig {
    pub levels: usize,
    /// `[xmin, xmax, ymin, ymax]`; the bounding box of all sites when absent.
    pub domain: Option<[f64; 4]>,
    /// Translation of the process-2 knots relative to process 1.
    pub process2_offset: [f64; 2],
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self { levels: 3, domain: None, process2_offset: [0.0, 0.0] }
    }
}

impl BasisConfig {
    pub fn build(&self, data: &Dataset) -> CliResult<BasisPair> {
        let rect = match self.domain {
            Some([x0, x1, y0, y1]) => Rect::new(x0, x1, y0, y1),
            None => {
                let all: Vec<_> = data.locations(Process::One).iter().chain(data.locations(Process::Two)).copied().collect();
                Rect::bounding(&all).ok_or_else(|| CliError::Validation("dataset has no sites".into()))?
            }
        };
        let knots = build_knots(rect, self.levels)?;
        Ok(if self.process2_offset == [0.0, 0.0] {
            BasisPair::shared(knots)
        } else {
            BasisPair::with_offset(knots, self.process2_offset)
        })
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Dataset CSV (`process,site,x,y,replicate,value`).
    pub data: PathBuf,
    pub out: PathBuf,
    pub variant: VariantKind,
    #[serde(default = "yes")]
    pub spatial_scale: bool,
    #[serde(default)]
    pub basis: BasisConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub prior: PriorSettings,
}

impl FitConfig {
    pub fn model_variant(&self) -> ModelVariant {
        ModelVariant::new(self.variant, self.spatial_scale)
    }
}

#[derive(Debug)]
pub struct FitOutcome {
    pub out: PathBuf,
    pub diagnostics: Diagnostics,
}

/// Loads a fit configuration, resolving its paths against the file's directory.
pub fn load_config(path: &Path) -> CliResult<FitConfig> {
    let mut cfg: FitConfig = config::load(path)?;
    cfg.data = config::resolve(path, &cfg.data);
    cfg.out = config::resolve(path, &cfg.out);
    Ok(cfg)
}

/// Fits and writes the run directory. Convergence is reported, not enforced.
pub fn run(cfg: &FitConfig) -> CliResult<FitOutcome> {
    cfg.sampler.validate()?;
    let data = read_dataset_csv(&cfg.data)?;
    run_on(cfg, &data, true).map(|(o, _)| o)
}

/// Fits `data` and writes the run directory, the draws only when `write_draws`.
pub fn run_on(cfg: &FitConfig, data: &Dataset, write_draws: bool) -> CliResult<(FitOutcome, PosteriorSamples)> {
    cfg.sampler.validate()?;
    let bases = cfg.basis.build(data)?;
    let samples = fit(data, &bases, &cfg.model_variant(), &cfg.prior, &cfg.sampler)?;
    let diag = diagnostics(&samples)?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| io_err(&cfg.out, e))?;
    config::write_resolved(cfg, &cfg.out.join(CONFIG_FILE))?;
    config::write_resolved(&bases, &cfg.out.join(KNOTS_FILE))?;
    if write_draws {
        samples.write_csv(&cfg.out.join(POSTERIOR_FILE))?;
    }
    config::write_resolved(&diag, &cfg.out.join(DIAGNOSTICS_FILE))?;
    for (block, rate) in &diag.accept {
        if !(0.1..=0.6).contains(rate) {
            log::warn!("block {block} accepted {rate:.2} of proposals after adaptation");
        }
    }
    Ok((FitOutcome { out: cfg.out.clone(), diagnostics: diag }, samples))
}

/// Maps an unconverged fit to the convergence error unless allowed.
pub fn check_converged(outcome: &FitOutcome, allow_unconverged: bool) -> CliResult<()> {
    let d = &outcome.diagnostics;
    if d.converged() {
        return Ok(());
    }
    let msg = format!("R̂ above {} for {} (max {:.3})", jlsgev::mcmc::RHAT_LIMIT, d.flagged.join(", "), d.max_rhat);
    if allow_unconverged {
        log::warn!("{msg}");
        Ok(())
    } else {
        Err(CliError::Unconverged(msg))
    }
}

/// A finished run directory.
#[derive(Debug, Clone)]
pub struct FitDir {
    pub dir: PathBuf,
    pub config: FitConfig,
    pub bases: BasisPair,
    pub samples: PosteriorSamples,
}

impl FitDir {
    pub fn open(dir: &Path) -> CliResult<Self> {
        if !dir.is_dir() {
            return Err(CliError::Io(format!("fit directory {} does not exist", dir.display())));
        }
        let config: FitConfig = config::load(&dir.join(CONFIG_FILE))?;
        let bases: BasisPair = config::load(&dir.join(KNOTS_FILE))?;
        let samples = PosteriorSamples::read_csv(&dir.join(POSTERIOR_FILE))?;
        if samples.dim != bases.dim() {
            return Err(CliError::Validation(format!(
                "{}: posterior has {} coefficients per process, knots have {}",
                dir.display(),
                samples.dim,
                bases.dim()
            )));
        }
        Ok(Self { dir: dir.to_path_buf(), config, bases, samples })
    }
}
