use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use jlsgev::model::SitePredictor;
use jlsgev::scoring::{mean, quantile_type7};
use jlsgev::{GevParams, Point, Process};

use super::fit::FitDir;
use crate::config;
use crate::{io_err, CliError, CliResult};

pub const PREDICT_HEADER: &str = "process,site,x,y,quantity,mean,median,q025,q975,outside_coverage";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictConfig {
    pub fit: PathBuf,
    pub sites: PathBuf,
    pub periods: Vec<f64>,
    pub out: PathBuf,
}

/// A requested prediction site. Without a process column both processes are predicted.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteRequest {
    pub process: Option<Process>,
    pub site: String,
    pub location: Point,
}

/// Reads a sites CSV with columns `x,y` and optional `site` and `process`.
/// Dataset CSVs qualify; repeated `(process, site)` rows are collapsed.
pub fn read_sites(path: &Path) -> CliResult<Vec<SiteRequest>> {
    let bad = |m: String| CliError::Io(format!("{}: {m}", path.display()));
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(cx), Some(cy)) = (col("x"), col("y")) else {
        return Err(CliError::Validation(format!("{}: sites file needs x and y columns", path.display())));
    };
    let (cs, cp) = (col("site"), col("process"));
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let line = i + 2;
        let num = |c: usize| rec.get(c).and_then(|v| v.parse::<f64>().ok()).filter(|v| v.is_finite());
        let (Some(x), Some(y)) = (num(cx), num(cy)) else {
            return Err(bad(format!("line {line}: unreadable coordinates")));
        };
        let process = match cp.map(|c| rec.get(c).unwrap_or("")) {
            None => None,
            Some(v) => Some(
                v.parse().ok().and_then(Process::from_number).ok_or_else(|| bad(format!("line {line}: process must be 1 or 2")))?,
            ),
        };
        let site = cs.and_then(|c| rec.get(c)).map(str::to_string).unwrap_or_else(|| (i).to_string());
        if seen.insert((process.map(Process::number), site.clone())) {
            out.push(SiteRequest { process, site, location: [x, y] });
        }
    }
    if out.is_empty() {
        return Err(CliError::Validation(format!("{}: no sites", path.display())));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
}

pub fn summarize(values: &[f64]) -> CliResult<Summary> {
    Ok(Summary {
        mean: mean(values)?,
        median: quantile_type7(values, 0.5)?,
        lo: quantile_type7(values, 0.025)?,
        hi: quantile_type7(values, 0.975)?,
    })
}

/// Column label of a return period: `rl10`, `rl2.5`.
pub fn period_label(t: f64) -> String {
    format!("rl{t}")
}

/// Per-draw GEV parameters `[site][draw]` for one process.
pub fn draws_at(fit: &FitDir, process: Process, sites: &[Point]) -> CliResult<(Vec<Vec<GevParams>>, Vec<bool>)> {
    let predictor = SitePredictor::new(&fit.bases, sites, process)?;
    let variant = fit.config.model_variant();
    let mut per_site = vec![Vec::with_capacity(fit.samples.n_draws()); sites.len()];
    for p in fit.samples.params() {
        for (slot, g) in per_site.iter_mut().zip(predictor.gev_params(&p, &variant)?) {
            slot.push(g);
        }
    }
    Ok((per_site, predictor.covered))
}

pub fn run(cfg: &PredictConfig) -> CliResult<()> {
    if cfg.periods.is_empty() || cfg.periods.iter().any(|t| !(*t > 1.0) || !t.is_finite()) {
        return Err(CliError::Validation("return periods must be finite and greater than 1".into()));
    }
    let fit = FitDir::open(&cfg.fit)?;
    let sites = read_sites(&cfg.sites)?;
    let mut body = String::from(PREDICT_HEADER);
    body.push('\n');
    for process in [Process::One, Process::Two] {
        let chosen: Vec<&SiteRequest> = sites.iter().filter(|s| s.process.is_none_or(|p| p == process)).collect();
        if chosen.is_empty() {
            continue;
        }
        let locs: Vec<Point> = chosen.iter().map(|s| s.location).collect();
        let (draws, covered) = draws_at(&fit, process, &locs)?;
        let mut outside = 0;
        for ((req, gev), cov) in chosen.iter().zip(&draws).zip(&covered) {
            outside += usize::from(!cov);
            let mut quantities: Vec<(String, Vec<f64>)> =
                vec![("mu".into(), gev.iter().map(|g| g.mu()).collect()), ("sigma".into(), gev.iter().map(|g| g.sigma()).collect())];
            for &t in &cfg.periods {
                let rl = gev.iter().map(|g| g.return_level(t)).collect::<jlsgev::Result<Vec<f64>>>()?;
                quantities.push((period_label(t), rl));
            }
            for (name, values) in quantities {
                let s = summarize(&values)?;
                let _ = writeln!(
                    body,
                    "{},{},{:?},{:?},{},{:?},{:?},{:?},{:?},{}",
                    process.number(),
                    req.site,
                    req.location[0],
                    req.location[1],
                    name,
                    s.mean,
                    s.median,
                    s.lo,
                    s.hi,
                    u8::from(!cov)
                );
            }
        }
        if outside > 0 {
            log::warn!("{outside} process-{} site(s) lie outside the basis coverage", process.number());
        }
    }
    if let Some(dir) = cfg.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(&cfg.out, body).map_err(|e| io_err(&cfg.out, e))?;
    config::write_resolved(cfg, &config::sidecar(&cfg.out))
}
