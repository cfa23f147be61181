use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use jlsgev::ingest::read_dataset_csv;
use jlsgev::scoring::{report, write_metrics_csv, write_paper_table, MetricRow, ReportOptions, TruthSurfaces};
use jlsgev::simgen::read_truth_csv;

use super::fit::FitDir;
use crate::config;
use crate::{CliError, CliResult};

/// Column order of the comparison table.
pub const TABLE_ORDER: [&str; 3] = ["joint_asymmetric", "joint_symmetric", "independent"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreConfig {
    pub fits: Vec<PathBuf>,
    pub holdout: PathBuf,
    pub truth: Option<PathBuf>,
    pub out: PathBuf,
    pub paper_table: Option<PathBuf>,
    #[serde(default)]
    pub options: ReportOptions,
}

pub fn score_fits(cfg: &ScoreConfig) -> CliResult<Vec<MetricRow>> {
    if cfg.fits.is_empty() {
        return Err(CliError::Validation("no fit directories given".into()));
    }
    for f in &cfg.fits {
        if !f.is_dir() {
            return Err(CliError::Io(format!("fit directory {} does not exist", f.display())));
        }
    }
    let holdout = read_dataset_csv(&cfg.holdout)?;
    let truth = match &cfg.truth {
        Some(p) => Some(TruthSurfaces::holdout_of_rows(&read_truth_csv(p)?)?),
        None => None,
    };
    if let Some(t) = &truth {
        let (n, m) = (holdout.n(), holdout.m());
        if t.mu[0].len() != n || t.mu[1].len() != m {
            return Err(CliError::Validation(format!(
                "truth has {}/{} holdout sites, holdout data has {n}/{m}",
                t.mu[0].len(),
                t.mu[1].len()
            )));
        }
    }
    let mut rows = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    for dir in &cfg.fits {
        let fit = FitDir::open(dir)?;
        let label = fit.config.variant.as_str().to_string();
        if labels.contains(&label) {
            return Err(CliError::Validation(format!("variant {label} appears twice ({})", dir.display())));
        }
        rows.extend(report(&fit.samples, &fit.bases, &fit.config.model_variant(), &holdout, truth.as_ref(), &cfg.options)?);
        labels.push(label);
    }
    Ok(rows)
}

pub fn run(cfg: &ScoreConfig) -> CliResult<Vec<MetricRow>> {
    let rows = score_fits(cfg)?;
    if let Some(dir) = cfg.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| crate::io_err(dir, e))?;
    }
    write_metrics_csv(&rows, &cfg.out)?;
    if let Some(p) = &cfg.paper_table {
        write_paper_table(&rows, &table_columns(&rows), p)?;
    }
    config::write_resolved(cfg, &config::sidecar(&cfg.out))?;
    Ok(rows)
}

/// Variants present in `rows`, in table order, then any others.
pub fn table_columns(rows: &[MetricRow]) -> Vec<&str> {
    let mut cols: Vec<&str> = TABLE_ORDER.iter().copied().filter(|v| rows.iter().any(|r| r.variant == *v)).collect();
    for r in rows {
        if !cols.contains(&r.variant.as_str()) {
            cols.push(&r.variant);
        }
    }
    cols
}
