use std::path::{Path, PathBuf};

use jlsgev::simgen::{export_scenario, make_scenario, ScenarioConfig};

use crate::config;
use crate::CliResult;

#[derive(Debug, Clone)]
pub enum SimulateSpec {
    /// A full scenario configuration file.
    Config(PathBuf),
    /// A scenario of the benchmark grid.
    Numbered { scenario: usize, seed: u64 },
    /// Every scenario of the grid for every seed.
    All { seeds: Vec<u64> },
}

/// Directory name of one grid scenario under `--all`.
pub fn scenario_dir_name(scenario: usize, seed: u64) -> String {
    format!("scenario_{scenario:02}_seed_{seed}")
}

/// Writes scenario files and returns the directories created.
pub fn run(spec: &SimulateSpec, out: &Path) -> CliResult<Vec<PathBuf>> {
    let jobs: Vec<(ScenarioConfig, PathBuf)> = match spec {
        SimulateSpec::Config(path) => vec![(config::load(path)?, out.to_path_buf())],
        SimulateSpec::Numbered { scenario, seed } => vec![(ScenarioConfig::from_number(*scenario, *seed)?, out.to_path_buf())],
        SimulateSpec::All { seeds } => seeds
            .iter()
            .flat_map(|&seed| ScenarioConfig::all(seed))
            .map(|c| {
                let dir = out.join(scenario_dir_name(c.number(), c.seed));
                (c, dir)
            })
            .collect(),
    };
    for (cfg, _) in &jobs {
        cfg.validate()?;
    }
    let mut dirs = Vec::with_capacity(jobs.len());
    for (cfg, dir) in jobs {
        let truth = make_scenario(&cfg)?;
        export_scenario(&truth, &dir)?;
        log::info!("scenario {} seed {} -> {}", cfg.number(), cfg.seed, dir.display());
        dirs.push(dir);
    }
    Ok(dirs)
}
