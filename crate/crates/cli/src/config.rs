//! JSON configuration loading with field-path error messages.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{io_err, CliError, CliResult};

/// Reads `path` as `T`. Errors name the offending field, e.g.
/// `fit.json: sampler.n_iter: invalid type: string "x", expected usize`.
pub fn load<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse(&text).map_err(|m| CliError::Validation(format!("{}: {m}", path.display())))
}

pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T, String> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            e.inner().to_string()
        } else {
            format!("{path}: {}", e.inner())
        }
    })
}

/// Writes the resolved configuration as pretty JSON.
pub fn write_resolved<T: Serialize>(value: &T, path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Failed(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// `p` relative to the directory holding the config file.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new("")).join(p)
    }
}

/// Sidecar config path for a single output file: `out.csv` → `out.config.json`.
pub fn sidecar(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.config.json"))
}

/// Inclusive ranges `a..b` and comma lists, e.g. `1..3` or `1,4,9`.
pub fn parse_seed_list(s: &str) -> Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let b = b.strip_prefix('=').unwrap_or(b);
            let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad(s))?, b.trim().parse().map_err(|_| bad(s))?);
            if a > b {
                return Err(format!("empty seed range {part:?}"));
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| bad(s))?);
        }
    }
    if out.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(out)
}

fn bad(s: &str) -> String {
    format!("cannot read seed list {s:?}; use e.g. 1..3 or 1,2,5")
}
