//! Input checks and artifact writing shared by the subcommands.

use std::path::{Path, PathBuf};

use serde::Serialize;

use ribpoint::metrics::canonical_json;
use ribpoint::volume::{import_nifti, read_volume, Volume};

use crate::CliError;

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Name of the resolved-config file written into every output directory.
pub const RUN_CONFIG: &str = "run_config.json";

pub fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} does not exist", path.display())))
    }
}

pub fn require_dir(path: &Path, what: &str) -> CliResult<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} is not a directory", path.display())))
    }
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| run_io(path, e))
}

fn run_io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Run(ribpoint::Error::Other(format!("io error on {}: {e}", path.display())))
}

fn is_nifti(path: &Path) -> bool {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    name.ends_with(".nii") || name.ends_with(".nii.gz")
}

/// Reads an RVOL volume, or NIfTI when the name ends in `.nii` / `.nii.gz`.
pub fn load_volume(path: &Path) -> CliResult<Volume> {
    require_file(path, "volume")?;
    Ok(if is_nifti(path) {
        import_nifti(path)?
    } else {
        read_volume(path)?
    })
}

/// File stems the tools write inside a per-case directory.
const CASE_ARTIFACTS: [&str; 5] = ["volume", "truth_labels", "pred_mask", "instances", "mask"];

/// Case name for a path: the parent directory for a per-case artifact such
/// as `case_0003/volume.rvol`, otherwise the file stem.
pub fn case_name(path: &Path) -> String {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("case");
    if name.split('.').next().is_some_and(|stem| CASE_ARTIFACTS.contains(&stem)) {
        if let Some(p) = path.parent().and_then(|p| p.file_name()).and_then(|n| n.to_str()) {
            return p.to_string();
        }
    }
    name.trim_end_matches(".gz")
        .trim_end_matches(".nii")
        .trim_end_matches(".rvol")
        .to_string()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = canonical_json(value)?;
    std::fs::write(path, text).map_err(|e| run_io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| run_io(path, e))
}

/// Reads a JSON config file into `T`, falling back to `T::default()`.
pub fn load_config<T: Default + serde::de::DeserializeOwned>(path: Option<&PathBuf>) -> CliResult<T> {
    let Some(path) = path else { return Ok(T::default()) };
    require_file(path, "config")?;
    let text = std::fs::read_to_string(path).map_err(|e| run_io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

#[derive(Serialize)]
struct RunRecord<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    threads: usize,
    config: &'a T,
}

/// Writes the fully resolved config and the tool version next to outputs.
pub fn write_run_config<T: Serialize>(out: &Path, command: &str, seed: u64, threads: usize, config: &T) -> CliResult<()> {
    create_dir(out)?;
    write_json(
        &out.join(RUN_CONFIG),
        &RunRecord {
            command,
            version: ribpoint::VERSION,
            seed,
            threads,
            config,
        },
    )
}
