use std::io::Write;
use std::path::{Path, PathBuf};

use randwire_core::exec::WeightStore;
use randwire_core::NetworkIR;

use crate::error::CliError;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(contents.as_bytes()).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| CliError::Io {
        path: path.to_owned(),
        source: e.error,
    })?;
    log::info!("wrote {}", path.display());
    Ok(())
}

pub fn artifact(prefix: &str, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{prefix}{suffix}"))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

pub fn read_ir(path: &Path) -> Result<NetworkIR, CliError> {
    Ok(NetworkIR::from_json(&read_text(path)?)?)
}

pub fn read_weights(path: &Path) -> Result<WeightStore, CliError> {
    Ok(WeightStore::from_json(&read_text(path)?)?)
}
