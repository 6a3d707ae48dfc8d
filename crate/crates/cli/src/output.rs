//! Atomic output: everything is written to a temporary sibling and renamed
//! into place once complete.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::Config;
use crate::error::CliResult;

/// File name of the resolved-config log inside directory outputs.
pub const DIR_CONFIG_LOG: &str = "resolved.config";

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp-{}", std::process::id()))
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(())
}

/// Runs `write` against a temporary path, then renames it to `path`.
pub fn file<F>(path: &Path, write: F) -> CliResult<()>
where
    F: FnOnce(&Path) -> CliResult<()>,
{
    ensure_parent(path)?;
    let tmp = temp_sibling(path);
    match write(&tmp) {
        Ok(()) => Ok(fs::rename(&tmp, path)?),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

/// Like [`file`] for a directory. An existing directory at `path` is
/// replaced only after the new one is complete.
pub fn dir<F>(path: &Path, write: F) -> CliResult<()>
where
    F: FnOnce(&Path) -> CliResult<()>,
{
    ensure_parent(path)?;
    let tmp = temp_sibling(path);
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    if let Err(e) = write(&tmp) {
        let _ = fs::remove_dir_all(&tmp);
        return Err(e);
    }
    if path.is_dir() {
        fs::remove_dir_all(path)?;
    }
    Ok(fs::rename(&tmp, path)?)
}

pub fn config_text(command: &str, cfg: &Config) -> String {
    let args: Vec<String> = std::env::args().skip(1).collect();
    format!("# command: {command}\n# argv: {}\n{}", args.join(" "), cfg.render())
}

/// Writes `<path>.config` next to a file output.
pub fn log_config_for_file(path: &Path, command: &str, cfg: &Config) -> CliResult<()> {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".config");
    let log = path.with_file_name(name);
    file(&log, |tmp| Ok(fs::write(tmp, config_text(command, cfg))?))
}

/// Writes the resolved-config log inside a directory being built.
pub fn log_config_in_dir(dir: &Path, command: &str, cfg: &Config) -> CliResult<()> {
    Ok(fs::write(dir.join(DIR_CONFIG_LOG), config_text(command, cfg))?)
}
