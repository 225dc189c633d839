use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const RESOLVED_CONFIG: &str = "config.resolved.json";

/// Creates the run directory: `<out>/<name>` when named, otherwise
/// `<out>/<timestamp>-<command>` with a numeric suffix on collision.
pub fn create(out_dir: &Path, run_name: Option<&str>, command: &str) -> CliResult<PathBuf> {
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    if let Some(name) = run_name {
        if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
            return Err(CliError::Usage(format!("invalid run name {name:?}")));
        }
        let dir = out_dir.join(name);
        if dir.exists() && fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))?.next().is_some() {
            return Err(CliError::Usage(format!("run directory {} already exists and is not empty", dir.display())));
        }
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        return Ok(dir);
    }
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    for attempt in 0.. {
        let name = match attempt {
            0 => format!("{stamp}-{command}"),
            n => format!("{stamp}-{command}-{n}"),
        };
        let dir = out_dir.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(CliError::io(&dir, e)),
        }
    }
    unreachable!("unbounded attempts")
}

/// Echoes the parsed command and everything resolved from it.
pub fn write_resolved<T: Serialize>(dir: &Path, config: &T) -> CliResult<()> {
    let path = dir.join(RESOLVED_CONFIG);
    fs::write(&path, serde_json::to_string_pretty(config)? + "\n").map_err(|e| CliError::io(&path, e))
}
