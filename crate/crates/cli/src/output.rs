use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use tempfile::NamedTempFile;

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub params: BTreeMap<String, serde_json::Value>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub outputs: Vec<PathBuf>,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(command: &str, params: &impl Serialize, seed: Option<u64>) -> Self {
        let params = match serde_json::to_value(params) {
            Ok(serde_json::Value::Object(map)) => map
                .into_iter()
                .filter(|(_, v)| !v.is_null())
                .collect(),
            _ => BTreeMap::new(),
        };
        Self {
            command: command.to_string(),
            params,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: Vec::new(),
            timestamp: chrono::Utc::now().to_rfc3339(),
        }
    }

    /// Writes `<out>.manifest.json` next to the first output, or to stderr
    /// when everything went to stdout.
    pub fn emit(&self) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(self).map_err(CliError::internal)?;
        match self.outputs.first() {
            Some(first) => {
                let mut name = first.as_os_str().to_owned();
                name.push(".manifest.json");
                write_atomic(Path::new(&name), json.as_bytes())
            }
            None => {
                eprintln!("{json}");
                Ok(())
            }
        }
    }
}

/// Writes `bytes` to a temporary file in the target directory and renames it
/// over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir)
        .map_err(|e| CliError::Input(format!("cannot write to {}: {e}", dir.display())))?;
    tmp.write_all(bytes).map_err(CliError::internal)?;
    tmp.as_file().sync_all().map_err(CliError::internal)?;
    tmp.persist(path)
        .map_err(|e| CliError::Input(format!("cannot write {}: {}", path.display(), e.error)))?;
    Ok(())
}

/// Sends `text` to `out` (atomically) or to stdout, recording the path.
pub fn deliver(out: Option<&Path>, text: &str, manifest: &mut RunManifest) -> Result<(), CliError> {
    match out {
        Some(p) => {
            write_atomic(p, text.as_bytes())?;
            manifest.outputs.push(p.to_path_buf());
        }
        None => {
            io::stdout().write_all(text.as_bytes()).map_err(CliError::internal)?;
        }
    }
    Ok(())
}

/// Appends CSV rows to `path`, writing the header only when the file is new
/// or empty. The whole file is rewritten atomically.
pub fn append_csv(path: &Path, header_and_rows: &str, rows_only: &str) -> Result<(), CliError> {
    let existing = match fs::read_to_string(path) {
        Ok(s) => s,
        Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(CliError::Input(format!("cannot read {}: {e}", path.display()))),
    };
    let mut text = existing;
    if text.is_empty() {
        text.push_str(header_and_rows);
    } else {
        if !text.ends_with('\n') {
            text.push('\n');
        }
        text.push_str(rows_only);
    }
    write_atomic(path, text.as_bytes())
}
