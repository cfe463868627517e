use std::fs;
use std::io::{self, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner()
        .map_err(|e| anyhow::anyhow!("flushing csv: {e}"))
}

/// Writes rows as CSV to `path`, or stdout when `None`.
pub fn write_csv<T: Serialize>(rows: &[T], path: Option<&Path>) -> Result<()> {
    let bytes = csv_bytes(rows)?;
    match path {
        Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(&bytes)?;
            Ok(out.flush()?)
        }
    }
}

/// Parses a JSON config, rejecting empty files and unknown keys.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value = serde_json::from_str(&text)
        .map_err(samo_core::Error::from)
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok(value)
}
