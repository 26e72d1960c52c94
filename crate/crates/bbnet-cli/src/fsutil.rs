//! Atomic file writes shared by the commands that emit reports.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{AppError, AppResult};

/// Writes through a sibling temp file so readers never observe a partial file.
pub fn write_text_atomic(path: &Path, text: &str) -> AppResult<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| AppError::io(parent, e))?;
        }
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| AppError::io(&tmp, e))?;
    f.write_all(text.as_bytes()).map_err(|e| AppError::io(&tmp, e))?;
    f.sync_all().map_err(|e| AppError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| AppError::io(path, e))?;
    Ok(())
}

/// Pretty JSON with a trailing newline; field order follows the struct, so
/// equal values produce byte-identical files.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> AppResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("json serialize");
    text.push('\n');
    write_text_atomic(path, &text)
}
