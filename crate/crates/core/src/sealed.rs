//! Text files closed by a checksum line, so readers can tell a finished
//! file from one still being written.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const PREFIX: &str = "sha256=";

pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Appends `sha256=<hex of body>` as the final line.
pub fn seal(body: &str) -> String {
    let mut out = body.to_string();
    if !out.is_empty() && !out.ends_with('\n') {
        out.push('\n');
    }
    let sum = digest_hex(out.as_bytes());
    out.push_str(PREFIX);
    out.push_str(&sum);
    out.push('\n');
    out
}

/// Returns the body if the checksum line is present and matches.
pub fn unseal(text: &str) -> Option<&str> {
    let trimmed = text.strip_suffix('\n')?;
    let cut = trimmed.rfind('\n').map_or(0, |i| i + 1);
    let (body, last) = trimmed.split_at(cut);
    let sum = last.strip_prefix(PREFIX)?;
    (digest_hex(body.as_bytes()) == sum).then_some(body)
}

pub fn write_sealed(path: &Path, body: &str) -> Result<()> {
    fs::write(path, seal(body)).map_err(Error::io(path))
}

pub fn read_sealed(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    unseal(&text)
        .map(str::to_string)
        .ok_or_else(|| Error::Validation(format!("{}: missing or bad checksum", path.display())))
}
