//! Binary matrix file format for embedding tables.
//!
//! Layout: magic `HEMB`, little-endian u32 version (1), u64 row count,
//! u64 column count, then `rows * cols` little-endian f64 values in
//! row-major order.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HEMB";
const VERSION: u32 = 1;

/// Hex-encoded SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Serializes a row-major matrix into the on-disk byte layout.
pub fn encode(rows: usize, cols: usize, data: &[f64]) -> Result<Vec<u8>> {
    if rows * cols != data.len() {
        return Err(Error::shape(
            "hemb_encode",
            format!("{rows}x{cols} header for {} values", data.len()),
        ));
    }
    let mut out = Vec::with_capacity(4 + 4 + 16 + data.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses the byte layout back into `(rows, cols, values)`.
pub fn decode(bytes: &[u8], origin: &str) -> Result<(usize, usize, Vec<f64>)> {
    let fail = |detail: String| Error::Format {
        path: origin.to_string(),
        detail,
    };
    if bytes.len() < 24 {
        return Err(fail(format!("truncated header, {} bytes", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail(format!("bad magic {:?}", &bytes[0..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("sized"));
    if version != VERSION {
        return Err(fail(format!("unsupported version {version}")));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().expect("sized")) as usize;
    let cols = u64::from_le_bytes(bytes[16..24].try_into().expect("sized")) as usize;
    let want = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(24))
        .ok_or_else(|| fail(format!("implausible dimensions {rows}x{cols}")))?;
    if bytes.len() != want {
        return Err(fail(format!(
            "{rows}x{cols} header but {} payload bytes",
            bytes.len() - 24
        )));
    }
    let data = bytes[24..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("sized")))
        .collect();
    Ok((rows, cols, data))
}

/// Writes a matrix file and returns its SHA-256 hex digest.
pub fn write_file(path: &Path, rows: usize, cols: usize, data: &[f64]) -> Result<String> {
    let bytes = encode(rows, cols, data)?;
    std::fs::write(path, &bytes).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(sha256_hex(&bytes))
}

/// Reads a matrix file; when `expect_sha256` is given, verifies the digest.
pub fn read_file(path: &Path, expect_sha256: Option<&str>) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if let Some(expect) = expect_sha256 {
        let got = sha256_hex(&bytes);
        if got != expect {
            return Err(Error::Format {
                path: path.display().to_string(),
                detail: format!("checksum mismatch: manifest {expect}, file {got}"),
            });
        }
    }
    decode(&bytes, &path.display().to_string())
}
