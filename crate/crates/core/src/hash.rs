//! SHA-256 content addresses for artifacts.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::volume::{io::encode_raw, Volume, VolumeHeader};

/// Lowercase hex SHA-256 of a byte string.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(content_hash(&bytes))
}

/// Hash of a volume's header text followed by its raw blob, i.e. of the
/// two files `save_volume` writes.
pub fn volume_hash(v: &Volume) -> String {
    let mut h = Sha256::new();
    h.update(VolumeHeader::of(v).to_json().as_bytes());
    h.update(encode_raw(v));
    hex::encode(h.finalize())
}

/// Fails with `HashMismatch` unless the file hashes to `expected`.
pub fn verify_file(path: &Path, expected: &str) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let found = content_hash(&bytes);
    if found != expected {
        return Err(Error::HashMismatch {
            path: path.display().to_string(),
            expected: expected.to_string(),
            found,
        });
    }
    Ok(bytes)
}
