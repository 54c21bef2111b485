//! `.vjson` header plus little-endian `.raw` sibling blob.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dtype, Volume, VolumeData};
use crate::error::{Error, Result};

pub const ORDER_X_FASTEST: &str = "x-fastest";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub dtype: String,
    pub order: String,
}

impl VolumeHeader {
    pub fn of(v: &Volume) -> Self {
        VolumeHeader {
            dims: v.dims(),
            spacing_mm: v.spacing_mm(),
            origin_mm: v.origin_mm(),
            dtype: match v.dtype() {
                Dtype::Int16 => "int16".into(),
                Dtype::Uint8 => "uint8".into(),
            },
            order: ORDER_X_FASTEST.into(),
        }
    }

    pub fn dtype(&self) -> Result<Dtype> {
        match self.dtype.as_str() {
            "int16" => Ok(Dtype::Int16),
            "uint8" => Ok(Dtype::Uint8),
            other => Err(Error::format("dtype", format!("unknown dtype `{other}`"))),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("header serializes") + "\n"
    }

    /// Decodes a raw little-endian blob against this header.
    pub fn decode(&self, raw: &[u8]) -> Result<Volume> {
        if self.order != ORDER_X_FASTEST {
            return Err(Error::format("order", format!("unsupported order `{}`", self.order)));
        }
        let dtype = self.dtype()?;
        if self.spacing_mm.iter().any(|s| !s.is_finite()) {
            return Err(Error::format("spacing_mm", "non-finite spacing"));
        }
        if self.origin_mm.iter().any(|s| !s.is_finite()) {
            return Err(Error::format("origin_mm", "non-finite origin"));
        }
        let n: usize = self
            .dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format("dims", "voxel count overflows"))?;
        let expected = n * dtype.size();
        if raw.len() != expected {
            return Err(Error::format(
                "raw length",
                format!(
                    "raw blob holds {} bytes but dims {:?} x {} need {expected}",
                    raw.len(),
                    self.dims,
                    self.dtype
                ),
            ));
        }
        let data = match dtype {
            Dtype::Int16 => VolumeData::Int16(raw.chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]])).collect()),
            Dtype::Uint8 => VolumeData::Uint8(raw.to_vec()),
        };
        Volume::new(self.dims, self.spacing_mm, self.origin_mm, data)
    }
}

/// Encodes voxel data as a little-endian byte blob.
pub fn encode_raw(v: &Volume) -> Vec<u8> {
    match v.data() {
        VolumeData::Int16(d) => d.iter().flat_map(|x| x.to_le_bytes()).collect(),
        VolumeData::Uint8(d) => d.clone(),
    }
}

/// `foo.vjson` → `foo.raw`.
pub fn raw_path_for(header_path: &Path) -> PathBuf {
    header_path.with_extension("raw")
}

pub fn save_volume(v: &Volume, header_path: &Path) -> Result<()> {
    let header = VolumeHeader::of(v);
    std::fs::write(header_path, header.to_json())
        .map_err(|e| Error::io(format!("writing {}", header_path.display()), e))?;
    let raw_path = raw_path_for(header_path);
    std::fs::write(&raw_path, encode_raw(v)).map_err(|e| Error::io(format!("writing {}", raw_path.display()), e))
}

pub fn load_volume(header_path: &Path) -> Result<Volume> {
    let text =
        std::fs::read_to_string(header_path).map_err(|e| Error::io(format!("reading {}", header_path.display()), e))?;
    let header: VolumeHeader =
        serde_json::from_str(&text).map_err(|e| Error::json(header_path.display().to_string(), e))?;
    let raw_path = raw_path_for(header_path);
    let raw = std::fs::read(&raw_path).map_err(|e| Error::io(format!("reading {}", raw_path.display()), e))?;
    header.decode(&raw)
}
