//! Scalar volumes, label volumes and their on-disk format.

pub mod io;
mod phantom;

pub use io::{load_volume, raw_path_for, save_volume, VolumeHeader};
pub use phantom::{rasterize_phantom, Lattice, Phantom, Primitive, Shape, VertebraSpec, BEAD_HU, MAX_HU, MIN_HU};

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Int16,
    Uint8,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::Int16 => 2,
            Dtype::Uint8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VolumeData {
    Int16(Vec<i16>),
    Uint8(Vec<u8>),
}

impl VolumeData {
    pub fn len(&self) -> usize {
        match self {
            VolumeData::Int16(v) => v.len(),
            VolumeData::Uint8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            VolumeData::Int16(_) => Dtype::Int16,
            VolumeData::Uint8(_) => Dtype::Uint8,
        }
    }
}

/// A 3D grid of voxels stored x-fastest. `origin_mm` is the world position
/// of the centre of voxel `(0, 0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    origin_mm: [f64; 3],
    data: VolumeData,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3], origin_mm: [f64; 3], data: VolumeData) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::format("dims", "all dimensions must be >= 1"));
        }
        if spacing_mm.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::format("spacing_mm", "spacings must be finite and > 0"));
        }
        if origin_mm.iter().any(|o| !o.is_finite()) {
            return Err(Error::format("origin_mm", "origin must be finite"));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::format(
                "data",
                format!("expected {n} voxels, got {}", data.len()),
            ));
        }
        Ok(Self {
            dims,
            spacing_mm,
            origin_mm,
            data,
        })
    }

    pub fn zeros(dims: [usize; 3], spacing_mm: [f64; 3], origin_mm: [f64; 3], dtype: Dtype) -> Result<Self> {
        let n = dims.iter().product();
        let data = match dtype {
            Dtype::Int16 => VolumeData::Int16(vec![0; n]),
            Dtype::Uint8 => VolumeData::Uint8(vec![0; n]),
        };
        Self::new(dims, spacing_mm, origin_mm, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }
    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }
    pub fn origin_mm(&self) -> [f64; 3] {
        self.origin_mm
    }
    pub fn data(&self) -> &VolumeData {
        &self.data
    }
    pub fn dtype(&self) -> Dtype {
        self.data.dtype()
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_i16(&self) -> Option<&[i16]> {
        match &self.data {
            VolumeData::Int16(v) => Some(v),
            VolumeData::Uint8(_) => None,
        }
    }

    pub fn as_u8(&self) -> Option<&[u8]> {
        match &self.data {
            VolumeData::Uint8(v) => Some(v),
            VolumeData::Int16(_) => None,
        }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn value_f64(&self, idx: usize) -> f64 {
        match &self.data {
            VolumeData::Int16(v) => v[idx] as f64,
            VolumeData::Uint8(v) => v[idx] as f64,
        }
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Point3<f64> {
        Point3::new(
            self.origin_mm[0] + i as f64 * self.spacing_mm[0],
            self.origin_mm[1] + j as f64 * self.spacing_mm[1],
            self.origin_mm[2] + k as f64 * self.spacing_mm[2],
        )
    }

    /// Continuous voxel coordinates of a world point (voxel centres at integers).
    pub fn world_to_voxel(&self, p: &Point3<f64>) -> [f64; 3] {
        [
            (p.x - self.origin_mm[0]) / self.spacing_mm[0],
            (p.y - self.origin_mm[1]) / self.spacing_mm[1],
            (p.z - self.origin_mm[2]) / self.spacing_mm[2],
        ]
    }

    /// World-space extent covered by the voxel cells: `(min corner, max corner)`.
    pub fn bounds_mm(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for a in 0..3 {
            lo[a] = self.origin_mm[a] - 0.5 * self.spacing_mm[a];
            hi[a] = self.origin_mm[a] + (self.dims[a] as f64 - 0.5) * self.spacing_mm[a];
        }
        (lo, hi)
    }

    /// Label value of the voxel containing `p` (nearest neighbour), 0 outside.
    pub fn label_at(&self, p: &Point3<f64>) -> u8 {
        let g = self.world_to_voxel(p);
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let r = (g[a] + 0.5).floor();
            if r < 0.0 || r >= self.dims[a] as f64 {
                return 0;
            }
            idx[a] = r as usize;
        }
        match &self.data {
            VolumeData::Uint8(v) => v[self.index(idx[0], idx[1], idx[2])],
            VolumeData::Int16(v) => v[self.index(idx[0], idx[1], idx[2])].clamp(0, 255) as u8,
        }
    }

    /// Distinct non-zero label ids, ascending.
    pub fn label_ids(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        if let VolumeData::Uint8(v) = &self.data {
            for &l in v {
                seen[l as usize] = true;
            }
        }
        (1..=255u8).filter(|&l| seen[l as usize]).collect()
    }

    /// Tight voxel-index bounding box `(min, max)` (inclusive) of voxels
    /// satisfying `pred`, or `None` when there are none.
    pub fn voxel_bbox(&self, pred: impl Fn(f64) -> bool) -> Option<([usize; 3], [usize; 3])> {
        let [nx, ny, nz] = self.dims;
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for k in 0..nz {
            for j in 0..ny {
                let row = self.index(0, j, k);
                for i in 0..nx {
                    if pred(self.value_f64(row + i)) {
                        any = true;
                        let c = [i, j, k];
                        for a in 0..3 {
                            lo[a] = lo[a].min(c[a]);
                            hi[a] = hi[a].max(c[a]);
                        }
                    }
                }
            }
        }
        any.then_some((lo, hi))
    }

    /// World-space bounding box centre of the voxels carrying `label`.
    pub fn label_bbox_center(&self, label: u8) -> Option<Point3<f64>> {
        let (lo, hi) = self.voxel_bbox(|v| v == label as f64)?;
        let a = self.voxel_center(lo[0], lo[1], lo[2]);
        let b = self.voxel_center(hi[0], hi[1], hi[2]);
        Some(nalgebra::center(&a, &b))
    }

    /// World-space centroid of the voxels carrying `label`.
    pub fn label_centroid(&self, label: u8) -> Option<Point3<f64>> {
        let labels = self.as_u8()?;
        let [nx, ny, _] = self.dims;
        let mut sum = [0.0f64; 3];
        let mut n = 0usize;
        for (idx, &l) in labels.iter().enumerate() {
            if l == label {
                let i = idx % nx;
                let j = (idx / nx) % ny;
                let k = idx / (nx * ny);
                let c = self.voxel_center(i, j, k);
                sum[0] += c.x;
                sum[1] += c.y;
                sum[2] += c.z;
                n += 1;
            }
        }
        (n > 0).then(|| Point3::new(sum[0] / n as f64, sum[1] / n as f64, sum[2] / n as f64))
    }
}

/// Bone isolation: `a = max(HU − threshold, 0)`, so anything at or below the
/// threshold contributes nothing to the ray integrals.
pub fn threshold_bone(v: &Volume, hu_threshold: f64) -> Result<Volume> {
    let hu = v
        .as_i16()
        .ok_or_else(|| Error::invalid("volume", "threshold_bone expects an int16 HU volume"))?;
    if !hu_threshold.is_finite() {
        return Err(Error::invalid("hu_threshold", "must be finite"));
    }
    let out: Vec<i16> = hu
        .iter()
        .map(|&h| {
            let a = (h as f64 - hu_threshold).max(0.0).round();
            a.min(i16::MAX as f64) as i16
        })
        .collect();
    Volume::new(v.dims, v.spacing_mm, v.origin_mm, VolumeData::Int16(out))
}

/// Binary `{0, 1}` mask of the voxels carrying `id`.
pub fn label_mask(labels: &Volume, id: u8) -> Result<Volume> {
    let l = labels
        .as_u8()
        .ok_or_else(|| Error::invalid("labels", "label volume must be uint8"))?;
    let out = l.iter().map(|&x| u8::from(x == id)).collect();
    Volume::new(labels.dims, labels.spacing_mm, labels.origin_mm, VolumeData::Uint8(out))
}
