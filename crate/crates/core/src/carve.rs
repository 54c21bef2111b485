//! Silhouette back-projection onto a fixed reconstruction cube placed at a
//! triangulated object centre.

use nalgebra::{Point2, Point3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{triangulate_origin, CameraMatrix};
use crate::image::Image;
use crate::localize::CROP_SIZE;
use crate::scalar::Real;
use crate::volume::{Volume, VolumeData};

pub const GRID_DIM: usize = 128;
pub const DEFAULT_CUBE_MM: f64 = 80.0;
pub const DEFAULT_VOXEL_MM: f64 = DEFAULT_CUBE_MM / GRID_DIM as f64;
pub const DEFAULT_TAU: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OriginMode {
    Triangulated,
    GroundTruth,
}

/// Binary reconstruction cube.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub dims: [usize; 3],
    pub voxel_size_mm: f64,
    /// Outer corner of voxel `(0, 0, 0)`.
    pub origin_mm: [f64; 3],
    pub data: Vec<u8>,
    pub provenance: OriginMode,
}

/// Grid geometry without contents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub dim: usize,
    pub voxel_size_mm: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            dim: GRID_DIM,
            voxel_size_mm: DEFAULT_VOXEL_MM,
        }
    }
}

impl GridSpec {
    /// Corner of a cube centred on `center`.
    pub fn corner_for(&self, center: [f64; 3]) -> [f64; 3] {
        let half = 0.5 * self.dim as f64 * self.voxel_size_mm;
        center.map(|c| c - half)
    }
}

impl OccupancyGrid {
    pub fn empty(spec: GridSpec, center: [f64; 3], provenance: OriginMode) -> Self {
        OccupancyGrid {
            dims: [spec.dim; 3],
            voxel_size_mm: spec.voxel_size_mm,
            origin_mm: spec.corner_for(center),
            data: vec![0; spec.dim.pow(3)],
            provenance,
        }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.data[self.index(i, j, k)] != 0
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Point3<f64> {
        let s = self.voxel_size_mm;
        Point3::new(
            self.origin_mm[0] + (i as f64 + 0.5) * s,
            self.origin_mm[1] + (j as f64 + 0.5) * s,
            self.origin_mm[2] + (k as f64 + 0.5) * s,
        )
    }

    pub fn center(&self) -> Point3<f64> {
        let s = self.voxel_size_mm;
        Point3::new(
            self.origin_mm[0] + 0.5 * self.dims[0] as f64 * s,
            self.origin_mm[1] + 0.5 * self.dims[1] as f64 * s,
            self.origin_mm[2] + 0.5 * self.dims[2] as f64 * s,
        )
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn occupied_fraction(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    pub fn same_lattice(&self, other: &OccupancyGrid) -> bool {
        self.dims == other.dims && self.voxel_size_mm == other.voxel_size_mm && self.origin_mm == other.origin_mm
    }

    /// As a uint8 `{0,1}` volume (origin moved to the centre of voxel 0).
    pub fn to_volume(&self) -> Result<Volume> {
        let s = self.voxel_size_mm;
        Volume::new(
            self.dims,
            [s; 3],
            self.origin_mm.map(|o| o + 0.5 * s),
            VolumeData::Uint8(self.data.iter().map(|&v| u8::from(v != 0)).collect()),
        )
    }

    pub fn from_volume(v: &Volume, provenance: OriginMode) -> Result<Self> {
        let data = v
            .as_u8()
            .ok_or_else(|| Error::invalid("dtype", "occupancy volume must be uint8"))?;
        let s = v.spacing_mm();
        if s[0] != s[1] || s[1] != s[2] {
            return Err(Error::invalid("spacing_mm", "occupancy grids need isotropic voxels"));
        }
        Ok(OccupancyGrid {
            dims: v.dims(),
            voxel_size_mm: s[0],
            origin_mm: v.origin_mm().map(|o| o - 0.5 * s[0]),
            data: data.iter().map(|&x| u8::from(x != 0)).collect(),
            provenance,
        })
    }
}

/// Nearest-neighbour resampling of one label onto a grid lattice: the
/// ground-truth occupancy the reconstruction is compared with.
pub fn label_occupancy(
    labels: &Volume,
    label: u8,
    spec: GridSpec,
    center: [f64; 3],
    provenance: OriginMode,
) -> OccupancyGrid {
    let mut g = OccupancyGrid::empty(spec, center, provenance);
    let n = spec.dim;
    let data: Vec<u8> = (0..n * n * n)
        .into_par_iter()
        .map(|idx| {
            let (i, j, k) = (idx % n, (idx / n) % n, idx / (n * n));
            u8::from(labels.label_at(&g.voxel_center(i, j, k)) == label)
        })
        .collect();
    g.data = data;
    g
}

/// Object-centre estimate: the rays through the centre of every crop.
pub fn estimate_origin<T: Real>(adjusted: &[CameraMatrix<T>]) -> Result<Point3<T>> {
    let c = T::lit(CROP_SIZE as f64 / 2.0);
    let centers = vec![Point2::new(c, c); adjusted.len()];
    triangulate_origin(adjusted, &centers)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CarveMode {
    /// Occupied iff every view samples a positive value.
    Hull,
    /// Occupied iff at least `k` views see the voxel in frame (all views when
    /// `k` is `None`) and their mean sample is at least `tau`.
    MeanThresh { tau: f64, k: Option<usize> },
}

impl Default for CarveMode {
    fn default() -> Self {
        CarveMode::Hull
    }
}

impl CarveMode {
    pub fn mean_thresh_default() -> Self {
        CarveMode::MeanThresh {
            tau: DEFAULT_TAU,
            k: None,
        }
    }
}

/// A crop image (values normalized to `[0, 1]` for intensity modes) and its
/// crop-adjusted camera.
#[derive(Debug, Clone, Copy)]
pub struct CarveView<'a, T: Real> {
    pub image: &'a Image<f64>,
    pub camera: &'a CameraMatrix<T>,
}

pub fn carve<T: Real>(
    views: &[CarveView<'_, T>],
    center: Point3<T>,
    mode: CarveMode,
    spec: GridSpec,
    provenance: OriginMode,
) -> Result<OccupancyGrid> {
    if views.len() < 2 {
        return Err(Error::InsufficientViews {
            got: views.len(),
            need: 2,
        });
    }
    if !(center.x.is_finite() && center.y.is_finite() && center.z.is_finite()) {
        return Err(Error::invalid("origin", "must be finite"));
    }
    if let CarveMode::MeanThresh { tau, k } = mode {
        if !tau.is_finite() {
            return Err(Error::invalid("tau", "must be finite"));
        }
        if k == Some(0) || k.is_some_and(|k| k > views.len()) {
            return Err(Error::invalid("k", "must be between 1 and the number of views"));
        }
    }
    let center_f = [center.x.as_f64(), center.y.as_f64(), center.z.as_f64()];
    let mut grid = OccupancyGrid::empty(spec, center_f, provenance);
    let n = spec.dim;
    let s = T::lit(spec.voxel_size_mm);
    let corner = grid.origin_mm.map(T::lit);
    let half = T::lit(0.5);
    // Homogeneous projections change linearly along x; step them per view.
    let cams: Vec<_> = views.iter().map(|v| v.camera.normalized()).collect();
    let need = match mode {
        CarveMode::Hull => views.len(),
        CarveMode::MeanThresh { k, .. } => k.unwrap_or(views.len()),
    };
    grid.data.par_chunks_mut(n).enumerate().for_each(|(row, out)| {
        let (j, k) = (row % n, row / n);
        let y = corner[1] + (T::from_usize_lossy(j) + half) * s;
        let z = corner[2] + (T::from_usize_lossy(k) + half) * s;
        let x0 = corner[0] + half * s;
        let starts: Vec<_> = cams
            .iter()
            .map(|c| c.project_homogeneous(&Point3::new(x0, y, z)))
            .collect();
        let steps: Vec<_> = cams.iter().map(|c| c.matrix().column(0) * s).collect();
        for (i, cell) in out.iter_mut().enumerate() {
            let fi = T::from_usize_lossy(i);
            let mut all_positive = true;
            let mut sum = 0.0;
            let mut seen = 0usize;
            for (vi, view) in views.iter().enumerate() {
                let hgen = starts[vi] + steps[vi] * fi;
                let sample = if hgen.z > T::zero() {
                    view.image
                        .sample_nearest((hgen.x / hgen.z).as_f64(), (hgen.y / hgen.z).as_f64())
                } else {
                    None
                };
                match mode {
                    CarveMode::Hull => {
                        if !sample.is_some_and(|v| v > 0.0) {
                            all_positive = false;
                            break;
                        }
                    }
                    CarveMode::MeanThresh { .. } => {
                        if let Some(v) = sample {
                            sum += v;
                            seen += 1;
                        }
                    }
                }
            }
            *cell = match mode {
                CarveMode::Hull => u8::from(all_positive),
                CarveMode::MeanThresh { tau, .. } => u8::from(seen >= need && seen > 0 && sum / seen as f64 >= tau),
            };
        }
    });
    Ok(grid)
}
