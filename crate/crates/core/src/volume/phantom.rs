//! Analytic phantoms rasterized into HU and label volumes; stand-ins for
//! segmented CT scans.

use nalgebra::{Matrix3, Point3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::{Volume, VolumeData};
use crate::error::{Error, Result};

pub const MIN_HU: i16 = -1024;
pub const MAX_HU: i16 = 3071;
/// Stainless-steel bead, clipped to the scanner range.
pub const BEAD_HU: i16 = MAX_HU;

/// Primitive geometry in its local frame; cylinders and tubes run along local z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere {
        radius: f64,
    },
    Box {
        half_extents: [f64; 3],
    },
    EllipticCylinder {
        radii: [f64; 2],
        half_height: f64,
    },
    Tube {
        inner_radius: f64,
        outer_radius: f64,
        half_height: f64,
    },
}

impl Shape {
    fn local_half_extents(&self) -> [f64; 3] {
        match *self {
            Shape::Sphere { radius } => [radius; 3],
            Shape::Box { half_extents } => half_extents,
            Shape::EllipticCylinder { radii, half_height } => [radii[0], radii[1], half_height],
            Shape::Tube {
                outer_radius,
                half_height,
                ..
            } => [outer_radius, outer_radius, half_height],
        }
    }

    #[inline]
    fn contains_local(&self, p: &Vector3<f64>) -> bool {
        match *self {
            Shape::Sphere { radius } => p.norm_squared() <= radius * radius,
            Shape::Box { half_extents: h } => p.x.abs() <= h[0] && p.y.abs() <= h[1] && p.z.abs() <= h[2],
            Shape::EllipticCylinder { radii, half_height } => {
                let a = p.x / radii[0];
                let b = p.y / radii[1];
                p.z.abs() <= half_height && a * a + b * b <= 1.0
            }
            Shape::Tube {
                inner_radius,
                outer_radius,
                half_height,
            } => {
                let r2 = p.x * p.x + p.y * p.y;
                p.z.abs() <= half_height && r2 <= outer_radius * outer_radius && r2 > inner_radius * inner_radius
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Shape::Sphere { radius } => radius > 0.0,
            Shape::Box { half_extents } => half_extents.iter().all(|&h| h > 0.0),
            Shape::EllipticCylinder { radii, half_height } => radii.iter().all(|&r| r > 0.0) && half_height > 0.0,
            Shape::Tube {
                inner_radius,
                outer_radius,
                half_height,
            } => inner_radius >= 0.0 && outer_radius > inner_radius && half_height > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("shape", "primitive extents must be positive"))
        }
    }
}

fn identity_rows() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

/// One solid with a rigid placement, an HU value and a label id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub center: [f64; 3],
    /// Local-to-world rotation, row-major.
    #[serde(default = "identity_rows")]
    pub rotation: [[f64; 3]; 3],
    pub hu: i16,
    #[serde(default)]
    pub label: u8,
}

impl Primitive {
    pub fn new(shape: Shape, center: [f64; 3], hu: i16, label: u8) -> Self {
        Primitive {
            shape,
            center,
            rotation: identity_rows(),
            hu,
            label,
        }
    }

    pub fn rotated(mut self, r: &Matrix3<f64>) -> Self {
        let cur = self.rotation_matrix();
        let next = r * cur;
        for i in 0..3 {
            for j in 0..3 {
                self.rotation[i][j] = next[(i, j)];
            }
        }
        self
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let r = &self.rotation;
        Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        )
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        let local = self.rotation_matrix().transpose() * (p - Point3::from(self.center));
        self.shape.contains_local(&local)
    }

    /// World-space axis-aligned bounding box `(lo, hi)`.
    pub fn aabb(&self) -> ([f64; 3], [f64; 3]) {
        let h = self.shape.local_half_extents();
        let r = self.rotation_matrix();
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for a in 0..3 {
            let ext: f64 = (0..3).map(|b| r[(a, b)].abs() * h[b]).sum();
            lo[a] = self.center[a] - ext;
            hi[a] = self.center[a] + ext;
        }
        (lo, hi)
    }

    fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if !(MIN_HU..=MAX_HU).contains(&self.hu) {
            return Err(Error::invalid(
                "hu",
                format!("{} outside [{MIN_HU}, {MAX_HU}]", self.hu),
            ));
        }
        if self.center.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("center", "must be finite"));
        }
        let r = self.rotation_matrix();
        if (r.transpose() * r - Matrix3::identity()).abs().max() > 1e-6 || r.determinant() < 0.0 {
            return Err(Error::invalid("rotation", "must be a proper rotation"));
        }
        Ok(())
    }
}

/// Grid geometry a phantom is rasterized onto.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    /// Centre of voxel (0, 0, 0).
    pub origin_mm: [f64; 3],
}

/// Parameters of one vertebra-like composite, in the world frame
/// (+x left, +y posterior, +z superior).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VertebraSpec {
    pub center: [f64; 3],
    pub scale: f64,
    pub hu: i16,
    pub label: u8,
}

impl VertebraSpec {
    /// Body, neural arch around the canal, transverse and spinous processes.
    pub fn primitives(&self) -> Vec<Primitive> {
        let s = self.scale;
        let c = Vector3::from(self.center);
        let at = |x: f64, y: f64, z: f64| -> [f64; 3] {
            let p = c + Vector3::new(x, y, z) * s;
            [p.x, p.y, p.z]
        };
        let canal_y = 23.0;
        let arch_outer = 12.5;
        let mut out = vec![
            Primitive::new(
                Shape::EllipticCylinder {
                    radii: [18.0 * s, 14.0 * s],
                    half_height: 12.0 * s,
                },
                at(0.0, 0.0, 0.0),
                self.hu,
                self.label,
            ),
            Primitive::new(
                Shape::Tube {
                    inner_radius: 8.0 * s,
                    outer_radius: arch_outer * s,
                    half_height: 8.0 * s,
                },
                at(0.0, canal_y, 1.0),
                self.hu,
                self.label,
            ),
        ];
        for side in [-1.0, 1.0] {
            out.push(Primitive::new(
                Shape::Box {
                    half_extents: [10.0 * s, 3.5 * s, 4.0 * s],
                },
                at(side * (arch_outer + 10.0), canal_y, 1.0),
                self.hu,
                self.label,
            ));
        }
        let tilt = Rotation3::from_axis_angle(&Vector3::x_axis(), (-20.0f64).to_radians());
        out.push(
            Primitive::new(
                Shape::Box {
                    half_extents: [2.5 * s, 6.0 * s, 5.0 * s],
                },
                at(0.0, canal_y + arch_outer + 5.0, -2.0),
                self.hu,
                self.label,
            )
            .rotated(tilt.matrix()),
        );
        out
    }
}

/// A list of primitives rasterized in order; later primitives win overlaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Phantom {
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub background_hu: i16,
}

/// Vertical distance between consecutive vertebra centres in the lumbar preset.
pub const LUMBAR_PITCH_MM: f64 = 34.0;

impl Phantom {
    pub fn new(primitives: Vec<Primitive>) -> Self {
        Phantom {
            primitives,
            background_hu: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.primitives.iter().try_for_each(Primitive::validate)?;
        if !(MIN_HU..=MAX_HU).contains(&self.background_hu) {
            return Err(Error::invalid("background_hu", "outside HU range"));
        }
        Ok(())
    }

    /// Five vertebra composites labelled 1–5 (L1 superior), centred on the
    /// world origin, with slightly increasing size towards L5.
    pub fn lumbar(levels: usize) -> Self {
        let scales = [0.92, 0.96, 1.0, 1.03, 1.06];
        let hus = [420, 440, 460, 480, 500];
        let mut prims = Vec::new();
        for i in 0..levels {
            let z = ((levels as f64 - 1.0) / 2.0 - i as f64) * LUMBAR_PITCH_MM;
            let spec = VertebraSpec {
                center: [0.0, 0.0, z],
                scale: scales[i % scales.len()],
                hu: hus[i % hus.len()],
                label: (i + 1) as u8,
            };
            prims.extend(spec.primitives());
        }
        Phantom::new(prims)
    }

    /// A single sphere with label 1.
    pub fn sphere(radius_mm: f64, hu: i16) -> Self {
        Phantom::new(vec![Primitive::new(
            Shape::Sphere { radius: radius_mm },
            [0.0; 3],
            hu,
            1,
        )])
    }

    /// An L-shaped solid (label 1) whose bounding-box centre differs from its centroid.
    pub fn l_shape(hu: i16) -> Self {
        Phantom::new(vec![
            Primitive::new(
                Shape::Box {
                    half_extents: [20.0, 5.0, 5.0],
                },
                [0.0, -15.0, 0.0],
                hu,
                1,
            ),
            Primitive::new(
                Shape::Box {
                    half_extents: [5.0, 15.0, 5.0],
                },
                [-15.0, 5.0, 0.0],
                hu,
                1,
            ),
        ])
    }

    /// Adds unlabelled steel beads.
    pub fn with_beads(mut self, centers: &[[f64; 3]], radii_mm: &[f64]) -> Self {
        for (c, &r) in centers.iter().zip(radii_mm) {
            self.primitives
                .push(Primitive::new(Shape::Sphere { radius: r }, *c, BEAD_HU, 0));
        }
        self
    }

    /// Applies the rigid motion `x ↦ R·x + t` to every primitive.
    pub fn transformed(&self, r: &Matrix3<f64>, t: &Vector3<f64>) -> Self {
        let mut out = self.clone();
        for p in &mut out.primitives {
            let c = r * Vector3::from(p.center) + t;
            *p = p.rotated(r);
            p.center = [c.x, c.y, c.z];
        }
        out
    }

    /// World AABB over all primitives.
    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        let mut it = self.primitives.iter().map(Primitive::aabb);
        let (mut lo, mut hi) = it.next()?;
        for (l, h) in it {
            for a in 0..3 {
                lo[a] = lo[a].min(l[a]);
                hi[a] = hi[a].max(h[a]);
            }
        }
        Some((lo, hi))
    }

    /// Smallest lattice at `spacing_mm` covering the phantom plus `margin_mm`.
    pub fn fitted_lattice(&self, spacing_mm: f64, margin_mm: f64) -> Lattice {
        let (lo, hi) = self.bounds().unwrap_or(([0.0; 3], [0.0; 3]));
        let mut dims = [0; 3];
        let mut origin = [0.0; 3];
        for a in 0..3 {
            let start = lo[a] - margin_mm;
            let extent = hi[a] + margin_mm - start;
            dims[a] = (extent / spacing_mm).ceil() as usize + 1;
            origin[a] = start;
        }
        Lattice {
            dims,
            spacing_mm: [spacing_mm; 3],
            origin_mm: origin,
        }
    }
}

/// Rasterizes a phantom: voxel centres inside a primitive take its HU and
/// label, later primitives overriding earlier ones. Returns `(HU, labels)`.
pub fn rasterize_phantom(ph: &Phantom, lattice: &Lattice) -> Result<(Volume, Volume)> {
    ph.validate()?;
    let n: usize = lattice.dims.iter().product();
    let mut hu = vec![ph.background_hu; n];
    let mut labels = vec![0u8; n];
    let [nx, ny, nz] = lattice.dims;
    let sp = lattice.spacing_mm;
    let org = lattice.origin_mm;
    for prim in &ph.primitives {
        let (lo, hi) = prim.aabb();
        let mut range = [(0usize, 0usize); 3];
        let mut empty = false;
        for a in 0..3 {
            let first = ((lo[a] - org[a]) / sp[a]).ceil().max(0.0);
            let last = ((hi[a] - org[a]) / sp[a]).floor().min(lattice.dims[a] as f64 - 1.0);
            if last < first {
                empty = true;
                break;
            }
            range[a] = (first as usize, last as usize);
        }
        if empty {
            continue;
        }
        let rt = prim.rotation_matrix().transpose();
        let center = Point3::from(prim.center);
        for k in range[2].0..=range[2].1 {
            for j in range[1].0..=range[1].1 {
                let row = nx * (j + ny * k);
                for i in range[0].0..=range[0].1 {
                    let p = Point3::new(
                        org[0] + i as f64 * sp[0],
                        org[1] + j as f64 * sp[1],
                        org[2] + k as f64 * sp[2],
                    );
                    if prim.shape.contains_local(&(rt * (p - center))) {
                        hu[row + i] = prim.hu;
                        labels[row + i] = prim.label;
                    }
                }
            }
        }
    }
    debug_assert_eq!(hu.len(), nx * ny * nz);
    Ok((
        Volume::new(lattice.dims, sp, org, VolumeData::Int16(hu))?,
        Volume::new(lattice.dims, sp, org, VolumeData::Uint8(labels))?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube_lattice(n: usize, spacing: f64) -> Lattice {
        let half = (n as f64 - 1.0) / 2.0 * spacing;
        Lattice {
            dims: [n; 3],
            spacing_mm: [spacing; 3],
            origin_mm: [-half; 3],
        }
    }

    #[test]
    fn sphere_voxel_count_matches_volume() {
        let ph = Phantom::sphere(10.0, 800);
        let (hu, labels) = rasterize_phantom(&ph, &cube_lattice(64, 1.0)).unwrap();
        let count = hu.as_i16().unwrap().iter().filter(|&&h| h == 800).count() as f64;
        let analytic = 4.0 / 3.0 * std::f64::consts::PI * 1000.0;
        assert!((count - analytic).abs() / analytic < 0.02, "{count} vs {analytic}");
        assert_eq!(
            labels.as_u8().unwrap().iter().filter(|&&l| l == 1).count() as f64,
            count
        );
    }

    #[test]
    fn empty_phantom_is_all_zero() {
        let (hu, labels) = rasterize_phantom(&Phantom::default(), &cube_lattice(8, 1.0)).unwrap();
        assert!(hu.as_i16().unwrap().iter().all(|&h| h == 0));
        assert!(labels.as_u8().unwrap().iter().all(|&l| l == 0));
    }

    #[test]
    fn later_primitive_wins_overlap() {
        let a = Primitive::new(Shape::Box { half_extents: [4.0; 3] }, [0.0; 3], 100, 1);
        let b = Primitive::new(Shape::Sphere { radius: 2.0 }, [0.0; 3], 200, 2);
        let (hu, labels) = rasterize_phantom(&Phantom::new(vec![a, b]), &cube_lattice(11, 1.0)).unwrap();
        let center = hu.index(5, 5, 5);
        assert_eq!(labels.as_u8().unwrap()[center], 2);
        assert_eq!(hu.as_i16().unwrap()[center], 200);
        let corner = hu.index(2, 2, 2);
        assert_eq!(labels.as_u8().unwrap()[corner], 1);
    }

    #[test]
    fn rasterization_is_deterministic() {
        let ph = Phantom::lumbar(2);
        let lat = ph.fitted_lattice(1.0, 2.0);
        assert_eq!(
            rasterize_phantom(&ph, &lat).unwrap(),
            rasterize_phantom(&ph, &lat).unwrap()
        );
    }

    #[test]
    fn rejects_out_of_range_hu() {
        let ph = Phantom::sphere(5.0, 4000);
        assert!(rasterize_phantom(&ph, &cube_lattice(4, 1.0)).is_err());
        let ph = Phantom::sphere(-1.0, 100);
        assert!(rasterize_phantom(&ph, &cube_lattice(4, 1.0)).is_err());
    }

    #[test]
    fn lumbar_vertebra_occupancy_fits_reconstruction_cube() {
        let ph = Phantom::lumbar(5);
        let lat = ph.fitted_lattice(0.625, 2.0);
        let (_, labels) = rasterize_phantom(&ph, &lat).unwrap();
        let voxel_volume = 0.625f64.powi(3);
        for id in 1..=5u8 {
            let n = labels.as_u8().unwrap().iter().filter(|&&l| l == id).count() as f64;
            let fraction = n * voxel_volume / 80f64.powi(3);
            assert!((0.03..0.07).contains(&fraction), "label {id}: {fraction}");
            let (lo, hi) = labels.voxel_bbox(|v| v == id as f64).unwrap();
            for a in 0..3 {
                assert!(((hi[a] - lo[a]) as f64 * 0.625) < 70.0);
            }
        }
    }

    #[test]
    fn phantom_json_round_trip() {
        let ph = Phantom::lumbar(1).with_beads(&[[1.0, 2.0, 3.0]], &[2.5]);
        let text = serde_json::to_string(&ph).unwrap();
        let back: Phantom = serde_json::from_str(&text).unwrap();
        assert_eq!(back, ph);
    }
}
