//! Random bead layouts and analytically rendered bead-only radiographs.

use nalgebra::{Point2, Point3};
use rand::Rng;

use super::fiducials::{BeadClass, FiducialSet};
use crate::drr::DrrImage;
use crate::error::Result;
use crate::geometry::{CameraMatrix, Pose, ViewClass};
use crate::image::{Gray16, Image};
use crate::volume::BEAD_HU;

pub const REFERENCE_COUNT: usize = 7;
pub const STANDARD_COUNT: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    /// Semi-axes of the ellipsoid beads are drawn from, around the pose centre.
    pub semi_axes_mm: [f64; 3],
    pub min_separation_mm: f64,
    /// Extra clearance between projected bead discs.
    pub min_gap_px: f64,
    /// Beads must project at least this far inside the image border.
    pub margin_px: f64,
    pub max_tilt_deg: f64,
    pub center_jitter_mm: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            semi_axes_mm: [45.0, 45.0, 45.0],
            min_separation_mm: 12.0,
            min_gap_px: 4.0,
            margin_px: 16.0,
            max_tilt_deg: 25.0,
            center_jitter_mm: 10.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BeadScene {
    pub fiducials: FiducialSet,
    pub pose: Pose,
    pub camera: CameraMatrix<f64>,
    pub image: Gray16,
    /// Exact projections of the bead centres, in fiducial order.
    pub projections: Vec<Point2<f64>>,
}

/// Seven reference and seven standard beads placed uniformly in an
/// ellipsoid with a minimum pairwise separation.
pub fn random_layout<R: Rng>(rng: &mut R, center: [f64; 3], semi_axes: [f64; 3], min_sep: f64) -> FiducialSet {
    let total = REFERENCE_COUNT + STANDARD_COUNT;
    let mut pts: Vec<[f64; 3]> = Vec::with_capacity(total);
    while pts.len() < total {
        let u: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        if u.iter().map(|x| x * x).sum::<f64>() > 1.0 {
            continue;
        }
        let p: [f64; 3] = std::array::from_fn(|a| center[a] + u[a] * semi_axes[a]);
        let ok = pts.iter().all(|q| {
            let d2: f64 = (0..3).map(|a| (p[a] - q[a]).powi(2)).sum();
            d2 >= min_sep * min_sep
        });
        if ok {
            pts.push(p);
        }
    }
    let classes = (0..total)
        .map(|i| {
            if i < REFERENCE_COUNT {
                BeadClass::Reference
            } else {
                BeadClass::Standard
            }
        })
        .collect();
    FiducialSet { points3d: pts, classes }
}

/// Line integrals through solid spheres of uniform attenuation `mu`,
/// evaluated exactly at pixel centres.
pub fn render_beads(cam: &CameraMatrix<f64>, pose: &Pose, fiducials: &FiducialSet, mu: f64) -> Result<DrrImage<f64>> {
    let [w, h] = pose.detector_px;
    let cam = cam.normalized();
    let x0 = cam.center()?;
    let m_inv = cam
        .m()
        .try_inverse()
        .ok_or_else(|| crate::error::Error::DegenerateCamera("M is not invertible".into()))?;
    let f_px = cam.decompose()?.k[(0, 0)];
    let mut raw = vec![0.0f64; w * h];
    for (i, p) in fiducials.points3d.iter().enumerate() {
        let c = Point3::new(p[0], p[1], p[2]);
        let r = fiducials.classes[i].diameter_mm() / 2.0;
        let centre_px = cam.project(&c)?;
        let dist = (c - x0).norm();
        let reach = f_px * r / (dist - r).max(1e-6) * 1.5 + 3.0;
        let i_lo = (centre_px.x - reach).floor().max(0.0) as usize;
        let j_lo = (centre_px.y - reach).floor().max(0.0) as usize;
        let i_hi = ((centre_px.x + reach).ceil().max(0.0) as usize).min(w.saturating_sub(1));
        let j_hi = ((centre_px.y + reach).ceil().max(0.0) as usize).min(h.saturating_sub(1));
        for j in j_lo..=j_hi {
            for ii in i_lo..=i_hi {
                let d = (m_inv * nalgebra::Vector3::new(ii as f64 + 0.5, j as f64 + 0.5, 1.0)).normalize();
                let oc = c - x0;
                let b = d.dot(&oc);
                let perp2 = oc.norm_squared() - b * b;
                if perp2 < r * r && b > 0.0 {
                    raw[j * w + ii] += mu * 2.0 * (r * r - perp2).sqrt();
                }
            }
        }
    }
    Ok(DrrImage {
        pixel_pitch_mm: pose.pixel_pitch_mm,
        raw: Image::from_vec(w, h, raw)?,
    })
}

/// Draws a pose and layout satisfying the spacing constraints and renders it.
pub fn random_scene<R: Rng>(rng: &mut R, spec: &SceneSpec) -> Result<BeadScene> {
    loop {
        let center: [f64; 3] =
            std::array::from_fn(|_| rng.random_range(-spec.center_jitter_mm..=spec.center_jitter_mm));
        let orbit = rng.random_range(-180.0..180.0);
        let tilt = rng.random_range(-spec.max_tilt_deg..=spec.max_tilt_deg);
        let pose = Pose::new(orbit, tilt, ViewClass::Misc, center);
        let camera: CameraMatrix<f64> = pose.camera()?;
        let fiducials = random_layout(rng, center, spec.semi_axes_mm, spec.min_separation_mm);
        let projections: Vec<Point2<f64>> = fiducials
            .points::<f64>()
            .iter()
            .map(|p| camera.project(p))
            .collect::<Result<_>>()?;
        if !projections_are_separated(&camera, &pose, &fiducials, &projections, spec) {
            continue;
        }
        let image = render_beads(&camera, &pose, &fiducials, BEAD_HU as f64)?.normalized();
        return Ok(BeadScene {
            fiducials,
            pose,
            camera,
            image,
            projections,
        });
    }
}

fn projections_are_separated(
    cam: &CameraMatrix<f64>,
    pose: &Pose,
    fiducials: &FiducialSet,
    projections: &[Point2<f64>],
    spec: &SceneSpec,
) -> bool {
    let [w, h] = pose.detector_px;
    let x0 = match cam.center() {
        Ok(c) => c,
        Err(_) => return false,
    };
    let f_px = pose.focal_len_mm / pose.pixel_pitch_mm;
    let radii: Vec<f64> = fiducials
        .points::<f64>()
        .iter()
        .zip(&fiducials.classes)
        .map(|(p, c)| f_px * (c.diameter_mm() / 2.0) / (p - x0).norm())
        .collect();
    for (i, p) in projections.iter().enumerate() {
        let m = spec.margin_px + radii[i];
        if p.x < m || p.y < m || p.x > w as f64 - m || p.y > h as f64 - m {
            return false;
        }
        for j in 0..i {
            if (p - projections[j]).norm() < radii[i] + radii[j] + spec.min_gap_px {
                return false;
            }
        }
    }
    true
}
