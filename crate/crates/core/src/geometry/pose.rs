//! C-arm style poses and the 28-view acquisition protocol.
//!
//! World frame: +x patient left, +y posterior, +z superior. A pose places
//! the X-ray source on a sphere around `center`; the optical axis always
//! passes through `center`.

use nalgebra::{Matrix3, Point3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::camera::{compose_camera, CameraMatrix};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ViewClass {
    Ap,
    Lateral,
    Oblique,
    Misc,
}

impl ViewClass {
    pub const ALL: [ViewClass; 4] = [ViewClass::Ap, ViewClass::Lateral, ViewClass::Oblique, ViewClass::Misc];

    pub fn as_str(self) -> &'static str {
        match self {
            ViewClass::Ap => "AP",
            ViewClass::Lateral => "LATERAL",
            ViewClass::Oblique => "OBLIQUE",
            ViewClass::Misc => "MISC",
        }
    }
}

impl std::fmt::Display for ViewClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ViewClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "AP" => Ok(ViewClass::Ap),
            "LATERAL" | "LAT" | "LR" => Ok(ViewClass::Lateral),
            "OBLIQUE" | "OB" => Ok(ViewClass::Oblique),
            "MISC" | "MI" => Ok(ViewClass::Misc),
            other => Err(Error::invalid("view_class", format!("unknown class {other}"))),
        }
    }
}

/// Detector and source geometry of one acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Rotation in the transverse plane, degrees; +90 puts the source at the patient's left.
    pub orbit_deg: f64,
    /// Cranio-caudal tilt, degrees; positive moves the source superiorly.
    pub tilt_deg: f64,
    /// Source-to-detector distance.
    pub focal_len_mm: f64,
    /// Source-to-isocenter distance.
    pub source_to_center_mm: f64,
    pub detector_px: [usize; 2],
    pub pixel_pitch_mm: f64,
    pub view_class: ViewClass,
    /// Isocenter the optical axis passes through.
    pub center_mm: [f64; 3],
}

pub const DEFAULT_FOCAL_LEN_MM: f64 = 1000.0;
pub const DEFAULT_SPHERE_DIAMETER_MM: f64 = 1000.0;
pub const DEFAULT_DETECTOR_PX: usize = 448;
pub const DEFAULT_PIXEL_PITCH_MM: f64 = 0.66;

impl Pose {
    pub fn new(orbit_deg: f64, tilt_deg: f64, view_class: ViewClass, center_mm: [f64; 3]) -> Self {
        Pose {
            orbit_deg,
            tilt_deg,
            focal_len_mm: DEFAULT_FOCAL_LEN_MM,
            source_to_center_mm: DEFAULT_SPHERE_DIAMETER_MM / 2.0,
            detector_px: [DEFAULT_DETECTOR_PX, DEFAULT_DETECTOR_PX],
            pixel_pitch_mm: DEFAULT_PIXEL_PITCH_MM,
            view_class,
            center_mm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("orbit_deg", self.orbit_deg),
            ("tilt_deg", self.tilt_deg),
            ("focal_len_mm", self.focal_len_mm),
            ("source_to_center_mm", self.source_to_center_mm),
            ("pixel_pitch_mm", self.pixel_pitch_mm),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::invalid(name, "must be finite"));
            }
        }
        if self.pixel_pitch_mm <= 0.0 {
            return Err(Error::invalid("pixel_pitch_mm", "must be > 0"));
        }
        if self.focal_len_mm <= 0.0 {
            return Err(Error::invalid("focal_len_mm", "must be > 0"));
        }
        if self.source_to_center_mm <= 0.0 {
            return Err(Error::invalid("source_to_center_mm", "must be > 0"));
        }
        if self.detector_px[0] == 0 || self.detector_px[1] == 0 {
            return Err(Error::invalid("detector_px", "must be non-zero"));
        }
        Ok(())
    }

    /// Rotation taking the base (AP, untilted) camera frame to this pose.
    fn gantry<T: Real>(&self) -> Rotation3<T> {
        let orbit = T::lit(self.orbit_deg.to_radians());
        let tilt = T::lit(self.tilt_deg.to_radians());
        Rotation3::from_axis_angle(&Vector3::z_axis(), orbit) * Rotation3::from_axis_angle(&Vector3::x_axis(), -tilt)
    }

    /// Unit vector from the isocenter towards the source.
    pub fn source_direction<T: Real>(&self) -> Vector3<T> {
        self.gantry::<T>() * anterior::<T>()
    }

    pub fn source_position<T: Real>(&self) -> Point3<T> {
        let c = Point3::new(
            T::lit(self.center_mm[0]),
            T::lit(self.center_mm[1]),
            T::lit(self.center_mm[2]),
        );
        c + self.source_direction::<T>() * T::lit(self.source_to_center_mm)
    }

    /// Unit optical axis, pointing from the source through the isocenter.
    pub fn optical_axis<T: Real>(&self) -> Vector3<T> {
        -self.source_direction::<T>()
    }

    pub fn intrinsics<T: Real>(&self) -> Matrix3<T> {
        let f = T::lit(self.focal_len_mm / self.pixel_pitch_mm);
        let cx = T::lit(self.detector_px[0] as f64 / 2.0);
        let cy = T::lit(self.detector_px[1] as f64 / 2.0);
        Matrix3::new(f, T::zero(), cx, T::zero(), f, cy, T::zero(), T::zero(), T::one())
    }

    /// Camera rows: image +u, image +v (down), optical axis.
    pub fn rotation<T: Real>(&self) -> Matrix3<T> {
        let g = self.gantry::<T>();
        let x = g * Vector3::x();
        let y = g * -Vector3::z();
        let z = g * Vector3::y();
        Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()])
    }

    pub fn camera<T: Real>(&self) -> Result<CameraMatrix<T>> {
        self.validate()?;
        compose_camera(
            &self.intrinsics::<T>(),
            &self.rotation::<T>(),
            &self.source_position::<T>(),
        )
    }

    /// Same pose moved to a new isocenter.
    pub fn with_center(mut self, center_mm: [f64; 3]) -> Self {
        self.center_mm = center_mm;
        self
    }

    pub fn with_offset(mut self, d_orbit_deg: f64, d_tilt_deg: f64) -> Self {
        self.orbit_deg += d_orbit_deg;
        self.tilt_deg += d_tilt_deg;
        self
    }
}

fn anterior<T: Real>() -> Vector3<T> {
    -Vector3::y()
}

/// Off-plane stand-ins for the clustered miscellaneous poses:
/// `(orbit_deg, tilt_deg)`.
pub const MISC_POSES: [(f64, f64); 12] = [
    (30.0, 10.0),
    (-30.0, 10.0),
    (30.0, -10.0),
    (-30.0, -10.0),
    (60.0, 20.0),
    (-60.0, 20.0),
    (60.0, -20.0),
    (-60.0, -20.0),
    (30.0, -20.0),
    (-30.0, 20.0),
    (0.0, 25.0),
    (0.0, -25.0),
];

/// Orbit/tilt pairs of the protocol in order: 6 AP, 6 lateral, 4 oblique, 12 misc.
pub fn protocol_angles() -> Vec<(ViewClass, f64, f64)> {
    let mut out = Vec::with_capacity(28);
    for orbit in [0.0, 180.0] {
        for tilt in [-15.0, 0.0, 15.0] {
            out.push((ViewClass::Ap, orbit, tilt));
        }
    }
    for orbit in [90.0, -90.0] {
        for tilt in [-15.0, 0.0, 15.0] {
            out.push((ViewClass::Lateral, orbit, tilt));
        }
    }
    for orbit in [20.0, -20.0, 160.0, -160.0] {
        out.push((ViewClass::Oblique, orbit, 0.0));
    }
    for (orbit, tilt) in MISC_POSES {
        out.push((ViewClass::Misc, orbit, tilt));
    }
    out
}

/// The 28 clinically feasible poses around `center` on a sphere of the given diameter.
pub fn sample_pose_protocol(center: [f64; 3], sphere_diameter_mm: f64) -> Result<Vec<Pose>> {
    if !(sphere_diameter_mm > 0.0 && sphere_diameter_mm.is_finite()) {
        return Err(Error::invalid("sphere_diameter_mm", "must be > 0"));
    }
    Ok(protocol_angles()
        .into_iter()
        .map(|(class, orbit, tilt)| {
            let mut p = Pose::new(orbit, tilt, class, center);
            p.source_to_center_mm = sphere_diameter_mm / 2.0;
            p
        })
        .collect())
}
