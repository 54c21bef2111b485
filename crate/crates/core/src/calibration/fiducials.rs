use std::path::Path;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Bead size class: 5 mm reference beads drive the correspondence search,
/// 3 mm standard beads join in the final solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BeadClass {
    #[serde(rename = "REF")]
    Reference,
    #[serde(rename = "STD")]
    Standard,
}

impl BeadClass {
    pub fn diameter_mm(self) -> f64 {
        match self {
            BeadClass::Reference => REFERENCE_DIAMETER_MM,
            BeadClass::Standard => STANDARD_DIAMETER_MM,
        }
    }
}

pub const REFERENCE_DIAMETER_MM: f64 = 5.0;
pub const STANDARD_DIAMETER_MM: f64 = 3.0;
/// Reference beads needed for a DLT solve.
pub const MIN_REFERENCE: usize = 6;

/// 3D bead layout with per-bead class, as stored in fiducial files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiducialSet {
    #[serde(rename = "points3d_mm")]
    pub points3d: Vec<[f64; 3]>,
    #[serde(rename = "class")]
    pub classes: Vec<BeadClass>,
}

impl FiducialSet {
    pub fn new(points3d: Vec<[f64; 3]>, classes: Vec<BeadClass>) -> Result<Self> {
        let set = FiducialSet { points3d, classes };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points3d.len() != self.classes.len() {
            return Err(Error::invalid(
                "class",
                format!("{} classes for {} points", self.classes.len(), self.points3d.len()),
            ));
        }
        if self.points3d.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("points3d_mm", "coordinates must be finite"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points3d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points3d.is_empty()
    }

    pub fn point<T: Real>(&self, i: usize) -> Point3<T> {
        let p = self.points3d[i];
        Point3::new(T::lit(p[0]), T::lit(p[1]), T::lit(p[2]))
    }

    pub fn points<T: Real>(&self) -> Vec<Point3<T>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Indices of beads of the given class, in file order.
    pub fn indices_of(&self, class: BeadClass) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.classes[i] == class).collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let set: FiducialSet = serde_json::from_str(text).map_err(|e| Error::json("fiducial file", e))?;
        set.validate()?;
        Ok(set)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}
