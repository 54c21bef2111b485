//! Fiducial-based camera calibration: bead detection, exhaustive
//! correspondence search, DLT, rectification and bead inpainting.

mod correspondence;
mod detect;
mod dlt;
mod fiducials;
mod inpaint;
mod rectify;
pub mod synthetic;

pub use correspondence::{resolve_correspondence, Correspondence, MAX_ASSIGNMENTS};
pub use detect::{detect_fiducials, DetectOptions, Detection, Polarity, NOMINAL_MAGNIFICATION};
pub use dlt::{check_non_coplanar, normalize_2d, normalize_3d, reprojection_errors, solve_dlt, MIN_DLT_POINTS};
pub use fiducials::{BeadClass, FiducialSet, MIN_REFERENCE, REFERENCE_DIAMETER_MM, STANDARD_DIAMETER_MM};
pub use inpaint::inpaint_fiducials;
pub use rectify::{
    calibrate_detections, calibrate_image, mutual_nearest, paired_qa, rectify_all, CalibrationReport,
    CalibrationResult, Match, QaSummary, ResidualEntry, DEFAULT_GATE_PX,
};
