//! Final calibration: match every projected bead to a detection, re-solve
//! and report residual statistics.

use nalgebra::{Point2, Point3};
use serde::{Deserialize, Serialize};

use super::correspondence::resolve_correspondence;
use super::detect::{detect_fiducials, DetectOptions, Detection};
use super::dlt::{reprojection_errors, solve_dlt, MIN_DLT_POINTS};
use super::fiducials::{BeadClass, FiducialSet};
use crate::error::{Error, Result};
use crate::geometry::{CameraDecomposition, CameraMatrix};
use crate::image::Image;
use crate::scalar::Real;

/// Default mutual-nearest gating radius.
pub const DEFAULT_GATE_PX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Match {
    pub fiducial: usize,
    pub detection: usize,
}

#[derive(Debug, Clone)]
pub struct CalibrationResult<T: Real> {
    pub camera: CameraMatrix<T>,
    pub decomposition: CameraDecomposition<T>,
    pub matches: Vec<Match>,
    /// Reprojection distance per match, same order as `matches`.
    pub residuals_px: Vec<T>,
    pub mean_px: T,
    pub median_px: T,
    pub mean_mm: T,
    pub median_mm: T,
    pub pixel_pitch_mm: T,
}

fn mean<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |a, &b| a + b) / T::from_usize_lossy(v.len().max(1))
}

fn median<T: Real>(v: &[T]) -> T {
    if v.is_empty() {
        return T::zero();
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("finite residuals"));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) * T::lit(0.5)
    }
}

/// Mutual-nearest matching between projected beads and detections.
pub fn mutual_nearest<T: Real>(projected: &[Option<Point2<T>>], detected: &[Point2<T>], gate_px: T) -> Vec<Match> {
    let nearest_det: Vec<Option<(usize, T)>> = projected
        .iter()
        .map(|p| {
            let p = (*p)?;
            detected
                .iter()
                .enumerate()
                .map(|(j, d)| (j, (d - p).norm()))
                .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite").then(a.0.cmp(&b.0)))
        })
        .collect();
    let nearest_proj: Vec<Option<usize>> = detected
        .iter()
        .map(|d| {
            projected
                .iter()
                .enumerate()
                .filter_map(|(i, p)| p.map(|p| (i, (d - p).norm())))
                .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite").then(a.0.cmp(&b.0)))
                .map(|(i, _)| i)
        })
        .collect();
    let mut out = Vec::new();
    for (i, nd) in nearest_det.iter().enumerate() {
        if let Some((j, dist)) = *nd {
            if dist <= gate_px && nearest_proj[j] == Some(i) {
                out.push(Match {
                    fiducial: i,
                    detection: j,
                });
            }
        }
    }
    out
}

/// Matches every bead projected through the preliminary camera to its
/// mutual-nearest detection within `gate_px`, then re-solves on all matches.
pub fn rectify_all<T: Real>(
    preliminary: &CameraMatrix<T>,
    all3d: &[Point3<T>],
    all2d: &[Point2<T>],
    pixel_pitch_mm: T,
    gate_px: T,
) -> Result<CalibrationResult<T>> {
    let projected: Vec<Option<Point2<T>>> = all3d.iter().map(|x| preliminary.project(x).ok()).collect();
    let matches = mutual_nearest(&projected, all2d, gate_px);
    if matches.len() < MIN_DLT_POINTS {
        return Err(Error::InsufficientPoints {
            got: matches.len(),
            need: MIN_DLT_POINTS,
        });
    }
    let p2: Vec<_> = matches.iter().map(|m| all2d[m.detection]).collect();
    let p3: Vec<_> = matches.iter().map(|m| all3d[m.fiducial]).collect();
    let camera = solve_dlt(&p2, &p3)?;
    let decomposition = camera.decompose()?;
    let residuals_px = reprojection_errors(&camera, &p2, &p3);
    let mean_px = mean(&residuals_px);
    let median_px = median(&residuals_px);
    Ok(CalibrationResult {
        camera,
        decomposition,
        matches,
        residuals_px,
        mean_px,
        median_px,
        mean_mm: mean_px * pixel_pitch_mm,
        median_mm: median_px * pixel_pitch_mm,
        pixel_pitch_mm,
    })
}

/// Correspondence search on the reference detections followed by
/// rectification over every detection.
///
/// When more reference-class detections than reference beads are present,
/// the strongest ones (detection order) are used for the search.
pub fn calibrate_detections(
    detections: &[Detection],
    fiducials: &FiducialSet,
    pixel_pitch_mm: f64,
    gate_px: f64,
) -> Result<CalibrationResult<f64>> {
    fiducials.validate()?;
    let ref_idx = fiducials.indices_of(BeadClass::Reference);
    if ref_idx.len() < MIN_DLT_POINTS {
        return Err(Error::InsufficientPoints {
            got: ref_idx.len(),
            need: MIN_DLT_POINTS,
        });
    }
    let ref2d: Vec<Point2<f64>> = detections
        .iter()
        .filter(|d| d.class == BeadClass::Reference)
        .take(ref_idx.len())
        .map(|d| Point2::new(d.center[0], d.center[1]))
        .collect();
    if ref2d.len() < MIN_DLT_POINTS {
        return Err(Error::InsufficientPoints {
            got: ref2d.len(),
            need: MIN_DLT_POINTS,
        });
    }
    let ref3d: Vec<Point3<f64>> = ref_idx.iter().map(|&i| fiducials.point(i)).collect();
    let corr = resolve_correspondence(&ref3d, &ref2d)?;
    let all3d = fiducials.points();
    let all2d: Vec<Point2<f64>> = detections
        .iter()
        .map(|d| Point2::new(d.center[0], d.center[1]))
        .collect();
    rectify_all(&corr.camera, &all3d, &all2d, pixel_pitch_mm, gate_px)
}

/// Detect, resolve and rectify on one image.
pub fn calibrate_image<P: Copy + Into<f64>>(
    img: &Image<P>,
    fiducials: &FiducialSet,
    opts: &DetectOptions,
    pixel_pitch_mm: f64,
) -> Result<CalibrationResult<f64>> {
    let detections = detect_fiducials(img, opts);
    calibrate_detections(&detections, fiducials, pixel_pitch_mm, DEFAULT_GATE_PX)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualEntry {
    pub fiducial: usize,
    pub detection: usize,
    pub residual_px: f64,
    pub residual_mm: f64,
}

/// JSON calibration report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    #[serde(rename = "P")]
    pub p: [[f64; 4]; 3],
    #[serde(rename = "K")]
    pub k: [[f64; 3]; 3],
    #[serde(rename = "R")]
    pub r: [[f64; 3]; 3],
    #[serde(rename = "X_o")]
    pub x_o: [f64; 3],
    pub residuals: Vec<ResidualEntry>,
    pub mean_px: f64,
    pub median_px: f64,
    pub mean_mm: f64,
    pub median_mm: f64,
    pub pixel_pitch_mm: f64,
}

impl CalibrationReport {
    pub fn from_result<T: Real>(res: &CalibrationResult<T>) -> Self {
        let p = res.camera.matrix();
        let d = &res.decomposition;
        let pitch = res.pixel_pitch_mm.as_f64();
        CalibrationReport {
            p: std::array::from_fn(|i| std::array::from_fn(|j| p[(i, j)].as_f64())),
            k: std::array::from_fn(|i| std::array::from_fn(|j| d.k[(i, j)].as_f64())),
            r: std::array::from_fn(|i| std::array::from_fn(|j| d.r[(i, j)].as_f64())),
            x_o: [d.x_o.x.as_f64(), d.x_o.y.as_f64(), d.x_o.z.as_f64()],
            residuals: res
                .matches
                .iter()
                .zip(&res.residuals_px)
                .map(|(m, r)| ResidualEntry {
                    fiducial: m.fiducial,
                    detection: m.detection,
                    residual_px: r.as_f64(),
                    residual_mm: r.as_f64() * pitch,
                })
                .collect(),
            mean_px: res.mean_px.as_f64(),
            median_px: res.median_px.as_f64(),
            mean_mm: res.mean_mm.as_f64(),
            median_mm: res.median_mm.as_f64(),
            pixel_pitch_mm: pitch,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("calibration report", e))
    }
}

/// Residual statistics pooled over many calibrations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaSummary {
    pub images: usize,
    pub points: usize,
    pub mean_px: f64,
    pub sd_px: f64,
    pub median_px: f64,
    pub mean_mm: f64,
    pub sd_mm: f64,
    pub median_mm: f64,
}

/// Pools per-point residuals of all reports; mm values use each report's pitch.
pub fn paired_qa(reports: &[CalibrationReport]) -> Result<QaSummary> {
    let px: Vec<f64> = reports
        .iter()
        .flat_map(|r| r.residuals.iter().map(|e| e.residual_px))
        .collect();
    let mm: Vec<f64> = reports
        .iter()
        .flat_map(|r| r.residuals.iter().map(move |e| e.residual_px * r.pixel_pitch_mm))
        .collect();
    if px.is_empty() {
        return Err(Error::EmptySummary("no calibration residuals".into()));
    }
    let sd = |v: &[f64]| {
        let m = mean(v);
        if v.len() < 2 {
            0.0
        } else {
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        }
    };
    Ok(QaSummary {
        images: reports.len(),
        points: px.len(),
        mean_px: mean(&px),
        sd_px: sd(&px),
        median_px: median(&px),
        mean_mm: mean(&mm),
        sd_mm: sd(&mm),
        median_mm: median(&mm),
    })
}
