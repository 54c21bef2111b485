//! Paired-quality summaries over calibration reports.

use std::path::Path;

use frk_core::calibration::{paired_qa, CalibrationReport, QaSummary};
use frk_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn load_reports(paths: &[impl AsRef<Path>]) -> Result<Vec<CalibrationReport>> {
    paths
        .iter()
        .map(|p| {
            let p = p.as_ref();
            let text = std::fs::read_to_string(p).map_err(|e| frk_core::Error::io(p.display().to_string(), e))?;
            CalibrationReport::from_json(&text)
        })
        .collect()
}

pub fn qa_files(paths: &[impl AsRef<Path>]) -> Result<QaSummary> {
    paired_qa(&load_reports(paths)?)
}

/// Reports whose per-point residual is the length of a 2D offset with each
/// component uniform in `[-noise_px, noise_px]`.
pub fn synthetic_reports(
    images: usize,
    points: usize,
    noise_px: f64,
    pitch_mm: f64,
    seed: u64,
) -> Vec<CalibrationReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..images)
        .map(|_| {
            let residuals: Vec<_> = (0..points)
                .map(|k| {
                    let (dx, dy) = if noise_px > 0.0 {
                        (
                            rng.random_range(-noise_px..=noise_px),
                            rng.random_range(-noise_px..=noise_px),
                        )
                    } else {
                        (0.0, 0.0)
                    };
                    let r: f64 = (dx * dx + dy * dy).sqrt();
                    frk_core::calibration::ResidualEntry {
                        fiducial: k,
                        detection: k,
                        residual_px: r,
                        residual_mm: r * pitch_mm,
                    }
                })
                .collect();
            let px: Vec<f64> = residuals.iter().map(|e| e.residual_px).collect();
            let mean = px.iter().sum::<f64>() / px.len().max(1) as f64;
            let mut sorted = px.clone();
            sorted.sort_by(f64::total_cmp);
            let median = if sorted.is_empty() {
                0.0
            } else if sorted.len() % 2 == 1 {
                sorted[sorted.len() / 2]
            } else {
                0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
            };
            let eye3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
            CalibrationReport {
                p: [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]],
                k: eye3,
                r: eye3,
                x_o: [0.0; 3],
                residuals,
                mean_px: mean,
                median_px: median,
                mean_mm: mean * pitch_mm,
                median_mm: median * pitch_mm,
                pixel_pitch_mm: pitch_mm,
            }
        })
        .collect()
}
