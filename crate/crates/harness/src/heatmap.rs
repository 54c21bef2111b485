//! View-angle sensitivity: one view of a fixed plan swept over a grid of
//! orbit/tilt offsets, scored at every node.

use frk_core::geometry::{Pose, ViewClass};
use frk_core::image::{encode_pgm16, Gray16};
use frk_core::pipeline::{acquire_view, reconstruct_windows, ReconstructOptions, Scene, Scorer};
use frk_core::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const HEATMAP_NODES: usize = 21;
pub const HEATMAP_MAX_DEG: f64 = 20.0;
pub const DEFAULT_UPSAMPLE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseView {
    pub view_class: ViewClass,
    pub orbit_deg: f64,
    pub tilt_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeatmapSpec {
    /// Label to reconstruct; the middle label when absent.
    pub label: Option<u8>,
    pub base: Vec<BaseView>,
    /// Index into `base` of the swept view.
    pub varied: usize,
    pub nodes: usize,
    pub max_deg: f64,
    pub recon: ReconstructOptions,
    /// Display image pixels per node interval.
    pub upsample: usize,
}

impl Default for HeatmapSpec {
    fn default() -> Self {
        HeatmapSpec {
            label: None,
            base: vec![
                BaseView {
                    view_class: ViewClass::Ap,
                    orbit_deg: 0.0,
                    tilt_deg: 0.0,
                },
                BaseView {
                    view_class: ViewClass::Lateral,
                    orbit_deg: 90.0,
                    tilt_deg: 0.0,
                },
            ],
            varied: 0,
            nodes: HEATMAP_NODES,
            max_deg: HEATMAP_MAX_DEG,
            recon: ReconstructOptions::default(),
            upsample: DEFAULT_UPSAMPLE,
        }
    }
}

impl HeatmapSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nodes != HEATMAP_NODES || self.max_deg != HEATMAP_MAX_DEG {
            return Err(Error::invalid(
                "nodes",
                format!("grid must be {HEATMAP_NODES}x{HEATMAP_NODES} spanning +-{HEATMAP_MAX_DEG} deg"),
            ));
        }
        if self.base.len() < 2 {
            return Err(Error::InsufficientViews {
                got: self.base.len(),
                need: 2,
            });
        }
        if self.varied >= self.base.len() {
            return Err(Error::invalid("varied", "index outside the base plan"));
        }
        if self.upsample == 0 {
            return Err(Error::invalid("upsample", "must be at least 1"));
        }
        Ok(())
    }

    pub fn step_deg(&self) -> f64 {
        2.0 * self.max_deg / (self.nodes - 1) as f64
    }

    /// Offset in degrees of node index `k` along either axis.
    pub fn offset_deg(&self, k: usize) -> f64 {
        -self.max_deg + k as f64 * self.step_deg()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapNode {
    /// Orbit index.
    pub i: usize,
    /// Tilt index.
    pub j: usize,
    pub d_orbit_deg: f64,
    pub d_tilt_deg: f64,
    pub surface: f64,
    pub f1: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapResult {
    pub label: u8,
    pub nodes_per_axis: usize,
    pub max_deg: f64,
    /// Row-major over tilt, orbit fastest.
    pub nodes: Vec<HeatmapNode>,
}

impl HeatmapResult {
    pub fn at(&self, i: usize, j: usize) -> &HeatmapNode {
        &self.nodes[j * self.nodes_per_axis + i]
    }

    pub fn peak(&self) -> &HeatmapNode {
        self.nodes.iter().fold(
            &self.nodes[0],
            |best, n| if n.surface > best.surface { n } else { best },
        )
    }

    /// Chebyshev node distance of the peak from the zero-offset node.
    pub fn peak_distance(&self) -> usize {
        let c = self.nodes_per_axis / 2;
        let p = self.peak();
        p.i.abs_diff(c).max(p.j.abs_diff(c))
    }

    pub fn range(&self) -> f64 {
        let (lo, hi) = self
            .nodes
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), n| {
                (lo.min(n.surface), hi.max(n.surface))
            });
        hi - lo
    }

    /// Fraction of steps along the eight rays out of the centre node that do
    /// not increase the score; the first step of each ray is exempt.
    pub fn ray_monotone_fraction(&self) -> f64 {
        let c = (self.nodes_per_axis / 2) as i64;
        let (mut ok, mut total) = (0usize, 0usize);
        for (di, dj) in [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)] {
            let ray: Vec<f64> = (0..=c)
                .map(|k| self.at((c + di * k) as usize, (c + dj * k) as usize).surface)
                .collect();
            for w in ray[1..].windows(2) {
                total += 1;
                ok += usize::from(w[1] <= w[0]);
            }
        }
        ok as f64 / total as f64
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for n in &self.nodes {
            w.serialize(n).map_err(|e| Error::invalid("csv", e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid("csv", e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Bilinear upsampling of node scores, `round(score * 65535)` per pixel.
    pub fn display_image(&self, upsample: usize) -> Gray16 {
        let n = self.nodes_per_axis;
        let side = (n - 1) * upsample + 1;
        Gray16::from_fn(side, side, |x, y| {
            let (fx, fy) = (x as f64 / upsample as f64, y as f64 / upsample as f64);
            let (i0, j0) = ((fx as usize).min(n - 2), (fy as usize).min(n - 2));
            let (tx, ty) = (fx - i0 as f64, fy - j0 as f64);
            let s = |i, j| self.at(i, j).surface;
            let top = s(i0, j0) * (1.0 - tx) + s(i0 + 1, j0) * tx;
            let bottom = s(i0, j0 + 1) * (1.0 - tx) + s(i0 + 1, j0 + 1) * tx;
            let v = top * (1.0 - ty) + bottom * ty;
            (v.clamp(0.0, 1.0) * 65535.0).round() as u16
        })
    }

    pub fn display_pgm(&self, upsample: usize) -> Vec<u8> {
        encode_pgm16(&self.display_image(upsample))
    }
}

/// Middle of the sorted label ids.
pub fn default_label(scene: &Scene) -> Result<u8> {
    let ids = scene.label_ids();
    ids.get(ids.len() / 2)
        .copied()
        .ok_or_else(|| Error::invalid("labels", "volume has no labels"))
}

/// Reconstructs and scores every node. Nodes whose swept view does not see
/// the whole label score zero.
pub fn sensitivity_heatmap(scene: &Scene, spec: &HeatmapSpec) -> Result<HeatmapResult> {
    spec.validate()?;
    let label = match spec.label {
        Some(l) => l,
        None => default_label(scene)?,
    };
    let c = scene.label_center(label)?;
    let center = [c.x, c.y, c.z];
    let pose = |b: &BaseView| Pose::new(b.orbit_deg, b.tilt_deg, b.view_class, center);
    let scorer = Scorer::new(scene, label, spec.recon.grid)?;
    let fixed = spec
        .base
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != spec.varied)
        .map(|(_, b)| {
            acquire_view(scene, label, &pose(b), spec.recon.source)?
                .ok_or_else(|| Error::invalid("base", format!("label {label} not fully visible from {b:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = spec.nodes;
    let nodes = (0..n * n)
        .into_par_iter()
        .map(|k| -> Result<HeatmapNode> {
            let (i, j) = (k % n, k / n);
            let (d_orbit_deg, d_tilt_deg) = (spec.offset_deg(i), spec.offset_deg(j));
            let swept = pose(&spec.base[spec.varied]).with_offset(d_orbit_deg, d_tilt_deg);
            let mut node = HeatmapNode {
                i,
                j,
                d_orbit_deg,
                d_tilt_deg,
                surface: 0.0,
                f1: 0.0,
                iou: 0.0,
            };
            let Some(view) = acquire_view(scene, label, &swept, spec.recon.source)? else {
                log::warn!("heatmap node ({i},{j}) does not see label {label}");
                return Ok(node);
            };
            let mut windows: Vec<_> = fixed.iter().map(|v| &v.window).collect();
            windows.insert(spec.varied, &view.window);
            let r = reconstruct_windows(&windows, &spec.recon, Some(scorer.center))?;
            let m = scorer.score(&r.grid, spec.recon.tau_mm)?;
            node.surface = m.surface_score;
            node.f1 = m.f1;
            node.iou = m.iou;
            Ok(node)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HeatmapResult {
        label,
        nodes_per_axis: n,
        max_deg: spec.max_deg,
        nodes,
    })
}
