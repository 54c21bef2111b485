//! Volume overlap and surface-distance metrics on occupancy grids.

use std::fmt::Write as _;

use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::carve::OccupancyGrid;
use crate::error::{Error, Result};
use crate::volume::{Volume, VolumeData};

pub const DEFAULT_TAU_MM: f64 = 1.0;
pub const DEFAULT_CLIP_MM: f64 = 9.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Overlap {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Overlap {
    pub fn f1(&self) -> f64 {
        let d = 2 * self.tp + self.fp + self.fn_;
        if d == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / d as f64
        }
    }

    pub fn iou(&self) -> f64 {
        let d = self.tp + self.fp + self.fn_;
        if d == 0 {
            1.0
        } else {
            self.tp as f64 / d as f64
        }
    }
}

fn check_lattice(pred: &OccupancyGrid, gt: &OccupancyGrid) -> Result<()> {
    if pred.same_lattice(gt) {
        Ok(())
    } else {
        Err(Error::IncompatibleGrids(format!(
            "dims {:?}/{:?}, voxel {}/{}, origin {:?}/{:?}",
            pred.dims, gt.dims, pred.voxel_size_mm, gt.voxel_size_mm, pred.origin_mm, gt.origin_mm
        )))
    }
}

pub fn overlap_counts(pred: &OccupancyGrid, gt: &OccupancyGrid) -> Result<Overlap> {
    check_lattice(pred, gt)?;
    let mut o = Overlap::default();
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        match (p != 0, g != 0) {
            (true, true) => o.tp += 1,
            (true, false) => o.fp += 1,
            (false, true) => o.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(o)
}

/// `(f1, iou)`; two empty grids agree perfectly.
pub fn voxel_overlap(pred: &OccupancyGrid, gt: &OccupancyGrid) -> Result<(f64, f64)> {
    let o = overlap_counts(pred, gt)?;
    Ok((o.f1(), o.iou()))
}

/// Voxel indices of occupied voxels with at least one empty 6-neighbour;
/// outside the grid counts as empty. x-fastest order.
pub fn surface_voxels(grid: &OccupancyGrid) -> Vec<[usize; 3]> {
    let [nx, ny, nz] = grid.dims;
    let mut out = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if !grid.get(i, j, k) {
                    continue;
                }
                let boundary = i == 0
                    || j == 0
                    || k == 0
                    || i + 1 == nx
                    || j + 1 == ny
                    || k + 1 == nz
                    || !grid.get(i - 1, j, k)
                    || !grid.get(i + 1, j, k)
                    || !grid.get(i, j - 1, k)
                    || !grid.get(i, j + 1, k)
                    || !grid.get(i, j, k - 1)
                    || !grid.get(i, j, k + 1);
                if boundary {
                    out.push([i, j, k]);
                }
            }
        }
    }
    out
}

/// Centres of the surface voxels in mm.
pub fn extract_surface(grid: &OccupancyGrid) -> Vec<Point3<f64>> {
    surface_voxels(grid)
        .into_iter()
        .map(|[i, j, k]| grid.voxel_center(i, j, k))
        .collect()
}

/// Uniform-cell spatial hash for exact nearest-neighbour queries.
pub struct PointIndex<'a> {
    points: &'a [Point3<f64>],
    cell: f64,
    min: [f64; 3],
    dims: [i64; 3],
    /// Cell `c` holds `order[starts[c]..starts[c + 1]]`.
    starts: Vec<u32>,
    order: Vec<u32>,
}

/// Cells per axis at most; keeps the table small for sparse surfaces.
const MAX_CELLS_PER_AXIS: f64 = 64.0;

impl<'a> PointIndex<'a> {
    pub fn new(points: &'a [Point3<f64>]) -> Self {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        if points.is_empty() {
            min = [0.0; 3];
            max = [0.0; 3];
        }
        let extent = (0..3).map(|a| max[a] - min[a]).fold(0.0, f64::max);
        // Surfaces put roughly n^(2/3) points per unit area; aim for a few per cell.
        let n = points.len().max(1) as f64;
        let mut cell = (extent / n.powf(1.0 / 3.0) * 1.5).max(extent / MAX_CELLS_PER_AXIS);
        if !(cell > 0.0 && cell.is_finite()) {
            cell = 1.0;
        }
        let dims = [0, 1, 2].map(|a| ((max[a] - min[a]) / cell).floor() as i64 + 1);
        let ncell = (dims[0] * dims[1] * dims[2]) as usize;
        let flat = |p: &Point3<f64>| {
            let c = [0, 1, 2].map(|a| (((p[a] - min[a]) / cell).floor() as i64).clamp(0, dims[a] - 1));
            (c[0] + dims[0] * (c[1] + dims[1] * c[2])) as usize
        };
        let mut starts = vec![0u32; ncell + 1];
        for p in points {
            starts[flat(p) + 1] += 1;
        }
        for c in 0..ncell {
            starts[c + 1] += starts[c];
        }
        let mut fill = starts.clone();
        let mut order = vec![0u32; points.len()];
        for (idx, p) in points.iter().enumerate() {
            let c = flat(p);
            order[fill[c] as usize] = idx as u32;
            fill[c] += 1;
        }
        PointIndex {
            points,
            cell,
            min,
            dims,
            starts,
            order,
        }
    }

    /// Exact squared distance to the closest indexed point.
    pub fn nearest_sq(&self, q: &Point3<f64>) -> f64 {
        if self.points.is_empty() {
            return f64::INFINITY;
        }
        let g = [0, 1, 2].map(|a| (q[a] - self.min[a]) / self.cell);
        let c = g.map(|v| v.floor() as i64);
        // Rings needed before every cell of the table has been visited.
        let mut last = 0i64;
        for a in 0..3 {
            last = last.max(c[a]).max(self.dims[a] - 1 - c[a]);
        }
        let mut best = f64::INFINITY;
        for r in 0..=last {
            self.scan_ring(c, r, q, &mut best);
            // Unvisited cells lie beyond the faces of the scanned block.
            let mut reach = f64::INFINITY;
            for a in 0..3 {
                let lo = g[a] - (c[a] - r) as f64;
                let hi = (c[a] + r + 1) as f64 - g[a];
                reach = reach.min(lo.min(hi));
            }
            let reach = reach.max(0.0) * self.cell;
            if best <= reach * reach {
                break;
            }
        }
        best
    }

    fn scan_cells(&self, row: [i64; 3], x0: i64, x1: i64, q: &Point3<f64>, best: &mut f64) {
        if row[1] < 0 || row[1] >= self.dims[1] || row[2] < 0 || row[2] >= self.dims[2] {
            return;
        }
        let (x0, x1) = (x0.max(0), x1.min(self.dims[0] - 1));
        if x0 > x1 {
            return;
        }
        let base = self.dims[0] * (row[1] + self.dims[1] * row[2]);
        let s = self.starts[(base + x0) as usize] as usize;
        let e = self.starts[(base + x1 + 1) as usize] as usize;
        for &id in &self.order[s..e] {
            let d = (self.points[id as usize] - q).norm_squared();
            if d < *best {
                *best = d;
            }
        }
    }

    fn scan_ring(&self, c: [i64; 3], r: i64, q: &Point3<f64>, best: &mut f64) {
        if r == 0 {
            self.scan_cells(c, c[0], c[0], q, best);
            return;
        }
        for dz in -r..=r {
            for dy in -r..=r {
                let row = [0, c[1] + dy, c[2] + dz];
                if dz.abs() == r || dy.abs() == r {
                    self.scan_cells(row, c[0] - r, c[0] + r, q, best);
                } else {
                    self.scan_cells(row, c[0] - r, c[0] - r, q, best);
                    self.scan_cells(row, c[0] + r, c[0] + r, q, best);
                }
            }
        }
    }
}

/// Distance from every point of `from` to its nearest neighbour in `to`.
pub fn directed_distances(from: &[Point3<f64>], to: &[Point3<f64>]) -> Vec<f64> {
    let index = PointIndex::new(to);
    from.par_iter().map(|p| index.nearest_sq(p).sqrt()).collect()
}

/// Percentile of unsorted values with linear interpolation between ranks.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceDistances {
    pub asd_mm: f64,
    pub hd95_mm: f64,
    pub a_to_b: Vec<f64>,
    pub b_to_a: Vec<f64>,
}

fn require_points(a: &[Point3<f64>], b: &[Point3<f64>]) -> Result<()> {
    if a.is_empty() {
        return Err(Error::EmptySurface("first point set is empty".into()));
    }
    if b.is_empty() {
        return Err(Error::EmptySurface("second point set is empty".into()));
    }
    Ok(())
}

pub fn surface_distances(a: &[Point3<f64>], b: &[Point3<f64>]) -> Result<SurfaceDistances> {
    require_points(a, b)?;
    let a_to_b = directed_distances(a, b);
    let b_to_a = directed_distances(b, a);
    Ok(from_directed(a_to_b, b_to_a))
}

fn from_directed(a_to_b: Vec<f64>, b_to_a: Vec<f64>) -> SurfaceDistances {
    SurfaceDistances {
        asd_mm: 0.5 * (mean(&a_to_b) + mean(&b_to_a)),
        hd95_mm: percentile(&a_to_b, 0.95).max(percentile(&b_to_a, 0.95)),
        a_to_b,
        b_to_a,
    }
}

fn f_score(pred_to_gt: &[f64], gt_to_pred: &[f64], tau: f64) -> f64 {
    let frac = |d: &[f64]| d.iter().filter(|&&x| x <= tau).count() as f64 / d.len() as f64;
    let precision = frac(pred_to_gt);
    let recall = frac(gt_to_pred);
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Harmonic mean of the fraction of predicted points within `tau_mm` of the
/// ground truth and the fraction of ground-truth points within `tau_mm` of
/// the prediction.
pub fn surface_score(pred: &[Point3<f64>], gt: &[Point3<f64>], tau_mm: f64) -> Result<f64> {
    require_points(pred, gt)?;
    if !(tau_mm > 0.0 && tau_mm.is_finite()) {
        return Err(Error::invalid("tau_mm", "must be > 0"));
    }
    Ok(f_score(
        &directed_distances(pred, gt),
        &directed_distances(gt, pred),
        tau_mm,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MetricsCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub pred_surface: usize,
    pub gt_surface: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub f1: f64,
    pub iou: f64,
    pub surface_score: f64,
    pub tau_mm: f64,
    pub asd_mm: f64,
    pub hd95_mm: f64,
    pub counts: MetricsCounts,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Full metric suite of a prediction against ground truth on one lattice.
pub fn evaluate(pred: &OccupancyGrid, gt: &OccupancyGrid, tau_mm: f64) -> Result<MetricsReport> {
    evaluate_with_surface(pred, gt, &extract_surface(gt), tau_mm)
}

/// As [`evaluate`], reusing an already extracted ground-truth surface.
pub fn evaluate_with_surface(
    pred: &OccupancyGrid,
    gt: &OccupancyGrid,
    gt_surface: &[Point3<f64>],
    tau_mm: f64,
) -> Result<MetricsReport> {
    if !(tau_mm > 0.0 && tau_mm.is_finite()) {
        return Err(Error::invalid("tau_mm", "must be > 0"));
    }
    let o = overlap_counts(pred, gt)?;
    let ps = extract_surface(pred);
    let d = surface_distances(&ps, gt_surface)?;
    Ok(MetricsReport {
        f1: o.f1(),
        iou: o.iou(),
        surface_score: f_score(&d.a_to_b, &d.b_to_a, tau_mm),
        tau_mm,
        asd_mm: d.asd_mm,
        hd95_mm: d.hd95_mm,
        counts: MetricsCounts {
            tp: o.tp,
            fp: o.fp,
            fn_: o.fn_,
            pred_surface: ps.len(),
            gt_surface: gt_surface.len(),
        },
    })
}

/// Distance of each predicted surface voxel to the ground-truth surface.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMap {
    pub voxels: Vec<[usize; 3]>,
    pub points: Vec<Point3<f64>>,
    pub dist_mm: Vec<f64>,
    pub clip_mm: f64,
}

impl DistanceMap {
    /// Distance as shown on the colour channel.
    pub fn display_mm(&self, i: usize) -> f64 {
        self.dist_mm[i].min(self.clip_mm)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x_mm,y_mm,z_mm,dist_mm\n");
        for (p, d) in self.points.iter().zip(&self.dist_mm) {
            let _ = writeln!(s, "{},{},{},{}", p.x, p.y, p.z, d);
        }
        s
    }

    /// uint8 volume on the prediction lattice: 0 off the surface, otherwise
    /// `1 + round(254 · min(d, clip) / clip)`.
    pub fn display_volume(&self, pred: &OccupancyGrid) -> Result<Volume> {
        let mut data = vec![0u8; pred.data.len()];
        for (idx, &[i, j, k]) in self.voxels.iter().enumerate() {
            let v = 1.0 + (254.0 * self.display_mm(idx) / self.clip_mm).round();
            data[pred.index(i, j, k)] = v as u8;
        }
        let s = pred.voxel_size_mm;
        Volume::new(
            pred.dims,
            [s; 3],
            pred.origin_mm.map(|o| o + 0.5 * s),
            VolumeData::Uint8(data),
        )
    }
}

pub fn distance_map(pred: &OccupancyGrid, gt: &OccupancyGrid, clip_mm: f64) -> Result<DistanceMap> {
    check_lattice(pred, gt)?;
    if !(clip_mm > 0.0 && clip_mm.is_finite()) {
        return Err(Error::invalid("clip_mm", "must be > 0"));
    }
    let voxels = surface_voxels(pred);
    let points: Vec<_> = voxels.iter().map(|&[i, j, k]| pred.voxel_center(i, j, k)).collect();
    let gs = extract_surface(gt);
    require_points(&points, &gs)?;
    let dist_mm = directed_distances(&points, &gs);
    Ok(DistanceMap {
        voxels,
        points,
        dist_mm,
        clip_mm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::carve::{GridSpec, OriginMode};

    fn grid(dim: usize) -> OccupancyGrid {
        OccupancyGrid::empty(
            GridSpec {
                dim,
                voxel_size_mm: 1.0,
            },
            [0.0; 3],
            OriginMode::GroundTruth,
        )
    }

    fn fill_cube(g: &mut OccupancyGrid, lo: [usize; 3], side: usize) {
        for k in lo[2]..lo[2] + side {
            for j in lo[1]..lo[1] + side {
                for i in lo[0]..lo[0] + side {
                    let idx = g.index(i, j, k);
                    g.data[idx] = 1;
                }
            }
        }
    }

    #[test]
    fn shifted_cube_overlap() {
        let mut a = grid(16);
        let mut b = grid(16);
        fill_cube(&mut a, [2, 2, 2], 10);
        fill_cube(&mut b, [3, 2, 2], 10);
        let (f1, iou) = voxel_overlap(&a, &b).unwrap();
        assert_eq!(f1, 0.9);
        assert_eq!(iou, 900.0 / 1100.0);
    }

    #[test]
    fn empty_grids_agree() {
        assert_eq!(voxel_overlap(&grid(4), &grid(4)).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn lattice_mismatch_is_rejected() {
        assert!(matches!(
            voxel_overlap(&grid(4), &grid(5)),
            Err(Error::IncompatibleGrids(_))
        ));
    }

    #[test]
    fn cube_surface_count() {
        let mut a = grid(14);
        fill_cube(&mut a, [2, 2, 2], 10);
        assert_eq!(extract_surface(&a).len(), 488);
        let mut one = grid(3);
        let c = one.index(1, 1, 1);
        one.data[c] = 1;
        assert_eq!(extract_surface(&one), vec![Point3::origin()]);
    }

    #[test]
    fn border_voxels_are_surface() {
        let mut full = grid(3);
        full.data.fill(1);
        assert_eq!(extract_surface(&full).len(), 26);
    }

    #[test]
    fn parallel_planes() {
        let plane = |z: f64| -> Vec<Point3<f64>> {
            (0..10)
                .flat_map(|i| (0..10).map(move |j| Point3::new(i as f64, j as f64, z)))
                .collect()
        };
        let d = surface_distances(&plane(0.0), &plane(2.5)).unwrap();
        assert_eq!(d.asd_mm, 2.5);
        assert_eq!(d.hd95_mm, 2.5);
    }

    #[test]
    fn half_precision_full_recall() {
        let gt = vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0)];
        let pred = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(50.0, 0.0, 0.0),
            Point3::new(60.0, 0.0, 0.0),
        ];
        let s = surface_score(&pred, &gt, 1.0).unwrap();
        assert!((s - 2.0 / 3.0).abs() < 1e-15);
        let far = vec![Point3::new(100.0, 0.0, 0.0)];
        assert_eq!(surface_score(&far, &gt, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn empty_surface_is_an_error() {
        let a = grid(4);
        let mut b = grid(4);
        b.data[0] = 1;
        assert!(matches!(evaluate(&a, &b, 1.0), Err(Error::EmptySurface(_))));
    }

    #[test]
    fn percentile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(percentile(&v, 0.5), 3.0);
        assert!((percentile(&v, 0.95) - 4.8).abs() < 1e-12);
    }

    #[test]
    fn identical_grids_score_perfectly() {
        let mut a = grid(12);
        fill_cube(&mut a, [1, 2, 3], 6);
        let r = evaluate(&a, &a, DEFAULT_TAU_MM).unwrap();
        assert_eq!(
            (r.f1, r.iou, r.surface_score, r.asd_mm, r.hd95_mm),
            (1.0, 1.0, 1.0, 0.0, 0.0)
        );
    }

    #[test]
    fn protrusion_carries_one_voxel_distance() {
        let mut gt = grid(12);
        fill_cube(&mut gt, [2, 2, 2], 6);
        let mut pred = gt.clone();
        let idx = pred.index(8, 4, 4);
        pred.data[idx] = 1;
        let m = distance_map(&pred, &gt, DEFAULT_CLIP_MM).unwrap();
        for (v, d) in m.voxels.iter().zip(&m.dist_mm) {
            if *v == [8, 4, 4] {
                assert_eq!(*d, 1.0);
            } else {
                assert_eq!(*d, 0.0);
            }
        }
    }

    #[test]
    fn display_channel_clips() {
        let m = DistanceMap {
            voxels: vec![[0, 0, 0]],
            points: vec![Point3::origin()],
            dist_mm: vec![15.0],
            clip_mm: 9.0,
        };
        assert_eq!(m.dist_mm[0], 15.0);
        assert_eq!(m.display_mm(0), 9.0);
        assert!(m.to_csv().starts_with("x_mm,y_mm,z_mm,dist_mm\n0,0,0,15\n"));
    }
}
