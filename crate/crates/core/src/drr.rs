//! Ray-integral DRR rendering, projected label masks and bead projections.
//!
//! Rays start at the camera focal point and pass through pixel centres. The
//! attenuation integral is a midpoint sum over equidistant samples between
//! the ray's entry into and exit from the volume's cell extent; samples are
//! trilinear with clamp-to-edge. Runs of samples inside 8³ blocks whose
//! dilated maximum is zero are skipped; they would contribute exact zeros,
//! so skipping does not change the result.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Point2, Point3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::CameraMatrix;
use crate::image::{Gray16, Image, Mask};
use crate::scalar::Real;
use crate::volume::Volume;

const BLOCK: usize = 8;

/// An attenuation volume converted to the working scalar type, with the
/// block occupancy used for empty-space skipping.
#[derive(Debug, Clone)]
pub struct PreparedVolume<T: Real> {
    dims: [usize; 3],
    spacing: [T; 3],
    origin: [T; 3],
    values: Vec<T>,
    block_dims: [usize; 3],
    block_nonzero: Vec<bool>,
    max_value: T,
}

impl<T: Real> PreparedVolume<T> {
    pub fn from_values(dims: [usize; 3], spacing_mm: [f64; 3], origin_mm: [f64; 3], values: Vec<T>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("dims", "all dimensions must be ≥ 1"));
        }
        if spacing_mm.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("spacing_mm", "must be positive and finite"));
        }
        if values.len() != dims.iter().product::<usize>() {
            return Err(Error::invalid("data", "length does not match dims"));
        }
        if values.iter().any(|&v| v < T::zero() || !v.is_finite()) {
            return Err(Error::invalid("data", "attenuation must be finite and ≥ 0"));
        }
        let block_dims = dims.map(|d| d.div_ceil(BLOCK));
        let mut raw_blocks = vec![false; block_dims.iter().product()];
        let mut max_value = T::zero();
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let v = values[i + dims[0] * (j + dims[1] * k)];
                    if v > T::zero() {
                        let b = i / BLOCK + block_dims[0] * (j / BLOCK + block_dims[1] * (k / BLOCK));
                        raw_blocks[b] = true;
                        if v > max_value {
                            max_value = v;
                        }
                    }
                }
            }
        }
        let block_nonzero = dilate_blocks(&raw_blocks, block_dims);
        Ok(PreparedVolume {
            dims,
            spacing: spacing_mm.map(T::lit),
            origin: origin_mm.map(T::lit),
            values,
            block_dims,
            block_nonzero,
            max_value,
        })
    }

    /// Uses the stored values of `vol` as attenuation (typically the output
    /// of [`crate::volume::threshold_bone`]).
    pub fn from_volume(vol: &Volume) -> Result<Self> {
        let values = (0..vol.len()).map(|i| T::lit(vol.value_f64(i))).collect();
        Self::from_values(vol.dims(), vol.spacing_mm(), vol.origin_mm(), values)
    }

    /// Thresholds an HU volume and prepares it in one step.
    pub fn from_hu(vol: &Volume, hu_threshold: f64) -> Result<Self> {
        let hu = vol
            .as_i16()
            .ok_or_else(|| Error::invalid("dtype", "HU volume must be int16"))?;
        let t = hu_threshold;
        let values = hu.iter().map(|&h| T::lit((h as f64 - t).max(0.0))).collect();
        Self::from_values(vol.dims(), vol.spacing_mm(), vol.origin_mm(), values)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn max_value(&self) -> T {
        self.max_value
    }

    /// Attenuation per voxel, x fastest.
    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// The same geometry with every value multiplied by `alpha`.
    pub fn scaled(&self, alpha: T) -> Result<Self> {
        let values = self.values.iter().map(|&v| v * alpha).collect();
        Self::from_values(
            self.dims,
            self.spacing.map(|s| s.as_f64()),
            self.origin.map(|s| s.as_f64()),
            values,
        )
    }

    pub fn min_spacing(&self) -> T {
        self.spacing[0].min(self.spacing[1]).min(self.spacing[2])
    }

    fn bounds(&self) -> ([T; 3], [T; 3]) {
        let half = T::lit(0.5);
        let mut lo = [T::zero(); 3];
        let mut hi = [T::zero(); 3];
        for a in 0..3 {
            lo[a] = self.origin[a] - half * self.spacing[a];
            hi[a] = self.origin[a] + (T::from_usize_lossy(self.dims[a]) - half) * self.spacing[a];
        }
        (lo, hi)
    }

    #[inline]
    fn trilinear(&self, c: [T; 3]) -> T {
        let mut i0 = [0usize; 3];
        let mut i1 = [0usize; 3];
        let mut f = [T::zero(); 3];
        for a in 0..3 {
            let n = self.dims[a];
            let top = T::from_usize_lossy(n - 1);
            let cc = c[a].max(T::zero()).min(top);
            let base = cc.floor().as_f64() as usize;
            let base = base.min(n.saturating_sub(2));
            i0[a] = base;
            i1[a] = (base + 1).min(n - 1);
            f[a] = cc - T::from_usize_lossy(base);
        }
        let nx = self.dims[0];
        let nxy = nx * self.dims[1];
        let at = |i: usize, j: usize, k: usize| self.values[i + nx * j + nxy * k];
        let one = T::one();
        let c00 = at(i0[0], i0[1], i0[2]) * (one - f[0]) + at(i1[0], i0[1], i0[2]) * f[0];
        let c10 = at(i0[0], i1[1], i0[2]) * (one - f[0]) + at(i1[0], i1[1], i0[2]) * f[0];
        let c01 = at(i0[0], i0[1], i1[2]) * (one - f[0]) + at(i1[0], i0[1], i1[2]) * f[0];
        let c11 = at(i0[0], i1[1], i1[2]) * (one - f[0]) + at(i1[0], i1[1], i1[2]) * f[0];
        let c0 = c00 * (one - f[1]) + c10 * f[1];
        let c1 = c01 * (one - f[1]) + c11 * f[1];
        c0 * (one - f[2]) + c1 * f[2]
    }

    /// Block containing the clamped floor voxel of continuous coordinate `c`.
    #[inline]
    fn block_of(&self, c: [T; 3]) -> [usize; 3] {
        let mut b = [0; 3];
        for a in 0..3 {
            let top = T::from_usize_lossy(self.dims[a] - 1);
            let cc = c[a].max(T::zero()).min(top);
            b[a] = (cc.floor().as_f64() as usize) / BLOCK;
        }
        b
    }

    #[inline]
    fn block_is_empty(&self, b: [usize; 3]) -> bool {
        !self.block_nonzero[b[0] + self.block_dims[0] * (b[1] + self.block_dims[1] * b[2])]
    }

    /// Ray parameter at which the ray leaves the region of coordinates whose
    /// clamped floor voxel lies in block `b`.
    fn block_exit(&self, b: [usize; 3], c0: [T; 3], dc: [T; 3]) -> T {
        let mut t_exit = T::lit(f64::INFINITY);
        for a in 0..3 {
            let t = if dc[a] > T::zero() {
                if b[a] + 1 >= self.block_dims[a] {
                    continue;
                }
                (T::from_usize_lossy((b[a] + 1) * BLOCK) - c0[a]) / dc[a]
            } else if dc[a] < T::zero() {
                if b[a] == 0 {
                    continue;
                }
                (T::from_usize_lossy(b[a] * BLOCK) - c0[a]) / dc[a]
            } else {
                continue;
            };
            t_exit = t_exit.min(t);
        }
        t_exit
    }
}

fn dilate_blocks(raw: &[bool], bd: [usize; 3]) -> Vec<bool> {
    let mut out = vec![false; raw.len()];
    for k in 0..bd[2] {
        for j in 0..bd[1] {
            for i in 0..bd[0] {
                if !raw[i + bd[0] * (j + bd[1] * k)] {
                    continue;
                }
                for kk in k.saturating_sub(1)..=(k + 1).min(bd[2] - 1) {
                    for jj in j.saturating_sub(1)..=(j + 1).min(bd[1] - 1) {
                        for ii in i.saturating_sub(1)..=(i + 1).min(bd[0] - 1) {
                            out[ii + bd[0] * (jj + bd[1] * kk)] = true;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Slab intersection of the ray `o + t·d` with an axis-aligned box.
fn ray_box<T: Real>(o: &[T; 3], d: &[T; 3], lo: &[T; 3], hi: &[T; 3]) -> Option<(T, T)> {
    let mut t0 = T::lit(f64::NEG_INFINITY);
    let mut t1 = T::lit(f64::INFINITY);
    for a in 0..3 {
        if d[a] == T::zero() {
            if o[a] < lo[a] || o[a] > hi[a] {
                return None;
            }
            continue;
        }
        let inv = T::one() / d[a];
        let (mut ta, mut tb) = ((lo[a] - o[a]) * inv, (hi[a] - o[a]) * inv);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t1 > t0).then_some((t0, t1))
}

fn inside<T: Real>(p: &Point3<T>, lo: &[T; 3], hi: &[T; 3]) -> bool {
    (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a])
}

/// Focal point and pixel-to-direction map of a camera.
struct RayCaster<T: Real> {
    x0: Point3<T>,
    m_inv: Matrix3<T>,
}

impl<T: Real> RayCaster<T> {
    fn new(cam: &CameraMatrix<T>) -> Result<Self> {
        let cam = cam.normalized();
        let x0 = cam.center()?;
        let m_inv = cam
            .m()
            .try_inverse()
            .ok_or_else(|| Error::DegenerateCamera("M is not invertible".into()))?;
        Ok(RayCaster { x0, m_inv })
    }

    /// Unit direction through the centre of pixel `(i, j)`.
    #[inline]
    fn direction(&self, i: usize, j: usize) -> Vector3<T> {
        let half = T::lit(0.5);
        let u = T::from_usize_lossy(i) + half;
        let v = T::from_usize_lossy(j) + half;
        (self.m_inv * Vector3::new(u, v, T::one())).normalize()
    }
}

/// Rendering parameters shared by DRRs and masks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderParams {
    pub width: usize,
    pub height: usize,
    /// Integration step; `None` selects half the smallest voxel spacing.
    pub step_mm: Option<f64>,
    pub pixel_pitch_mm: f64,
}

impl RenderParams {
    pub fn new(width: usize, height: usize, pixel_pitch_mm: f64) -> Self {
        RenderParams {
            width,
            height,
            step_mm: None,
            pixel_pitch_mm,
        }
    }

    pub fn with_step(mut self, step_mm: f64) -> Self {
        self.step_mm = Some(step_mm);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("width", "image dimensions must be ≥ 1"));
        }
        if let Some(s) = self.step_mm {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid("step_mm", "must be positive"));
            }
        }
        if !(self.pixel_pitch_mm > 0.0 && self.pixel_pitch_mm.is_finite()) {
            return Err(Error::invalid("pixel_pitch_mm", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrrImage<T: Real> {
    pub pixel_pitch_mm: f64,
    /// Line integrals in mm·(attenuation units).
    pub raw: Image<T>,
}

impl<T: Real> DrrImage<T> {
    pub fn width(&self) -> usize {
        self.raw.width()
    }

    pub fn height(&self) -> usize {
        self.raw.height()
    }

    pub fn raw_max(&self) -> T {
        self.raw.pixels().iter().fold(T::zero(), |m, &v| m.max(v))
    }

    pub fn raw_min(&self) -> T {
        self.raw.pixels().iter().fold(T::lit(f64::INFINITY), |m, &v| m.min(v))
    }

    /// 16-bit image scaled so the brightest pixel maps to 65535.
    pub fn normalized(&self) -> Gray16 {
        let max = self.raw_max();
        if max <= T::zero() {
            return self.raw.map(|_| 0u16);
        }
        let scale = 65535.0 / max.as_f64();
        self.raw
            .map(|v| (v.as_f64() * scale).round().clamp(0.0, 65535.0) as u16)
    }
}

/// Renders the attenuation line integral for every pixel.
pub fn render_drr<T: Real>(
    vol: &PreparedVolume<T>,
    cam: &CameraMatrix<T>,
    params: &RenderParams,
) -> Result<DrrImage<T>> {
    params.validate()?;
    let caster = RayCaster::new(cam)?;
    let (lo, hi) = vol.bounds();
    if inside(&caster.x0, &lo, &hi) {
        return Err(Error::UnsupportedConfiguration(
            "camera focal point lies inside the volume".into(),
        ));
    }
    let step = params
        .step_mm
        .map(T::lit)
        .unwrap_or_else(|| vol.min_spacing() * T::lit(0.5));
    let w = params.width;
    let mut data = vec![T::zero(); w * params.height];
    data.par_chunks_mut(w).enumerate().for_each(|(j, row)| {
        for (i, out) in row.iter_mut().enumerate() {
            *out = march(vol, &caster, caster.direction(i, j), &lo, &hi, step);
        }
    });
    Ok(DrrImage {
        pixel_pitch_mm: params.pixel_pitch_mm,
        raw: Image::from_vec(w, params.height, data)?,
    })
}

fn march<T: Real>(
    vol: &PreparedVolume<T>,
    caster: &RayCaster<T>,
    d: Vector3<T>,
    lo: &[T; 3],
    hi: &[T; 3],
    step: T,
) -> T {
    let o = [caster.x0.x, caster.x0.y, caster.x0.z];
    let dir = [d.x, d.y, d.z];
    let Some((t_in, t_out)) = ray_box(&o, &dir, lo, hi) else {
        return T::zero();
    };
    let t_in = t_in.max(T::zero());
    if t_out <= t_in {
        return T::zero();
    }
    let mut c0 = [T::zero(); 3];
    let mut dc = [T::zero(); 3];
    for a in 0..3 {
        c0[a] = (o[a] - vol.origin[a]) / vol.spacing[a];
        dc[a] = dir[a] / vol.spacing[a];
    }
    let half = T::lit(0.5);
    let n_samples = ((t_out - t_in) / step).floor().as_f64() as usize + 1;
    let mut sum = T::zero();
    let mut k = 0usize;
    while k < n_samples {
        let t = t_in + (T::from_usize_lossy(k) + half) * step;
        if t > t_out {
            break;
        }
        let c = [c0[0] + dc[0] * t, c0[1] + dc[1] * t, c0[2] + dc[2] * t];
        let b = vol.block_of(c);
        if vol.block_is_empty(b) {
            let t_exit = vol.block_exit(b, c0, dc);
            if !t_exit.is_finite() || t_exit >= t_out {
                break;
            }
            let next = ((t_exit - t_in) / step - half).ceil().as_f64();
            k = (next.max(0.0) as usize).max(k + 1);
            continue;
        }
        sum += vol.trilinear(c);
        k += 1;
    }
    sum * step
}

/// Set of label ids (0–255) as a bitset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct LabelSet([u64; 4]);

impl LabelSet {
    #[inline]
    fn insert(&mut self, id: u8) {
        self.0[(id >> 6) as usize] |= 1 << (id & 63);
    }

    #[inline]
    fn contains(&self, id: u8) -> bool {
        self.0[(id >> 6) as usize] & (1 << (id & 63)) != 0
    }
}

/// Label volume prepared for silhouette rendering.
#[derive(Debug, Clone)]
pub struct LabelGrid<T: Real> {
    dims: [usize; 3],
    spacing: [T; 3],
    origin: [T; 3],
    labels: Vec<u8>,
    /// Inclusive voxel bounding box per present label.
    boxes: BTreeMap<u8, ([usize; 3], [usize; 3])>,
}

impl<T: Real> LabelGrid<T> {
    pub fn new(labels: &Volume) -> Result<Self> {
        let data = labels
            .as_u8()
            .ok_or_else(|| Error::invalid("dtype", "label volume must be uint8"))?;
        let dims = labels.dims();
        let mut boxes: BTreeMap<u8, ([usize; 3], [usize; 3])> = BTreeMap::new();
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let l = data[i + dims[0] * (j + dims[1] * k)];
                    if l == 0 {
                        continue;
                    }
                    let e = boxes.entry(l).or_insert(([i, j, k], [i, j, k]));
                    for (a, v) in [i, j, k].into_iter().enumerate() {
                        e.0[a] = e.0[a].min(v);
                        e.1[a] = e.1[a].max(v);
                    }
                }
            }
        }
        Ok(LabelGrid {
            dims,
            spacing: labels.spacing_mm().map(T::lit),
            origin: labels.origin_mm().map(T::lit),
            labels: data.to_vec(),
            boxes,
        })
    }

    pub fn label_ids(&self) -> Vec<u8> {
        self.boxes.keys().copied().collect()
    }

    fn bounds(&self) -> ([T; 3], [T; 3]) {
        let half = T::lit(0.5);
        let mut lo = [T::zero(); 3];
        let mut hi = [T::zero(); 3];
        for a in 0..3 {
            lo[a] = self.origin[a] - half * self.spacing[a];
            hi[a] = self.origin[a] + (T::from_usize_lossy(self.dims[a]) - half) * self.spacing[a];
        }
        (lo, hi)
    }

    /// Union voxel box of the requested labels, if any are present.
    fn union_box(&self, ids: &[u8]) -> Option<([usize; 3], [usize; 3])> {
        let mut out: Option<([usize; 3], [usize; 3])> = None;
        for id in ids {
            if let Some(&(l, h)) = self.boxes.get(id) {
                out = Some(match out {
                    None => (l, h),
                    Some((ol, oh)) => (
                        [ol[0].min(l[0]), ol[1].min(l[1]), ol[2].min(l[2])],
                        [oh[0].max(h[0]), oh[1].max(h[1]), oh[2].max(h[2])],
                    ),
                });
            }
        }
        out
    }

    /// Labels of the voxel cells the ray crosses inside the voxel box
    /// `[blo, bhi]`, restricted to `wanted`.
    fn traverse(
        &self,
        o: [T; 3],
        d: [T; 3],
        blo: [usize; 3],
        bhi: [usize; 3],
        wanted: &LabelSet,
        n_wanted: usize,
    ) -> LabelSet {
        let mut hit = LabelSet::default();
        // Shifted voxel coordinates: cell i spans [i, i+1).
        let half = T::lit(0.5);
        let mut c0 = [T::zero(); 3];
        let mut dc = [T::zero(); 3];
        let mut lo = [T::zero(); 3];
        let mut hi = [T::zero(); 3];
        for a in 0..3 {
            c0[a] = (o[a] - self.origin[a]) / self.spacing[a] + half;
            dc[a] = d[a] / self.spacing[a];
            lo[a] = T::from_usize_lossy(blo[a]);
            hi[a] = T::from_usize_lossy(bhi[a] + 1);
        }
        let Some((t_in, t_out)) = ray_box(&c0, &dc, &lo, &hi) else {
            return hit;
        };
        let t_in = t_in.max(T::zero());
        if t_out <= t_in {
            return hit;
        }
        let t_mid = t_in;
        let mut cell = [0i64; 3];
        let mut step = [0i64; 3];
        let mut t_max = [T::zero(); 3];
        let mut t_delta = [T::zero(); 3];
        for a in 0..3 {
            let p = c0[a] + dc[a] * t_mid;
            let f = p.floor().as_f64() as i64;
            cell[a] = f.clamp(blo[a] as i64, bhi[a] as i64);
            if dc[a] > T::zero() {
                step[a] = 1;
                t_max[a] = (T::lit((cell[a] + 1) as f64) - c0[a]) / dc[a];
                t_delta[a] = T::one() / dc[a];
            } else if dc[a] < T::zero() {
                step[a] = -1;
                t_max[a] = (T::lit(cell[a] as f64) - c0[a]) / dc[a];
                t_delta[a] = -T::one() / dc[a];
            } else {
                t_max[a] = T::lit(f64::INFINITY);
                t_delta[a] = T::lit(f64::INFINITY);
            }
        }
        let nx = self.dims[0];
        let nxy = nx * self.dims[1];
        let mut found = 0usize;
        loop {
            let l = self.labels[cell[0] as usize + nx * cell[1] as usize + nxy * cell[2] as usize];
            if l != 0 && wanted.contains(l) && !hit.contains(l) {
                hit.insert(l);
                found += 1;
                if found == n_wanted {
                    break;
                }
            }
            let a = if t_max[0] < t_max[1] {
                if t_max[0] < t_max[2] {
                    0
                } else {
                    2
                }
            } else if t_max[1] < t_max[2] {
                1
            } else {
                2
            };
            if t_max[a] > t_out {
                break;
            }
            cell[a] += step[a];
            if cell[a] < blo[a] as i64 || cell[a] > bhi[a] as i64 {
                break;
            }
            t_max[a] += t_delta[a];
        }
        hit
    }
}

/// Silhouette masks (`{0,1}`) of each requested label: a pixel is set when
/// its ray crosses at least one voxel cell carrying that label.
pub fn render_masks<T: Real>(
    grid: &LabelGrid<T>,
    ids: &[u8],
    cam: &CameraMatrix<T>,
    params: &RenderParams,
) -> Result<BTreeMap<u8, Mask>> {
    params.validate()?;
    let caster = RayCaster::new(cam)?;
    let (lo, hi) = grid.bounds();
    if inside(&caster.x0, &lo, &hi) {
        return Err(Error::UnsupportedConfiguration(
            "camera focal point lies inside the volume".into(),
        ));
    }
    let mut wanted = LabelSet::default();
    let mut unique: Vec<u8> = ids.iter().copied().filter(|&id| id != 0).collect();
    unique.sort_unstable();
    unique.dedup();
    for &id in &unique {
        wanted.insert(id);
    }
    let (w, h) = (params.width, params.height);
    let mut hits = vec![LabelSet::default(); w * h];
    if let Some((blo, bhi)) = grid.union_box(&unique) {
        let present = unique.iter().filter(|id| grid.boxes.contains_key(id)).count();
        let o = [caster.x0.x, caster.x0.y, caster.x0.z];
        hits.par_chunks_mut(w).enumerate().for_each(|(j, row)| {
            for (i, out) in row.iter_mut().enumerate() {
                let d = caster.direction(i, j);
                *out = grid.traverse(o, [d.x, d.y, d.z], blo, bhi, &wanted, present);
            }
        });
    }
    let mut masks = BTreeMap::new();
    for &id in ids {
        let data = hits.iter().map(|s| u8::from(s.contains(id) && id != 0)).collect();
        masks.insert(id, Image::from_vec(w, h, data)?);
    }
    Ok(masks)
}

pub fn render_mask<T: Real>(grid: &LabelGrid<T>, id: u8, cam: &CameraMatrix<T>, params: &RenderParams) -> Result<Mask> {
    Ok(render_masks(grid, &[id], cam, params)?
        .remove(&id)
        .expect("requested id present"))
}

/// DRR, label masks and bead projections rendered from one camera.
#[derive(Debug, Clone)]
pub struct PairedRender<T: Real> {
    pub drr: DrrImage<T>,
    pub masks: BTreeMap<u8, Mask>,
    pub beads: Vec<Point2<T>>,
}

pub fn render_paired<T: Real>(
    vol: &PreparedVolume<T>,
    labels: Option<&LabelGrid<T>>,
    ids: &[u8],
    beads: &[Point3<T>],
    cam: &CameraMatrix<T>,
    params: &RenderParams,
) -> Result<PairedRender<T>> {
    let drr = render_drr(vol, cam, params)?;
    let masks = match labels {
        Some(grid) if !ids.is_empty() => render_masks(grid, ids, cam, params)?,
        _ => BTreeMap::new(),
    };
    let beads = beads.iter().map(|b| cam.project(b)).collect::<Result<Vec<_>>>()?;
    Ok(PairedRender { drr, masks, beads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{compose_camera, Pose, ViewClass};
    use nalgebra::Matrix3;

    fn axial_camera(z_source: f64, f_px: f64, size: usize) -> CameraMatrix<f64> {
        // Looks along +z from below; image x = world x, image y = world y.
        let c = size as f64 / 2.0;
        let k = Matrix3::new(f_px, 0.0, c, 0.0, f_px, c, 0.0, 0.0, 1.0);
        compose_camera(&k, &Matrix3::identity(), &Point3::new(0.0, 0.0, z_source)).unwrap()
    }

    fn box_volume() -> PreparedVolume<f64> {
        // 20×20×100 voxels of 1 mm, cells covering z ∈ [0, 100].
        let dims = [20, 20, 100];
        PreparedVolume::from_values(dims, [1.0; 3], [-9.5, -9.5, 0.5], vec![1.0; 40_000]).unwrap()
    }

    #[test]
    fn box_path_length_along_axis() {
        let vol = box_volume();
        let cam = axial_camera(-500.0, 1000.0, 64);
        for step in [0.5, 0.3, 1.0] {
            let img = render_drr(&vol, &cam, &RenderParams::new(64, 64, 1.0).with_step(step)).unwrap();
            let centre = img.raw.get(32, 32);
            assert!((centre - 100.0).abs() <= step, "step {step}: {centre}");
        }
    }

    #[test]
    fn empty_volume_renders_zero() {
        let vol = PreparedVolume::from_values([8; 3], [1.0; 3], [0.0; 3], vec![0.0f64; 512]).unwrap();
        let img = render_drr(&vol, &axial_camera(-200.0, 500.0, 16), &RenderParams::new(16, 16, 1.0)).unwrap();
        assert!(img.raw.pixels().iter().all(|&v| v == 0.0));
        assert!(img.normalized().pixels().iter().all(|&v| v == 0));
    }

    #[test]
    fn doubling_attenuation_doubles_raw_exactly() {
        let vals: Vec<f64> = (0..16 * 16 * 16).map(|i| ((i * 37) % 11) as f64).collect();
        let vol = PreparedVolume::from_values([16; 3], [1.0; 3], [-7.5; 3], vals).unwrap();
        let cam = axial_camera(-300.0, 600.0, 32);
        let p = RenderParams::new(32, 32, 1.0);
        let a = render_drr(&vol, &cam, &p).unwrap();
        let b = render_drr(&vol.scaled(2.0).unwrap(), &cam, &p).unwrap();
        for (x, y) in a.raw.pixels().iter().zip(b.raw.pixels()) {
            assert_eq!(2.0 * x, *y);
        }
        assert_eq!(a.normalized(), b.normalized());
    }

    #[test]
    fn block_skipping_matches_dense_marching() {
        // Sparse content so most blocks are empty.
        let n = 40;
        let mut vals = vec![0.0f64; n * n * n];
        for (idx, v) in vals.iter_mut().enumerate() {
            let (i, j, k) = (idx % n, (idx / n) % n, idx / (n * n));
            if (10..14).contains(&i) && (20..30).contains(&j) && (5..35).contains(&k) {
                *v = 1.0 + (i + j + k) as f64 * 0.01;
            }
        }
        let vol = PreparedVolume::from_values([n; 3], [0.7; 3], [-13.0; 3], vals).unwrap();
        let dense = {
            let mut v = vol.clone();
            v.block_nonzero.iter_mut().for_each(|b| *b = true);
            v
        };
        let mut pose = Pose::new(33.0, 12.0, ViewClass::Misc, [0.0; 3]);
        pose.detector_px = [48, 48];
        pose.pixel_pitch_mm = 2.5;
        let cam = pose.camera::<f64>().unwrap();
        let p = RenderParams::new(48, 48, 2.5).with_step(0.35);
        let a = render_drr(&vol, &cam, &p).unwrap();
        let b = render_drr(&dense, &cam, &p).unwrap();
        assert_eq!(a.raw, b.raw);
        assert!(a.raw_max() > 0.0);
    }

    #[test]
    fn camera_inside_volume_is_unsupported() {
        let vol = box_volume();
        let cam = axial_camera(50.0, 1000.0, 16);
        assert!(matches!(
            render_drr(&vol, &cam, &RenderParams::new(16, 16, 1.0)),
            Err(Error::UnsupportedConfiguration(_))
        ));
    }

    #[test]
    fn zero_step_is_rejected() {
        let err = render_drr(
            &box_volume(),
            &axial_camera(-500.0, 1000.0, 8),
            &RenderParams::new(8, 8, 1.0).with_step(0.0),
        )
        .unwrap_err();
        assert_eq!(err.field(), Some("step_mm"));
    }

    #[test]
    fn absent_label_gives_empty_mask() {
        let labels = Volume::new(
            [4; 3],
            [1.0; 3],
            [0.0; 3],
            crate::volume::VolumeData::Uint8(vec![1; 64]),
        )
        .unwrap();
        let grid = LabelGrid::<f64>::new(&labels).unwrap();
        let cam = axial_camera(-100.0, 200.0, 16);
        let m = render_mask(&grid, 7, &cam, &RenderParams::new(16, 16, 1.0)).unwrap();
        assert_eq!(m.count_nonzero(), 0);
        let m = render_mask(&grid, 1, &cam, &RenderParams::new(16, 16, 1.0)).unwrap();
        assert!(m.count_nonzero() > 0);
    }

    #[test]
    fn paired_render_without_labels_has_no_masks() {
        let vol = box_volume();
        let cam = axial_camera(-500.0, 1000.0, 16);
        let out = render_paired(
            &vol,
            None,
            &[],
            &[Point3::new(0.0, 0.0, 50.0)],
            &cam,
            &RenderParams::new(16, 16, 1.0),
        )
        .unwrap();
        assert!(out.masks.is_empty());
        assert_eq!(out.beads.len(), 1);
        assert!((out.beads[0] - Point2::new(8.0, 8.0)).norm() < 1e-9);
    }
}
