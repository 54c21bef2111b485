//! Bead removal by boundary-inward diffusion.

use super::detect::Detection;
use crate::image::Gray16;

const RELAX_SWEEPS: usize = 400;
const RELAX_TOL: f64 = 1e-7;

/// Replaces the pixels whose centres lie within `radius_scale · radius` of a
/// detection. Holes are first filled ring by ring from the outside, each
/// pixel taking the mean of its already-known 8-neighbours, then relaxed
/// towards the 8-neighbour harmonic solution. Pixels outside the discs are
/// returned unchanged.
pub fn inpaint_fiducials(img: &Gray16, detections: &[Detection], radius_scale: f64) -> Gray16 {
    let (w, h) = (img.width(), img.height());
    let mut hole = vec![false; w * h];
    for d in detections {
        let r = d.radius_px * radius_scale;
        if !(r > 0.0) {
            continue;
        }
        let i_lo = (d.center[0] - r).floor().max(0.0) as usize;
        let j_lo = (d.center[1] - r).floor().max(0.0) as usize;
        let i_hi = ((d.center[0] + r).ceil().max(0.0) as usize).min(w.saturating_sub(1));
        let j_hi = ((d.center[1] + r).ceil().max(0.0) as usize).min(h.saturating_sub(1));
        for j in j_lo..=j_hi {
            for i in i_lo..=i_hi {
                let dx = i as f64 + 0.5 - d.center[0];
                let dy = j as f64 + 0.5 - d.center[1];
                if dx * dx + dy * dy <= r * r {
                    hole[j * w + i] = true;
                }
            }
        }
    }
    let holes: Vec<usize> = (0..w * h).filter(|&k| hole[k]).collect();
    if holes.is_empty() {
        return img.clone();
    }
    let neighbours = |k: usize| {
        let (i, j) = ((k % w) as i64, (k / w) as i64);
        (-1i64..=1)
            .flat_map(move |dj| (-1i64..=1).map(move |di| (di, dj)))
            .filter(|&(di, dj)| di != 0 || dj != 0)
            .filter_map(move |(di, dj)| {
                let (ii, jj) = (i + di, j + dj);
                (ii >= 0 && jj >= 0 && ii < w as i64 && jj < h as i64).then(|| jj as usize * w + ii as usize)
            })
    };

    let mut val: Vec<f64> = img.pixels().iter().map(|&p| p as f64).collect();
    let mut known: Vec<bool> = hole.iter().map(|&b| !b).collect();
    let mut remaining = holes.clone();
    while !remaining.is_empty() {
        let front: Vec<(usize, f64)> = remaining
            .iter()
            .filter_map(|&k| {
                let (mut sum, mut n) = (0.0, 0usize);
                for nb in neighbours(k) {
                    if known[nb] {
                        sum += val[nb];
                        n += 1;
                    }
                }
                (n > 0).then(|| (k, sum / n as f64))
            })
            .collect();
        if front.is_empty() {
            // No known pixel anywhere: nothing to diffuse from.
            for &k in &remaining {
                val[k] = 0.0;
            }
            break;
        }
        for &(k, v) in &front {
            val[k] = v;
            known[k] = true;
        }
        remaining.retain(|&k| !known[k]);
    }

    for _ in 0..RELAX_SWEEPS {
        let next: Vec<f64> = holes
            .iter()
            .map(|&k| {
                let (mut sum, mut n) = (0.0, 0usize);
                for nb in neighbours(k) {
                    sum += val[nb];
                    n += 1;
                }
                sum / n as f64
            })
            .collect();
        let mut change = 0.0f64;
        for (&k, v) in holes.iter().zip(next) {
            change = change.max((val[k] - v).abs());
            val[k] = v;
        }
        if change < RELAX_TOL {
            break;
        }
    }

    let mut out = img.clone();
    for &k in &holes {
        out.pixels_mut()[k] = val[k].round().clamp(0.0, 65535.0) as u16;
    }
    out
}
