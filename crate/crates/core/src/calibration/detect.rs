//! Bead detection: white top-hat background removal, thresholding,
//! circular Hough voting on the foreground boundary, and intensity-centroid
//! sub-pixel refinement.

use serde::{Deserialize, Serialize};

use super::fiducials::{BeadClass, REFERENCE_DIAMETER_MM, STANDARD_DIAMETER_MM};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    /// Beads brighter than their surroundings (DRRs).
    #[default]
    Bright,
    /// Beads darker than their surroundings (X-ray films).
    Dark,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectOptions {
    pub radius_min_px: f64,
    pub radius_max_px: f64,
    pub radius_step_px: f64,
    /// Foreground threshold as a fraction of the top-hat maximum.
    pub threshold_fraction: f64,
    pub polarity: Polarity,
    /// Minimum Hough score (votes per unit circumference).
    pub min_score: f64,
    /// Candidates this close to, or inside the disc of, a stronger one merge.
    pub merge_px: f64,
    /// Radii at or above this are classed as reference beads.
    pub class_threshold_px: f64,
}

/// Magnification assumed when only the pixel pitch is known.
pub const NOMINAL_MAGNIFICATION: f64 = 2.0;

impl DetectOptions {
    pub fn new(radius_min_px: f64, radius_max_px: f64) -> Self {
        DetectOptions {
            radius_min_px,
            radius_max_px,
            radius_step_px: 0.5,
            threshold_fraction: 0.15,
            polarity: Polarity::Bright,
            min_score: 0.3,
            merge_px: 2.0,
            class_threshold_px: 0.5 * (radius_min_px + radius_max_px),
        }
    }

    /// Radius range and class threshold for beads imaged at `magnification`
    /// on a detector with the given pitch.
    pub fn for_geometry(pixel_pitch_mm: f64, magnification: f64) -> Self {
        let px = |d_mm: f64| 0.5 * d_mm * magnification / pixel_pitch_mm;
        let (r_std, r_ref) = (px(STANDARD_DIAMETER_MM), px(REFERENCE_DIAMETER_MM));
        let mut opts = DetectOptions::new(0.6 * r_std, 1.3 * r_ref);
        opts.class_threshold_px = 0.5 * (r_std + r_ref);
        opts
    }

    pub fn with_polarity(mut self, polarity: Polarity) -> Self {
        self.polarity = polarity;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Sub-pixel centre in continuous pixel coordinates.
    pub center: [f64; 2],
    pub radius_px: f64,
    pub score: f64,
    pub class: BeadClass,
}

fn min_max_filter(src: &[f64], w: usize, h: usize, r: usize, take_min: bool) -> Vec<f64> {
    let pick = |a: f64, b: f64| if take_min { a.min(b) } else { a.max(b) };
    let init = if take_min { f64::INFINITY } else { f64::NEG_INFINITY };
    let mut tmp = vec![0.0; w * h];
    for j in 0..h {
        let row = &src[j * w..(j + 1) * w];
        for i in 0..w {
            let lo = i.saturating_sub(r);
            let hi = (i + r).min(w - 1);
            tmp[j * w + i] = row[lo..=hi].iter().fold(init, |a, &b| pick(a, b));
        }
    }
    let mut out = vec![0.0; w * h];
    for i in 0..w {
        for j in 0..h {
            let lo = j.saturating_sub(r);
            let hi = (j + r).min(h - 1);
            let mut acc = init;
            for jj in lo..=hi {
                acc = pick(acc, tmp[jj * w + i]);
            }
            out[j * w + i] = acc;
        }
    }
    out
}

/// Image minus its grey-scale opening with a `(2r+1)²` square.
fn white_top_hat(src: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    let eroded = min_max_filter(src, w, h, r, true);
    let opened = min_max_filter(&eroded, w, h, r, false);
    src.iter().zip(&opened).map(|(a, b)| (a - b).max(0.0)).collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Background-corrected intensity centroid around `c`, iterated a few times.
fn refine_center(th: &[f64], w: usize, h: usize, mut c: [f64; 2], radius: f64) -> [f64; 2] {
    let r_in = radius + 2.0;
    let r_out = radius + 4.0;
    for _ in 0..4 {
        let i_lo = (c[0] - r_out).floor().max(0.0) as usize;
        let i_hi = ((c[0] + r_out).ceil() as usize).min(w.saturating_sub(1));
        let j_lo = (c[1] - r_out).floor().max(0.0) as usize;
        let j_hi = ((c[1] + r_out).ceil() as usize).min(h.saturating_sub(1));
        let mut ring = Vec::new();
        for j in j_lo..=j_hi {
            for i in i_lo..=i_hi {
                let d = ((i as f64 + 0.5 - c[0]).powi(2) + (j as f64 + 0.5 - c[1]).powi(2)).sqrt();
                if d > r_in && d <= r_out {
                    ring.push(th[j * w + i]);
                }
            }
        }
        let bg = median(ring);
        let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for j in j_lo..=j_hi {
            for i in i_lo..=i_hi {
                let (x, y) = (i as f64 + 0.5, j as f64 + 0.5);
                if (x - c[0]).powi(2) + (y - c[1]).powi(2) <= r_in * r_in {
                    let wgt = (th[j * w + i] - bg).max(0.0);
                    sw += wgt;
                    sx += wgt * x;
                    sy += wgt * y;
                }
            }
        }
        if sw <= 0.0 {
            break;
        }
        let next = [sx / sw, sy / sw];
        let moved = (next[0] - c[0]).hypot(next[1] - c[1]);
        c = next;
        if moved < 1e-4 {
            break;
        }
    }
    c
}

/// Sum of squared residuals of the best affine fit `A·s + B` of the window
/// samples to the sphere chord profile `s = √max(R² − ρ², 0)`.
fn profile_cost(samples: &[(f64, f64, f64)], cx: f64, cy: f64, r: f64) -> f64 {
    if !(r > 0.5) {
        return f64::INFINITY;
    }
    let n = samples.len() as f64;
    let (mut ss, mut s1, mut sv, mut v1, mut vv) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let r2 = r * r;
    for &(x, y, v) in samples {
        let s = (r2 - (x - cx).powi(2) - (y - cy).powi(2)).max(0.0).sqrt();
        ss += s * s;
        s1 += s;
        sv += s * v;
        v1 += v;
        vv += v * v;
    }
    let det = ss * n - s1 * s1;
    if det.abs() < 1e-12 {
        return f64::INFINITY;
    }
    let a = (sv * n - s1 * v1) / det;
    let b = (ss * v1 - s1 * sv) / det;
    if a <= 0.0 {
        return f64::INFINITY;
    }
    // ‖v − a·s − b‖² expanded through the accumulated moments.
    vv - 2.0 * a * sv - 2.0 * b * v1 + a * a * ss + 2.0 * a * b * s1 + b * b * n
}

/// Minimizes `f` over three parameters with the Nelder–Mead simplex.
fn nelder_mead(f: impl Fn([f64; 3]) -> f64, start: [f64; 3], step: [f64; 3], tol: f64, max_iter: usize) -> [f64; 3] {
    let mut simplex: Vec<([f64; 3], f64)> = (0..4)
        .map(|k| {
            let mut p = start;
            if k > 0 {
                p[k - 1] += step[k - 1];
            }
            (p, f(p))
        })
        .collect();
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = (1..4)
            .flat_map(|k| (0..3).map(move |a| (k, a)))
            .map(|(k, a)| (simplex[k].0[a] - simplex[0].0[a]).abs())
            .fold(0.0, f64::max);
        if spread < tol {
            break;
        }
        let centroid: [f64; 3] = std::array::from_fn(|a| (0..3).map(|k| simplex[k].0[a]).sum::<f64>() / 3.0);
        let along = |t: f64| -> [f64; 3] { std::array::from_fn(|a| centroid[a] + t * (simplex[3].0[a] - centroid[a])) };
        let refl = along(-1.0);
        let fr = f(refl);
        if fr < simplex[0].1 {
            let exp = along(-2.0);
            let fe = f(exp);
            simplex[3] = if fe < fr { (exp, fe) } else { (refl, fr) };
        } else if fr < simplex[2].1 {
            simplex[3] = (refl, fr);
        } else {
            let (con, fc) = if fr < simplex[3].1 {
                let c = along(-0.5);
                (c, f(c))
            } else {
                let c = along(0.5);
                (c, f(c))
            };
            if fc < fr.min(simplex[3].1) {
                simplex[3] = (con, fc);
            } else {
                let best = simplex[0].0;
                for item in simplex.iter_mut().skip(1) {
                    let p: [f64; 3] = std::array::from_fn(|a| best[a] + 0.5 * (item.0[a] - best[a]));
                    *item = (p, f(p));
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex[0].0
}

/// Least-squares fit of a projected uniform sphere to the background-removed
/// window around `c`; returns the fitted centre and radius.
fn fit_profile(th: &[f64], w: usize, h: usize, c: [f64; 2], radius: f64) -> Option<([f64; 2], f64)> {
    let reach = radius + 2.5;
    let i_lo = (c[0] - reach).floor().max(0.0) as usize;
    let i_hi = ((c[0] + reach).ceil() as usize).min(w.saturating_sub(1));
    let j_lo = (c[1] - reach).floor().max(0.0) as usize;
    let j_hi = ((c[1] + reach).ceil() as usize).min(h.saturating_sub(1));
    let mut samples = Vec::new();
    for j in j_lo..=j_hi {
        for i in i_lo..=i_hi {
            let (x, y) = (i as f64 + 0.5, j as f64 + 0.5);
            if (x - c[0]).powi(2) + (y - c[1]).powi(2) <= reach * reach {
                samples.push((x, y, th[j * w + i]));
            }
        }
    }
    if samples.len() < 12 {
        return None;
    }
    let best = nelder_mead(
        |p| profile_cost(&samples, p[0], p[1], p[2]),
        [c[0], c[1], radius],
        [0.3, 0.3, 0.3],
        1e-7,
        600,
    );
    let moved = (best[0] - c[0]).hypot(best[1] - c[1]);
    (best[2].is_finite() && moved < 1.5 && best[2] > 0.5 && best[2] < 2.0 * radius + 2.0)
        .then_some(([best[0], best[1]], best[2]))
}

/// Detects circular blobs whose radius lies in the configured range,
/// strongest first.
pub fn detect_fiducials<P: Copy + Into<f64>>(img: &Image<P>, opts: &DetectOptions) -> Vec<Detection> {
    let (w, h) = (img.width(), img.height());
    if w == 0 || h == 0 || !(opts.radius_max_px >= opts.radius_min_px && opts.radius_min_px > 0.0) {
        return Vec::new();
    }
    let mut f: Vec<f64> = img.pixels().iter().map(|&p| p.into()).collect();
    if opts.polarity == Polarity::Dark {
        let max = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        f.iter_mut().for_each(|v| *v = max - *v);
    }
    let th = white_top_hat(&f, w, h, opts.radius_max_px.ceil() as usize + 2);
    let th_max = th.iter().copied().fold(0.0, f64::max);
    if th_max <= 0.0 {
        return Vec::new();
    }
    let cut = opts.threshold_fraction * th_max;
    let fg: Vec<bool> = th.iter().map(|&v| v > cut).collect();

    let mut edges = Vec::new();
    for j in 0..h {
        for i in 0..w {
            if !fg[j * w + i] {
                continue;
            }
            let boundary = i == 0
                || j == 0
                || i + 1 == w
                || j + 1 == h
                || !fg[j * w + i - 1]
                || !fg[j * w + i + 1]
                || !fg[(j - 1) * w + i]
                || !fg[(j + 1) * w + i];
            if boundary {
                edges.push((i as f64 + 0.5, j as f64 + 0.5));
            }
        }
    }

    let mut radii = Vec::new();
    let mut r = opts.radius_min_px;
    while r <= opts.radius_max_px + 1e-9 {
        radii.push(r);
        r += opts.radius_step_px.max(0.05);
    }
    let mut best_score = vec![0.0f64; w * h];
    let mut best_radius = vec![0.0f64; w * h];
    let mut acc = vec![0u32; w * h];
    for &r in &radii {
        acc.iter_mut().for_each(|a| *a = 0);
        let n_angles = ((2.0 * std::f64::consts::PI * r).ceil() as usize).max(8);
        let offsets: Vec<(f64, f64)> = (0..n_angles)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / n_angles as f64;
                (r * a.cos(), r * a.sin())
            })
            .collect();
        for &(ex, ey) in &edges {
            let mut last = usize::MAX;
            for &(dx, dy) in &offsets {
                let (cx, cy) = (ex - dx, ey - dy);
                if cx < 0.0 || cy < 0.0 || cx >= w as f64 || cy >= h as f64 {
                    continue;
                }
                let cell = cy as usize * w + cx as usize;
                if cell != last {
                    acc[cell] += 1;
                    last = cell;
                }
            }
        }
        let norm = 1.0 / (2.0 * std::f64::consts::PI * r);
        for (cell, &a) in acc.iter().enumerate() {
            let s = a as f64 * norm;
            if s > best_score[cell] {
                best_score[cell] = s;
                best_radius[cell] = r;
            }
        }
    }

    let win = (opts.radius_min_px.floor() as i64).max(2);
    let mut peaks = Vec::new();
    for j in 0..h as i64 {
        for i in 0..w as i64 {
            let idx = (j as usize) * w + i as usize;
            let s = best_score[idx];
            // Circles through the rims of neighbouring beads centre on background.
            if s < opts.min_score || !fg[idx] {
                continue;
            }
            let mut is_max = true;
            'scan: for jj in (j - win).max(0)..=(j + win).min(h as i64 - 1) {
                for ii in (i - win).max(0)..=(i + win).min(w as i64 - 1) {
                    let other = (jj as usize) * w + ii as usize;
                    if other == idx {
                        continue;
                    }
                    let o = best_score[other];
                    if o > s || (o == s && other < idx) {
                        is_max = false;
                        break 'scan;
                    }
                }
            }
            if is_max {
                peaks.push(idx);
            }
        }
    }

    let mut found: Vec<Detection> = peaks
        .into_iter()
        .map(|idx| {
            let start = [(idx % w) as f64 + 0.5, (idx / w) as f64 + 0.5];
            let r_h = best_radius[idx];
            let centroid = refine_center(&th, w, h, start, r_h);
            let r_fg = foreground_radius(&fg, w, h, centroid, r_h + 2.0).unwrap_or(r_h);
            let (center, radius) = fit_profile(&th, w, h, centroid, r_fg).unwrap_or((centroid, r_fg));
            Detection {
                center,
                radius_px: radius,
                score: best_score[idx],
                class: if radius >= opts.class_threshold_px {
                    BeadClass::Reference
                } else {
                    BeadClass::Standard
                },
            }
        })
        .collect();
    found.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.center[1].total_cmp(&b.center[1]))
            .then(a.center[0].total_cmp(&b.center[0]))
    });
    // Bead discs do not overlap, so a weaker centre inside a stronger disc
    // is a secondary ring of the same bead.
    let mut merged: Vec<Detection> = Vec::new();
    for d in found {
        let dup = merged
            .iter()
            .any(|m| (m.center[0] - d.center[0]).hypot(m.center[1] - d.center[1]) <= opts.merge_px.max(m.radius_px));
        if !dup {
            merged.push(d);
        }
    }
    merged
}

/// Equivalent-disc radius of the foreground pixels within `reach` of `c`.
fn foreground_radius(fg: &[bool], w: usize, h: usize, c: [f64; 2], reach: f64) -> Option<f64> {
    let i_lo = (c[0] - reach).floor().max(0.0) as usize;
    let i_hi = ((c[0] + reach).ceil() as usize).min(w - 1);
    let j_lo = (c[1] - reach).floor().max(0.0) as usize;
    let j_hi = ((c[1] + reach).ceil() as usize).min(h - 1);
    let mut count = 0usize;
    for j in j_lo..=j_hi {
        for i in i_lo..=i_hi {
            let d2 = (i as f64 + 0.5 - c[0]).powi(2) + (j as f64 + 0.5 - c[1]).powi(2);
            if d2 <= reach * reach && fg[j * w + i] {
                count += 1;
            }
        }
    }
    (count > 0).then(|| (count as f64 / std::f64::consts::PI).sqrt())
}
