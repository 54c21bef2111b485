//! Exhaustive 2D–3D correspondence search over the reference beads.

use std::cmp::Ordering;

use nalgebra::{Point2, Point3};
use rayon::prelude::*;

use super::dlt::{check_non_coplanar, reprojection_errors, NormalizedPairs, MIN_DLT_POINTS};
use crate::error::{Error, Result};
use crate::geometry::CameraMatrix;
use crate::scalar::Real;

/// Largest number of candidate assignments the search will enumerate.
pub const MAX_ASSIGNMENTS: usize = 40_320;

#[derive(Debug, Clone)]
pub struct Correspondence<T: Real> {
    /// `assignment[j]` is the index of the 3D point matched to 2D point `j`.
    pub assignment: Vec<usize>,
    /// Preliminary camera from the winning assignment.
    pub camera: CameraMatrix<T>,
    pub mean_error_px: T,
}

fn count_assignments(n3: usize, n2: usize) -> usize {
    (n3 - n2 + 1..=n3).product()
}

struct Best<T: Real> {
    error: T,
    assignment: Vec<usize>,
    camera: Option<CameraMatrix<T>>,
}

impl<T: Real> Best<T> {
    fn none() -> Self {
        Best {
            error: T::lit(f64::INFINITY),
            assignment: Vec::new(),
            camera: None,
        }
    }

    /// Smaller error wins; equal errors fall back to lexicographic order.
    fn better_than(&self, other: &Best<T>) -> bool {
        if self.camera.is_none() {
            return false;
        }
        if other.camera.is_none() {
            return true;
        }
        match self.error.partial_cmp(&other.error) {
            Some(Ordering::Less) => true,
            Some(Ordering::Greater) => false,
            _ => self.assignment < other.assignment,
        }
    }
}

/// Tries every injective assignment of the 2D points to the 3D points,
/// solving a DLT for each, and keeps the one with the smallest mean
/// reprojection error (ties broken by lexicographic assignment order).
pub fn resolve_correspondence<T: Real>(ref3d: &[Point3<T>], ref2d: &[Point2<T>]) -> Result<Correspondence<T>> {
    let (n3, n2) = (ref3d.len(), ref2d.len());
    if n2 < MIN_DLT_POINTS {
        return Err(Error::InsufficientPoints {
            got: n2,
            need: MIN_DLT_POINTS,
        });
    }
    if n2 > n3 {
        return Err(Error::invalid(
            "ref2d",
            format!("{n2} image points but only {n3} reference beads"),
        ));
    }
    if count_assignments(n3, n2) > MAX_ASSIGNMENTS {
        return Err(Error::invalid(
            "ref3d",
            format!("{n3} reference beads exceed the exhaustive search limit"),
        ));
    }
    check_non_coplanar(ref3d)?;
    let pairs = NormalizedPairs::new(ref2d, ref3d);

    let best = (0..n3)
        .into_par_iter()
        .map(|first| {
            let mut best = Best::none();
            let mut assign = vec![first];
            let mut used = vec![false; n3];
            used[first] = true;
            search(&pairs, ref2d, ref3d, &mut assign, &mut used, n2, &mut best);
            best
        })
        .reduce(Best::none, |a, b| if b.better_than(&a) { b } else { a });

    match best.camera {
        Some(camera) => Ok(Correspondence {
            assignment: best.assignment,
            camera,
            mean_error_px: best.error,
        }),
        None => Err(Error::NoSolution),
    }
}

fn search<T: Real>(
    pairs: &NormalizedPairs<T>,
    p2: &[Point2<T>],
    p3: &[Point3<T>],
    assign: &mut Vec<usize>,
    used: &mut [bool],
    n2: usize,
    best: &mut Best<T>,
) {
    if assign.len() == n2 {
        evaluate(pairs, p2, p3, assign, best);
        return;
    }
    for i in 0..used.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        assign.push(i);
        search(pairs, p2, p3, assign, used, n2, best);
        assign.pop();
        used[i] = false;
    }
}

fn evaluate<T: Real>(
    pairs: &NormalizedPairs<T>,
    p2: &[Point2<T>],
    p3: &[Point3<T>],
    assign: &[usize],
    best: &mut Best<T>,
) {
    let Some(cam) = pairs.solve_assigned(assign) else {
        return;
    };
    let chosen: Vec<_> = assign.iter().map(|&i| p3[i]).collect();
    let errors = reprojection_errors(&cam, p2, &chosen);
    let mean = errors.iter().fold(T::zero(), |a, &b| a + b) / T::from_usize_lossy(errors.len());
    if !mean.is_finite() {
        return;
    }
    let candidate = Best {
        error: mean,
        assignment: assign.to_vec(),
        camera: Some(cam),
    };
    if candidate.better_than(best) {
        *best = candidate;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Pose, ViewClass};

    #[test]
    fn recovers_inverse_permutation() {
        let cam: CameraMatrix<f64> = Pose::new(-35.0, 8.0, ViewClass::Misc, [0.0; 3]).camera().unwrap();
        let pts: Vec<_> = [
            [12.0, -30.0, 5.0],
            [-25.0, 10.0, 20.0],
            [30.0, 22.0, -15.0],
            [-8.0, -18.0, -28.0],
            [5.0, 35.0, 12.0],
            [-32.0, -5.0, -6.0],
            [20.0, 2.0, 30.0],
        ]
        .iter()
        .map(|p| Point3::new(p[0], p[1], p[2]))
        .collect();
        let perm = [3usize, 6, 0, 5, 1, 4, 2];
        let px: Vec<_> = perm.iter().map(|&i| cam.project(&pts[i]).unwrap()).collect();
        let res = resolve_correspondence(&pts, &px).unwrap();
        assert_eq!(res.assignment, perm.to_vec());
        assert!(res.mean_error_px < 1e-6);
    }

    #[test]
    fn counts_partial_assignments() {
        assert_eq!(count_assignments(7, 7), 5040);
        assert_eq!(count_assignments(7, 6), 5040);
        assert_eq!(count_assignments(8, 6), 20160);
    }
}
