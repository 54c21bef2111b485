//! Direct linear transform with similarity normalization of both point sets.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4, Point2, Point3};

use crate::error::{Error, Result};
use crate::geometry::CameraMatrix;
use crate::scalar::Real;

pub const MIN_DLT_POINTS: usize = 6;

/// Similarity `T` taking 2D points to centroid 0 and RMS distance √2.
pub fn normalize_2d<T: Real>(pts: &[Point2<T>]) -> (Matrix3<T>, Vec<Point2<T>>) {
    let n = T::from_usize_lossy(pts.len());
    let c = pts.iter().fold(nalgebra::Vector2::zeros(), |acc, p| acc + p.coords) / n;
    let ms = pts
        .iter()
        .map(|p| (p.coords - c).norm_squared())
        .fold(T::zero(), |a, b| a + b)
        / n;
    let s = if ms > T::zero() {
        (T::lit(2.0) / ms).sqrt()
    } else {
        T::one()
    };
    let t = Matrix3::new(
        s,
        T::zero(),
        -s * c.x,
        T::zero(),
        s,
        -s * c.y,
        T::zero(),
        T::zero(),
        T::one(),
    );
    let out = pts.iter().map(|p| Point2::from((p.coords - c) * s)).collect();
    (t, out)
}

/// Similarity `U` taking 3D points to centroid 0 and RMS distance √3.
pub fn normalize_3d<T: Real>(pts: &[Point3<T>]) -> (Matrix4<T>, Vec<Point3<T>>) {
    let n = T::from_usize_lossy(pts.len());
    let c = pts.iter().fold(nalgebra::Vector3::zeros(), |acc, p| acc + p.coords) / n;
    let ms = pts
        .iter()
        .map(|p| (p.coords - c).norm_squared())
        .fold(T::zero(), |a, b| a + b)
        / n;
    let s = if ms > T::zero() {
        (T::lit(3.0) / ms).sqrt()
    } else {
        T::one()
    };
    let mut u = Matrix4::identity() * s;
    u[(3, 3)] = T::one();
    for a in 0..3 {
        u[(a, 3)] = -s * c[a];
    }
    let out = pts.iter().map(|p| Point3::from((p.coords - c) * s)).collect();
    (u, out)
}

/// Fails with a degenerate-configuration error when the 3D points are
/// (numerically) coplanar.
pub fn check_non_coplanar<T: Real>(pts: &[Point3<T>]) -> Result<()> {
    let n = pts.len();
    let c = pts.iter().fold(nalgebra::Vector3::zeros(), |acc, p| acc + p.coords) / T::from_usize_lossy(n.max(1));
    let scatter = DMatrix::from_fn(n, 3, |i, a| pts[i][a] - c[a]);
    let sv = scatter.singular_values();
    let max = sv.max();
    let min = sv.min();
    if n < 4 || !(min > T::tol(1e-9) * max) {
        return Err(Error::DegenerateConfiguration("fiducial points are coplanar".into()));
    }
    Ok(())
}

/// Solves the homogeneous DLT system on already-normalized coordinates.
fn solve_normalized<T: Real>(p2: &[Point2<T>], p3: &[Point3<T>]) -> Option<Matrix3x4<T>> {
    let n = p2.len();
    let mut a = DMatrix::<T>::zeros(2 * n, 12);
    for i in 0..n {
        let x = [p3[i].x, p3[i].y, p3[i].z, T::one()];
        let (u, v) = (p2[i].x, p2[i].y);
        for c in 0..4 {
            a[(2 * i, c)] = x[c];
            a[(2 * i, 8 + c)] = -u * x[c];
            a[(2 * i + 1, 4 + c)] = x[c];
            a[(2 * i + 1, 8 + c)] = -v * x[c];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let (idx, _) =
        svd.singular_values.iter().enumerate().fold(
            (0, T::lit(f64::INFINITY)),
            |best, (i, &s)| if s < best.1 { (i, s) } else { best },
        );
    // With 2n < 12 rows the null space is not covered by v_t.
    if v_t.nrows() < 12 {
        return None;
    }
    let row = v_t.row(idx);
    Some(Matrix3x4::from_fn(|r, c| row[4 * r + c]))
}

/// Precomputed normalization for repeated solves over the same point sets.
pub(crate) struct NormalizedPairs<T: Real> {
    pub t2: Matrix3<T>,
    pub u3: Matrix4<T>,
    pub p2: Vec<Point2<T>>,
    pub p3: Vec<Point3<T>>,
}

impl<T: Real> NormalizedPairs<T> {
    pub fn new(p2: &[Point2<T>], p3: &[Point3<T>]) -> Self {
        let (t2, p2) = normalize_2d(p2);
        let (u3, p3) = normalize_3d(p3);
        NormalizedPairs { t2, u3, p2, p3 }
    }

    /// DLT with 2D point `j` matched to 3D point `assign[j]`.
    pub fn solve_assigned(&self, assign: &[usize]) -> Option<CameraMatrix<T>> {
        let p3: Vec<_> = assign.iter().map(|&i| self.p3[i]).collect();
        let p2: Vec<_> = (0..assign.len()).map(|j| self.p2[j]).collect();
        let pn = solve_normalized(&p2, &p3)?;
        let t_inv = self.t2.try_inverse()?;
        let p = t_inv * pn * self.u3;
        CameraMatrix::new(p).ok().map(|c| c.normalized())
    }
}

/// Camera matrix from ≥ 6 2D–3D correspondences.
pub fn solve_dlt<T: Real>(points2d: &[Point2<T>], points3d: &[Point3<T>]) -> Result<CameraMatrix<T>> {
    if points2d.len() != points3d.len() {
        return Err(Error::invalid(
            "points2d",
            format!("{} image points for {} world points", points2d.len(), points3d.len()),
        ));
    }
    if points2d.len() < MIN_DLT_POINTS {
        return Err(Error::InsufficientPoints {
            got: points2d.len(),
            need: MIN_DLT_POINTS,
        });
    }
    check_non_coplanar(points3d)?;
    let pairs = NormalizedPairs::new(points2d, points3d);
    let identity: Vec<usize> = (0..points2d.len()).collect();
    pairs
        .solve_assigned(&identity)
        .ok_or_else(|| Error::DegenerateConfiguration("DLT system has no valid camera".into()))
}

/// Euclidean reprojection distance per correspondence; points that project
/// to infinity give `+∞`.
pub fn reprojection_errors<T: Real>(cam: &CameraMatrix<T>, points2d: &[Point2<T>], points3d: &[Point3<T>]) -> Vec<T> {
    points2d
        .iter()
        .zip(points3d)
        .map(|(x, big_x)| match cam.project(big_x) {
            Ok(p) => (p - x).norm(),
            Err(_) => T::lit(f64::INFINITY),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Pose, ViewClass};

    fn scene() -> (CameraMatrix<f64>, Vec<Point3<f64>>) {
        let cam = Pose::new(25.0, -10.0, ViewClass::Misc, [0.0; 3]).camera().unwrap();
        let pts = (0..14)
            .map(|i| {
                let f = i as f64;
                Point3::new(30.0 * (f * 1.3).sin(), 25.0 * (f * 0.7).cos(), 35.0 * (f * 2.1).sin())
            })
            .collect();
        (cam, pts)
    }

    #[test]
    fn noiseless_points_reproject_exactly() {
        let (cam, pts) = scene();
        let px: Vec<_> = pts.iter().map(|p| cam.project(p).unwrap()).collect();
        let est = solve_dlt(&px, &pts).unwrap();
        let err = reprojection_errors(&est, &px, &pts);
        assert!(err.iter().all(|&e| e < 1e-6), "{err:?}");
    }

    #[test]
    fn five_points_are_insufficient() {
        let (cam, pts) = scene();
        let px: Vec<_> = pts[..5].iter().map(|p| cam.project(p).unwrap()).collect();
        assert!(matches!(
            solve_dlt(&px, &pts[..5]),
            Err(Error::InsufficientPoints { got: 5, need: 6 })
        ));
    }

    #[test]
    fn coplanar_points_are_degenerate() {
        let (cam, _) = scene();
        let mut pts: Vec<_> = (0..6)
            .map(|k| {
                let a = k as f64 * std::f64::consts::PI / 3.0;
                Point3::new(20.0 * a.cos(), 20.0 * a.sin(), 0.0)
            })
            .collect();
        pts.push(Point3::origin());
        let px: Vec<_> = pts.iter().map(|p| cam.project(p).unwrap()).collect();
        assert!(matches!(solve_dlt(&px, &pts), Err(Error::DegenerateConfiguration(_))));
    }

    #[test]
    fn normalization_hits_target_rms() {
        let (_, pts) = scene();
        let (_, n3) = normalize_3d(&pts);
        let rms = (n3.iter().map(|p| p.coords.norm_squared()).sum::<f64>() / n3.len() as f64).sqrt();
        assert!((rms - 3f64.sqrt()).abs() < 1e-12);
        let p2: Vec<_> = pts.iter().map(|p| Point2::new(p.x, p.y)).collect();
        let (t, n2) = normalize_2d(&p2);
        let rms = (n2.iter().map(|p| p.coords.norm_squared()).sum::<f64>() / n2.len() as f64).sqrt();
        assert!((rms - 2f64.sqrt()).abs() < 1e-12);
        let mapped = t * p2[3].to_homogeneous();
        assert!((mapped.xy() - n2[3].coords).norm() < 1e-12);
    }
}
