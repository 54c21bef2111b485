use nalgebra::{DMatrix, Point2, Point3};

use super::camera::CameraMatrix;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Stacks the two linear constraints `u·p³ − p¹` and `v·p³ − p²` per view.
pub fn triangulation_system<T: Real>(cams: &[CameraMatrix<T>], centers: &[Point2<T>]) -> DMatrix<T> {
    let mut a = DMatrix::zeros(2 * cams.len(), 4);
    for (i, (cam, c)) in cams.iter().zip(centers).enumerate() {
        let p = cam.matrix();
        for col in 0..4 {
            a[(2 * i, col)] = c.x * p[(2, col)] - p[(0, col)];
            a[(2 * i + 1, col)] = c.y * p[(2, col)] - p[(1, col)];
        }
    }
    a
}

/// Least-squares intersection of the rays through the given image points:
/// the right singular vector of the stacked system for the smallest singular
/// value, dehomogenized.
pub fn triangulate_origin<T: Real>(cams: &[CameraMatrix<T>], centers: &[Point2<T>]) -> Result<Point3<T>> {
    if cams.len() != centers.len() {
        return Err(Error::invalid(
            "centers",
            format!("{} cameras but {} centers", cams.len(), centers.len()),
        ));
    }
    if cams.len() < 2 {
        return Err(Error::InsufficientViews {
            got: cams.len(),
            need: 2,
        });
    }
    let a = triangulation_system(cams, centers);
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .as_ref()
        .ok_or_else(|| Error::DegenerateGeometry("SVD did not converge".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let s = |rank: usize| svd.singular_values[order[rank]];
    if order.len() < 4 || s(2) <= T::tol(1e-10) * s(0) {
        return Err(Error::DegenerateGeometry(
            "rays do not constrain a point (rank < 3)".into(),
        ));
    }
    let v = v_t.row(order[3]);
    if v[3].abs() < T::lit(1e-10) * v.norm() {
        return Err(Error::DegenerateGeometry("intersection lies at infinity".into()));
    }
    Ok(Point3::new(v[0] / v[3], v[1] / v[3], v[2] / v[3]))
}

#[cfg(test)]
mod tests {
    use super::super::compose_camera;
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix3, Vector3};

    /// Camera at `eye` looking at the world origin.
    fn look_at(eye: Point3<f64>) -> CameraMatrix<f64> {
        let k = Matrix3::new(1500.0, 0.0, 224.0, 0.0, 1500.0, 224.0, 0.0, 0.0, 1.0);
        let z = (-eye.coords).normalize();
        let up = if z.z.abs() > 0.9 { Vector3::y() } else { Vector3::z() };
        let x = up.cross(&z).normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        compose_camera(&k, &r, &eye).unwrap()
    }

    #[test]
    fn orthogonal_cameras_meet_at_origin() {
        let cams = [
            look_at(Point3::new(1000.0, 0.0, 0.0)),
            look_at(Point3::new(0.0, 1000.0, 0.0)),
        ];
        let centers = [Point2::new(224.0, 224.0), Point2::new(224.0, 224.0)];
        let x = triangulate_origin(&cams, &centers).unwrap();
        assert_relative_eq!(x, Point3::origin(), epsilon = 1e-6);
    }

    #[test]
    fn zero_baseline_is_degenerate() {
        let cam = look_at(Point3::new(1000.0, 0.0, 0.0));
        let c = Point2::new(224.0, 224.0);
        assert!(matches!(
            triangulate_origin(&[cam, cam], &[c, c]),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn single_view_is_rejected() {
        let cam = look_at(Point3::new(1000.0, 0.0, 0.0));
        assert!(matches!(
            triangulate_origin(&[cam], &[Point2::new(1.0, 1.0)]),
            Err(Error::InsufficientViews { got: 1, need: 2 })
        ));
    }
}
