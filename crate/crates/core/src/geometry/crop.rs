use nalgebra::Matrix3;

use super::camera::CameraMatrix;
use crate::scalar::Real;

/// Image-plane shift (and resample scale) applied to a camera when a
/// sub-window is cut out of its image.
///
/// `q = diag(s, s, 1) · [[1, 0, −tˣ], [0, 1, −tʸ], [0, 0, 1]]`, so a pixel
/// `(u, v)` of the full image lands at `(s·(u − tˣ), s·(v − tʸ))` in the crop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropTransform<T: Real> {
    pub t_x: T,
    pub t_y: T,
    pub scale: T,
    q: Matrix3<T>,
}

impl<T: Real> CropTransform<T> {
    /// `scale` must be positive and finite.
    pub fn new(t_x: T, t_y: T, scale: T) -> Self {
        assert!(scale > T::zero() && scale.is_finite(), "crop scale must be positive");
        let q = Matrix3::new(
            scale,
            T::zero(),
            -scale * t_x,
            T::zero(),
            scale,
            -scale * t_y,
            T::zero(),
            T::zero(),
            T::one(),
        );
        Self { t_x, t_y, scale, q }
    }

    pub fn translation(t_x: T, t_y: T) -> Self {
        Self::new(t_x, t_y, T::one())
    }

    pub fn identity() -> Self {
        Self::new(T::zero(), T::zero(), T::one())
    }

    pub fn q(&self) -> &Matrix3<T> {
        &self.q
    }

    /// Maps full-image pixel coordinates into crop coordinates.
    pub fn apply(&self, u: T, v: T) -> (T, T) {
        (self.scale * (u - self.t_x), self.scale * (v - self.t_y))
    }

    /// Maps crop coordinates back into the full image.
    pub fn invert(&self, a: T, b: T) -> (T, T) {
        (a / self.scale + self.t_x, b / self.scale + self.t_y)
    }
}

/// Returns `P̂ = Q·P`.
pub fn adjust_for_crop<T: Real>(p: &CameraMatrix<T>, crop: &CropTransform<T>) -> CameraMatrix<T> {
    CameraMatrix::new(crop.q() * p.matrix()).expect("crop transform is invertible, so Q·P stays non-degenerate")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix3x4, Point2, Point3};

    fn camera() -> CameraMatrix<f64> {
        let k = Matrix3::new(1000.0, 0.0, 300.0, 0.0, 1000.0, 250.0, 0.0, 0.0, 1.0);
        super::super::compose_camera(&k, &Matrix3::identity(), &Point3::new(0.0, 0.0, -1000.0)).unwrap()
    }

    #[test]
    fn unit_scale_matches_pure_shift_matrix() {
        let c = CropTransform::translation(12.5, -3.0);
        let expected = Matrix3::new(1.0, 0.0, -12.5, 0.0, 1.0, 3.0, 0.0, 0.0, 1.0);
        assert_eq!(*c.q(), expected);
    }

    #[test]
    fn identity_crop_is_identity() {
        let cam = camera();
        let out = adjust_for_crop(&cam, &CropTransform::identity());
        assert_eq!(out.matrix(), cam.matrix());
    }

    #[test]
    fn pure_translation_shifts_pixels() {
        let cam = camera();
        // The world origin projects onto the principal point (300, 250).
        let shifted = adjust_for_crop(&cam, &CropTransform::translation(100.0, 50.0));
        let px = shifted.project(&Point3::origin()).unwrap();
        assert_relative_eq!(px, Point2::new(200.0, 200.0), epsilon = 1e-9);
    }

    #[test]
    fn invert_undoes_apply() {
        let c = CropTransform::new(100.0, 100.0, 224.0 / 300.0);
        let (a, b) = c.apply(250.0, 133.0);
        let (u, v) = c.invert(a, b);
        assert_relative_eq!(u, 250.0, epsilon = 1e-12);
        assert_relative_eq!(v, 133.0, epsilon = 1e-12);
        let _ = Matrix3x4::<f64>::zeros();
    }
}
