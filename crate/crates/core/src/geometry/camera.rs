//! Pinhole projection matrices: composition from intrinsics/extrinsics,
//! RQ-style decomposition and point projection.

use nalgebra::{Matrix3, Matrix3x4, Point2, Point3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A 3×4 projective camera `P = K·[R | −R·X₀]` mapping world millimetres to
/// detector pixels (origin top-left, +u right, +v down).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraMatrix<T: Real> {
    p: Matrix3x4<T>,
    normalized: bool,
}

/// Intrinsics, rotation and focal point recovered from a [`CameraMatrix`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraDecomposition<T: Real> {
    /// Upper-triangular intrinsics with positive diagonal and `k[(2,2)] = 1`.
    pub k: Matrix3<T>,
    /// Proper rotation from world to camera axes.
    pub r: Matrix3<T>,
    /// Focal point (X-ray source) in world millimetres.
    pub x_o: Point3<T>,
}

fn hadamard_ratio<T: Real>(m: &Matrix3<T>) -> T {
    let denom = m.column(0).norm() * m.column(1).norm() * m.column(2).norm();
    if denom == T::zero() {
        T::zero()
    } else {
        m.determinant().abs() / denom
    }
}

impl<T: Real> CameraMatrix<T> {
    /// Wraps a raw 3×4 matrix, rejecting matrices whose left 3×3 block is singular.
    pub fn new(p: Matrix3x4<T>) -> Result<Self> {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("P", "non-finite entry"));
        }
        let m = p.fixed_view::<3, 3>(0, 0).into_owned();
        if hadamard_ratio(&m) <= T::tol(1e-12) {
            return Err(Error::DegenerateCamera("left 3x3 block is singular".to_string()));
        }
        Ok(Self { p, normalized: false })
    }

    /// Builds from twelve row-major entries.
    pub fn from_row_slice(values: &[T]) -> Result<Self> {
        if values.len() != 12 {
            return Err(Error::invalid(
                "P",
                format!("expected 12 entries, got {}", values.len()),
            ));
        }
        Self::new(Matrix3x4::from_row_slice(values))
    }

    pub fn matrix(&self) -> &Matrix3x4<T> {
        &self.p
    }

    /// True when the scale is fixed so that the decomposed `K` has unit
    /// lower-right entry and the orientation is positive.
    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Left 3×3 block `M = K·R`.
    pub fn m(&self) -> Matrix3<T> {
        self.p.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Last column `m = −K·R·X₀`.
    pub fn m_col(&self) -> Vector3<T> {
        self.p.column(3).into_owned()
    }

    pub fn row(&self, i: usize) -> Vector4<T> {
        self.p.row(i).transpose()
    }

    /// Row-major copy of the twelve entries.
    pub fn to_row_major(&self) -> [T; 12] {
        let mut out = [T::zero(); 12];
        for r in 0..3 {
            for c in 0..4 {
                out[r * 4 + c] = self.p[(r, c)];
            }
        }
        out
    }

    /// Multiplies every entry by `s` (which must be non-zero).
    pub fn scaled(&self, s: T) -> Result<Self> {
        Self::new(self.p * s)
    }

    /// Rescales so that `‖M₃‖ = 1` with positive orientation (`det M > 0`),
    /// which makes the decomposed `K[2][2]` equal to one.
    pub fn normalized(&self) -> Self {
        let m = self.m();
        let row_norm = m.row(2).norm();
        let sign = if m.determinant() < T::zero() {
            -T::one()
        } else {
            T::one()
        };
        Self {
            p: self.p * (sign / row_norm),
            normalized: true,
        }
    }

    /// Focal point `X₀ = −M⁻¹·m`.
    pub fn center(&self) -> Result<Point3<T>> {
        let m_inv = self
            .m()
            .try_inverse()
            .ok_or_else(|| Error::DegenerateCamera("M is not invertible".into()))?;
        Ok(Point3::from(-(m_inv * self.m_col())))
    }

    /// Homogeneous image coordinates of a world point.
    pub fn project_homogeneous(&self, x: &Point3<T>) -> Vector3<T> {
        self.p * x.to_homogeneous()
    }

    /// Projects a world point to dehomogenized pixel coordinates.
    pub fn project(&self, x: &Point3<T>) -> Result<Point2<T>> {
        let h = self.project_homogeneous(x);
        let scale = self.p.row(2).norm() * (x.coords.norm() + T::one());
        if h.z.abs() <= T::tol(1e-12) * scale {
            return Err(Error::PointAtInfinity(h.z.as_f64()));
        }
        Ok(Point2::new(h.x / h.z, h.y / h.z))
    }

    /// Direction (unit, world frame) of the ray from the focal point through
    /// pixel `(u, v)`, oriented towards the scene.
    pub fn ray_direction(&self, u: T, v: T) -> Result<Vector3<T>> {
        let m_inv = self
            .m()
            .try_inverse()
            .ok_or_else(|| Error::DegenerateCamera("M is not invertible".into()))?;
        let mut d = m_inv * Vector3::new(u, v, T::one());
        if self.m().determinant() < T::zero() {
            d = -d;
        }
        Ok(d.normalize())
    }

    /// Decomposes into `K`, `R`, `X₀`; see [`decompose_camera`].
    pub fn decompose(&self) -> Result<CameraDecomposition<T>> {
        decompose_camera(self)
    }

    /// Lossless conversion to another scalar type through `f64`.
    pub fn cast<U: Real>(&self) -> CameraMatrix<U> {
        CameraMatrix {
            p: self.p.map(|v| U::lit(v.as_f64())),
            normalized: self.normalized,
        }
    }
}

fn is_rotation<T: Real>(r: &Matrix3<T>, tol: T) -> bool {
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    err <= tol && (r.determinant() - T::one()).abs() <= tol
}

/// Composes `P = K·[R | −R·X₀]`, normalized so that `K[2][2] = 1`.
pub fn compose_camera<T: Real>(k: &Matrix3<T>, r: &Matrix3<T>, x_o: &Point3<T>) -> Result<CameraMatrix<T>> {
    let scale = k.abs().max();
    let lower_tol = T::tol(1e-12) * scale;
    if k[(1, 0)].abs() > lower_tol || k[(2, 0)].abs() > lower_tol || k[(2, 1)].abs() > lower_tol {
        return Err(Error::invalid("k", "intrinsics must be upper-triangular"));
    }
    if (0..3).any(|i| k[(i, i)] <= T::zero()) {
        return Err(Error::invalid("k", "intrinsics diagonal must be positive"));
    }
    if !is_rotation(r, T::tol(1e-6)) {
        return Err(Error::invalid("r", "not a proper orthonormal rotation"));
    }
    let kn = k / k[(2, 2)];
    let t = -(r * x_o.coords);
    let mut rt = Matrix3x4::zeros();
    rt.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    rt.set_column(3, &t);
    let p = kn * rt;
    let cam = CameraMatrix::new(p)?;
    Ok(cam.normalized())
}

/// Recovers `K`, `R`, `X₀` from `P` through a QR factorization of `M⁻¹`:
/// `qr(M⁻¹) = Rᵀ·K⁻¹`. Signs are fixed so that `K` has a positive diagonal
/// and `det R = +1`; `K` is scaled so that `K[2][2] = 1`.
pub fn decompose_camera<T: Real>(cam: &CameraMatrix<T>) -> Result<CameraDecomposition<T>> {
    let m = cam.m();
    let m_inv = m
        .try_inverse()
        .ok_or_else(|| Error::DegenerateCamera("M is not invertible".into()))?;
    let x_o = Point3::from(-(m_inv * cam.m_col()));

    let qr = m_inv.qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for i in 0..3 {
        if r[(i, i)] < T::zero() {
            for c in 0..3 {
                r[(i, c)] = -r[(i, c)];
            }
            for row in 0..3 {
                q[(row, i)] = -q[(row, i)];
            }
        }
    }
    if (0..3).any(|i| r[(i, i)] == T::zero()) {
        return Err(Error::DegenerateCamera("zero on QR diagonal".into()));
    }
    let mut k = r
        .try_inverse()
        .ok_or_else(|| Error::DegenerateCamera("triangular factor singular".into()))?;
    // Clean the strictly-lower part, which is zero up to rounding.
    k[(1, 0)] = T::zero();
    k[(2, 0)] = T::zero();
    k[(2, 1)] = T::zero();
    let k = k / k[(2, 2)];
    let mut rot = q.transpose();
    if rot.determinant() < T::zero() {
        // P carried a negative overall scale: decompose −P instead.
        rot = -rot;
    }
    Ok(CameraDecomposition { k, r: rot, x_o })
}

impl<T: Real> CameraDecomposition<T> {
    pub fn compose(&self) -> Result<CameraMatrix<T>> {
        compose_camera(&self.k, &self.r, &self.x_o)
    }
}

/// On-disk camera description: `{"P": [[..4..],[..4..],[..4..]], "K"?, "R"?, "X_o"?}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraFile {
    #[serde(rename = "P", deserialize_with = "de_p")]
    pub p: [[f64; 4]; 3],
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<[[f64; 3]; 3]>,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub r: Option<[[f64; 3]; 3]>,
    #[serde(rename = "X_o", default, skip_serializing_if = "Option::is_none")]
    pub x_o: Option<[f64; 3]>,
}

fn de_p<'de, D>(de: D) -> std::result::Result<[[f64; 4]; 3], D::Error>
where
    D: serde::Deserializer<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Shape {
        Rows([[f64; 4]; 3]),
        Flat(Vec<f64>),
        Wrapped(Vec<Vec<f64>>),
    }
    let flat: Vec<f64> = match Shape::deserialize(de)? {
        Shape::Rows(rows) => return Ok(rows),
        Shape::Flat(v) => v,
        Shape::Wrapped(v) => v.into_iter().flatten().collect(),
    };
    if flat.len() != 12 {
        return Err(serde::de::Error::custom(format!(
            "P must hold 12 numbers, got {}",
            flat.len()
        )));
    }
    let mut rows = [[0.0; 4]; 3];
    for (i, v) in flat.into_iter().enumerate() {
        rows[i / 4][i % 4] = v;
    }
    Ok(rows)
}

impl CameraFile {
    /// Serializes `cam` together with its decomposition, when one exists.
    pub fn from_camera<T: Real>(cam: &CameraMatrix<T>) -> Self {
        let p64 = cam.cast::<f64>();
        let mut p = [[0.0; 4]; 3];
        for (r, row) in p.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = p64.matrix()[(r, c)];
            }
        }
        let dec = p64.decompose().ok();
        let mat3 = |m: &Matrix3<f64>| {
            let mut out = [[0.0; 3]; 3];
            for (r, row) in out.iter_mut().enumerate() {
                for (c, v) in row.iter_mut().enumerate() {
                    *v = m[(r, c)];
                }
            }
            out
        };
        CameraFile {
            p,
            k: dec.as_ref().map(|d| mat3(&d.k)),
            r: dec.as_ref().map(|d| mat3(&d.r)),
            x_o: dec.as_ref().map(|d| [d.x_o.x, d.x_o.y, d.x_o.z]),
        }
    }

    pub fn to_camera<T: Real>(&self) -> Result<CameraMatrix<T>> {
        let flat: Vec<T> = self.p.iter().flatten().map(|&v| T::lit(v)).collect();
        CameraMatrix::from_row_slice(&flat)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("camera file", e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("camera serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}
