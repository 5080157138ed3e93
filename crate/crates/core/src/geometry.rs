//! Affine transforms in normalized coordinates.
//!
//! Canonical axes: x is left-right, y is posterior-anterior (the slab
//! stacking axis) and z is inferior-superior. Slab planes are orthogonal to y;
//! an in-plane pixel coordinate `(u, v)` lives on the canonical `(x, z)` axes.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

/// Determinant threshold below which a transform is treated as singular.
pub const SINGULAR_DET: f64 = 1e-12;

pub type Point3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine3 {
    pub linear: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Affine3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Affine3 {
    pub fn new(linear: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            linear,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    pub fn from_translation(t: Point3) -> Self {
        Self::new(Matrix3::identity(), Vector3::from(t))
    }

    pub fn from_linear(linear: Matrix3<f64>) -> Self {
        Self::new(linear, Vector3::zeros())
    }

    /// Row-major 3x4 `[linear | translation]`.
    pub fn from_rows(rows: [[f64; 4]; 3]) -> Self {
        let linear = Matrix3::from_fn(|r, c| rows[r][c]);
        let translation = Vector3::new(rows[0][3], rows[1][3], rows[2][3]);
        Self::new(linear, translation)
    }

    pub fn to_rows(&self) -> [[f64; 4]; 3] {
        std::array::from_fn(|r| {
            [
                self.linear[(r, 0)],
                self.linear[(r, 1)],
                self.linear[(r, 2)],
                self.translation[r],
            ]
        })
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        (self.linear * Vector3::from(p) + self.translation).into()
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Affine3) -> Affine3 {
        Affine3::new(
            self.linear * other.linear,
            self.linear * other.translation + self.translation,
        )
    }

    pub fn det(&self) -> f64 {
        self.linear.determinant()
    }

    pub fn inverse(&self) -> Result<Affine3> {
        let det = self.det();
        if !det.is_finite() || det.abs() <= SINGULAR_DET {
            return Err(Error::SingularTransform { det });
        }
        let inv = self
            .linear
            .try_inverse()
            .ok_or(Error::SingularTransform { det })?;
        Ok(Affine3::new(inv, -(inv * self.translation)))
    }

    /// Restriction to the `w = 0` plane of `(u, w, v)`: the map a slab
    /// transform applies to the slab's own pixels.
    pub fn plane_part(&self) -> PlaneAffine {
        PlaneAffine {
            linear: nalgebra::Matrix3x2::from_columns(&[self.linear.column(0).into_owned(), self.linear.column(2).into_owned()]),
            translation: self.translation,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().chain(self.translation.iter()).all(|v| v.is_finite())
    }

    /// Largest absolute entry difference over the 3x4 matrix.
    pub fn max_abs_diff(&self, other: &Affine3) -> f64 {
        let a = self.to_rows();
        let b = other.to_rows();
        a.iter()
            .flatten()
            .zip(b.iter().flatten())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }
}

/// In-plane affine of one slab plus the fixed out-of-plane position of its
/// plane in canonical space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine2 {
    pub linear: Matrix2<f64>,
    pub translation: Vector2<f64>,
    pub plane_coord: f64,
}

impl Affine2 {
    pub fn identity(plane_coord: f64) -> Self {
        Self {
            linear: Matrix2::identity(),
            translation: Vector2::zeros(),
            plane_coord,
        }
    }

    pub fn apply(&self, uv: [f64; 2]) -> [f64; 2] {
        (self.linear * Vector2::from(uv) + self.translation).into()
    }

    pub fn det(&self) -> f64 {
        self.linear.determinant()
    }

    pub fn is_finite(&self) -> bool {
        self.linear
            .iter()
            .chain(self.translation.iter())
            .all(|v| v.is_finite())
            && self.plane_coord.is_finite()
    }

    /// Lift to a 3D affine acting on `(u, w, v)`, where `w` is the offset
    /// from the slab plane. Points on the slab have `w = 0` and land at
    /// `(x, plane_coord, z)`.
    pub fn embed(&self) -> Affine3 {
        let l = &self.linear;
        let linear = Matrix3::new(
            l[(0, 0)], 0.0, l[(0, 1)], //
            0.0, 1.0, 0.0, //
            l[(1, 0)], 0.0, l[(1, 1)],
        );
        let translation = Vector3::new(self.translation[0], self.plane_coord, self.translation[1]);
        Affine3::new(linear, translation)
    }
}

/// Affine map from a 2D plane into 3D space (3x2 linear part).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneAffine {
    pub linear: nalgebra::Matrix3x2<f64>,
    pub translation: Vector3<f64>,
}

impl PlaneAffine {
    pub fn max_abs_diff(&self, other: &PlaneAffine) -> f64 {
        self.linear
            .iter()
            .chain(self.translation.iter())
            .zip(other.linear.iter().chain(other.translation.iter()))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn apply(&self, uv: [f64; 2]) -> Point3 {
        (self.linear * Vector2::from(uv) + self.translation).into()
    }

    /// Complete to a full 3D affine acting on `(u, w, v)` whose `w = plane_coord`
    /// slice reproduces this map. The out-of-plane column is the plane normal,
    /// scaled by the geometric mean of the in-plane scales and oriented so the
    /// determinant is positive.
    pub fn complete(&self, plane_coord: f64) -> Affine3 {
        let cu: Vector3<f64> = self.linear.column(0).into();
        let cv: Vector3<f64> = self.linear.column(1).into();
        let n = cu.cross(&cv);
        let area = n.norm();
        let normal = if area > 0.0 {
            n / area * area.sqrt()
        } else {
            Vector3::new(0.0, 1.0, 0.0)
        };
        let mut linear = Matrix3::from_columns(&[cu, normal, cv]);
        if linear.determinant() < 0.0 {
            linear.set_column(1, &(-normal));
        }
        let translation = self.translation - linear.column(1) * plane_coord;
        Affine3::new(linear, translation)
    }
}

/// Rotation from Euler angles in degrees, applied x then y then z.
pub fn rotation_xyz_deg(angles: [f64; 3]) -> Matrix3<f64> {
    let [ax, ay, az] = angles.map(f64::to_radians);
    let rx = Matrix3::new(
        1.0, 0.0, 0.0, //
        0.0, ax.cos(), -ax.sin(), //
        0.0, ax.sin(), ax.cos(),
    );
    let ry = Matrix3::new(
        ay.cos(), 0.0, ay.sin(), //
        0.0, 1.0, 0.0, //
        -ay.sin(), 0.0, ay.cos(),
    );
    let rz = Matrix3::new(
        az.cos(), -az.sin(), 0.0, //
        az.sin(), az.cos(), 0.0, //
        0.0, 0.0, 1.0,
    );
    rz * ry * rx
}

/// Upper-triangular shear with factors `(xy, xz, yz)`.
pub fn shear(h: [f64; 3]) -> Matrix3<f64> {
    Matrix3::new(
        1.0, h[0], h[1], //
        0.0, 1.0, h[2], //
        0.0, 0.0, 1.0,
    )
}

/// Cell-centered normalized coordinate of voxel `i` on an axis of `n` voxels.
#[inline]
pub fn index_to_norm(i: usize, n: usize) -> f64 {
    2.0 * (i as f64 + 0.5) / n as f64 - 1.0
}

/// Continuous voxel index for normalized coordinate `p` on an axis of `n` voxels.
#[inline]
pub fn norm_to_index(p: f64, n: usize) -> f64 {
    (p + 1.0) * n as f64 / 2.0 - 0.5
}
