//! Small fixed-size linear algebra and SE(3) utilities.
//!
//! Camera convention used throughout the crate: +z forward, +x right, +y
//! down, pixel (0, 0) at the top-left with pixel centers at integer
//! coordinates. A [`Pose`] is a camera-to-world transform.

use std::ops::{Add, AddAssign, Index, Mul, Neg, Sub};

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec3<S> {
    pub x: S,
    pub y: S,
    pub z: S,
}

impl<S: Scalar> Vec3<S> {
    #[inline]
    pub const fn new(x: S, y: S, z: S) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn zeros() -> Self {
        Self::new(S::zero(), S::zero(), S::zero())
    }

    #[inline]
    pub fn from_array(a: [S; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    #[inline]
    pub fn to_array(self) -> [S; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn dot(self, o: Self) -> S {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_squared(self) -> S {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> S {
        self.norm_squared().sqrt()
    }

    #[inline]
    pub fn scale(self, s: S) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn cast<T: Scalar>(self) -> Vec3<T> {
        Vec3::new(
            T::lit(self.x.as_f64()),
            T::lit(self.y.as_f64()),
            T::lit(self.z.as_f64()),
        )
    }
}

impl<S: Scalar> Add for Vec3<S> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<S: Scalar> AddAssign for Vec3<S> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl<S: Scalar> Sub for Vec3<S> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<S: Scalar> Neg for Vec3<S> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<S: Scalar> Mul<S> for Vec3<S> {
    type Output = Self;
    #[inline]
    fn mul(self, s: S) -> Self {
        self.scale(s)
    }
}

impl<S: Scalar> Index<usize> for Vec3<S> {
    type Output = S;
    fn index(&self, i: usize) -> &S {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

/// Row-major 3x3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3<S> {
    pub m: [[S; 3]; 3],
}

impl<S: Scalar> Mat3<S> {
    pub fn identity() -> Self {
        let (o, z) = (S::one(), S::zero());
        Self {
            m: [[o, z, z], [z, o, z], [z, z, o]],
        }
    }

    pub fn zeros() -> Self {
        Self { m: [[S::zero(); 3]; 3] }
    }

    pub fn from_rows(m: [[S; 3]; 3]) -> Self {
        Self { m }
    }

    #[inline]
    pub fn mul_vec(&self, v: Vec3<S>) -> Vec3<S> {
        let m = &self.m;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    /// `selfᵀ · v`
    #[inline]
    pub fn tr_mul_vec(&self, v: Vec3<S>) -> Vec3<S> {
        let m = &self.m;
        Vec3::new(
            m[0][0] * v.x + m[1][0] * v.y + m[2][0] * v.z,
            m[0][1] * v.x + m[1][1] * v.y + m[2][1] * v.z,
            m[0][2] * v.x + m[1][2] * v.y + m[2][2] * v.z,
        )
    }

    pub fn transpose(&self) -> Self {
        let mut out = *self;
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] = self.m[j][i];
            }
        }
        out
    }

    pub fn mul_mat(&self, o: &Self) -> Self {
        let mut out = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] = (0..3).map(|k| self.m[i][k] * o.m[k][j]).sum();
            }
        }
        out
    }

    /// Frobenius inner product `Σ_ij a_ij b_ij`.
    pub fn frobenius_dot(&self, o: &Self) -> S {
        let mut acc = S::zero();
        for i in 0..3 {
            for j in 0..3 {
                acc += self.m[i][j] * o.m[i][j];
            }
        }
        acc
    }
}

/// Quaternion `w + xi + yj + zk` (Hamilton convention).
///
/// Stored un-normalized during optimization; [`Quat::rotation_matrix`]
/// always returns the rotation of `q / |q|`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quat<S> {
    pub w: S,
    pub x: S,
    pub y: S,
    pub z: S,
}

impl<S: Scalar> Quat<S> {
    pub const fn new(w: S, x: S, y: S, z: S) -> Self {
        Self { w, x, y, z }
    }

    pub fn identity() -> Self {
        Self::new(S::one(), S::zero(), S::zero(), S::zero())
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vec3<S>, angle: S) -> Self {
        let n = axis.norm();
        if n == S::zero() {
            return Self::identity();
        }
        let half = angle * S::lit(0.5);
        let a = axis.scale(half.sin() / n);
        Self::new(half.cos(), a.x, a.y, a.z)
    }

    /// Components in `[w, x, y, z]` order.
    pub fn to_array(self) -> [S; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_array(a: [S; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn norm_squared(self) -> S {
        self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z
    }

    pub fn norm(self) -> S {
        self.norm_squared().sqrt()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        Self::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    /// Unit quaternion with non-negative `w`.
    pub fn canonical(self) -> Self {
        let q = self.normalized();
        if q.w < S::zero() {
            Self::new(-q.w, -q.x, -q.y, -q.z)
        } else {
            q
        }
    }

    pub fn conjugate(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn mul(self, o: Self) -> Self {
        Self::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    fn skew_part(self) -> Mat3<S> {
        let Self { w, x, y, z } = self;
        Mat3::from_rows([
            [-(y * y + z * z), x * y - w * z, x * z + w * y],
            [x * y + w * z, -(x * x + z * z), y * z - w * x],
            [x * z - w * y, y * z + w * x, -(x * x + y * y)],
        ])
    }

    /// `R = I + (2/|q|²)·B(q)`, the rotation of the normalized quaternion.
    pub fn rotation_matrix(self) -> Mat3<S> {
        let s = S::lit(2.0) / self.norm_squared();
        let b = self.skew_part();
        let mut r = Mat3::identity();
        for i in 0..3 {
            for j in 0..3 {
                r.m[i][j] += s * b.m[i][j];
            }
        }
        r
    }

    /// Partial derivatives `∂R/∂w, ∂R/∂x, ∂R/∂y, ∂R/∂z` of
    /// [`Quat::rotation_matrix`], including the normalization.
    pub fn rotation_jacobian(self) -> [Mat3<S>; 4] {
        let Self { w, x, y, z } = self;
        let two = S::lit(2.0);
        let n = self.norm_squared();
        let s = two / n;
        let ds_scale = -S::lit(4.0) / (n * n);
        let b = self.skew_part();
        let zero = S::zero();
        let db = [
            [[zero, -z, y], [z, zero, -x], [-y, x, zero]],
            [[zero, y, z], [y, -two * x, -w], [z, w, -two * x]],
            [[-two * y, x, w], [x, zero, z], [-w, z, -two * y]],
            [[-two * z, -w, x], [w, -two * z, y], [x, y, zero]],
        ];
        let comps = [w, x, y, z];
        let mut out = [Mat3::zeros(); 4];
        for k in 0..4 {
            let ds = ds_scale * comps[k];
            for i in 0..3 {
                for j in 0..3 {
                    out[k].m[i][j] = ds * b.m[i][j] + s * db[k][i][j];
                }
            }
        }
        out
    }

    /// Angle in radians of the relative rotation between two quaternions.
    pub fn angle_to(self, o: Self) -> S {
        let a = self.normalized();
        let b = o.normalized();
        let d = (a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z).abs();
        S::lit(2.0) * d.min(S::one()).acos()
    }

    pub fn cast<T: Scalar>(self) -> Quat<T> {
        Quat::new(
            T::lit(self.w.as_f64()),
            T::lit(self.x.as_f64()),
            T::lit(self.y.as_f64()),
            T::lit(self.z.as_f64()),
        )
    }
}

/// Rigid camera-to-world transform `p_world = R·p_cam + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose<S> {
    pub rotation: Quat<S>,
    pub translation: Vec3<S>,
}

impl<S: Scalar> Pose<S> {
    pub fn new(rotation: Quat<S>, translation: Vec3<S>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Quat::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3<S>) -> Self {
        Self::new(Quat::identity(), t)
    }

    /// `R·p + t`.
    #[inline]
    pub fn apply(&self, p: Vec3<S>) -> Vec3<S> {
        self.rotation.rotation_matrix().mul_vec(p) + self.translation
    }

    /// `Rᵀ·(p − t)`: world point into the camera frame.
    #[inline]
    pub fn apply_inverse(&self, p: Vec3<S>) -> Vec3<S> {
        self.rotation.rotation_matrix().tr_mul_vec(p - self.translation)
    }

    pub fn inverse(&self) -> Self {
        let q = self.rotation.normalized().conjugate();
        let t = -q.rotation_matrix().mul_vec(self.translation);
        Self::new(q, t)
    }

    /// `self ∘ other`, i.e. apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        let r = self.rotation.rotation_matrix();
        Self::new(
            self.rotation.normalized().mul(other.rotation.normalized()),
            r.mul_vec(other.translation) + self.translation,
        )
        .renormalized()
    }

    pub fn renormalized(&self) -> Self {
        Self::new(self.rotation.normalized(), self.translation)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3<S> {
        self.translation
    }

    /// `[tx, ty, tz, qx, qy, qz, qw]`
    pub fn to_tum(&self) -> [S; 7] {
        let q = self.rotation;
        let t = self.translation;
        [t.x, t.y, t.z, q.x, q.y, q.z, q.w]
    }

    pub fn from_tum(v: [S; 7]) -> Self {
        Self::new(Quat::new(v[6], v[3], v[4], v[5]), Vec3::new(v[0], v[1], v[2]))
    }

    pub fn cast<T: Scalar>(&self) -> Pose<T> {
        Pose::new(self.rotation.cast(), self.translation.cast())
    }
}

/// Replays the last inter-frame motion once more:
/// `prev ∘ (prev_prev⁻¹ ∘ prev)`.
pub fn constant_velocity_extrapolate<S: Scalar>(prev: &Pose<S>, prev_prev: &Pose<S>) -> Pose<S> {
    let delta = prev_prev.inverse().compose(prev);
    prev.compose(&delta)
}
