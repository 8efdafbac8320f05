use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use crate::scalar::{wrap_angle, Real};

/// Point or free vector in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Real> Vec2<T> {
    pub const fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    pub fn from_angle(theta: T) -> Self {
        Self::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, o: Self) -> T {
        self.x * o.y - self.y * o.x
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Self {
        Self::new(-self.y, self.x)
    }

    pub fn norm_sq(self) -> T {
        self.dot(self)
    }

    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        if n > T::zero() && n.is_finite() {
            Some(self * (T::one() / n))
        } else {
            None
        }
    }

    pub fn rotate(self, theta: T) -> Self {
        let (s, c) = theta.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn angle(self) -> T {
        self.y.atan2(self.x)
    }

    pub fn dist(self, o: Self) -> T {
        (self - o).norm()
    }

    pub fn lerp(self, o: Self, s: T) -> Self {
        self + (o - self) * s
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn cast<U: Real>(self) -> Vec2<U> {
        Vec2::new(U::lit(self.x.to_f64_lossy()), U::lit(self.y.to_f64_lossy()))
    }
}

impl<T: Real> Add for Vec2<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl<T: Real> AddAssign for Vec2<T> {
    fn add_assign(&mut self, o: Self) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl<T: Real> Sub for Vec2<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl<T: Real> Mul<T> for Vec2<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s)
    }
}

impl<T: Real> Neg for Vec2<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

/// Rigid transform in SE(2).
///
/// `theta` is kept in `[-π, π)`; every constructor and composition
/// re-normalizes it.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose2<T> {
    pub x: T,
    pub y: T,
    pub theta: T,
}

impl<T: Real> Pose2<T> {
    pub fn new(x: T, y: T, theta: T) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn from_parts(translation: Vec2<T>, theta: T) -> Self {
        Self::new(translation.x, translation.y, theta)
    }

    pub fn translation(&self) -> Vec2<T> {
        Vec2::new(self.x, self.y)
    }

    /// `self ∘ other`: applies `other` in the frame of `self`.
    pub fn compose(&self, other: &Self) -> Self {
        let t = self.translation() + other.translation().rotate(self.theta);
        Self::new(t.x, t.y, self.theta + other.theta)
    }

    pub fn inverse(&self) -> Self {
        let t = (-self.translation()).rotate(-self.theta);
        Self::new(t.x, t.y, -self.theta)
    }

    /// Maps a point from this frame into the parent frame.
    pub fn transform_point(&self, p: Vec2<T>) -> Vec2<T> {
        self.translation() + p.rotate(self.theta)
    }

    /// Rotates a free vector into the parent frame.
    pub fn transform_vector(&self, v: Vec2<T>) -> Vec2<T> {
        v.rotate(self.theta)
    }

    pub fn inverse_transform_point(&self, p: Vec2<T>) -> Vec2<T> {
        (p - self.translation()).rotate(-self.theta)
    }

    /// Pose of `other` expressed in this frame: `self⁻¹ ∘ other`.
    pub fn relative(&self, other: &Self) -> Self {
        self.inverse().compose(other)
    }

    /// Componentwise difference `(Δx, Δy, wrap(Δθ))` of `self − other`.
    pub fn delta(&self, other: &Self) -> [T; 3] {
        [
            self.x - other.x,
            self.y - other.y,
            wrap_angle(self.theta - other.theta),
        ]
    }

    /// Interpolates translation linearly and rotation along the shortest arc.
    pub fn interpolate(&self, other: &Self, s: T) -> Self {
        let d = wrap_angle(other.theta - self.theta);
        let t = self.translation().lerp(other.translation(), s);
        Self::new(t.x, t.y, self.theta + d * s)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    pub fn to_array(&self) -> [T; 3] {
        [self.x, self.y, self.theta]
    }
}
