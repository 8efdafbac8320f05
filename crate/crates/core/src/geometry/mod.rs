//! Planar rigid-body geometry: SE(2) poses, convex shapes, signed distance
//! with witness points and arc-length boundary sampling.

mod distance;
mod pose;
mod shape;

pub use distance::{point_distance, signed_distance, DistanceResult};
pub(crate) use distance::placed_distance;
pub use pose::{Pose2, Vec2};
pub(crate) use shape::PlacedShape;
pub use shape::Shape;

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
}

/// Point on the boundary of `shape` (shape frame) for parameter `u ∈ [0, 1)`.
///
/// The parameterization is by arc length, so uniformly drawn `u` gives a
/// uniform density along the boundary.
pub fn sample_boundary_point<T: Real>(shape: &Shape<T>, u: T) -> Vec2<T> {
    shape.boundary_point(u)
}

pub fn transform_point<T: Real>(pose: &Pose2<T>, p: Vec2<T>) -> Vec2<T> {
    pose.transform_point(p)
}

pub fn compose<T: Real>(a: &Pose2<T>, b: &Pose2<T>) -> Pose2<T> {
    a.compose(b)
}

pub fn inverse<T: Real>(a: &Pose2<T>) -> Pose2<T> {
    a.inverse()
}
