pub mod contact;
pub mod features;
pub mod geometry;
pub mod optimizer;
pub mod planner;
pub mod predicates;
pub mod scalar;
pub mod scene;
pub mod waypoints;

pub use scalar::Real;

pub type Vec2 = geometry::Vec2<f64>;
pub type Pose2 = geometry::Pose2<f64>;
pub type Shape = geometry::Shape<f64>;
pub type DistanceResult = geometry::DistanceResult<f64>;

pub use scene::{Configuration, Scene};
