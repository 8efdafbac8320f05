use super::{GeometryError, Pose2, Vec2};
use crate::scalar::Real;

/// Convex planar shape expressed in its own frame.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape<T> {
    Circle { radius: T },
    Box { half_extents: Vec2<T> },
    /// Counter-clockwise vertices of a convex polygon.
    Polygon { vertices: Vec<Vec2<T>> },
}

impl<T: Real> Shape<T> {
    pub fn circle(radius: T) -> Self {
        Shape::Circle { radius }
    }

    pub fn rect(hx: T, hy: T) -> Self {
        Shape::Box {
            half_extents: Vec2::new(hx, hy),
        }
    }

    pub fn polygon(vertices: Vec<Vec2<T>>) -> Self {
        Shape::Polygon { vertices }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        match self {
            Shape::Circle { radius } => {
                if !(*radius > T::zero() && radius.is_finite()) {
                    return Err(GeometryError::InvalidShape("circle radius must be positive".into()));
                }
            }
            Shape::Box { half_extents } => {
                if !(half_extents.x > T::zero() && half_extents.y > T::zero() && half_extents.is_finite())
                {
                    return Err(GeometryError::InvalidShape("box half-extents must be positive".into()));
                }
            }
            Shape::Polygon { vertices } => {
                let n = vertices.len();
                if n < 3 {
                    return Err(GeometryError::InvalidShape(format!(
                        "polygon needs at least 3 vertices, got {n}"
                    )));
                }
                if vertices.iter().any(|v| !v.is_finite()) {
                    return Err(GeometryError::InvalidShape("non-finite polygon vertex".into()));
                }
                for i in 0..n {
                    let a = vertices[i];
                    let b = vertices[(i + 1) % n];
                    let c = vertices[(i + 2) % n];
                    if (b - a).cross(c - b) < T::zero() {
                        return Err(GeometryError::InvalidShape(
                            "polygon must be convex with counter-clockwise vertices".into(),
                        ));
                    }
                }
                if polygon_area(vertices) <= T::geom_eps() {
                    return Err(GeometryError::InvalidShape("polygon has zero area".into()));
                }
            }
        }
        Ok(())
    }

    /// Polygon outline in the shape frame; `None` for circles.
    ///
    /// Boxes start at the lower-right corner so that, after the arc-length
    /// offset applied by [`Shape::boundary_point`], `u = 0` lands on `(hx, 0)`.
    pub fn local_vertices(&self) -> Option<Vec<Vec2<T>>> {
        match self {
            Shape::Circle { .. } => None,
            Shape::Box { half_extents: h } => Some(vec![
                Vec2::new(h.x, -h.y),
                Vec2::new(h.x, h.y),
                Vec2::new(-h.x, h.y),
                Vec2::new(-h.x, -h.y),
            ]),
            Shape::Polygon { vertices } => Some(vertices.clone()),
        }
    }

    pub fn perimeter(&self) -> T {
        match self {
            Shape::Circle { radius } => T::TAU() * *radius,
            _ => {
                let v = self.local_vertices().unwrap_or_default();
                polygon_perimeter(&v)
            }
        }
    }

    /// Largest distance from the frame origin to the boundary.
    pub fn circumscribed_radius(&self) -> T {
        match self {
            Shape::Circle { radius } => *radius,
            _ => self
                .local_vertices()
                .unwrap_or_default()
                .iter()
                .map(|v| v.norm())
                .fold(T::zero(), T::max),
        }
    }

    /// Arc-length parameterization of the boundary, counter-clockwise.
    ///
    /// Circles and boxes start at `(r, 0)` / `(hx, 0)`; general polygons start
    /// at their first vertex.
    pub fn boundary_point(&self, u: T) -> Vec2<T> {
        self.boundary_point_and_normal(u).0
    }

    /// Boundary point with its outward unit normal in the shape frame.
    pub fn boundary_point_and_normal(&self, u: T) -> (Vec2<T>, Vec2<T>) {
        let u = frac(u);
        match self {
            Shape::Circle { radius } => {
                let n = Vec2::from_angle(T::TAU() * u);
                (n * *radius, n)
            }
            _ => {
                let verts = self.local_vertices().unwrap_or_default();
                let per = polygon_perimeter(&verts);
                let mut s = u * per + self.arc_offset();
                if s >= per {
                    s -= per;
                }
                walk_perimeter(&verts, s)
            }
        }
    }

    fn arc_offset(&self) -> T {
        match self {
            Shape::Box { half_extents } => half_extents.y,
            _ => T::zero(),
        }
    }

    /// Boundary parameter of the point hit by a ray from the frame origin at
    /// `angle` (shape frame). Assumes the origin is interior.
    pub fn boundary_param_at_angle(&self, angle: T) -> T {
        match self {
            Shape::Circle { .. } => frac(angle / T::TAU()),
            _ => {
                let verts = self.local_vertices().unwrap_or_default();
                let n = verts.len();
                let dir = Vec2::from_angle(angle);
                let per = polygon_perimeter(&verts);
                let mut acc = T::zero();
                for i in 0..n {
                    let a = verts[i];
                    let b = verts[(i + 1) % n];
                    let e = b - a;
                    let len = e.norm();
                    // Solve a + s e = r dir.
                    let denom = dir.cross(e);
                    if denom.abs() > T::geom_eps() {
                        let s = a.cross(dir) / denom;
                        let r = a.cross(e) / denom;
                        if s >= T::zero() && s <= T::one() && r > T::zero() {
                            let arc = acc + s * len - self.arc_offset();
                            let arc = if arc < T::zero() { arc + per } else { arc };
                            return frac(arc / per);
                        }
                    }
                    acc += len;
                }
                T::zero()
            }
        }
    }

    /// Signed distance from a local point to the boundary (negative inside).
    pub fn local_signed_distance(&self, p: Vec2<T>) -> T {
        match self {
            Shape::Circle { radius } => p.norm() - *radius,
            _ => {
                let verts = self.local_vertices().unwrap_or_default();
                polygon_point_signed_distance(&verts, p)
            }
        }
    }
}

fn frac<T: Real>(u: T) -> T {
    let f = u - u.floor();
    if f >= T::one() {
        T::zero()
    } else {
        f
    }
}

pub(crate) fn polygon_area<T: Real>(v: &[Vec2<T>]) -> T {
    let n = v.len();
    let mut a = T::zero();
    for i in 0..n {
        a += v[i].cross(v[(i + 1) % n]);
    }
    a * T::lit(0.5)
}

fn polygon_perimeter<T: Real>(v: &[Vec2<T>]) -> T {
    let n = v.len();
    (0..n).map(|i| (v[(i + 1) % n] - v[i]).norm()).fold(T::zero(), |a, b| a + b)
}

fn walk_perimeter<T: Real>(v: &[Vec2<T>], mut s: T) -> (Vec2<T>, Vec2<T>) {
    let n = v.len();
    for i in 0..n {
        let a = v[i];
        let b = v[(i + 1) % n];
        let e = b - a;
        let len = e.norm();
        if s < len || i == n - 1 {
            let t = if len > T::zero() { (s / len).min(T::one()) } else { T::zero() };
            let normal = Vec2::new(e.y, -e.x).normalized().unwrap_or(Vec2::new(T::one(), T::zero()));
            return (a + e * t, normal);
        }
        s -= len;
    }
    unreachable!("polygon has at least one edge")
}

/// Signed distance from `p` to a convex CCW polygon boundary.
pub(crate) fn polygon_point_signed_distance<T: Real>(v: &[Vec2<T>], p: Vec2<T>) -> T {
    let n = v.len();
    let mut inside = true;
    let mut best = T::infinity();
    let mut max_edge = -T::infinity();
    for i in 0..n {
        let a = v[i];
        let b = v[(i + 1) % n];
        let e = b - a;
        let len_sq = e.norm_sq();
        let t = ((p - a).dot(e) / len_sq).max(T::zero()).min(T::one());
        best = best.min((a + e * t - p).norm());
        // Outward edge normal is (e.y, -e.x) for CCW order.
        let side = (p - a).dot(Vec2::new(e.y, -e.x)) / len_sq.sqrt();
        if side > T::zero() {
            inside = false;
        }
        max_edge = max_edge.max(side);
    }
    if inside {
        max_edge
    } else {
        best
    }
}

/// Shape placed in the world, reduced to a core (point or polygon) plus a
/// rounding radius. Circles become a point core with their radius.
#[derive(Debug, Clone)]
pub(crate) struct PlacedShape<T> {
    pub core: Vec<Vec2<T>>,
    pub radius: T,
}

impl<T: Real> PlacedShape<T> {
    pub fn new(shape: &Shape<T>, pose: &Pose2<T>) -> Self {
        match shape {
            Shape::Circle { radius } => Self {
                core: vec![pose.translation()],
                radius: *radius,
            },
            _ => Self {
                core: shape
                    .local_vertices()
                    .unwrap_or_default()
                    .into_iter()
                    .map(|p| pose.transform_point(p))
                    .collect(),
                radius: T::zero(),
            },
        }
    }

    pub fn point(p: Vec2<T>) -> Self {
        Self {
            core: vec![p],
            radius: T::zero(),
        }
    }

    pub fn support(&self, dir: Vec2<T>) -> Vec2<T> {
        let mut best = self.core[0];
        let mut best_d = best.dot(dir);
        for &p in &self.core[1..] {
            let d = p.dot(dir);
            if d > best_d {
                best = p;
                best_d = d;
            }
        }
        best
    }

    pub fn centroid(&self) -> Vec2<T> {
        let n = T::lit(self.core.len() as f64);
        let mut c = Vec2::zero();
        for &p in &self.core {
            c += p;
        }
        c * (T::one() / n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    type V = Vec2<f64>;

    fn close(a: V, b: V) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn circle_parameterization() {
        let c = Shape::circle(1.0);
        assert!(close(c.boundary_point(0.0), V::new(1.0, 0.0)));
        assert!(close(c.boundary_point(0.25), V::new(0.0, 1.0)));
    }

    #[test]
    fn box_half_perimeter_is_opposite_side() {
        // Perimeter walk oracle: 8 units of boundary starting at (1, 0);
        // 4 units CCW passes (1,1) and (-1,1) and ends at (-1, 0).
        let b = Shape::rect(1.0, 1.0);
        assert!(close(b.boundary_point(0.0), V::new(1.0, 0.0)));
        assert!(close(b.boundary_point(0.5), V::new(-1.0, 0.0)));
        assert!(close(b.boundary_point(0.125), V::new(1.0, 1.0)));
        let (_, n) = b.boundary_point_and_normal(0.5);
        assert!(close(n, V::new(-1.0, 0.0)));
    }

    #[test]
    fn param_at_angle_inverts_sampling() {
        for shape in [Shape::circle(0.3), Shape::rect(0.4, 0.1)] {
            for k in 0..16 {
                let a = -PI + k as f64 * PI / 8.0 + 0.01;
                let u = shape.boundary_param_at_angle(a);
                let p = shape.boundary_point(u);
                assert!((p.angle() - a).abs() < 1e-9, "{shape:?} {a} {u} {p:?}");
            }
        }
    }

    #[test]
    fn validation() {
        assert!(Shape::circle(0.0).validate().is_err());
        assert!(Shape::rect(1.0, -1.0).validate().is_err());
        let degenerate = Shape::polygon(vec![V::new(0.0, 0.0), V::new(1.0, 0.0), V::new(2.0, 0.0)]);
        assert!(matches!(degenerate.validate(), Err(GeometryError::InvalidShape(_))));
        let cw = Shape::polygon(vec![V::new(0.0, 0.0), V::new(0.0, 1.0), V::new(1.0, 0.0)]);
        assert!(cw.validate().is_err());
        let tri = Shape::polygon(vec![V::new(0.0, 0.0), V::new(1.0, 0.0), V::new(0.0, 1.0)]);
        assert!(tri.validate().is_ok());
    }

    #[test]
    fn samples_lie_on_boundary() {
        let shapes = [
            Shape::circle(0.7),
            Shape::rect(0.5, 0.2),
            Shape::polygon(vec![V::new(-1.0, -0.5), V::new(1.0, -0.4), V::new(0.2, 0.9)]),
        ];
        for s in &shapes {
            for k in 0..10_000 {
                let u = k as f64 / 10_000.0;
                let d = s.local_signed_distance(s.boundary_point(u));
                assert!(d.abs() <= 1e-9, "{s:?} u={u} d={d}");
            }
        }
    }
}
