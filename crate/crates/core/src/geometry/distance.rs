//! Signed distance between convex shapes.
//!
//! Shapes are reduced to a core (point or polygon) plus a rounding radius.
//! Separated cores are handled with GJK on the Minkowski difference
//! `B ⊖ A`; overlapping cores fall through to EPA, which expands the GJK
//! simplex until it reaches the difference boundary and yields the
//! minimum-translation direction.

use super::shape::PlacedShape;
use super::{GeometryError, Pose2, Shape, Vec2};
use crate::scalar::Real;

/// Result of a signed-distance query between shapes `a` and `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceResult<T> {
    /// Separation distance; negative values are penetration depth.
    pub distance: T,
    pub witness_a: Vec2<T>,
    pub witness_b: Vec2<T>,
    /// Unit vector pointing from `a` towards `b`. Translating `b` along it
    /// increases the distance.
    pub normal: Vec2<T>,
}

impl<T: Real> DistanceResult<T> {
    /// Sentinel returned when there is nothing to measure.
    pub fn infinite() -> Self {
        Self {
            distance: T::infinity(),
            witness_a: Vec2::zero(),
            witness_b: Vec2::zero(),
            normal: Vec2::new(T::one(), T::zero()),
        }
    }

    pub fn swapped(self) -> Self {
        Self {
            distance: self.distance,
            witness_a: self.witness_b,
            witness_b: self.witness_a,
            normal: -self.normal,
        }
    }
}

/// Signed distance between two posed shapes.
pub fn signed_distance<T: Real>(
    shape_a: &Shape<T>,
    pose_a: &Pose2<T>,
    shape_b: &Shape<T>,
    pose_b: &Pose2<T>,
) -> Result<DistanceResult<T>, GeometryError> {
    shape_a.validate()?;
    shape_b.validate()?;
    Ok(placed_distance(
        &PlacedShape::new(shape_a, pose_a),
        &PlacedShape::new(shape_b, pose_b),
    ))
}

/// Signed distance from a posed shape to a world point (`witness_b` is the point).
pub fn point_distance<T: Real>(shape: &Shape<T>, pose: &Pose2<T>, point: Vec2<T>) -> DistanceResult<T> {
    placed_distance(&PlacedShape::new(shape, pose), &PlacedShape::point(point))
}

#[derive(Debug, Clone, Copy)]
struct Support<T> {
    w: Vec2<T>,
    a: Vec2<T>,
    b: Vec2<T>,
}

fn support<T: Real>(a: &PlacedShape<T>, b: &PlacedShape<T>, dir: Vec2<T>) -> Support<T> {
    let pa = a.support(-dir);
    let pb = b.support(dir);
    Support { w: pb - pa, a: pa, b: pb }
}

pub(crate) fn placed_distance<T: Real>(a: &PlacedShape<T>, b: &PlacedShape<T>) -> DistanceResult<T> {
    let rsum = a.radius + b.radius;
    if a.core.len() == 1 && b.core.len() == 1 {
        let pa = a.core[0];
        let pb = b.core[0];
        let v = pb - pa;
        let d = v.norm();
        let n = v.normalized().unwrap_or(Vec2::new(T::one(), T::zero()));
        return DistanceResult {
            distance: d - rsum,
            witness_a: pa + n * a.radius,
            witness_b: pb - n * b.radius,
            normal: n,
        };
    }
    let (pa, pb, normal, core_dist) = match gjk(a, b) {
        Gjk::Separated { pa, pb, dist } => ((pa), (pb), (pb - pa) * (T::one() / dist), dist),
        Gjk::Overlap(simplex) => {
            let (pa, pb, normal, depth) = epa(a, b, simplex);
            (pa, pb, normal, -depth)
        }
    };
    DistanceResult {
        distance: core_dist - rsum,
        witness_a: pa + normal * a.radius,
        witness_b: pb - normal * b.radius,
        normal,
    }
}

enum Gjk<T> {
    Separated { pa: Vec2<T>, pb: Vec2<T>, dist: T },
    Overlap(Vec<Support<T>>),
}

fn scale_of<T: Real>(a: &PlacedShape<T>, b: &PlacedShape<T>) -> T {
    let mut s = T::one();
    for p in a.core.iter().chain(b.core.iter()) {
        s = s.max(p.x.abs()).max(p.y.abs());
    }
    s
}

fn gjk<T: Real>(a: &PlacedShape<T>, b: &PlacedShape<T>) -> Gjk<T> {
    let eps = T::geom_eps() * scale_of(a, b);
    let mut dir = b.centroid() - a.centroid();
    if dir.norm_sq() <= T::zero() {
        dir = Vec2::new(T::one(), T::zero());
    }
    let mut simplex = vec![support(a, b, dir)];
    let mut bary = vec![T::one()];
    let mut v = simplex[0].w;
    for _ in 0..96 {
        let vv = v.norm_sq();
        if vv <= eps * eps {
            return Gjk::Overlap(simplex);
        }
        let w = support(a, b, -v);
        // v·v − v·w bounds the gap between the current and optimal distance.
        let gap = vv - v.dot(w.w);
        let duplicate = simplex.iter().any(|s| (s.w - w.w).norm_sq() <= eps * eps);
        if gap <= T::geom_eps() * vv || duplicate {
            break;
        }
        simplex.push(w);
        match reduce(&simplex) {
            Reduced::Inside => return Gjk::Overlap(simplex),
            Reduced::Closest { keep, weights, point } => {
                simplex = keep.iter().map(|&i| simplex[i]).collect();
                bary = weights;
                v = point;
            }
        }
    }
    let mut pa = Vec2::zero();
    let mut pb = Vec2::zero();
    for (s, &l) in simplex.iter().zip(bary.iter()) {
        pa += s.a * l;
        pb += s.b * l;
    }
    let dist = v.norm();
    if dist <= eps {
        return Gjk::Overlap(simplex);
    }
    Gjk::Separated { pa, pb, dist }
}

enum Reduced<T> {
    Inside,
    Closest {
        keep: Vec<usize>,
        weights: Vec<T>,
        point: Vec2<T>,
    },
}

fn segment_closest<T: Real>(p: Vec2<T>, q: Vec2<T>) -> (T, Vec2<T>) {
    let e = q - p;
    let ee = e.norm_sq();
    if ee <= T::zero() {
        return (T::zero(), p);
    }
    let t = (-p.dot(e) / ee).max(T::zero()).min(T::one());
    (t, p + e * t)
}

fn reduce<T: Real>(s: &[Support<T>]) -> Reduced<T> {
    match s.len() {
        1 => Reduced::Closest {
            keep: vec![0],
            weights: vec![T::one()],
            point: s[0].w,
        },
        2 => {
            let (t, p) = segment_closest(s[0].w, s[1].w);
            if t <= T::zero() {
                Reduced::Closest { keep: vec![0], weights: vec![T::one()], point: s[0].w }
            } else if t >= T::one() {
                Reduced::Closest { keep: vec![1], weights: vec![T::one()], point: s[1].w }
            } else {
                Reduced::Closest {
                    keep: vec![0, 1],
                    weights: vec![T::one() - t, t],
                    point: p,
                }
            }
        }
        _ => {
            let (p0, p1, p2) = (s[0].w, s[1].w, s[2].w);
            let area = (p1 - p0).cross(p2 - p0);
            if area.abs() > T::geom_eps() * (p1 - p0).norm().max(T::geom_eps()) * (p2 - p0).norm() {
                let sign = area.signum();
                let c0 = (p1 - p0).cross(-p0) * sign;
                let c1 = (p2 - p1).cross(-p1) * sign;
                let c2 = (p0 - p2).cross(-p2) * sign;
                if c0 >= T::zero() && c1 >= T::zero() && c2 >= T::zero() {
                    return Reduced::Inside;
                }
            }
            let mut best: Option<(T, Vec<usize>, Vec<T>, Vec2<T>)> = None;
            for (i, j) in [(0usize, 1usize), (1, 2), (2, 0)] {
                let (t, p) = segment_closest(s[i].w, s[j].w);
                let n = p.norm_sq();
                let (keep, weights) = if t <= T::zero() {
                    (vec![i], vec![T::one()])
                } else if t >= T::one() {
                    (vec![j], vec![T::one()])
                } else {
                    (vec![i, j], vec![T::one() - t, t])
                };
                if best.as_ref().map_or(true, |b| n < b.0) {
                    best = Some((n, keep, weights, p));
                }
            }
            let (_, keep, weights, point) = best.expect("triangle has edges");
            Reduced::Closest { keep, weights, point }
        }
    }
}

/// Expanding-polytope refinement of the penetration depth.
///
/// Returns `(witness_a, witness_b, normal_a_to_b, depth)`.
fn epa<T: Real>(
    a: &PlacedShape<T>,
    b: &PlacedShape<T>,
    simplex: Vec<Support<T>>,
) -> (Vec2<T>, Vec2<T>, Vec2<T>, T) {
    let scale = scale_of(a, b);
    let tol = T::geom_eps() * scale * T::lit(10.0);
    let mut poly = if simplex.len() == 3 {
        simplex
    } else {
        seed_polytope(a, b)
    };
    // Counter-clockwise orientation.
    let n = poly.len();
    let mut area = T::zero();
    for i in 0..n {
        area += poly[i].w.cross(poly[(i + 1) % n].w);
    }
    if area < T::zero() {
        poly.reverse();
    }
    let mut last = None;
    for _ in 0..128 {
        let n = poly.len();
        let mut best_i = 0;
        let mut best_d = T::infinity();
        let mut best_n = Vec2::new(T::one(), T::zero());
        for i in 0..n {
            let p = poly[i].w;
            let q = poly[(i + 1) % n].w;
            let e = q - p;
            let Some(nrm) = Vec2::new(e.y, -e.x).normalized() else {
                continue;
            };
            let d = nrm.dot(p);
            if d < best_d {
                best_d = d;
                best_i = i;
                best_n = nrm;
            }
        }
        last = Some((best_i, best_n, best_d));
        let s = support(a, b, best_n);
        if best_n.dot(s.w) - best_d <= tol
            || poly.iter().any(|p| (p.w - s.w).norm_sq() <= tol * tol)
        {
            break;
        }
        poly.insert(best_i + 1, s);
    }
    let (i, n_out, depth) = last.expect("polytope has edges");
    let p = poly[i];
    let q = poly[(i + 1) % poly.len()];
    let (t, _) = segment_closest(p.w, q.w);
    let pa = p.a.lerp(q.a, t);
    let pb = p.b.lerp(q.b, t);
    (pa, pb, -n_out, depth.max(T::zero()))
}

/// Polytope from support points in evenly spread directions, used when GJK
/// terminated on a degenerate simplex (touching cores).
fn seed_polytope<T: Real>(a: &PlacedShape<T>, b: &PlacedShape<T>) -> Vec<Support<T>> {
    let mut pts: Vec<Support<T>> = Vec::new();
    for k in 0..16 {
        let ang = T::TAU() * T::lit(k as f64 / 16.0);
        let s = support(a, b, Vec2::from_angle(ang));
        if !pts.iter().any(|p| (p.w - s.w).norm_sq() <= T::geom_eps() * T::geom_eps()) {
            pts.push(s);
        }
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;

    type V = Vec2<f64>;
    type P = Pose2<f64>;

    #[test]
    fn circles_separated() {
        let c = Shape::circle(1.0);
        let r = signed_distance(&c, &P::identity(), &c, &P::new(3.0, 0.0, 0.0)).unwrap();
        assert!((r.distance - 1.0).abs() < 1e-15);
        assert!((r.normal - V::new(1.0, 0.0)).norm() < 1e-15);
        assert!((r.witness_a - V::new(1.0, 0.0)).norm() < 1e-15);
        assert!((r.witness_b - V::new(2.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn circles_penetrating() {
        let c = Shape::circle(1.0);
        let r = signed_distance(&c, &P::identity(), &c, &P::new(1.0, 0.0, 0.0)).unwrap();
        assert!((r.distance + 1.0).abs() < 1e-15);
    }

    #[test]
    fn box_and_circle() {
        let r = signed_distance(
            &Shape::rect(0.5, 0.5),
            &P::identity(),
            &Shape::circle(0.25),
            &P::new(2.0, 0.0, 0.0),
        )
        .unwrap();
        assert!((r.distance - 1.25).abs() < 1e-12, "{r:?}");
        assert!((r.normal - V::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rotated_boxes_vertex_to_face() {
        // Diamond tip at x = 1 + sqrt(2)/2 * 2 ... hand computed: unit box
        // rotated 45° has its vertex sqrt(0.5) from centre.
        let b = Shape::rect(0.5, 0.5);
        let r = signed_distance(
            &b,
            &P::new(0.0, 0.0, std::f64::consts::FRAC_PI_4),
            &b,
            &P::new(2.0, 0.3, 0.0),
        )
        .unwrap();
        let expected = 2.0 - 0.5 - 0.5f64.sqrt();
        assert!((r.distance - expected).abs() < 1e-12, "{r:?}");
    }

    #[test]
    fn overlapping_boxes_use_minimum_translation() {
        let b = Shape::rect(1.0, 1.0);
        let r = signed_distance(&b, &P::identity(), &b, &P::new(1.5, 0.2, 0.0)).unwrap();
        assert!((r.distance + 0.5).abs() < 1e-12, "{r:?}");
        assert!((r.normal - V::new(1.0, 0.0)).norm() < 1e-12);
        assert!(((r.witness_a - r.witness_b).norm() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn circle_inside_box() {
        let r = signed_distance(
            &Shape::rect(1.0, 1.0),
            &P::identity(),
            &Shape::circle(0.1),
            &P::new(0.7, 0.0, 0.0),
        )
        .unwrap();
        assert!((r.distance + 0.4).abs() < 1e-12, "{r:?}");
        assert!((r.normal - V::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn touching_boxes() {
        let b = Shape::rect(0.5, 0.5);
        let r = signed_distance(&b, &P::identity(), &b, &P::new(1.0, 0.0, 0.0)).unwrap();
        assert!(r.distance.abs() < 1e-12, "{r:?}");
        assert!((r.normal.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_polygon_is_rejected() {
        let flat = Shape::polygon(vec![V::new(0.0, 0.0), V::new(1.0, 0.0), V::new(0.5, 0.0)]);
        let err = signed_distance(&flat, &P::identity(), &Shape::circle(1.0), &P::identity());
        assert!(matches!(err, Err(GeometryError::InvalidShape(_))));
    }

    #[test]
    fn point_query() {
        let r = point_distance(&Shape::rect(0.5, 0.5), &P::identity(), V::new(0.0, 2.0));
        assert!((r.distance - 1.5).abs() < 1e-12);
        assert!((r.witness_b - V::new(0.0, 2.0)).norm() < 1e-15);
    }

    #[test]
    fn works_in_f32() {
        let r = signed_distance(
            &Shape::<f32>::rect(0.5, 0.5),
            &Pose2::identity(),
            &Shape::circle(0.25),
            &Pose2::new(2.0, 0.0, 0.0),
        )
        .unwrap();
        assert!((r.distance - 1.25).abs() < 1e-5);
    }
}
