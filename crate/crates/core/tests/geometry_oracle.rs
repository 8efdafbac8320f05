//! Signed distance checked against dense boundary sampling with an
//! independent point-to-shape routine.

use hmap_core::geometry::{sample_boundary_point, signed_distance, Pose2, Shape, Vec2};
use proptest::prelude::*;

type V = Vec2<f64>;
type P = Pose2<f64>;

fn world_outline(shape: &Shape<f64>, pose: &P) -> Vec<V> {
    match shape {
        Shape::Circle { .. } => vec![],
        Shape::Box { half_extents: h } => [(h.x, h.y), (-h.x, h.y), (-h.x, -h.y), (h.x, -h.y)]
            .iter()
            .map(|&(x, y)| pose.transform_point(V::new(x, y)))
            .collect(),
        Shape::Polygon { vertices } => vertices.iter().map(|&v| pose.transform_point(v)).collect(),
    }
}

/// Independent distance from a world point to a posed shape (negative inside).
fn oracle_point(shape: &Shape<f64>, pose: &P, p: V) -> f64 {
    if let Shape::Circle { radius } = shape {
        return ((p.x - pose.x).powi(2) + (p.y - pose.y).powi(2)).sqrt() - radius;
    }
    let poly = world_outline(shape, pose);
    // Orientation-agnostic: inside iff all cross products share a sign.
    let n = poly.len();
    let mut min_d = f64::INFINITY;
    let (mut pos, mut neg) = (false, false);
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let ab = (b.x - a.x, b.y - a.y);
        let ap = (p.x - a.x, p.y - a.y);
        let len2 = ab.0 * ab.0 + ab.1 * ab.1;
        let t = ((ap.0 * ab.0 + ap.1 * ab.1) / len2).clamp(0.0, 1.0);
        let dx = a.x + t * ab.0 - p.x;
        let dy = a.y + t * ab.1 - p.y;
        min_d = min_d.min((dx * dx + dy * dy).sqrt());
        let c = ab.0 * ap.1 - ab.1 * ap.0;
        if c > 0.0 {
            pos = true;
        }
        if c < 0.0 {
            neg = true;
        }
    }
    if pos && neg {
        min_d
    } else {
        -min_d
    }
}

fn oracle_distance(a: &Shape<f64>, pa: &P, b: &Shape<f64>, pb: &P, samples: usize) -> f64 {
    (0..samples)
        .map(|k| {
            let u = k as f64 / samples as f64;
            let p = pa.transform_point(sample_boundary_point(a, u));
            oracle_point(b, pb, p)
        })
        .fold(f64::INFINITY, f64::min)
}

fn shape() -> impl Strategy<Value = Shape<f64>> {
    prop_oneof![
        (0.05..1.0f64).prop_map(Shape::circle),
        (0.05..1.0f64, 0.05..1.0f64).prop_map(|(x, y)| Shape::rect(x, y)),
        (prop::collection::vec(0.0..1.0f64, 3..8), 0.1..1.0f64).prop_map(|(angles, r)| {
            // Points on a circle, sorted by angle, form a convex CCW polygon.
            let mut a: Vec<f64> = angles
                .iter()
                .enumerate()
                .map(|(i, t)| (i as f64 + 0.8 * t) * std::f64::consts::TAU / angles.len() as f64)
                .collect();
            a.sort_by(|x, y| x.partial_cmp(y).unwrap());
            Shape::polygon(a.iter().map(|t| V::new(r * t.cos(), r * t.sin())).collect())
        }),
    ]
}

fn pose() -> impl Strategy<Value = P> {
    (-3.0..3.0f64, -3.0..3.0f64, -4.0..4.0f64).prop_map(|(x, y, t)| P::new(x, y, t))
}

#[test]
fn box_circle_example_matches_sampling_oracle() {
    let b = Shape::rect(0.5, 0.5);
    let c = Shape::circle(0.25);
    let pc = P::new(2.0, 0.0, 0.0);
    let oracle = oracle_distance(&b, &P::identity(), &c, &pc, 10_000);
    assert!((oracle - 1.25).abs() < 1e-3);
    let r = signed_distance(&b, &P::identity(), &c, &pc).unwrap();
    assert!((r.distance - oracle).abs() < 1e-3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn agrees_with_sampling_oracle(a in shape(), pa in pose(), b in shape(), pb in pose()) {
        let r = signed_distance(&a, &pa, &b, &pb).unwrap();
        prop_assert!((r.normal.norm() - 1.0).abs() < 1e-9);
        if r.distance >= 0.0 {
            let oracle = oracle_distance(&a, &pa, &b, &pb, 10_000);
            prop_assert!((r.distance - oracle).abs() < 1e-3, "gjk {} oracle {}", r.distance, oracle);
            prop_assert!(((r.witness_a - r.witness_b).norm() - r.distance).abs() < 1e-9);
            // Witness points sit on their respective boundaries.
            prop_assert!(oracle_point(&a, &pa, r.witness_a).abs() < 1e-9);
            prop_assert!(oracle_point(&b, &pb, r.witness_b).abs() < 1e-9);
        } else {
            // Penetration: translating b along the normal by the depth separates the pair.
            let depth = -r.distance;
            let moved = P::new(pb.x + r.normal.x * depth, pb.y + r.normal.y * depth, pb.theta);
            let after = signed_distance(&a, &pa, &b, &moved).unwrap();
            prop_assert!(after.distance.abs() < 1e-7, "after {}", after.distance);
        }
    }

    #[test]
    fn symmetric_under_swap(a in shape(), pa in pose(), b in shape(), pb in pose()) {
        let ab = signed_distance(&a, &pa, &b, &pb).unwrap();
        let ba = signed_distance(&b, &pb, &a, &pa).unwrap();
        prop_assert!((ab.distance - ba.distance).abs() < 1e-9, "{} vs {}", ab.distance, ba.distance);
        if ab.distance.abs() > 1e-6 {
            prop_assert!((ab.normal + ba.normal).norm() < 1e-6, "{:?} {:?}", ab.normal, ba.normal);
        }
    }

    #[test]
    fn boundary_samples_are_on_boundary(s in shape(), p in pose()) {
        for k in 0..10_000 {
            let u = k as f64 / 10_000.0;
            let w = p.transform_point(sample_boundary_point(&s, u));
            prop_assert!(oracle_point(&s, &p, w).abs() <= 1e-9);
        }
    }
}
