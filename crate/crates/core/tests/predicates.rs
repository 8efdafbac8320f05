mod common;

use hmap_core::geometry::signed_distance;
use hmap_core::optimizer::FeatureKind;
use hmap_core::predicates::{compile, pose_eq_residual, touch_residual, CompileOptions, PredicateError, Skeleton};
use hmap_core::scene::{Frame, FrameKind};
use hmap_core::{Pose2, Shape};
use proptest::prelude::*;

fn count(p: &hmap_core::optimizer::TrajectoryProblem, name: &str) -> Vec<usize> {
    p.problem
        .features
        .iter()
        .filter(|f| f.name() == name)
        .map(|f| f.time_index())
        .collect()
}

#[test]
fn single_touch_compiles_as_counted() {
    let scene = common::three_link(vec![Frame::new("obj", FrameKind::Movable)
        .at(Pose2::new(0.9, 0.3, 0.0))
        .with_shape(Shape::circle(0.1))]);
    let init = scene.initial_configuration();
    let sk = Skeleton::parse("(touch ee obj)").unwrap();
    let p = compile(&sk, &scene, &init, &CompileOptions::default()).unwrap();
    assert_eq!(p.horizon(), 10);
    assert_eq!(count(&p, "touch(ee,obj)"), vec![10]);
    assert_eq!(count(&p, "collision").len(), 11);
    assert_eq!(count(&p, "acceleration"), (2..=10).collect::<Vec<_>>());
    assert!(p.switches.is_empty());
    let eq = p.problem.features.iter().filter(|f| f.kind() == FeatureKind::Eq).count();
    assert_eq!(eq, 1);
}

#[test]
fn three_line_skeleton_has_two_phases_and_one_switch() {
    let scene = common::three_link(vec![common::movable_box("obj", Pose2::new(0.9, 0.3, 0.0), 0.05, 0.05)]);
    let init = scene.initial_configuration();
    let sk = Skeleton::parse("(touch ee obj)\n(stable ee obj)\n(poseEq obj 0.5 0.5 0.0)\n").unwrap();
    assert_eq!(sk.num_phases(), 2);
    let p = compile(&sk, &scene, &init, &CompileOptions::default()).unwrap();
    assert_eq!(p.switches.len(), 1);
    assert_eq!(p.switches[0].time_index, 10);
    assert_eq!(count(&p, "poseEq(obj)"), vec![20]);
    assert_eq!(count(&p, "stable(ee,obj)"), (11..=20).collect::<Vec<_>>());
    // Feature count is a pure function of the inputs.
    let again = compile(&sk, &scene, &init, &CompileOptions::default()).unwrap();
    let names = |p: &hmap_core::optimizer::TrajectoryProblem| {
        p.problem
            .features
            .iter()
            .map(|f| (f.name().to_string(), f.time_index(), f.dim()))
            .collect::<Vec<_>>()
    };
    assert_eq!(names(&p), names(&again));
}

#[test]
fn malformed_and_unknown() {
    assert!(matches!(Skeleton::parse("touch ee obj"), Err(PredicateError::Malformed(_))));
    assert!(matches!(Skeleton::parse("(lift ee obj)"), Err(PredicateError::Malformed(_))));
    assert!(matches!(Skeleton::parse("(poseEq obj 1 x 0)"), Err(PredicateError::Malformed(_))));
    let scene = common::three_link(vec![]);
    let init = scene.initial_configuration();
    let sk = Skeleton::parse("(touch ee ghost)").unwrap();
    assert!(matches!(
        compile(&sk, &scene, &init, &CompileOptions::default()),
        Err(PredicateError::Scene(_))
    ));
}

#[test]
fn touch_residual_examples() {
    let scene = common::three_link(vec![
        Frame::new("ball", FrameKind::Movable)
            .at(Pose2::new(1.2 + common::EE_RADIUS + 0.1, 0.0, 0.0))
            .with_shape(Shape::circle(0.1)),
        Frame::new("far", FrameKind::Movable)
            .at(Pose2::new(1.2 + common::EE_RADIUS + 1.0 + 0.1, 0.0, 0.0))
            .with_shape(Shape::circle(0.1)),
    ]);
    let c = scene.initial_configuration();
    assert!(touch_residual(&scene, &c, "ee", "ball").unwrap().abs() < 1e-9);
    assert!((touch_residual(&scene, &c, "ee", "far").unwrap() - 1.0).abs() < 1e-9);
    let bare = common::three_link(vec![Frame::new("marker", FrameKind::Movable)]);
    assert!(matches!(
        touch_residual(&bare, &bare.initial_configuration(), "ee", "marker"),
        Err(PredicateError::Shapeless(_))
    ));
}

#[test]
fn pose_eq_examples() {
    let scene = common::three_link(vec![common::movable_box("obj", Pose2::new(0.3, 0.2, 0.0), 0.05, 0.05)]);
    let mut c = scene.initial_configuration();
    assert_eq!(pose_eq_residual(&scene, &c, "obj", &Pose2::new(0.3, 0.2, 0.0)).unwrap(), [0.0; 3]);
    c.object_poses.insert("obj".into(), Pose2::new(0.0, 0.0, std::f64::consts::PI - 0.1));
    let r = pose_eq_residual(&scene, &c, "obj", &Pose2::new(0.0, 0.0, -std::f64::consts::PI + 0.1)).unwrap();
    assert!((r[2] + 0.2).abs() < 1e-12, "{r:?}");
    assert!(matches!(
        pose_eq_residual(&scene, &c, "l1", &Pose2::identity()),
        Err(PredicateError::NotMovable(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn touch_residual_delegates_to_signed_distance(
        q in prop::collection::vec(-2.5..2.5f64, 3),
        x in -1.5..1.5f64, y in -1.5..1.5f64, th in -3.0..3.0f64,
    ) {
        let scene = common::three_link(vec![common::movable_box("obj", Pose2::new(0.0, 0.0, 0.0), 0.1, 0.05)]);
        let mut c = scene.initial_configuration();
        c.q = q;
        let pose = Pose2::new(x, y, th);
        c.object_poses.insert("obj".into(), pose);
        let ee = scene.forward_kinematics(&c, "ee").unwrap();
        let expect = signed_distance(&Shape::circle(common::EE_RADIUS), &ee, &Shape::rect(0.1, 0.05), &pose).unwrap();
        let got = touch_residual(&scene, &c, "ee", "obj").unwrap();
        prop_assert!((got - expect.distance).abs() < 1e-12);
    }

    #[test]
    fn touch_residual_is_lipschitz(
        q in prop::collection::vec(-2.5..2.5f64, 3),
        dq in prop::collection::vec(-1e-4..1e-4f64, 3),
    ) {
        let scene = common::three_link(vec![common::movable_box("obj", Pose2::new(0.6, 0.5, 0.4), 0.1, 0.05)]);
        let mut a = scene.initial_configuration();
        a.q = q.clone();
        let mut b = a.clone();
        for (v, d) in b.q.iter_mut().zip(&dq) {
            *v += d;
        }
        // The end-effector moves at most (sum of link lengths) per radian.
        let bound = 1.2 * dq.iter().map(|d| d.abs()).sum::<f64>() + 1e-12;
        let ra = touch_residual(&scene, &a, "ee", "obj").unwrap();
        let rb = touch_residual(&scene, &b, "ee", "obj").unwrap();
        prop_assert!((ra - rb).abs() <= bound, "{} vs {} bound {}", ra, rb, bound);
    }

    #[test]
    fn pose_eq_matches_brute_force_wrap(
        a in (-3.0..3.0f64, -3.0..3.0f64, -10.0..10.0f64),
        b in (-3.0..3.0f64, -3.0..3.0f64, -10.0..10.0f64),
    ) {
        let scene = common::three_link(vec![common::movable_box("obj", Pose2::identity(), 0.05, 0.05)]);
        let mut c = scene.initial_configuration();
        c.object_poses.insert("obj".into(), Pose2::new(a.0, a.1, a.2));
        let r = pose_eq_residual(&scene, &c, "obj", &Pose2::new(b.0, b.1, b.2)).unwrap();
        // Smallest-magnitude representative among 2πk shifts.
        let raw = a.2 - b.2;
        let brute = (-4..=4)
            .map(|k| raw + k as f64 * std::f64::consts::TAU)
            .min_by(|x, y| x.abs().total_cmp(&y.abs()))
            .unwrap();
        prop_assert!((r[0] - (a.0 - b.0)).abs() < 1e-12);
        prop_assert!((r[1] - (a.1 - b.1)).abs() < 1e-12);
        prop_assert!((r[2].abs() - brute.abs()).abs() < 1e-9);
    }
}
