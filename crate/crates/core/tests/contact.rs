mod common;

use std::f64::consts::PI;

use common::{three_link, wall, EE_RADIUS, LINKS};
use hmap_core::contact::{
    check_contact_feasibility, generate_contact_point, ContactError, ContactPoint, ContactSource, ExternalSampler,
    HeuristicSampler, IkOptions, PointCloudSampler, Sampler,
};
use hmap_core::scene::{Frame, FrameKind};
use hmap_core::{Configuration, Pose2, Scene, Shape, Vec2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn disc(id: &str, at: Vec2, r: f64) -> Frame {
    Frame::new(id, FrameKind::Movable)
        .at(Pose2::new(at.x, at.y, 0.0))
        .with_shape(Shape::circle(r))
}

/// Radii of end-effector centers reachable on a 1° grid of the second and
/// third joints, excluding self-colliding configurations. The first joint
/// turns freely, so reachability only depends on the radius.
fn grid_reach_radii(scene: &Scene, margin: f64) -> Vec<f64> {
    let step = 1f64.to_radians();
    let lim = 2.6;
    let n = (lim / step).floor() as i64;
    let mut radii = Vec::new();
    for i in -n..=n {
        for j in -n..=n {
            let (q2, q3) = (i as f64 * step, j as f64 * step);
            // Planar chain with the first joint at zero.
            let a2 = q2;
            let a3 = q2 + q3;
            let x = LINKS[0] + LINKS[1] * a2.cos() + LINKS[2] * a3.cos();
            let y = LINKS[1] * a2.sin() + LINKS[2] * a3.sin();
            let config = Configuration {
                q: vec![0.0, q2, q3],
                object_poses: Default::default(),
            };
            if scene.scene_min_distance(&config, &[]).result.distance < margin {
                continue;
            }
            radii.push(x.hypot(y));
        }
    }
    radii.sort_by(f64::total_cmp);
    radii
}

/// Merges sorted radii into intervals, bridging gaps up to `gap`.
fn intervals(radii: &[f64], gap: f64) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for &r in radii {
        match out.last_mut() {
            Some(last) if r - last.1 <= gap => last.1 = r,
            _ => out.push((r, r)),
        }
    }
    out
}

#[test]
fn ik_verdicts_agree_with_joint_grid_oracle() {
    let scene = three_link(vec![]);
    let opts = IkOptions::default();
    let reach = intervals(&grid_reach_radii(&scene, opts.collision_margin), 0.02);
    // A target is touchable iff some reachable center lies within one
    // end-effector radius of it.
    let touchable: Vec<(f64, f64)> = reach.iter().map(|&(a, b)| ((a - EE_RADIUS).max(0.0), b + EE_RADIUS)).collect();
    let oracle = |rho: f64| touchable.iter().any(|&(a, b)| rho >= a && rho <= b);
    let boundary = |rho: f64| {
        touchable
            .iter()
            .flat_map(|&(a, b)| [a, b])
            .map(|e| (rho - e).abs())
            .fold(f64::INFINITY, f64::min)
    };

    let init = scene.initial_configuration();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut agree = 0;
    let mut far_disagreements = Vec::new();
    for _ in 0..100 {
        let rho = rng.gen_range(0.0..1.45);
        let phi = rng.gen_range(-PI..PI);
        let c = Vec2::new(rho * phi.cos(), rho * phi.sin());
        let verdict = check_contact_feasibility(&scene, &init, "ee", None, c, &opts).unwrap().feasible;
        if verdict == oracle(rho) {
            agree += 1;
        } else if boundary(rho) > 1e-2 {
            far_disagreements.push((rho, verdict));
        }
    }
    assert!(agree >= 98, "agreement {agree}/100, reach {touchable:?}");
    assert!(far_disagreements.is_empty(), "{far_disagreements:?}");
}

#[test]
fn current_surface_point_needs_no_motion() {
    let scene = three_link(vec![]);
    let init = scene.initial_configuration();
    let tip = LINKS.iter().sum::<f64>() + EE_RADIUS;
    let r = check_contact_feasibility(&scene, &init, "ee", None, Vec2::new(tip, 0.0), &IkOptions::default()).unwrap();
    assert!(r.feasible);
    assert!(r.config.q.iter().all(|q| q.abs() < 1e-6), "{:?}", r.config.q);
}

#[test]
fn target_beyond_reach_is_infeasible() {
    let scene = three_link(vec![]);
    let init = scene.initial_configuration();
    let r = check_contact_feasibility(&scene, &init, "ee", None, Vec2::new(0.0, 1.4), &IkOptions::default()).unwrap();
    assert!(!r.feasible);
}

#[test]
fn reachable_disc_yields_contact_on_its_boundary() {
    let scene = three_link(vec![disc("obj", Vec2::new(0.4, 0.7), 0.05)]);
    let init = scene.initial_configuration();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let out = generate_contact_point(
        &scene,
        &init,
        "obj",
        "ee",
        &PointCloudSampler::default(),
        None,
        &mut rng,
        25,
        &IkOptions::default(),
    )
    .unwrap();
    assert!((out.point.local.norm() - 0.05).abs() < 1e-6);
    assert!((out.point.outward_normal.norm() - 1.0).abs() < 1e-12);
    assert_eq!(out.point.source, ContactSource::PointCloud);
    let poses = scene.world_poses_of(&out.ik.config);
    let ee = scene.index_of("ee").unwrap();
    let gap = poses[ee].translation().dist(out.point.world) - EE_RADIUS;
    assert!(gap.abs() < 1e-3, "gap {gap}");
}

#[test]
fn object_out_of_reach_exhausts_attempts() {
    // Farther than the summed link lengths plus both radii.
    let scene = three_link(vec![disc("obj", Vec2::new(1.35, 0.3), 0.05)]);
    let init = scene.initial_configuration();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let err = generate_contact_point(
        &scene,
        &init,
        "obj",
        "ee",
        &PointCloudSampler::default(),
        None,
        &mut rng,
        25,
        &IkOptions::default(),
    )
    .unwrap_err();
    assert_eq!(err, ContactError::Exhausted { attempts: 25 });
}

#[test]
fn half_occluded_disc_is_touched_on_its_exposed_side() {
    // A wall 5 mm behind the disc leaves no room for the end-effector there.
    let (center, r) = (Vec2::new(0.9, 0.0), 0.08);
    let wall_face = center.x + r + 0.005;
    let scene = three_link(vec![
        disc("obj", center, r),
        wall("wall", Pose2::new(wall_face + 0.05, 0.0, 0.0), 0.05, 0.3),
    ]);
    let init = scene.initial_configuration();
    let opts = IkOptions::default();
    let tol = opts.solver.eps_ineq.max(opts.solver.eps_eq);
    // Exposed iff some end-effector center touching the point (within
    // solver tolerance) stays outside the disc and clear of the wall.
    let exposed = |c: Vec2| {
        (0..3600).any(|k| {
            let a = k as f64 * PI / 1800.0;
            [EE_RADIUS - tol, EE_RADIUS, EE_RADIUS + tol].iter().any(|&rr| {
                let e = c + Vec2::from_angle(a) * rr;
                e.dist(center) >= r + EE_RADIUS - tol && e.x + EE_RADIUS <= wall_face - opts.collision_margin + tol
            })
        })
    };
    assert!(!exposed(center + Vec2::new(r, 0.0)));
    assert!(exposed(center - Vec2::new(r, 0.0)));
    let mut accepted = 0;
    for seed in 0..12 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let Ok(out) = generate_contact_point(
            &scene,
            &init,
            "obj",
            "ee",
            &PointCloudSampler::default(),
            None,
            &mut rng,
            25,
            &opts,
        ) else {
            continue;
        };
        accepted += 1;
        assert!(exposed(out.point.world), "seed {seed}: {:?}", out.point);
        // Re-verify the touching configuration.
        let ee_d = scene.pair_distance(
            &scene.world_poses_of(&out.ik.config),
            scene.index_of("ee").unwrap(),
            scene.index_of("obj").unwrap(),
        );
        assert!(ee_d.distance.abs() < 2e-3);
        let clear = scene.scene_min_distance(&out.ik.config, &[("ee".into(), "obj".into()), ("l3".into(), "obj".into())]);
        assert!(clear.result.distance > opts.collision_margin - 2e-3, "{clear:?}");
    }
    assert!(accepted >= 10, "accepted {accepted}");
}

#[test]
fn contact_frames_are_consistent() {
    let scene = Scene::new(
        vec![Frame::new("obj", FrameKind::Movable)
            .at(Pose2::new(0.3, -0.2, 2.0))
            .with_shape_at(Shape::rect(0.1, 0.04), Pose2::new(0.02, 0.01, 0.4))],
        hmap_core::scene::Bounds {
            min: Vec2::new(-1.0, -1.0),
            max: Vec2::new(1.0, 1.0),
        },
        vec![],
    )
    .unwrap();
    let config = scene.initial_configuration();
    let obj = scene.index_of("obj").unwrap();
    let pose = scene.world_poses_of(&config)[obj];
    for k in 0..50 {
        let c = ContactPoint::at_param(&scene, &config, obj, k as f64 / 50.0, ContactSource::External).unwrap();
        let w = pose.transform_point(c.local);
        assert!(w.dist(c.world) < 1e-9);
        // On the boundary, in the object frame.
        let in_shape = Pose2::new(0.02, 0.01, 0.4).inverse().transform_point(c.local);
        let d = Shape::rect(0.1, 0.04).local_signed_distance(in_shape);
        assert!(d.abs() < 1e-6, "u={k}: {d}");
    }
}

fn back_fraction(dir: Vec2, shape: Shape, theta: f64) -> f64 {
    let scene = Scene::new(
        vec![Frame::new("obj", FrameKind::Movable).at(Pose2::new(0.0, 0.0, theta)).with_shape(shape.clone())],
        hmap_core::scene::Bounds {
            min: Vec2::new(-1.0, -1.0),
            max: Vec2::new(1.0, 1.0),
        },
        vec![],
    )
    .unwrap();
    let config = scene.initial_configuration();
    let sampler = HeuristicSampler::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut back = 0;
    for _ in 0..1000 {
        let u = sampler.propose(&scene, &config, 0, Some(dir), &mut rng);
        let world = Pose2::new(0.0, 0.0, theta).transform_point(shape.boundary_point(u));
        if world.dot(dir) < 0.0 {
            back += 1;
        }
    }
    back as f64 / 1000.0
}

#[test]
fn heuristic_proposals_favor_the_back_half() {
    for (dir, shape, theta) in [
        (Vec2::new(1.0, 0.0), Shape::circle(0.1), 0.0),
        (Vec2::new(0.0, 1.0), Shape::circle(0.1), 0.0),
        (Vec2::new(1.0, 1.0), Shape::rect(0.12, 0.05), 0.7),
        (Vec2::new(-0.3, 1.0), Shape::rect(0.05, 0.2), -2.0),
    ] {
        let f = back_fraction(dir, shape, theta);
        assert!(f >= 0.8, "{dir:?}: {f}");
    }
}

#[test]
fn heuristic_clusters_opposite_the_motion() {
    let scene = three_link(vec![disc("obj", Vec2::new(0.5, 0.5), 0.1)]);
    let config = scene.initial_configuration();
    let obj = scene.index_of("obj").unwrap();
    let sampler = HeuristicSampler::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (dir, expect) in [(Vec2::new(1.0, 0.0), PI), (Vec2::new(0.0, 1.0), -PI / 2.0)] {
        let mean = (0..400)
            .map(|_| Vec2::from_angle(sampler.propose(&scene, &config, obj, Some(dir), &mut rng) * 2.0 * PI))
            .fold(Vec2::zero(), |a, b| a + b);
        let err = hmap_core::scalar::wrap_angle(mean.angle() - expect).abs();
        assert!(err < 0.1, "{dir:?}: mean angle {}", mean.angle());
    }
}

#[test]
fn external_candidates_parse_and_are_used() {
    let s = ExternalSampler::parse("# regressor output\nobj 0.25\n\nobj 0.75\n").unwrap();
    assert_eq!(s.candidates["obj"], vec![0.25, 0.75]);
    assert!(ExternalSampler::parse("obj 1.0").is_err());
    assert!(ExternalSampler::parse("obj").is_err());
    let scene = three_link(vec![disc("obj", Vec2::new(0.5, 0.5), 0.1)]);
    let config = scene.initial_configuration();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let obj = scene.index_of("obj").unwrap();
    for _ in 0..20 {
        let u = s.propose(&scene, &config, obj, None, &mut rng);
        assert!(u == 0.25 || u == 0.75);
    }
}

#[test]
fn sampling_is_deterministic_per_seed() {
    let scene = three_link(vec![disc("obj", Vec2::new(0.4, 0.7), 0.05)]);
    let init = scene.initial_configuration();
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        generate_contact_point(
            &scene,
            &init,
            "obj",
            "ee",
            &HeuristicSampler::default(),
            Some(Vec2::new(1.0, 0.0)),
            &mut rng,
            25,
            &IkOptions::default(),
        )
        .unwrap()
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn proposals_stay_in_unit_interval(
        seed in any::<u64>(),
        dx in -1.0..1.0f64,
        dy in -1.0..1.0f64,
        theta in -4.0..4.0f64,
    ) {
        let scene = three_link(vec![Frame::new("obj", FrameKind::Movable)
            .at(Pose2::new(0.5, 0.5, theta))
            .with_shape(Shape::rect(0.1, 0.03))]);
        let config = scene.initial_configuration();
        let obj = scene.index_of("obj").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samplers: [&dyn Sampler; 3] =
            [&PointCloudSampler::default(), &HeuristicSampler::default(), &ExternalSampler::default()];
        for s in samplers {
            for dir in [Some(Vec2::new(dx, dy)), Some(Vec2::zero()), None] {
                let u = s.propose(&scene, &config, obj, dir, &mut rng);
                prop_assert!((0.0..1.0).contains(&u), "{} gave {u}", s.name());
            }
        }
    }
}
