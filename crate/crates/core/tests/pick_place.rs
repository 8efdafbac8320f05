//! Compiled pick-and-place problems solved end to end.

mod common;

use hmap_core::optimizer::{solve_trajectory, SolverSettings};
use hmap_core::predicates::{compile, touch_residual, CompileOptions, Skeleton};
use hmap_core::Pose2;

#[test]
fn pick_and_place_keeps_the_grasp() {
    let scene = common::three_link(vec![common::movable_box("box", Pose2::new(0.8, 0.4, 0.0), 0.05, 0.05)]);
    let init = scene.initial_configuration();
    let sk = Skeleton::parse("(touch ee box)\n(stable ee box)\n(poseEq box 0.4 0.7 0.3)\n").unwrap();
    assert_eq!(sk.num_phases(), 2);
    let problem = compile(&sk, &scene, &init, &CompileOptions::default()).unwrap();
    let start = std::time::Instant::now();
    let traj = solve_trajectory(&problem, &SolverSettings::default()).unwrap();
    eprintln!(
        "solve {:.3}s steps {} feasible {} eq {:.2e} ineq {:.2e} drift {:.2e}",
        start.elapsed().as_secs_f64(),
        traj.gn_steps,
        traj.feasible,
        traj.max_eq_violation,
        traj.max_ineq_violation,
        traj.stable_drift
    );
    for v in traj.feasibility_report(1e-3) {
        eprintln!("  {} @{}: {:.3e}", v.feature, v.time, v.violation);
    }
    assert!(traj.feasible);
    assert_eq!(traj.switch_events.len(), 1);
    let ts = traj.switch_events[0].time_index;
    assert_eq!(ts, 10);
    assert!(touch_residual(&scene, &traj.states[ts], "ee", "box").unwrap().abs() < 1e-3);
    assert!(traj.stable_drift <= 1e-3);

    // Before the switch the box does not move; at the switch its world pose
    // is continuous; after it, it follows the end-effector rigidly.
    let start_box = init.object_poses["box"];
    for s in &traj.states[..=ts] {
        assert_eq!(s.object_poses["box"], start_box);
    }
    let rel = traj.switch_events[0].rel_pose;
    for s in &traj.states[ts..] {
        let ee = scene.forward_kinematics(s, "ee").unwrap();
        let d = ee.compose(&rel).delta(&s.object_poses["box"]);
        assert!(d.iter().all(|v| v.abs() < 1e-12));
    }
    // The pose constraint holds on the solver's free object variable; the
    // projected pose adds the grasp drift summed over the carry.
    let last = traj.states.last().unwrap().object_poses["box"];
    let d = last.delta(&Pose2::new(0.4, 0.7, 0.3));
    let carry = (traj.states.len() - 1 - ts) as f64;
    // Angle drift moves the box center by at most 0.1 m per radian.
    let bound = traj.max_eq_violation + carry * traj.stable_drift * (1.0 + 0.1);
    assert!(d.iter().all(|v| v.abs() <= bound), "{d:?} vs {bound:.3e}");
}

#[test]
fn empty_skeleton_holds_the_start() {
    let scene = common::three_link(vec![]);
    let mut init = scene.initial_configuration();
    init.q = vec![0.3, -0.4, 0.5];
    let problem = compile(&Skeleton::default(), &scene, &init, &CompileOptions::default()).unwrap();
    let traj = solve_trajectory(&problem, &SolverSettings::default()).unwrap();
    assert!(traj.feasible);
    for s in &traj.states {
        assert_eq!(s.q, init.q);
    }
}
