//! Re-verification of a recorded plan against its scene.

use std::fmt;

use hmap_core::planner::goal_reached;
use hmap_core::scene::{AttachmentEvent, Scene, SceneError};
use hmap_core::{Configuration, Pose2};

use crate::formats::PlanFile;

/// Tolerances used when re-checking a plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckTolerances {
    /// Recorded object poses against forward kinematics.
    pub fk: f64,
    /// Deepest accepted penetration between shapes.
    pub penetration: f64,
    pub joint_limit: f64,
    /// Change of an attached object's relative pose between steps.
    pub step_drift: f64,
    /// Drift over a whole recorded sub-path.
    pub stable_drift: f64,
    pub spacing: f64,
    /// World-pose jump of the re-parented frame at a switch.
    pub switch: f64,
}

impl Default for CheckTolerances {
    fn default() -> Self {
        Self {
            fk: 1e-9,
            penetration: 2e-3,
            joint_limit: 1e-3,
            step_drift: 1e-6,
            stable_drift: 1e-3,
            spacing: 1e-9,
            switch: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Timestep, or `None` for plan-level checks.
    pub t: Option<usize>,
    pub check: &'static str,
    pub subject: String,
    pub value: f64,
    pub limit: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.t.map_or("-".to_string(), |t| t.to_string());
        write!(
            f,
            "{t:>6}  {:<14} {:<28} {:>12.3e} {:>12.3e}",
            self.check, self.subject, self.value, self.limit
        )
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("plan frames do not match the scene: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

fn pose_gap(a: &Pose2, b: &Pose2) -> f64 {
    let d = a.delta(b);
    d.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn ensure_same_frames(plan: &PlanFile, scene: &Scene) -> Result<(), ReplayError> {
    let ids: Vec<&str> = scene.frames().iter().map(|f| f.id.as_str()).collect();
    if ids.len() != plan.frames.len() || ids.iter().zip(&plan.frames).any(|(a, b)| a != b) {
        let missing: Vec<&str> = plan
            .frames
            .iter()
            .map(String::as_str)
            .filter(|f| !ids.contains(f))
            .collect();
        let extra: Vec<&str> = ids.iter().copied().filter(|f| !plan.frames.iter().any(|p| p == f)).collect();
        return Err(ReplayError::Mismatch(format!(
            "plan has {} frames, scene has {}; missing from scene {:?}, not in plan {:?}",
            plan.frames.len(),
            ids.len(),
            missing,
            extra
        )));
    }
    for step in &plan.steps {
        if step.q.len() != scene.num_joints() {
            return Err(ReplayError::Mismatch(format!(
                "step {} has {} joint values, scene has {} joints",
                step.t,
                step.q.len(),
                scene.num_joints()
            )));
        }
    }
    Ok(())
}

/// Replays `plan` in `scene` and returns every violated check.
pub fn check_plan(plan: &PlanFile, scene: &Scene, tol: &CheckTolerances) -> Result<Vec<Violation>, ReplayError> {
    ensure_same_frames(plan, scene)?;
    let path: Vec<Configuration> = plan.configurations();
    let mut events: Vec<AttachmentEvent> = plan.events();
    events.sort_by_key(|e| e.time_index);

    let mut out = Vec::new();
    let mut push = |t: Option<usize>, check, subject: String, value, limit| {
        out.push(Violation {
            t,
            check,
            subject,
            value,
            limit,
        })
    };

    let limits = scene.joint_limits();
    let mut current = scene.clone();
    let mut next = 0;
    let mut prev_rel: Vec<Option<(usize, Pose2)>> = vec![None; scene.frames().len()];
    for (t, state) in path.iter().enumerate() {
        if plan.steps[t].t != t {
            push(Some(t), "step-index", format!("recorded t = {}", plan.steps[t].t), 1.0, 0.0);
        }
        while next < events.len() && events[next].time_index == t {
            let ev = &events[next];
            let before = current.world_poses_of(state);
            let mut c = state.clone();
            current = current.apply_attachment(ev, &mut c)?;
            let after = current.world_poses_of(&c);
            let child = current.index_of(&ev.child_id)?;
            let jump = pose_gap(&before[child], &after[child]);
            if jump > tol.switch {
                push(Some(t), "switch", ev.child_id.clone(), jump, tol.switch);
            }
            prev_rel[child] = None;
            next += 1;
        }
        let world = current.world_poses_of(state);

        for (id, recorded) in &state.object_poses {
            let Ok(i) = current.index_of(id) else {
                push(Some(t), "unknown-object", id.clone(), 1.0, 0.0);
                continue;
            };
            let gap = pose_gap(recorded, &world[i]);
            if gap > tol.fk {
                push(Some(t), "fk", id.clone(), gap, tol.fk);
            }
            if let Some(att) = current.attachment_of(i) {
                let rel = world[att.parent].relative(recorded);
                if let Some((parent, prev)) = prev_rel[i] {
                    if parent == att.parent {
                        let drift = pose_gap(&prev, &rel);
                        if drift > tol.step_drift {
                            push(Some(t), "drift", id.clone(), drift, tol.step_drift);
                        }
                    }
                }
                prev_rel[i] = Some((att.parent, rel));
            } else {
                prev_rel[i] = None;
            }
        }

        // Collisions use the recorded object poses so that edits show up
        // even when they break the kinematic chain.
        let mut poses = world.clone();
        for (id, recorded) in &state.object_poses {
            if let Ok(i) = current.index_of(id) {
                poses[i] = *recorded;
            }
        }
        for (a, b) in current.collision_pairs(&Default::default()) {
            let d = current.pair_distance(&poses, a, b).distance;
            if d < -tol.penetration {
                push(
                    Some(t),
                    "collision",
                    format!("{}/{}", current.frame(a).id, current.frame(b).id),
                    d,
                    -tol.penetration,
                );
            }
        }

        for (j, (q, lim)) in state.q.iter().zip(&limits).enumerate() {
            let excess = (lim.lo - q).max(q - lim.hi);
            if excess > tol.joint_limit {
                push(
                    Some(t),
                    "joint-limit",
                    current.frame(current.joint_frame(j)).id.clone(),
                    excess,
                    tol.joint_limit,
                );
            }
        }
    }
    if next < events.len() {
        push(
            Some(events[next].time_index),
            "switch-time",
            events[next].child_id.clone(),
            events[next].time_index as f64,
            path.len() as f64,
        );
    }

    for s in &plan.sub_paths {
        if s.stable_drift > tol.stable_drift {
            push(
                Some(s.start),
                "stable-drift",
                format!("{} by {}", s.object, s.manipulator),
                s.stable_drift,
                tol.stable_drift,
            );
        }
        if s.start > s.end || s.end >= path.len().max(1) {
            push(Some(s.start), "sub-path", s.object.clone(), s.end as f64, path.len() as f64);
        }
    }

    for (k, list) in plan.waypoints.iter().enumerate() {
        for (i, w) in list.poses.windows(2).enumerate() {
            let gap = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            if gap > list.spacing + tol.spacing {
                push(None, "spacing", format!("list {k} segment {i}"), gap, list.spacing + tol.spacing);
            }
        }
    }

    if plan.feasible {
        let goal = Pose2::new(plan.goal.goal[0], plan.goal.goal[1], plan.goal.goal[2]);
        let tau = (plan.goal.tolerance[0], plan.goal.tolerance[1]);
        match path.last().and_then(|c| c.object_poses.get(&plan.goal.target)) {
            Some(p) if goal_reached(p, &goal, tau) => {}
            Some(p) => push(
                Some(path.len() - 1),
                "goal",
                plan.goal.target.clone(),
                p.translation().dist(goal.translation()),
                tau.0,
            ),
            None => push(None, "goal", plan.goal.target.clone(), f64::INFINITY, tau.0),
        }
    }
    Ok(out)
}

/// Plain-text violation table.
pub fn violation_table(violations: &[Violation]) -> String {
    let mut s = format!(
        "{:>6}  {:<14} {:<28} {:>12} {:>12}\n",
        "t", "check", "subject", "value", "limit"
    );
    for v in violations {
        s.push_str(&v.to_string());
        s.push('\n');
    }
    s.push_str(&format!("{} violation(s)\n", violations.len()));
    s
}
