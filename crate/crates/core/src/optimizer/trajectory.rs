use std::sync::Arc;

use super::{feasibility_report, solve, Feature, IterationRecord, OptimizerError, Problem, SolverSettings, Violation};
use crate::features::SceneContext;
use crate::scene::{AttachmentEvent, AttachmentKind};
use crate::{Configuration, Pose2};

/// Trajectory optimization problem over a scene.
///
/// Every time step holds the state described by the context's layout. The
/// switches are attach events; their relative poses are captured from the
/// solved state at the switch index.
pub struct TrajectoryProblem {
    pub ctx: Arc<SceneContext>,
    pub steps_per_phase: usize,
    pub switches: Vec<AttachmentEvent>,
    pub init: Configuration,
    pub problem: Problem<f64>,
}

impl TrajectoryProblem {
    /// Problem with every time step initialized to `init`.
    pub fn new(ctx: Arc<SceneContext>, init: Configuration, horizon: usize, steps_per_phase: usize) -> Self {
        let x0 = ctx.layout.pack(&ctx.scene, &init);
        Self {
            problem: Problem::constant_init(x0, horizon),
            ctx,
            steps_per_phase,
            switches: Vec::new(),
            init,
        }
    }

    pub fn horizon(&self) -> usize {
        self.problem.horizon()
    }

    pub fn state_dim(&self) -> usize {
        self.problem.state_dim
    }

    pub fn add(&mut self, f: impl Feature<f64> + 'static) {
        self.problem.add(f);
    }

    pub fn add_boxed(&mut self, f: Box<dyn Feature<f64>>) {
        self.problem.features.push(f);
    }

    pub fn freeze(&mut self, t: usize, d: usize) {
        self.problem.freeze(t, d);
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        let t = self.horizon();
        if t == 0 {
            return Err(OptimizerError::InvalidProblem("horizon must be at least 1".into()));
        }
        for s in &self.switches {
            if s.time_index == 0 || s.time_index > t {
                return Err(OptimizerError::InvalidProblem(format!(
                    "switch of `{}` at {} outside (0, {t}]",
                    s.child_id, s.time_index
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<Configuration>,
    /// Raw solver states in layout order.
    pub packed: Vec<Vec<f64>>,
    pub switch_events: Vec<AttachmentEvent>,
    pub feasible: bool,
    pub max_eq_violation: f64,
    pub max_ineq_violation: f64,
    pub cost: f64,
    pub gn_steps: usize,
    pub history: Vec<IterationRecord>,
    pub violations: Vec<Violation>,
    /// Largest per-step change of an attached object's relative pose in the
    /// solver output, before attached poses are re-derived from the parent.
    pub stable_drift: f64,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }

    pub fn velocities(&self) -> Vec<Vec<f64>> {
        self.packed
            .windows(2)
            .map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect())
            .collect()
    }

    pub fn accelerations(&self) -> Vec<Vec<f64>> {
        self.packed
            .windows(3)
            .map(|w| (0..w[0].len()).map(|d| w[2][d] - 2.0 * w[1][d] + w[0][d]).collect())
            .collect()
    }

    /// Constraint features violated beyond `eps`, worst first.
    pub fn feasibility_report(&self, eps: f64) -> Vec<Violation> {
        feasibility_report(&self.violations, eps)
    }
}

/// Solves the problem and turns the result into scene configurations.
///
/// Objects attached by a switch follow their parent rigidly from the switch
/// on: their poses after the switch are recomputed from the parent pose and
/// the relative pose captured at the switch.
pub fn solve_trajectory(p: &TrajectoryProblem, settings: &SolverSettings) -> Result<Trajectory, OptimizerError> {
    p.validate()?;
    let sol = solve(&p.problem, settings)?;
    let ctx = &p.ctx;
    let scene = &ctx.scene;
    let mut states: Vec<Configuration> = sol
        .states
        .iter()
        .map(|x| {
            let mut c = ctx.layout.unpack(scene, x, &p.init);
            scene.sync_attached(&mut c);
            c
        })
        .collect();

    let mut switches = p.switches.clone();
    switches.sort_by_key(|s| s.time_index);
    let mut drift = 0.0f64;
    for ev in switches.iter_mut() {
        if ev.kind != AttachmentKind::Attach {
            continue;
        }
        let parent = scene.index_of(&ev.parent_id).map_err(|e| OptimizerError::InvalidProblem(e.to_string()))?;
        let child = scene.index_of(&ev.child_id).map_err(|e| OptimizerError::InvalidProblem(e.to_string()))?;
        let ts = ev.time_index;
        let at_switch = scene.world_poses_of(&states[ts]);
        ev.rel_pose = at_switch[parent].relative(&at_switch[child]);
        let mut prev_rel = ev.rel_pose;
        for state in states.iter_mut().skip(ts + 1) {
            let poses = scene.world_poses_of(state);
            let rel = poses[parent].relative(&poses[child]);
            drift = drift.max(max_abs(&prev_rel.delta(&rel)));
            prev_rel = rel;
            let projected: Pose2 = poses[parent].compose(&ev.rel_pose);
            state.object_poses.insert(ev.child_id.clone(), projected);
        }
    }

    Ok(Trajectory {
        states,
        packed: sol.states,
        switch_events: switches,
        feasible: sol.feasible,
        max_eq_violation: sol.max_eq,
        max_ineq_violation: sol.max_ineq,
        cost: sol.cost,
        gn_steps: sol.gn_steps,
        history: sol.history,
        violations: sol.violations,
        stable_drift: drift,
    })
}

fn max_abs(v: &[f64; 3]) -> f64 {
    v.iter().fold(0.0f64, |a, b| a.max(b.abs()))
}
