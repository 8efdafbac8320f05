//! Sequential manipulation planning: an object path from a sampling-based
//! planner, cut into waypoints, each reached by a trajectory optimized
//! from a sampled contact point.
//!
//! For every waypoint the planner first retries the grasp it already holds,
//! then samples fresh contacts, then falls back to tools. When a waypoint
//! cannot be reached, the waypoints are regenerated from the current object
//! pose with half the spacing. Movable obstacles lying on the object's path
//! are pushed aside first by planning for them the same way.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::contact::{
    generate_contact_point, ContactError, ContactPoint, ExternalSampler, HeuristicSampler, IkOptions,
    PointCloudSampler, Sampler,
};
use crate::geometry::PlacedShape;
use crate::optimizer::{solve_trajectory, SolverSettings, Trajectory};
use crate::predicates::{compile, CompileOptions, Predicate, PredicateError, Skeleton};
use crate::scalar::wrap_angle;
use crate::scene::{AttachmentEvent, AttachmentKind, Scene, SceneError};
use crate::waypoints::{
    interpolate_waypoints, metric, plan_with_checker, smooth_path, RrtSettings, StaticChecker, WaypointError,
    WaypointList,
};
use crate::{Configuration, Pose2, Vec2};

/// Per-waypoint skeleton: grasp the object at the sampled contact point and
/// carry it to the waypoint.
pub const DEFAULT_TEMPLATE: &str = "(touch $manip $obj)\n(contact $manip $obj $cp)\n(stable $manip $obj)\n(poseEq $obj $wp)";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Predicate(#[from] PredicateError),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("invalid planner configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SamplerChoice {
    PointCloud,
    Heuristic,
    External(ExternalSampler),
}

impl SamplerChoice {
    pub fn name(&self) -> &'static str {
        match self {
            SamplerChoice::PointCloud => "pointcloud",
            SamplerChoice::Heuristic => "heuristic",
            SamplerChoice::External(_) => "external",
        }
    }

    fn build(&self) -> Box<dyn Sampler> {
        match self {
            SamplerChoice::PointCloud => Box::new(PointCloudSampler::default()),
            SamplerChoice::Heuristic => Box::new(HeuristicSampler::default()),
            SamplerChoice::External(e) => Box::new(e.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    /// Goal tolerance on translation (m) and wrapped angle (rad).
    pub tau: (f64, f64),
    /// Initial waypoint spacing L.
    pub node_distance: f64,
    /// Attempts per manipulator and waypoint.
    pub j_max: usize,
    /// Restarts stop once the spacing would drop below this.
    pub l_floor: f64,
    pub steps_per_phase: usize,
    /// Manipulators to try, end-effector first. Empty means the scene's
    /// default end-effector followed by the task's tools.
    pub manipulator_order: Vec<String>,
    /// Retry the held grasp before sampling a new contact.
    pub reuse_contact: bool,
    pub seed: u64,
    /// Wall-clock budget in seconds.
    pub time_budget: f64,
    pub contact_attempts: usize,
    pub collision_margin: f64,
    /// Required distance between a displaced obstacle and the object's
    /// swept path.
    pub corridor_clearance: f64,
    pub sampler: SamplerChoice,
    pub rrt: RrtSettings,
    pub solver: SolverSettings,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            tau: (0.01, 0.05),
            node_distance: 0.25,
            j_max: 3,
            l_floor: 0.02,
            steps_per_phase: 10,
            manipulator_order: Vec::new(),
            reuse_contact: true,
            seed: 0,
            time_budget: 120.0,
            contact_attempts: 25,
            collision_margin: 0.005,
            corridor_clearance: 0.005,
            sampler: SamplerChoice::Heuristic,
            rrt: RrtSettings::default(),
            solver: SolverSettings::default(),
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: &str| Err(PlanError::InvalidConfig(m.into()));
        if !(self.tau.0 > 0.0 && self.tau.1 > 0.0) {
            return bad("tau must be positive");
        }
        if !(self.l_floor > 0.0 && self.node_distance > self.l_floor) {
            return bad("need L > L_floor > 0");
        }
        if self.j_max == 0 {
            return bad("j_max must be at least 1");
        }
        if self.contact_attempts == 0 {
            return bad("contact_attempts must be at least 1");
        }
        if !(self.time_budget > 0.0) {
            return bad("time budget must be positive");
        }
        if self.collision_margin < 0.0 || self.corridor_clearance < 0.0 {
            return bad("clearances must be nonnegative");
        }
        self.solver.validate().map_err(|e| PlanError::InvalidConfig(e.to_string()))
    }

    /// Restart bound `⌈log₂(L / L_floor)⌉`.
    pub fn max_restarts(&self) -> usize {
        (self.node_distance / self.l_floor).log2().ceil().max(0.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub target: String,
    pub goal: Pose2,
    /// Per-waypoint skeleton lines with `$manip`, `$obj`, `$cp` (contact
    /// point in the object frame) and `$wp` (waypoint pose) placeholders.
    pub template: String,
    /// Extra lines appended for the last waypoint; `$goal` is also bound.
    pub terminal: String,
    pub tools: Vec<String>,
    pub movable_obstacles: Vec<String>,
}

impl Task {
    pub fn new(target: impl Into<String>, goal: Pose2) -> Self {
        Self {
            target: target.into(),
            goal,
            template: DEFAULT_TEMPLATE.into(),
            terminal: String::new(),
            tools: Vec::new(),
            movable_obstacles: Vec::new(),
        }
    }

    fn validate(&self, scene: &Scene) -> Result<(), PlanError> {
        let movable = |id: &str| -> Result<usize, PlanError> {
            let i = scene.index_of(id)?;
            let f = scene.frame(i);
            if !f.kind.is_object() {
                return Err(PlanError::InvalidTask(format!("`{id}` is not movable")));
            }
            if f.shape.is_none() {
                return Err(PlanError::InvalidTask(format!("`{id}` has no shape")));
            }
            Ok(i)
        };
        movable(&self.target)?;
        for t in self.tools.iter().chain(&self.movable_obstacles) {
            movable(t)?;
            if *t == self.target {
                return Err(PlanError::InvalidTask(format!("`{t}` is the target")));
            }
        }
        if !self.goal.is_finite() {
            return Err(PlanError::InvalidTask("goal pose is not finite".into()));
        }
        // Templates must parse once placeholders are bound.
        let probe = Vec2::zero();
        instantiate(&self.template, "m", "o", probe, &Pose2::identity(), &self.goal)?;
        instantiate(&self.terminal, "m", "o", probe, &Pose2::identity(), &self.goal)?;
        Ok(())
    }
}

/// A contact point used by the plan.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactRecord {
    pub object: String,
    pub manipulator: String,
    pub point: ContactPoint,
    /// Index of the waypoint list and of the waypoint within it; grasping a
    /// tool uses the waypoint it was needed for.
    pub list_index: usize,
    pub waypoint_index: usize,
    /// Path index at which the contact is made.
    pub time_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubPathKind {
    /// Grasp at a new contact, then carry to the waypoint.
    Pick,
    /// Carry with the grasp already held.
    Carry,
    /// Grasp a tool.
    ToolGrasp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubPathRecord {
    pub kind: SubPathKind,
    pub object: String,
    pub manipulator: String,
    /// Path indices of the first and last state.
    pub start: usize,
    pub end: usize,
    /// Largest per-step change of an attached relative pose in the solver
    /// output.
    pub stable_drift: f64,
    pub max_eq_violation: f64,
    pub max_ineq_violation: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageMetrics {
    /// Waypoints in the last generated list.
    pub wp_count: usize,
    pub rrt_seconds: f64,
    pub cp_seconds: f64,
    pub komo_seconds: f64,
    pub restarts: usize,
    pub tool_used: Option<String>,
    pub obstacles_moved: Vec<String>,
    /// Sub-path solves for the target object, tool grasps excluded.
    pub optimizer_calls: usize,
    pub grasp_calls: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanReport {
    pub feasible: bool,
    /// One configuration per time step; sub-paths share their junctions.
    pub path: Vec<Configuration>,
    /// Attach and detach events with path indices.
    pub switches: Vec<AttachmentEvent>,
    pub waypoints_used: Vec<WaypointList>,
    /// Smoothed object path each waypoint list was cut from.
    pub object_paths: Vec<Vec<Pose2>>,
    /// Object moved along each waypoint list.
    pub waypoint_objects: Vec<String>,
    pub contacts: Vec<ContactRecord>,
    pub sub_paths: Vec<SubPathRecord>,
    pub metrics: StageMetrics,
    pub failure: Option<String>,
}

/// Sub-task moving one obstacle off the object's path.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleSubTask {
    pub obstacle: String,
    pub goal: Pose2,
}

/// First manipulator in `order` with fewer than `j_max` failures.
pub fn select_manipulator(failures: &[usize], j_max: usize) -> Option<usize> {
    failures.iter().position(|&f| f < j_max)
}

/// Whether `pose` is within the goal tolerance.
pub fn goal_reached(pose: &Pose2, goal: &Pose2, tau: (f64, f64)) -> bool {
    pose.translation().dist(goal.translation()) <= tau.0 && wrap_angle(pose.theta - goal.theta).abs() <= tau.1
}

/// Object poses along `path` at most `resolution` apart in the SE(2)
/// metric.
pub fn swept_poses(path: &[Pose2], w_theta: f64, resolution: f64) -> Vec<Pose2> {
    let mut out = Vec::new();
    if let Some(first) = path.first() {
        out.push(*first);
    }
    for e in path.windows(2) {
        let n = (metric(&e[0], &e[1], w_theta) / resolution).ceil().max(1.0) as usize;
        for k in 1..=n {
            out.push(e[0].interpolate(&e[1], k as f64 / n as f64));
        }
    }
    out
}

/// Smallest distance between frame `other` (at `pose`) and the object
/// `obj` placed along `swept`.
pub fn corridor_distance(scene: &Scene, obj: usize, swept: &[Pose2], other: usize, pose: &Pose2) -> f64 {
    let (Some(os), Some(ss)) = (scene.frame(obj).shape.as_ref(), scene.frame(other).shape.as_ref()) else {
        return f64::INFINITY;
    };
    let oshape = pose.compose(&scene.frame(other).shape_offset);
    let placed = PlacedShape::new(ss, &oshape);
    let (rc, ro) = (os.circumscribed_radius(), ss.circumscribed_radius());
    let mut best = f64::INFINITY;
    for p in swept {
        let sp = p.compose(&scene.frame(obj).shape_offset);
        if sp.translation().dist(oshape.translation()) - rc - ro >= best {
            continue;
        }
        let d = crate::geometry::placed_distance(&PlacedShape::new(os, &sp), &placed).distance;
        best = best.min(d);
    }
    best
}

/// Movable obstacles within `clearance` of the object's swept path, each
/// with the nearest pose (same orientation, sampled on rings around it) that
/// is at least `clearance` away from the path and `room` away from other
/// geometry.
pub fn remove_blocking_obstacles(
    scene: &Scene,
    config: &Configuration,
    task: &Task,
    object_path: &[Pose2],
    clearance: f64,
    resolution: f64,
    room: f64,
) -> Result<Vec<ObstacleSubTask>, PlanError> {
    let obj = scene.index_of(&task.target)?;
    let w = scene.frame(obj).shape.as_ref().map_or(0.0, |s| s.circumscribed_radius());
    let swept = swept_poses(object_path, w, resolution);
    let poses = scene.world_poses_of(config);
    // Relocated obstacles should stay within easy reach.
    let base = match scene.arms.first().and_then(|a| a.links.first()) {
        Some(l) => poses[scene.index_of(l)?].translation(),
        None => Vec2::new(0.0, 0.0),
    };
    let mut out = Vec::new();
    for id in &task.movable_obstacles {
        let o = scene.index_of(id)?;
        if corridor_distance(scene, obj, &swept, o, &poses[o]) >= clearance {
            continue;
        }
        let checker = StaticChecker::new(scene, config, id, &other_objects(scene, &[o]))
            .map_err(|e| PlanError::InvalidTask(e.to_string()))?;
        let goal = free_pose_near(scene, &checker, poses[o], |p| {
            corridor_distance(scene, obj, &swept, o, p) >= clearance
        }, room, base)
        .ok_or_else(|| PlanError::InvalidTask(format!("no free pose for obstacle `{id}`")))?;
        out.push(ObstacleSubTask {
            obstacle: id.clone(),
            goal,
        });
    }
    Ok(out)
}

/// Object frames other than `except`.
fn other_objects(scene: &Scene, except: &[usize]) -> Vec<usize> {
    scene.object_frames().iter().copied().filter(|i| !except.contains(i)).collect()
}

/// Nearest pose on rings of increasing radius around `from` that lies in
/// the bounds, keeps `margin` from the checker's geometry and satisfies
/// `accept`. Ties on a ring go to the candidate closest to `prefer`.
fn free_pose_near(
    scene: &Scene,
    checker: &StaticChecker,
    from: Pose2,
    accept: impl Fn(&Pose2) -> bool,
    margin: f64,
    prefer: Vec2,
) -> Option<Pose2> {
    const RING_STEP: f64 = 0.01;
    const PER_RING: usize = 48;
    let b = &scene.bounds;
    let reach = (b.max - b.min).norm();
    let rings = (reach / RING_STEP).ceil() as usize;
    for k in 1..=rings {
        let r = k as f64 * RING_STEP;
        let best = (0..PER_RING)
            .map(|a| {
                let ang = 2.0 * std::f64::consts::PI * a as f64 / PER_RING as f64;
                Pose2::from_parts(from.translation() + Vec2::from_angle(ang) * r, from.theta)
            })
            .filter(|p| b.contains(p.translation()) && checker.clearance(p) >= margin && accept(p))
            .min_by(|p, q| p.translation().dist(prefer).total_cmp(&q.translation().dist(prefer)));
        if best.is_some() {
            return best;
        }
    }
    None
}

/// Binds placeholders and parses the skeleton lines.
fn instantiate(
    template: &str,
    manip: &str,
    obj: &str,
    cp: Vec2,
    wp: &Pose2,
    goal: &Pose2,
) -> Result<Vec<Predicate>, PlanError> {
    let text = template
        .replace("$manip", manip)
        .replace("$obj", obj)
        .replace("$cp", &format!("{} {}", cp.x, cp.y))
        .replace("$wp", &format!("{} {} {}", wp.x, wp.y, wp.theta))
        .replace("$goal", &format!("{} {} {}", goal.x, goal.y, goal.theta));
    Ok(Skeleton::parse(&text)?.entries.into_iter().map(|e| e.predicate).collect())
}

fn grasps(p: &Predicate, manip: &str, obj: &str) -> bool {
    match p {
        Predicate::Touch { manip: m, obj: o }
        | Predicate::Stable { manip: m, obj: o }
        | Predicate::ContactProximity { manip: m, obj: o, .. } => m == manip && o == obj,
        Predicate::PoseEq { .. } => false,
    }
}

/// Plans moving `task.target` to `task.goal`.
pub fn plan(
    scene: &Scene,
    init: &Configuration,
    task: &Task,
    config: &PlannerConfig,
) -> Result<PlanReport, PlanError> {
    config.validate()?;
    scene.validate_configuration(init)?;
    task.validate(scene)?;
    let start = scene.scene_min_distance(init, &[]);
    if let (Some((a, b)), true) = (&start.pair, start.result.distance < -1e-9) {
        return Err(PlanError::InvalidTask(format!(
            "initial configuration is in collision: `{a}` and `{b}` overlap by {:.3e}",
            -start.result.distance
        )));
    }
    let mut order = config.manipulator_order.clone();
    if order.is_empty() {
        let ee = scene
            .default_end_effector()
            .ok_or_else(|| PlanError::InvalidConfig("scene has no end-effector".into()))?;
        order.push(ee.to_string());
        order.extend(task.tools.iter().cloned());
    }
    for m in &order {
        let i = scene.index_of(m)?;
        if scene.frame(i).shape.is_none() {
            return Err(PlanError::InvalidConfig(format!("manipulator `{m}` has no shape")));
        }
    }

    let mut run = Run {
        cfg: config,
        order,
        sampler: config.sampler.build(),
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        started: Instant::now(),
        scene: scene.clone(),
        config: init.clone(),
        report: PlanReport {
            feasible: false,
            path: vec![init.clone()],
            switches: Vec::new(),
            waypoints_used: Vec::new(),
            waypoint_objects: Vec::new(),
            object_paths: Vec::new(),
            contacts: Vec::new(),
            sub_paths: Vec::new(),
            metrics: StageMetrics::default(),
            failure: None,
        },
    };
    let outcome = run.plan_task(task, true)?;
    let mut report = run.report;
    match outcome {
        Ok(()) => report.feasible = true,
        Err(reason) => {
            log::info!("planning failed: {reason}");
            report.failure = Some(reason);
        }
    }
    Ok(report)
}

struct Run<'a> {
    cfg: &'a PlannerConfig,
    order: Vec<String>,
    sampler: Box<dyn Sampler>,
    rng: ChaCha8Rng,
    started: Instant,
    scene: Scene,
    config: Configuration,
    report: PlanReport,
}

/// Outcome of a planning step: `Err` carries a failure reason that ends or
/// restarts planning, while `PlanError` is reserved for invalid input.
type Step = Result<(), String>;

impl Run<'_> {
    fn out_of_time(&self) -> bool {
        self.started.elapsed().as_secs_f64() > self.cfg.time_budget
    }

    fn restore(&mut self, cp: Checkpoint) {
        self.scene = cp.scene;
        self.config = cp.config;
        self.report.path.truncate(cp.path);
        *self.report.path.last_mut().expect("nonempty path") = self.config.clone();
        self.report.switches.truncate(cp.switches);
        self.report.contacts.truncate(cp.contacts);
        self.report.sub_paths.truncate(cp.sub_paths);
    }

    fn now(&self) -> usize {
        self.report.path.len() - 1
    }

    fn pose_of(&self, id: &str) -> Result<Pose2, PlanError> {
        let i = self.scene.index_of(id)?;
        Ok(self.scene.world_poses_of(&self.config)[i])
    }

    fn plan_task(&mut self, task: &Task, top_level: bool) -> Result<Step, PlanError> {
        if goal_reached(&self.pose_of(&task.target)?, &task.goal, self.cfg.tau) {
            return Ok(Ok(()));
        }
        let obj = self.scene.index_of(&task.target)?;
        let mut spacing = self.cfg.node_distance;
        let mut restarts = 0;
        loop {
            if self.out_of_time() {
                return Ok(Err("time budget exhausted".into()));
            }
            let step = self.follow_new_waypoints(task, obj, spacing, top_level)?;
            match step {
                Ok(()) => return Ok(Ok(())),
                Err(Failure::Fatal(reason)) => return Ok(Err(reason)),
                Err(Failure::Retry(reason)) => {
                    let next = spacing / 2.0;
                    if next < self.cfg.l_floor {
                        return Ok(Err(format!("{reason}; waypoint spacing floor reached")));
                    }
                    log::info!("{reason}; restarting with L = {next}");
                    spacing = next;
                    restarts += 1;
                    if top_level {
                        self.report.metrics.restarts = restarts;
                    }
                }
            }
        }
    }

    /// Frames the object's path must avoid besides static geometry: objects
    /// resting in the scene that are not the target, not held, and not
    /// obstacles scheduled for removal.
    fn path_obstacles(&self, task: &Task, obj: usize) -> Vec<usize> {
        let skip: BTreeSet<usize> =
            task.movable_obstacles.iter().filter_map(|m| self.scene.index_of(m).ok()).collect();
        self.scene
            .object_frames()
            .iter()
            .copied()
            .filter(|&i| {
                i != obj
                    && !skip.contains(&i)
                    && self.scene.attachment_of(i).is_none()
                    && self.scene.frame(i).shape.is_some()
            })
            .collect()
    }

    fn follow_new_waypoints(
        &mut self,
        task: &Task,
        obj: usize,
        spacing: f64,
        top_level: bool,
    ) -> Result<Result<(), Failure>, PlanError> {
        let cfg = self.cfg;
        let t0 = Instant::now();
        let start = self.pose_of(&task.target)?;
        let extra = self.path_obstacles(task, obj);
        let checker = match StaticChecker::new(&self.scene, &self.config, &task.target, &extra) {
            Ok(c) => c,
            Err(e) => return Err(PlanError::InvalidTask(e.to_string())),
        };
        let rrt = RrtSettings {
            seed: self.rng.gen(),
            ..cfg.rrt.clone()
        };
        let raw = match plan_with_checker(&checker, &self.scene.bounds, start, task.goal, &rrt) {
            Ok(r) => r,
            Err(WaypointError::StartInCollision) => {
                return Ok(Err(Failure::Fatal(format!("`{}` starts in collision", task.target))));
            }
            Err(WaypointError::GoalInCollision) => {
                return Ok(Err(Failure::Fatal("goal pose is in collision".into())));
            }
            Err(e) => {
                self.report.metrics.rrt_seconds += t0.elapsed().as_secs_f64();
                return Ok(Err(Failure::Retry(format!("object path: {e}"))));
            }
        };
        let smooth = smooth_path(&self.scene, &self.config, &task.target, &extra, &raw.path, cfg.collision_margin, &rrt)
            .map_err(|e| PlanError::InvalidTask(e.to_string()))?;
        let list = interpolate_waypoints(&smooth.path, spacing).map_err(|e| PlanError::InvalidTask(e.to_string()))?;
        self.report.metrics.rrt_seconds += t0.elapsed().as_secs_f64();
        log::info!(
            "`{}`: {} waypoints over {:.3} m (L = {spacing})",
            task.target,
            list.waypoints.len(),
            list.source_path_length
        );
        let list_index = self.report.waypoints_used.len();
        self.report.waypoints_used.push(list.clone());
        self.report.object_paths.push(smooth.path.clone());
        self.report.waypoint_objects.push(task.target.clone());
        if top_level {
            self.report.metrics.wp_count = list.waypoints.len();
        }

        if top_level && !task.movable_obstacles.is_empty() {
            let subtasks = match remove_blocking_obstacles(
                &self.scene,
                &self.config,
                task,
                &smooth.path,
                cfg.corridor_clearance,
                rrt.resolution,
                self.placement_room()?,
            ) {
                Ok(s) => s,
                Err(PlanError::InvalidTask(m)) => return Ok(Err(Failure::Retry(m))),
                Err(e) => return Err(e),
            };
            for sub in subtasks {
                log::info!("moving obstacle `{}` to {:?}", sub.obstacle, sub.goal);
                let mut t = Task::new(&sub.obstacle, sub.goal);
                t.template = task.template.clone();
                t.tools = task.tools.clone();
                if let Err(reason) = self.plan_task(&t, false)? {
                    return Ok(Err(Failure::Retry(format!("obstacle `{}`: {reason}", sub.obstacle))));
                }
                if !self.report.metrics.obstacles_moved.contains(&sub.obstacle) {
                    self.report.metrics.obstacles_moved.push(sub.obstacle.clone());
                }
            }
        }

        let last = list.waypoints.len() - 1;
        for i in 1..=last {
            if self.out_of_time() {
                return Ok(Err(Failure::Fatal("time budget exhausted".into())));
            }
            let wp = list.waypoints[i];
            if let Err(reason) = self.reach_waypoint(task, wp, list_index, i, i == last)? {
                return Ok(Err(Failure::Retry(format!("waypoint {i}: {reason}"))));
            }
            if goal_reached(&self.pose_of(&task.target)?, &task.goal, cfg.tau) {
                return Ok(Ok(()));
            }
        }
        if goal_reached(&self.pose_of(&task.target)?, &task.goal, cfg.tau) {
            Ok(Ok(()))
        } else {
            Ok(Err(Failure::Retry("final pose outside tolerance".into())))
        }
    }

    fn reach_waypoint(
        &mut self,
        task: &Task,
        wp: Pose2,
        list_index: usize,
        wp_index: usize,
        last: bool,
    ) -> Result<Step, PlanError> {
        let mut failures = vec![0usize; self.order.len()];
        let obj = self.scene.index_of(&task.target)?;
        // Keep the grasp already held if it still works.
        if self.cfg.reuse_contact {
            if let Some(att) = self.scene.attachment_of(obj) {
                let holder = self.scene.frame(att.parent).id.clone();
                if let Some(m) = self.order.iter().position(|o| *o == holder) {
                    match self.carry(task, &holder, wp, last)? {
                        Ok(()) => return Ok(Ok(())),
                        Err(reason) => {
                            log::debug!("waypoint {wp_index}: keeping the grasp of `{holder}` failed: {reason}");
                            failures[m] += 1;
                        }
                    }
                }
            }
        }
        while let Some(m) = select_manipulator(&failures, self.cfg.j_max) {
            if self.out_of_time() {
                return Ok(Err("time budget exhausted".into()));
            }
            let manip = self.order[m].clone();
            match self.pick(task, &manip, wp, list_index, wp_index, last)? {
                Ok(()) => return Ok(Ok(())),
                Err(reason) => {
                    log::debug!("waypoint {wp_index} with `{manip}` (attempt {}): {reason}", failures[m] + 1);
                    failures[m] += 1;
                }
            }
        }
        Ok(Err("all manipulators exhausted".into()))
    }

    fn predicates(&self, task: &Task, manip: &str, cp: Vec2, wp: &Pose2, last: bool) -> Result<Vec<Predicate>, PlanError> {
        let mut p = instantiate(&task.template, manip, &task.target, cp, wp, &task.goal)?;
        if last {
            p.extend(instantiate(&task.terminal, manip, &task.target, cp, wp, &task.goal)?);
        }
        Ok(p)
    }

    /// Moves the held object to the waypoint without changing the grasp.
    fn carry(&mut self, task: &Task, manip: &str, wp: Pose2, last: bool) -> Result<Step, PlanError> {
        let preds: Vec<Predicate> = self
            .predicates(task, manip, Vec2::zero(), &wp, last)?
            .into_iter()
            .filter(|p| !grasps(p, manip, &task.target))
            .collect();
        self.report.metrics.optimizer_calls += 1;
        let scratch = Scratch::from(&*self);
        self.solve_and_commit(preds, scratch, None, SubPathKind::Carry, &task.target, manip)
    }

    /// Samples a new contact for `manip` and moves the object to the
    /// waypoint from it.
    fn pick(
        &mut self,
        task: &Task,
        manip: &str,
        wp: Pose2,
        list_index: usize,
        wp_index: usize,
        last: bool,
    ) -> Result<Step, PlanError> {
        let obj = self.scene.index_of(&task.target)?;
        let m = self.scene.index_of(manip)?;
        let ee = self.order[0].clone();
        let e = self.scene.index_of(&ee)?;

        let mut fresh_grasp = None;
        if m != e && !self.scene.attachment_of(m).is_some_and(|a| a.parent == e) {
            fresh_grasp = Some(Checkpoint::from(&*self));
            // The end-effector has to let go of everything else first; this
            // is committed together with the grasp.
            let mut scratch = Scratch::from(&*self);
            if scratch.scene.attachment_of(obj).is_some_and(|a| a.parent == e) {
                scratch.detach(obj)?;
            }
            for c in scratch.scene.children_of(e) {
                scratch.detach(c)?;
            }
            if scratch.scene.attachment_of(m).is_some() {
                scratch.detach(m)?;
            }
            if let Err(reason) = self.grasp_tool(scratch, &ee, manip, list_index, wp_index)? {
                return Ok(Err(format!("grasping tool `{manip}`: {reason}")));
            }
        }

        // Release the object and anything else the manipulator holds.
        let mut scratch = Scratch::from(&*self);
        if scratch.scene.attachment_of(obj).is_some() {
            scratch.detach(obj)?;
        }
        for c in scratch.scene.children_of(m) {
            scratch.detach(c)?;
        }
        if m != e {
            for c in scratch.scene.children_of(e) {
                if c != m {
                    scratch.detach(c)?;
                }
            }
        }

        let t0 = Instant::now();
        let ik = self.ik_options();
        let here = scratch.scene.world_poses_of(&scratch.config)[obj];
        let direction = wp.translation() - here.translation();
        let contact = generate_contact_point(
            &scratch.scene,
            &scratch.config,
            &task.target,
            manip,
            self.sampler.as_ref(),
            Some(direction),
            &mut self.rng,
            self.cfg.contact_attempts,
            &ik,
        );
        self.report.metrics.cp_seconds += t0.elapsed().as_secs_f64();
        let contact = match contact {
            Ok(c) => c,
            Err(err) => {
                // A tool held at a bad spot would fail every later attempt too.
                if let Some(cp) = fresh_grasp {
                    self.restore(cp);
                }
                return Ok(Err(match err {
                    ContactError::Exhausted { attempts } => format!("no reachable contact in {attempts} samples"),
                    e => e.to_string(),
                }));
            }
        };
        let preds = self.predicates(task, manip, contact.point.local, &wp, last)?;
        self.report.metrics.optimizer_calls += 1;
        let guess = contact.ik.config.q.clone();
        let step = self.solve_and_commit(preds, scratch, Some(guess), SubPathKind::Pick, &task.target, manip)?;
        if step.is_err() {
            if let Some(cp) = fresh_grasp {
                self.restore(cp);
            }
        } else {
            if m != e {
                self.report.metrics.tool_used = Some(manip.to_string());
            }
            let start = self.report.sub_paths.last().map_or(0, |s| s.start);
            self.report.contacts.push(ContactRecord {
                object: task.target.clone(),
                manipulator: manip.to_string(),
                point: contact.point,
                list_index,
                waypoint_index: wp_index,
                time_index: start + self.cfg.steps_per_phase,
            });
        }
        Ok(step)
    }

    /// Space left around a relocated obstacle so the end-effector fits
    /// between it and anything else.
    fn placement_room(&self) -> Result<f64, PlanError> {
        let e = self.scene.index_of(&self.order[0])?;
        let r = self.scene.frame(e).shape.as_ref().map_or(0.0, |s| s.circumscribed_radius());
        Ok(2.0 * (r + self.cfg.collision_margin).max(self.cfg.corridor_clearance).max(self.cfg.rrt.resolution))
    }

    fn ik_options(&self) -> IkOptions {
        IkOptions {
            collision_margin: self.cfg.collision_margin,
            solver: self.cfg.solver.clone(),
            ..IkOptions::default()
        }
    }

    fn grasp_tool(
        &mut self,
        scratch: Scratch,
        ee: &str,
        tool: &str,
        list_index: usize,
        wp_index: usize,
    ) -> Result<Step, PlanError> {
        let t0 = Instant::now();
        let ik = self.ik_options();
        let contact = generate_contact_point(
            &scratch.scene,
            &scratch.config,
            tool,
            ee,
            &PointCloudSampler::default(),
            None,
            &mut self.rng,
            self.cfg.contact_attempts,
            &ik,
        );
        self.report.metrics.cp_seconds += t0.elapsed().as_secs_f64();
        let contact = match contact {
            Ok(c) => c,
            Err(e) => return Ok(Err(e.to_string())),
        };
        let preds = vec![
            Predicate::Touch {
                manip: ee.into(),
                obj: tool.into(),
            },
            Predicate::ContactProximity {
                manip: ee.into(),
                obj: tool.into(),
                point: contact.point.local,
            },
            Predicate::Stable {
                manip: ee.into(),
                obj: tool.into(),
            },
        ];
        self.report.metrics.grasp_calls += 1;
        let guess = contact.ik.config.q.clone();
        let step = self.solve_and_commit(preds, scratch, Some(guess), SubPathKind::ToolGrasp, tool, ee)?;
        if step.is_ok() {
            let start = self.report.sub_paths.last().map_or(0, |s| s.start);
            self.report.contacts.push(ContactRecord {
                object: tool.into(),
                manipulator: ee.into(),
                point: contact.point,
                list_index,
                waypoint_index: wp_index,
                time_index: start + self.cfg.steps_per_phase,
            });
        }
        Ok(step)
    }

    /// Compiles and solves a sub-path from the scratch state. On success the
    /// scratch releases and the sub-path are committed.
    ///
    /// `guess` is a joint configuration reached at the end of the first
    /// phase; the initial trajectory interpolates to it and holds it.
    fn solve_and_commit(
        &mut self,
        preds: Vec<Predicate>,
        scratch: Scratch,
        guess: Option<Vec<f64>>,
        kind: SubPathKind,
        object: &str,
        manip: &str,
    ) -> Result<Step, PlanError> {
        let t0 = Instant::now();
        let skeleton = Skeleton::from_sequence(preds);
        let opts = CompileOptions {
            steps_per_phase: self.cfg.steps_per_phase,
            collision_margin: self.cfg.collision_margin,
            ..CompileOptions::default()
        };
        let mut problem = compile(&skeleton, &scratch.scene, &scratch.config, &opts)?;
        if let Some(q) = guess {
            let sp = self.cfg.steps_per_phase;
            let q0 = scratch.config.q.clone();
            for (t, x) in problem.problem.init.iter_mut().enumerate().skip(1) {
                let s = (t as f64 / sp as f64).min(1.0);
                for (d, v) in x.iter_mut().take(q.len()).enumerate() {
                    *v = q0[d] + s * (q[d] - q0[d]);
                }
            }
        }
        let result = solve_trajectory(&problem, &self.cfg.solver);
        self.report.metrics.komo_seconds += t0.elapsed().as_secs_f64();
        let traj = match result {
            Ok(t) => t,
            Err(e) => return Ok(Err(format!("optimizer: {e}"))),
        };
        if !traj.feasible {
            let worst = traj.feasibility_report(self.cfg.solver.eps_eq.min(self.cfg.solver.eps_ineq));
            return Ok(Err(match worst.first() {
                Some(v) => format!("infeasible sub-path ({} at t={}: {:.2e})", v.feature, v.time, v.violation),
                None => "infeasible sub-path".into(),
            }));
        }
        self.scene = scratch.scene;
        self.config = scratch.config;
        *self.report.path.last_mut().expect("nonempty path") = self.config.clone();
        self.report.switches.extend(scratch.events);
        self.commit(traj, kind, object, manip)?;
        Ok(Ok(()))
    }

    /// Appends a feasible sub-path and applies its switches.
    fn commit(&mut self, traj: Trajectory, kind: SubPathKind, object: &str, manip: &str) -> Result<(), PlanError> {
        let offset = self.now();
        for ev in &traj.switch_events {
            let mut at = traj.states[ev.time_index].clone();
            self.scene = self.scene.apply_attachment(ev, &mut at)?;
            let mut global = ev.clone();
            global.time_index += offset;
            self.report.switches.push(global);
        }
        self.report.sub_paths.push(SubPathRecord {
            kind,
            object: object.into(),
            manipulator: manip.into(),
            start: offset,
            end: offset + traj.horizon(),
            stable_drift: traj.stable_drift,
            max_eq_violation: traj.max_eq_violation,
            max_ineq_violation: traj.max_ineq_violation,
        });
        self.config = traj.states.last().expect("nonempty trajectory").clone();
        self.report.path.extend(traj.states.into_iter().skip(1));
        Ok(())
    }
}

/// Scene state with releases that are not yet part of the plan.
/// Committed state to roll back to; metrics are kept.
struct Checkpoint {
    scene: Scene,
    config: Configuration,
    path: usize,
    switches: usize,
    contacts: usize,
    sub_paths: usize,
}

impl From<&Run<'_>> for Checkpoint {
    fn from(run: &Run<'_>) -> Self {
        Self {
            scene: run.scene.clone(),
            config: run.config.clone(),
            path: run.report.path.len(),
            switches: run.report.switches.len(),
            contacts: run.report.contacts.len(),
            sub_paths: run.report.sub_paths.len(),
        }
    }
}

struct Scratch {
    scene: Scene,
    config: Configuration,
    events: Vec<AttachmentEvent>,
    time: usize,
}

impl From<&Run<'_>> for Scratch {
    fn from(run: &Run<'_>) -> Self {
        Self {
            scene: run.scene.clone(),
            config: run.config.clone(),
            events: Vec::new(),
            time: run.now(),
        }
    }
}

impl Scratch {
    /// Releases `child` from whatever holds it.
    fn detach(&mut self, child: usize) -> Result<(), PlanError> {
        let Some(att) = self.scene.attachment_of(child) else {
            return Ok(());
        };
        let ev = AttachmentEvent {
            time_index: self.time,
            kind: AttachmentKind::Detach,
            parent_id: self.scene.frame(att.parent).id.clone(),
            child_id: self.scene.frame(child).id.clone(),
            rel_pose: att.rel,
        };
        self.scene = self.scene.apply_attachment(&ev, &mut self.config)?;
        self.events.push(ev);
        Ok(())
    }
}

enum Failure {
    /// Worth retrying with denser waypoints.
    Retry(String),
    /// Retrying cannot help.
    Fatal(String),
}

/// World poses along a recorded path, applying switches as they occur.
///
/// Attach events capture the relative pose from the recorded state at their
/// time index; attached objects then follow their parent.
pub fn replay(
    scene: &Scene,
    path: &[Configuration],
    switches: &[AttachmentEvent],
) -> Result<Vec<Vec<Pose2>>, SceneError> {
    let mut scene = scene.clone();
    let mut events: Vec<&AttachmentEvent> = switches.iter().collect();
    events.sort_by_key(|e| e.time_index);
    let mut next = 0;
    let mut out = Vec::with_capacity(path.len());
    for (t, state) in path.iter().enumerate() {
        while next < events.len() && events[next].time_index == t {
            // Detach events record the state after release; the world poses
            // are unchanged either way.
            let mut c = state.clone();
            scene = scene.apply_attachment(events[next], &mut c)?;
            next += 1;
        }
        out.push(scene.world_poses_of(state));
    }
    Ok(out)
}
