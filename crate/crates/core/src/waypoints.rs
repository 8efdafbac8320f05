//! Object-only path planning in SE(2): RRT against static geometry,
//! smoothing with the trajectory optimizer, and arc-length interpolation
//! into waypoints.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::features::{Collision, SceneContext, SecondDifference};
use crate::geometry::{placed_distance, PlacedShape};
use crate::optimizer::{solve, FeatureKind, FnFeature, Problem, SolverSettings};
use crate::scalar::wrap_angle;
use crate::scene::{Bounds, Frame, FrameKind, Layout, Scene, SceneError};
use crate::{Configuration, Pose2, Shape, Vec2};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WaypointError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("`{0}` has no shape")]
    Shapeless(String),
    #[error("start pose is in collision with static geometry")]
    StartInCollision,
    #[error("goal pose is in collision with static geometry")]
    GoalInCollision,
    #[error("no path found after {nodes} nodes")]
    PlanningFailure { nodes: usize },
    #[error("waypoint spacing must be positive, got {0}")]
    InvalidSpacing(f64),
    #[error("path needs at least two poses")]
    ShortPath,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RrtSettings {
    /// Extension step in the SE(2) metric.
    pub step: f64,
    pub goal_bias: f64,
    /// Meters per radian in the metric; `None` uses the object's
    /// circumscribed radius.
    pub angular_weight: Option<f64>,
    /// Sampling region; `None` uses the scene bounds.
    pub bounds: Option<Bounds>,
    /// Edge sampling resolution δ.
    pub resolution: f64,
    pub goal_tolerance: (f64, f64),
    pub max_nodes: usize,
    pub seed: u64,
}

impl Default for RrtSettings {
    fn default() -> Self {
        Self {
            step: 0.05,
            goal_bias: 0.1,
            angular_weight: None,
            bounds: None,
            resolution: 0.01,
            goal_tolerance: (0.01, 0.05),
            max_nodes: 20_000,
            seed: 0,
        }
    }
}

/// Clearance of one object against fixed geometry.
#[derive(Debug, Clone)]
pub struct StaticChecker {
    shape: Shape,
    radius: f64,
    obstacles: Vec<(PlacedShape<f64>, Vec2, f64)>,
}

impl StaticChecker {
    /// Checks `obj_id` against static frames plus `extra` frames, placed as
    /// in `config`.
    pub fn new(scene: &Scene, config: &Configuration, obj_id: &str, extra: &[usize]) -> Result<Self, WaypointError> {
        let o = scene.index_of(obj_id)?;
        let shape = scene
            .frame(o)
            .shape
            .clone()
            .ok_or_else(|| WaypointError::Shapeless(obj_id.to_string()))?;
        let poses = scene.world_poses_of(config);
        let mut obstacles = Vec::new();
        for (i, f) in scene.frames().iter().enumerate() {
            if i == o || !(f.kind == FrameKind::Static || extra.contains(&i)) {
                continue;
            }
            if let Some(s) = &f.shape {
                let pose = scene.shape_pose(&poses, i);
                obstacles.push((PlacedShape::new(s, &pose), pose.translation(), s.circumscribed_radius()));
            }
        }
        let radius = shape.circumscribed_radius();
        Ok(Self {
            shape,
            radius,
            obstacles,
        })
    }

    pub fn object_radius(&self) -> f64 {
        self.radius
    }

    /// Smallest signed distance to any obstacle (`+∞` without obstacles).
    pub fn clearance(&self, pose: &Pose2) -> f64 {
        let placed = PlacedShape::new(&self.shape, pose);
        let c = pose.translation();
        let mut best = f64::INFINITY;
        for (obs, oc, r) in &self.obstacles {
            if c.dist(*oc) - r - self.radius >= best {
                continue;
            }
            best = best.min(placed_distance(&placed, obs).distance);
        }
        best
    }

    /// Whether the straight SE(2) motion from `a` to `b` keeps at least
    /// `min_clearance` at samples spaced `resolution` apart in the metric.
    pub fn motion_clear(&self, a: &Pose2, b: &Pose2, w_theta: f64, resolution: f64, min_clearance: f64) -> bool {
        let n = (metric(a, b, w_theta) / resolution).ceil().max(1.0) as usize;
        (0..=n).all(|k| self.clearance(&a.interpolate(b, k as f64 / n as f64)) >= min_clearance)
    }
}

/// Translation distance plus `w_theta` times the wrapped angle difference.
pub fn metric(a: &Pose2, b: &Pose2, w_theta: f64) -> f64 {
    a.translation().dist(b.translation()) + w_theta * wrap_angle(b.theta - a.theta).abs()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RrtResult {
    pub path: Vec<Pose2>,
    pub nodes: usize,
}

/// Grows an RRT for the object alone. Edges are accepted when samples at
/// spacing δ keep clearance δ/2, which bounds every intermediate pose away
/// from contact as long as the angular weight covers the object radius.
pub fn plan_object_path(
    scene: &Scene,
    config: &Configuration,
    obj_id: &str,
    start: Pose2,
    goal: Pose2,
    settings: &RrtSettings,
) -> Result<RrtResult, WaypointError> {
    let checker = StaticChecker::new(scene, config, obj_id, &[])?;
    plan_with_checker(&checker, &scene.bounds, start, goal, settings)
}

pub fn plan_with_checker(
    checker: &StaticChecker,
    scene_bounds: &Bounds,
    start: Pose2,
    goal: Pose2,
    settings: &RrtSettings,
) -> Result<RrtResult, WaypointError> {
    let w = settings.angular_weight.unwrap_or(checker.object_radius());
    let bounds = settings.bounds.unwrap_or(*scene_bounds);
    let delta = settings.resolution;
    let need = 0.5 * delta;
    let start_clearance = checker.clearance(&start);
    if start_clearance < 0.0 {
        return Err(WaypointError::StartInCollision);
    }
    if checker.clearance(&goal) < need {
        return Err(WaypointError::GoalInCollision);
    }
    // An object left in a tight spot may leave it without gaining clearance.
    let need_from = |i: usize| if i == 0 { need.min(start_clearance) } else { need };
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut nodes = vec![start];
    let mut parents: Vec<usize> = vec![0];
    if checker.motion_clear(&start, &goal, w, delta, need_from(0)) && metric(&start, &goal, w) <= settings.step {
        return Ok(RrtResult {
            path: vec![start, goal],
            nodes: 1,
        });
    }
    // Rejected extensions do not add nodes; cap the attempts as well.
    let mut attempts = 0usize;
    while nodes.len() < settings.max_nodes && attempts < 20 * settings.max_nodes {
        attempts += 1;
        let sample = if rng.gen::<f64>() < settings.goal_bias {
            goal
        } else {
            Pose2::new(
                rng.gen_range(bounds.min.x..=bounds.max.x),
                rng.gen_range(bounds.min.y..=bounds.max.y),
                rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
            )
        };
        let (near, d) = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (i, metric(n, &sample, w)))
            .fold((0, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best });
        let from = nodes[near];
        let new = if d <= settings.step {
            sample
        } else {
            from.interpolate(&sample, settings.step / d)
        };
        if !bounds.contains(new.translation()) || !checker.motion_clear(&from, &new, w, delta, need_from(near)) {
            continue;
        }
        nodes.push(new);
        parents.push(near);
        let idx = nodes.len() - 1;
        if metric(&new, &goal, w) <= settings.step && checker.motion_clear(&new, &goal, w, delta, need) {
            let mut path = vec![goal];
            let mut k = idx;
            loop {
                path.push(nodes[k]);
                if k == 0 {
                    break;
                }
                k = parents[k];
            }
            path.reverse();
            if path[path.len() - 2] == goal {
                path.pop();
            }
            return Ok(RrtResult { path, nodes: nodes.len() });
        }
    }
    Err(WaypointError::PlanningFailure { nodes: nodes.len() })
}

/// Makes consecutive angles continuous (no ±2π jumps).
pub fn unwrap_angles(path: &[Pose2]) -> Vec<[f64; 3]> {
    let mut out: Vec<[f64; 3]> = Vec::with_capacity(path.len());
    for p in path {
        let th = match out.last() {
            Some(prev) => prev[2] + wrap_angle(p.theta - prev[2]),
            None => p.theta,
        };
        out.push([p.x, p.y, th]);
    }
    out
}

/// Sum of squared second differences of the unwrapped path.
pub fn acceleration_cost(path: &[Pose2]) -> f64 {
    let u = unwrap_angles(path);
    u.windows(3)
        .map(|w| (0..3).map(|d| (w[2][d] - 2.0 * w[1][d] + w[0][d]).powi(2)).sum::<f64>())
        .sum()
}

/// Translational polyline length.
pub fn path_length(path: &[Pose2]) -> f64 {
    path.windows(2).map(|w| w[0].translation().dist(w[1].translation())).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothResult {
    pub path: Vec<Pose2>,
    /// True when the optimizer result was rejected and the raw path returned.
    pub fell_back: bool,
}

/// Smooths a raw path with an acceleration cost, keeping `margin` from
/// static geometry (plus the `extra` frames) and the endpoints pinned. Falls back to the raw path if
/// the result is infeasible, costlier, or fails the edge re-check.
pub fn smooth_path(
    scene: &Scene,
    config: &Configuration,
    obj_id: &str,
    extra: &[usize],
    raw: &[Pose2],
    margin: f64,
    rrt: &RrtSettings,
) -> Result<SmoothResult, WaypointError> {
    if raw.len() < 3 {
        return Ok(SmoothResult {
            path: raw.to_vec(),
            fell_back: false,
        });
    }
    let checker = StaticChecker::new(scene, config, obj_id, extra)?;
    let o = scene.index_of(obj_id)?;
    let shape = scene.frame(o).shape.clone().ok_or_else(|| WaypointError::Shapeless(obj_id.into()))?;

    // Reduced scene: the object plus fixed geometry, no robot.
    let poses = scene.world_poses_of(config);
    let mut frames = vec![Frame::new(obj_id, FrameKind::Movable).with_shape(shape)];
    for (i, f) in scene.frames().iter().enumerate() {
        if (f.kind == FrameKind::Static || extra.contains(&i)) && f.shape.is_some() && i != o {
            frames.push(
                Frame::new(&f.id, FrameKind::Static)
                    .at(poses[i])
                    .with_shape_at(f.shape.clone().expect("shape"), f.shape_offset),
            );
        }
    }
    let reduced = Scene::new(frames, scene.bounds, vec![])?;
    let layout = Layout {
        n_joints: 0,
        free_slots: vec![0],
    };
    let ctx = SceneContext::new(reduced.clone(), layout, vec![raw[0]]);
    let init: Vec<Vec<f64>> = unwrap_angles(raw).into_iter().map(|p| p.to_vec()).collect();
    let horizon = init.len() - 1;
    let mut problem = Problem::new(3, init);
    for d in 0..3 {
        problem.freeze(0, d);
        problem.freeze(horizon, d);
    }
    for t in 2..=horizon {
        problem.add(SecondDifference::acceleration(3, t, 1.0));
    }
    let pairs = reduced.collision_pairs(&BTreeSet::new());
    for t in 1..horizon {
        if let Some(c) = Collision::new(ctx.clone(), t, &pairs, margin) {
            problem.add(c);
        }
    }
    // Vertex constraints alone let edges cut corners; keep the samples the
    // edge re-check looks at clear as well.
    let w = rrt.angular_weight.unwrap_or(checker.object_radius());
    let edge_need = 0.5 * rrt.resolution + SolverSettings::default().eps_ineq;
    let shared = Arc::new(checker.clone());
    for t in 1..=horizon {
        let k = ((2.0 * metric(&raw[t - 1], &raw[t], w) / rrt.resolution).ceil() as usize).clamp(1, 12);
        let c = Arc::clone(&shared);
        problem.add(FnFeature::new(
            "edge_clearance",
            FeatureKind::Ineq,
            1,
            t,
            k,
            move |x: &[&[f64]], out: &mut [f64]| {
                let a = Pose2::new(x[0][0], x[0][1], x[0][2]);
                let b = Pose2::new(x[1][0], x[1][1], x[1][2]);
                for (i, o) in out.iter_mut().enumerate() {
                    let s = (i + 1) as f64 / (k + 1) as f64;
                    *o = edge_need - c.clearance(&a.interpolate(&b, s));
                }
            },
        ));
    }
    let fallback = || SmoothResult {
        path: raw.to_vec(),
        fell_back: true,
    };
    let Ok(sol) = solve(&problem, &SolverSettings::default()) else {
        return Ok(fallback());
    };
    let mut path: Vec<Pose2> = sol.states.iter().map(|s| Pose2::new(s[0], s[1], s[2])).collect();
    // Keep the exact endpoint values.
    path[0] = raw[0];
    path[horizon] = raw[horizon];
    let clear = path
        .windows(2)
        .all(|e| checker.motion_clear(&e[0], &e[1], w, rrt.resolution, 0.5 * rrt.resolution));
    if !sol.feasible || !clear || acceleration_cost(&path) > acceleration_cost(raw) {
        log::info!(
            "path smoothing rejected (feasible {}, clear {clear}, cost {:.3e} vs {:.3e}); using the raw path",
            sol.feasible,
            acceleration_cost(&path),
            acceleration_cost(raw)
        );
        return Ok(fallback());
    }
    Ok(SmoothResult { path, fell_back: false })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaypointList {
    pub waypoints: Vec<Pose2>,
    pub spacing: f64,
    pub source_path_length: f64,
}

/// Places `⌈length / L⌉ + 1` waypoints at equal arc-length spacing along the
/// path's translation, interpolating the angle along the shortest arc within
/// each segment.
pub fn interpolate_waypoints(path: &[Pose2], spacing: f64) -> Result<WaypointList, WaypointError> {
    if !(spacing > 0.0) {
        return Err(WaypointError::InvalidSpacing(spacing));
    }
    if path.len() < 2 {
        return Err(WaypointError::ShortPath);
    }
    let mut cum = vec![0.0];
    for w in path.windows(2) {
        let last = *cum.last().expect("nonempty");
        cum.push(last + w[0].translation().dist(w[1].translation()));
    }
    let length = *cum.last().expect("nonempty");
    let segments = ((length / spacing) - 1e-9).ceil().max(1.0) as usize;
    let step = length / segments as f64;
    let mut waypoints = Vec::with_capacity(segments + 1);
    let mut seg = 0;
    for k in 0..=segments {
        if k == 0 {
            waypoints.push(path[0]);
            continue;
        }
        if k == segments {
            waypoints.push(*path.last().expect("nonempty"));
            continue;
        }
        let s = step * k as f64;
        while seg + 1 < path.len() - 1 && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let u = if len > 0.0 { ((s - cum[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        waypoints.push(path[seg].interpolate(&path[seg + 1], u));
    }
    Ok(WaypointList {
        waypoints,
        spacing,
        source_path_length: length,
    })
}
