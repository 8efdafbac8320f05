//! Contact-point sampling on object boundaries and inverse-kinematics
//! screening of candidate points.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::features::{Collision, Deviation, JointLimits, PointDistance, SceneContext};
use crate::optimizer::{solve, FeatureKind, OptimizerError, Problem, SolverSettings};
use crate::scalar::wrap_angle;
use crate::scene::{Layout, Scene, SceneError};
use crate::{Configuration, Vec2};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ContactError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error("frame `{0}` has no shape")]
    Shapeless(String),
    #[error("no feasible contact point after {attempts} attempts")]
    Exhausted { attempts: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ContactSource {
    PointCloud,
    Heuristic,
    External,
}

impl ContactSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ContactSource::PointCloud => "pointcloud",
            ContactSource::Heuristic => "heuristic",
            ContactSource::External => "external",
        }
    }
}

/// A point on an object's boundary where a manipulator engages it.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactPoint {
    /// Position in the object frame.
    pub local: Vec2,
    /// World position when the point was generated.
    pub world: Vec2,
    /// Unit outward normal in the object frame.
    pub outward_normal: Vec2,
    pub source: ContactSource,
    /// Boundary parameter the point was generated from.
    pub u: f64,
}

impl ContactPoint {
    /// Contact point at boundary parameter `u` of `obj` in `config`.
    pub fn at_param(
        scene: &Scene,
        config: &Configuration,
        obj: usize,
        u: f64,
        source: ContactSource,
    ) -> Result<Self, ContactError> {
        let frame = scene.frame(obj);
        let shape = frame.shape.as_ref().ok_or_else(|| ContactError::Shapeless(frame.id.clone()))?;
        let (p, n) = shape.boundary_point_and_normal(u);
        let local = frame.shape_offset.transform_point(p);
        let outward_normal = frame.shape_offset.transform_vector(n);
        let world = scene.world_poses_of(config)[obj].transform_point(local);
        Ok(Self {
            local,
            world,
            outward_normal,
            source,
            u,
        })
    }
}

/// Proposes boundary parameters `u ∈ [0, 1)` of an object's shape.
///
/// `direction` is the object's next motion in world coordinates, if known.
pub trait Sampler {
    fn name(&self) -> &str;
    fn source(&self) -> ContactSource;
    fn propose(
        &self,
        scene: &Scene,
        config: &Configuration,
        obj: usize,
        direction: Option<Vec2>,
        rng: &mut dyn RngCore,
    ) -> f64;
}

fn clamp_unit(u: f64) -> f64 {
    if u.is_finite() && (0.0..1.0).contains(&u) {
        u
    } else if u.is_finite() {
        let f = u - u.floor();
        if f >= 1.0 {
            0.0
        } else {
            f
        }
    } else {
        0.0
    }
}

/// Picks one point of a stratified boundary point cloud.
#[derive(Debug, Clone)]
pub struct PointCloudSampler {
    pub resolution: usize,
}

impl Default for PointCloudSampler {
    fn default() -> Self {
        Self { resolution: 64 }
    }
}

impl Sampler for PointCloudSampler {
    fn name(&self) -> &str {
        "pointcloud"
    }
    fn source(&self) -> ContactSource {
        ContactSource::PointCloud
    }
    fn propose(&self, _: &Scene, _: &Configuration, _: usize, _: Option<Vec2>, rng: &mut dyn RngCore) -> f64 {
        let n = self.resolution.max(1);
        let k = rng.gen_range(0..n);
        clamp_unit((k as f64 + rng.gen::<f64>()) / n as f64)
    }
}

/// Favors the side of the object facing away from its next motion, where a
/// push in that direction would be applied.
#[derive(Debug, Clone)]
pub struct HeuristicSampler {
    /// Standard deviation of the angular spread around the back direction.
    pub spread: f64,
}

impl Default for HeuristicSampler {
    fn default() -> Self {
        Self { spread: PI / 6.0 }
    }
}

impl Sampler for HeuristicSampler {
    fn name(&self) -> &str {
        "heuristic"
    }
    fn source(&self) -> ContactSource {
        ContactSource::Heuristic
    }
    fn propose(
        &self,
        scene: &Scene,
        config: &Configuration,
        obj: usize,
        direction: Option<Vec2>,
        rng: &mut dyn RngCore,
    ) -> f64 {
        let frame = scene.frame(obj);
        let (Some(shape), Some(dir)) = (frame.shape.as_ref(), direction.and_then(|d| d.normalized())) else {
            return clamp_unit(rng.gen::<f64>());
        };
        let shape_pose = scene.shape_pose(&scene.world_poses_of(config), obj);
        let back = (-dir).rotate(-shape_pose.theta).angle();
        let noise = Normal::new(0.0, self.spread.max(0.0)).map_or(0.0, |n| n.sample(rng));
        clamp_unit(shape.boundary_param_at_angle(back + noise))
    }
}

/// Draws from candidate parameters supplied per object, e.g. by a learned
/// model. Objects without candidates are sampled uniformly.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalSampler {
    pub candidates: BTreeMap<String, Vec<f64>>,
}

impl ExternalSampler {
    /// Parses lines of `object_id u`. Blank lines and `#` comments are
    /// skipped.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut candidates: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut tok = line.split_whitespace();
            let (Some(id), Some(u), None) = (tok.next(), tok.next(), tok.next()) else {
                return Err(format!("line {}: expected `object_id u`", n + 1));
            };
            let u: f64 = u.parse().map_err(|_| format!("line {}: bad number `{u}`", n + 1))?;
            if !(0.0..1.0).contains(&u) {
                return Err(format!("line {}: u = {u} outside [0, 1)", n + 1));
            }
            candidates.entry(id.to_string()).or_default().push(u);
        }
        Ok(Self { candidates })
    }
}

impl Sampler for ExternalSampler {
    fn name(&self) -> &str {
        "external"
    }
    fn source(&self) -> ContactSource {
        ContactSource::External
    }
    fn propose(&self, scene: &Scene, _: &Configuration, obj: usize, _: Option<Vec2>, rng: &mut dyn RngCore) -> f64 {
        match self.candidates.get(&scene.frame(obj).id) {
            Some(list) if !list.is_empty() => clamp_unit(list[rng.gen_range(0..list.len())]),
            _ => clamp_unit(rng.gen::<f64>()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkOptions {
    /// Clearance kept from everything except the touched object.
    pub collision_margin: f64,
    /// Weight of the deviation from the current joint angles.
    pub motion_weight: f64,
    /// Number of patterned starts besides the current configuration.
    pub extra_starts: usize,
    /// Starts drawn uniformly within the joint limits after the patterned
    /// ones, seeded by `start_seed`.
    pub random_starts: usize,
    pub start_seed: u64,
    pub solver: SolverSettings,
}

impl Default for IkOptions {
    fn default() -> Self {
        Self {
            collision_margin: 0.005,
            motion_weight: 0.1,
            extra_starts: 6,
            random_starts: 6,
            start_seed: 0,
            solver: SolverSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkResult {
    pub feasible: bool,
    pub config: Configuration,
    /// Largest constraint violation of the returned configuration.
    pub violation: f64,
}

/// Solves for joint angles that put the manipulator's surface on `target`
/// while respecting joint limits and keeping clear of everything else.
///
/// `touched` is the frame carrying the target point; contact with it (and
/// with the link holding the manipulator) is allowed. Starts from the
/// current configuration, then from configurations aimed at the target;
/// the first feasible solution wins. Among infeasible ones the least
/// violating is returned.
pub fn check_contact_feasibility(
    scene: &Scene,
    config: &Configuration,
    manip_id: &str,
    touched: Option<&str>,
    target: Vec2,
    opts: &IkOptions,
) -> Result<IkResult, ContactError> {
    scene.validate_configuration(config)?;
    let manip = scene.index_of(manip_id)?;
    if scene.frame(manip).shape.is_none() {
        return Err(ContactError::Shapeless(manip_id.to_string()));
    }
    let touched = touched.map(|t| scene.index_of(t)).transpose()?;
    let layout = Layout::joints_only(scene);
    let n = layout.n_joints;
    let ctx = SceneContext::new(scene.clone(), layout, scene.object_slots(config));

    let mut allowed = BTreeSet::new();
    if let Some(o) = touched {
        allowed.insert((manip.min(o), manip.max(o)));
        if let Some(p) = scene.carrier_link(manip) {
            allowed.insert((p.min(o), p.max(o)));
        }
    }
    let poses = scene.world_poses_of(config);
    let pairs = scene.collision_pairs(&BTreeSet::new());
    let margins: Vec<f64> = pairs
        .iter()
        .map(|&(a, b)| {
            let d = scene.pair_distance(&poses, a, b).distance;
            if allowed.contains(&(a, b)) {
                0.0
            } else if d < opts.collision_margin {
                d.min(0.0)
            } else {
                opts.collision_margin
            }
        })
        .collect();
    let q0 = config.q.clone();

    let build = |start: Vec<f64>| {
        let mut p = Problem::new(n, vec![start]);
        p.add(PointDistance::new(
            ctx.clone(),
            "contact_touch",
            FeatureKind::Eq,
            0,
            manip,
            None,
            target,
            1.0,
        ));
        if let Some(c) = Collision::with_margins(ctx.clone(), 0, &pairs, &margins) {
            p.add(c);
        }
        if n > 0 {
            p.add(JointLimits::new(scene.joint_limits(), 0));
            p.add(Deviation::new(0, q0.clone(), (0..n).collect(), opts.motion_weight));
        }
        p
    };

    let mut best: Option<IkResult> = None;
    for start in ik_starts(scene, config, manip, target, opts) {
        let sol = solve(&build(start), &opts.solver)?;
        let mut c = config.clone();
        c.q = sol.states[0].clone();
        scene.sync_attached(&mut c);
        let violation = sol.max_eq.max(sol.max_ineq);
        let candidate = IkResult {
            feasible: sol.feasible,
            config: c,
            violation,
        };
        if candidate.feasible {
            return Ok(candidate);
        }
        if best.as_ref().map_or(true, |b| violation < b.violation) {
            best = Some(candidate);
        }
    }
    Ok(best.unwrap_or(IkResult {
        feasible: false,
        config: config.clone(),
        violation: f64::INFINITY,
    }))
}

/// The current joint angles, then joint patterns spread over the limits with
/// the base joint turned towards the target, nearest reach first.
fn ik_starts(scene: &Scene, config: &Configuration, manip: usize, target: Vec2, opts: &IkOptions) -> Vec<Vec<f64>> {
    let mut starts = vec![config.q.clone()];
    let chain = scene.chain(manip).joints;
    let Some(&base) = chain.last() else {
        return starts;
    };
    let base_frame = scene.joint_frame(base);
    let limits = scene.joint_limits();
    let fractions = [0.0, 0.3, 0.6, 0.85];
    let others: Vec<usize> = chain.iter().copied().filter(|&j| j != base).collect();
    let mut candidates: Vec<(f64, Vec<f64>)> = Vec::new();
    for &f in &fractions {
        for sign in [1.0, -1.0] {
            if f == 0.0 && sign < 0.0 {
                continue;
            }
            let mut q = config.q.clone();
            for &j in &others {
                let lim = &limits[j];
                let mid = 0.5 * (lim.lo + lim.hi);
                let half = 0.5 * (lim.hi - lim.lo);
                q[j] = mid + sign * f * half.min(PI);
            }
            let poses = scene.world_poses(&q, &scene.object_slots(config));
            let origin = poses[base_frame].translation();
            let at = scene.shape_pose(&poses, manip).translation() - origin;
            let want = target - origin;
            let lim = &limits[base];
            q[base] = (q[base] + wrap_angle(want.angle() - at.angle())).clamp(lim.lo, lim.hi);
            let gap = (at.norm() - want.norm()).abs();
            candidates.push((gap, q));
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
    starts.extend(candidates.into_iter().take(opts.extra_starts).map(|(_, q)| q));
    let mut rng = ChaCha8Rng::seed_from_u64(opts.start_seed);
    for _ in 0..opts.random_starts {
        let mut q = config.q.clone();
        for &j in &chain {
            let lim = &limits[j];
            q[j] = rng.gen_range(lim.lo.max(-PI)..=lim.hi.min(PI));
        }
        starts.push(q);
    }
    starts
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactOutcome {
    pub point: ContactPoint,
    /// Configuration touching the point.
    pub ik: IkResult,
    pub attempts: usize,
}

/// Samples boundary points of `obj_id` until the manipulator can touch one.
#[allow(clippy::too_many_arguments)]
pub fn generate_contact_point(
    scene: &Scene,
    config: &Configuration,
    obj_id: &str,
    manip_id: &str,
    sampler: &dyn Sampler,
    direction: Option<Vec2>,
    rng: &mut dyn RngCore,
    max_attempts: usize,
    opts: &IkOptions,
) -> Result<ContactOutcome, ContactError> {
    let obj = scene.index_of(obj_id)?;
    if scene.frame(obj).shape.is_none() {
        return Err(ContactError::Shapeless(obj_id.to_string()));
    }
    scene.index_of(manip_id)?;
    for attempt in 1..=max_attempts {
        let u = sampler.propose(scene, config, obj, direction, rng);
        let point = ContactPoint::at_param(scene, config, obj, u, sampler.source())?;
        let attempt_opts = IkOptions {
            start_seed: rng.next_u64(),
            ..opts.clone()
        };
        let ik = check_contact_feasibility(scene, config, manip_id, Some(obj_id), point.world, &attempt_opts)?;
        log::debug!("contact attempt {attempt} on {obj_id} at u={u:.4}: feasible={}", ik.feasible);
        if ik.feasible {
            return Ok(ContactOutcome {
                point,
                ik,
                attempts: attempt,
            });
        }
    }
    Err(ContactError::Exhausted {
        attempts: max_attempts,
    })
}
