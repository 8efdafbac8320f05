//! Scene-aware features: collision avoidance, joint limits, touch, relative
//! pose stability, goal poses, smoothness and contact proximity.
//!
//! All features read states laid out by a shared [`SceneContext`]. Features
//! involving distances between shapes differentiate through the witness
//! points of the distance query.

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::geometry::point_distance;
use crate::optimizer::{Feature, FeatureKind, Matrix};
use crate::scene::{Joint, Layout, Scene};
use crate::{DistanceResult, Pose2, Vec2};

/// Scene, variable layout and the poses of objects that are not variables.
#[derive(Debug, Clone)]
pub struct SceneContext {
    pub scene: Scene,
    pub layout: Layout,
    pub base_slots: Vec<Pose2>,
}

impl SceneContext {
    pub fn new(scene: Scene, layout: Layout, base_slots: Vec<Pose2>) -> Arc<Self> {
        Arc::new(Self {
            scene,
            layout,
            base_slots,
        })
    }

    pub fn world_poses(&self, x: &[f64]) -> Vec<Pose2> {
        self.layout.world_poses(&self.scene, x, &self.base_slots)
    }

    /// State coordinates a frame's pose depends on.
    pub fn support_of(&self, frame: usize) -> Vec<usize> {
        let chain = self.scene.chain(frame);
        let mut s: Vec<usize> = chain.joints.into_iter().filter(|&j| j < self.layout.n_joints).collect();
        if let Some(o) = chain.object_slot.and_then(|slot| self.layout.slot_offset(slot)) {
            s.extend([o, o + 1, o + 2]);
        }
        s.sort_unstable();
        s
    }

    /// Whether any variable moves the frame.
    pub fn is_variable(&self, frame: usize) -> bool {
        !self.support_of(frame).is_empty()
    }

    fn distance(&self, poses: &[Pose2], a: usize, b: usize) -> DistanceResult {
        self.scene.pair_distance(poses, a, b)
    }

    /// Adds `sign · n · (J_b(p_b) − J_a(p_a))` into jacobian row `row`,
    /// columns offset by `col0`.
    #[allow(clippy::too_many_arguments)]
    fn add_distance_gradient(
        &self,
        poses: &[Pose2],
        a: usize,
        b: usize,
        r: &DistanceResult,
        sign: f64,
        jac: &mut Matrix<f64>,
        row: usize,
        col0: usize,
    ) {
        for (i, col) in self.layout.point_jacobian(&self.scene, poses, b, r.witness_b) {
            jac.add(row, col0 + i, sign * r.normal.dot(col));
        }
        for (i, col) in self.layout.point_jacobian(&self.scene, poses, a, r.witness_a) {
            jac.add(row, col0 + i, -sign * r.normal.dot(col));
        }
    }
}

fn union(a: &[usize], b: &[usize]) -> Vec<usize> {
    let s: BTreeSet<usize> = a.iter().chain(b).copied().collect();
    s.into_iter().collect()
}

/// Pair distances beyond this gap are replaced by a bounding-circle
/// estimate, which is cheaper and still a lower bound on the true distance.
const BROADPHASE_GAP: f64 = 0.25;

/// `margin − d(a, b) ≤ 0` for every listed pair at one time step.
pub struct Collision {
    name: String,
    ctx: Arc<SceneContext>,
    time: usize,
    pairs: Vec<(usize, usize)>,
    radii: Vec<(f64, f64)>,
    margins: Vec<f64>,
    support: Vec<usize>,
}

impl Collision {
    /// Keeps only pairs in which at least one frame moves with the variables.
    pub fn new(ctx: Arc<SceneContext>, time: usize, pairs: &[(usize, usize)], margin: f64) -> Option<Self> {
        Self::with_margins(ctx, time, pairs, &vec![margin; pairs.len()])
    }

    /// Like [`Collision::new`] with one margin per pair.
    pub fn with_margins(
        ctx: Arc<SceneContext>,
        time: usize,
        pairs: &[(usize, usize)],
        margins: &[f64],
    ) -> Option<Self> {
        let (pairs, margins): (Vec<(usize, usize)>, Vec<f64>) = pairs
            .iter()
            .copied()
            .zip(margins.iter().copied())
            .filter(|&((a, b), _)| ctx.is_variable(a) || ctx.is_variable(b))
            .unzip();
        if pairs.is_empty() {
            return None;
        }
        let radius = |f: usize| ctx.scene.frame(f).shape.as_ref().map_or(0.0, |s| s.circumscribed_radius());
        let radii = pairs.iter().map(|&(a, b)| (radius(a), radius(b))).collect();
        let mut support = Vec::new();
        for &(a, b) in &pairs {
            support = union(&support, &union(&ctx.support_of(a), &ctx.support_of(b)));
        }
        Some(Self {
            name: "collision".into(),
            ctx,
            time,
            pairs,
            radii,
            margins,
            support,
        })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    fn run(&self, x: &[f64], out: &mut [f64], mut jac: Option<&mut Matrix<f64>>) {
        let poses = self.ctx.world_poses(x);
        for (k, &(a, b)) in self.pairs.iter().enumerate() {
            let (ra, rb) = self.radii[k];
            let ca = self.ctx.scene.shape_pose(&poses, a).translation();
            let cb = self.ctx.scene.shape_pose(&poses, b).translation();
            let gap = ca.dist(cb) - ra - rb;
            if gap > BROADPHASE_GAP {
                out[k] = self.margins[k] - gap;
                if let Some(j) = jac.as_deref_mut() {
                    let n = (cb - ca) * (1.0 / ca.dist(cb));
                    let r = DistanceResult {
                        distance: gap,
                        witness_a: ca,
                        witness_b: cb,
                        normal: n,
                    };
                    self.ctx.add_distance_gradient(&poses, a, b, &r, -1.0, j, k, 0);
                }
                continue;
            }
            let r = self.ctx.distance(&poses, a, b);
            out[k] = self.margins[k] - r.distance;
            if let Some(j) = jac.as_deref_mut() {
                self.ctx.add_distance_gradient(&poses, a, b, &r, -1.0, j, k, 0);
            }
        }
    }
}

impl Feature<f64> for Collision {
    fn name(&self) -> &str {
        &self.name
    }
    fn kind(&self) -> FeatureKind {
        FeatureKind::Ineq
    }
    fn order(&self) -> usize {
        0
    }
    fn time_index(&self) -> usize {
        self.time
    }
    fn dim(&self) -> usize {
        self.pairs.len()
    }
    fn support(&self) -> Option<&[usize]> {
        Some(&self.support)
    }
    fn eval(&self, states: &[&[f64]], out: &mut [f64]) {
        self.run(states[0], out, None)
    }
    fn eval_jacobian(&self, states: &[&[f64]], out: &mut [f64], jac: &mut Matrix<f64>) -> bool {
        self.run(states[0], out, Some(jac));
        true
    }
}

/// `lo − q ≤ 0` and `q − hi ≤ 0` for every joint.
pub struct JointLimits {
    time: usize,
    limits: Vec<Joint>,
    support: Vec<usize>,
}

impl JointLimits {
    pub fn new(limits: Vec<Joint>, time: usize) -> Self {
        let support = (0..limits.len()).collect();
        Self { time, limits, support }
    }
}

impl Feature<f64> for JointLimits {
    fn name(&self) -> &str {
        "joint_limits"
    }
    fn kind(&self) -> FeatureKind {
        FeatureKind::Ineq
    }
    fn order(&self) -> usize {
        0
    }
    fn time_index(&self) -> usize {
        self.time
    }
    fn dim(&self) -> usize {
        2 * self.limits.len()
    }
    fn support(&self) -> Option<&[usize]> {
        Some(&self.support)
    }
    fn eval(&self, states: &[&[f64]], out: &mut [f64]) {
        for (i, j) in self.limits.iter().enumerate() {
            out[2 * i] = j.lo - states[0][i];
            out[2 * i + 1] = states[0][i] - j.hi;
        }
    }
    fn eval_jacobian(&self, states: &[&[f64]], out: &mut [f64], jac: &mut Matrix<f64>) -> bool {
        self.eval(states, out);
        for i in 0..self.limits.len() {
            jac.set(2 * i, i, -1.0);
            jac.set(2 * i + 1, i, 1.0);
        }
        true
    }
}

/// Signed distance between two frames' shapes, as an equality: the shapes
/// touch.
pub struct Touch {
    name: String,
    ctx: Arc<SceneContext>,
    time: usize,
    a: usize,
    b: usize,
    support: Vec<usize>,
}

impl Touch {
    pub fn new(ctx: Arc<SceneContext>, time: usize, a: usize, b: usize) -> Self {
        let support = union(&ctx.support_of(a), &ctx.support_of(b));
        let name = format!("touch({},{})", ctx.scene.frame(a).id, ctx.scene.frame(b).id);
        Self {
            name,
            ctx,
            time,
            a,
            b,
            support,
        }
    }
}

impl Feature<f64> for Touch {
    fn name(&self) -> &str {
        &self.name
    }
    fn kind(&self) -> FeatureKind {
        FeatureKind::Eq
    }
    fn order(&self) -> usize {
        0
    }
    fn time_index(&self) -> usize {
        self.time
    }
    fn dim(&self) -> usize {
        1
    }
    fn support(&self) -> Option<&[usize]> {
        Some(&self.support)
    }
    fn eval(&self, states: &[&[f64]], out: &mut [f64]) {
        let poses = self.ctx.world_poses(states[0]);
        out[0] = self.ctx.distance(&poses, self.a, self.b).distance;
    }
    fn eval_jacobian(&self, states: &[&[f64]], out: &mut [f64], jac: &mut Matrix<f64>) -> bool {
        let poses = self.ctx.world_poses(states[0]);
        let r = self.ctx.distance(&poses, self.a, self.b);
        out[0] = r.distance;
        self.ctx.add_distance_gradient(&poses, self.a, self.b, &r, 1.0, jac, 0, 0);
        true
    }
}

/// Signed distance from a frame's shape to a point fixed on another frame
/// (or in the world when `point_frame` is `None`).
pub struct PointDistance {
    name: String,
    ctx: Arc<SceneContext>,
    kind: FeatureKind,
    time: usize,
    frame: usize,
    point_frame: Option<usize>,
    local: Vec2,
    weight: f64,
    support: Vec<usize>,
}

impl PointDistance {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ctx: Arc<SceneContext>,
        name: impl Into<String>,
        kind: FeatureKind,
        time: usize,
        frame: usize,
        point_frame: Option<usize>,
        local: Vec2,
        weight: f64,
    ) -> Self {
        let mut support = ctx.support_of(frame);
        if let Some(pf) = point_frame {
            support = union(&support, &ctx.support_of(pf));
        }
        Self {
            name: name.into(),
            ctx,
            kind,
            time,
            frame,
            point_frame,
            local,
            weight,
            support,
        }
    }

    fn run(&self, x: &[f64], out: &mut [f64], jac: Option<&mut Matrix<f64>>) {
        let poses = self.ctx.world_poses(x);
        let p = match self.point_frame {
            Some(pf) => poses[pf].transform_point(self.local),
            None => self.local,
        };
        let shape = self.ctx.scene.frame(self.frame).shape.as_ref().expect("shaped frame");
        let r = point_distance(shape, &self.ctx.scene.shape_pose(&poses, self.frame), p);
        out[0] = self.weight * r.distance;
        if let Some(jac) = jac {
            let layout = &self.ctx.layout;
            if let Some(pf) = self.point_frame {
                for (i, col) in layout.point_jacobian(&self.ctx.scene, &poses, pf, p) {
                    jac.add(0, i, self.weight * r.normal.dot(col));
                }
            }
            for (i, col) in layout.point_jacobian(&self.ctx.scene, &poses, self.frame, r.witness_a) {
                jac.add(0, i, -self.weight * r.normal.dot(col));
            }
        }
    }
}

impl Feature<f64> for PointDistance {
    fn name(&self) -> &str {
        &self.name
    }
    fn kind(&self) -> FeatureKind {
        self.kind
    }
    fn order(&self) -> usize {
        0
    }
    fn time_index(&self) -> usize {
        self.time
    }
    fn dim(&self) -> usize {
        1
    }
    fn support(&self) -> Option<&[usize]> {
        Some(&self.support)
    }
    fn eval(&self, states: &[&[f64]], out: &mut [f64]) {
        self.run(states[0], out, None)
    }
    fn eval_jacobian(&self, states: &[&[f64]], out: &mut [f64], jac: &mut Matrix<f64>) -> bool {
        self.run(states[0], out, Some(jac));
        true
    }
}

/// World pose of a frame equals a goal pose: `(Δx, Δy, Δθ)` with the angle
/// wrapped.
pub struct PoseEq {
    name: String,
    ctx: Arc<SceneContext>,
    time: usize,
    frame: usize,
    goal: Pose2,
    support: Vec<usize>,
}

impl PoseEq {
    pub fn new(ctx: Arc<SceneContext>, time: usize, frame: usize, goal: Pose2) -> Self {
        let support = ctx.support_of(frame);
        let name = format!("poseEq({})", ctx.scene.frame(frame).id);
        Self {
            name,
            ctx,
            time,
            frame,
            goal,
            support,
        }
    }
}

impl Feature<f64> for PoseEq {
    fn name(&self) -> &str {
        &self.name
    }
    fn kind(&self) -> FeatureKind {
        FeatureKind::Eq
    }
    fn order(&self) -> usize {
        0
    }
    fn time_index(&self) -> usize {
        self.time
    }
    fn dim(&self) -> usize {
        3
    }
    fn support(&self) -> Option<&[usize]> {
        Some(&self.support)
    }
    fn eval(&self, states: &[&[f64]], out: &mut [f64]) {
        let p = self.ctx.world_poses(states[0])[self.frame];
        out.copy_from_slice(&p.delta(&self.goal));
    }
}

/// Relative pose between parent and child is the same at `t − 1` and `t`.
pub struct StableRel {
    name: String,
    ctx: Arc<SceneContext>,
    time: usize,
    parent: usize,
    child: usize,
    support: Vec<usize>,
}

impl StableRel {
    pub fn new(ctx: Arc<SceneContext>, time: usize, parent: usize, child: usize) -> Self {
        let support = union(&ctx.support_of(parent), &ctx.support_of(child));
        let name = format!(
            "stable({},{})",
            ctx.scene.frame(parent).id,
            ctx.scene.frame(child).id
        );
        Self {
            name,
            ctx,
            time,
            parent,
            child,
            support,
        }
    }

    fn rel(&self, x: &[f64]) -> Pose2 {
        let poses = self.ctx.world_poses(x);
        poses[self.parent].relative(&poses[self.child])
    }
}

impl Feature<f64> for StableRel {
    fn name(&self) -> &str {
        &self.name
    }
    fn kind(&self) -> FeatureKind {
        FeatureKind::Eq
    }
    fn order(&self) -> usize {
        1
    }
    fn time_index(&self) -> usize {
        self.time
    }
    fn dim(&self) -> usize {
        3
    }
    fn support(&self) -> Option<&[usize]> {
        Some(&self.support)
    }
    fn eval(&self, states: &[&[f64]], out: &mut [f64]) {
        let before = self.rel(states[0]);
        let after = self.rel(states[1]);
        out.copy_from_slice(&before.delta(&after));
    }
}

/// Weighted second difference `w (x_t − 2x_{t−1} + x_{t−2})` over a set of
/// coordinates. As a cost it penalizes acceleration; as an equality on the
/// step after a switch it makes the finite-difference velocity continuous.
pub struct SecondDifference {
    name: String,
    kind: FeatureKind,
    time: usize,
    dofs: Vec<usize>,
    n: usize,
    weight: f64,
}

impl SecondDifference {
    pub fn acceleration(n: usize, time: usize, weight: f64) -> Self {
        Self {
            name: "acceleration".into(),
            kind: FeatureKind::Cost,
            time,
            dofs: (0..n).collect(),
            n,
            weight,
        }
    }

    pub fn velocity_continuity(n: usize, time: usize, dofs: Vec<usize>) -> Self {
        Self {
            name: "switch_continuity".into(),
            kind: FeatureKind::Eq,
            time,
            dofs,
            n,
            weight: 1.0,
        }
    }
}

impl Feature<f64> for SecondDifference {
    fn name(&self) -> &str {
        &self.name
    }
    fn kind(&self) -> FeatureKind {
        self.kind
    }
    fn order(&self) -> usize {
        2
    }
    fn time_index(&self) -> usize {
        self.time
    }
    fn dim(&self) -> usize {
        self.dofs.len()
    }
    fn support(&self) -> Option<&[usize]> {
        Some(&self.dofs)
    }
    fn eval(&self, states: &[&[f64]], out: &mut [f64]) {
        for (r, &d) in self.dofs.iter().enumerate() {
            out[r] = self.weight * (states[2][d] - 2.0 * states[1][d] + states[0][d]);
        }
    }
    fn eval_jacobian(&self, states: &[&[f64]], out: &mut [f64], jac: &mut Matrix<f64>) -> bool {
        self.eval(states, out);
        for (r, &d) in self.dofs.iter().enumerate() {
            jac.set(r, d, self.weight);
            jac.set(r, self.n + d, -2.0 * self.weight);
            jac.set(r, 2 * self.n + d, self.weight);
        }
        true
    }
}

/// `w (x − x_ref)` on a set of coordinates.
pub struct Deviation {
    time: usize,
    reference: Vec<f64>,
    dofs: Vec<usize>,
    weight: f64,
}

impl Deviation {
    pub fn new(time: usize, reference: Vec<f64>, dofs: Vec<usize>, weight: f64) -> Self {
        Self {
            time,
            reference,
            dofs,
            weight,
        }
    }
}

impl Feature<f64> for Deviation {
    fn name(&self) -> &str {
        "deviation"
    }
    fn kind(&self) -> FeatureKind {
        FeatureKind::Cost
    }
    fn order(&self) -> usize {
        0
    }
    fn time_index(&self) -> usize {
        self.time
    }
    fn dim(&self) -> usize {
        self.dofs.len()
    }
    fn support(&self) -> Option<&[usize]> {
        Some(&self.dofs)
    }
    fn eval(&self, states: &[&[f64]], out: &mut [f64]) {
        for (r, &d) in self.dofs.iter().enumerate() {
            out[r] = self.weight * (states[0][d] - self.reference[d]);
        }
    }
    fn eval_jacobian(&self, states: &[&[f64]], out: &mut [f64], jac: &mut Matrix<f64>) -> bool {
        self.eval(states, out);
        for (r, &d) in self.dofs.iter().enumerate() {
            jac.set(r, d, self.weight);
        }
        true
    }
}
