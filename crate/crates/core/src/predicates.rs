//! Skeletons of symbolic predicates and their compilation into trajectory
//! optimization problems.

use std::collections::BTreeSet;
use std::fmt;

use crate::features::{Collision, JointLimits, PointDistance, PoseEq, SceneContext, SecondDifference, StableRel, Touch};
use crate::optimizer::{FeatureKind, TrajectoryProblem};
use crate::scene::{AttachmentEvent, AttachmentKind, Layout, Scene, SceneError};
use crate::{Configuration, Pose2, Vec2};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PredicateError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("malformed skeleton: {0}")]
    Malformed(String),
    #[error("frame `{0}` has no shape")]
    Shapeless(String),
    #[error("frame `{0}` is not movable")]
    NotMovable(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    /// Surfaces of the two frames meet at the end of the phase.
    Touch { manip: String, obj: String },
    /// `obj` moves rigidly with `manip` from the end of the phase on.
    Stable { manip: String, obj: String },
    /// World pose of `obj` equals `target` at the end of the phase.
    PoseEq { obj: String, target: Pose2 },
    /// Cost pulling the manipulator surface to a point given in `obj`'s
    /// frame at the end of the phase.
    ContactProximity { manip: String, obj: String, point: Vec2 },
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Touch { manip, obj } => write!(f, "(touch {manip} {obj})"),
            Predicate::Stable { manip, obj } => write!(f, "(stable {manip} {obj})"),
            Predicate::PoseEq { obj, target } => {
                write!(f, "(poseEq {obj} {} {} {})", target.x, target.y, target.theta)
            }
            Predicate::ContactProximity { manip, obj, point } => {
                write!(f, "(contact {manip} {obj} {} {})", point.x, point.y)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredicateInstance {
    /// Phase index, starting at 1.
    pub phase: usize,
    pub predicate: Predicate,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Skeleton {
    pub entries: Vec<PredicateInstance>,
}

impl Skeleton {
    /// Assigns phases to a predicate sequence: one phase per predicate,
    /// except that `stable a b` directly after `touch a b` (or a contact cost
    /// on the same pair) shares the preceding phase.
    pub fn from_sequence(preds: Vec<Predicate>) -> Self {
        let mut entries: Vec<PredicateInstance> = Vec::with_capacity(preds.len());
        let mut phase = 0;
        for p in preds {
            let fold = match (&p, entries.last().map(|e| &e.predicate)) {
                (Predicate::Stable { manip, obj }, Some(Predicate::Touch { manip: m, obj: o }))
                | (Predicate::Stable { manip, obj }, Some(Predicate::ContactProximity { manip: m, obj: o, .. }))
                | (
                    Predicate::ContactProximity { manip, obj, .. },
                    Some(Predicate::Touch { manip: m, obj: o }),
                ) => manip == m && obj == o,
                _ => false,
            };
            if !fold || phase == 0 {
                phase += 1;
            }
            entries.push(PredicateInstance { phase, predicate: p });
        }
        Self { entries }
    }

    /// Parses one predicate per line, e.g. `(touch ee box)`,
    /// `(stable ee box)`, `(poseEq box 1.0 0.5 0.0)`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self, PredicateError> {
        let mut preds = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |m: &str| PredicateError::Malformed(format!("line {}: {m}: `{line}`", n + 1));
            let inner = line
                .strip_prefix('(')
                .and_then(|l| l.strip_suffix(')'))
                .ok_or_else(|| bad("expected parenthesized predicate"))?;
            let tok: Vec<&str> = inner.split_whitespace().collect();
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
            let pred = match tok.as_slice() {
                ["touch", m, o] => Predicate::Touch {
                    manip: m.to_string(),
                    obj: o.to_string(),
                },
                ["stable", m, o] => Predicate::Stable {
                    manip: m.to_string(),
                    obj: o.to_string(),
                },
                ["poseEq", o, x, y, th] => Predicate::PoseEq {
                    obj: o.to_string(),
                    target: Pose2::new(num(x)?, num(y)?, num(th)?),
                },
                ["contact", m, o, x, y] => Predicate::ContactProximity {
                    manip: m.to_string(),
                    obj: o.to_string(),
                    point: Vec2::new(num(x)?, num(y)?),
                },
                [name, ..] => return Err(bad(&format!("unknown predicate `{name}` or wrong arity"))),
                [] => return Err(bad("empty predicate")),
            };
            preds.push(pred);
        }
        Ok(Self::from_sequence(preds))
    }

    pub fn num_phases(&self) -> usize {
        self.entries.iter().map(|e| e.phase).max().unwrap_or(0)
    }

    fn validate(&self) -> Result<(), PredicateError> {
        let mut last = 0;
        for e in &self.entries {
            if e.phase < last.max(1) || e.phase > last + 1 {
                return Err(PredicateError::Malformed(format!(
                    "phases must be contiguous from 1, found {} after {last}",
                    e.phase
                )));
            }
            last = e.phase;
        }
        Ok(())
    }
}

impl fmt::Display for Skeleton {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(f, "{}", e.predicate)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompileOptions {
    pub steps_per_phase: usize,
    pub collision_margin: f64,
    pub accel_weight: f64,
    pub proximity_weight: f64,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self {
            steps_per_phase: 10,
            collision_margin: 0.005,
            accel_weight: 1.0,
            proximity_weight: 1.0,
        }
    }
}

/// Compiles a skeleton over `scene` starting from `init`.
///
/// The horizon is `max(K, 1) · steps_per_phase`; phase `k` ends at
/// `k · steps_per_phase`. The start state is fixed. Objects attached by a
/// `stable` become pose variables after their switch and are held in place
/// before it.
pub fn compile(
    skeleton: &Skeleton,
    scene: &Scene,
    init: &Configuration,
    opts: &CompileOptions,
) -> Result<TrajectoryProblem, PredicateError> {
    skeleton.validate()?;
    if opts.steps_per_phase < 2 {
        return Err(PredicateError::Malformed("steps_per_phase must be at least 2".into()));
    }
    scene.validate_configuration(init)?;
    let sp = opts.steps_per_phase;
    let horizon = skeleton.num_phases().max(1) * sp;
    let end_of = |phase: usize| phase * sp;

    // Resolve frames and find objects that become variables.
    let mut free_slots = Vec::new();
    let mut stables: Vec<(usize, usize, usize)> = Vec::new();
    for e in &skeleton.entries {
        match &e.predicate {
            Predicate::Touch { manip, obj } => {
                shaped(scene, manip)?;
                shaped(scene, obj)?;
            }
            Predicate::Stable { manip, obj } => {
                let m = scene.index_of(manip)?;
                let o = scene.index_of(obj)?;
                let slot = scene.object_slot(o).ok_or_else(|| PredicateError::NotMovable(obj.clone()))?;
                if scene.attachment_of(o).is_some() {
                    return Err(PredicateError::Malformed(format!("`{obj}` is already attached")));
                }
                if !free_slots.contains(&slot) {
                    free_slots.push(slot);
                }
                stables.push((end_of(e.phase), m, o));
            }
            Predicate::PoseEq { obj, .. } => {
                let o = scene.index_of(obj)?;
                if !scene.frame(o).kind.is_object() {
                    return Err(PredicateError::NotMovable(obj.clone()));
                }
            }
            Predicate::ContactProximity { manip, obj, .. } => {
                shaped(scene, manip)?;
                scene.index_of(obj)?;
            }
        }
    }
    let layout = Layout {
        n_joints: scene.num_joints(),
        free_slots: free_slots.clone(),
    };
    let ctx = SceneContext::new(scene.clone(), layout.clone(), scene.object_slots(init));
    let mut problem = TrajectoryProblem::new(ctx.clone(), init.clone(), horizon, sp);
    let n = layout.dim();

    // Start state is fixed; attached objects are held until their switch.
    for d in 0..n {
        problem.freeze(0, d);
    }
    for &(ts, _, o) in &stables {
        let off = layout.slot_offset(scene.object_slot(o).expect("slot")).expect("free slot");
        for t in 0..=ts.min(horizon) {
            for d in off..off + 3 {
                problem.freeze(t, d);
            }
        }
    }

    for t in 2..=horizon {
        problem.add(SecondDifference::acceleration(n, t, opts.accel_weight));
    }

    // Pairs that may touch: excluded from collision checks from the touch on.
    let mut contact_pairs: Vec<(usize, usize, usize)> = Vec::new();
    for e in &skeleton.entries {
        let t = end_of(e.phase);
        match &e.predicate {
            Predicate::Touch { manip, obj } => {
                let (m, o) = (scene.index_of(manip)?, scene.index_of(obj)?);
                problem.add(Touch::new(ctx.clone(), t, m, o));
                contact_pairs.push((t, m, o));
            }
            Predicate::Stable { manip, obj } => {
                let (m, o) = (scene.index_of(manip)?, scene.index_of(obj)?);
                contact_pairs.push((t, m, o));
                problem.switches.push(AttachmentEvent {
                    time_index: t,
                    kind: AttachmentKind::Attach,
                    parent_id: manip.clone(),
                    child_id: obj.clone(),
                    rel_pose: Pose2::identity(),
                });
                for s in t + 1..=horizon {
                    problem.add(StableRel::new(ctx.clone(), s, m, o));
                }
                if t + 1 <= horizon && t >= 1 {
                    problem.add(SecondDifference::velocity_continuity(n, t + 1, (0..layout.n_joints).collect()));
                }
            }
            Predicate::PoseEq { obj, target } => {
                problem.add(PoseEq::new(ctx.clone(), t, scene.index_of(obj)?, *target));
            }
            Predicate::ContactProximity { manip, obj, point } => {
                let (m, o) = (scene.index_of(manip)?, scene.index_of(obj)?);
                problem.add(PointDistance::new(
                    ctx.clone(),
                    format!("contact({manip},{obj})"),
                    FeatureKind::Cost,
                    t,
                    m,
                    Some(o),
                    *point,
                    opts.proximity_weight,
                ));
                contact_pairs.push((t, m, o));
            }
        }
    }

    // Collision avoidance and joint limits at every step. Pairs already
    // closer than the margin at the start only must not penetrate further.
    let start_poses = scene.world_poses_of(init);
    let limits = scene.joint_limits();
    let base_pairs = scene.collision_pairs(&BTreeSet::new());
    let margins: Vec<f64> = base_pairs
        .iter()
        .map(|&(a, b)| {
            let d = scene.pair_distance(&start_poses, a, b).distance;
            if d < opts.collision_margin {
                d.min(0.0)
            } else {
                opts.collision_margin
            }
        })
        .collect();
    for t in 0..=horizon {
        let mut ignore = BTreeSet::new();
        let mut touching = BTreeSet::new();
        for &(ts, m, o) in &contact_pairs {
            if t >= ts {
                ignore.insert((m.min(o), m.max(o)));
                // The object may rest against the link carrying its parent
                // but not sink into it.
                if let Some(p) = scene.carrier_link(m) {
                    touching.insert((p.min(o), p.max(o)));
                }
            }
        }
        let mut pairs = Vec::new();
        let mut pair_margins = Vec::new();
        for (k, &pair) in base_pairs.iter().enumerate() {
            if !ignore.contains(&pair) {
                pairs.push(pair);
                pair_margins.push(if touching.contains(&pair) { margins[k].min(0.0) } else { margins[k] });
            }
        }
        if let Some(c) = Collision::with_margins(ctx.clone(), t, &pairs, &pair_margins) {
            problem.add(c);
        }
        if !limits.is_empty() {
            problem.add(JointLimits::new(limits.clone(), t));
        }
    }
    Ok(problem)
}

fn shaped(scene: &Scene, id: &str) -> Result<usize, PredicateError> {
    let i = scene.index_of(id)?;
    if scene.frame(i).shape.is_none() {
        return Err(PredicateError::Shapeless(id.to_string()));
    }
    Ok(i)
}

/// Signed distance between two frames' shapes; zero iff their surfaces touch.
pub fn touch_residual(
    scene: &Scene,
    config: &Configuration,
    manip_id: &str,
    obj_id: &str,
) -> Result<f64, PredicateError> {
    let m = shaped(scene, manip_id)?;
    let o = shaped(scene, obj_id)?;
    scene.validate_configuration(config)?;
    Ok(scene.pair_distance(&scene.world_poses_of(config), m, o).distance)
}

/// `(Δx, Δy, Δθ)` of the object's world pose minus `target`, angle on the
/// shortest arc.
pub fn pose_eq_residual(
    scene: &Scene,
    config: &Configuration,
    obj_id: &str,
    target: &Pose2,
) -> Result<[f64; 3], PredicateError> {
    let o = scene.index_of(obj_id)?;
    if !scene.frame(o).kind.is_object() {
        return Err(PredicateError::NotMovable(obj_id.to_string()));
    }
    scene.validate_configuration(config)?;
    Ok(scene.world_poses_of(config)[o].delta(target))
}
