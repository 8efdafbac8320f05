//! World model: a tree of frames (static fixtures, arm links, movable objects
//! and tools), the configuration vector, attachment switches and whole-scene
//! collision queries.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{placed_distance, GeometryError, PlacedShape};
use crate::{DistanceResult, Pose2, Shape, Vec2};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SceneError {
    #[error("unknown frame `{0}`")]
    UnknownFrame(String),
    #[error("duplicate frame id `{0}`")]
    DuplicateFrame(String),
    #[error("frame `{frame}` references parent `{parent}` which is not defined before it")]
    UnknownParent { frame: String, parent: String },
    #[error("frame `{0}`: joints are only allowed on link frames")]
    JointOnNonLink(String),
    #[error("frame `{0}`: joint limits must satisfy lo < hi")]
    BadLimits(String),
    #[error("frame `{0}`: movable and tool frames must be children of the world")]
    MovableWithParent(String),
    #[error("frame `{0}` has no shape")]
    NoShape(String),
    #[error("frame `{frame}`: {source}")]
    Shape { frame: String, source: GeometryError },
    #[error("`{0}` is already attached")]
    DoubleAttach(String),
    #[error("`{0}` is not attached")]
    NotAttached(String),
    #[error("`{0}` cannot be attached: only movable and tool frames can switch parents")]
    NotMovable(String),
    #[error("attaching `{child}` to `{parent}` would create a kinematic cycle")]
    Cycle { parent: String, child: String },
    #[error("configuration has {got} joint values, scene has {expected} joints")]
    JointCount { expected: usize, got: usize },
    #[error("configuration lacks a pose for `{0}`")]
    MissingObjectPose(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FrameKind {
    Static,
    Link,
    Movable,
    Tool,
}

impl FrameKind {
    pub fn is_object(self) -> bool {
        matches!(self, FrameKind::Movable | FrameKind::Tool)
    }
}

/// Revolute joint about the frame origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Joint {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub id: String,
    pub parent: Option<String>,
    /// Offset from the parent frame. For movable and tool frames this is the
    /// initial world pose.
    pub rel_pose: Pose2,
    pub shape: Option<Shape>,
    /// Pose of the shape within the frame.
    pub shape_offset: Pose2,
    pub kind: FrameKind,
    pub joint: Option<Joint>,
}

impl Frame {
    pub fn new(id: impl Into<String>, kind: FrameKind) -> Self {
        Self {
            id: id.into(),
            parent: None,
            rel_pose: Pose2::identity(),
            shape: None,
            shape_offset: Pose2::identity(),
            kind,
            joint: None,
        }
    }

    pub fn with_parent(mut self, parent: impl Into<String>) -> Self {
        self.parent = Some(parent.into());
        self
    }

    pub fn at(mut self, pose: Pose2) -> Self {
        self.rel_pose = pose;
        self
    }

    pub fn with_shape(mut self, shape: Shape) -> Self {
        self.shape = Some(shape);
        self
    }

    pub fn with_shape_at(mut self, shape: Shape, offset: Pose2) -> Self {
        self.shape = Some(shape);
        self.shape_offset = offset;
        self
    }

    pub fn with_joint(mut self, lo: f64, hi: f64) -> Self {
        self.joint = Some(Joint { lo, hi });
        self
    }
}

/// Chain of links ending in an end-effector frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub name: String,
    pub links: Vec<String>,
    pub end_effector: String,
}

/// Axis-aligned workspace rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min: Vec2,
    pub max: Vec2,
}

impl Bounds {
    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

/// Full world state at one time slice: joint angles plus movable-object poses.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    pub q: Vec<f64>,
    pub object_poses: BTreeMap<String, Pose2>,
}

/// Kinematic parent of an attached object and the relative pose captured at
/// the switch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attachment {
    pub parent: usize,
    pub rel: Pose2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttachmentKind {
    Attach,
    Detach,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttachmentEvent {
    pub time_index: usize,
    pub kind: AttachmentKind,
    pub parent_id: String,
    pub child_id: String,
    /// Child pose in the parent frame at the switch instant.
    pub rel_pose: Pose2,
}

/// How a frame's world pose depends on the configuration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Chain {
    /// Joint indices (into `q`) between the frame and the world.
    pub joints: Vec<usize>,
    /// Unattached object slot at the root of the attachment chain, if any.
    pub object_slot: Option<usize>,
}

/// Minimum distance over a set of frame pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneDistance {
    pub result: DistanceResult,
    pub pair: Option<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct Scene {
    frames: Vec<Frame>,
    parents: Vec<Option<usize>>,
    index: BTreeMap<String, usize>,
    /// Frame index for each entry of `q`.
    joint_frames: Vec<usize>,
    /// `joint_of[frame]` = index into `q`.
    joint_of: Vec<Option<usize>>,
    /// Frame index for each object slot (movable and tool frames, scene order).
    object_frames: Vec<usize>,
    slot_of: Vec<Option<usize>>,
    attachments: BTreeMap<usize, Attachment>,
    pub bounds: Bounds,
    pub arms: Vec<Arm>,
}

impl Scene {
    pub fn new(frames: Vec<Frame>, bounds: Bounds, arms: Vec<Arm>) -> Result<Self, SceneError> {
        let mut index = BTreeMap::new();
        let mut parents = Vec::with_capacity(frames.len());
        let mut joint_frames = Vec::new();
        let mut joint_of = vec![None; frames.len()];
        let mut object_frames = Vec::new();
        let mut slot_of = vec![None; frames.len()];
        for (i, f) in frames.iter().enumerate() {
            if index.contains_key(&f.id) {
                return Err(SceneError::DuplicateFrame(f.id.clone()));
            }
            let parent = match &f.parent {
                None => None,
                Some(p) if p == "world" => None,
                Some(p) => Some(*index.get(p).ok_or_else(|| SceneError::UnknownParent {
                    frame: f.id.clone(),
                    parent: p.clone(),
                })?),
            };
            if let Some(j) = f.joint {
                if f.kind != FrameKind::Link {
                    return Err(SceneError::JointOnNonLink(f.id.clone()));
                }
                if !(j.lo < j.hi) {
                    return Err(SceneError::BadLimits(f.id.clone()));
                }
                joint_of[i] = Some(joint_frames.len());
                joint_frames.push(i);
            }
            if f.kind.is_object() {
                if parent.is_some() {
                    return Err(SceneError::MovableWithParent(f.id.clone()));
                }
                slot_of[i] = Some(object_frames.len());
                object_frames.push(i);
            }
            if let Some(s) = &f.shape {
                s.validate().map_err(|source| SceneError::Shape {
                    frame: f.id.clone(),
                    source,
                })?;
            }
            index.insert(f.id.clone(), i);
            parents.push(parent);
        }
        for arm in &arms {
            for id in arm.links.iter().chain(std::iter::once(&arm.end_effector)) {
                if !index.contains_key(id) {
                    return Err(SceneError::UnknownFrame(id.clone()));
                }
            }
        }
        Ok(Self {
            frames,
            parents,
            index,
            joint_frames,
            joint_of,
            object_frames,
            slot_of,
            attachments: BTreeMap::new(),
            bounds,
            arms,
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame(&self, idx: usize) -> &Frame {
        &self.frames[idx]
    }

    pub fn index_of(&self, id: &str) -> Result<usize, SceneError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| SceneError::UnknownFrame(id.to_string()))
    }

    pub fn num_joints(&self) -> usize {
        self.joint_frames.len()
    }

    /// Frame driven by joint `j`.
    pub fn joint_frame(&self, j: usize) -> usize {
        self.joint_frames[j]
    }

    /// Link frame that carries `frame`, if `frame` is a link hanging off
    /// another link (an end-effector).
    pub fn carrier_link(&self, frame: usize) -> Option<usize> {
        if self.frames[frame].kind != FrameKind::Link {
            return None;
        }
        let p = self.parents[frame]?;
        (self.frames[p].kind == FrameKind::Link).then_some(p)
    }

    pub fn joint_limits(&self) -> Vec<Joint> {
        self.joint_frames
            .iter()
            .map(|&f| self.frames[f].joint.expect("joint frame"))
            .collect()
    }

    pub fn object_frames(&self) -> &[usize] {
        &self.object_frames
    }

    pub fn object_slot(&self, frame: usize) -> Option<usize> {
        self.slot_of[frame]
    }

    pub fn attachments(&self) -> &BTreeMap<usize, Attachment> {
        &self.attachments
    }

    pub fn attachment_of(&self, frame: usize) -> Option<&Attachment> {
        self.attachments.get(&frame)
    }

    /// Objects currently attached (directly) to `parent`.
    pub fn children_of(&self, parent: usize) -> Vec<usize> {
        self.attachments
            .iter()
            .filter(|(_, a)| a.parent == parent)
            .map(|(&c, _)| c)
            .collect()
    }

    pub fn default_end_effector(&self) -> Option<&str> {
        self.arms.first().map(|a| a.end_effector.as_str())
    }

    /// Configuration with zero joint angles (clamped into limits) and every
    /// object at its declared pose.
    pub fn initial_configuration(&self) -> Configuration {
        let q = self
            .joint_limits()
            .iter()
            .map(|j| 0.0f64.clamp(j.lo, j.hi))
            .collect();
        let object_poses = self
            .object_frames
            .iter()
            .map(|&f| (self.frames[f].id.clone(), self.frames[f].rel_pose))
            .collect();
        Configuration { q, object_poses }
    }

    pub fn validate_configuration(&self, config: &Configuration) -> Result<(), SceneError> {
        if config.q.len() != self.num_joints() {
            return Err(SceneError::JointCount {
                expected: self.num_joints(),
                got: config.q.len(),
            });
        }
        for &f in &self.object_frames {
            if !config.object_poses.contains_key(&self.frames[f].id) {
                return Err(SceneError::MissingObjectPose(self.frames[f].id.clone()));
            }
        }
        Ok(())
    }

    pub fn clamp_joints(&self, q: &mut [f64]) {
        for (v, j) in q.iter_mut().zip(self.joint_limits()) {
            *v = v.clamp(j.lo, j.hi);
        }
    }

    /// Object poses in slot order.
    pub fn object_slots(&self, config: &Configuration) -> Vec<Pose2> {
        self.object_frames
            .iter()
            .map(|&f| {
                config
                    .object_poses
                    .get(&self.frames[f].id)
                    .copied()
                    .unwrap_or(self.frames[f].rel_pose)
            })
            .collect()
    }

    /// World poses of every frame.
    pub fn world_poses(&self, q: &[f64], objects: &[Pose2]) -> Vec<Pose2> {
        let mut out: Vec<Option<Pose2>> = vec![None; self.frames.len()];
        for i in 0..self.frames.len() {
            self.resolve(i, q, objects, &mut out, 0);
        }
        out.into_iter().map(|p| p.expect("resolved")).collect()
    }

    fn resolve(&self, i: usize, q: &[f64], objects: &[Pose2], out: &mut [Option<Pose2>], depth: usize) -> Pose2 {
        if let Some(p) = out[i] {
            return p;
        }
        assert!(depth <= self.frames.len(), "kinematic cycle");
        let f = &self.frames[i];
        let pose = if let Some(slot) = self.slot_of[i] {
            match self.attachments.get(&i) {
                Some(a) => self.resolve(a.parent, q, objects, out, depth + 1).compose(&a.rel),
                None => objects[slot],
            }
        } else {
            let base = match self.parents[i] {
                Some(p) => self.resolve(p, q, objects, out, depth + 1).compose(&f.rel_pose),
                None => f.rel_pose,
            };
            match self.joint_of[i] {
                Some(j) => base.compose(&Pose2::new(0.0, 0.0, q[j])),
                None => base,
            }
        };
        out[i] = Some(pose);
        pose
    }

    pub fn world_poses_of(&self, config: &Configuration) -> Vec<Pose2> {
        self.world_poses(&config.q, &self.object_slots(config))
    }

    /// World pose of one frame.
    pub fn forward_kinematics(&self, config: &Configuration, frame_id: &str) -> Result<Pose2, SceneError> {
        let i = self.index_of(frame_id)?;
        self.validate_configuration(config)?;
        Ok(self.world_poses_of(config)[i])
    }

    /// Writes the FK-derived poses of attached objects back into `config`.
    pub fn sync_attached(&self, config: &mut Configuration) {
        if self.attachments.is_empty() {
            return;
        }
        let poses = self.world_poses_of(config);
        for &c in self.attachments.keys() {
            config.object_poses.insert(self.frames[c].id.clone(), poses[c]);
        }
    }

    /// Dependency of a frame's pose on joints and free object slots.
    pub fn chain(&self, frame: usize) -> Chain {
        let mut chain = Chain::default();
        let mut cur = Some(frame);
        let mut guard = 0;
        while let Some(i) = cur {
            guard += 1;
            assert!(guard <= self.frames.len() + 1, "kinematic cycle");
            if let Some(j) = self.joint_of[i] {
                chain.joints.push(j);
            }
            cur = if let Some(slot) = self.slot_of[i] {
                match self.attachments.get(&i) {
                    Some(a) => Some(a.parent),
                    None => {
                        chain.object_slot = Some(slot);
                        None
                    }
                }
            } else {
                self.parents[i]
            };
        }
        chain
    }

    /// Attachment event that would attach `child` to `parent` now.
    pub fn attach_event(
        &self,
        time_index: usize,
        parent_id: &str,
        child_id: &str,
        config: &Configuration,
    ) -> Result<AttachmentEvent, SceneError> {
        let p = self.index_of(parent_id)?;
        let c = self.index_of(child_id)?;
        let poses = self.world_poses_of(config);
        Ok(AttachmentEvent {
            time_index,
            kind: AttachmentKind::Attach,
            parent_id: parent_id.to_string(),
            child_id: child_id.to_string(),
            rel_pose: poses[p].relative(&poses[c]),
        })
    }

    /// Applies an attach/detach switch, returning the new scene.
    ///
    /// Attaching captures the child's pose relative to the parent from the
    /// current world poses, so the child does not move across the switch.
    /// Detaching writes the child's current world pose into `config`, where
    /// it stays fixed afterwards.
    pub fn apply_attachment(
        &self,
        event: &AttachmentEvent,
        config: &mut Configuration,
    ) -> Result<Scene, SceneError> {
        let p = self.index_of(&event.parent_id)?;
        let c = self.index_of(&event.child_id)?;
        if !self.frames[c].kind.is_object() {
            return Err(SceneError::NotMovable(event.child_id.clone()));
        }
        let poses = self.world_poses_of(config);
        let mut next = self.clone();
        match event.kind {
            AttachmentKind::Attach => {
                if self.attachments.contains_key(&c) {
                    return Err(SceneError::DoubleAttach(event.child_id.clone()));
                }
                if p == c || self.depends_on(p, c) {
                    return Err(SceneError::Cycle {
                        parent: event.parent_id.clone(),
                        child: event.child_id.clone(),
                    });
                }
                let rel = poses[p].relative(&poses[c]);
                next.attachments.insert(c, Attachment { parent: p, rel });
            }
            AttachmentKind::Detach => {
                match self.attachments.get(&c) {
                    Some(a) if a.parent == p => {}
                    _ => return Err(SceneError::NotAttached(event.child_id.clone())),
                }
                // Grandchildren keep following the detached child, which is
                // now driven by its own object slot.
                next.attachments.remove(&c);
                for (&k, _) in self.attachments.iter() {
                    config.object_poses.insert(self.frames[k].id.clone(), poses[k]);
                }
            }
        }
        next.sync_attached(config);
        Ok(next)
    }

    /// Whether frame `a`'s pose depends on frame `b` through parents or
    /// attachments.
    fn depends_on(&self, a: usize, b: usize) -> bool {
        let mut cur = Some(a);
        let mut guard = 0;
        while let Some(i) = cur {
            if i == b {
                return true;
            }
            guard += 1;
            if guard > self.frames.len() {
                return true;
            }
            cur = match self.attachments.get(&i) {
                Some(att) => Some(att.parent),
                None => self.parents[i],
            };
        }
        false
    }

    /// Pairs that are never checked: static–static, adjacent links, and
    /// attached children against their parent.
    pub fn is_auto_ignored(&self, a: usize, b: usize) -> bool {
        let ka = self.frames[a].kind;
        let kb = self.frames[b].kind;
        if ka == FrameKind::Static && kb == FrameKind::Static {
            return true;
        }
        if ka == FrameKind::Link && kb == FrameKind::Link && (self.parents[a] == Some(b) || self.parents[b] == Some(a))
        {
            return true;
        }
        let attached_to = |child: usize, other: usize| self.attachments.get(&child).is_some_and(|att| att.parent == other);
        attached_to(a, b) || attached_to(b, a)
    }

    /// Frames carrying a shape.
    pub fn shaped_frames(&self) -> Vec<usize> {
        (0..self.frames.len()).filter(|&i| self.frames[i].shape.is_some()).collect()
    }

    /// All shape pairs that are not auto-ignored and not listed in `ignore`.
    pub fn collision_pairs(&self, ignore: &BTreeSet<(usize, usize)>) -> Vec<(usize, usize)> {
        let shaped = self.shaped_frames();
        let mut pairs = Vec::new();
        for (k, &a) in shaped.iter().enumerate() {
            for &b in &shaped[k + 1..] {
                let key = (a.min(b), a.max(b));
                if self.is_auto_ignored(a, b) || ignore.contains(&key) {
                    continue;
                }
                pairs.push(key);
            }
        }
        pairs
    }

    /// World pose of a frame's shape.
    pub fn shape_pose(&self, poses: &[Pose2], i: usize) -> Pose2 {
        poses[i].compose(&self.frames[i].shape_offset)
    }

    /// Signed distance between two shaped frames at the given world poses.
    pub fn pair_distance(&self, poses: &[Pose2], a: usize, b: usize) -> DistanceResult {
        let sa = self.frames[a].shape.as_ref().expect("shaped frame");
        let sb = self.frames[b].shape.as_ref().expect("shaped frame");
        placed_distance(
            &PlacedShape::new(sa, &self.shape_pose(poses, a)),
            &PlacedShape::new(sb, &self.shape_pose(poses, b)),
        )
    }

    /// Minimum signed distance over all non-ignored shape pairs.
    pub fn scene_min_distance(&self, config: &Configuration, ignore_pairs: &[(String, String)]) -> SceneDistance {
        let ignore: BTreeSet<(usize, usize)> = ignore_pairs
            .iter()
            .filter_map(|(a, b)| {
                let (a, b) = (self.index.get(a)?, self.index.get(b)?);
                Some(((*a).min(*b), (*a).max(*b)))
            })
            .collect();
        let poses = self.world_poses_of(config);
        let mut best = SceneDistance {
            result: DistanceResult::infinite(),
            pair: None,
        };
        for (a, b) in self.collision_pairs(&ignore) {
            let r = self.pair_distance(&poses, a, b);
            if r.distance < best.result.distance {
                best = SceneDistance {
                    result: r,
                    pair: Some((self.frames[a].id.clone(), self.frames[b].id.clone())),
                };
            }
        }
        best
    }

    /// `count` world points on the boundary of a frame's shape, with
    /// stratified jitter drawn from `seed`.
    pub fn point_cloud(
        &self,
        config: &Configuration,
        frame_id: &str,
        count: usize,
        seed: u64,
    ) -> Result<Vec<Vec2>, SceneError> {
        let i = self.index_of(frame_id)?;
        let shape = self.frames[i]
            .shape
            .as_ref()
            .ok_or_else(|| SceneError::NoShape(frame_id.to_string()))?;
        let pose = self.shape_pose(&self.world_poses_of(config), i);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..count)
            .map(|k| {
                let u = (k as f64 + rng.gen::<f64>()) / count as f64;
                pose.transform_point(shape.boundary_point(u.min(1.0 - f64::EPSILON)))
            })
            .collect())
    }
}

/// Flat vector layout of the decision variables for one time slice.
///
/// The first `n_joints` entries are joint angles; each free object slot then
/// contributes `(x, y, θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub n_joints: usize,
    pub free_slots: Vec<usize>,
}

impl Layout {
    pub fn joints_only(scene: &Scene) -> Self {
        Self {
            n_joints: scene.num_joints(),
            free_slots: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n_joints + 3 * self.free_slots.len()
    }

    /// Offset of a free slot's `(x, y, θ)` block.
    pub fn slot_offset(&self, slot: usize) -> Option<usize> {
        self.free_slots
            .iter()
            .position(|&s| s == slot)
            .map(|k| self.n_joints + 3 * k)
    }

    pub fn pack(&self, scene: &Scene, config: &Configuration) -> Vec<f64> {
        let mut v = config.q.clone();
        let slots = scene.object_slots(config);
        for &s in &self.free_slots {
            let p = slots[s];
            v.extend_from_slice(&[p.x, p.y, p.theta]);
        }
        v
    }

    /// Inverse of [`Layout::pack`]; objects outside the layout keep the
    /// values from `base`.
    pub fn unpack(&self, scene: &Scene, x: &[f64], base: &Configuration) -> Configuration {
        let mut c = base.clone();
        c.q = x[..self.n_joints].to_vec();
        for (k, &s) in self.free_slots.iter().enumerate() {
            let o = self.n_joints + 3 * k;
            let id = scene.frame(scene.object_frames()[s]).id.clone();
            c.object_poses.insert(id, Pose2::new(x[o], x[o + 1], x[o + 2]));
        }
        c
    }

    /// World poses from a flat state, with non-free objects taken from `base_slots`.
    pub fn world_poses(&self, scene: &Scene, x: &[f64], base_slots: &[Pose2]) -> Vec<Pose2> {
        if self.free_slots.is_empty() {
            return scene.world_poses(&x[..self.n_joints], base_slots);
        }
        let mut slots = base_slots.to_vec();
        for (k, &s) in self.free_slots.iter().enumerate() {
            let o = self.n_joints + 3 * k;
            slots[s] = Pose2::new(x[o], x[o + 1], x[o + 2]);
        }
        scene.world_poses(&x[..self.n_joints], &slots)
    }

    /// Jacobian of a world point rigidly attached to `frame` with respect to
    /// the flat state. Returns `(state index, ∂p/∂x_i)` pairs.
    pub fn point_jacobian(&self, scene: &Scene, poses: &[Pose2], frame: usize, p: Vec2) -> Vec<(usize, Vec2)> {
        let chain = scene.chain(frame);
        let mut out = Vec::with_capacity(chain.joints.len() + 3);
        for &j in &chain.joints {
            if j < self.n_joints {
                let origin = poses[scene.joint_frames[j]].translation();
                out.push((j, (p - origin).perp()));
            }
        }
        if let Some(slot) = chain.object_slot {
            if let Some(o) = self.slot_offset(slot) {
                let origin = poses[scene.object_frames[slot]].translation();
                out.push((o, Vec2::new(1.0, 0.0)));
                out.push((o + 1, Vec2::new(0.0, 1.0)));
                out.push((o + 2, (p - origin).perp()));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn bounds() -> Bounds {
        Bounds {
            min: Vec2::new(-3.0, -3.0),
            max: Vec2::new(3.0, 3.0),
        }
    }

    /// Two unit links along +x at q = 0 with an end-effector at the tip.
    fn two_link() -> Scene {
        let frames = vec![
            Frame::new("l1", FrameKind::Link)
                .with_joint(-PI, PI)
                .with_shape(Shape::rect(0.5, 0.05)),
            Frame::new("l2", FrameKind::Link)
                .with_parent("l1")
                .at(Pose2::new(1.0, 0.0, 0.0))
                .with_joint(-PI, PI),
            Frame::new("ee", FrameKind::Link)
                .with_parent("l2")
                .at(Pose2::new(1.0, 0.0, 0.0))
                .with_shape(Shape::circle(0.05)),
            Frame::new("box", FrameKind::Movable)
                .at(Pose2::new(0.0, 2.1, 0.0))
                .with_shape(Shape::rect(0.05, 0.05)),
        ];
        Scene::new(
            frames,
            bounds(),
            vec![Arm {
                name: "arm".into(),
                links: vec!["l1".into(), "l2".into()],
                end_effector: "ee".into(),
            }],
        )
        .unwrap()
    }

    #[test]
    fn fk_single_link_identity() {
        let s = Scene::new(
            vec![Frame::new("l", FrameKind::Link).with_joint(-1.0, 1.0)],
            bounds(),
            vec![],
        )
        .unwrap();
        let c = s.initial_configuration();
        assert_eq!(s.forward_kinematics(&c, "l").unwrap(), Pose2::identity());
    }

    #[test]
    fn fk_two_link_quarter_turn() {
        let s = two_link();
        let mut c = s.initial_configuration();
        c.q = vec![FRAC_PI_2, 0.0];
        let ee = s.forward_kinematics(&c, "ee").unwrap();
        assert!(ee.x.abs() < 1e-12 && (ee.y - 2.0).abs() < 1e-12);
        assert!(matches!(s.forward_kinematics(&c, "nope"), Err(SceneError::UnknownFrame(_))));
    }

    #[test]
    fn attachment_definition_and_continuity() {
        let s = two_link();
        let mut c = s.initial_configuration();
        c.q = vec![FRAC_PI_2, 0.0];
        c.object_poses.insert("box".into(), Pose2::new(0.1, 2.0, 0.3));
        let before = s.forward_kinematics(&c, "box").unwrap();
        let ev = s.attach_event(0, "ee", "box", &c).unwrap();
        let s2 = s.apply_attachment(&ev, &mut c).unwrap();
        let after = s2.forward_kinematics(&c, "box").unwrap();
        let d = before.delta(&after);
        assert!(d.iter().all(|v| v.abs() < 1e-12));
        // Rigid motion with the parent.
        c.q[1] = 0.4;
        let ee = s2.forward_kinematics(&c, "ee").unwrap();
        let moved = s2.forward_kinematics(&c, "box").unwrap();
        let expect = ee.compose(&ev.rel_pose);
        assert!(moved.delta(&expect).iter().all(|v| v.abs() < 1e-12));
        // Double attach and bad detach.
        assert!(matches!(s2.apply_attachment(&ev, &mut c), Err(SceneError::DoubleAttach(_))));
        let det = AttachmentEvent {
            kind: AttachmentKind::Detach,
            ..ev.clone()
        };
        assert!(matches!(s.apply_attachment(&det, &mut c), Err(SceneError::NotAttached(_))));
    }

    #[test]
    fn attach_detach_attach_replay_is_continuous() {
        let s = two_link();
        let mut c = s.initial_configuration();
        let mut scene = s.clone();
        let qs = [[0.2, 0.1], [0.5, -0.3], [0.9, 0.4], [1.2, 0.0], [1.0, -0.6]];
        for (t, q) in qs.iter().enumerate() {
            c.q = q.to_vec();
            scene.sync_attached(&mut c);
            let before = scene.forward_kinematics(&c, "box").unwrap();
            let ev = if scene.attachment_of(3).is_some() {
                AttachmentEvent {
                    time_index: t,
                    kind: AttachmentKind::Detach,
                    parent_id: "ee".into(),
                    child_id: "box".into(),
                    rel_pose: Pose2::identity(),
                }
            } else {
                scene.attach_event(t, "ee", "box", &c).unwrap()
            };
            scene = scene.apply_attachment(&ev, &mut c).unwrap();
            let after = scene.forward_kinematics(&c, "box").unwrap();
            assert!(before.delta(&after).iter().all(|v| v.abs() < 1e-12), "t={t}");
        }
    }

    #[test]
    fn min_distance_cases() {
        let empty = Scene::new(vec![], bounds(), vec![]).unwrap();
        let c = empty.initial_configuration();
        assert_eq!(empty.scene_min_distance(&c, &[]).result.distance, f64::INFINITY);

        let frames = vec![
            Frame::new("a", FrameKind::Movable).with_shape(Shape::circle(1.0)),
            Frame::new("b", FrameKind::Movable)
                .at(Pose2::new(3.0, 0.0, 0.0))
                .with_shape(Shape::circle(1.0)),
        ];
        let s = Scene::new(frames, bounds(), vec![]).unwrap();
        let d = s.scene_min_distance(&s.initial_configuration(), &[]);
        assert!((d.result.distance - 1.0).abs() < 1e-15);
        assert_eq!(d.pair, Some(("a".into(), "b".into())));
        let ignored = s.scene_min_distance(&s.initial_configuration(), &[("b".into(), "a".into())]);
        assert!(ignored.pair.is_none());
    }

    #[test]
    fn adjacent_links_are_ignored() {
        let s = two_link();
        let l1 = s.index_of("l1").unwrap();
        let ee = s.index_of("ee").unwrap();
        let l2 = s.index_of("l2").unwrap();
        assert!(s.is_auto_ignored(l1, l2));
        assert!(!s.is_auto_ignored(l1, ee));
    }

    #[test]
    fn validation_errors() {
        let bad_parent = Scene::new(
            vec![Frame::new("x", FrameKind::Link).with_parent("ghost")],
            bounds(),
            vec![],
        );
        match bad_parent {
            Err(SceneError::UnknownParent { frame, parent }) => {
                assert_eq!(frame, "x");
                assert_eq!(parent, "ghost");
            }
            other => panic!("{other:?}"),
        }
        let dup = Scene::new(
            vec![Frame::new("x", FrameKind::Static), Frame::new("x", FrameKind::Static)],
            bounds(),
            vec![],
        );
        assert!(matches!(dup, Err(SceneError::DuplicateFrame(_))));
        let joint_on_static = Scene::new(
            vec![Frame::new("x", FrameKind::Static).with_joint(-1.0, 1.0)],
            bounds(),
            vec![],
        );
        assert!(matches!(joint_on_static, Err(SceneError::JointOnNonLink(_))));
        let limits = Scene::new(
            vec![Frame::new("x", FrameKind::Link).with_joint(1.0, 1.0)],
            bounds(),
            vec![],
        );
        assert!(matches!(limits, Err(SceneError::BadLimits(_))));
    }

    #[test]
    fn point_cloud_on_circle() {
        let frames = vec![Frame::new("c", FrameKind::Movable).with_shape(Shape::circle(1.0))];
        let s = Scene::new(frames, bounds(), vec![]).unwrap();
        let mut c = s.initial_configuration();
        let pts = s.point_cloud(&c, "c", 4, 7).unwrap();
        assert_eq!(pts.len(), 4);
        for p in &pts {
            assert!((p.norm() - 1.0).abs() < 1e-12);
        }
        c.object_poses.insert("c".into(), Pose2::new(5.0, 0.0, 0.0));
        let moved = s.point_cloud(&c, "c", 4, 7).unwrap();
        for (a, b) in pts.iter().zip(&moved) {
            assert!((*b - *a - Vec2::new(5.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn layout_round_trip() {
        let s = two_link();
        let mut c = s.initial_configuration();
        c.q = vec![0.3, -0.2];
        c.object_poses.insert("box".into(), Pose2::new(0.4, 1.1, -2.0));
        let layout = Layout {
            n_joints: 2,
            free_slots: vec![0],
        };
        let x = layout.pack(&s, &c);
        assert_eq!(x.len(), 5);
        assert_eq!(layout.unpack(&s, &x, &s.initial_configuration()), c);
    }

    #[test]
    fn point_jacobian_matches_finite_differences() {
        let s = two_link();
        let ee = s.index_of("ee").unwrap();
        let layout = Layout::joints_only(&s);
        let base = s.object_slots(&s.initial_configuration());
        let x = vec![0.3, 0.7];
        let poses = layout.world_poses(&s, &x, &base);
        let local = Vec2::new(0.02, 0.01);
        let p = poses[ee].transform_point(local);
        for (i, col) in layout.point_jacobian(&s, &poses, ee, p) {
            let h = 1e-6;
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let pp = layout.world_poses(&s, &xp, &base)[ee].transform_point(local);
            let pm = layout.world_poses(&s, &xm, &base)[ee].transform_point(local);
            let fd = (pp - pm) * (0.5 / h);
            assert!((fd - col).norm() < 1e-8);
        }
    }
}
