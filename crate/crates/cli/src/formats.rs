//! JSON scene, task, suite and plan files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hmap_core::contact::{ContactPoint, ContactSource, ExternalSampler};
use hmap_core::planner::{PlanReport, PlannerConfig, SamplerChoice, SubPathKind, Task, DEFAULT_TEMPLATE};
use hmap_core::scene::{Arm, AttachmentEvent, AttachmentKind, Bounds, Frame, FrameKind, Scene};
use hmap_core::waypoints::RrtSettings;
use hmap_core::{Configuration, Pose2, Shape, Vec2};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

fn read<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, FormatError> {
    let text = std::fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.into(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| FormatError::Json {
        path: path.into(),
        source,
    })
}

fn invalid(path: &Path, message: impl ToString) -> FormatError {
    FormatError::Invalid {
        path: path.into(),
        message: message.to_string(),
    }
}

fn pose([x, y, t]: [f64; 3]) -> Pose2 {
    Pose2::new(x, y, t)
}

fn arr(p: &Pose2) -> [f64; 3] {
    [p.x, p.y, p.theta]
}

fn vec2([x, y]: [f64; 2]) -> Vec2 {
    Vec2::new(x, y)
}

fn arr2(v: Vec2) -> [f64; 2] {
    [v.x, v.y]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSpec {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl From<BoundsSpec> for Bounds {
    fn from(b: BoundsSpec) -> Self {
        Bounds {
            min: vec2(b.min),
            max: vec2(b.max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ShapeSpec {
    Circle { radius: f64 },
    Rect { hx: f64, hy: f64 },
    Polygon { vertices: Vec<[f64; 2]> },
}

impl From<&ShapeSpec> for Shape {
    fn from(s: &ShapeSpec) -> Self {
        match s {
            ShapeSpec::Circle { radius } => Shape::circle(*radius),
            ShapeSpec::Rect { hx, hy } => Shape::rect(*hx, *hy),
            ShapeSpec::Polygon { vertices } => Shape::polygon(vertices.iter().map(|v| vec2(*v)).collect()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindSpec {
    Static,
    Link,
    Movable,
    Tool,
}

impl From<KindSpec> for FrameKind {
    fn from(k: KindSpec) -> Self {
        match k {
            KindSpec::Static => FrameKind::Static,
            KindSpec::Link => FrameKind::Link,
            KindSpec::Movable => FrameKind::Movable,
            KindSpec::Tool => FrameKind::Tool,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSpec {
    pub id: String,
    #[serde(default)]
    pub parent: Option<String>,
    pub kind: KindSpec,
    #[serde(default)]
    pub rel_pose: [f64; 3],
    #[serde(default)]
    pub shape: Option<ShapeSpec>,
    /// Placement of the shape in the frame.
    #[serde(default)]
    pub shape_pose: Option<[f64; 3]>,
    #[serde(default)]
    pub joint: Option<JointSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSpec {
    pub name: String,
    pub links: Vec<String>,
    pub end_effector: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub bounds: BoundsSpec,
    pub frames: Vec<FrameSpec>,
    #[serde(default)]
    pub arms: Vec<ArmSpec>,
    /// Starting joint angles; zeros when absent.
    #[serde(default)]
    pub initial_q: Option<Vec<f64>>,
}

pub struct LoadedScene {
    pub scene: Scene,
    pub init: Configuration,
}

impl SceneFile {
    pub fn load(path: &Path) -> Result<LoadedScene, FormatError> {
        let file: SceneFile = read(path)?;
        file.build().map_err(|m| invalid(path, m))
    }

    pub fn build(&self) -> Result<LoadedScene, String> {
        let frames = self
            .frames
            .iter()
            .map(|f| {
                let mut fr = Frame::new(&f.id, f.kind.into()).at(pose(f.rel_pose));
                if let Some(p) = &f.parent {
                    if p != "world" {
                        fr = fr.with_parent(p);
                    }
                }
                if let Some(s) = &f.shape {
                    fr = fr.with_shape_at(s.into(), f.shape_pose.map(pose).unwrap_or_else(Pose2::identity));
                }
                if let Some(j) = f.joint {
                    fr = fr.with_joint(j.lo, j.hi);
                }
                fr
            })
            .collect();
        let arms = self
            .arms
            .iter()
            .map(|a| Arm {
                name: a.name.clone(),
                links: a.links.clone(),
                end_effector: a.end_effector.clone(),
            })
            .collect();
        let scene = Scene::new(frames, self.bounds.into(), arms).map_err(|e| e.to_string())?;
        let mut init = scene.initial_configuration();
        if let Some(q) = &self.initial_q {
            if q.len() != init.q.len() {
                return Err(format!("initial_q has {} values, scene has {} joints", q.len(), init.q.len()));
            }
            init.q = q.clone();
            scene.sync_attached(&mut init);
        }
        scene.validate_configuration(&init).map_err(|e| e.to_string())?;
        Ok(LoadedScene { scene, init })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum SamplerSpec {
    Heuristic,
    Pointcloud,
    /// File of `object_id u` lines, relative to the task file.
    External(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerOverrides {
    #[serde(rename = "L", default)]
    pub node_distance: Option<f64>,
    #[serde(rename = "L_floor", default)]
    pub l_floor: Option<f64>,
    #[serde(default)]
    pub j_max: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Seconds.
    #[serde(default)]
    pub budget: Option<f64>,
    #[serde(default)]
    pub steps_per_phase: Option<usize>,
    #[serde(default)]
    pub reuse_contact: Option<bool>,
    #[serde(default)]
    pub manipulator_order: Option<Vec<String>>,
    #[serde(default)]
    pub contact_attempts: Option<usize>,
    #[serde(default)]
    pub collision_margin: Option<f64>,
    #[serde(default)]
    pub corridor_clearance: Option<f64>,
    /// Sampling region of the object path planner.
    #[serde(default)]
    pub rrt_bounds: Option<BoundsSpec>,
    #[serde(default)]
    pub rrt_step: Option<f64>,
    #[serde(default)]
    pub rrt_max_nodes: Option<usize>,
}

fn default_tolerance() -> [f64; 2] {
    let t = PlannerConfig::default().tau;
    [t.0, t.1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskFile {
    pub target: String,
    pub goal: [f64; 3],
    /// Goal tolerance: meters, radians.
    #[serde(default = "default_tolerance")]
    pub tolerance: [f64; 2],
    /// Per-waypoint skeleton lines; the default grasps at the sampled
    /// contact and carries the object to the waypoint.
    #[serde(default)]
    pub skeleton: Option<Vec<String>>,
    /// Lines added for the last waypoint.
    #[serde(default)]
    pub terminal: Vec<String>,
    #[serde(default)]
    pub tools: Vec<String>,
    #[serde(default)]
    pub movable_obstacles: Vec<String>,
    #[serde(default)]
    pub planner: PlannerOverrides,
    #[serde(default)]
    pub sampler: Option<SamplerSpec>,
}

pub struct LoadedTask {
    pub task: Task,
    pub config: PlannerConfig,
}

impl TaskFile {
    pub fn load(path: &Path) -> Result<LoadedTask, FormatError> {
        let file: TaskFile = read(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        file.build(base).map_err(|m| invalid(path, m))
    }

    pub fn build(&self, base: &Path) -> Result<LoadedTask, String> {
        let mut task = Task::new(&self.target, pose(self.goal));
        task.template = match &self.skeleton {
            Some(lines) => lines.join("\n"),
            None => DEFAULT_TEMPLATE.into(),
        };
        task.terminal = self.terminal.join("\n");
        task.tools = self.tools.clone();
        task.movable_obstacles = self.movable_obstacles.clone();

        let o = &self.planner;
        let d = PlannerConfig::default();
        let mut rrt = RrtSettings::default();
        if let Some(b) = o.rrt_bounds {
            rrt.bounds = Some(b.into());
        }
        if let Some(s) = o.rrt_step {
            rrt.step = s;
        }
        if let Some(n) = o.rrt_max_nodes {
            rrt.max_nodes = n;
        }
        let sampler = match &self.sampler {
            None | Some(SamplerSpec::Heuristic) => SamplerChoice::Heuristic,
            Some(SamplerSpec::Pointcloud) => SamplerChoice::PointCloud,
            Some(SamplerSpec::External(file)) => {
                let p = base.join(file);
                let text = std::fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
                SamplerChoice::External(ExternalSampler::parse(&text).map_err(|e| format!("{}: {e}", p.display()))?)
            }
        };
        let config = PlannerConfig {
            tau: (self.tolerance[0], self.tolerance[1]),
            node_distance: o.node_distance.unwrap_or(d.node_distance),
            j_max: o.j_max.unwrap_or(d.j_max),
            l_floor: o.l_floor.unwrap_or(d.l_floor),
            steps_per_phase: o.steps_per_phase.unwrap_or(d.steps_per_phase),
            manipulator_order: o.manipulator_order.clone().unwrap_or_default(),
            reuse_contact: o.reuse_contact.unwrap_or(d.reuse_contact),
            seed: o.seed.unwrap_or(d.seed),
            time_budget: o.budget.unwrap_or(d.time_budget),
            contact_attempts: o.contact_attempts.unwrap_or(d.contact_attempts),
            collision_margin: o.collision_margin.unwrap_or(d.collision_margin),
            corridor_clearance: o.corridor_clearance.unwrap_or(d.corridor_clearance),
            sampler,
            rrt,
            solver: d.solver,
        };
        config.validate().map_err(|e| e.to_string())?;
        Ok(LoadedTask { task, config })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteEntry {
    pub name: String,
    /// Paths relative to the suite file.
    pub scene: String,
    pub task: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteFile {
    pub tasks: Vec<SuiteEntry>,
}

pub struct SuiteTask {
    pub name: String,
    pub scene_path: PathBuf,
    pub task_path: PathBuf,
    pub scene: LoadedScene,
    pub task: LoadedTask,
}

impl SuiteFile {
    /// Loads every listed scene and task, failing on the first bad file.
    pub fn load(path: &Path) -> Result<Vec<SuiteTask>, FormatError> {
        let file: SuiteFile = read(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        file.tasks
            .iter()
            .map(|e| {
                let scene_path = base.join(&e.scene);
                let task_path = base.join(&e.task);
                Ok(SuiteTask {
                    name: e.name.clone(),
                    scene: SceneFile::load(&scene_path)?,
                    task: TaskFile::load(&task_path)?,
                    scene_path,
                    task_path,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub t: usize,
    pub q: Vec<f64>,
    pub objects: BTreeMap<String, [f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SwitchKind {
    Attach,
    Detach,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchRecord {
    pub t: usize,
    pub kind: SwitchKind,
    pub parent: String,
    pub child: String,
    pub rel_pose: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactRecordFile {
    pub object: String,
    pub manipulator: String,
    pub local: [f64; 2],
    pub world: [f64; 2],
    pub normal: [f64; 2],
    pub source: String,
    pub u: f64,
    pub waypoint_list: usize,
    pub waypoint_index: usize,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaypointListFile {
    /// Object moved along the list.
    pub object: String,
    pub spacing: f64,
    pub path_length: f64,
    pub poses: Vec<[f64; 3]>,
    /// Smoothed object path the waypoints were cut from.
    pub object_path: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubPathFile {
    pub kind: String,
    pub object: String,
    pub manipulator: String,
    pub start: usize,
    pub end: usize,
    pub stable_drift: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsFile {
    pub wp_count: usize,
    pub restarts: usize,
    pub tool_used: Option<String>,
    pub obstacles_moved: Vec<String>,
    pub optimizer_calls: usize,
    /// Stage timings in seconds; only written on request because they
    /// differ between otherwise identical runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rrt_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cp_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub komo_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalRecord {
    pub target: String,
    pub goal: [f64; 3],
    pub tolerance: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub feasible: bool,
    pub failure: Option<String>,
    pub goal: GoalRecord,
    /// Frame ids of the scene the plan was made for.
    pub frames: Vec<String>,
    pub steps: Vec<StepRecord>,
    pub switches: Vec<SwitchRecord>,
    pub contacts: Vec<ContactRecordFile>,
    pub waypoints: Vec<WaypointListFile>,
    pub sub_paths: Vec<SubPathFile>,
    pub metrics: MetricsFile,
}

fn source_name(s: ContactSource) -> &'static str {
    s.as_str()
}

fn source_from(s: &str) -> Option<ContactSource> {
    match s {
        "pointcloud" => Some(ContactSource::PointCloud),
        "heuristic" => Some(ContactSource::Heuristic),
        "external" => Some(ContactSource::External),
        _ => None,
    }
}

impl PlanFile {
    /// The last waypoint list generated for the task's target, whose length
    /// is the reported waypoint count.
    pub fn target_waypoints(&self) -> Option<&WaypointListFile> {
        self.waypoints.iter().rev().find(|w| w.object == self.goal.target)
    }

    pub fn from_report(report: &PlanReport, scene: &Scene, task: &Task, tau: (f64, f64), timings: bool) -> Self {
        let m = &report.metrics;
        PlanFile {
            feasible: report.feasible,
            failure: report.failure.clone(),
            goal: GoalRecord {
                target: task.target.clone(),
                goal: arr(&task.goal),
                tolerance: [tau.0, tau.1],
            },
            frames: scene.frames().iter().map(|f| f.id.clone()).collect(),
            steps: report
                .path
                .iter()
                .enumerate()
                .map(|(t, c)| StepRecord {
                    t,
                    q: c.q.clone(),
                    objects: c.object_poses.iter().map(|(k, v)| (k.clone(), arr(v))).collect(),
                })
                .collect(),
            switches: report
                .switches
                .iter()
                .map(|e| SwitchRecord {
                    t: e.time_index,
                    kind: match e.kind {
                        AttachmentKind::Attach => SwitchKind::Attach,
                        AttachmentKind::Detach => SwitchKind::Detach,
                    },
                    parent: e.parent_id.clone(),
                    child: e.child_id.clone(),
                    rel_pose: arr(&e.rel_pose),
                })
                .collect(),
            contacts: report
                .contacts
                .iter()
                .map(|c| ContactRecordFile {
                    object: c.object.clone(),
                    manipulator: c.manipulator.clone(),
                    local: arr2(c.point.local),
                    world: arr2(c.point.world),
                    normal: arr2(c.point.outward_normal),
                    source: source_name(c.point.source).into(),
                    u: c.point.u,
                    waypoint_list: c.list_index,
                    waypoint_index: c.waypoint_index,
                    t: c.time_index,
                })
                .collect(),
            waypoints: report
                .waypoints_used
                .iter()
                .zip(&report.object_paths)
                .zip(&report.waypoint_objects)
                .map(|((w, p), object)| WaypointListFile {
                    object: object.clone(),
                    spacing: w.spacing,
                    path_length: w.source_path_length,
                    poses: w.waypoints.iter().map(arr).collect(),
                    object_path: p.iter().map(arr).collect(),
                })
                .collect(),
            sub_paths: report
                .sub_paths
                .iter()
                .map(|s| SubPathFile {
                    kind: match s.kind {
                        SubPathKind::Pick => "pick",
                        SubPathKind::Carry => "carry",
                        SubPathKind::ToolGrasp => "tool_grasp",
                    }
                    .into(),
                    object: s.object.clone(),
                    manipulator: s.manipulator.clone(),
                    start: s.start,
                    end: s.end,
                    stable_drift: s.stable_drift,
                })
                .collect(),
            metrics: MetricsFile {
                wp_count: m.wp_count,
                restarts: m.restarts,
                tool_used: m.tool_used.clone(),
                obstacles_moved: m.obstacles_moved.clone(),
                optimizer_calls: m.optimizer_calls,
                rrt_s: timings.then_some(m.rrt_seconds),
                cp_s: timings.then_some(m.cp_seconds),
                komo_s: timings.then_some(m.komo_seconds),
            },
        }
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        read(path)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan serializes");
        s.push('\n');
        s
    }

    pub fn configurations(&self) -> Vec<Configuration> {
        self.steps
            .iter()
            .map(|s| Configuration {
                q: s.q.clone(),
                object_poses: s.objects.iter().map(|(k, v)| (k.clone(), pose(*v))).collect(),
            })
            .collect()
    }

    pub fn events(&self) -> Vec<AttachmentEvent> {
        self.switches
            .iter()
            .map(|s| AttachmentEvent {
                time_index: s.t,
                kind: match s.kind {
                    SwitchKind::Attach => AttachmentKind::Attach,
                    SwitchKind::Detach => AttachmentKind::Detach,
                },
                parent_id: s.parent.clone(),
                child_id: s.child.clone(),
                rel_pose: pose(s.rel_pose),
            })
            .collect()
    }

    pub fn contact_points(&self) -> Vec<ContactPoint> {
        self.contacts
            .iter()
            .map(|c| ContactPoint {
                local: vec2(c.local),
                world: vec2(c.world),
                outward_normal: vec2(c.normal),
                source: source_from(&c.source).unwrap_or(ContactSource::External),
                u: c.u,
            })
            .collect()
    }
}
