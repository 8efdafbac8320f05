//! SVG rendering of plans: one frame per timestep and an overview.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use hmap_core::planner::replay;
use hmap_core::scene::{FrameKind, Scene, SceneError};
use hmap_core::{Pose2, Shape};

use crate::formats::PlanFile;

const PX_PER_M: f64 = 400.0;

struct Canvas {
    min: (f64, f64),
    max: (f64, f64),
    body: String,
}

impl Canvas {
    fn new(scene: &Scene) -> Self {
        let b = &scene.bounds;
        Self {
            min: (b.min.x, b.min.y),
            max: (b.max.x, b.max.y),
            body: String::new(),
        }
    }

    // Flip y so that the world's +y points up on screen.
    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.min.0) * PX_PER_M, (self.max.1 - y) * PX_PER_M)
    }

    fn shape(&mut self, shape: &Shape, pose: &Pose2, style: &str, class: &str) {
        match shape {
            Shape::Circle { radius } => {
                let (cx, cy) = self.map(pose.x, pose.y);
                let _ = writeln!(
                    self.body,
                    r#"<circle class="{class}" cx="{cx:.2}" cy="{cy:.2}" r="{:.2}" {style}/>"#,
                    radius * PX_PER_M
                );
            }
            _ => {
                let verts = shape.local_vertices().unwrap_or_default();
                let pts: Vec<String> = verts
                    .iter()
                    .map(|v| {
                        let w = pose.transform_point(*v);
                        let (x, y) = self.map(w.x, w.y);
                        format!("{x:.2},{y:.2}")
                    })
                    .collect();
                let _ = writeln!(self.body, r#"<polygon class="{class}" points="{}" {style}/>"#, pts.join(" "));
            }
        }
    }

    fn marker(&mut self, x: f64, y: f64, fill: &str, class: &str) {
        let (cx, cy) = self.map(x, y);
        let _ = writeln!(
            self.body,
            r##"<circle class="{class}" cx="{cx:.2}" cy="{cy:.2}" r="5" fill="{fill}" stroke="#333" stroke-width="1"/>"##
        );
    }

    fn finish(self, title: &str) -> String {
        let w = (self.max.0 - self.min.0) * PX_PER_M;
        let h = (self.max.1 - self.min.1) * PX_PER_M;
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.2} {h:.2}\">\n\
             <title>{title}</title>\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body
        )
    }
}

fn style_for(kind: FrameKind) -> &'static str {
    match kind {
        FrameKind::Static => r##"fill="#555" stroke="none""##,
        FrameKind::Link => r##"fill="#8fb3d9" stroke="#2b4f7a" stroke-width="1""##,
        FrameKind::Movable => r##"fill="#9ccf8f" stroke="#2f6b22" stroke-width="1""##,
        FrameKind::Tool => r##"fill="#d9b38f" stroke="#7a4f2b" stroke-width="1""##,
    }
}

fn draw_scene(canvas: &mut Canvas, scene: &Scene, poses: &[Pose2]) {
    for i in scene.shaped_frames() {
        let f = scene.frame(i);
        let shape = f.shape.as_ref().expect("shaped frame");
        canvas.shape(shape, &scene.shape_pose(poses, i), style_for(f.kind), "body");
    }
}

/// Writes `step_NNNN.svg` for every timestep and `overview.svg` into `dir`,
/// returning the written paths.
pub fn render(plan: &PlanFile, scene: &Scene, dir: &Path) -> Result<Vec<PathBuf>, SvgError> {
    std::fs::create_dir_all(dir).map_err(|e| SvgError::Io(dir.into(), e))?;
    let poses = replay(scene, &plan.configurations(), &plan.events())?;
    let mut written = Vec::with_capacity(poses.len() + 1);
    let write = |name: String, text: String, written: &mut Vec<PathBuf>| -> Result<(), SvgError> {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| SvgError::Io(p.clone(), e))?;
        written.push(p);
        Ok(())
    };

    for (t, world) in poses.iter().enumerate() {
        let mut c = Canvas::new(scene);
        draw_scene(&mut c, scene, world);
        write(format!("step_{t:04}.svg"), c.finish(&format!("t = {t}")), &mut written)?;
    }

    let mut c = Canvas::new(scene);
    if let Some(last) = poses.last() {
        draw_scene(&mut c, scene, last);
    }
    // Silhouettes of the target at intermediate steps.
    if let Ok(target) = scene.index_of(&plan.goal.target) {
        let shape = scene.frame(target).shape.clone();
        if let Some(shape) = shape {
            let every = (poses.len() / 12).max(1);
            for world in poses.iter().step_by(every) {
                c.shape(
                    &shape,
                    &scene.shape_pose(world, target),
                    r##"fill="none" stroke="#999" stroke-width="1" stroke-dasharray="4 3""##,
                    "silhouette",
                );
            }
        }
    }
    if let Some(list) = plan.target_waypoints() {
        for w in &list.poses {
            c.marker(w[0], w[1], "red", "waypoint");
        }
    }
    for cp in &plan.contacts {
        c.marker(cp.world[0], cp.world[1], "yellow", "contact");
    }
    write("overview.svg".into(), c.finish("overview"), &mut written)?;
    Ok(written)
}

#[derive(Debug, thiserror::Error)]
pub enum SvgError {
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error(transparent)]
    Scene(#[from] SceneError),
}
