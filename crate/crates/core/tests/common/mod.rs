#![allow(dead_code)]

use hmap_core::scene::{Arm, Bounds, Frame, FrameKind, Scene};
use hmap_core::{Pose2, Shape, Vec2};

pub const LINKS: [f64; 3] = [0.5, 0.4, 0.3];
pub const LINK_HALF_WIDTH: f64 = 0.02;
pub const EE_RADIUS: f64 = 0.03;

/// Three-link arm at the origin. The first joint turns freely, the others
/// within ±2.6 rad. Extra frames are appended after the arm.
pub fn three_link(extra: Vec<Frame>) -> Scene {
    let mut frames = Vec::new();
    let mut parent: Option<String> = None;
    for (i, len) in LINKS.iter().enumerate() {
        let id = format!("l{}", i + 1);
        let (lo, hi) = if i == 0 { (-std::f64::consts::PI, std::f64::consts::PI) } else { (-2.6, 2.6) };
        let mut f = Frame::new(&id, FrameKind::Link)
            .with_joint(lo, hi)
            .with_shape_at(Shape::rect(len / 2.0, LINK_HALF_WIDTH), Pose2::new(len / 2.0, 0.0, 0.0));
        if let Some(p) = &parent {
            f = f.with_parent(p).at(Pose2::new(LINKS[i - 1], 0.0, 0.0));
        }
        frames.push(f);
        parent = Some(id);
    }
    frames.push(
        Frame::new("ee", FrameKind::Link)
            .with_parent("l3")
            .at(Pose2::new(LINKS[2], 0.0, 0.0))
            .with_shape(Shape::circle(EE_RADIUS)),
    );
    frames.extend(extra);
    Scene::new(
        frames,
        Bounds {
            min: Vec2::new(-2.0, -2.0),
            max: Vec2::new(2.0, 2.0),
        },
        vec![Arm {
            name: "arm".into(),
            links: vec!["l1".into(), "l2".into(), "l3".into()],
            end_effector: "ee".into(),
        }],
    )
    .unwrap()
}

pub fn movable_box(id: &str, pose: Pose2, hx: f64, hy: f64) -> Frame {
    Frame::new(id, FrameKind::Movable).at(pose).with_shape(Shape::rect(hx, hy))
}

pub fn wall(id: &str, pose: Pose2, hx: f64, hy: f64) -> Frame {
    Frame::new(id, FrameKind::Static).at(pose).with_shape(Shape::rect(hx, hy))
}
