//! Kinematic gate-sequence tasks.
//!
//! A task is a sequence of axis-aligned gates in the object frame that the
//! end-effector must enter in order, followed by a mechanism (a slide or a
//! hinge) whose handle moves only while the end-effector stays coupled to it.
//! The state handed to policies is the end-effector position relative to the
//! object, so object-pose randomization shows up as varied start states.

mod degrade;
mod expert;

pub use degrade::{degrade, degrade_with_seed, DEGRADE_SEED};
pub use expert::{scripted_expert, ExpertConfig};

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub type Vec3 = [f64; 3];

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub center: Vec3,
    pub half_extents: Vec3,
}

impl Aabb {
    pub fn contains(&self, p: &[f64]) -> bool {
        (0..3).all(|i| (p[i] - self.center[i]).abs() <= self.half_extents[i])
    }

    fn overlaps(&self, other: &Aabb) -> bool {
        (0..3).all(|i| (self.center[i] - other.center[i]).abs() <= self.half_extents[i] + other.half_extents[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mechanism {
    /// Handle slides along `motion_axis`; threshold in length units.
    Prismatic,
    /// Handle swings about a vertical axis through `center`; threshold in degrees.
    Hinge { center: Vec3, axis: Vec3 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Randomization {
    /// Half-widths of the object translation box.
    pub translation: Vec3,
    /// Half-width of the object yaw range, radians.
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub gates: Vec<Aabb>,
    /// Initial handle position in the object frame.
    pub handle: Vec3,
    /// Unit direction the handle initially moves in.
    pub motion_axis: Vec3,
    pub mechanism: Mechanism,
    /// Coupling radius around the current handle position.
    pub tube_radius: f64,
    pub success_threshold: f64,
    pub randomization: Randomization,
    /// World-frame box for the initial end-effector position (object at its nominal pose).
    pub start_region: Aabb,
}

const SLIDE_JSON: &str = include_str!("../../presets/slide.json");
const DRAWER_JSON: &str = include_str!("../../presets/drawer.json");
const DOOR_JSON: &str = include_str!("../../presets/door.json");

pub const PRESETS: [&str; 3] = ["slide", "drawer", "door"];

impl TaskSpec {
    pub fn preset(task_id: &str) -> Result<Self> {
        let text = match task_id {
            "slide" => SLIDE_JSON,
            "drawer" => DRAWER_JSON,
            "door" => DOOR_JSON,
            other => return Err(Error::Config(format!("unknown task '{other}'"))),
        };
        Self::from_json(text)
    }

    /// Preset name, or a path to a task JSON file.
    pub fn load(name_or_path: &str) -> Result<Self> {
        if PRESETS.contains(&name_or_path) {
            return Self::preset(name_or_path);
        }
        let path = Path::new(name_or_path);
        if !path.is_file() {
            return Err(Error::Config(format!("'{name_or_path}' is neither a preset nor a task file")));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: TaskSpec = serde_json::from_str(text).map_err(|e| Error::Malformed(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gates.is_empty() {
            return Err(Error::Config("task needs at least one gate".into()));
        }
        for (i, a) in self.gates.iter().enumerate() {
            if a.half_extents.iter().any(|h| *h <= 0.0) {
                return Err(Error::Config(format!("gate {i} has a non-positive extent")));
            }
            for b in &self.gates[i + 1..] {
                if a.overlaps(b) {
                    return Err(Error::Config("gates must be pairwise disjoint".into()));
                }
            }
        }
        if !(self.success_threshold > 0.0) || !(self.tube_radius > 0.0) {
            return Err(Error::Config("threshold and tube radius must be positive".into()));
        }
        if (norm(self.motion_axis) - 1.0).abs() > 1e-9 {
            return Err(Error::Config("motion_axis must be a unit vector".into()));
        }
        if let Mechanism::Hinge { center, axis } = self.mechanism {
            if (norm(axis) - 1.0).abs() > 1e-9 {
                return Err(Error::Config("hinge axis must be a unit vector".into()));
            }
            if self.hinge_radius(center, axis) <= 0.0 {
                return Err(Error::Config("handle lies on the hinge axis".into()));
            }
        }
        Ok(())
    }

    fn hinge_radius(&self, center: Vec3, axis: Vec3) -> f64 {
        let r = sub(self.handle, center);
        norm(sub(r, scale(axis, dot(r, axis))))
    }

    /// Success threshold in the mechanism's native unit (length, or radians for hinges).
    pub fn threshold_native(&self) -> f64 {
        match self.mechanism {
            Mechanism::Prismatic => self.success_threshold,
            Mechanism::Hinge { .. } => self.success_threshold.to_radians(),
        }
    }

    /// Handle position after `progress` units (or radians) of opening.
    pub fn handle_at(&self, progress: f64) -> Vec3 {
        match self.mechanism {
            Mechanism::Prismatic => add(self.handle, scale(self.motion_axis, progress)),
            Mechanism::Hinge { center, axis } => {
                let r0 = sub(self.handle, center);
                let along = dot(r0, axis);
                let radial = sub(r0, scale(axis, along));
                let tangent = cross(axis, radial);
                let sign = if dot(tangent, self.motion_axis) >= 0.0 { 1.0 } else { -1.0 };
                let (s, c) = (sign * progress).sin_cos();
                // Rodrigues rotation of the radial arm about the axis.
                add(center, add(scale(axis, along), add(scale(radial, c), scale(tangent, s))))
            }
        }
    }

    /// Opening coordinate of point `p`: distance along the slide, or signed angle about the hinge.
    pub fn progress_of(&self, p: Vec3) -> f64 {
        match self.mechanism {
            Mechanism::Prismatic => dot(sub(p, self.handle), self.motion_axis),
            Mechanism::Hinge { center, axis } => {
                let r0 = sub(self.handle, center);
                let radial0 = sub(r0, scale(axis, dot(r0, axis)));
                let rp = sub(p, center);
                let radial = sub(rp, scale(axis, dot(rp, axis)));
                let tangent = cross(axis, radial0);
                let sign = if dot(tangent, self.motion_axis) >= 0.0 { 1.0 } else { -1.0 };
                sign * dot(cross(radial0, radial), axis).atan2(dot(radial0, radial))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectPose {
    pub translation: Vec3,
    pub yaw: f64,
}

impl ObjectPose {
    /// World point expressed in the object frame.
    pub fn to_object(&self, world: Vec3) -> Vec3 {
        let d = sub(world, self.translation);
        let (s, c) = self.yaw.sin_cos();
        [c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]]
    }

    pub fn to_world(&self, local: Vec3) -> Vec3 {
        let (s, c) = self.yaw.sin_cos();
        add([c * local[0] - s * local[1], s * local[0] + c * local[1], local[2]], self.translation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Running,
    Success,
}

/// One episode's environment.
#[derive(Debug, Clone)]
pub struct EnvInstance {
    spec: TaskSpec,
    pub object_pose: ObjectPose,
    start: Vec3,
    pub gate_progress: usize,
    /// Opening so far, in the mechanism's native unit.
    pub accrued: f64,
    success: bool,
}

fn sample_sym<R: Rng>(rng: &mut R, half: f64) -> f64 {
    if half > 0.0 {
        rng.random_range(-half..=half)
    } else {
        0.0
    }
}

/// Samples an object pose and start state; deterministic per seed.
pub fn reset(spec: &TaskSpec, seed: u64) -> EnvInstance {
    let mut rng = seed::rng(seed, &[]);
    let r = &spec.randomization;
    let translation = [
        sample_sym(&mut rng, r.translation[0]),
        sample_sym(&mut rng, r.translation[1]),
        sample_sym(&mut rng, r.translation[2]),
    ];
    let yaw = sample_sym(&mut rng, r.yaw);
    let sr = &spec.start_region;
    let world = [
        sr.center[0] + sample_sym(&mut rng, sr.half_extents[0]),
        sr.center[1] + sample_sym(&mut rng, sr.half_extents[1]),
        sr.center[2] + sample_sym(&mut rng, sr.half_extents[2]),
    ];
    EnvInstance::from_world(spec, ObjectPose { translation, yaw }, world)
}

impl EnvInstance {
    pub fn from_world(spec: &TaskSpec, object_pose: ObjectPose, ee_world: Vec3) -> Self {
        Self {
            spec: spec.clone(),
            object_pose,
            start: object_pose.to_object(ee_world),
            gate_progress: 0,
            accrued: 0.0,
            success: false,
        }
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    /// Initial end-effector state in the object frame.
    pub fn start(&self) -> Vec3 {
        self.start
    }

    pub fn is_success(&self) -> bool {
        self.success
    }

    pub fn gates_done(&self) -> bool {
        self.gate_progress == self.spec.gates.len()
    }

    /// Advances the task with a new object-relative end-effector position.
    pub fn step(&mut self, s_new: &[f64]) -> Status {
        if self.success {
            return Status::Success;
        }
        let p = [s_new[0], s_new[1], s_new[2]];
        if !self.gates_done() {
            if self.spec.gates[self.gate_progress].contains(&p) {
                self.gate_progress += 1;
            }
            if !self.gates_done() {
                return Status::Running;
            }
        }
        let handle = self.spec.handle_at(self.accrued);
        if norm(sub(p, handle)) <= self.spec.tube_radius {
            self.accrued = self.accrued.max(self.spec.progress_of(p));
        }
        if self.accrued >= self.spec.threshold_native() {
            self.success = true;
            Status::Success
        } else {
            Status::Running
        }
    }
}
