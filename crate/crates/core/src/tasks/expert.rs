use rand_distr::{Distribution, Normal};

use super::{reset, Mechanism, TaskSpec, Vec3};
use crate::error::{Error, Result};
use crate::seed;
use crate::trajectory::{Step, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertConfig {
    pub dt: f64,
    pub cruise_speed: f64,
    /// Proportional gain on distance to the active waypoint.
    pub gain: f64,
    /// Low-pass coefficient on the commanded velocity.
    pub smoothing: f64,
    pub max_steps: usize,
    /// Overshoot past the success threshold, as a fraction of it.
    pub overshoot: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self { dt: 0.05, cruise_speed: 0.3, gain: 3.0, smoothing: 0.3, max_steps: 600, overshoot: 0.15 }
    }
}

enum Waypoint {
    /// Reached once the environment counts gate `i` as passed.
    Gate(usize, Vec3),
    Via(Vec3),
    Final(Vec3),
}

fn dist(a: Vec3, b: Vec3) -> f64 {
    super::norm(super::sub(a, b))
}

/// Scripted demonstration for episode `seed`, verified to succeed.
///
/// Waypoints are the gate centers with Gaussian jitter of `noise_std`, kept
/// inside the inner half of each gate, then the handle and points along its
/// opening path.
pub fn scripted_expert(spec: &TaskSpec, seed: u64, noise_std: f64) -> Result<Trajectory> {
    scripted_expert_with(spec, seed, noise_std, &ExpertConfig::default())
}

pub fn scripted_expert_with(spec: &TaskSpec, seed: u64, noise_std: f64, cfg: &ExpertConfig) -> Result<Trajectory> {
    let mut env = reset(spec, seed);
    let mut rng = seed::rng(seed, &[seed::stream::DEMO]);
    let noise = Normal::new(0.0, noise_std.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut jitter = |p: Vec3, half: Option<Vec3>| -> Vec3 {
        let mut out = p;
        for i in 0..3 {
            let mut d = if noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            if let Some(h) = half {
                d = d.clamp(-0.5 * h[i], 0.5 * h[i]);
            }
            out[i] += d;
        }
        out
    };

    let mut waypoints = Vec::new();
    for (i, g) in spec.gates.iter().enumerate() {
        waypoints.push(Waypoint::Gate(i, jitter(g.center, Some(g.half_extents))));
    }
    let end = spec.threshold_native() * (1.0 + cfg.overshoot);
    let segments = match spec.mechanism {
        Mechanism::Prismatic => (end / 0.05).ceil() as usize,
        Mechanism::Hinge { .. } => (end / 4f64.to_radians()).ceil() as usize,
    };
    waypoints.push(Waypoint::Via(spec.handle_at(0.0)));
    for i in 1..segments {
        waypoints.push(Waypoint::Via(spec.handle_at(end * i as f64 / segments as f64)));
    }
    waypoints.push(Waypoint::Final(spec.handle_at(end)));

    let mut s = env.start();
    let mut v = [0.0; 3];
    let mut steps = vec![Step { t: 0.0, s: s.to_vec(), s_dot: vec![0.0; 3] }];
    let mut active = 0;
    for n in 1..=cfg.max_steps {
        let (target, last) = match &waypoints[active] {
            Waypoint::Gate(_, p) | Waypoint::Via(p) => (*p, false),
            Waypoint::Final(p) => (*p, true),
        };
        let d = dist(s, target);
        let speed = if last { (cfg.gain * d).min(cfg.cruise_speed) } else { cfg.cruise_speed };
        for i in 0..3 {
            let cmd = if d > 0.0 { speed * (target[i] - s[i]) / d } else { 0.0 };
            v[i] += cfg.smoothing * (cmd - v[i]);
            s[i] += cfg.dt * v[i];
        }
        env.step(&s);
        steps.push(Step { t: n as f64 * cfg.dt, s: s.to_vec(), s_dot: vec![0.0; 3] });

        match &waypoints[active] {
            Waypoint::Gate(i, p) if env.gate_progress > *i && dist(s, *p) < 0.03 => active += 1,
            Waypoint::Via(p) if dist(s, *p) < 0.02 => active += 1,
            Waypoint::Final(p) => {
                if env.is_success() && dist(s, *p) < 0.005 && super::norm(v) < 0.01 {
                    let traj = Trajectory { task_id: spec.task_id.clone(), seed, steps, success: true };
                    return Ok(traj.with_finite_difference_velocities());
                }
            }
            _ => {}
        }
    }
    Err(Error::ExpertFailed(format!(
        "{} seed {seed}: gates {}/{}, accrued {:.3}",
        spec.task_id,
        env.gate_progress,
        spec.gates.len(),
        env.accrued
    )))
}
