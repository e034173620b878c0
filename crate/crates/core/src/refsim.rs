//! Whole-body reference simulation: penalty ground contact, per-joint
//! dynamics with reflected inertia, hard joint limits, and the same
//! semi-implicit base integration as the surrogate. Operates on plain `f64`
//! only; none of its state or outputs ever appears on a tape. The single
//! bridge into the differentiable side is the state-alignment op, which
//! copies forward values and nothing else.
//!
//! Determinism: fixed-size arrays, no hashing, no global state. Two runs
//! from the same state and inputs produce bit-identical trajectories.

use serde::{Deserialize, Serialize};

use crate::kinematics::{foot_jacobian, foot_world_velocity, leg_fk, leg_slice};
use crate::math::Vec3;
use crate::model::{RobotModel, NUM_JOINTS, NUM_LEGS};
use crate::surrogate::BodyState;

/// Penalty contact parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContactModel {
    /// Normal stiffness, N/m.
    pub kn: f64,
    /// Normal damping, N s/m.
    pub dn: f64,
    /// Tangential stiffness, N/m.
    pub kt: f64,
    /// Coulomb friction coefficient.
    pub mu: f64,
}

impl Default for ContactModel {
    fn default() -> Self {
        ContactModel {
            kn: 3.0e4,
            dn: 300.0,
            kt: 1.0e4,
            mu: 0.7,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Terrain {
    Flat { height: f64 },
    Heightfield(Heightfield),
}

impl Terrain {
    pub fn flat() -> Terrain {
        Terrain::Flat { height: 0.0 }
    }

    /// Ground height under (x, y). Heightfields interpolate bilinearly and
    /// clamp to the border outside the grid.
    pub fn height(&self, x: f64, y: f64) -> f64 {
        match self {
            Terrain::Flat { height } => *height,
            Terrain::Heightfield(h) => h.height(x, y),
        }
    }
}

/// Regular grid of heights, centered on the origin, row-major with x varying
/// fastest.
#[derive(Debug, Clone)]
pub struct Heightfield {
    pub nx: usize,
    pub ny: usize,
    pub cell: f64,
    pub heights: Vec<f64>,
}

impl Heightfield {
    pub fn height(&self, x: f64, y: f64) -> f64 {
        let gx = (x / self.cell + (self.nx - 1) as f64 / 2.0)
            .clamp(0.0, (self.nx - 1) as f64);
        let gy = (y / self.cell + (self.ny - 1) as f64 / 2.0)
            .clamp(0.0, (self.ny - 1) as f64);
        let ix = (gx as usize).min(self.nx.saturating_sub(2));
        let iy = (gy as usize).min(self.ny.saturating_sub(2));
        let fx = gx - ix as f64;
        let fy = gy - iy as f64;
        let at = |i: usize, j: usize| self.heights[j * self.nx + i];
        let h00 = at(ix, iy);
        let h10 = at(ix + 1, iy);
        let h01 = at(ix, iy + 1);
        let h11 = at(ix + 1, iy + 1);
        let a = h00 + (h10 - h00) * fx;
        let b = h01 + (h11 - h01) * fx;
        a + (b - a) * fy
    }

    /// Parses "nx ny cell_size" on the first line, then nx * ny heights.
    pub fn parse(text: &str) -> Result<Heightfield, String> {
        let mut lines = text.lines();
        let header = lines.next().ok_or("empty heightfield file")?;
        let head: Vec<&str> = header.split_whitespace().collect();
        if head.len() != 3 {
            return Err(format!(
                "heightfield line 1: expected 'nx ny cell_size', got {head:?}"
            ));
        }
        let nx: usize = head[0]
            .parse()
            .map_err(|e| format!("heightfield line 1: nx: {e}"))?;
        let ny: usize = head[1]
            .parse()
            .map_err(|e| format!("heightfield line 1: ny: {e}"))?;
        let cell: f64 = head[2]
            .parse()
            .map_err(|e| format!("heightfield line 1: cell_size: {e}"))?;
        if nx < 2 || ny < 2 || !(cell > 0.0) {
            return Err("heightfield line 1: need nx, ny >= 2 and cell_size > 0".into());
        }
        let mut heights = Vec::with_capacity(nx * ny);
        for (lineno, line) in lines.enumerate() {
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|e| format!("heightfield line {}: {e}", lineno + 2))?;
                heights.push(v);
            }
        }
        if heights.len() != nx * ny {
            return Err(format!(
                "heightfield: expected {} heights, found {}",
                nx * ny,
                heights.len()
            ));
        }
        Ok(Heightfield {
            nx,
            ny,
            cell,
            heights,
        })
    }

    /// Smooth random terrain: coarse seeded noise blurred onto the grid.
    pub fn procedural(seed: u64, nx: usize, ny: usize, cell: f64, amplitude: f64) -> Heightfield {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut heights: Vec<f64> = (0..nx * ny)
            .map(|_| rng.gen_range(-amplitude..amplitude))
            .collect();
        // A few box blurs turn white noise into gentle bumps.
        for _ in 0..4 {
            let src = heights.clone();
            for j in 0..ny {
                for i in 0..nx {
                    let mut acc = 0.0;
                    let mut n = 0.0;
                    for dj in -1i64..=1 {
                        for di in -1i64..=1 {
                            let ii = i as i64 + di;
                            let jj = j as i64 + dj;
                            if ii >= 0 && ii < nx as i64 && jj >= 0 && jj < ny as i64 {
                                acc += src[jj as usize * nx + ii as usize];
                                n += 1.0;
                            }
                        }
                    }
                    heights[j * nx + i] = acc / n;
                }
            }
        }
        Heightfield {
            nx,
            ny,
            cell,
            heights,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    /// Base dropped below the minimum height above the terrain.
    Height,
    /// Body tilted past the maximum angle from vertical.
    Tilt,
}

impl std::fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TerminationReason::Height => write!(f, "height"),
            TerminationReason::Tilt => write!(f, "tilt"),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TerminationConfig {
    /// Minimum base height above terrain, m.
    pub height_min: f64,
    /// Maximum tilt from vertical, degrees.
    pub tilt_max_deg: f64,
}

impl Default for TerminationConfig {
    fn default() -> Self {
        TerminationConfig {
            height_min: 0.12,
            tilt_max_deg: 60.0,
        }
    }
}

/// Full reference-simulation state: floating base, joints, and per-foot
/// tangential contact anchors (the memory of the stick-slip friction
/// spring).
#[derive(Debug, Clone)]
pub struct RefState {
    pub base: BodyState<f64>,
    pub q: [f64; NUM_JOINTS],
    pub dq: [f64; NUM_JOINTS],
    pub anchors: [Option<[f64; 2]>; NUM_LEGS],
}

impl RefState {
    pub fn standing(model: &RobotModel, height: f64) -> RefState {
        RefState {
            base: BodyState::standing(height),
            q: model.q_default(),
            dq: [0.0; NUM_JOINTS],
            anchors: [None; NUM_LEGS],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.base.is_finite()
            && self.q.iter().all(|v| v.is_finite())
            && self.dq.iter().all(|v| v.is_finite())
    }
}

/// Per-step contact summary.
#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    /// World-frame ground reaction force on each foot.
    pub forces: [Vec3<f64>; NUM_LEGS],
    pub in_contact: [bool; NUM_LEGS],
}

/// One physics substep. Contact forces are evaluated at the pre-step state,
/// then the base and each joint integrate semi-implicitly. Joint dynamics
/// are decoupled second-order systems: ddq = (tau + J^T f) / m_reflected.
/// Joint limits clamp the angle and zero the velocity at the stop.
pub fn whole_body_step(
    state: &mut RefState,
    tau: &[f64; NUM_JOINTS],
    terrain: &Terrain,
    contact: &ContactModel,
    model: &RobotModel,
    dt: f64,
) -> StepOutput {
    let mut out = StepOutput {
        forces: [Vec3::ZERO; NUM_LEGS],
        in_contact: [false; NUM_LEGS],
    };

    // Contact forces from current foot kinematics.
    for leg in 0..NUM_LEGS {
        let q_leg = leg_slice(&state.q, leg);
        let dq_leg = leg_slice(&state.dq, leg);
        let foot_b = leg_fk(model, leg, q_leg);
        let foot_w = state.base.pos + state.base.orient.rotate(foot_b);
        let ground = terrain.height(foot_w.x, foot_w.y);
        let depth = ground - foot_w.z;
        if depth <= 0.0 {
            state.anchors[leg] = None;
            continue;
        }
        let v_foot = foot_world_velocity(model, leg, q_leg, dq_leg, &state.base);
        let fz = (contact.kn * depth - contact.dn * v_foot.z).max(0.0);

        let anchor = state.anchors[leg].get_or_insert([foot_w.x, foot_w.y]);
        let mut ftx = -contact.kt * (foot_w.x - anchor[0]);
        let mut fty = -contact.kt * (foot_w.y - anchor[1]);
        let t_norm = (ftx * ftx + fty * fty).sqrt();
        let limit = contact.mu * fz;
        if t_norm > limit {
            // Slip: project onto the Coulomb disc and drag the anchor so the
            // spring stretch matches the clamped force.
            let scale = if t_norm > 0.0 { limit / t_norm } else { 0.0 };
            ftx *= scale;
            fty *= scale;
            anchor[0] = foot_w.x + ftx / contact.kt;
            anchor[1] = foot_w.y + fty / contact.kt;
        }
        out.forces[leg] = Vec3::new(ftx, fty, fz);
        out.in_contact[leg] = true;
    }

    // Base: same integrator as the surrogate.
    let mut vel = state.base.vel + model.gravity_vec().scalec(dt);
    for leg in 0..NUM_LEGS {
        if out.in_contact[leg] {
            vel = vel + out.forces[leg].scalec(dt / model.mass);
        }
    }
    let pos = state.base.pos + vel.scalec(dt);

    let mut torque = Vec3::ZERO;
    for leg in 0..NUM_LEGS {
        if !out.in_contact[leg] {
            continue;
        }
        let q_leg = leg_slice(&state.q, leg);
        let foot_b = leg_fk(model, leg, q_leg);
        let arm_b = foot_b; // base-origin lever in the body frame
        let f_b = state.base.orient.rotate_inverse(out.forces[leg]);
        torque = torque + arm_b.cross(f_b);
    }
    let iw = model.inertia_mat().apply(state.base.omega);
    let net = torque - state.base.omega.cross(iw);
    let omega = state.base.omega + model.inertia_inv().apply(net).scalec(dt);
    let dq_quat = state.base.orient.mul_pure(omega).scalec(0.5 * dt);
    let orient = state.base.orient.add(dq_quat).normalize();

    // Joints: reflected-inertia double integrators under tau + J^T f.
    for leg in 0..NUM_LEGS {
        let q_leg = leg_slice(&state.q, leg);
        let jt = foot_jacobian(model, leg, q_leg).transpose();
        let f_b = state.base.orient.rotate_inverse(out.forces[leg]);
        let joint_load = jt.apply(f_b);
        let loads = [joint_load.x, joint_load.y, joint_load.z];
        for j in 0..3 {
            let idx = leg * 3 + j;
            let ddq = (tau[idx] + loads[j]) / model.reflected_inertia;
            state.dq[idx] += dt * ddq;
            state.q[idx] += dt * state.dq[idx];
            if state.q[idx] < model.joint_lower[j] {
                state.q[idx] = model.joint_lower[j];
                state.dq[idx] = 0.0;
            } else if state.q[idx] > model.joint_upper[j] {
                state.q[idx] = model.joint_upper[j];
                state.dq[idx] = 0.0;
            }
        }
    }

    state.base = BodyState {
        pos,
        orient,
        vel,
        omega,
    };
    out
}

/// Failure check on the reference state.
pub fn check_termination(
    state: &RefState,
    terrain: &Terrain,
    cfg: &TerminationConfig,
) -> Option<TerminationReason> {
    let p = state.base.pos;
    if p.z - terrain.height(p.x, p.y) < cfg.height_min {
        return Some(TerminationReason::Height);
    }
    // Body-up axis in the world; tilt is its angle from vertical.
    let up = state.base.orient.rotate(Vec3::new(0.0, 0.0, 1.0));
    if up.z < cfg.tilt_max_deg.to_radians().cos() {
        return Some(TerminationReason::Tilt);
    }
    None
}

/// Kinetic + gravitational + contact-spring energy of the composite model.
/// Joint kinetic energy uses the reflected inertia; leg links carry no mass
/// of their own.
pub fn mechanical_energy(
    state: &RefState,
    terrain: &Terrain,
    contact: &ContactModel,
    model: &RobotModel,
) -> f64 {
    let b = &state.base;
    let lin = 0.5 * model.mass * b.vel.norm_squared();
    let iw = model.inertia_mat().apply(b.omega);
    let rot = 0.5 * b.omega.dot(iw);
    let grav = -model.mass * model.gravity[2] * b.pos.z;
    let joints: f64 = state
        .dq
        .iter()
        .map(|&v| 0.5 * model.reflected_inertia * v * v)
        .sum();
    let mut springs = 0.0;
    for leg in 0..NUM_LEGS {
        let foot_b = leg_fk(model, leg, leg_slice(&state.q, leg));
        let foot_w = b.pos + b.orient.rotate(foot_b);
        let depth = terrain.height(foot_w.x, foot_w.y) - foot_w.z;
        if depth > 0.0 {
            springs += 0.5 * contact.kn * depth * depth;
            if let Some(a) = state.anchors[leg] {
                let dx = foot_w.x - a[0];
                let dy = foot_w.y - a[1];
                springs += 0.5 * contact.kt * (dx * dx + dy * dy);
            }
        }
    }
    lin + rot + grav + joints + springs
}
