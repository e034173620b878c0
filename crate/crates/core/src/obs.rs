//! Policy observation: a fixed 36-slot vector. Layout is part of the
//! checkpoint contract (a trained policy is only valid against the layout it
//! was trained on), so the slot ranges are published constants and both the
//! plain and the tape builders go through one generic assembler.
//!
//! Slots:
//!   0..3   velocity command (vx, vy, yaw rate)
//!   3..7   sin of each leg's gait phase angle
//!   7..11  cos of each leg's gait phase angle
//!   11..14 base linear velocity, world frame
//!   14..18 base orientation quaternion (w, x, y, z)
//!   18..21 base angular velocity, body frame
//!   21..33 joint angles relative to the default stance
//!   33..36 gravity direction in the body frame

use std::ops::Range;

use crate::ad::{Real, Tape, Var};
use crate::gait::GaitConfig;
use crate::math::Vec3;
use crate::model::{RobotModel, NUM_JOINTS, NUM_LEGS};
use crate::surrogate::BodyState;

pub const OBS_DIM: usize = 36;

pub const CMD: Range<usize> = 0..3;
pub const GAIT_SIN: Range<usize> = 3..7;
pub const GAIT_COS: Range<usize> = 7..11;
pub const BASE_VEL: Range<usize> = 11..14;
pub const BASE_QUAT: Range<usize> = 14..18;
pub const BASE_OMEGA: Range<usize> = 18..21;
pub const JOINT_POS: Range<usize> = 21..33;
pub const GRAV_PROJ: Range<usize> = 33..36;

/// World-frame gravity direction seen from the body frame.
pub fn gravity_projection<R: Real>(base: &BodyState<R>) -> Vec3<R> {
    // w - w builds a zero whose gradient contributions cancel exactly.
    let zero = base.orient.w - base.orient.w;
    let down = Vec3::new(zero, zero, zero.addc(-1.0));
    base.orient.rotate_inverse(down)
}

fn assemble<R: Real>(
    command: [R; 3],
    leg_sin: [R; NUM_LEGS],
    leg_cos: [R; NUM_LEGS],
    base: &BodyState<R>,
    q_rel: [R; NUM_JOINTS],
) -> [R; OBS_DIM] {
    let g = gravity_projection(base);
    let mut obs = [command[0]; OBS_DIM];
    obs[CMD].copy_from_slice(&command);
    obs[GAIT_SIN].copy_from_slice(&leg_sin);
    obs[GAIT_COS].copy_from_slice(&leg_cos);
    obs[BASE_VEL].copy_from_slice(&base.vel.to_array());
    obs[BASE_QUAT].copy_from_slice(&base.orient.to_array());
    obs[BASE_OMEGA].copy_from_slice(&base.omega.to_array());
    obs[JOINT_POS].copy_from_slice(&q_rel);
    obs[GRAV_PROJ].copy_from_slice(&g.to_array());
    obs
}

/// Plain observation for the reference-simulation side.
pub fn observe(
    command: [f64; 3],
    phase: f64,
    gait: &GaitConfig,
    base: &BodyState<f64>,
    q: &[f64; NUM_JOINTS],
    model: &RobotModel,
) -> [f64; OBS_DIM] {
    let offsets = gait.pattern.offsets();
    let leg_sin = std::array::from_fn(|leg| (phase + offsets[leg]).sin());
    let leg_cos = std::array::from_fn(|leg| (phase + offsets[leg]).cos());
    let q_def = model.q_default();
    let q_rel = std::array::from_fn(|i| q[i] - q_def[i]);
    assemble(command, leg_sin, leg_cos, base, q_rel)
}

/// Tape observation: base-state slots read the differentiable (aligned)
/// state, everything sourced from the reference simulation enters as
/// constants.
pub fn observe_vars<'t>(
    tape: &'t Tape,
    command: [f64; 3],
    phase: f64,
    gait: &GaitConfig,
    base: &BodyState<Var<'t>>,
    q: &[f64; NUM_JOINTS],
    model: &RobotModel,
) -> [Var<'t>; OBS_DIM] {
    let offsets = gait.pattern.offsets();
    let leg_sin = std::array::from_fn(|leg| tape.constant((phase + offsets[leg]).sin()));
    let leg_cos = std::array::from_fn(|leg| tape.constant((phase + offsets[leg]).cos()));
    let q_def = model.q_default();
    let q_rel = std::array::from_fn(|i| tape.constant(q[i] - q_def[i]));
    let cmd = command.map(|c| tape.constant(c));
    assemble(cmd, leg_sin, leg_cos, base, q_rel)
}
