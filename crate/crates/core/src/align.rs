//! State alignment: snap a diverging differentiable rollout back onto the
//! reference trajectory while letting a tunable fraction of the gradient
//! flow through the snap.
//!
//! Each aligned scalar is a single tape node whose forward value is the
//! reference value (bit-exact, no arithmetic on it) and whose only parent is
//! the surrogate value with partial `alpha`. A chain of k aligned identity
//! steps therefore backpropagates exactly alpha^k: alpha = 1 keeps full
//! gradient flow, alpha = 0 cuts every cross-step path while the forward
//! pass still tracks the reference.

use crate::ad::{Tape, Var};
use crate::math::{Quat, Vec3};
use crate::surrogate::BodyState;

/// Reference-valued node that passes `alpha` of the incoming adjoint to the
/// surrogate value.
pub fn align_scalar<'t>(tape: &'t Tape, x_ref: f64, x_diff: Var<'t>, alpha: f64) -> Var<'t> {
    tape.record(x_ref, &[(x_diff, alpha)])
}

fn align_vec3<'t>(
    tape: &'t Tape,
    r: Vec3<f64>,
    d: Vec3<Var<'t>>,
    alpha: f64,
) -> Vec3<Var<'t>> {
    Vec3::new(
        align_scalar(tape, r.x, d.x, alpha),
        align_scalar(tape, r.y, d.y, alpha),
        align_scalar(tape, r.z, d.z, alpha),
    )
}

fn align_quat<'t>(
    tape: &'t Tape,
    r: Quat<f64>,
    d: Quat<Var<'t>>,
    alpha: f64,
) -> Quat<Var<'t>> {
    Quat::new(
        align_scalar(tape, r.w, d.w, alpha),
        align_scalar(tape, r.x, d.x, alpha),
        align_scalar(tape, r.y, d.y, alpha),
        align_scalar(tape, r.z, d.z, alpha),
    )
}

/// Aligns every component of a base state onto the reference.
pub fn align_state<'t>(
    tape: &'t Tape,
    reference: &BodyState<f64>,
    surrogate: &BodyState<Var<'t>>,
    alpha: f64,
) -> BodyState<Var<'t>> {
    BodyState {
        pos: align_vec3(tape, reference.pos, surrogate.pos, alpha),
        orient: align_quat(tape, reference.orient, surrogate.orient, alpha),
        vel: align_vec3(tape, reference.vel, surrogate.vel, alpha),
        omega: align_vec3(tape, reference.omega, surrogate.omega, alpha),
    }
}
