//! Serial 3-DoF leg kinematics: hip abduction about the body x axis, then
//! hip pitch and knee pitch about the (abducted) y axis. Body frame: x
//! forward, y left, z up. Foot positions are body-frame unless a function
//! says otherwise.

use crate::ad::Real;
use crate::math::{Mat3, Quat, Vec3};
use crate::model::RobotModel;

/// Foot position in the body frame for one leg.
///
/// Chain from the hip origin: rotate the whole leg by `q[0]` about x, offset
/// by the lateral abduction link, hang the thigh off the hip pitch `q[1]`,
/// the calf off `q[1] + q[2]`. At all-zero angles the foot sits straight
/// below the abduction-link end at distance thigh + calf.
pub fn leg_fk<R: Real>(model: &RobotModel, leg: usize, q: [R; 3]) -> Vec3<R> {
    let side = crate::model::side_sign(leg);
    let (s0, c0) = (q[0].sin(), q[0].cos());
    let (s1, c1) = (q[1].sin(), q[1].cos());
    let knee = q[1] + q[2];
    let (s2, c2) = (knee.sin(), knee.cos());

    // In the abducted frame: constant lateral offset plus two pitched
    // segments. Ry(t) * (0, 0, -l) = (-l sin t, 0, -l cos t).
    let lateral = side * model.link_hip;
    let x = s1.mulc(-model.link_thigh) + s2.mulc(-model.link_calf);
    let z = c1.mulc(-model.link_thigh) + c2.mulc(-model.link_calf);

    // Rx(q0) applied to (x, lateral, z): y' = c y - s z, z' = s y + c z.
    let yr = c0.mulc(lateral) - s0 * z;
    let zr = s0.mulc(lateral) + c0 * z;

    let hip = model.hip_offset(leg);
    Vec3::new(x.addc(hip.x), yr.addc(hip.y), zr.addc(hip.z))
}

/// Analytic body-frame foot Jacobian d(foot)/d(q), 3x3, columns in joint
/// order (abduction, hip pitch, knee).
pub fn foot_jacobian(model: &RobotModel, leg: usize, q: [f64; 3]) -> Mat3 {
    let side = crate::model::side_sign(leg);
    let (s0, c0) = q[0].sin_cos();
    let (s1, c1) = q[1].sin_cos();
    let (s2, c2) = (q[1] + q[2]).sin_cos();
    let (lt, lc, lh) = (model.link_thigh, model.link_calf, side * model.link_hip);

    // Leg vector in the abducted frame; the x component never feels q0.
    let uy = lh;
    let uz = -lt * c1 - lc * c2;

    // d/dq0: x-axis rotation of the whole abducted-frame vector.
    let col0 = [
        0.0,
        -s0 * uy - c0 * uz, // d(yr)/dq0 with yr = c0 uy - s0 uz
        c0 * uy - s0 * uz,
    ];
    // d/dq1 in the abducted frame, then through Rx(q0).
    let dx1 = -lt * c1 - lc * c2;
    let dz1 = lt * s1 + lc * s2;
    let col1 = [dx1, -s0 * dz1, c0 * dz1];
    // d/dq2: only the calf term sees the knee.
    let dx2 = -lc * c2;
    let dz2 = lc * s2;
    let col2 = [dx2, -s0 * dz2, c0 * dz2];

    Mat3([
        [col0[0], col1[0], col2[0]],
        [col0[1], col1[1], col2[1]],
        [col0[2], col1[2], col2[2]],
    ])
}

/// World-frame foot position given the base pose.
pub fn foot_world<R: Real>(
    base_pos: Vec3<R>,
    base_orient: Quat<R>,
    foot_body: Vec3<R>,
) -> Vec3<R> {
    base_pos + base_orient.rotate(foot_body)
}

/// World-frame foot velocity: base linear + rotational carry + joint motion.
pub fn foot_world_velocity(
    model: &RobotModel,
    leg: usize,
    q: [f64; 3],
    dq: [f64; 3],
    base: &crate::surrogate::BodyState<f64>,
) -> Vec3<f64> {
    let foot_b = leg_fk(model, leg, q);
    let j = foot_jacobian(model, leg, q);
    let joint_vel_b = j.apply(Vec3::new(dq[0], dq[1], dq[2]));
    let omega_w = base.orient.rotate(base.omega);
    base.vel + omega_w.cross(base.orient.rotate(foot_b)) + base.orient.rotate(joint_vel_b)
}

pub fn leg_slice(q: &[f64; 12], leg: usize) -> [f64; 3] {
    [q[leg * 3], q[leg * 3 + 1], q[leg * 3 + 2]]
}
