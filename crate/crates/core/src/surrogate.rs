//! Differentiable single-rigid-body dynamics: the base is a floating rigid
//! body driven by gravity plus per-leg ground reaction forces; legs appear
//! only through those forces and through lever arms to foot positions held
//! as plain numbers for the step. Semi-implicit Euler throughout: velocity
//! first, then position and orientation from the updated rates. The
//! orientation is renormalised every step.
//!
//! Everything here is generic over [`Real`]; instantiated with tape
//! variables it records the training graph, with `f64` it is the fast
//! forward model used by finite differencing and evaluation.

use crate::ad::Real;
use crate::math::{Quat, Vec3};
use crate::model::{RobotModel, LEG_NAMES, NUM_LEGS};

/// Floating-base state. Linear quantities world-frame; angular velocity
/// body-frame. The orientation rotates body vectors into the world.
#[derive(Clone, Copy, Debug)]
pub struct BodyState<R> {
    pub pos: Vec3<R>,
    pub orient: Quat<R>,
    pub vel: Vec3<R>,
    pub omega: Vec3<R>,
}

impl<R: Real> BodyState<R> {
    pub fn values(&self) -> BodyState<f64> {
        BodyState {
            pos: self.pos.values(),
            orient: self.orient.values(),
            vel: self.vel.values(),
            omega: self.omega.values(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values().to_array().iter().all(|v| v.is_finite())
    }
}

impl BodyState<f64> {
    /// At rest, level, at the given height.
    pub fn standing(height: f64) -> Self {
        BodyState {
            pos: Vec3::new(0.0, 0.0, height),
            orient: Quat::IDENTITY,
            vel: Vec3::ZERO,
            omega: Vec3::ZERO,
        }
    }

    /// All 13 scalars in declaration order, for whole-state comparisons.
    pub fn to_array(&self) -> [f64; 13] {
        [
            self.pos.x,
            self.pos.y,
            self.pos.z,
            self.orient.w,
            self.orient.x,
            self.orient.y,
            self.orient.z,
            self.vel.x,
            self.vel.y,
            self.vel.z,
            self.omega.x,
            self.omega.y,
            self.omega.z,
        ]
    }
}

/// Per-control-step contact forces. Swing legs carry no force entry at all,
/// so "swing legs exert exactly zero force" holds by construction. Foot
/// positions are plain floats: lever arms stay fixed within a control step
/// and contribute no derivative paths.
#[derive(Clone, Debug)]
pub struct GroundReactionSet<R> {
    /// World-frame force per stance leg.
    pub forces: [Option<Vec3<R>>; NUM_LEGS],
    /// World-frame foot positions (meaningful for stance legs).
    pub feet: [Vec3<f64>; NUM_LEGS],
}

impl<R: Real> GroundReactionSet<R> {
    pub fn unloaded() -> Self {
        GroundReactionSet {
            forces: [None, None, None, None],
            feet: [Vec3::ZERO; NUM_LEGS],
        }
    }

    pub fn stance_count(&self) -> usize {
        self.forces.iter().filter(|f| f.is_some()).count()
    }
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("near-singular foot Jacobian on leg {} (|det| = {det:.2e})", LEG_NAMES[*leg])]
pub struct SingularLeg {
    pub leg: usize,
    pub det: f64,
}

/// Joint PD law with zero reference joint velocity:
/// tau = kp (q_ref - q) - kd dq. Measured `q`, `dq` enter as constants.
pub fn pd_torque<R: Real>(
    q_ref: &[R; 12],
    q: &[f64; 12],
    dq: &[f64; 12],
    kp: f64,
    kd: f64,
) -> [R; 12] {
    std::array::from_fn(|i| q_ref[i].subc(q[i]).mulc(kp).addc(-kd * dq[i]))
}

/// Stance force from leg torques: solves J^T f = tau for one leg. The
/// Jacobian enters as constants (evaluated at measured joint angles), so the
/// result is linear in, and differentiable through, the torques.
pub fn torque_to_grf<R: Real>(
    tau_leg: [R; 3],
    jac: crate::math::Mat3,
    leg: usize,
) -> Result<Vec3<R>, SingularLeg> {
    let det = jac.det();
    if det.abs() < 1e-6 {
        return Err(SingularLeg { leg, det });
    }
    let inv_t = jac
        .transpose()
        .inverse()
        .expect("det checked above");
    Ok(inv_t.apply(Vec3::new(tau_leg[0], tau_leg[1], tau_leg[2])))
}

/// Smoothly limits the tangential force to the friction disc of radius
/// mu * max(f_z, 0). Well inside the disc the force is nearly untouched;
/// outside it saturates at the boundary. The normal component passes
/// through unchanged.
pub fn friction_cone_clamp<R: Real>(f: Vec3<R>, mu: f64) -> Vec3<R> {
    // Tiny floors keep the scale factor finite at zero normal force or zero
    // tangential force without disturbing realistic magnitudes.
    let limit = f.z.max0().mulc(mu).addc(1e-9);
    let t_norm = (f.x * f.x + f.y * f.y).addc(1e-18).sqrt();
    let scale = (t_norm / limit).tanh() * limit / t_norm;
    Vec3::new(f.x * scale, f.y * scale, f.z)
}

/// One semi-implicit Euler step of the base under the given ground reaction
/// set. Lever arms run from the base origin to the stance feet; the foot
/// positions are plain numbers held for the step, while the base pose and
/// the forces keep their derivative paths.
pub fn rigid_body_step<R: Real>(
    state: &BodyState<R>,
    grf: &GroundReactionSet<R>,
    model: &RobotModel,
    dt: f64,
) -> BodyState<R> {
    // Linear: v' = v + dt (sum f / m + g); p' = p + dt v'.
    let mut vel = state.vel.addc(model.gravity_vec().scalec(dt));
    for f in grf.forces.iter().flatten() {
        vel = vel + f.scalec(dt / model.mass);
    }
    let pos = state.pos + vel.scalec(dt);

    // Angular: torque about the base origin in the body frame.
    let mut torque: Option<Vec3<R>> = None;
    for leg in 0..NUM_LEGS {
        if let Some(f_world) = grf.forces[leg] {
            let arm_world = (-state.pos).addc(grf.feet[leg]);
            let arm_body = state.orient.rotate_inverse(arm_world);
            let f_body = state.orient.rotate_inverse(f_world);
            let t = arm_body.cross(f_body);
            torque = Some(match torque {
                Some(acc) => acc + t,
                None => t,
            });
        }
    }

    let iw = model.inertia_mat().apply(state.omega);
    let gyro = state.omega.cross(iw);
    let net = match torque {
        Some(t) => t - gyro,
        None => -gyro,
    };
    let omega = state.omega + model.inertia_inv().apply(net).scalec(dt);

    // Orientation from the updated body-frame rate, then renormalise.
    let dq = state.orient.mul_pure(omega).scalec(0.5 * dt);
    let orient = state.orient.add(dq).normalize();

    BodyState {
        pos,
        orient,
        vel,
        omega,
    }
}

/// Folds `rigid_body_step` over per-step ground reaction sets, returning all
/// intermediate states (length `grfs.len() + 1`, initial state first).
pub fn surrogate_rollout<R: Real>(
    initial: BodyState<R>,
    grfs: &[GroundReactionSet<R>],
    model: &RobotModel,
    dt: f64,
) -> Vec<BodyState<R>> {
    let mut out = Vec::with_capacity(grfs.len() + 1);
    out.push(initial);
    for grf in grfs {
        let next = rigid_body_step(out.last().unwrap(), grf, model, dt);
        out.push(next);
    }
    out
}

/// Convenience for tests and the gradient audit: lifts a plain state onto a
/// tape as leaf variables.
pub fn lift_state<'t>(
    tape: &'t crate::ad::Tape,
    s: &BodyState<f64>,
) -> BodyState<crate::ad::Var<'t>> {
    BodyState {
        pos: Vec3::new(tape.var(s.pos.x), tape.var(s.pos.y), tape.var(s.pos.z)),
        orient: Quat::new(
            tape.var(s.orient.w),
            tape.var(s.orient.x),
            tape.var(s.orient.y),
            tape.var(s.orient.z),
        ),
        vel: Vec3::new(tape.var(s.vel.x), tape.var(s.vel.y), tape.var(s.vel.z)),
        omega: Vec3::new(
            tape.var(s.omega.x),
            tape.var(s.omega.y),
            tape.var(s.omega.z),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::{finite_difference_check, Tape};
    use std::f64::consts::PI;

    fn model() -> RobotModel {
        RobotModel::default()
    }

    fn hover_grf(model: &RobotModel, state: &BodyState<f64>) -> GroundReactionSet<f64> {
        // Total vertical force m |g| split over four legs, applied at the
        // base origin so no torque arises.
        let per_leg = model.mass * 9.81 / 4.0;
        GroundReactionSet {
            forces: [Some(Vec3::new(0.0, 0.0, per_leg)); 4],
            feet: [state.pos.values(); 4],
        }
    }

    #[test]
    fn hover_balance_keeps_velocity() {
        let m = model();
        let s0 = BodyState::standing(0.3);
        let s1 = rigid_body_step(&s0, &hover_grf(&m, &s0), &m, 0.002);
        assert!(s1.vel.norm() < 1e-12);
        assert!((s1.pos.z - 0.3).abs() < 1e-12);
        assert!(s1.omega.norm() < 1e-12);
    }

    #[test]
    fn free_fall_momentum_bookkeeping_is_exact() {
        let m = model();
        let mut s = BodyState::standing(1.0);
        s.vel = Vec3::new(0.37, -0.21, 0.0);
        let none = GroundReactionSet::unloaded();
        let mut expect_vz = 0.0;
        for _ in 0..500 {
            let next = rigid_body_step(&s, &none, &m, 0.002);
            // Horizontal momentum untouched, bitwise.
            assert_eq!(next.vel.x, s.vel.x);
            assert_eq!(next.vel.y, s.vel.y);
            expect_vz += 0.002 * -9.81;
            assert_eq!(next.vel.z, expect_vz);
            s = next;
        }
    }

    #[test]
    fn constant_yaw_rate_integrates_to_yaw_angle() {
        let m = model();
        let mut s = BodyState::standing(0.3);
        s.omega = Vec3::new(0.0, 0.0, PI);
        let none = GroundReactionSet::unloaded();
        // Spin about z is torque-free for a diagonal inertia: omega stays.
        for _ in 0..500 {
            s = rigid_body_step(&s, &none, &m, 0.002);
            // Gravity pulls vel down, irrelevant to the orientation check.
        }
        // After 1 s at pi rad/s: yaw by pi, i.e. x maps to -x.
        let x_world = s.orient.rotate(Vec3::new(1.0, 0.0, 0.0));
        assert!((x_world.x + 1.0).abs() < 1e-4, "x -> {x_world:?}");
        assert!(x_world.y.abs() < 1e-4);
        let n = s.orient.norm();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quaternion_stays_unit_across_long_tumbling_rollouts() {
        let m = model();
        let mut s = BodyState::standing(10.0);
        s.omega = Vec3::new(1.3, -2.1, 0.7);
        let none = GroundReactionSet::unloaded();
        for _ in 0..5000 {
            s = rigid_body_step(&s, &none, &m, 0.002);
            assert!((s.orient.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn angular_momentum_magnitude_nearly_conserved_torque_free() {
        let m = model();
        let mut s = BodyState::standing(10.0);
        s.omega = Vec3::new(0.1, 0.15, -0.1);
        let none = GroundReactionSet::unloaded();
        let l0 = m.inertia_mat().apply(s.omega).norm();
        for _ in 0..1000 {
            s = rigid_body_step(&s, &none, &m, 0.002);
        }
        let l1 = m.inertia_mat().apply(s.omega).norm();
        assert!((l1 - l0).abs() < 1e-6, "drift {}", (l1 - l0).abs());

        // Halving dt should cut the per-step error quadratically; over the
        // same simulated time the drift drops by about 2x.
        let mut s = BodyState::standing(10.0);
        s.omega = Vec3::new(0.1, 0.15, -0.1);
        for _ in 0..2000 {
            s = rigid_body_step(&s, &none, &m, 0.001);
        }
        let l_half = m.inertia_mat().apply(s.omega).norm();
        assert!((l_half - l0).abs() < 0.75 * (l1 - l0).abs() + 1e-12);
    }

    #[test]
    fn pd_torque_is_proportional_at_zero_velocity() {
        let q = [0.0; 12];
        let dq = [0.0; 12];
        let mut q_ref = [0.0; 12];
        q_ref[4] = 0.25;
        let tau = pd_torque(&q_ref, &q, &dq, 40.0, 1.0);
        assert_eq!(tau[4], 10.0);
        for (i, t) in tau.iter().enumerate() {
            if i != 4 {
                assert_eq!(*t, 0.0);
            }
        }
        // Damping alone opposes measured velocity.
        let mut dq = [0.0; 12];
        dq[7] = 2.0;
        let tau = pd_torque(&[0.0; 12], &q, &dq, 40.0, 0.5);
        assert_eq!(tau[7], -1.0);
    }

    #[test]
    fn identity_jacobian_grf_is_the_torque() {
        let f = torque_to_grf([1.0, 2.0, 3.0], crate::math::Mat3::IDENTITY, 0).unwrap();
        assert_eq!((f.x, f.y, f.z), (1.0, 2.0, 3.0));
    }

    #[test]
    fn singular_jacobian_names_the_leg() {
        let m = model();
        // Straight knee: singular configuration.
        let j = crate::kinematics::foot_jacobian(&m, 2, [0.0, 0.5, 0.0]);
        let err = torque_to_grf([1.0, 0.0, 0.0], j, 2).unwrap_err();
        assert_eq!(err.leg, 2);
        assert!(err.to_string().contains("RL"), "{err}");
    }

    #[test]
    fn grf_solve_consistent_with_jacobian_transpose() {
        let m = model();
        let q = [0.2, 0.9, -1.7];
        let j = crate::kinematics::foot_jacobian(&m, 1, q);
        let tau = [1.5, -0.7, 2.1];
        let f = torque_to_grf(tau, j, 1).unwrap();
        let back = j.transpose().apply(f);
        assert!((back.x - tau[0]).abs() < 1e-10);
        assert!((back.y - tau[1]).abs() < 1e-10);
        assert!((back.z - tau[2]).abs() < 1e-10);
    }

    #[test]
    fn friction_clamp_preserves_interior_and_caps_exterior() {
        let mu = 0.7;
        // Deep inside the disc: nearly untouched.
        let f = friction_cone_clamp(Vec3::new(1.0, -0.5, 100.0), mu);
        assert!((f.x - 1.0).abs() < 1e-3);
        assert!((f.y + 0.5).abs() < 1e-3);
        assert_eq!(f.z, 100.0);
        // Far outside: capped at mu f_z.
        let f = friction_cone_clamp(Vec3::new(300.0, 0.0, 10.0), mu);
        let t = (f.x * f.x + f.y * f.y).sqrt();
        assert!(t <= mu * 10.0 + 1e-6);
        assert!(t > 0.99 * mu * 10.0);
        // Never amplifies.
        let f = friction_cone_clamp(Vec3::new(0.0, 2.0, 4.0), mu);
        assert!(f.y.abs() <= 2.0);
    }

    #[test]
    fn friction_clamp_zeroes_tangential_without_normal_load() {
        let f = friction_cone_clamp(Vec3::new(5.0, -3.0, -2.0), 0.7);
        let t = (f.x * f.x + f.y * f.y).sqrt();
        assert!(t < 1e-8, "tangential {t}");
        assert_eq!(f.z, -2.0);
    }

    #[test]
    fn step_gradients_match_differences() {
        // Differentiate a scalar of the post-step state with respect to the
        // pre-step state and one stance force.
        let m = model();
        let x0 = [
            0.01, -0.02, 0.31, // pos
            0.98, 0.05, -0.1, 0.05, // orient (normalised inside)
            0.2, 0.1, -0.05, // vel
            0.3, -0.2, 0.1, // omega
            5.0, -3.0, 40.0, // force on one leg
        ];
        let report = finite_difference_check(
            |_t, xs| {
                let state = BodyState {
                    pos: Vec3::new(xs[0], xs[1], xs[2]),
                    orient: Quat::new(xs[3], xs[4], xs[5], xs[6]).normalize(),
                    vel: Vec3::new(xs[7], xs[8], xs[9]),
                    omega: Vec3::new(xs[10], xs[11], xs[12]),
                };
                let mut grf = GroundReactionSet::unloaded();
                grf.forces[1] = Some(Vec3::new(xs[13], xs[14], xs[15]));
                grf.feet[1] = Vec3::new(0.2, -0.15, 0.0);
                let next = rigid_body_step(&state, &grf, &m, 0.002);
                next.pos.z + next.vel.x + next.omega.y + next.orient.w
            },
            &x0,
            1e-6,
        )
        .unwrap();
        assert!(report.within(1e-6), "rel err {}", report.max_rel_err);
    }

    #[test]
    fn rollout_final_height_feels_early_vertical_force() {
        // 24 steps; gradient of the final height with respect to the step-0
        // vertical force, against central differences through the rollout.
        let m = model();
        let dt = 0.002;
        let eval = |fz: f64| -> f64 {
            let mut grfs: Vec<GroundReactionSet<f64>> = Vec::new();
            for k in 0..24 {
                let mut g = GroundReactionSet::unloaded();
                if k == 0 {
                    g.forces[0] = Some(Vec3::new(0.0, 0.0, fz));
                    g.feet[0] = Vec3::new(0.19, 0.19, 0.0);
                }
                grfs.push(g);
            }
            let states = surrogate_rollout(BodyState::standing(0.3), &grfs, &m, dt);
            states.last().unwrap().pos.z
        };

        let tape = Tape::new();
        let fz = tape.var(50.0);
        let s0 = lift_state(&tape, &BodyState::standing(0.3));
        let mut state = s0;
        for k in 0..24 {
            let mut g = GroundReactionSet::unloaded();
            if k == 0 {
                let zero = fz - fz;
                g.forces[0] = Some(Vec3::new(zero, zero, fz));
                g.feet[0] = Vec3::new(0.19, 0.19, 0.0);
            }
            state = rigid_body_step(&state, &g, &m, dt);
        }
        let h = state.pos.z;
        let grad = tape.backward(h).get(fz);

        let eps = 1e-3;
        let fd = (eval(50.0 + eps) - eval(50.0 - eps)) / (2.0 * eps);
        assert!(
            (grad - fd).abs() / fd.abs().max(1e-8) < 1e-6,
            "analytic {grad} vs fd {fd}"
        );
        // An upward force early in the window must raise the final height.
        assert!(grad > 0.0);
    }
}
