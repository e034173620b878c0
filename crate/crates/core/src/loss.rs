//! Per-step tracking loss. Six weighted terms: command-velocity tracking,
//! body height, angular velocity, action magnitude, uprightness, and swing
//! foot placement. The same generic code evaluates plain states for
//! reporting and tape states for training; per-term weighted contributions
//! come back alongside the total so metrics can log the split.

use serde::{Deserialize, Serialize};

use crate::ad::Real;
use crate::math::Vec3;
use crate::model::NUM_LEGS;
use crate::obs::gravity_projection;
use crate::surrogate::BodyState;

pub const NUM_LOSS_TERMS: usize = 6;
pub const LOSS_TERM_NAMES: [&str; NUM_LOSS_TERMS] =
    ["loss_v", "loss_h", "loss_w", "loss_u", "loss_g", "loss_foot"];

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Squared world-frame velocity tracking error.
    pub velocity: f64,
    /// Absolute height error against the reference height.
    pub height: f64,
    /// Squared body angular velocity.
    pub angular: f64,
    /// Squared action magnitude.
    pub action: f64,
    /// Distance of the body-frame gravity direction from straight down.
    pub upright: f64,
    /// Squared swing-foot deviation from the planned trajectory.
    pub foot: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            velocity: 4.0,
            height: 1.0,
            angular: 0.1,
            action: 0.01,
            upright: 1.0,
            foot: 2.0,
        }
    }
}

/// Swing-leg placement input: the (differentiable) foot position and its
/// planned target. Stance legs carry `None` and contribute nothing.
pub type SwingTargets<R> = [Option<(Vec3<R>, Vec3<f64>)>; NUM_LEGS];

/// Weighted per-step loss. The yaw-rate command influences behavior only
/// through the observation; the tracked velocity reference is the commanded
/// planar velocity in the world frame with zero vertical component.
pub fn step_loss<R: Real>(
    state: &BodyState<R>,
    action: &[R],
    command: [f64; 3],
    height_ref: f64,
    swing: &SwingTargets<R>,
    w: &LossWeights,
) -> (R, [f64; NUM_LOSS_TERMS]) {
    let v = state.vel;
    let term_v = v.x.subc(command[0]).square()
        + v.y.subc(command[1]).square()
        + v.z.square();

    let term_h = state.pos.z.subc(height_ref).abs();

    let term_w = state.omega.dot(state.omega);

    let mut term_u = action[0].square();
    for u in &action[1..] {
        term_u = term_u + u.square();
    }

    let g = gravity_projection(state);
    let term_g = (g.x.square() + g.y.square() + g.z.addc(1.0).square()).sqrt();

    // Seed the swing sum with a gradient-free zero from an existing node.
    let mut term_foot = term_v - term_v;
    for entry in swing.iter().flatten() {
        let (foot, target) = entry;
        let dx = foot.x.subc(target.x);
        let dy = foot.y.subc(target.y);
        let dz = foot.z.subc(target.z);
        term_foot = term_foot + dx.square() + dy.square() + dz.square();
    }

    let weighted = [
        term_v.mulc(w.velocity),
        term_h.mulc(w.height),
        term_w.mulc(w.angular),
        term_u.mulc(w.action),
        term_g.mulc(w.upright),
        term_foot.mulc(w.foot),
    ];
    let parts = weighted.map(|t| t.value());
    let mut total = weighted[0];
    for t in &weighted[1..] {
        total = total + *t;
    }
    (total, parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::{Tape, Var};
    use crate::surrogate::lift_state;

    fn still_state(height: f64) -> BodyState<f64> {
        BodyState::standing(height)
    }

    #[test]
    fn perfect_tracking_scores_zero() {
        let state = still_state(0.3);
        let swing: SwingTargets<f64> = [None, None, None, None];
        let (total, parts) = step_loss(
            &state,
            &[0.0; 12],
            [0.0, 0.0, 0.0],
            0.3,
            &swing,
            &LossWeights::default(),
        );
        assert_eq!(total, 0.0);
        assert!(parts.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn hand_computed_parts_and_total() {
        let mut state = still_state(0.28);
        state.vel = Vec3::new(0.5, 0.0, 0.1);
        state.omega = Vec3::new(0.0, 0.2, 0.0);
        let mut action = [0.0; 12];
        action[3] = 0.1;
        let target = Vec3::new(0.2, 0.1, 0.05);
        let actual = Vec3::new(0.2, 0.1, 0.02);
        let swing: SwingTargets<f64> = [Some((actual, target)), None, None, None];
        let w = LossWeights::default();
        let (total, parts) = step_loss(&state, &action, [0.3, 0.0, 0.5], 0.3, &swing, &w);

        let expect_v = 4.0 * (0.04 + 0.01);
        let expect_h = 1.0 * 0.02;
        let expect_w = 0.1 * 0.04;
        let expect_u = 0.01 * 0.01;
        let expect_foot = 2.0 * (0.03f64 * 0.03);
        assert!((parts[0] - expect_v).abs() < 1e-12);
        assert!((parts[1] - expect_h).abs() < 1e-12);
        assert!((parts[2] - expect_w).abs() < 1e-12);
        assert!((parts[3] - expect_u).abs() < 1e-12);
        assert!(parts[4].abs() < 1e-12, "level body is upright");
        assert!((parts[5] - expect_foot).abs() < 1e-12);
        let sum: f64 = parts.iter().sum();
        assert!((total - sum).abs() < 1e-12);
    }

    #[test]
    fn yaw_rate_command_does_not_enter_the_loss() {
        let mut state = still_state(0.3);
        state.vel = Vec3::new(0.4, -0.1, 0.0);
        let swing: SwingTargets<f64> = [None; 4];
        let w = LossWeights::default();
        let (a, _) = step_loss(&state, &[0.0; 12], [0.4, -0.1, 0.0], 0.3, &swing, &w);
        let (b, _) = step_loss(&state, &[0.0; 12], [0.4, -0.1, 2.0], 0.3, &swing, &w);
        assert_eq!(a, b);
    }

    #[test]
    fn velocity_gradient_points_toward_the_command() {
        let tape = Tape::new();
        let mut base = still_state(0.3);
        base.vel = Vec3::new(0.1, 0.0, 0.0);
        let lifted = lift_state(&tape, &base);
        let action: Vec<Var> = (0..12).map(|_| tape.var(0.0)).collect();
        let swing: SwingTargets<Var> = [None, None, None, None];
        let (total, _) = step_loss(
            &lifted,
            &action,
            [0.5, 0.0, 0.0],
            0.3,
            &swing,
            &LossWeights::default(),
        );
        let grads = tape.backward(total);
        // d/dvx of 4 (vx - 0.5)^2 at vx = 0.1: 8 * (-0.4).
        assert!((grads.get(lifted.vel.x) + 3.2).abs() < 1e-12);
        // Action gradient: d/du of 0.01 u^2 at 0 is 0.
        assert_eq!(grads.get(action[0]), 0.0);
    }

    #[test]
    fn swing_term_counts_only_swing_legs() {
        let state = still_state(0.3);
        let swing_none: SwingTargets<f64> = [None; 4];
        let foot = Vec3::new(0.1, 0.0, 0.0);
        let target = Vec3::new(0.0, 0.0, 0.0);
        let swing_one: SwingTargets<f64> = [None, Some((foot, target)), None, None];
        let w = LossWeights::default();
        let cmd = [0.0; 3];
        let (a, _) = step_loss(&state, &[0.0; 12], cmd, 0.3, &swing_none, &w);
        let (b, parts) = step_loss(&state, &[0.0; 12], cmd, 0.3, &swing_one, &w);
        assert_eq!(a, 0.0);
        assert!((b - 2.0 * 0.01).abs() < 1e-12);
        assert!((parts[5] - b).abs() < 1e-12);
    }
}
