//! Quadruped velocity-tracking environment.
//!
//! The reference simulator is the single source of truth: it advances the
//! robot, decides termination, and feeds the observation. The environment
//! also hands out per-tick snapshots (joint state, Jacobians, foot
//! positions, stance schedule) so the differentiable trainer can rebuild
//! the control step on a tape; the plain stepping path here never touches
//! a tape.
//!
//! Per control tick: PD torques from the commanded joint targets, a fixed
//! number of physics substeps with the torque held, gait phase advance,
//! swing-plan bookkeeping at stance-to-swing transitions, loss and
//! termination on the post-step state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ad::Real;
use crate::config::QuadrupedConfig;
use crate::gait::{
    contact_schedule, phase_step, raibert_landing, swing_trajectory, GaitConfig,
};
use crate::kinematics::{foot_jacobian, foot_world, leg_fk, leg_slice};
use crate::loss::{step_loss, LossWeights, SwingTargets, NUM_LOSS_TERMS};
use crate::math::{Mat3, Vec3};
use crate::model::{RobotModel, NUM_JOINTS, NUM_LEGS};
use crate::obs::{observe, OBS_DIM};
use crate::refsim::{
    check_termination, whole_body_step, ContactModel, RefState, Terrain, TerminationConfig,
    TerminationReason,
};
use crate::surrogate::{pd_torque, BodyState};

/// World-frame swing endpoints planned at lift-off.
#[derive(Debug, Clone, Copy)]
struct SwingPlan {
    lift: Vec3<f64>,
    land: Vec3<f64>,
}

/// Everything the tape path needs from the pre-step environment.
#[derive(Debug, Clone)]
pub struct TickInputs {
    pub stance: [bool; NUM_LEGS],
    pub q: [f64; NUM_JOINTS],
    pub dq: [f64; NUM_JOINTS],
    pub jacobians: [Mat3; NUM_LEGS],
    pub feet_world: [Vec3<f64>; NUM_LEGS],
    pub command: [f64; 3],
    pub phase: f64,
}

/// Post-step record of one control tick.
#[derive(Debug, Clone)]
pub struct TickOutcome {
    pub base_post: BodyState<f64>,
    /// Swing-foot reference position per leg at the post-step phase.
    pub swing_refs: [Option<Vec3<f64>>; NUM_LEGS],
    pub loss: f64,
    pub loss_parts: [f64; NUM_LOSS_TERMS],
    pub terminated: Option<TerminationReason>,
    pub truncated: bool,
    /// Control steps since the last reset, counting this one.
    pub episode_steps: usize,
    /// Planar speed error against the command, m/s.
    pub tracking_err: f64,
    pub vx: f64,
}

pub struct QuadEnv {
    pub model: RobotModel,
    pub contact: ContactModel,
    pub terrain: Terrain,
    pub gait: GaitConfig,
    pub termination: TerminationConfig,
    pub cfg: QuadrupedConfig,
    pub weights: LossWeights,
    pub state: RefState,
    pub phase: f64,
    pub command: [f64; 3],
    pub steps: usize,
    pub terminated: Option<TerminationReason>,
    /// Differentiable-state carry between segments when alignment is off.
    pub carry: BodyState<f64>,
    plans: [SwingPlan; NUM_LEGS],
    stance_prev: [bool; NUM_LEGS],
    rng: ChaCha8Rng,
}

impl QuadEnv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: RobotModel,
        contact: ContactModel,
        terrain: Terrain,
        gait: GaitConfig,
        termination: TerminationConfig,
        cfg: QuadrupedConfig,
        weights: LossWeights,
        seed: u64,
    ) -> QuadEnv {
        let mut env = QuadEnv {
            model,
            contact,
            terrain,
            gait,
            termination,
            cfg,
            weights,
            state: RefState::standing(&RobotModel::default(), 0.3),
            phase: 0.0,
            command: [0.0; 3],
            steps: 0,
            terminated: None,
            carry: BodyState::standing(0.3),
            plans: [SwingPlan {
                lift: Vec3::ZERO,
                land: Vec3::ZERO,
            }; NUM_LEGS],
            stance_prev: [true; NUM_LEGS],
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        env.reset();
        env
    }

    pub fn control_dt(&self) -> f64 {
        self.cfg.control_substeps as f64 * self.cfg.physics_dt
    }

    /// Fresh episode: default stance with small pose jitter, new command,
    /// random gait phase.
    pub fn reset(&mut self) {
        let h = self.model.default_stand_height();
        let mut state = RefState::standing(&self.model, h);
        let jp = self.cfg.reset_pos_jitter;
        if jp > 0.0 {
            state.base.pos.x += self.rng.gen_range(-jp..jp);
            state.base.pos.y += self.rng.gen_range(-jp..jp);
            state.base.pos.z += self.rng.gen_range(-jp..jp);
        }
        let jq = self.cfg.reset_joint_jitter;
        if jq > 0.0 {
            for q in state.q.iter_mut() {
                *q += self.rng.gen_range(-jq..jq);
            }
        }
        state.base.pos.z += self.terrain.height(state.base.pos.x, state.base.pos.y);
        self.state = state;
        self.command = match self.cfg.fixed_command {
            Some(c) => c,
            None => [
                sample_range(&mut self.rng, self.cfg.cmd_vx_range),
                sample_range(&mut self.rng, self.cfg.cmd_vy_range),
                sample_range(&mut self.rng, self.cfg.cmd_yaw_range),
            ],
        };
        self.phase = self.rng.gen_range(0.0..std::f64::consts::TAU);
        self.steps = 0;
        self.terminated = None;
        self.carry = self.state.base;
        let sched = contact_schedule(&self.gait, self.phase);
        self.stance_prev = std::array::from_fn(|leg| sched[leg].stance);
        for leg in 0..NUM_LEGS {
            self.plan_liftoff(leg);
        }
    }

    /// Observation from the reference state (the sampled-trainer and
    /// evaluation path).
    pub fn observe(&self) -> [f64; OBS_DIM] {
        observe(
            self.command,
            self.phase,
            &self.gait,
            &self.state.base,
            &self.state.q,
            &self.model,
        )
    }

    /// Pre-step snapshot for rebuilding this tick on a tape.
    pub fn tick_inputs(&self) -> TickInputs {
        let sched = contact_schedule(&self.gait, self.phase);
        TickInputs {
            stance: std::array::from_fn(|leg| sched[leg].stance),
            q: self.state.q,
            dq: self.state.dq,
            jacobians: std::array::from_fn(|leg| {
                foot_jacobian(&self.model, leg, leg_slice(&self.state.q, leg))
            }),
            feet_world: std::array::from_fn(|leg| self.foot_world_now(leg)),
            command: self.command,
            phase: self.phase,
        }
    }

    /// One full control tick on the reference simulator. The action is the
    /// joint-target offset; the same joint targets drive both simulators, so
    /// the tape path calls this with the values of its action variables.
    pub fn apply_action(&mut self, action: &[f64; NUM_JOINTS]) -> TickOutcome {
        assert!(
            self.terminated.is_none(),
            "stepping a terminated environment (reset first)"
        );
        let q_def = self.model.q_default();
        let q_ref: [f64; NUM_JOINTS] = std::array::from_fn(|i| q_def[i] + action[i]);
        let tau = pd_torque(&q_ref, &self.state.q, &self.state.dq, self.model.kp, self.model.kd);
        for _ in 0..self.cfg.control_substeps {
            whole_body_step(
                &mut self.state,
                &tau,
                &self.terrain,
                &self.contact,
                &self.model,
                self.cfg.physics_dt,
            );
        }
        self.steps += 1;

        // Gait clock and swing-plan transitions.
        self.phase = phase_step(self.phase, self.gait.frequency, self.control_dt());
        let sched = contact_schedule(&self.gait, self.phase);
        for leg in 0..NUM_LEGS {
            if self.stance_prev[leg] && !sched[leg].stance {
                self.plan_liftoff(leg);
            }
            self.stance_prev[leg] = sched[leg].stance;
        }
        let swing_refs: [Option<Vec3<f64>>; NUM_LEGS] = std::array::from_fn(|leg| {
            (!sched[leg].stance).then(|| {
                swing_trajectory(
                    self.plans[leg].lift,
                    self.plans[leg].land,
                    self.gait.swing_apex,
                    sched[leg].progress,
                )
            })
        });

        self.terminated = check_termination(&self.state, &self.terrain, &self.termination);
        let truncated = self.terminated.is_none() && self.steps >= self.cfg.episode_steps;

        let swing = swing_pairs(&self.model, &q_ref, &self.state.base, &swing_refs);
        let (loss, loss_parts) = step_loss(
            &self.state.base,
            action,
            self.command,
            self.cfg.height_ref,
            &swing,
            &self.weights,
        );

        let v = self.state.base.vel;
        let tracking_err =
            ((v.x - self.command[0]).powi(2) + (v.y - self.command[1]).powi(2)).sqrt();
        TickOutcome {
            base_post: self.state.base,
            swing_refs,
            loss,
            loss_parts,
            terminated: self.terminated,
            truncated,
            episode_steps: self.steps,
            tracking_err,
            vx: v.x,
        }
    }

    fn foot_world_now(&self, leg: usize) -> Vec3<f64> {
        let foot_b = leg_fk(&self.model, leg, leg_slice(&self.state.q, leg));
        self.state.base.pos + self.state.base.orient.rotate(foot_b)
    }

    /// Plans the upcoming swing arc for a leg: lift where the foot is now,
    /// land half a stance period of travel ahead of the hip.
    fn plan_liftoff(&mut self, leg: usize) {
        let hip_w = self.state.base.pos + self.state.base.orient.rotate(self.model.hip_offset(leg));
        let hip_ground = Vec3::new(hip_w.x, hip_w.y, self.terrain.height(hip_w.x, hip_w.y));
        let v = if self.cfg.raibert_measured_velocity {
            self.state.base.vel
        } else {
            Vec3::new(self.command[0], self.command[1], 0.0)
        };
        self.plans[leg] = SwingPlan {
            lift: self.foot_world_now(leg),
            land: raibert_landing(hip_ground, v, self.gait.stance_duration(), &self.terrain),
        };
    }
}

fn sample_range(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.gen_range(range[0]..range[1])
    }
}

/// Pairs each swing leg's differentiable foot position (forward kinematics
/// of the commanded targets in the given base frame) with its planned
/// reference. Stance legs stay `None`.
pub fn swing_pairs<R: Real>(
    model: &RobotModel,
    q_ref: &[R; NUM_JOINTS],
    base: &BodyState<R>,
    swing_refs: &[Option<Vec3<f64>>; NUM_LEGS],
) -> SwingTargets<R> {
    std::array::from_fn(|leg| {
        swing_refs[leg].map(|target| {
            let q_leg = [q_ref[3 * leg], q_ref[3 * leg + 1], q_ref[3 * leg + 2]];
            let foot_b = leg_fk(model, leg, q_leg);
            (foot_world(base.pos, base.orient, foot_b), target)
        })
    })
}
