//! Short-horizon trajectory optimization through the differentiable
//! surrogate.
//!
//! The quadruped trainer replays each control tick on a tape: observation
//! from the (aligned) surrogate state, policy forward, PD torques, ground
//! reaction forces for the stance legs, five rigid-body substeps, then a
//! state alignment that snaps the forward value onto the reference
//! trajectory while decaying the backward path by alpha. The reference
//! simulator stays the ground truth throughout; the tape only ever sees
//! its own smooth copy of the base.
//!
//! The double-integrator trainer is plain full-horizon backpropagation
//! through the exact dynamics.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ad::{Real, Tape};
use crate::config::DiffTrainConfig;
use crate::envs::quadruped::swing_pairs;
use crate::envs::{DiDynamics, QuadEnv};
use crate::loss::{step_loss, NUM_LOSS_TERMS};
use crate::model::{NUM_JOINTS, NUM_LEGS};
use crate::obs::observe_vars;
use crate::policy::Mlp;
use crate::surrogate::{
    friction_cone_clamp, lift_state, pd_torque, rigid_body_step, torque_to_grf,
    GroundReactionSet,
};
use crate::trainers::optim::{clip_grad_norm, Adam, Sgd};
use crate::trainers::TrainRecord;
use crate::align::align_state;

enum Optim {
    Adam(Adam),
    Sgd(Sgd),
}

impl Optim {
    fn new(cfg: &DiffTrainConfig, num_params: usize) -> Optim {
        if cfg.plain_sgd {
            Optim::Sgd(Sgd {
                learning_rate: cfg.learning_rate,
            })
        } else {
            Optim::Adam(Adam::new(num_params, cfg.learning_rate))
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        match self {
            Optim::Adam(a) => a.step(params, grads),
            Optim::Sgd(s) => s.step(params, grads),
        }
    }
}

/// Per-segment tallies reduced across the batch.
struct SegmentStats {
    grads: Vec<f64>,
    loss_sum: f64,
    parts_sum: [f64; NUM_LOSS_TERMS],
    track_sum: f64,
    vx_sum: f64,
    completed: Vec<f64>,
}

pub struct DiffsimQuad {
    pub policy: Mlp,
    pub cfg: DiffTrainConfig,
    opt: Optim,
    completed: VecDeque<f64>,
}

impl DiffsimQuad {
    pub fn new(policy: Mlp, cfg: DiffTrainConfig) -> DiffsimQuad {
        let n = policy.num_params();
        DiffsimQuad {
            policy,
            opt: Optim::new(&cfg, n),
            cfg,
            completed: VecDeque::with_capacity(256),
        }
    }

    pub fn mean_episode_len(&self) -> Option<f64> {
        if self.completed.is_empty() {
            None
        } else {
            Some(self.completed.iter().sum::<f64>() / self.completed.len() as f64)
        }
    }

    /// One segment per environment, batch-mean gradient, one update.
    /// Environments keep their state across calls and reset themselves on
    /// termination or timeout; a non-finite loss or gradient aborts the
    /// update with the parameters untouched.
    pub fn iterate(
        &mut self,
        envs: &mut [QuadEnv],
        iteration: usize,
    ) -> Result<TrainRecord, String> {
        let t0 = std::time::Instant::now();
        let num_envs = envs.len();
        let n_steps = self.cfg.horizon;
        let results: Vec<Result<SegmentStats, String>> = envs
            .par_iter_mut()
            .map(|env| rollout_segment(&self.policy, env, n_steps, self.cfg.alpha))
            .collect();

        // Ordered reduction keeps the sum deterministic regardless of the
        // worker schedule.
        let mut grads = vec![0.0; self.policy.num_params()];
        let mut loss_sum = 0.0;
        let mut parts_sum = [0.0; NUM_LOSS_TERMS];
        let mut track_sum = 0.0;
        let mut vx_sum = 0.0;
        for r in results {
            let s = r.map_err(|e| format!("iteration {iteration}: {e}"))?;
            for (g, gs) in grads.iter_mut().zip(&s.grads) {
                *g += gs / num_envs as f64;
            }
            loss_sum += s.loss_sum;
            parts_sum
                .iter_mut()
                .zip(&s.parts_sum)
                .for_each(|(a, b)| *a += b);
            track_sum += s.track_sum;
            vx_sum += s.vx_sum;
            for len in s.completed {
                self.completed.push_back(len);
                if self.completed.len() > 256 {
                    self.completed.pop_front();
                }
            }
        }
        if !grads.iter().all(|g| g.is_finite()) {
            return Err(format!(
                "iteration {iteration}: non-finite gradient, parameters unchanged"
            ));
        }
        clip_grad_norm(&mut grads, self.cfg.grad_clip);
        let mut params = self.policy.params_flat();
        self.opt.step(&mut params, &grads);
        self.policy.set_params_flat(&params);

        let denom = (num_envs * n_steps) as f64;
        Ok(TrainRecord {
            iteration,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            loss_total: Some(loss_sum / denom),
            loss_parts: Some(parts_sum.map(|v| v / denom)),
            mean_reward: None,
            mean_episode_len: self.mean_episode_len(),
            tracking_err_mps: Some(track_sum / denom),
            mean_vx: Some(vx_sum / denom),
        })
    }
}

/// Replays `n_steps` control ticks of one environment on a fresh tape and
/// returns the gradient of the mean step loss.
fn rollout_segment(
    policy: &Mlp,
    env: &mut QuadEnv,
    n_steps: usize,
    alpha: f64,
) -> Result<SegmentStats, String> {
    let tape = Tape::new();
    let policy_vars = policy.lift(&tape);
    let align = env.cfg.align;
    // Aligned runs restart the gradient chain from the reference state;
    // the ablation carries the raw surrogate state across segments.
    let start = if align { env.state.base } else { env.carry };
    let mut diff = lift_state(&tape, &start);

    let mut total = tape.constant(0.0);
    let mut stats = SegmentStats {
        grads: Vec::new(),
        loss_sum: 0.0,
        parts_sum: [0.0; NUM_LOSS_TERMS],
        track_sum: 0.0,
        vx_sum: 0.0,
        completed: Vec::new(),
    };
    let substep_dt = env.cfg.physics_dt;
    let substeps = env.cfg.control_substeps;
    let height_ref = env.cfg.height_ref;

    for _ in 0..n_steps {
        let inputs = env.tick_inputs();
        let obs = observe_vars(
            &tape,
            inputs.command,
            inputs.phase,
            &env.gait,
            &diff,
            &inputs.q,
            &env.model,
        );
        let action = policy_vars.forward(&obs);
        let q_def = env.model.q_default();
        let q_ref: [_; NUM_JOINTS] = std::array::from_fn(|i| action[i].addc(q_def[i]));
        let tau = pd_torque(&q_ref, &inputs.q, &inputs.dq, env.model.kp, env.model.kd);

        // Stance legs turn joint load (the reaction to the motor torque)
        // into a world-frame ground force; a singular leg simply drops its
        // force for this tick.
        let mut grf = GroundReactionSet::unloaded();
        grf.feet = inputs.feet_world;
        for leg in 0..NUM_LEGS {
            if !inputs.stance[leg] {
                continue;
            }
            let load = [-tau[3 * leg], -tau[3 * leg + 1], -tau[3 * leg + 2]];
            if let Ok(f) = torque_to_grf(load, inputs.jacobians[leg], leg) {
                grf.forces[leg] = Some(friction_cone_clamp(f, env.contact.mu));
            }
        }
        let mut stepped = diff;
        for _ in 0..substeps {
            stepped = rigid_body_step(&stepped, &grf, &env.model, substep_dt);
        }

        let action_vals: [f64; NUM_JOINTS] = std::array::from_fn(|i| action[i].value());
        let out = env.apply_action(&action_vals);

        diff = if align {
            align_state(&tape, &out.base_post, &stepped, alpha)
        } else {
            stepped
        };
        let swing = swing_pairs(&env.model, &q_ref, &diff, &out.swing_refs);
        let (l, parts) = step_loss(
            &diff,
            &action,
            inputs.command,
            height_ref,
            &swing,
            &env.weights,
        );
        total = total + l;
        stats.loss_sum += l.value();
        for (a, b) in stats.parts_sum.iter_mut().zip(&parts) {
            *a += b;
        }
        stats.track_sum += out.tracking_err;
        stats.vx_sum += out.vx;

        if out.terminated.is_some() || out.truncated {
            stats.completed.push(out.episode_steps as f64);
            env.reset();
            diff = lift_state(&tape, &env.state.base);
        }
    }
    env.carry = diff.values();

    let mean = total.mulc(1.0 / n_steps as f64);
    if !mean.value().is_finite() {
        return Err("non-finite segment loss, parameters unchanged".to_string());
    }
    let grads = tape.backward(mean);
    stats.grads = policy_vars.grads_flat(&grads);
    Ok(stats)
}

pub struct DiffsimDi {
    pub policy: Mlp,
    pub dynamics: DiDynamics,
    pub cfg: DiffTrainConfig,
    opt: Optim,
    rng: ChaCha8Rng,
    batch: usize,
}

impl DiffsimDi {
    pub fn new(
        policy: Mlp,
        dynamics: DiDynamics,
        cfg: DiffTrainConfig,
        batch: usize,
        seed: u64,
    ) -> DiffsimDi {
        let n = policy.num_params();
        DiffsimDi {
            policy,
            dynamics,
            opt: Optim::new(&cfg, n),
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            batch,
        }
    }

    /// Full-horizon backpropagation from a fresh batch of start states.
    pub fn iterate(&mut self, iteration: usize) -> Result<TrainRecord, String> {
        let t0 = std::time::Instant::now();
        let x0s: Vec<[f64; 2]> = (0..self.batch)
            .map(|_| DiDynamics::sample_x0(&mut self.rng))
            .collect();
        let results: Vec<(Vec<f64>, f64)> = x0s
            .par_iter()
            .map(|&x0| {
                let tape = Tape::new();
                let policy_vars = self.policy.lift(&tape);
                let mut x = [tape.constant(x0[0]), tape.constant(x0[1])];
                let mut cost = tape.constant(0.0);
                for _ in 0..self.dynamics.horizon {
                    let u = policy_vars.forward(&x)[0];
                    cost = cost + self.dynamics.stage_cost(x, u);
                    x = self.dynamics.step(x, u);
                }
                cost = cost + self.dynamics.terminal_cost(x);
                let grads = tape.backward(cost);
                (policy_vars.grads_flat(&grads), cost.value())
            })
            .collect();

        let mut grads = vec![0.0; self.policy.num_params()];
        let mut cost_sum = 0.0;
        for (g, c) in &results {
            for (a, b) in grads.iter_mut().zip(g) {
                *a += b / self.batch as f64;
            }
            cost_sum += c;
        }
        let mean_cost = cost_sum / self.batch as f64;
        if !mean_cost.is_finite() || !grads.iter().all(|g| g.is_finite()) {
            return Err(format!(
                "iteration {iteration}: non-finite loss or gradient, parameters unchanged"
            ));
        }
        clip_grad_norm(&mut grads, self.cfg.grad_clip);
        let mut params = self.policy.params_flat();
        self.opt.step(&mut params, &grads);
        self.policy.set_params_flat(&params);

        Ok(TrainRecord {
            iteration,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            loss_total: Some(mean_cost),
            loss_parts: None,
            mean_reward: Some(-mean_cost),
            mean_episode_len: Some(self.dynamics.horizon as f64),
            tracking_err_mps: None,
            mean_vx: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{DiConfig, QuadrupedConfig};
    use crate::gait::GaitConfig;
    use crate::loss::LossWeights;
    use crate::model::RobotModel;
    use crate::policy::Head;
    use crate::refsim::{ContactModel, Terrain, TerminationConfig};
    use crate::trainers::lqr::LqrProblem;

    fn quad_env(seed: u64) -> QuadEnv {
        QuadEnv::new(
            RobotModel::default(),
            ContactModel::default(),
            Terrain::flat(),
            GaitConfig::default(),
            TerminationConfig::default(),
            QuadrupedConfig::default(),
            LossWeights::default(),
            seed,
        )
    }

    fn small_policy(seed: u64) -> Mlp {
        Mlp::new(&[36, 32, 12], Head::Tanh { scale: 0.5 }, seed)
    }

    #[test]
    fn quad_iteration_updates_parameters_and_advances_envs() {
        let mut t = DiffsimQuad::new(small_policy(0), DiffTrainConfig::default());
        let mut envs = vec![quad_env(1), quad_env(2)];
        let before = t.policy.params_flat();
        let rec = t.iterate(&mut envs, 0).unwrap();
        let after = t.policy.params_flat();
        assert!(before.iter().zip(&after).any(|(a, b)| a != b));
        assert!(rec.loss_total.unwrap().is_finite());
        assert!(rec.loss_parts.unwrap().iter().all(|v| v.is_finite()));
        // Each env advanced a full segment (a mid-segment reset restarts
        // the counter but never exceeds it).
        for env in &envs {
            assert!(env.steps <= 24);
        }
    }

    #[test]
    fn quad_iterations_are_deterministic() {
        let run = || {
            let mut t = DiffsimQuad::new(small_policy(3), DiffTrainConfig::default());
            let mut envs = vec![quad_env(7)];
            for k in 0..2 {
                t.iterate(&mut envs, k).unwrap();
            }
            t.policy.params_flat()
        };
        let (a, b) = (run(), run());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn aligned_carry_matches_the_reference_state() {
        let mut t = DiffsimQuad::new(small_policy(4), DiffTrainConfig::default());
        let mut envs = vec![quad_env(5)];
        t.iterate(&mut envs, 0).unwrap();
        let carry = envs[0].carry.to_array();
        let reference = envs[0].state.base.to_array();
        for (c, r) in carry.iter().zip(&reference) {
            assert_eq!(c.to_bits(), r.to_bits());
        }
    }

    #[test]
    fn unaligned_carry_diverges_from_the_reference_state() {
        let mut cfg = QuadrupedConfig::default();
        cfg.align = false;
        let mut env = quad_env(5);
        env.cfg = cfg;
        env.reset();
        let mut t = DiffsimQuad::new(small_policy(4), DiffTrainConfig::default());
        let mut envs = vec![env];
        t.iterate(&mut envs, 0).unwrap();
        let carry = envs[0].carry.to_array();
        let reference = envs[0].state.base.to_array();
        assert!(carry.iter().zip(&reference).any(|(c, r)| c != r));
    }

    #[test]
    fn non_finite_state_aborts_without_touching_parameters() {
        let mut t = DiffsimQuad::new(small_policy(6), DiffTrainConfig::default());
        let mut envs = vec![quad_env(8)];
        envs[0].state.base.vel.x = f64::NAN;
        let before = t.policy.params_flat();
        let err = t.iterate(&mut envs, 3).unwrap_err();
        assert!(err.contains("iteration 3"));
        let after = t.policy.params_flat();
        assert!(before.iter().zip(&after).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn zero_learning_rate_reports_loss_but_keeps_parameters() {
        let mut cfg = DiffTrainConfig::default();
        cfg.learning_rate = 0.0;
        let mut t = DiffsimQuad::new(small_policy(9), cfg);
        let mut envs = vec![quad_env(10)];
        let before = t.policy.params_flat();
        let rec = t.iterate(&mut envs, 0).unwrap();
        assert!(rec.loss_total.unwrap() > 0.0);
        let after = t.policy.params_flat();
        assert!(before.iter().zip(&after).all(|(a, b)| a == b));
    }

    #[test]
    fn di_trainer_approaches_the_lqr_optimum() {
        let dynamics = DiDynamics::from_config(&DiConfig::default());
        let policy = Mlp::new(&[2, 32, 32, 1], Head::Linear, 0);
        let mut cfg = DiffTrainConfig::default();
        cfg.learning_rate = 3e-3;
        let mut t = DiffsimDi::new(policy, dynamics, cfg, 8, 42);
        for k in 0..120 {
            t.iterate(k).unwrap();
        }
        let sol = LqrProblem::from_di(&dynamics).solve();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut trained = 0.0;
        let mut optimal = 0.0;
        for _ in 0..50 {
            let x0 = DiDynamics::sample_x0(&mut rng);
            trained += dynamics.rollout_cost(|x| t.policy.forward(x)[0], x0);
            optimal += sol.optimal_cost(x0);
        }
        assert!(
            trained < 1.3 * optimal,
            "BPTT stalled: {trained} vs optimal {optimal}"
        );
        // The optimum is a true lower bound.
        assert!(trained > optimal * (1.0 - 1e-6));
    }

    #[test]
    fn di_gradient_matches_env_rollout_loss() {
        // The recorded loss must equal a plain f64 rollout of the same
        // policy from the same start states.
        let dynamics = DiDynamics::from_config(&DiConfig::default());
        let policy = Mlp::new(&[2, 16, 1], Head::Linear, 1);
        let cfg = DiffTrainConfig {
            learning_rate: 0.0,
            ..DiffTrainConfig::default()
        };
        let mut t = DiffsimDi::new(policy, dynamics, cfg, 4, 7);
        // Reproduce the batch the trainer will draw.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x0s: Vec<[f64; 2]> = (0..4).map(|_| DiDynamics::sample_x0(&mut rng)).collect();
        let expect: f64 = x0s
            .iter()
            .map(|&x0| dynamics.rollout_cost(|x| t.policy.forward(x)[0], x0))
            .sum::<f64>()
            / 4.0;
        let rec = t.iterate(0).unwrap();
        assert_eq!(rec.loss_total.unwrap().to_bits(), expect.to_bits());
    }
}
