//! Proximal policy optimization with a clipped surrogate objective.
//!
//! Actions come from a diagonal Gaussian whose mean is the policy network
//! and whose log standard deviations are free, state-independent
//! parameters. Rollouts run on the plain (non-differentiable) environment;
//! gradients are assembled by hand through the network caches, so no tape
//! is involved anywhere in this trainer.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::PpoConfig;
use crate::envs::{DiEnv, QuadEnv};
use crate::loss::NUM_LOSS_TERMS;
use crate::model::NUM_JOINTS;
use crate::policy::Mlp;
use crate::trainers::optim::Adam;
use crate::trainers::TrainRecord;

const LN_2PI: f64 = 1.8378770664093453;

/// What one environment step reports back to the trainer.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub loss: f64,
    pub loss_parts: Option<[f64; NUM_LOSS_TERMS]>,
    pub tracking_err: Option<f64>,
    pub vx: Option<f64>,
}

/// Minimal environment surface the sampled trainer needs. Implementations
/// must reset themselves when they report `terminated` or `truncated`.
pub trait SampledEnv {
    fn observe(&self) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> StepInfo;
}

impl SampledEnv for QuadEnv {
    fn observe(&self) -> Vec<f64> {
        QuadEnv::observe(self).to_vec()
    }

    fn step(&mut self, action: &[f64]) -> StepInfo {
        let mut a = [0.0; NUM_JOINTS];
        a.copy_from_slice(action);
        let out = self.apply_action(&a);
        let info = StepInfo {
            reward: -out.loss,
            terminated: out.terminated.is_some(),
            truncated: out.truncated,
            loss: out.loss,
            loss_parts: Some(out.loss_parts),
            tracking_err: Some(out.tracking_err),
            vx: Some(out.vx),
        };
        if info.terminated || info.truncated {
            self.reset();
        }
        info
    }
}

impl SampledEnv for DiEnv {
    fn observe(&self) -> Vec<f64> {
        self.x.to_vec()
    }

    /// The horizon end is a true terminal state (cost-to-go zero), not a
    /// time-limit truncation.
    fn step(&mut self, action: &[f64]) -> StepInfo {
        let (cost, done) = DiEnv::step(self, action[0]);
        if done {
            self.reset();
        }
        StepInfo {
            reward: -cost,
            terminated: done,
            truncated: false,
            loss: cost,
            loss_parts: None,
            tracking_err: None,
            vx: None,
        }
    }
}

struct Batch {
    obs: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    logp_old: Vec<f64>,
    advantages: Vec<f64>,
    returns: Vec<f64>,
}

pub struct PpoTrainer {
    pub policy: Mlp,
    pub value: Mlp,
    pub log_std: Vec<f64>,
    pub cfg: PpoConfig,
    policy_opt: Adam,
    value_opt: Adam,
    log_std_opt: Adam,
    rng: ChaCha8Rng,
    episode_len: Vec<usize>,
    completed: VecDeque<f64>,
}

impl PpoTrainer {
    pub fn new(policy: Mlp, value: Mlp, cfg: PpoConfig, num_envs: usize, rng: ChaCha8Rng) -> Self {
        let act_dim = *policy.sizes.last().unwrap();
        let np = policy.num_params();
        let nv = value.num_params();
        PpoTrainer {
            policy,
            value,
            log_std: vec![cfg.init_log_std; act_dim],
            policy_opt: Adam::new(np, cfg.learning_rate),
            value_opt: Adam::new(nv, cfg.learning_rate),
            log_std_opt: Adam::new(act_dim, cfg.learning_rate),
            cfg,
            rng,
            episode_len: vec![0; num_envs],
            completed: VecDeque::with_capacity(256),
        }
    }

    /// Mean completed-episode length over a recent window, once any episode
    /// has finished.
    pub fn mean_episode_len(&self) -> Option<f64> {
        if self.completed.is_empty() {
            None
        } else {
            Some(self.completed.iter().sum::<f64>() / self.completed.len() as f64)
        }
    }

    /// One collect-and-update cycle. On a non-finite rollout or gradient the
    /// parameters are left untouched and the diagnostic is returned.
    pub fn iterate<E: SampledEnv>(
        &mut self,
        envs: &mut [E],
        iteration: usize,
    ) -> Result<TrainRecord, String> {
        let t0 = std::time::Instant::now();
        let act_dim = self.log_std.len();
        let std: Vec<f64> = self.log_std.iter().map(|l| l.exp()).collect();
        let window = self.cfg.window;

        let mut batch = Batch {
            obs: Vec::with_capacity(envs.len() * window),
            actions: Vec::with_capacity(envs.len() * window),
            logp_old: Vec::with_capacity(envs.len() * window),
            advantages: Vec::with_capacity(envs.len() * window),
            returns: Vec::with_capacity(envs.len() * window),
        };
        let mut reward_sum = 0.0;
        let mut loss_sum = 0.0;
        let mut parts_sum = [0.0; NUM_LOSS_TERMS];
        let mut parts_seen = false;
        let mut track_sum = 0.0;
        let mut track_n = 0usize;
        let mut vx_sum = 0.0;
        let mut vx_n = 0usize;

        for (e, env) in envs.iter_mut().enumerate() {
            let mut rewards = Vec::with_capacity(window);
            let mut values = Vec::with_capacity(window);
            let mut next_values = Vec::with_capacity(window);
            let mut dones = Vec::with_capacity(window);
            let mut obs = env.observe();
            for _ in 0..window {
                let mean = self.policy.forward(&obs);
                let mut action = Vec::with_capacity(act_dim);
                let mut logp = -0.5 * act_dim as f64 * LN_2PI;
                for i in 0..act_dim {
                    let z: f64 = sample_standard_normal(&mut self.rng);
                    action.push(mean[i] + std[i] * z);
                    logp += -0.5 * z * z - self.log_std[i];
                }
                let v = self.value.forward(&obs)[0];
                let info = env.step(&action);
                self.episode_len[e] += 1;

                let mut reward = info.reward;
                if info.terminated {
                    reward -= self.cfg.terminal_penalty;
                }
                if info.terminated || info.truncated {
                    self.completed.push_back(self.episode_len[e] as f64);
                    if self.completed.len() > 256 {
                        self.completed.pop_front();
                    }
                    self.episode_len[e] = 0;
                }

                // Post-step observation: bootstrap source on truncation and
                // the next step's input otherwise. Envs self-reset, so after
                // a done this is already the fresh episode.
                let next_obs = env.observe();
                let next_v = if info.terminated {
                    0.0
                } else if info.truncated {
                    // The env has already reset; the truncated state is
                    // gone. Approximate the lost bootstrap with the current
                    // value estimate of the pre-step state, which is the
                    // closest surviving quantity one substep away.
                    v
                } else {
                    self.value.forward(&next_obs)[0]
                };

                reward_sum += reward;
                loss_sum += info.loss;
                if let Some(p) = info.loss_parts {
                    parts_seen = true;
                    for i in 0..NUM_LOSS_TERMS {
                        parts_sum[i] += p[i];
                    }
                }
                if let Some(t) = info.tracking_err {
                    track_sum += t;
                    track_n += 1;
                }
                if let Some(vx) = info.vx {
                    vx_sum += vx;
                    vx_n += 1;
                }

                batch.obs.push(obs);
                batch.actions.push(action);
                batch.logp_old.push(logp);
                rewards.push(reward);
                values.push(v);
                next_values.push(next_v);
                dones.push(info.terminated || info.truncated);
                obs = next_obs;
            }

            // Generalized advantage estimation over this env's window.
            let mut adv = vec![0.0; window];
            let mut running = 0.0;
            for t in (0..window).rev() {
                let delta =
                    rewards[t] + self.cfg.gamma * next_values[t] - values[t];
                let mask = if dones[t] { 0.0 } else { 1.0 };
                running = delta + self.cfg.gamma * self.cfg.gae_lambda * mask * running;
                adv[t] = running;
            }
            for t in 0..window {
                batch.advantages.push(adv[t]);
                batch.returns.push(adv[t] + values[t]);
            }
        }

        let n = batch.obs.len();
        if !batch_is_finite(&batch) {
            return Err(format!(
                "iteration {iteration}: non-finite rollout batch, parameters unchanged"
            ));
        }

        // Normalize advantages over the full batch.
        let mean = batch.advantages.iter().sum::<f64>() / n as f64;
        let var = batch
            .advantages
            .iter()
            .map(|a| (a - mean) * (a - mean))
            .sum::<f64>()
            / n as f64;
        let inv = 1.0 / (var.sqrt() + 1e-8);
        for a in &mut batch.advantages {
            *a = (*a - mean) * inv;
        }

        for _ in 0..self.cfg.epochs {
            let (pg, lsg) = self.policy_gradient(&batch);
            let vg = self.value_gradient(&batch);
            if !pg.iter().chain(&lsg).chain(&vg).all(|g| g.is_finite()) {
                return Err(format!(
                    "iteration {iteration}: non-finite gradient, parameters unchanged"
                ));
            }
            let mut params = self.policy.params_flat();
            self.policy_opt.step(&mut params, &pg);
            self.policy.set_params_flat(&params);
            let mut params = self.value.params_flat();
            self.value_opt.step(&mut params, &vg);
            self.value.set_params_flat(&params);
            self.log_std_opt.step(&mut self.log_std, &lsg);
        }

        Ok(TrainRecord {
            iteration,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            loss_total: Some(loss_sum / n as f64),
            loss_parts: parts_seen.then(|| parts_sum.map(|v| v / n as f64)),
            mean_reward: Some(reward_sum / n as f64),
            mean_episode_len: self.mean_episode_len(),
            tracking_err_mps: (track_n > 0).then(|| track_sum / track_n as f64),
            mean_vx: (vx_n > 0).then(|| vx_sum / vx_n as f64),
        })
    }

    /// Clipped-surrogate policy gradient plus the log-std gradient,
    /// averaged over the batch. The entropy bonus only touches the log-std
    /// parameters (the Gaussian entropy is mean-independent).
    fn policy_gradient(&self, batch: &Batch) -> (Vec<f64>, Vec<f64>) {
        let n = batch.obs.len();
        let act_dim = self.log_std.len();
        let mut pg = vec![0.0; self.policy.num_params()];
        let mut lsg = vec![0.0; act_dim];
        let clip = self.cfg.clip;
        for k in 0..n {
            let (mean, cache) = self.policy.forward_cached(&batch.obs[k]);
            let mut logp = -0.5 * act_dim as f64 * LN_2PI;
            let mut z = Vec::with_capacity(act_dim);
            for i in 0..act_dim {
                let zi = (batch.actions[k][i] - mean[i]) / self.log_std[i].exp();
                logp += -0.5 * zi * zi - self.log_std[i];
                z.push(zi);
            }
            let ratio = (logp - batch.logp_old[k]).exp();
            let a = batch.advantages[k];
            // The clipped min passes gradient only while the unclipped
            // branch is active.
            let active = if a >= 0.0 { ratio <= 1.0 + clip } else { ratio >= 1.0 - clip };
            if active {
                let dlogp = -a * ratio / n as f64;
                let d_mean: Vec<f64> = (0..act_dim)
                    .map(|i| dlogp * z[i] / self.log_std[i].exp())
                    .collect();
                self.policy.backward(&cache, &d_mean, &mut pg);
                for i in 0..act_dim {
                    lsg[i] += dlogp * (z[i] * z[i] - 1.0);
                }
            }
        }
        // Entropy bonus: state-independent for a diagonal Gaussian, so it
        // contributes a constant pull on each log-std.
        for g in lsg.iter_mut() {
            *g -= self.cfg.entropy_coef;
        }
        (pg, lsg)
    }

    /// Mean-squared value regression gradient.
    fn value_gradient(&self, batch: &Batch) -> Vec<f64> {
        let n = batch.obs.len();
        let mut vg = vec![0.0; self.value.num_params()];
        for k in 0..n {
            let (v, cache) = self.value.forward_cached(&batch.obs[k]);
            let d = self.cfg.value_coef * (v[0] - batch.returns[k]) / n as f64;
            self.value.backward(&cache, &[d], &mut vg);
        }
        vg
    }
}

fn batch_is_finite(batch: &Batch) -> bool {
    batch.obs.iter().flatten().all(|v| v.is_finite())
        && batch.actions.iter().flatten().all(|v| v.is_finite())
        && batch.logp_old.iter().all(|v| v.is_finite())
        && batch.advantages.iter().all(|v| v.is_finite())
        && batch.returns.iter().all(|v| v.is_finite())
}

/// Box-Muller without the cached second draw, so consumption order stays
/// obvious and seed-stable.
fn sample_standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DiConfig;
    use crate::envs::DiDynamics;
    use crate::policy::Head;
    use rand::SeedableRng;

    fn di_envs(n: usize, seed: u64) -> Vec<DiEnv> {
        let dynamics = DiDynamics::from_config(&DiConfig::default());
        (0..n)
            .map(|i| DiEnv::new(dynamics, seed + i as u64))
            .collect()
    }

    fn di_trainer(seed: u64, num_envs: usize) -> PpoTrainer {
        let policy = Mlp::new(&[2, 16, 1], Head::Linear, seed);
        let value = Mlp::new(&[2, 16, 1], Head::Linear, seed + 1);
        PpoTrainer::new(
            policy,
            value,
            PpoConfig::default(),
            num_envs,
            ChaCha8Rng::seed_from_u64(seed + 2),
        )
    }

    #[test]
    fn iterations_are_seed_deterministic() {
        let run = |seed: u64| {
            let mut t = di_trainer(seed, 4);
            let mut envs = di_envs(4, 77);
            for k in 0..3 {
                t.iterate(&mut envs, k).unwrap();
            }
            (t.policy.params_flat(), t.log_std.clone())
        };
        let (p1, l1) = run(5);
        let (p2, l2) = run(5);
        assert!(p1.iter().zip(&p2).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(l1.iter().zip(&l2).all(|(a, b)| a.to_bits() == b.to_bits()));
        let (p3, _) = run(6);
        assert!(p1.iter().zip(&p3).any(|(a, b)| a != b));
    }

    #[test]
    fn zero_advantages_and_entropy_leave_policy_unchanged() {
        let mut t = di_trainer(1, 4);
        t.cfg.entropy_coef = 0.0;
        let batch = Batch {
            obs: vec![vec![0.3, -0.4], vec![1.0, 0.2]],
            actions: vec![vec![0.1], vec![-0.7]],
            logp_old: vec![-1.0, -1.2],
            advantages: vec![0.0, 0.0],
            returns: vec![0.5, 0.6],
        };
        let (pg, lsg) = t.policy_gradient(&batch);
        assert!(pg.iter().all(|&g| g == 0.0));
        assert!(lsg.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn unclipped_single_epoch_gradient_is_vanilla_policy_gradient() {
        // With fresh (unchanged) parameters the ratio is exactly 1, so the
        // clipped surrogate's gradient must equal -mean(A * grad logp).
        let t = di_trainer(2, 4);
        let obs = vec![vec![0.5, -0.2], vec![-1.0, 0.3], vec![0.0, 0.9]];
        let advantages = vec![1.3, -0.7, 0.4];
        let mut actions = Vec::new();
        let mut logp_old = Vec::new();
        for o in &obs {
            let mean = t.policy.forward(o);
            let a = mean[0] + 0.37;
            let z = 0.37 / t.log_std[0].exp();
            actions.push(vec![a]);
            logp_old.push(-0.5 * LN_2PI - 0.5 * z * z - t.log_std[0]);
        }
        let batch = Batch {
            obs: obs.clone(),
            actions: actions.clone(),
            logp_old,
            advantages: advantages.clone(),
            returns: vec![0.0; 3],
        };
        let (pg, _) = t.policy_gradient(&batch);

        let mut expected = vec![0.0; t.policy.num_params()];
        for k in 0..obs.len() {
            let (mean, cache) = t.policy.forward_cached(&obs[k]);
            let sigma = t.log_std[0].exp();
            let z = (actions[k][0] - mean[0]) / sigma;
            // d(-A logp)/d mean = -A * z / sigma, averaged over the batch.
            let d = [-advantages[k] * z / sigma / obs.len() as f64];
            t.policy.backward(&cache, &d, &mut expected);
        }
        for (a, b) in pg.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn clipping_blocks_gradient_outside_the_trust_region() {
        let t = di_trainer(3, 4);
        let obs = vec![vec![0.5, -0.2]];
        let mean = t.policy.forward(&obs[0]);
        let a = mean[0] + 0.1;
        let z = 0.1 / t.log_std[0].exp();
        let logp_now = -0.5 * LN_2PI - 0.5 * z * z - t.log_std[0];
        // Fake an old log-prob far below the current one: ratio >> 1 + clip.
        let batch = Batch {
            obs,
            actions: vec![vec![a]],
            logp_old: vec![logp_now - 1.0],
            advantages: vec![1.0],
            returns: vec![0.0],
        };
        let (pg, _) = t.policy_gradient(&batch);
        assert!(pg.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn horizon_completions_feed_episode_length() {
        let mut t = di_trainer(4, 2);
        let mut envs = di_envs(2, 9);
        // 5 windows x 24 steps > 100-step horizon: every episode that
        // finishes does so by termination at exactly the horizon.
        for k in 0..5 {
            t.iterate(&mut envs, k).unwrap();
        }
        let mean = t.mean_episode_len().unwrap();
        assert_eq!(mean, 100.0);
    }

    #[test]
    fn training_improves_the_double_integrator() {
        let mut t = di_trainer(8, 8);
        let mut envs = di_envs(8, 3);
        let dynamics = envs[0].dynamics.clone();
        let eval = |t: &PpoTrainer| {
            let mut rng = ChaCha8Rng::seed_from_u64(123);
            let mut total = 0.0;
            for _ in 0..32 {
                let x0 = DiDynamics::sample_x0(&mut rng);
                total += dynamics.rollout_cost(|x| t.policy.forward(x)[0], x0);
            }
            total / 32.0
        };
        let before = eval(&t);
        for k in 0..60 {
            t.iterate(&mut envs, k).unwrap();
        }
        let after = eval(&t);
        assert!(
            after < 0.8 * before,
            "no learning progress: {before} -> {after}"
        );
    }

    #[test]
    fn record_fields_cover_the_di_case() {
        let mut t = di_trainer(10, 2);
        let mut envs = di_envs(2, 4);
        let rec = t.iterate(&mut envs, 0).unwrap();
        assert!(rec.loss_total.is_some());
        assert!(rec.loss_parts.is_none());
        assert!(rec.mean_reward.is_some());
        assert!(rec.tracking_err_mps.is_none());
        assert_eq!(rec.iteration, 0);
    }
}
