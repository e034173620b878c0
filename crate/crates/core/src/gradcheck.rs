//! Gradient audit: every backward rule is checked against central finite
//! differences, differentiable building blocks are checked as composed
//! chains, and a full 24-tick surrogate segment is checked along random
//! parameter directions. A fault-injection hook corrupts one named check on
//! purpose so the failure path itself stays tested.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ad::{finite_difference_check, Real, Tape, Var};
use crate::align::{align_scalar, align_state};
use crate::config::ExperimentConfig;
use crate::envs::quadruped::swing_pairs;
use crate::gait::{contact_schedule, phase_step, GaitConfig};
use crate::kinematics::{foot_jacobian, leg_fk, leg_slice};
use crate::loss::{step_loss, LossWeights};
use crate::math::{Mat3, Quat, Vec3};
use crate::model::{RobotModel, NUM_JOINTS, NUM_LEGS};
use crate::obs::{observe, observe_vars, OBS_DIM};
use crate::policy::{Head, Mlp, MlpVars};
use crate::surrogate::{
    friction_cone_clamp, lift_state, pd_torque, rigid_body_step, torque_to_grf, BodyState,
    GroundReactionSet,
};

pub const PRIMITIVE_THRESHOLD: f64 = 1e-6;
pub const COMPOSITE_THRESHOLD: f64 = 1e-5;
pub const SEGMENT_THRESHOLD: f64 = 1e-4;
pub const STRUCTURAL_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct CheckEntry {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub threshold: f64,
}

impl CheckEntry {
    pub fn pass(&self) -> bool {
        self.max_rel_err < self.threshold
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub entries: Vec<CheckEntry>,
}

impl GradcheckReport {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass())
    }

    pub fn failures(&self) -> Vec<&CheckEntry> {
        self.entries.iter().filter(|e| !e.pass()).collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{} {:<24} max_rel_err {:.3e} (threshold {:.0e})\n",
                if e.pass() { "PASS" } else { "FAIL" },
                e.name,
                e.max_rel_err,
                e.threshold,
            ));
        }
        out
    }
}

/// Full audit. `trials` is the number of random input points per primitive;
/// `corrupt` adds a deliberate error to the named check so the reporting
/// path can be exercised end to end.
pub fn run(cfg: &ExperimentConfig, trials: usize, corrupt: Option<&str>) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut entries = Vec::new();
    let push = |entries: &mut Vec<CheckEntry>, name: &'static str, err: f64, thr: f64| {
        let bump = if corrupt == Some(name) { 1e-2 } else { 0.0 };
        entries.push(CheckEntry {
            name,
            max_rel_err: err + bump,
            threshold: thr,
        });
    };

    for (name, check) in primitive_checks() {
        let err = sweep(check, trials, &mut rng);
        push(&mut entries, name, err, PRIMITIVE_THRESHOLD);
    }
    for (name, check) in composite_checks(cfg.model.clone()) {
        let err = sweep(check, trials / 10 + 1, &mut rng);
        push(&mut entries, name, err, COMPOSITE_THRESHOLD);
    }
    push(
        &mut entries,
        "align_decay_chain",
        align_decay_chain_err(),
        STRUCTURAL_THRESHOLD,
    );
    push(
        &mut entries,
        "alpha_zero_cross_step",
        alpha_zero_err(cfg),
        STRUCTURAL_THRESHOLD,
    );
    // Step size sits at the bottom of the central-difference error V: large
    // enough to clear accumulated rollout roundoff, small enough that the
    // probe never straddles a contact-activation kink.
    push(
        &mut entries,
        "segment_bptt_24_step",
        segment_err(cfg, 20, 1e-5, &mut rng),
        SEGMENT_THRESHOLD,
    );
    GradcheckReport { entries }
}

type CheckFn = Box<dyn Fn(&mut ChaCha8Rng) -> f64>;

/// Runs one randomized check `n` times and keeps the worst relative error.
fn sweep(check: CheckFn, n: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..n {
        worst = worst.max(check(rng));
    }
    worst
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

/// Resamples a coordinate until it clears an exclusion window, keeping the
/// input off a primitive's kinks and singularities.
fn away_from(rng: &mut ChaCha8Rng, x: &mut f64, points: &[f64], margin: f64) {
    while points.iter().any(|p| (*x - p).abs() < margin) {
        *x = rng.gen_range(-2.0..2.0);
    }
}

fn fd_err<F>(f: F, x: &[f64]) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    match finite_difference_check(f, x, 1e-6) {
        Ok(report) => report.max_rel_err,
        Err(_) => f64::INFINITY,
    }
}

fn primitive_checks() -> Vec<(&'static str, CheckFn)> {
    vec![
        (
            "add",
            Box::new(|rng: &mut ChaCha8Rng| {
                let x = uniform(rng, 2);
                fd_err(|_, v| v[0] + v[1], &x)
            }) as CheckFn,
        ),
        (
            "sub",
            Box::new(|rng| {
                let x = uniform(rng, 2);
                fd_err(|_, v| v[0] - v[1], &x)
            }),
        ),
        (
            "mul",
            Box::new(|rng| {
                let x = uniform(rng, 2);
                fd_err(|_, v| v[0] * v[1], &x)
            }),
        ),
        (
            "div",
            Box::new(|rng| {
                let mut x = uniform(rng, 2);
                away_from(rng, &mut x[1], &[0.0], 0.2);
                fd_err(|_, v| v[0] / v[1], &x)
            }),
        ),
        (
            "neg",
            Box::new(|rng| {
                let x = uniform(rng, 1);
                fd_err(|_, v| -(v[0] * v[0]) + (-v[0]), &x)
            }),
        ),
        (
            "dot",
            Box::new(|rng| {
                let x = uniform(rng, 6);
                fd_err(|_, v| Var::dot(&v[0..3], &v[3..6]), &x)
            }),
        ),
        (
            "matvec",
            Box::new(|rng| {
                let m = Mat3(std::array::from_fn(|_| {
                    std::array::from_fn(|_| rng.gen_range(-2.0..2.0))
                }));
                let x = uniform(rng, 3);
                fd_err(
                    move |_, v| {
                        let out = m.apply(Vec3::new(v[0], v[1], v[2]));
                        Var::dotc(&[out.x, out.y, out.z], &[0.3, -0.7, 0.9])
                    },
                    &x,
                )
            }),
        ),
        (
            "cross",
            Box::new(|rng| {
                let x = uniform(rng, 6);
                fd_err(
                    |_, v| {
                        let c = Vec3::new(v[0], v[1], v[2]).cross(Vec3::new(v[3], v[4], v[5]));
                        Var::dotc(&[c.x, c.y, c.z], &[0.5, 1.1, -0.4])
                    },
                    &x,
                )
            }),
        ),
        (
            "norm",
            Box::new(|rng| {
                // Keep the vector length well off the origin kink.
                let mut x = uniform(rng, 3);
                while (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt() < 0.3 {
                    x = uniform(rng, 3);
                }
                fd_err(|_, v| Vec3::new(v[0], v[1], v[2]).norm(), &x)
            }),
        ),
        (
            "quat_mul",
            Box::new(|rng| {
                let x = uniform(rng, 8);
                fd_err(
                    |_, v| {
                        let a = Quat::new(v[0], v[1], v[2], v[3]);
                        let b = Quat::new(v[4], v[5], v[6], v[7]);
                        let q = a.mul(b);
                        Var::dotc(&[q.w, q.x, q.y, q.z], &[0.2, -0.9, 0.6, 0.4])
                    },
                    &x,
                )
            }),
        ),
        (
            "quat_rotate",
            Box::new(|rng| {
                // Normalizing a near-zero quaternion is degenerate; keep a
                // healthy magnitude.
                let mut x = uniform(rng, 7);
                while (x[0] * x[0] + x[1] * x[1] + x[2] * x[2] + x[3] * x[3]).sqrt() < 0.5 {
                    let fresh = uniform(rng, 4);
                    x[..4].copy_from_slice(&fresh);
                }
                fd_err(
                    |_, v| {
                        let q = Quat::new(v[0], v[1], v[2], v[3]).normalize();
                        let r = q.rotate(Vec3::new(v[4], v[5], v[6]));
                        Var::dotc(&[r.x, r.y, r.z], &[1.0, 0.5, -0.8])
                    },
                    &x,
                )
            }),
        ),
        (
            "tanh",
            Box::new(|rng| {
                let x = uniform(rng, 1);
                fd_err(|_, v| v[0].tanh(), &x)
            }),
        ),
        (
            "elu",
            Box::new(|rng| {
                let mut x = uniform(rng, 1);
                away_from(rng, &mut x[0], &[0.0], 1e-4);
                fd_err(|_, v| v[0].elu(), &x)
            }),
        ),
        (
            "clamp",
            Box::new(|rng| {
                let mut x = uniform(rng, 1);
                away_from(rng, &mut x[0], &[-1.0, 1.0], 1e-4);
                fd_err(|_, v| v[0].clamp(-1.0, 1.0) * 2.0, &x)
            }),
        ),
        (
            "sqrt",
            Box::new(|rng| {
                let x = vec![rng.gen_range(0.1..2.0)];
                fd_err(|_, v| v[0].sqrt(), &x)
            }),
        ),
        (
            "abs",
            Box::new(|rng| {
                let mut x = uniform(rng, 1);
                away_from(rng, &mut x[0], &[0.0], 1e-4);
                fd_err(|_, v| v[0].abs(), &x)
            }),
        ),
    ]
}

fn composite_checks(model: RobotModel) -> Vec<(&'static str, CheckFn)> {
    let m1 = model.clone();
    let m2 = model.clone();
    let m3 = model;
    vec![
        (
            "pd_to_grf_chain",
            Box::new(move |rng: &mut ChaCha8Rng| {
                // Joint targets -> PD torque -> stance force -> cone clamp
                // at a randomized pose near the default stance.
                let q_def = m1.q_default();
                let q: [f64; NUM_JOINTS] =
                    std::array::from_fn(|i| q_def[i] + rng.gen_range(-0.2..0.2));
                let dq: [f64; NUM_JOINTS] = std::array::from_fn(|_| rng.gen_range(-0.5..0.5));
                let jac = foot_jacobian(&m1, 0, leg_slice(&q, 0));
                if jac.det().abs() < 1e-3 {
                    return 0.0;
                }
                let x: Vec<f64> = (0..3).map(|i| q_def[i] + rng.gen_range(-0.3..0.3)).collect();
                let model = m1.clone();
                fd_err(
                    move |_, v| {
                        let mut q_ref: [Var; NUM_JOINTS] =
                            std::array::from_fn(|i| (v[0] - v[0]).addc(q_def[i]));
                        q_ref[0] = v[0];
                        q_ref[1] = v[1];
                        q_ref[2] = v[2];
                        let tau = pd_torque(&q_ref, &q, &dq, model.kp, model.kd);
                        let load = [-tau[0], -tau[1], -tau[2]];
                        let f = torque_to_grf(load, jac, 0).unwrap();
                        let f = friction_cone_clamp(f, 0.7);
                        Var::dotc(&[f.x, f.y, f.z], &[0.4, -0.3, 1.0])
                    },
                    &x,
                )
            }) as CheckFn,
        ),
        (
            "leg_fk_chain",
            Box::new(move |rng| {
                let q_def = m2.q_default();
                let x: Vec<f64> = (0..3).map(|i| q_def[i] + rng.gen_range(-0.4..0.4)).collect();
                let model = m2.clone();
                fd_err(
                    move |_, v| {
                        let p = leg_fk(&model, 1, [v[0], v[1], v[2]]);
                        Var::dotc(&[p.x, p.y, p.z], &[0.8, -0.2, 0.6])
                    },
                    &x,
                )
            }),
        ),
        (
            "rigid_body_step",
            Box::new(move |rng| {
                // One surrogate substep from a randomized state under one
                // stance force; differentiates all 13 state scalars plus the
                // force.
                let x: Vec<f64> = {
                    let mut v = uniform(rng, 16);
                    v[3] += 2.5; // quaternion safely away from zero norm
                    v[13] = rng.gen_range(-30.0..30.0);
                    v[14] = rng.gen_range(-30.0..30.0);
                    v[15] = rng.gen_range(20.0..120.0);
                    v
                };
                let model = m3.clone();
                fd_err(
                    move |_, v| {
                        let state = BodyState {
                            pos: Vec3::new(v[0], v[1], v[2]),
                            orient: Quat::new(v[3], v[4], v[5], v[6]).normalize(),
                            vel: Vec3::new(v[7], v[8], v[9]),
                            omega: Vec3::new(v[10], v[11], v[12]),
                        };
                        let mut grf = GroundReactionSet::unloaded();
                        grf.feet[0] = Vec3::new(0.19, 0.13, 0.0);
                        grf.forces[0] = Some(Vec3::new(v[13], v[14], v[15]));
                        let next = rigid_body_step(&state, &grf, &model, 0.002);
                        let o = [
                            next.pos.x,
                            next.pos.y,
                            next.pos.z,
                            next.orient.w,
                            next.orient.x,
                            next.orient.y,
                            next.orient.z,
                            next.vel.x,
                            next.vel.y,
                            next.vel.z,
                            next.omega.x,
                            next.omega.y,
                            next.omega.z,
                        ];
                        Var::dotc(
                            &o,
                            &[
                                0.3, -0.2, 0.9, 0.1, -0.4, 0.2, 0.5, 0.7, -0.6, 0.3, 0.2, -0.1,
                                0.4,
                            ],
                        )
                    },
                    &x,
                )
            }),
        ),
    ]
}

/// Gradient through k aligned identity steps must be exactly alpha^k.
fn align_decay_chain_err() -> f64 {
    let alpha = 0.9;
    let tape = Tape::new();
    let x = tape.var(1.25);
    let mut cur = x;
    for _ in 0..3 {
        cur = align_scalar(&tape, 1.25, cur, alpha);
    }
    let grads = tape.backward(cur);
    let got = grads.get(x);
    let want = alpha * alpha * alpha;
    (got - want).abs() / want
}

/// Setup shared by the segment and alpha-zero checks: a short open-loop
/// surrogate rollout driven by the policy, with frozen joint state and
/// gait-scheduled stance forces. Both value types run through the one
/// generic `tick`, so the plain and tape paths compute the identical
/// expression.
struct Segment {
    model: RobotModel,
    gait: GaitConfig,
    weights: LossWeights,
    command: [f64; 3],
    height_ref: f64,
    phase0: f64,
    base0: BodyState<f64>,
    q: [f64; NUM_JOINTS],
    dq: [f64; NUM_JOINTS],
    jacobians: [Mat3; NUM_LEGS],
    feet: [Vec3<f64>; NUM_LEGS],
    ticks: usize,
    substeps: usize,
    dt: f64,
    mu: f64,
    alpha: f64,
}

impl Segment {
    fn from_config(cfg: &ExperimentConfig, ticks: usize) -> Segment {
        let model = cfg.model.clone();
        let q = model.q_default();
        let base0 = BodyState::standing(model.default_stand_height());
        let jacobians = std::array::from_fn(|leg| foot_jacobian(&model, leg, leg_slice(&q, leg)));
        let feet = std::array::from_fn(|leg| {
            base0.pos + base0.orient.rotate(leg_fk(&model, leg, leg_slice(&q, leg)))
        });
        Segment {
            model,
            gait: cfg.gait,
            weights: cfg.loss,
            command: [0.2, 0.0, 0.0],
            height_ref: cfg.quadruped.height_ref,
            phase0: 0.4,
            base0,
            q,
            dq: [0.0; NUM_JOINTS],
            jacobians,
            feet,
            ticks,
            substeps: cfg.quadruped.control_substeps,
            dt: cfg.quadruped.physics_dt,
            mu: cfg.contact.mu,
            alpha: cfg.diffsim.alpha,
        }
    }

    fn control_dt(&self) -> f64 {
        self.substeps as f64 * self.dt
    }

    /// One-tick segment starting at the k-th state a full rollout visits.
    fn tick_at(&self, states: &[BodyState<f64>], k: usize) -> Segment {
        let mut phase = self.phase0;
        for _ in 0..k {
            phase = phase_step(phase, self.gait.frequency, self.control_dt());
        }
        Segment {
            model: self.model.clone(),
            base0: states[k],
            phase0: phase,
            ticks: 1,
            ..*self
        }
    }

    /// One control tick shared by both value types: PD torques, stance
    /// forces, substeps, then the per-step loss on the post-step state.
    fn tick<R: Real>(&self, start: &BodyState<R>, action: &[R], phase: f64) -> (BodyState<R>, R) {
        let q_def = self.model.q_default();
        let q_ref: [R; NUM_JOINTS] = std::array::from_fn(|i| action[i].addc(q_def[i]));
        let tau = pd_torque(&q_ref, &self.q, &self.dq, self.model.kp, self.model.kd);
        let stance = contact_schedule(&self.gait, phase);
        let mut grf = GroundReactionSet::unloaded();
        grf.feet = self.feet;
        for leg in 0..NUM_LEGS {
            if !stance[leg].stance {
                continue;
            }
            let load = [-tau[3 * leg], -tau[3 * leg + 1], -tau[3 * leg + 2]];
            if let Ok(f) = torque_to_grf(load, self.jacobians[leg], leg) {
                grf.forces[leg] = Some(friction_cone_clamp(f, self.mu));
            }
        }
        let mut state = *start;
        for _ in 0..self.substeps {
            state = rigid_body_step(&state, &grf, &self.model, self.dt);
        }
        (state, self.loss_at(&state, action, &q_ref, phase))
    }

    /// Per-step loss on a post-step state: swing targets come from the
    /// schedule at the next tick's phase.
    fn loss_at<R: Real>(
        &self,
        state: &BodyState<R>,
        action: &[R],
        q_ref: &[R; NUM_JOINTS],
        phase: f64,
    ) -> R {
        let next_phase = phase_step(phase, self.gait.frequency, self.control_dt());
        let sched = contact_schedule(&self.gait, next_phase);
        let swing_refs: [Option<Vec3<f64>>; NUM_LEGS] =
            std::array::from_fn(|leg| (!sched[leg].stance).then(|| self.feet[leg]));
        let swing = swing_pairs(&self.model, q_ref, state, &swing_refs);
        let (l, _) = step_loss(
            state,
            action,
            self.command,
            self.height_ref,
            &swing,
            &self.weights,
        );
        l
    }

    /// Plain rollout; also returns the per-tick state trajectory so the
    /// alpha-zero check can align against it.
    fn rollout_plain(&self, policy: &Mlp) -> (f64, Vec<BodyState<f64>>) {
        let mut state = self.base0;
        let mut phase = self.phase0;
        let mut states = vec![state];
        let mut total = 0.0;
        for _ in 0..self.ticks {
            let obs = observe(self.command, phase, &self.gait, &state, &self.q, &self.model);
            let action = policy.forward(&obs);
            let (next, l) = self.tick(&state, &action, phase);
            state = next;
            phase = phase_step(phase, self.gait.frequency, self.control_dt());
            total += l;
            states.push(state);
        }
        (total / self.ticks as f64, states)
    }

    /// Tape rollout; `aligned_to` supplies per-tick reference values when
    /// alignment is on, and the loss then reads the post-alignment state
    /// exactly as the next tick will see it.
    fn rollout_tape<'t>(
        &self,
        tape: &'t Tape,
        policy_vars: &MlpVars<'t>,
        aligned_to: Option<&[BodyState<f64>]>,
    ) -> Var<'t> {
        let mut state = lift_state(tape, &self.base0);
        let mut phase = self.phase0;
        let mut total = tape.constant(0.0);
        for k in 0..self.ticks {
            let obs = observe_vars(
                tape,
                self.command,
                phase,
                &self.gait,
                &state,
                &self.q,
                &self.model,
            );
            let action = policy_vars.forward(&obs);
            let (next, l) = self.tick(&state, &action, phase);
            state = next;
            let mut step_l = l;
            if let Some(refs) = aligned_to {
                state = align_state(tape, &refs[k + 1], &state, self.alpha);
                let q_def = self.model.q_default();
                let q_ref: [Var<'t>; NUM_JOINTS] =
                    std::array::from_fn(|i| action[i].addc(q_def[i]));
                step_l = self.loss_at(&state, &action, &q_ref, phase);
            }
            total = total + step_l;
            phase = phase_step(phase, self.gait.frequency, self.control_dt());
        }
        total.mulc(1.0 / self.ticks as f64)
    }
}

/// 24-tick BPTT gradient vs central differences along random unit parameter
/// directions. The error scale blends the directional derivative with the
/// gradient norm so a direction nearly orthogonal to the gradient cannot
/// turn differencing noise into a spurious failure; a real chain bug moves
/// the whole gradient and still lands far above threshold.
fn segment_err(cfg: &ExperimentConfig, directions: usize, eps: f64, rng: &mut ChaCha8Rng) -> f64 {
    let mut sizes = vec![OBS_DIM];
    sizes.extend(&cfg.quadruped.policy_hidden);
    sizes.push(NUM_JOINTS);
    let policy = Mlp::new(
        &sizes,
        Head::Tanh {
            scale: cfg.quadruped.action_scale,
        },
        cfg.seed,
    );
    let segment = Segment::from_config(cfg, cfg.diffsim.horizon);

    let tape = Tape::new();
    let policy_vars = policy.lift(&tape);
    let loss = segment.rollout_tape(&tape, &policy_vars, None);
    let grads = tape.backward(loss);
    let g = policy_vars.grads_flat(&grads);
    let g_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();

    let theta = policy.params_flat();
    let n = theta.len();
    let mut probe = policy.clone();
    let mut worst = 0.0f64;
    for _ in 0..directions {
        let mut d: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut d {
            *v /= norm;
        }
        let analytic: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        let shifted: Vec<f64> = theta.iter().zip(&d).map(|(t, dv)| t + eps * dv).collect();
        probe.set_params_flat(&shifted);
        let (hi, _) = segment.rollout_plain(&probe);
        let shifted: Vec<f64> = theta.iter().zip(&d).map(|(t, dv)| t - eps * dv).collect();
        probe.set_params_flat(&shifted);
        let (lo, _) = segment.rollout_plain(&probe);
        let fd = (hi - lo) / (2.0 * eps);
        let scale = fd.abs().max(1e-4 * g_norm).max(1e-8);
        worst = worst.max((analytic - fd).abs() / scale);
    }
    worst
}

/// With alpha = 0 the chained segment gradient must collapse to the sum of
/// independent per-tick gradients: every cross-step path carries an exactly
/// zero partial through the alignment boundary, so any difference beyond
/// summation rounding is structural leakage.
fn alpha_zero_err(cfg: &ExperimentConfig) -> f64 {
    let sizes = [OBS_DIM, 16, NUM_JOINTS];
    let policy = Mlp::new(
        &sizes,
        Head::Tanh {
            scale: cfg.quadruped.action_scale,
        },
        cfg.seed + 1,
    );
    let mut segment = Segment::from_config(cfg, 4);
    segment.alpha = 0.0;
    let (_, states) = segment.rollout_plain(&policy);

    // Chained rollout, aligned onto the plain trajectory with alpha = 0.
    let tape = Tape::new();
    let policy_vars = policy.lift(&tape);
    let loss = segment.rollout_tape(&tape, &policy_vars, Some(&states));
    let grads = tape.backward(loss);
    let chained = policy_vars.grads_flat(&grads);

    // Independent per-tick gradients from the same visited states. Tick
    // count is a power of two, so the 1/ticks scalings on both sides are
    // exact and only addition order can differ.
    let mut summed = vec![0.0; policy.num_params()];
    for k in 0..segment.ticks {
        let one = segment.tick_at(&states, k);
        let tape = Tape::new();
        let policy_vars = policy.lift(&tape);
        let loss = one.rollout_tape(&tape, &policy_vars, Some(&states[k..]));
        let grads = tape.backward(loss);
        for (s, g) in summed.iter_mut().zip(policy_vars.grads_flat(&grads)) {
            *s += g / segment.ticks as f64;
        }
    }

    let scale = summed
        .iter()
        .fold(0.0f64, |m, g| m.max(g.abs()))
        .max(1e-12);
    chained
        .iter()
        .zip(&summed)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs() / scale))
}
