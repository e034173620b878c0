//! Run orchestration: builds the task and trainer a config describes, drives
//! the training loop, writes the run directory (config snapshot, metrics,
//! checkpoint, summary, manifest), and evaluates trained checkpoints.
//!
//! Seed fan-out from the one config seed: environment i draws `seed * 1000 +
//! i`, the policy initializes from `seed`, the value network from `seed + 1`,
//! the action sampler from `seed + 2`, and start-state batches from
//! `seed + 3`, so no two consumers share a stream.

use std::io;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, Task, TrainerKind};
use crate::envs::double_integrator::{DiDynamics, DiEnv};
use crate::envs::quadruped::QuadEnv;
use crate::gradcheck::{self, GradcheckReport};
use crate::math::Mat2;
use crate::metrics::{MetricsWriter, RunDir};
use crate::model::NUM_JOINTS;
use crate::obs::OBS_DIM;
use crate::policy::{load_tensors, save_tensors, CheckpointError, Head, Mlp, Tensor};
use crate::trainers::diffsim::{DiffsimDi, DiffsimQuad};
use crate::trainers::lqr::{LqrProblem, LqrSolution};
use crate::trainers::ppo::PpoTrainer;
use crate::trainers::TrainRecord;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    /// Training aborted with the parameters untouched.
    #[error("training aborted: {0}")]
    NonFinite(String),
    #[error("{0}")]
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::InvalidConfig(_) => 2,
            RunError::NonFinite(_) => 3,
            RunError::Io(_) => 1,
        }
    }
}

impl From<io::Error> for RunError {
    fn from(e: io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

impl From<CheckpointError> for RunError {
    fn from(e: CheckpointError) -> Self {
        match e {
            // A checkpoint that disagrees with the configured layout is a
            // config problem, not an io failure.
            CheckpointError::ShapeMismatch { .. } => RunError::InvalidConfig(e.to_string()),
            other => RunError::Io(other.to_string()),
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(io) => RunError::Io(io.to_string()),
            other => RunError::InvalidConfig(other.to_string()),
        }
    }
}

/// Policy network layout for a task. Checkpoints only load against the
/// layout they were trained with, so every consumer derives it from here.
pub fn policy_shape(cfg: &ExperimentConfig) -> (Vec<usize>, Head) {
    match cfg.task {
        Task::Quadruped => {
            let mut sizes = vec![OBS_DIM];
            sizes.extend(&cfg.quadruped.policy_hidden);
            sizes.push(NUM_JOINTS);
            (
                sizes,
                Head::Tanh {
                    scale: cfg.quadruped.action_scale,
                },
            )
        }
        // The benchmark needs unbounded controls, so the head stays linear.
        Task::DoubleIntegrator => {
            let mut sizes = vec![2];
            sizes.extend(&cfg.di.hidden);
            sizes.push(1);
            (sizes, Head::Linear)
        }
    }
}

pub fn value_shape(cfg: &ExperimentConfig) -> (Vec<usize>, Head) {
    let input = match cfg.task {
        Task::Quadruped => OBS_DIM,
        Task::DoubleIntegrator => 2,
    };
    let mut sizes = vec![input];
    sizes.extend(&cfg.ppo.value_hidden);
    sizes.push(1);
    (sizes, Head::Linear)
}

fn quad_envs(cfg: &ExperimentConfig, n: usize, seed_base: u64) -> Result<Vec<QuadEnv>, RunError> {
    let terrain = cfg.terrain.build()?;
    Ok((0..n)
        .map(|i| {
            QuadEnv::new(
                cfg.model.clone(),
                cfg.contact,
                terrain.clone(),
                cfg.gait,
                cfg.termination,
                cfg.quadruped.clone(),
                cfg.loss,
                seed_base + i as u64,
            )
        })
        .collect())
}

fn di_envs(cfg: &ExperimentConfig, n: usize, seed_base: u64) -> Vec<DiEnv> {
    let dynamics = DiDynamics::from_config(&cfg.di);
    (0..n)
        .map(|i| DiEnv::new(dynamics, seed_base + i as u64))
        .collect()
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub records: Vec<TrainRecord>,
    /// metric,value rows as written to summary.csv.
    pub summary: Vec<(String, String)>,
}

/// Trains per the config and writes the full run directory. The manifest is
/// written last, so its presence marks a run that completed; a non-finite
/// abort leaves the rows logged so far and no manifest.
pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainOutcome, RunError> {
    cfg.validate()?;
    let dir = RunDir::create(&cfg.out_dir)?;
    dir.write_config_snapshot(&cfg.to_toml())?;
    let mut writer = MetricsWriter::create(&dir.metrics_path())?;

    let mut extra: Vec<(String, String)> = Vec::new();
    let records = match (cfg.task, cfg.trainer) {
        (Task::DoubleIntegrator, TrainerKind::Lqr) => train_lqr(cfg, &dir, &mut extra)?,
        (Task::DoubleIntegrator, TrainerKind::Diffsim) => train_di_diffsim(cfg, &dir, &mut writer)?,
        (Task::DoubleIntegrator, TrainerKind::Ppo) => train_di_ppo(cfg, &dir, &mut writer)?,
        (Task::Quadruped, TrainerKind::Diffsim) => train_quad_diffsim(cfg, &dir, &mut writer)?,
        (Task::Quadruped, TrainerKind::Ppo) => train_quad_ppo(cfg, &dir, &mut writer)?,
        (Task::Quadruped, TrainerKind::Lqr) => {
            unreachable!("validate rejects the lqr trainer on the quadruped task")
        }
    };
    writer.finish()?;

    let mut summary = summarize(&records);
    summary.extend(extra);
    let borrowed: Vec<(&str, String)> = summary
        .iter()
        .map(|(k, v)| (k.as_str(), v.clone()))
        .collect();
    dir.write_summary(&borrowed)?;
    dir.write_manifest()?;
    Ok(TrainOutcome { records, summary })
}

fn fmt(v: f64) -> String {
    format!("{v:.17e}")
}

/// Mean of a record field over the last `n` iterations that report it.
pub fn mean_tail<F>(records: &[TrainRecord], n: usize, f: F) -> Option<f64>
where
    F: Fn(&TrainRecord) -> Option<f64>,
{
    let tail = &records[records.len().saturating_sub(n)..];
    let vals: Vec<f64> = tail.iter().filter_map(f).collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

fn summarize(records: &[TrainRecord]) -> Vec<(String, String)> {
    let mut rows = vec![("iterations".to_string(), records.len().to_string())];
    let mut push = |k: &str, v: Option<f64>| {
        if let Some(v) = v {
            rows.push((k.to_string(), fmt(v)));
        }
    };
    push("loss_mean_last_100", mean_tail(records, 100, |r| r.loss_total));
    push("reward_mean_last_100", mean_tail(records, 100, |r| r.mean_reward));
    push(
        "tracking_err_mean_last_100",
        mean_tail(records, 100, |r| r.tracking_err_mps),
    );
    push("vx_mean_last_100", mean_tail(records, 100, |r| r.mean_vx));
    push(
        "mean_episode_len_final",
        records.last().and_then(|r| r.mean_episode_len),
    );
    push(
        "train_wall_ms",
        Some(records.iter().map(|r| r.wall_ms).sum()),
    );
    rows
}

fn train_lqr(
    cfg: &ExperimentConfig,
    dir: &RunDir,
    extra: &mut Vec<(String, String)>,
) -> Result<Vec<TrainRecord>, RunError> {
    let dynamics = DiDynamics::from_config(&cfg.di);
    let problem = LqrProblem::from_di(&dynamics);
    let solution = problem.solve();
    solution.save(&dir.checkpoint_path())?;
    let x0 = [1.0, 0.0];
    extra.push(("lqr_gain0_pos".into(), fmt(solution.gains[0][0])));
    extra.push(("lqr_gain0_vel".into(), fmt(solution.gains[0][1])));
    extra.push(("lqr_cost_x0_unit".into(), fmt(solution.optimal_cost(x0))));
    extra.push((
        "lqr_cost_identity_residual".into(),
        fmt((solution.simulated_cost(&problem, x0) - solution.optimal_cost(x0)).abs()),
    ));
    Ok(Vec::new())
}

fn train_di_diffsim(
    cfg: &ExperimentConfig,
    dir: &RunDir,
    writer: &mut MetricsWriter,
) -> Result<Vec<TrainRecord>, RunError> {
    let (sizes, head) = policy_shape(cfg);
    let policy = Mlp::new(&sizes, head, cfg.seed);
    let dynamics = DiDynamics::from_config(&cfg.di);
    let mut trainer = DiffsimDi::new(policy, dynamics, cfg.diffsim, cfg.num_envs, cfg.seed + 3);
    let mut records = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let rec = trainer.iterate(it).map_err(RunError::NonFinite)?;
        writer.append(&rec)?;
        records.push(rec);
    }
    trainer.policy.save(&dir.checkpoint_path())?;
    Ok(records)
}

fn train_di_ppo(
    cfg: &ExperimentConfig,
    dir: &RunDir,
    writer: &mut MetricsWriter,
) -> Result<Vec<TrainRecord>, RunError> {
    let (sizes, head) = policy_shape(cfg);
    let policy = Mlp::new(&sizes, head, cfg.seed);
    let (vsizes, vhead) = value_shape(cfg);
    let value = Mlp::new(&vsizes, vhead, cfg.seed + 1);
    let rng = ChaCha8Rng::seed_from_u64(cfg.seed + 2);
    let mut trainer = PpoTrainer::new(policy, value, cfg.ppo.clone(), cfg.num_envs, rng);
    let mut envs = di_envs(cfg, cfg.num_envs, cfg.seed * 1000);
    let mut records = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let rec = trainer
            .iterate(&mut envs, it)
            .map_err(RunError::NonFinite)?;
        writer.append(&rec)?;
        records.push(rec);
    }
    save_ppo(&trainer, &dir.checkpoint_path())?;
    Ok(records)
}

fn train_quad_diffsim(
    cfg: &ExperimentConfig,
    dir: &RunDir,
    writer: &mut MetricsWriter,
) -> Result<Vec<TrainRecord>, RunError> {
    let (sizes, head) = policy_shape(cfg);
    let policy = Mlp::new(&sizes, head, cfg.seed);
    let mut trainer = DiffsimQuad::new(policy, cfg.diffsim);
    let mut envs = quad_envs(cfg, cfg.num_envs, cfg.seed * 1000)?;
    let mut records = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let rec = trainer
            .iterate(&mut envs, it)
            .map_err(RunError::NonFinite)?;
        writer.append(&rec)?;
        records.push(rec);
    }
    trainer.policy.save(&dir.checkpoint_path())?;
    Ok(records)
}

fn train_quad_ppo(
    cfg: &ExperimentConfig,
    dir: &RunDir,
    writer: &mut MetricsWriter,
) -> Result<Vec<TrainRecord>, RunError> {
    let (sizes, head) = policy_shape(cfg);
    let policy = Mlp::new(&sizes, head, cfg.seed);
    let (vsizes, vhead) = value_shape(cfg);
    let value = Mlp::new(&vsizes, vhead, cfg.seed + 1);
    let rng = ChaCha8Rng::seed_from_u64(cfg.seed + 2);
    let mut trainer = PpoTrainer::new(policy, value, cfg.ppo.clone(), cfg.num_envs, rng);
    let mut envs = quad_envs(cfg, cfg.num_envs, cfg.seed * 1000)?;
    let mut records = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let rec = trainer
            .iterate(&mut envs, it)
            .map_err(RunError::NonFinite)?;
        writer.append(&rec)?;
        records.push(rec);
    }
    save_ppo(&trainer, &dir.checkpoint_path())?;
    Ok(records)
}

/// Sampled-trainer checkpoint: policy tensors, then the 1 x act log-std row,
/// then value tensors, in one file.
fn save_ppo(trainer: &PpoTrainer, path: &Path) -> Result<(), CheckpointError> {
    let mut tensors = trainer.policy.tensors.clone();
    tensors.push(Tensor {
        rows: 1,
        cols: trainer.log_std.len(),
        data: trainer.log_std.clone(),
    });
    tensors.extend(trainer.value.tensors.iter().cloned());
    save_tensors(path, &tensors)
}

/// Loads the policy network from a run's checkpoint, splitting composite
/// sampled-trainer checkpoints as needed.
pub fn load_policy(cfg: &ExperimentConfig, path: &Path) -> Result<Mlp, RunError> {
    let (sizes, head) = policy_shape(cfg);
    match cfg.trainer {
        TrainerKind::Ppo => {
            let tensors = load_tensors(path)?;
            let n_policy = 2 * (sizes.len() - 1);
            if tensors.len() <= n_policy {
                return Err(RunError::InvalidConfig(format!(
                    "checkpoint {}: {} tensors, expected a policy + log-std + value layout",
                    path.display(),
                    tensors.len()
                )));
            }
            Ok(Mlp::from_tensors(&sizes, head, tensors[..n_policy].to_vec())?)
        }
        TrainerKind::Diffsim => Ok(Mlp::load(path, &sizes, head)?),
        TrainerKind::Lqr => Err(RunError::InvalidConfig(
            "the lqr checkpoint holds a gain schedule, not a policy network".into(),
        )),
    }
}

fn load_lqr(path: &Path) -> Result<LqrSolution, RunError> {
    let tensors = load_tensors(path)?;
    if tensors.len() != 2 || tensors[0].cols != 2 || tensors[1].rows != 2 || tensors[1].cols != 2 {
        return Err(RunError::InvalidConfig(format!(
            "checkpoint {}: expected an N x 2 gain schedule and a 2 x 2 value matrix",
            path.display()
        )));
    }
    let gains = tensors[0]
        .data
        .chunks_exact(2)
        .map(|c| [c[0], c[1]])
        .collect();
    let p = &tensors[1].data;
    // Only the initial value matrix is stored; the schedule's interior
    // matrices are not needed for evaluation.
    let values = vec![Mat2([[p[0], p[1]], [p[2], p[3]]])];
    Ok(LqrSolution { gains, values })
}

#[derive(Debug, Clone)]
pub struct QuadEval {
    pub ticks: usize,
    pub terminations: usize,
    pub mean_vx: f64,
    pub mean_tracking_err: f64,
    pub mean_height: f64,
}

/// Deterministic closed-loop rollout of the mean policy for a fixed number
/// of control ticks. Timeout truncation is ignored (the caller picks the
/// horizon); failures reset the robot and are counted.
pub fn eval_quadruped(
    cfg: &ExperimentConfig,
    policy: &Mlp,
    seed: u64,
    ticks: usize,
) -> Result<QuadEval, RunError> {
    let mut env = quad_envs(cfg, 1, seed)?.pop().expect("one env requested");
    let mut terminations = 0usize;
    let (mut vx, mut track, mut height) = (0.0, 0.0, 0.0);
    for _ in 0..ticks {
        let obs = env.observe();
        let a = policy.forward(&obs);
        let mut action = [0.0; NUM_JOINTS];
        action.copy_from_slice(&a);
        let out = env.apply_action(&action);
        vx += out.vx;
        track += out.tracking_err;
        height += out.base_post.pos.z;
        if out.terminated.is_some() {
            terminations += 1;
            env.reset();
        }
    }
    let n = ticks.max(1) as f64;
    Ok(QuadEval {
        ticks,
        terminations,
        mean_vx: vx / n,
        mean_tracking_err: track / n,
        mean_height: height / n,
    })
}

/// Mean episode cost of a policy over freshly sampled start states.
pub fn eval_di_policy(cfg: &ExperimentConfig, policy: &Mlp, episodes: usize, seed: u64) -> f64 {
    let dynamics = DiDynamics::from_config(&cfg.di);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..episodes {
        let x0 = DiDynamics::sample_x0(&mut rng);
        total += dynamics.rollout_cost(|x| policy.forward(x)[0], x0);
    }
    total / episodes.max(1) as f64
}

/// Evaluates the checkpoint in the config's run directory and returns
/// metric,value rows for display.
pub fn run_eval(
    cfg: &ExperimentConfig,
    ticks: usize,
    episodes: usize,
) -> Result<Vec<(String, String)>, RunError> {
    cfg.validate()?;
    let ckpt = RunDir::at(&cfg.out_dir).checkpoint_path();
    if !ckpt.exists() {
        return Err(RunError::Io(format!(
            "no checkpoint at {} (train first)",
            ckpt.display()
        )));
    }
    let mut rows = Vec::new();
    match (cfg.task, cfg.trainer) {
        (Task::DoubleIntegrator, TrainerKind::Lqr) => {
            let solution = load_lqr(&ckpt)?;
            let dynamics = DiDynamics::from_config(&cfg.di);
            let problem = LqrProblem::from_di(&dynamics);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed + 4);
            let mut predicted = 0.0;
            let mut simulated = 0.0;
            for _ in 0..episodes.max(1) {
                let x0 = DiDynamics::sample_x0(&mut rng);
                predicted += solution.optimal_cost(x0);
                simulated += solution.simulated_cost(&problem, x0);
            }
            let n = episodes.max(1) as f64;
            rows.push(("predicted_mean_cost".into(), fmt(predicted / n)));
            rows.push(("simulated_mean_cost".into(), fmt(simulated / n)));
            rows.push((
                "cost_identity_residual".into(),
                fmt((predicted - simulated).abs() / n),
            ));
        }
        (Task::DoubleIntegrator, _) => {
            let policy = load_policy(cfg, &ckpt)?;
            let mean_cost = eval_di_policy(cfg, &policy, episodes, cfg.seed + 4);
            let dynamics = DiDynamics::from_config(&cfg.di);
            let solution = LqrProblem::from_di(&dynamics).solve();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed + 4);
            let mut optimal = 0.0;
            for _ in 0..episodes.max(1) {
                optimal += solution.optimal_cost(DiDynamics::sample_x0(&mut rng));
            }
            let optimal = optimal / episodes.max(1) as f64;
            rows.push(("mean_cost".into(), fmt(mean_cost)));
            rows.push(("optimal_mean_cost".into(), fmt(optimal)));
            rows.push(("cost_ratio_vs_optimal".into(), fmt(mean_cost / optimal)));
        }
        (Task::Quadruped, _) => {
            let policy = load_policy(cfg, &ckpt)?;
            let eval = eval_quadruped(cfg, &policy, cfg.seed + 4, ticks)?;
            rows.push(("eval_ticks".into(), eval.ticks.to_string()));
            rows.push(("terminations".into(), eval.terminations.to_string()));
            rows.push(("mean_vx".into(), fmt(eval.mean_vx)));
            rows.push(("tracking_err_mps".into(), fmt(eval.mean_tracking_err)));
            rows.push(("mean_height".into(), fmt(eval.mean_height)));
        }
    }
    Ok(rows)
}

pub fn run_gradcheck(
    cfg: &ExperimentConfig,
    trials: usize,
    corrupt: Option<&str>,
) -> Result<GradcheckReport, RunError> {
    cfg.validate()?;
    Ok(gradcheck::run(cfg, trials, corrupt))
}

/// Trains the configured setup twice, once with the studied mechanism on and
/// once off, evaluates both checkpoints, and writes a comparison table.
///
/// Diffsim toggles per-step state alignment; the sampled trainer toggles the
/// terminal failure penalty. Sub-runs land in named subdirectories of the
/// config's out_dir.
pub fn run_ablate(cfg: &ExperimentConfig) -> Result<Vec<(String, String)>, RunError> {
    cfg.validate()?;
    let variants: Vec<(&str, ExperimentConfig)> = match cfg.trainer {
        TrainerKind::Diffsim => {
            let mut on = cfg.clone();
            on.quadruped.align = true;
            on.out_dir = cfg.out_dir.join("align_on");
            let mut off = cfg.clone();
            off.quadruped.align = false;
            off.out_dir = cfg.out_dir.join("align_off");
            vec![("align_on", on), ("align_off", off)]
        }
        TrainerKind::Ppo => {
            let penalty = if cfg.ppo.terminal_penalty > 0.0 {
                cfg.ppo.terminal_penalty
            } else {
                200.0
            };
            let mut on = cfg.clone();
            on.ppo.terminal_penalty = penalty;
            on.out_dir = cfg.out_dir.join("penalty_on");
            let mut off = cfg.clone();
            off.ppo.terminal_penalty = 0.0;
            off.out_dir = cfg.out_dir.join("penalty_off");
            vec![("penalty_on", on), ("penalty_off", off)]
        }
        TrainerKind::Lqr => {
            return Err(RunError::InvalidConfig(
                "ablate: nothing to toggle for the lqr solver".into(),
            ))
        }
    };

    let mut rows: Vec<(String, String)> = Vec::new();
    for (name, vcfg) in &variants {
        let outcome = run_train(vcfg)?;
        let ckpt = RunDir::at(&vcfg.out_dir).checkpoint_path();
        match vcfg.task {
            Task::Quadruped => {
                let policy = load_policy(vcfg, &ckpt)?;
                let eval = eval_quadruped(vcfg, &policy, vcfg.seed + 4, 1000)?;
                rows.push((format!("{name}.tracking_err_mps"), fmt(eval.mean_tracking_err)));
                rows.push((format!("{name}.mean_vx"), fmt(eval.mean_vx)));
                rows.push((format!("{name}.terminations"), eval.terminations.to_string()));
            }
            Task::DoubleIntegrator => {
                let policy = load_policy(vcfg, &ckpt)?;
                let cost = eval_di_policy(vcfg, &policy, 100, vcfg.seed + 4);
                rows.push((format!("{name}.mean_cost"), fmt(cost)));
            }
        }
        if let Some(len) = outcome.records.last().and_then(|r| r.mean_episode_len) {
            rows.push((format!("{name}.mean_episode_len_final"), fmt(len)));
        }
    }

    let mut text = String::from("metric,value\n");
    for (k, v) in &rows {
        text.push_str(&format!("{k},{v}\n"));
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("comparison.csv"), text)?;
    Ok(rows)
}
