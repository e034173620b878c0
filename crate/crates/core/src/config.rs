//! Experiment configuration: one TOML file describes the task, trainer, and
//! every module's parameters. Parse errors surface the offending line via
//! the TOML deserializer; semantic problems name the key. A run snapshots
//! its effective config so results stay self-describing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gait::GaitConfig;
use crate::loss::LossWeights;
use crate::model::RobotModel;
use crate::refsim::{ContactModel, Heightfield, Terrain, TerminationConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Quadruped,
    DoubleIntegrator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainerKind {
    Diffsim,
    Ppo,
    Lqr,
}

/// First-order trainer parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffTrainConfig {
    /// Segment length in control steps.
    pub horizon: usize,
    /// Optimizer step size.
    pub learning_rate: f64,
    /// Per-step gradient decay through aligned states, in (0, 1].
    pub alpha: f64,
    /// Use plain gradient descent instead of the adaptive-moment optimizer.
    pub plain_sgd: bool,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
}

impl Default for DiffTrainConfig {
    fn default() -> Self {
        DiffTrainConfig {
            horizon: 24,
            learning_rate: 1e-3,
            alpha: 0.9,
            plain_sgd: false,
            grad_clip: 0.0,
        }
    }
}

/// Policy-gradient trainer parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub epochs: usize,
    /// Steps collected per environment per iteration.
    pub window: usize,
    /// Extra cost charged when an episode terminates in failure.
    pub terminal_penalty: f64,
    /// Initial log standard deviation of the action distribution.
    pub init_log_std: f64,
    /// Hidden layer widths of the value network.
    pub value_hidden: Vec<usize>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            learning_rate: 1e-3,
            gamma: 0.95,
            gae_lambda: 0.95,
            clip: 0.2,
            entropy_coef: 0.002,
            value_coef: 0.5,
            epochs: 10,
            window: 24,
            terminal_penalty: 0.0,
            init_log_std: 0.0,
            value_hidden: vec![256, 256],
        }
    }
}

/// Double-integrator benchmark parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiConfig {
    pub dt: f64,
    /// Episode horizon in steps.
    pub horizon: usize,
    /// Hidden layer widths of the policy (and value) networks.
    pub hidden: Vec<usize>,
    /// State cost diagonal.
    pub q_diag: [f64; 2],
    /// Terminal cost diagonal.
    pub qf_diag: [f64; 2],
    /// Control cost.
    pub r: f64,
}

impl Default for DiConfig {
    fn default() -> Self {
        DiConfig {
            dt: 0.05,
            horizon: 100,
            hidden: vec![64, 64],
            q_diag: [1.0, 1.0],
            qf_diag: [1.0, 1.0],
            r: 1.0,
        }
    }
}

/// Quadruped environment parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadrupedConfig {
    /// Control steps before timeout reset.
    pub episode_steps: usize,
    /// Physics substeps per control step.
    pub control_substeps: usize,
    /// Physics substep length, s.
    pub physics_dt: f64,
    /// Snap the differentiable state to the reference each control step.
    /// Turned off only by the ablation study.
    pub align: bool,
    /// Body height target for the loss, m.
    pub height_ref: f64,
    /// Action-to-joint-offset bound, rad.
    pub action_scale: f64,
    /// Hidden layer widths of the policy network.
    pub policy_hidden: Vec<usize>,
    /// Command sampling ranges, [lo, hi].
    pub cmd_vx_range: [f64; 2],
    pub cmd_vy_range: [f64; 2],
    pub cmd_yaw_range: [f64; 2],
    /// When set, every episode uses this command instead of sampling.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_command: Option<[f64; 3]>,
    /// Landing targets use measured body velocity; false uses the command.
    pub raibert_measured_velocity: bool,
    /// Reset randomization: base position jitter, m.
    pub reset_pos_jitter: f64,
    /// Reset randomization: joint angle jitter, rad.
    pub reset_joint_jitter: f64,
}

impl Default for QuadrupedConfig {
    fn default() -> Self {
        QuadrupedConfig {
            episode_steps: 240,
            control_substeps: 5,
            physics_dt: 0.002,
            align: true,
            height_ref: 0.3,
            action_scale: 0.5,
            policy_hidden: vec![256, 256],
            cmd_vx_range: [-1.0, 1.0],
            cmd_vy_range: [-1.0, 1.0],
            cmd_yaw_range: [-1.0, 1.0],
            fixed_command: None,
            raibert_measured_velocity: true,
            reset_pos_jitter: 0.02,
            reset_joint_jitter: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TerrainConfig {
    /// "flat", "heightfield" (from file), or "procedural".
    pub kind: String,
    /// Flat-ground height, m.
    pub height: f64,
    /// Heightfield file path (kind = "heightfield").
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    /// Procedural grid parameters (kind = "procedural").
    pub nx: usize,
    pub ny: usize,
    pub cell: f64,
    pub amplitude: f64,
    pub terrain_seed: u64,
}

impl Default for TerrainConfig {
    fn default() -> Self {
        TerrainConfig {
            kind: "flat".into(),
            height: 0.0,
            file: None,
            nx: 32,
            ny: 32,
            cell: 0.1,
            amplitude: 0.03,
            terrain_seed: 0,
        }
    }
}

impl TerrainConfig {
    pub fn build(&self) -> Result<Terrain, ConfigError> {
        match self.kind.as_str() {
            "flat" => Ok(Terrain::Flat {
                height: self.height,
            }),
            "heightfield" => {
                let path = self.file.as_ref().ok_or_else(|| {
                    ConfigError::Invalid("terrain.file: required when kind = heightfield".into())
                })?;
                let text = std::fs::read_to_string(path).map_err(|e| {
                    ConfigError::Invalid(format!("terrain.file: {}: {e}", path.display()))
                })?;
                let hf = Heightfield::parse(&text)
                    .map_err(|e| ConfigError::Invalid(format!("terrain.file: {e}")))?;
                Ok(Terrain::Heightfield(hf))
            }
            "procedural" => Ok(Terrain::Heightfield(Heightfield::procedural(
                self.terrain_seed,
                self.nx,
                self.ny,
                self.cell,
                self.amplitude,
            ))),
            other => Err(ConfigError::Invalid(format!(
                "terrain.kind: unknown kind {other:?} (expected flat, heightfield, or procedural)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub task: Task,
    pub trainer: TrainerKind,
    pub seed: u64,
    pub iterations: usize,
    /// Environments trained in parallel (robots, or initial states).
    pub num_envs: usize,
    pub out_dir: PathBuf,
    pub model: RobotModel,
    pub contact: ContactModel,
    pub gait: GaitConfig,
    pub loss: LossWeights,
    pub termination: TerminationConfig,
    pub terrain: TerrainConfig,
    pub quadruped: QuadrupedConfig,
    pub diffsim: DiffTrainConfig,
    pub ppo: PpoConfig,
    pub di: DiConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: Task::Quadruped,
            trainer: TrainerKind::Diffsim,
            seed: 0,
            iterations: 100,
            num_envs: 1,
            out_dir: PathBuf::from("runs/out"),
            model: RobotModel::default(),
            contact: ContactModel::default(),
            gait: GaitConfig::default(),
            loss: LossWeights::default(),
            termination: TerminationConfig::default(),
            terrain: TerrainConfig::default(),
            quadruped: QuadrupedConfig::default(),
            diffsim: DiffTrainConfig::default(),
            ppo: PpoConfig::default(),
            di: DiConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config read: {0}")]
    Io(#[from] std::io::Error),
    /// The TOML error's display includes the line and column.
    #[error("config parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config invalid: {0}")]
    Invalid(String),
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if self.num_envs == 0 {
            return fail("num_envs: must be at least 1".into());
        }
        if let Err(e) = self.model.validate() {
            return fail(format!("model.{e}"));
        }
        if let Err(e) = self.gait.validate() {
            return fail(format!("gait.{e}"));
        }
        let d = &self.diffsim;
        if d.horizon == 0 {
            return fail("diffsim.horizon: must be at least 1".into());
        }
        if !(d.alpha > 0.0 && d.alpha <= 1.0) {
            return fail(format!("diffsim.alpha: {} outside (0, 1]", d.alpha));
        }
        if !(d.learning_rate >= 0.0) {
            return fail("diffsim.learning_rate: must be nonnegative".into());
        }
        if d.grad_clip < 0.0 {
            return fail("diffsim.grad_clip: must be nonnegative (0 disables)".into());
        }
        let p = &self.ppo;
        if !(p.clip > 0.0) {
            return fail(format!("ppo.clip: {} must be positive", p.clip));
        }
        for (name, v) in [("ppo.gamma", p.gamma), ("ppo.gae_lambda", p.gae_lambda)] {
            if !(v > 0.0 && v <= 1.0) {
                return fail(format!("{name}: {v} outside (0, 1]"));
            }
        }
        if p.window == 0 || p.epochs == 0 {
            return fail("ppo.window and ppo.epochs: must be at least 1".into());
        }
        let q = &self.quadruped;
        if q.episode_steps == 0 || q.control_substeps == 0 {
            return fail("quadruped.episode_steps and control_substeps: must be at least 1".into());
        }
        if !(q.physics_dt > 0.0) {
            return fail("quadruped.physics_dt: must be positive".into());
        }
        if !(q.action_scale > 0.0) {
            return fail("quadruped.action_scale: must be positive".into());
        }
        for (name, r) in [
            ("quadruped.cmd_vx_range", q.cmd_vx_range),
            ("quadruped.cmd_vy_range", q.cmd_vy_range),
            ("quadruped.cmd_yaw_range", q.cmd_yaw_range),
        ] {
            if r[0] > r[1] {
                return fail(format!("{name}: lower bound {} above upper {}", r[0], r[1]));
            }
        }
        let di = &self.di;
        if !(di.dt > 0.0) || di.horizon == 0 {
            return fail("di.dt must be positive and di.horizon at least 1".into());
        }
        if !(di.r > 0.0) {
            return fail(format!("di.r: {} must be positive (control cost)", di.r));
        }
        if self.trainer == TrainerKind::Lqr && self.task != Task::DoubleIntegrator {
            return fail("trainer: lqr only applies to task = double_integrator".into());
        }
        // Surface terrain problems (missing file, bad kind) at load time.
        self.terrain.build().map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        back.validate().unwrap();
        assert_eq!(back.diffsim.horizon, 24);
        assert!((back.diffsim.alpha - 0.9).abs() < 1e-15);
        assert_eq!(back.quadruped.episode_steps, 240);
        assert_eq!(back.ppo.epochs, 10);
    }

    #[test]
    fn parse_errors_point_at_the_line() {
        let text = "task = \"quadruped\"\ntrainer = \"diffsim\"\n\n[diffsim]\nhorizon = \"shoe\"\n";
        let err = toml::from_str::<ExperimentConfig>(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 5"), "error not line-anchored: {msg}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "task = \"quadruped\"\ntrainer = \"diffsim\"\nwibble = 3\n";
        assert!(toml::from_str::<ExperimentConfig>(text).is_err());
        let nested = "[ppo]\nclipp = 0.2\n";
        assert!(toml::from_str::<ExperimentConfig>(nested).is_err());
    }

    #[test]
    fn semantic_validation_names_the_key() {
        let mut cfg = ExperimentConfig::default();
        cfg.diffsim.alpha = 1.5;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("diffsim.alpha"), "{msg}");

        let mut cfg = ExperimentConfig::default();
        cfg.trainer = TrainerKind::Lqr;
        cfg.task = Task::Quadruped;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.terrain.kind = "lava".into();
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("terrain.kind"), "{msg}");
    }

    #[test]
    fn partial_files_inherit_defaults() {
        let text = "task = \"double_integrator\"\ntrainer = \"lqr\"\nseed = 7\n";
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.di.horizon, 100);
        assert!((cfg.model.mass - 9.0).abs() < 1e-15);
    }

    #[test]
    fn terrain_kinds_build() {
        let mut cfg = TerrainConfig::default();
        assert!(matches!(cfg.build().unwrap(), Terrain::Flat { .. }));
        cfg.kind = "procedural".into();
        let t = cfg.build().unwrap();
        match t {
            Terrain::Heightfield(hf) => assert_eq!(hf.heights.len(), 32 * 32),
            _ => panic!("expected heightfield"),
        }
        cfg.kind = "heightfield".into();
        cfg.file = None;
        assert!(cfg.build().is_err());
    }
}
