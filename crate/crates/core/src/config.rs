//! Run configuration: a single versioned JSON schema covering task specs,
//! loss weights, optimizer settings, and training budgets, plus the named
//! presets the command-line surface exposes.

use serde::{Deserialize, Serialize};

use crate::env::{Family, GoalRegion, TaskSpec, GRID_ACTIONS};
use crate::error::{Error, Result};

/// Current config schema version; files with any other version are rejected.
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Scalar weights of the combined training objective and its inner terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_vae: f64,
    pub lambda_f: f64,
    pub lambda_wgan: f64,
    /// KL weight inside the VAE objective.
    pub lambda_d: f64,
    /// Gradient-penalty weight inside the critic objective.
    pub lambda_gp: f64,
    /// Cycle-consistency weight for cross-domain adaptation.
    pub lambda_cycle: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_vae: 1.0,
            lambda_f: 1.0,
            lambda_wgan: 1.0,
            lambda_d: 0.1,
            lambda_gp: 10.0,
            lambda_cycle: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lambda_vae", self.lambda_vae),
            ("lambda_f", self.lambda_f),
            ("lambda_wgan", self.lambda_wgan),
            ("lambda_d", self.lambda_d),
            ("lambda_gp", self.lambda_gp),
            ("lambda_cycle", self.lambda_cycle),
        ];
        for (name, v) in all {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Optimizer settings for one parameter group in the joint training loop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSettings {
    pub lr: f64,
    pub weight_decay: f64,
    /// Gradient steps taken for this group per training iteration.
    pub steps_per_iteration: usize,
}

impl OptimSettings {
    fn validate(&self, name: &str) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("{name}.lr must be positive")));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("{name}.weight_decay must be >= 0")));
        }
        Ok(())
    }
}

fn default_optim() -> OptimSettings {
    OptimSettings {
        lr: 3e-4,
        weight_decay: 1e-3,
        steps_per_iteration: 10,
    }
}

/// Soft actor-critic settings for continuous-control learners.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SacSettings {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub entropy_coeff: f64,
    pub tau: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Initial environment steps taken uniformly at random.
    pub uniform_warmup: usize,
    /// Gradient updates per environment step during joint training.
    pub updates_per_step: usize,
    /// Environment steps per training iteration.
    pub env_steps_per_iteration: usize,
    /// Environment steps when training a fresh policy in a target task.
    pub transfer_env_steps: usize,
    /// Gradient updates per environment step during transfer training.
    pub transfer_updates_per_step: usize,
}

impl Default for SacSettings {
    fn default() -> Self {
        SacSettings {
            hidden: vec![64, 64],
            lr: 1e-3,
            entropy_coeff: 0.2,
            tau: 0.05,
            replay_capacity: 100_000,
            batch_size: 256,
            uniform_warmup: 1000,
            updates_per_step: 1,
            env_steps_per_iteration: 1000,
            transfer_env_steps: 5000,
            transfer_updates_per_step: 4,
        }
    }
}

impl SacSettings {
    fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(Error::Config("sac.hidden must not be empty".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("sac.lr must be positive".into()));
        }
        if !(self.entropy_coeff > 0.0) {
            return Err(Error::Config("sac.entropy_coeff must be positive".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config("sac.tau must be in (0, 1]".into()));
        }
        if self.batch_size < 2 || self.replay_capacity < self.batch_size {
            return Err(Error::Config(
                "sac.batch_size must be >= 2 and fit the replay capacity".into(),
            ));
        }
        Ok(())
    }
}

/// Complete description of one training/transfer run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub master_seed: u64,
    /// Abstract code dimension shared by encoder, critic, and reward.
    pub d_z: usize,
    pub encoder_hidden: Vec<usize>,
    pub reward_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub weights: LossWeights,
    pub vae_opt: OptimSettings,
    pub critic_opt: OptimSettings,
    pub reward_opt: OptimSettings,
    pub sac: SacSettings,
    /// State batch size for VAE/critic/reward updates, split evenly across
    /// tasks and roles.
    pub batch_size: usize,
    /// Maximum training iterations.
    pub iterations: usize,
    /// Stop after this many consecutive iterations without a new best mean
    /// learner return.
    pub patience: usize,
    pub experts_per_task: usize,
    pub learner_buffer_cap: usize,
    pub rollout_episodes_per_iteration: usize,
    pub eval_episodes: usize,
    /// Goal bonus added by the shaped reward in goal-carrying targets.
    pub shaping_bonus: f64,
    /// Permit a single source task (insufficiency studies only).
    pub allow_single_source: bool,
    pub sources: Vec<TaskSpec>,
    pub targets: Vec<TaskSpec>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.sources.is_empty() {
            return Err(Error::Config("at least one source task required".into()));
        }
        if self.sources.len() < 2 && !self.allow_single_source {
            return Err(Error::Config(
                "fewer than 2 source tasks requires allow_single_source".into(),
            ));
        }
        if self.d_z == 0 {
            return Err(Error::Config("d_z must be positive".into()));
        }
        let n = self.sources.len();
        if self.batch_size < 2 * n {
            return Err(Error::Config(format!(
                "batch_size {} cannot be split across {n} tasks and 2 roles",
                self.batch_size
            )));
        }
        self.weights.validate()?;
        self.vae_opt.validate("vae_opt")?;
        self.critic_opt.validate("critic_opt")?;
        self.reward_opt.validate("reward_opt")?;
        self.sac.validate()?;
        let mut ids: Vec<&str> = self
            .sources
            .iter()
            .chain(&self.targets)
            .map(|s| s.task_id.as_str())
            .collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("task_ids must be unique".into()));
        }
        for spec in self.sources.iter().chain(&self.targets) {
            spec.validate()?;
        }
        Ok(())
    }

    pub fn source_ids(&self) -> Vec<String> {
        self.sources.iter().map(|s| s.task_id.clone()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn pointbot_spec(
    task_id: &str,
    action_dim: usize,
    disabled: &[usize],
    goal_region: Option<GoalRegion>,
    seed: u64,
) -> TaskSpec {
    let mut mask = vec![false; action_dim];
    for &d in disabled {
        mask[d] = true;
    }
    TaskSpec {
        task_id: task_id.into(),
        family: Family::Pointbot,
        state_dim: 4 + action_dim,
        action_dim,
        horizon: 200,
        discount: 0.9,
        disabled_mask: mask,
        goal_region,
        seed,
    }
}

fn grid_spec(task_id: &str, disabled_action: Option<usize>, goal_cell: usize, seed: u64) -> TaskSpec {
    let mut mask = vec![false; GRID_ACTIONS];
    if let Some(a) = disabled_action {
        mask[a] = true;
    }
    TaskSpec {
        task_id: task_id.into(),
        family: Family::TabularGrid,
        state_dim: crate::env::GRID_STATES,
        action_dim: GRID_ACTIONS,
        horizon: 30,
        discount: 0.95,
        disabled_mask: mask,
        goal_region: Some(GoalRegion::grid_cell(goal_cell)),
        seed,
    }
}

fn base_config(master_seed: u64) -> RunConfig {
    RunConfig {
        schema_version: CONFIG_SCHEMA_VERSION,
        master_seed,
        d_z: 4,
        encoder_hidden: vec![32, 32, 32],
        reward_hidden: vec![16, 16],
        critic_hidden: vec![32, 32],
        weights: LossWeights::default(),
        vae_opt: default_optim(),
        critic_opt: default_optim(),
        reward_opt: default_optim(),
        sac: SacSettings {
            batch_size: 128,
            env_steps_per_iteration: 500,
            ..SacSettings::default()
        },
        batch_size: 256,
        iterations: 20,
        patience: 10,
        experts_per_task: 50,
        learner_buffer_cap: 200,
        rollout_episodes_per_iteration: 5,
        eval_episodes: 10,
        shaping_bonus: 1.0,
        allow_single_source: false,
        sources: Vec::new(),
        targets: Vec::new(),
    }
}

/// Every named preset accepted by `preset`.
pub const PRESET_NAMES: [&str; 6] = [
    "halfcheetah-analogue",
    "ant-analogue",
    "assistive-analogue",
    "insufficiency",
    "violation",
    "cross-family",
];

/// Named preset configurations; `master_seed` fans out into all streams.
pub fn preset(name: &str, master_seed: u64) -> Result<RunConfig> {
    let s = master_seed;
    let mut cfg = base_config(s);
    match name {
        // Two pointbot variants with complementary disabled actuators,
        // transferring to the undamaged robot.
        "halfcheetah-analogue" => {
            cfg.sources = vec![
                pointbot_spec("bot-src-a", 4, &[0], None, s.wrapping_add(1)),
                pointbot_spec("bot-src-b", 4, &[3], None, s.wrapping_add(2)),
            ];
            cfg.targets = vec![pointbot_spec("bot-target", 4, &[], None, s.wrapping_add(3))];
        }
        // A wider robot (6 actuators) with paired disabilities.
        "ant-analogue" => {
            cfg.sources = vec![
                pointbot_spec("ant-src-a", 6, &[0, 1], None, s.wrapping_add(1)),
                pointbot_spec("ant-src-b", 6, &[4, 5], None, s.wrapping_add(2)),
            ];
            cfg.targets = vec![pointbot_spec("ant-target", 6, &[], None, s.wrapping_add(3))];
        }
        // Goal-carrying target: same dynamics mismatch, but the target task
        // rewards reaching a forward-velocity band, exercising reward shaping.
        "assistive-analogue" => {
            let goal = GoalRegion {
                dims: vec![2],
                lower: vec![1.5],
                upper: vec![1e300],
            };
            cfg.sources = vec![
                pointbot_spec("assist-src-a", 4, &[0], None, s.wrapping_add(1)),
                pointbot_spec("assist-src-b", 4, &[3], None, s.wrapping_add(2)),
            ];
            cfg.targets = vec![pointbot_spec(
                "assist-target",
                4,
                &[],
                Some(goal),
                s.wrapping_add(3),
            )];
        }
        // Single source: the reward sees only one dynamics variant and is
        // expected to generalize poorly to the complementary one.
        "insufficiency" => {
            cfg.allow_single_source = true;
            cfg.sources = vec![pointbot_spec("bot-src-a", 4, &[0], None, s.wrapping_add(1))];
            cfg.targets = vec![pointbot_spec("bot-src-b", 4, &[3], None, s.wrapping_add(2))];
        }
        // Tabular family where the target's goal lies opposite every source
        // goal: no source covers the target's critical dynamics.
        "violation" => {
            cfg.encoder_hidden = vec![16, 16];
            cfg.critic_hidden = vec![16, 16];
            cfg.iterations = 12;
            cfg.sources = vec![
                grid_spec("grid-src-a", Some(0), 24, s.wrapping_add(1)),
                grid_spec("grid-src-b", Some(3), 24, s.wrapping_add(2)),
            ];
            cfg.targets = vec![grid_spec("grid-target", None, 20, s.wrapping_add(3))];
        }
        // Different target state space (2 actuators vs 4): requires the
        // cross-domain adapter before the reward can be reused.
        "cross-family" => {
            cfg.sources = vec![
                pointbot_spec("xf-src-a", 4, &[0], None, s.wrapping_add(1)),
                pointbot_spec("xf-src-b", 4, &[3], None, s.wrapping_add(2)),
            ];
            cfg.targets = vec![pointbot_spec("xf-target", 2, &[], None, s.wrapping_add(3))];
        }
        other => {
            return Err(Error::Config(format!(
                "unknown preset '{other}' (expected one of {})",
                PRESET_NAMES.join(", ")
            )));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}
