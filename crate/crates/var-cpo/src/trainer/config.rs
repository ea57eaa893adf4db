//! Training configuration: a flat `key = value` format with sectioned keys
//! (`env.*`, `constraint.*`, `solver.*`, `gae.*`, `critic.*`, `policy.*`,
//! `train.*`), strict parsing (unknown keys are rejected, listing every
//! offender), a canonical dump used for manifests, and a stable config hash.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::env::battery::{Battery, BatteryConfig};
use crate::env::icy_lake::{parse_map, GoalEntryCost, IcyLake, IcyLakeConfig, Tile};
use crate::env::Environment;
use crate::estimation::GaeConfig;
use crate::risk::{ConstraintMode, ConstraintSpec};
use crate::solver::SolverConfig;
use crate::{Error, Result};

/// Which environment to train on.
#[derive(Debug, Clone)]
pub enum EnvConfig {
    /// The gridworld with the snow/ice corridor pair.
    IcyLake(IcyLakeConfig),
    /// The continuous control task with an energy budget.
    Battery(BatteryConfig),
}

impl EnvConfig {
    /// Environment name as used in config files.
    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::IcyLake(_) => "icy_lake",
            EnvConfig::Battery(_) => "battery",
        }
    }

    /// Instantiates one environment (rollout workers each own one).
    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match self {
            EnvConfig::IcyLake(cfg) => Box::new(IcyLake::new(cfg.clone())?),
            EnvConfig::Battery(cfg) => Box::new(Battery::new(cfg.clone())?),
        })
    }

    /// Cost discount γ_c.
    pub fn cost_discount(&self) -> f64 {
        match self {
            EnvConfig::IcyLake(cfg) => cfg.cost_discount,
            EnvConfig::Battery(cfg) => cfg.cost_discount,
        }
    }

    /// Reward discount γ.
    pub fn reward_discount(&self) -> f64 {
        match self {
            EnvConfig::IcyLake(cfg) => cfg.reward_discount,
            EnvConfig::Battery(cfg) => cfg.reward_discount,
        }
    }
}

/// Constraint section: algorithm mode plus threshold parameters.
#[derive(Debug, Clone, Copy)]
pub struct ConstraintConfig {
    /// `var`, `expected_cost`, or `unconstrained` (the Recovery mode is a
    /// runtime state, never configured).
    pub mode: ConstraintMode,
    /// Cost threshold ρ.
    pub rho: f64,
    /// Tail probability budget ε.
    pub epsilon: f64,
    /// Expected-cost budget `d` for the expected-cost baseline; defaults to
    /// ε because that baseline constrains the mean of the exceedance
    /// indicator, i.e. the violation probability itself.
    pub limit: f64,
}

impl ConstraintConfig {
    /// The runtime constraint specification.
    pub fn spec(&self) -> Result<ConstraintSpec> {
        match self.mode {
            ConstraintMode::VaR => ConstraintSpec::var(self.rho, self.epsilon),
            ConstraintMode::ExpectedCost => ConstraintSpec::expected_cost(self.rho, self.epsilon),
            ConstraintMode::Unconstrained => {
                ConstraintSpec::unconstrained(self.rho, self.epsilon)
            }
            ConstraintMode::Recovery => {
                Err(Error::Config("recovery is a runtime mode, not configurable".into()))
            }
        }
    }
}

/// Critic regression section.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticOptimizer {
    /// Plain full-batch gradient descent (default; fully deterministic).
    GradientDescent,
    /// Adaptive-moment estimation, state reset at every update call.
    Adam,
}

impl CriticOptimizer {
    fn name(self) -> &'static str {
        match self {
            CriticOptimizer::GradientDescent => "gd",
            CriticOptimizer::Adam => "adam",
        }
    }
}

/// Critic training hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct CriticConfig {
    /// Step size.
    pub lr: f64,
    /// Full-batch epochs per iteration.
    pub epochs: usize,
    /// Optimizer choice.
    pub optimizer: CriticOptimizer,
}

/// Policy/critic architecture section.
#[derive(Debug, Clone)]
pub struct PolicyConfig {
    /// Hidden layer widths (all heads share the architecture).
    pub hidden: Vec<usize>,
    /// Initial Gaussian log-stddev.
    pub log_std_init: f64,
    /// Gaussian log-stddev clamp range.
    pub log_std_bounds: (f64, f64),
    /// Scale applied to the accumulated-cost feature; `None` resolves to
    /// `1/ρ` in VaR mode and `0` otherwise (the expected-cost baseline and
    /// the unconstrained algorithm are memoryless, matching their standard
    /// formulations).
    pub y_scale: Option<f64>,
}

/// Run-control section.
#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Environment steps collected per iteration (whole episodes; the last
    /// episode may overshoot).
    pub batch_size: usize,
    /// Total environment-step budget.
    pub total_steps: usize,
    /// Master seed; every stream is derived from it.
    pub seed: u64,
    /// Parallel rollout workers. Determinism holds for a fixed count.
    pub workers: usize,
    /// Checkpoint cadence in iterations.
    pub checkpoint_every: usize,
    /// Output directory for metrics and checkpoints.
    pub out_dir: PathBuf,
    /// Optional checkpoint directory to initialize heads from.
    pub init_checkpoint: Option<PathBuf>,
}

/// Full training configuration.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Environment selection and parameters.
    pub env: EnvConfig,
    /// Constraint mode and thresholds.
    pub constraint: ConstraintConfig,
    /// Advantage estimation.
    pub gae: GaeConfig,
    /// Trust-region solver.
    pub solver: SolverConfig,
    /// Critic regression.
    pub critic: CriticConfig,
    /// Architecture.
    pub policy: PolicyConfig,
    /// Run control.
    pub run: RunConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            env: EnvConfig::IcyLake(IcyLakeConfig::default()),
            constraint: ConstraintConfig {
                mode: ConstraintMode::VaR,
                rho: 15.0,
                epsilon: 0.05,
                limit: 0.05,
            },
            gae: GaeConfig::default(),
            solver: SolverConfig::default(),
            critic: CriticConfig {
                lr: 5e-3,
                epochs: 60,
                optimizer: CriticOptimizer::GradientDescent,
            },
            policy: PolicyConfig {
                hidden: vec![64, 64],
                log_std_init: -0.5,
                log_std_bounds: (-5.0, 2.0),
                y_scale: None,
            },
            run: RunConfig {
                batch_size: 4000,
                total_steps: 250_000,
                seed: 0,
                workers: 1,
                checkpoint_every: 25,
                out_dir: PathBuf::from("runs/default"),
                init_checkpoint: None,
            },
        }
    }
}

impl TrainConfig {
    /// Effective scale of the accumulated-cost feature.
    pub fn y_scale(&self) -> f64 {
        match self.policy.y_scale {
            Some(s) => s,
            None => match self.constraint.mode {
                ConstraintMode::VaR => 1.0 / self.constraint.rho,
                _ => 0.0,
            },
        }
    }

    /// Scale dividing augmented-cost regression targets (their natural
    /// magnitude is `ρ²/ε`, far above the other streams); predictions are
    /// multiplied back on read-out.
    pub fn aug_target_scale(&self) -> f64 {
        match self.constraint.mode {
            ConstraintMode::VaR => self.constraint.rho * self.constraint.rho
                / self.constraint.epsilon,
            _ => 1.0,
        }
    }

    /// Validates every section.
    pub fn validate(&self) -> Result<()> {
        self.constraint.spec()?;
        if self.constraint.limit <= 0.0 {
            return Err(Error::Config("constraint.limit must be positive".into()));
        }
        self.gae.validate()?;
        self.solver.validate()?;
        if !(self.critic.lr > 0.0) {
            return Err(Error::Config("critic.lr must be positive".into()));
        }
        if self.critic.epochs == 0 {
            return Err(Error::Config("critic.epochs must be at least 1".into()));
        }
        if self.run.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if self.run.total_steps < self.run.batch_size {
            return Err(Error::Config(
                "train.total_steps must be at least train.batch_size".into(),
            ));
        }
        if self.run.workers == 0 {
            return Err(Error::Config("train.workers must be at least 1".into()));
        }
        if self.run.checkpoint_every == 0 {
            return Err(Error::Config("train.checkpoint_every must be at least 1".into()));
        }
        if self.policy.log_std_bounds.0 > self.policy.log_std_bounds.1 {
            return Err(Error::Config("policy.log_std bounds out of order".into()));
        }
        // Building the environment exercises its own validation.
        self.env.build()?;
        Ok(())
    }

    /// Parses a config file (see the key reference in the crate docs).
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Parses flat `key = value` text. Blank lines and `#` comments are
    /// skipped; duplicate and unknown keys are rejected with every offender
    /// listed.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut pairs: BTreeMap<String, String> = BTreeMap::new();
        let mut problems: Vec<String> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                problems.push(format!("line {}: missing '='", lineno + 1));
                continue;
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if pairs.insert(key.clone(), value).is_some() {
                problems.push(format!("duplicate key '{key}'"));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems.join("; ")));
        }
        Self::from_pairs(&pairs)
    }

    fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut problems: Vec<String> = Vec::new();
        let mut env_keys: Vec<(&String, &String)> = Vec::new();

        // Environment selection first: it decides which env.* keys apply.
        if let Some(name) = pairs.get("env.name") {
            match name.as_str() {
                "icy_lake" => cfg.env = EnvConfig::IcyLake(IcyLakeConfig::default()),
                "battery" => cfg.env = EnvConfig::Battery(BatteryConfig::default()),
                other => problems.push(format!("env.name: unknown environment '{other}'")),
            }
        }

        for (key, value) in pairs {
            if key == "env.name" {
                continue;
            }
            if key.starts_with("env.") {
                env_keys.push((key, value));
                continue;
            }
            if let Err(msg) = cfg.apply_general(key, value) {
                problems.push(msg);
            }
        }
        for (key, value) in env_keys {
            if let Err(msg) = cfg.apply_env(key, value) {
                problems.push(msg);
            }
        }
        if !problems.is_empty() {
            return Err(Error::Config(format!(
                "invalid configuration: {}",
                problems.join("; ")
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_general(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let bad = |what: &str| format!("{key}: {what} '{value}'");
        let f = || value.parse::<f64>().map_err(|_| bad("expected a number, found"));
        let n = || value.parse::<usize>().map_err(|_| bad("expected an integer, found"));
        match key {
            "constraint.mode" => {
                self.constraint.mode = match value {
                    "var" => ConstraintMode::VaR,
                    "expected_cost" => ConstraintMode::ExpectedCost,
                    "unconstrained" => ConstraintMode::Unconstrained,
                    _ => return Err(bad("unknown mode")),
                }
            }
            "constraint.rho" => self.constraint.rho = f()?,
            "constraint.epsilon" => self.constraint.epsilon = f()?,
            "constraint.limit" => self.constraint.limit = f()?,
            "gae.lambda" => self.gae.lambda = f()?,
            "solver.delta" => self.solver.delta = f()?,
            "solver.cg_iters" => self.solver.cg_iters = n()?,
            "solver.cg_tol" => self.solver.cg_tol = f()?,
            "solver.damping" => self.solver.damping = f()?,
            "solver.backtrack_factor" => self.solver.backtrack_factor = f()?,
            "solver.backtrack_trials" => self.solver.backtrack_trials = n()?,
            "critic.lr" => self.critic.lr = f()?,
            "critic.epochs" => self.critic.epochs = n()?,
            "critic.optimizer" => {
                self.critic.optimizer = match value {
                    "gd" => CriticOptimizer::GradientDescent,
                    "adam" => CriticOptimizer::Adam,
                    _ => return Err(bad("unknown optimizer")),
                }
            }
            "policy.hidden" => {
                let mut hidden = Vec::new();
                if !value.is_empty() {
                    for tok in value.split(',') {
                        hidden.push(
                            tok.trim().parse::<usize>().map_err(|_| bad("bad layer width in"))?,
                        );
                    }
                }
                self.policy.hidden = hidden;
            }
            "policy.log_std_init" => self.policy.log_std_init = f()?,
            "policy.log_std_min" => self.policy.log_std_bounds.0 = f()?,
            "policy.log_std_max" => self.policy.log_std_bounds.1 = f()?,
            "policy.y_scale" => {
                self.policy.y_scale = if value == "auto" { None } else { Some(f()?) }
            }
            "train.batch_size" => self.run.batch_size = n()?,
            "train.total_steps" => self.run.total_steps = n()?,
            "train.seed" => {
                self.run.seed = value.parse::<u64>().map_err(|_| bad("expected an integer, found"))?
            }
            "train.workers" => self.run.workers = n()?,
            "train.checkpoint_every" => self.run.checkpoint_every = n()?,
            "train.out_dir" => self.run.out_dir = PathBuf::from(value),
            "train.init_checkpoint" => {
                self.run.init_checkpoint =
                    if value.is_empty() { None } else { Some(PathBuf::from(value)) }
            }
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    fn apply_env(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let bad = |what: &str| format!("{key}: {what} '{value}'");
        let f = || value.parse::<f64>().map_err(|_| bad("expected a number, found"));
        let n = || value.parse::<usize>().map_err(|_| bad("expected an integer, found"));
        match &mut self.env {
            EnvConfig::IcyLake(cfg) => match key {
                "env.map" => {
                    cfg.map = parse_map(value).map_err(|e| format!("env.map: {e}"))?
                }
                "env.snow_cost" => cfg.snow_cost = f()?,
                "env.ice_base_cost" => cfg.ice_base_cost = f()?,
                "env.slip_cost" => cfg.slip_cost = f()?,
                "env.slip_prob" => cfg.slip_prob = f()?,
                "env.goal_reward" => cfg.goal_reward = f()?,
                "env.goal_entry_cost" => {
                    cfg.goal_entry_cost = match value {
                        "departed_tile" => GoalEntryCost::DepartedTile,
                        "free" => GoalEntryCost::Free,
                        _ => return Err(bad("unknown goal entry rule")),
                    }
                }
                "env.reward_discount" => cfg.reward_discount = f()?,
                "env.cost_discount" => cfg.cost_discount = f()?,
                "env.max_episode_steps" => cfg.max_episode_steps = n()?,
                _ => return Err(format!("unknown key '{key}' for env 'icy_lake'")),
            },
            EnvConfig::Battery(cfg) => match key {
                "env.capacity" => cfg.capacity = f()?,
                "env.dt" => cfg.dt = f()?,
                "env.reward_discount" => cfg.reward_discount = f()?,
                "env.cost_discount" => cfg.cost_discount = f()?,
                "env.max_episode_steps" => cfg.max_episode_steps = n()?,
                _ => return Err(format!("unknown key '{key}' for env 'battery'")),
            },
        }
        Ok(())
    }

    /// Canonical `key = value` dump; parsing it reproduces the config.
    pub fn canonical_text(&self) -> String {
        let mut lines: Vec<String> = Vec::new();
        let mut kv = |k: &str, v: String| lines.push(format!("{k} = {v}"));
        kv("env.name", self.env.name().to_string());
        match &self.env {
            EnvConfig::IcyLake(cfg) => {
                kv("env.map", map_to_string(&cfg.map));
                kv("env.snow_cost", fmt(cfg.snow_cost));
                kv("env.ice_base_cost", fmt(cfg.ice_base_cost));
                kv("env.slip_cost", fmt(cfg.slip_cost));
                kv("env.slip_prob", fmt(cfg.slip_prob));
                kv("env.goal_reward", fmt(cfg.goal_reward));
                kv(
                    "env.goal_entry_cost",
                    match cfg.goal_entry_cost {
                        GoalEntryCost::DepartedTile => "departed_tile".to_string(),
                        GoalEntryCost::Free => "free".to_string(),
                    },
                );
                kv("env.reward_discount", fmt(cfg.reward_discount));
                kv("env.cost_discount", fmt(cfg.cost_discount));
                kv("env.max_episode_steps", cfg.max_episode_steps.to_string());
            }
            EnvConfig::Battery(cfg) => {
                kv("env.capacity", fmt(cfg.capacity));
                kv("env.dt", fmt(cfg.dt));
                kv("env.reward_discount", fmt(cfg.reward_discount));
                kv("env.cost_discount", fmt(cfg.cost_discount));
                kv("env.max_episode_steps", cfg.max_episode_steps.to_string());
            }
        }
        kv("constraint.mode", self.constraint.mode.name().to_string());
        kv("constraint.rho", fmt(self.constraint.rho));
        kv("constraint.epsilon", fmt(self.constraint.epsilon));
        kv("constraint.limit", fmt(self.constraint.limit));
        kv("gae.lambda", fmt(self.gae.lambda));
        kv("solver.delta", fmt(self.solver.delta));
        kv("solver.cg_iters", self.solver.cg_iters.to_string());
        kv("solver.cg_tol", fmt(self.solver.cg_tol));
        kv("solver.damping", fmt(self.solver.damping));
        kv("solver.backtrack_factor", fmt(self.solver.backtrack_factor));
        kv("solver.backtrack_trials", self.solver.backtrack_trials.to_string());
        kv("critic.lr", fmt(self.critic.lr));
        kv("critic.epochs", self.critic.epochs.to_string());
        kv("critic.optimizer", self.critic.optimizer.name().to_string());
        kv(
            "policy.hidden",
            self.policy.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","),
        );
        kv("policy.log_std_init", fmt(self.policy.log_std_init));
        kv("policy.log_std_min", fmt(self.policy.log_std_bounds.0));
        kv("policy.log_std_max", fmt(self.policy.log_std_bounds.1));
        kv(
            "policy.y_scale",
            match self.policy.y_scale {
                None => "auto".to_string(),
                Some(s) => fmt(s),
            },
        );
        kv("train.batch_size", self.run.batch_size.to_string());
        kv("train.total_steps", self.run.total_steps.to_string());
        kv("train.seed", self.run.seed.to_string());
        kv("train.workers", self.run.workers.to_string());
        kv("train.checkpoint_every", self.run.checkpoint_every.to_string());
        kv("train.out_dir", self.run.out_dir.display().to_string());
        if let Some(init) = &self.run.init_checkpoint {
            kv("train.init_checkpoint", init.display().to_string());
        }
        lines.join("\n") + "\n"
    }

    /// FNV-1a hash of the canonical dump, as fixed-width hex.
    pub fn hash(&self) -> String {
        format!("{:016x}", fnv1a64(self.canonical_text().as_bytes()))
    }
}

fn fmt(x: f64) -> String {
    // Shortest representation that round-trips (Rust's float Display).
    format!("{x}")
}

/// Renders a tile map back to its `/`-separated text form.
pub fn map_to_string(map: &[Vec<Tile>]) -> String {
    map.iter()
        .map(|row| {
            row.iter()
                .map(|t| match t {
                    Tile::Start => 'S',
                    Tile::Goal => 'G',
                    Tile::DeepSnow => 'D',
                    Tile::Ice => 'I',
                })
                .collect::<String>()
        })
        .collect::<Vec<_>>()
        .join("/")
}

/// 64-bit FNV-1a over a byte string.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Deterministically mixes seed components into one stream seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut bytes = Vec::with_capacity(parts.len() * 8);
    for p in parts {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    fnv1a64(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn canonical_text_round_trips() {
        let mut cfg = TrainConfig::default();
        cfg.constraint.rho = 20.0;
        cfg.run.seed = 17;
        cfg.policy.hidden = vec![32, 16];
        cfg.run.init_checkpoint = Some(PathBuf::from("ckpt/dir"));
        let text = cfg.canonical_text();
        let reparsed = TrainConfig::from_text(&text).unwrap();
        assert_eq!(text, reparsed.canonical_text());
        assert_eq!(cfg.hash(), reparsed.hash());
    }

    #[test]
    fn battery_round_trips() {
        let text = "env.name = battery\nenv.capacity = 4.5\ntrain.total_steps = 8000\n";
        let cfg = TrainConfig::from_text(text).unwrap();
        match &cfg.env {
            EnvConfig::Battery(b) => assert_eq!(b.capacity, 4.5),
            _ => panic!("wrong env"),
        }
        let reparsed = TrainConfig::from_text(&cfg.canonical_text()).unwrap();
        assert_eq!(cfg.canonical_text(), reparsed.canonical_text());
    }

    #[test]
    fn unknown_keys_are_listed() {
        let text = "bogus.key = 1\nconstraint.rho = 15\nanother.bad = x\n";
        let err = TrainConfig::from_text(text).unwrap_err().to_string();
        assert!(err.contains("bogus.key"), "{err}");
        assert!(err.contains("another.bad"), "{err}");
    }

    #[test]
    fn env_keys_checked_against_selected_env() {
        let err = TrainConfig::from_text("env.name = battery\nenv.snow_cost = 3\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("env.snow_cost"), "{err}");
        // Order in the file must not matter for env selection.
        let cfg =
            TrainConfig::from_text("env.capacity = 2\nenv.name = battery\n").unwrap();
        match &cfg.env {
            EnvConfig::Battery(b) => assert_eq!(b.capacity, 2.0),
            _ => panic!("wrong env"),
        }
    }

    #[test]
    fn duplicate_and_malformed_lines_rejected() {
        let err = TrainConfig::from_text("constraint.rho = 15\nconstraint.rho = 16\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("duplicate"), "{err}");
        let err = TrainConfig::from_text("just a line without equals\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("missing '='"), "{err}");
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let cfg = TrainConfig::from_text(
            "# a comment\n\nconstraint.rho = 12.5  # trailing comment\n",
        )
        .unwrap();
        assert_eq!(cfg.constraint.rho, 12.5);
    }

    #[test]
    fn bad_values_name_the_key() {
        let err =
            TrainConfig::from_text("solver.delta = not_a_number\n").unwrap_err().to_string();
        assert!(err.contains("solver.delta"), "{err}");
    }

    #[test]
    fn validation_rejects_inconsistent_runs() {
        let err = TrainConfig::from_text(
            "train.batch_size = 5000\ntrain.total_steps = 100\n",
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("total_steps"), "{err}");
    }

    #[test]
    fn y_scale_resolution_by_mode() {
        let mut cfg = TrainConfig::default();
        assert_eq!(cfg.y_scale(), 1.0 / 15.0);
        cfg.constraint.mode = ConstraintMode::ExpectedCost;
        assert_eq!(cfg.y_scale(), 0.0);
        cfg.policy.y_scale = Some(0.25);
        assert_eq!(cfg.y_scale(), 0.25);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = TrainConfig::default();
        let mut b = TrainConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.run.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn fnv_reference_value() {
        // Published FNV-1a test vector.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn derive_seed_is_order_sensitive() {
        assert_ne!(derive_seed(&[1, 2]), derive_seed(&[2, 1]));
        assert_eq!(derive_seed(&[1, 2, 3]), derive_seed(&[1, 2, 3]));
    }

    #[test]
    fn map_serialization_round_trips() {
        let map = parse_map("SIII/DDDI/DIDI/DDDG").unwrap();
        assert_eq!(map_to_string(&map), "SIII/DDDI/DIDI/DDDG");
    }
}
