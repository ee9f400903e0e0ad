//! Experiment specification, read from a single JSON document.
//!
//! Unknown keys are rejected at every level. Relative paths are taken
//! relative to the working directory of the process.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use sidelink_core::{EnvConfig, Hyperparams, ThresholdConfig};

use crate::error::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Train,
    Evaluate,
    Sweep,
    CompareChannel,
    ValidateQueue,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Train => "train",
            Mode::Evaluate => "evaluate",
            Mode::Sweep => "sweep",
            Mode::CompareChannel => "compare-channel",
            Mode::ValidateQueue => "validate-queue",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Ddqn,
    Threshold,
    Random,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Ddqn => "ddqn",
            PolicyKind::Threshold => "threshold",
            PolicyKind::Random => "random",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Network checkpoints trained under each channel mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelCheckpoints {
    pub static_per_episode: PathBuf,
    pub dynamic_per_packet: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueueValidationConfig {
    pub rhos: Vec<f64>,
    pub capacities: Vec<u32>,
    pub arrivals: u64,
}

impl Default for QueueValidationConfig {
    fn default() -> Self {
        Self { rhos: vec![0.3, 0.5, 0.8, 1.2], capacities: vec![5, 10, 20], arrivals: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Optional; when present it must match the subcommand.
    #[serde(default)]
    pub mode: Option<Mode>,
    /// One policy or a list. Sweeps evaluate every listed policy.
    #[serde(default = "default_policy", deserialize_with = "one_or_many")]
    pub policy: Vec<PolicyKind>,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub agent: Hyperparams,
    #[serde(default)]
    pub threshold: ThresholdConfig,
    /// Licensed budgets in bits/s.
    #[serde(default)]
    pub sweep_points: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_epochs_per_point")]
    pub epochs_per_point: u64,
    #[serde(default = "default_training_epochs")]
    pub training_epochs: u64,
    #[serde(default = "default_log_interval")]
    pub log_interval: u64,
    /// DDQN network to evaluate (sweep/evaluate) or to write (train).
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub channel_checkpoints: Option<ChannelCheckpoints>,
    /// Train on the one-state bandit with these arm rewards instead of the scheduler.
    #[serde(default)]
    pub bandit_rewards: Option<[f64; 5]>,
    /// Throughput floor monitored in sweep summaries; derived from the random policy when absent.
    #[serde(default)]
    pub throughput_floor_bps: Option<f64>,
    #[serde(default)]
    pub queue_validation: QueueValidationConfig,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
}

fn default_policy() -> Vec<PolicyKind> {
    vec![PolicyKind::Ddqn]
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

fn default_epochs_per_point() -> u64 {
    20_000
}

fn default_training_epochs() -> u64 {
    100_000
}

fn default_log_interval() -> u64 {
    1_000
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<PolicyKind>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(PolicyKind),
        Many(Vec<PolicyKind>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(p) => vec![p],
        OneOrMany::Many(v) => v,
    })
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            mode: None,
            policy: default_policy(),
            env: EnvConfig::default(),
            agent: Hyperparams::default(),
            threshold: ThresholdConfig::default(),
            sweep_points: Vec::new(),
            seeds: default_seeds(),
            epochs_per_point: default_epochs_per_point(),
            training_epochs: default_training_epochs(),
            log_interval: default_log_interval(),
            checkpoint: None,
            channel_checkpoints: None,
            bandit_rewards: None,
            throughput_floor_bps: None,
            queue_validation: QueueValidationConfig::default(),
            output_path: None,
        }
    }
}

impl ExperimentSpec {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|source| HarnessError::ConfigParse { path: origin.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(HarnessError::io(path))?;
        Self::from_json(&text, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec is always serializable")
    }

    /// Checks everything `mode` needs before any work starts.
    pub fn validate(&self, mode: Mode) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if let Some(m) = self.mode {
            if m != mode {
                return bad(format!("spec declares mode {m} but {mode} was requested"));
            }
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.policy.is_empty() {
            return bad("policy list must not be empty".into());
        }
        self.env.validate()?;
        self.agent.validate()?;
        for (name, p) in [
            ("wifi_idle_pivot", self.threshold.wifi_idle_pivot),
            ("licensed_residual_pivot", self.threshold.licensed_residual_pivot),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("threshold.{name} must lie in [0, 1], got {p}"));
            }
        }
        if let Some(f) = self.throughput_floor_bps {
            if !f.is_finite() || f < 0.0 {
                return bad(format!("throughput_floor_bps must be >= 0, got {f}"));
            }
        }
        if let Some(r) = self.bandit_rewards {
            if r.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                return bad("bandit_rewards must be finite and > 0".into());
            }
        }
        match mode {
            Mode::Train => {
                if self.policy != [crate::config::PolicyKind::Ddqn] {
                    return bad("train requires policy \"ddqn\"".into());
                }
                if self.log_interval == 0 {
                    return bad("log_interval must be >= 1".into());
                }
            }
            Mode::Evaluate | Mode::Sweep | Mode::CompareChannel => {
                if self.epochs_per_point == 0 {
                    return bad("epochs_per_point must be >= 1".into());
                }
                if mode != Mode::Evaluate && self.sweep_points.is_empty() {
                    return bad(format!("sweep_points must not be empty in {mode} mode"));
                }
                if let Some(b) = self.sweep_points.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
                    return bad(format!("sweep point {b} is not a positive budget"));
                }
                if mode == Mode::CompareChannel {
                    if self.channel_checkpoints.is_none() {
                        return bad("compare-channel needs channel_checkpoints".into());
                    }
                } else if self.policy.contains(&PolicyKind::Ddqn) && self.checkpoint.is_none() {
                    return bad("policy ddqn needs a checkpoint path".into());
                }
            }
            Mode::ValidateQueue => {
                let q = &self.queue_validation;
                if q.rhos.is_empty() || q.capacities.is_empty() {
                    return bad("queue_validation needs at least one rho and one capacity".into());
                }
                if let Some(r) = q.rhos.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
                    return bad(format!("queue_validation rho {r} must be > 0"));
                }
                if q.arrivals < 50 {
                    return bad("queue_validation needs at least 50 arrivals per point".into());
                }
            }
        }
        Ok(())
    }
}
