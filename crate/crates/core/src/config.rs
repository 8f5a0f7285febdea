//! Run configuration, read from and written back to TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{LossWeights, Variant, DEFAULT_DISTANCE_CAP, DEFAULT_GAMMA_Q};
use crate::error::{Error, Result};
use crate::objectives::{Optimizer, TrainConfig, DEFAULT_LEARNING_RATE};
use crate::session::{DEFAULT_CAPACITY, DEFAULT_PREFILL};
use crate::training::{Family, Policy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    /// Open-arena gridworld with a hidden goal.
    Foraging,
    /// Foraging, then a new goal with only the value head trainable.
    GoalTransfer,
    /// Foraging, then scrambled connectivity with only the value head trainable.
    ShuffleTransfer,
    /// 28-state ring, random-policy phase followed by on-policy running.
    CircularTrack,
    /// Figure-8 maze with a decaying memory trace.
    AltT,
    /// Figure-8 maze seen one frame at a time by the recurrent encoder.
    PoAltT,
    /// Grating corridor with rewarded vertical stripes.
    Corridor,
    /// Foraging, then exposure to a linked preferred/non-preferred chain.
    Swap,
    /// Four-state chain.
    Chain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyName {
    MfOnly,
    NegOnly,
    Predictive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub family: FamilyName,
    /// Horizon of the positive loss; only read for the predictive family.
    pub gamma: f64,
    pub variant: Variant,
    pub latent: usize,
    /// `[w_Q, w_-, w_+]`; the family's reference triple when absent.
    pub weights: Option<[f64; 3]>,
    pub distance_cap: f64,
    pub gamma_q: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            family: FamilyName::Predictive,
            gamma: 0.0,
            variant: Variant::Base,
            latent: 10,
            weights: None,
            distance_cap: DEFAULT_DISTANCE_CAP,
            gamma_q: DEFAULT_GAMMA_Q,
        }
    }
}

impl ModelConfig {
    pub fn family(&self) -> Family {
        match self.family {
            FamilyName::MfOnly => Family::MfOnly,
            FamilyName::NegOnly => Family::NegOnly,
            FamilyName::Predictive => Family::Predictive { gamma: self.gamma },
        }
    }

    /// Horizon actually used by the positive loss.
    pub fn gamma_pred(&self) -> f64 {
        match self.family {
            FamilyName::Predictive => self.gamma,
            _ => 0.0,
        }
    }

    pub fn loss_weights(&self) -> Result<LossWeights> {
        match self.weights {
            Some([q, neg, pos]) => Ok(LossWeights::new(q, neg, pos)),
            None => self.family().default_weights(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub sync_period: usize,
    pub optimizer: Optimizer,
    /// Behaviour policy: random action with this probability, else greedy.
    /// 1.0 is the uniform random policy.
    pub epsilon: f64,
    pub buffer_capacity: usize,
    pub prefill: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSettings {
            batch_size: t.batch_size,
            learning_rate: DEFAULT_LEARNING_RATE,
            sync_period: t.sync_period,
            optimizer: t.optimizer,
            epsilon: 1.0,
            buffer_capacity: DEFAULT_CAPACITY,
            prefill: DEFAULT_PREFILL,
            eval_every: 10,
            eval_episodes: 10,
        }
    }
}

impl TrainSettings {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            sync_period: self.sync_period,
            optimizer: self.optimizer,
        }
    }

    pub fn policy(&self) -> Policy {
        if self.epsilon >= 1.0 {
            Policy::Random
        } else {
            Policy::EpsilonGreedy(self.epsilon)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservationMode {
    Plain,
    Shuffled,
    ImageBank,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Arena side of the gridworld experiments.
    pub side: usize,
    /// Goal cell `[x, y]`; drawn from the seed when absent.
    pub goal: Option<[usize; 2]>,
    pub observation: ObservationMode,
    /// Image-bank directory, required by `observation = "image-bank"`.
    pub image_dir: Option<PathBuf>,
    /// Probability that a move follows one of the other actions.
    pub stochasticity: f64,
    /// Goal of task B in the goal-transfer experiment; drawn when absent.
    pub goal_b: Option<[usize; 2]>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            side: 8,
            goal: None,
            observation: ObservationMode::Plain,
            image_dir: None,
            stochasticity: 0.0,
            goal_b: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    /// Fine-tuning updates of the transfer experiments.
    pub phase_b_steps: usize,
    /// Random-policy updates before the on-policy phase of the circular track.
    pub pretrain_steps: usize,
    /// Updates on the swap chain.
    pub exposure_steps: usize,
    /// Rank (by response range) of the first unit tried for swap probes.
    pub probe_unit: usize,
    /// Random-policy steps behind each activation dump.
    pub rollout_steps: usize,
    /// Scripted figure-8 trials behind each maze dump.
    pub probe_trials: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            phase_b_steps: 100,
            pretrain_steps: 300,
            exposure_steps: 100,
            probe_unit: 0,
            rollout_steps: 5000,
            probe_trials: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Save a checkpoint every this many updates (0: only the final one).
    pub checkpoint_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            checkpoint_every: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    /// Updates of the main training phase.
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_steps() -> usize {
    600
}

impl RunConfig {
    pub fn new(experiment: Experiment) -> Self {
        RunConfig {
            experiment,
            seed: 0,
            steps: default_steps(),
            model: ModelConfig::default(),
            train: TrainSettings::default(),
            env: EnvConfig::default(),
            protocol: ProtocolConfig::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Every field, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.train.batch_size == 0 {
            return bad("train.batch_size must be at least 1".into());
        }
        if self.train.eval_every == 0 || self.train.eval_episodes == 0 {
            return bad("train.eval_every and train.eval_episodes must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.train.epsilon) {
            return bad(format!(
                "train.epsilon must lie in [0, 1], got {}",
                self.train.epsilon
            ));
        }
        if !(0.0..=1.0).contains(&self.env.stochasticity) {
            return bad(format!(
                "env.stochasticity must lie in [0, 1], got {}",
                self.env.stochasticity
            ));
        }
        if !(0.0..1.0).contains(&self.model.gamma) {
            return bad(format!(
                "model.gamma must lie in [0, 1), got {}",
                self.model.gamma
            ));
        }
        if self.model.latent == 0 {
            return bad("model.latent must be positive".into());
        }
        if self.train.prefill < self.train.batch_size {
            return bad(format!(
                "train.prefill ({}) must cover one batch ({})",
                self.train.prefill, self.train.batch_size
            ));
        }
        if let Some(w) = self.model.weights {
            if w.iter().any(|v| !(*v >= 0.0)) {
                return bad(format!("model.weights must be nonnegative, got {w:?}"));
            }
        }
        if self.env.observation == ObservationMode::ImageBank && self.env.image_dir.is_none() {
            return bad("env.observation = \"image-bank\" needs env.image_dir".into());
        }
        self.model.loss_weights()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_fills_defaults() {
        let cfg = RunConfig::from_toml(
            "experiment = \"foraging\"\n[model]\nfamily = \"mf-only\"\nlatent = 4\n",
        )
        .unwrap();
        assert_eq!(cfg.model.latent, 4);
        assert_eq!(cfg.steps, 600);
        assert_eq!(cfg.train.batch_size, 64);
        assert_eq!(
            cfg.model.loss_weights().unwrap(),
            LossWeights::new(1e-4, 0.0, 0.0)
        );
    }

    #[test]
    fn snapshot_roundtrips() {
        let mut cfg = RunConfig::new(Experiment::GoalTransfer);
        cfg.env.goal = Some([1, 2]);
        cfg.model.weights = Some([1e-4, 1e-5, 1e-6]);
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err =
            RunConfig::from_toml("experiment = \"foraging\"\nlearning_rate = 3\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        let err =
            RunConfig::from_toml("experiment = \"foraging\"\n[train]\nbatch = 3\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn gamma_without_reference_weights_needs_explicit_weights() {
        let mut cfg = RunConfig::new(Experiment::Foraging);
        cfg.model.gamma = 0.3;
        assert!(cfg.validate().is_err());
        cfg.model.weights = Some([1e-4, 1e-4, 1e-7]);
        assert!(cfg.validate().is_ok());
    }
}
