//! Training configuration.
//!
//! Every free constant of the reward and PPO machinery lives here so a
//! single file pins an entire run. Files may be TOML or JSON; keys match
//! the field names below, missing keys fall back to the defaults, and
//! unknown keys are a hard error.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CcrlError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CcrlConfig {
    /// Confidence reward scale for correct answers (must be > 0).
    pub alpha: f64,
    /// Confidence penalty scale for incorrect answers (must be > 0).
    pub beta: f64,
    /// Outcome reward for a correct extracted answer (must be > 0).
    pub r_plus: f64,
    /// Outcome reward for anything else (must be < 0).
    pub r_minus: f64,
    /// Discount factor, in [0, 1].
    pub gamma: f64,
    /// Advantage-estimation decay, in [0, 1].
    pub lam: f64,
    /// Ratio clip half-width for the policy and value losses.
    pub eps_clip: f64,
    /// Weight of the reference-model KL penalty in the actor objective.
    pub beta_kl: f64,
    /// Stabilizer added to the advantage standard deviation.
    pub eps_norm: f64,
    /// Update epochs per collected batch.
    pub ppo_epochs: u32,
    /// Trajectories collected per iteration.
    pub batch_size: u32,
    pub learning_rate_actor: f64,
    pub learning_rate_critic: f64,
    /// Global L2 clip applied to actor and critic gradients.
    pub grad_clip_norm: f64,
    pub seed: u64,
    /// Confidence thresholds for overconfidence analysis, each in (0, 1).
    pub thresholds: Vec<f64>,
}

impl Default for CcrlConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.5,
            r_plus: 1.0,
            r_minus: -1.0,
            gamma: 1.0,
            lam: 0.95,
            eps_clip: 0.2,
            beta_kl: 0.01,
            eps_norm: 1e-8,
            ppo_epochs: 4,
            batch_size: 256,
            learning_rate_actor: 20.0,
            learning_rate_critic: 10.0,
            grad_clip_norm: 5.0,
            seed: 7,
            thresholds: vec![0.5, 0.7, 0.9],
        }
    }
}

impl CcrlConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(CcrlError::InvalidConfig(msg));
        if !(self.alpha > 0.0) {
            return fail(format!("alpha must be > 0, got {}", self.alpha));
        }
        if !(self.beta > 0.0) {
            return fail(format!("beta must be > 0, got {}", self.beta));
        }
        if !(self.r_plus > 0.0) {
            return fail(format!("r_plus must be > 0, got {}", self.r_plus));
        }
        if !(self.r_minus < 0.0) {
            return fail(format!("r_minus must be < 0, got {}", self.r_minus));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail(format!("gamma must be in [0,1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.lam) {
            return fail(format!("lam must be in [0,1], got {}", self.lam));
        }
        if !(self.eps_clip > 0.0) {
            return fail(format!("eps_clip must be > 0, got {}", self.eps_clip));
        }
        if !(self.beta_kl >= 0.0) {
            return fail(format!("beta_kl must be >= 0, got {}", self.beta_kl));
        }
        if !(self.eps_norm > 0.0) {
            return fail(format!("eps_norm must be > 0, got {}", self.eps_norm));
        }
        if self.ppo_epochs == 0 {
            return fail("ppo_epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(self.learning_rate_actor > 0.0) {
            return fail(format!(
                "learning_rate_actor must be > 0, got {}",
                self.learning_rate_actor
            ));
        }
        if !(self.learning_rate_critic > 0.0) {
            return fail(format!(
                "learning_rate_critic must be > 0, got {}",
                self.learning_rate_critic
            ));
        }
        if !(self.grad_clip_norm > 0.0) {
            return fail(format!(
                "grad_clip_norm must be > 0, got {}",
                self.grad_clip_norm
            ));
        }
        for &t in &self.thresholds {
            if !(t > 0.0 && t < 1.0) {
                return fail(format!("threshold {t} must lie in (0,1)"));
            }
        }
        Ok(())
    }

    /// Load from a `.toml` or `.json` file. Unknown keys are rejected and
    /// the result is validated.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("")
            .to_ascii_lowercase();
        let config: CcrlConfig = match ext.as_str() {
            "json" => serde_json::from_str(&text)
                .map_err(|e| CcrlError::InvalidConfig(format!("{}: {e}", path.display())))?,
            _ => toml::from_str(&text)
                .map_err(|e| CcrlError::InvalidConfig(format!("{}: {e}", path.display())))?,
        };
        config.validate()?;
        Ok(config)
    }
}
