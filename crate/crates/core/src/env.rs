//! The episodic-environment interface used by dataset collection and ascent.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::policy::MlpPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    /// Sum of rewards, discounted by the environment's own discount.
    pub episode_return: f64,
    pub steps: usize,
    pub seed: u64,
}

/// An environment whose episodes are pure functions of `(policy, seed)`.
pub trait Environment: Sync {
    fn name(&self) -> String;
    fn observation_dim(&self) -> usize;
    fn action_count(&self) -> usize;
    fn rollout(&self, policy: &MlpPolicy, seed: u64) -> Result<EpisodeResult>;
}
