//! Non-learning comparison schedulers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, StateVector, NUM_ACTIONS};

/// Maps an observation to a mode-band choice.
pub trait Policy {
    fn act(&mut self, s: &StateVector) -> Action;
    fn name(&self) -> &'static str;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    /// SL-U is used only when the Wi-Fi idle probability is at least this.
    pub wifi_idle_pivot: f64,
    /// SL-L is preferred over CC when its residual ratio is at least this.
    pub licensed_residual_pivot: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self { wifi_idle_pivot: 0.5, licensed_residual_pivot: 0.5 }
    }
}

/// Larger residual of the pair, ties to the first (lower index).
fn roomier(s: &StateVector, a: Action, b: Action) -> Action {
    if s.residual(b) > s.residual(a) {
        b
    } else {
        a
    }
}

/// SL-U while Wi-Fi is mostly idle and SL-U has room; otherwise the roomier
/// SL-L band if it clears the licensed pivot, else the roomier CC band.
pub fn threshold_policy(s: &StateVector, cfg: &ThresholdConfig) -> Action {
    if s.wifi_idle() >= cfg.wifi_idle_pivot && s.residual(Action::Slu5G) > 0.0 {
        return Action::Slu5G;
    }
    let sl = roomier(s, Action::Sll28G, Action::Sll26G);
    if s.residual(sl) >= cfg.licensed_residual_pivot {
        sl
    } else {
        roomier(s, Action::Cc28G, Action::Cc26G)
    }
}

pub fn random_policy<R: Rng + ?Sized>(rng: &mut R) -> Action {
    Action::from_index(rng.random_range(0..NUM_ACTIONS)).expect("index in range")
}

#[derive(Debug, Clone, Default)]
pub struct ThresholdPolicy {
    pub cfg: ThresholdConfig,
}

impl Policy for ThresholdPolicy {
    fn act(&mut self, s: &StateVector) -> Action {
        threshold_policy(s, &self.cfg)
    }

    fn name(&self) -> &'static str {
        "threshold"
    }
}

#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, _s: &StateVector) -> Action {
        random_policy(&mut self.rng)
    }

    fn name(&self) -> &'static str {
        "random"
    }
}
