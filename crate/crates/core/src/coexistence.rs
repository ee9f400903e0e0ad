//! Wi-Fi occupancy of the 5 GHz channel and the listen-before-talk gate.
//!
//! Incumbent activity is a two-state Markov chain advanced once per slot.
//! The agent never influences it.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoexistenceError {
    #[error("transition probability {name} must lie in [0, 1], got {value}")]
    Probability { name: &'static str, value: f64 },
    #[error("idle estimator window must be at least 1")]
    Window,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WifiState {
    Idle,
    Busy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbtDecision {
    Granted,
    Denied,
}

/// Single sensing sample: granted iff the channel is idle.
pub fn lbt_gate(sensed: WifiState) -> LbtDecision {
    match sensed {
        WifiState::Idle => LbtDecision::Granted,
        WifiState::Busy => LbtDecision::Denied,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WifiActivityModel {
    p_busy_to_idle: f64,
    p_idle_to_busy: f64,
    current: WifiState,
}

impl WifiActivityModel {
    pub fn new(p_busy_to_idle: f64, p_idle_to_busy: f64, initial: WifiState) -> Result<Self, CoexistenceError> {
        for (name, value) in [("p_busy_to_idle", p_busy_to_idle), ("p_idle_to_busy", p_idle_to_busy)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(CoexistenceError::Probability { name, value });
            }
        }
        Ok(Self { p_busy_to_idle, p_idle_to_busy, current: initial })
    }

    /// Long-run idle fraction; `None` when both transition probabilities are zero.
    pub fn stationary_idle(&self) -> Option<f64> {
        let total = self.p_busy_to_idle + self.p_idle_to_busy;
        (total > 0.0).then(|| self.p_busy_to_idle / total)
    }

    pub fn current(&self) -> WifiState {
        self.current
    }

    /// Redraws the current state from the stationary distribution (or keeps it
    /// when the chain has none).
    pub fn resample_stationary<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        if let Some(p_idle) = self.stationary_idle() {
            self.current = if rng.random::<f64>() < p_idle { WifiState::Idle } else { WifiState::Busy };
        }
    }

    /// Advances one slot and returns the new state.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> WifiState {
        let u: f64 = rng.random();
        self.current = match self.current {
            WifiState::Idle if u < self.p_idle_to_busy => WifiState::Busy,
            WifiState::Busy if u < self.p_busy_to_idle => WifiState::Idle,
            s => s,
        };
        self.current
    }
}

/// Sliding-window fraction of idle sensing outcomes.
#[derive(Debug, Clone)]
pub struct IdleEstimator {
    window: usize,
    history: VecDeque<WifiState>,
    idle_count: usize,
}

impl IdleEstimator {
    pub fn new(window: usize) -> Result<Self, CoexistenceError> {
        if window == 0 {
            return Err(CoexistenceError::Window);
        }
        Ok(Self { window, history: VecDeque::with_capacity(window), idle_count: 0 })
    }

    pub fn update(&mut self, sensed: WifiState) -> f64 {
        if self.history.len() == self.window {
            if let Some(WifiState::Idle) = self.history.pop_front() {
                self.idle_count -= 1;
            }
        }
        if sensed == WifiState::Idle {
            self.idle_count += 1;
        }
        self.history.push_back(sensed);
        self.idle_count as f64 / self.history.len() as f64
    }

    /// `None` before the first observation.
    pub fn estimate(&self) -> Option<f64> {
        (!self.history.is_empty()).then(|| self.idle_count as f64 / self.history.len() as f64)
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn clear(&mut self) {
        self.history.clear();
        self.idle_count = 0;
    }
}
