//! The scheduling MDP: Poisson traffic into a finite buffer, five mode-band
//! options with exclusive bandwidth holds, and Wi-Fi gated SL-U access.
//!
//! One decision epoch is one slot. Each step:
//! 1. arrivals are enqueued (overflow is counted per packet),
//! 2. the head-of-line packet is dispatched on the chosen option if it has
//!    bandwidth and, for SL-U, the channel is sensed idle,
//! 3. Wi-Fi advances one slot and in-flight holds tick down.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{
    calibrated_budget, link_rate, pathloss_los, sample_rician, ChannelError, ChannelRealization,
    LinkBudget, LinkGeometry,
};
use crate::coexistence::{
    lbt_gate, CoexistenceError, IdleEstimator, LbtDecision, WifiActivityModel, WifiState,
};
use crate::queue::{ArrivalProcess, PacketQueue, QueueError};

pub const NUM_ACTIONS: usize = 5;
pub const STATE_DIM: usize = 7;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment configuration: {0}")]
    Config(String),
    #[error("episode has finished; call reset() before stepping again")]
    EpisodeFinished,
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error(transparent)]
    Coexistence(#[from] CoexistenceError),
}

/// Mode-band option. The discriminant is the action index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    #[serde(rename = "CC_28G")]
    Cc28G = 0,
    #[serde(rename = "CC_26G")]
    Cc26G = 1,
    #[serde(rename = "SLL_28G")]
    Sll28G = 2,
    #[serde(rename = "SLL_26G")]
    Sll26G = 3,
    #[serde(rename = "SLU_5G")]
    Slu5G = 4,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] =
        [Action::Cc28G, Action::Cc26G, Action::Sll28G, Action::Sll26G, Action::Slu5G];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn is_licensed(self) -> bool {
        self != Action::Slu5G
    }

    pub fn is_cellular(self) -> bool {
        matches!(self, Action::Cc28G | Action::Cc26G)
    }

    pub fn carrier_ghz(self) -> f64 {
        match self {
            Action::Cc28G | Action::Sll28G => 28.0,
            Action::Cc26G | Action::Sll26G => 26.0,
            Action::Slu5G => 5.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Cc28G => "CC_28G",
            Action::Cc26G => "CC_26G",
            Action::Sll28G => "SLL_28G",
            Action::Sll26G => "SLL_26G",
            Action::Slu5G => "SLU_5G",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `[queue occupancy, residual CC28, CC26, SLL28, SLL26, SLU5, Wi-Fi idle]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateVector(pub [f64; STATE_DIM]);

impl StateVector {
    pub fn new(queue_occupancy: f64, residual: [f64; NUM_ACTIONS], wifi_idle: f64) -> Self {
        let mut v = [0.0; STATE_DIM];
        v[0] = queue_occupancy;
        v[1..6].copy_from_slice(&residual);
        v[6] = wifi_idle;
        Self(v)
    }

    pub fn queue_occupancy(&self) -> f64 {
        self.0[0]
    }

    pub fn residual(&self, a: Action) -> f64 {
        self.0[1 + a.index()]
    }

    pub fn wifi_idle(&self) -> f64 {
        self.0[6]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_normalized(&self) -> bool {
        self.0.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hold {
    pub action: Action,
    pub bandwidth_hz: f64,
    pub slots_remaining: u32,
}

/// Per-option bandwidth accounting; `available + held == nominal` always.
#[derive(Debug, Clone, PartialEq)]
pub struct BandResources {
    nominal: [f64; NUM_ACTIONS],
    available: [f64; NUM_ACTIONS],
    in_flight: Vec<Hold>,
}

impl BandResources {
    pub fn new(nominal: [f64; NUM_ACTIONS]) -> Self {
        Self { nominal, available: nominal, in_flight: Vec::new() }
    }

    pub fn nominal(&self, a: Action) -> f64 {
        self.nominal[a.index()]
    }

    pub fn available(&self, a: Action) -> f64 {
        self.available[a.index()]
    }

    pub fn held(&self, a: Action) -> f64 {
        self.in_flight.iter().filter(|h| h.action == a).map(|h| h.bandwidth_hz).sum()
    }

    pub fn in_flight(&self) -> &[Hold] {
        &self.in_flight
    }

    pub fn residual_ratio(&self, a: Action) -> f64 {
        (self.available[a.index()] / self.nominal[a.index()]).clamp(0.0, 1.0)
    }

    /// Reserves `bandwidth_hz` on `a` for `slots` slots; false if it does not fit.
    pub fn try_hold(&mut self, a: Action, bandwidth_hz: f64, slots: u32) -> bool {
        let i = a.index();
        // Tolerate rounding left over from earlier releases.
        if bandwidth_hz > self.available[i] * (1.0 + 1e-12) || slots == 0 {
            return false;
        }
        self.available[i] = (self.available[i] - bandwidth_hz).max(0.0);
        self.in_flight.push(Hold { action: a, bandwidth_hz, slots_remaining: slots });
        true
    }

    /// Ends one slot: decrements every hold and releases finished ones.
    pub fn tick(&mut self) {
        let available = &mut self.available;
        let nominal = &self.nominal;
        self.in_flight.retain_mut(|h| {
            h.slots_remaining -= 1;
            if h.slots_remaining == 0 {
                let i = h.action.index();
                available[i] = (available[i] + h.bandwidth_hz).min(nominal[i]);
                false
            } else {
                true
            }
        });
        for a in Action::ALL {
            if !self.in_flight.iter().any(|h| h.action == a) {
                self.available[a.index()] = self.nominal[a.index()];
            }
        }
    }

    pub fn release_all(&mut self) {
        self.in_flight.clear();
        self.available = self.nominal;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    /// Channel realizations drawn at reset and kept for the whole episode.
    StaticPerEpisode,
    /// A fresh realization for every dispatched packet.
    DynamicPerPacket,
}

/// How long a dispatched packet holds its band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ServiceModel {
    /// `ceil(size / rate / slot)` slots.
    Physical,
    /// Geometric holding time with the given mean (queueing validation only).
    Exponential { mean_slots: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WifiObservation {
    /// Sliding-window estimate from carrier sensing.
    Estimate,
    /// The chain's true stationary idle probability.
    Stationary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WifiConfig {
    pub p_busy_to_idle: f64,
    pub p_idle_to_busy: f64,
    pub estimator_window: usize,
    pub observation: WifiObservation,
}

impl Default for WifiConfig {
    fn default() -> Self {
        Self {
            p_busy_to_idle: 0.1,
            p_idle_to_busy: 0.1,
            estimator_window: 100,
            observation: WifiObservation::Estimate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Licensed capacity in bits/s at the SNR targets, split over the four licensed options.
    pub licensed_budget_bps: f64,
    /// Fraction of the licensed budget given to CC28, CC26, SLL28, SLL26.
    pub licensed_shares: [f64; 4],
    pub unlicensed_bw_hz: f64,
    pub channel_mode: ChannelMode,
    /// Mean SNR per option, in action order.
    pub snr_targets_db: [f64; NUM_ACTIONS],
    pub cc_distance_m: f64,
    pub sl_distance_m: f64,
    pub gnb_height_m: f64,
    pub sl_tx_height_m: f64,
    pub ue_height_m: f64,
    pub k_factor: f64,
    pub nlos_power_scale: [f64; NUM_ACTIONS],
    /// Expected packet arrivals per slot.
    pub arrival_rate: f64,
    pub queue_capacity: usize,
    pub episode_length: u64,
    pub slot_seconds: f64,
    /// Fraction of an option's nominal bandwidth one dispatch holds.
    pub dispatch_share: f64,
    pub wifi: WifiConfig,
    pub service: ServiceModel,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            licensed_budget_bps: 500e6,
            licensed_shares: [0.25; 4],
            unlicensed_bw_hz: 100e6,
            channel_mode: ChannelMode::DynamicPerPacket,
            snr_targets_db: [40.0, 40.0, 13.0, 13.0, 0.0],
            cc_distance_m: 100.0,
            sl_distance_m: 5.0,
            gnb_height_m: 10.0,
            sl_tx_height_m: 2.0,
            ue_height_m: 1.5,
            k_factor: 10.0,
            nlos_power_scale: [1.0; NUM_ACTIONS],
            arrival_rate: 0.03,
            queue_capacity: 20,
            episode_length: 1000,
            slot_seconds: 1e-3,
            dispatch_share: 1.0,
            wifi: WifiConfig::default(),
            service: ServiceModel::Physical,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::Config(msg));
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.licensed_budget_bps) {
            return bad(format!("licensed_budget_bps must be > 0, got {}", self.licensed_budget_bps));
        }
        if !pos(self.unlicensed_bw_hz) {
            return bad(format!("unlicensed_bw_hz must be > 0, got {}", self.unlicensed_bw_hz));
        }
        if self.licensed_shares.iter().any(|s| !pos(*s)) {
            return bad("licensed_shares must all be > 0".into());
        }
        if self.snr_targets_db.iter().any(|s| !s.is_finite()) {
            return bad("snr_targets_db must be finite".into());
        }
        if self.episode_length == 0 {
            return bad("episode_length must be >= 1".into());
        }
        if self.queue_capacity == 0 {
            return bad("queue_capacity must be >= 1".into());
        }
        if !pos(self.slot_seconds) {
            return bad("slot_seconds must be > 0".into());
        }
        if !(self.dispatch_share > 0.0 && self.dispatch_share <= 1.0) {
            return bad(format!("dispatch_share must lie in (0, 1], got {}", self.dispatch_share));
        }
        if !self.arrival_rate.is_finite() || self.arrival_rate < 0.0 {
            return bad(format!("arrival_rate must be >= 0, got {}", self.arrival_rate));
        }
        if self.k_factor.is_nan() || self.k_factor < 0.0 {
            return bad(format!("k_factor must be >= 0, got {}", self.k_factor));
        }
        if self.nlos_power_scale.iter().any(|s| !pos(*s)) {
            return bad("nlos_power_scale must all be > 0".into());
        }
        if let ServiceModel::Exponential { mean_slots } = self.service {
            if !(mean_slots >= 1.0) || !mean_slots.is_finite() {
                return bad(format!("exponential service needs mean_slots >= 1, got {mean_slots}"));
            }
        }
        WifiActivityModel::new(self.wifi.p_busy_to_idle, self.wifi.p_idle_to_busy, WifiState::Idle)?;
        IdleEstimator::new(self.wifi.estimator_window)?;
        for a in Action::ALL {
            self.geometry(a)?;
        }
        Ok(())
    }

    pub fn geometry(&self, a: Action) -> Result<LinkGeometry<f64>, EnvError> {
        let (d, h_t) = if a.is_cellular() {
            (self.cc_distance_m, self.gnb_height_m)
        } else {
            (self.sl_distance_m, self.sl_tx_height_m)
        };
        Ok(LinkGeometry::new(d, h_t, self.ue_height_m, a.carrier_ghz())?)
    }

    /// Nominal bandwidth per option: each licensed option gets its share of the
    /// licensed budget converted to Hz at its SNR target.
    pub fn nominal_bandwidths(&self) -> [f64; NUM_ACTIONS] {
        let mut bw = [0.0; NUM_ACTIONS];
        for a in Action::ALL {
            bw[a.index()] = if a.is_licensed() {
                let snr = 10f64.powf(self.snr_targets_db[a.index()] / 10.0);
                self.licensed_shares[a.index()] * self.licensed_budget_bps / (1.0 + snr).log2()
            } else {
                self.unlicensed_bw_hz
            };
        }
        bw
    }

    /// Divides raw rates into `[0, 1]` training rewards.
    pub fn reward_normalizer(&self) -> f64 {
        let max_bw = self.nominal_bandwidths().into_iter().fold(0.0, f64::max);
        let max_snr_db = self.snr_targets_db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max_bw * (1.0 + 10f64.powf(max_snr_db / 10.0)).log2()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispatchOutcome {
    /// Nothing queued.
    Idle,
    Sent,
    BlockedNoBandwidth,
    BlockedLbt,
}

impl DispatchOutcome {
    pub fn is_attempt(self) -> bool {
        self != DispatchOutcome::Idle
    }

    pub fn is_blocked(self) -> bool {
        matches!(self, DispatchOutcome::BlockedNoBandwidth | DispatchOutcome::BlockedLbt)
    }
}

/// What happened in one decision epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub slot: u64,
    pub action: Action,
    pub arrivals: u32,
    /// Arrivals dropped because the buffer was full.
    pub overflowed: u32,
    pub outcome: DispatchOutcome,
    pub rate_bps: f64,
    pub delivered_bits: u64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: StateVector,
    pub action: Action,
    pub reward: f64,
    pub next_state: StateVector,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub state: StateVector,
    pub done: bool,
    pub report: EpochReport,
}

/// Reset/step interface shared by the scheduling MDP and test environments.
pub trait Environment {
    fn reset(&mut self) -> StateVector;
    fn observe(&self) -> StateVector;
    fn step(&mut self, action: Action) -> Result<StepResult, EnvError>;
    fn is_done(&self) -> bool;
    fn slot_seconds(&self) -> f64;
}

// Independent RNG streams keep traffic and Wi-Fi identical across policies.
const STREAM_TRAFFIC: u64 = 1;
const STREAM_WIFI: u64 = 2;
const STREAM_CHANNEL: u64 = 3;
const STREAM_SERVICE: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub struct SidelinkEnv {
    cfg: EnvConfig,
    geometries: [LinkGeometry<f64>; NUM_ACTIONS],
    budgets: [LinkBudget<f64>; NUM_ACTIONS],
    hold_bw: [f64; NUM_ACTIONS],
    normalizer: f64,
    queue: PacketQueue,
    source: ArrivalProcess,
    resources: BandResources,
    wifi: WifiActivityModel,
    estimator: IdleEstimator,
    channels: [ChannelRealization<f64>; NUM_ACTIONS],
    traffic_rng: ChaCha8Rng,
    wifi_rng: ChaCha8Rng,
    channel_rng: ChaCha8Rng,
    service_rng: ChaCha8Rng,
    slot: u64,
    episode_slot: u64,
    done: bool,
}

impl SidelinkEnv {
    /// Builds the environment and performs the first reset.
    pub fn new(cfg: EnvConfig) -> Result<Self, EnvError> {
        cfg.validate()?;
        let nominal = cfg.nominal_bandwidths();
        let mut geometries = [LinkGeometry::new(1.0, 2.0, 1.0, 1.0)?; NUM_ACTIONS];
        let mut budgets = [LinkBudget::new(1.0, 1.0, 1.0, 0.0)?; NUM_ACTIONS];
        let mut hold_bw = [0.0; NUM_ACTIONS];
        for a in Action::ALL {
            let i = a.index();
            geometries[i] = cfg.geometry(a)?;
            hold_bw[i] = nominal[i] * cfg.dispatch_share;
            budgets[i] = calibrated_budget(cfg.snr_targets_db[i], hold_bw[i], pathloss_los(&geometries[i]))?;
        }
        let mut env = Self {
            normalizer: cfg.reward_normalizer(),
            queue: PacketQueue::new(cfg.queue_capacity),
            source: ArrivalProcess::new(cfg.arrival_rate)?,
            resources: BandResources::new(nominal),
            wifi: WifiActivityModel::new(cfg.wifi.p_busy_to_idle, cfg.wifi.p_idle_to_busy, WifiState::Idle)?,
            estimator: IdleEstimator::new(cfg.wifi.estimator_window)?,
            channels: [ChannelRealization::unit(); NUM_ACTIONS],
            traffic_rng: stream(cfg.seed, STREAM_TRAFFIC),
            wifi_rng: stream(cfg.seed, STREAM_WIFI),
            channel_rng: stream(cfg.seed, STREAM_CHANNEL),
            service_rng: stream(cfg.seed, STREAM_SERVICE),
            geometries,
            budgets,
            hold_bw,
            slot: 0,
            episode_slot: 0,
            done: false,
            cfg,
        };
        env.reset();
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn queue(&self) -> &PacketQueue {
        &self.queue
    }

    pub fn resources(&self) -> &BandResources {
        &self.resources
    }

    pub fn wifi_state(&self) -> WifiState {
        self.wifi.current()
    }

    pub fn channels(&self) -> &[ChannelRealization<f64>; NUM_ACTIONS] {
        &self.channels
    }

    pub fn budget(&self, a: Action) -> &LinkBudget<f64> {
        &self.budgets[a.index()]
    }

    pub fn reward_normalizer(&self) -> f64 {
        self.normalizer
    }

    fn draw_channel(&mut self, a: Action) -> ChannelRealization<f64> {
        let i = a.index();
        sample_rician(&self.geometries[i], self.cfg.k_factor, self.cfg.nlos_power_scale[i], &mut self.channel_rng)
            .expect("channel parameters validated at construction")
    }

    fn hold_slots(&mut self, rate_bps: f64, size_bits: u64) -> u32 {
        match self.cfg.service {
            ServiceModel::Physical => {
                let slots = size_bits as f64 / rate_bps / self.cfg.slot_seconds;
                (slots - 1e-9).ceil().clamp(1.0, u32::MAX as f64) as u32
            }
            ServiceModel::Exponential { mean_slots } => {
                // Geometric on {1, 2, ...} with success probability 1/mean.
                let q = 1.0 / mean_slots;
                if q >= 1.0 {
                    return 1;
                }
                let u: f64 = 1.0 - self.service_rng.random::<f64>();
                (u.ln() / (1.0 - q).ln()).ceil().clamp(1.0, u32::MAX as f64) as u32
            }
        }
    }

    fn dispatch(&mut self, action: Action) -> (DispatchOutcome, f64, u64) {
        let i = action.index();
        if self.queue.is_empty() {
            return (DispatchOutcome::Idle, 0.0, 0);
        }
        if self.resources.available(action) < self.hold_bw[i] * (1.0 - 1e-12) {
            return (DispatchOutcome::BlockedNoBandwidth, 0.0, 0);
        }
        if action == Action::Slu5G && lbt_gate(self.wifi.current()) == LbtDecision::Denied {
            return (DispatchOutcome::BlockedLbt, 0.0, 0);
        }
        if self.cfg.channel_mode == ChannelMode::DynamicPerPacket {
            self.channels[i] = self.draw_channel(action);
        }
        let rate = link_rate(&self.budgets[i], &self.channels[i]);
        if !(rate > 0.0) {
            // A deep fade to exactly zero gain cannot carry the packet.
            return (DispatchOutcome::BlockedNoBandwidth, 0.0, 0);
        }
        let size = self.queue.head_of_line().map(|p| p.size_bits).unwrap_or(0);
        let slots = self.hold_slots(rate, size);
        let held = self.resources.try_hold(action, self.hold_bw[i], slots);
        debug_assert!(held);
        self.queue.pop();
        (DispatchOutcome::Sent, rate, size)
    }
}

impl Environment for SidelinkEnv {
    fn reset(&mut self) -> StateVector {
        self.queue = PacketQueue::new(self.cfg.queue_capacity);
        self.resources.release_all();
        self.wifi.resample_stationary(&mut self.wifi_rng);
        self.estimator.clear();
        // Warm the estimator with one window of sensing so the first
        // observation is a proper estimate.
        for _ in 0..self.estimator.window() {
            let s = self.wifi.step(&mut self.wifi_rng);
            self.estimator.update(s);
        }
        for a in Action::ALL {
            self.channels[a.index()] = self.draw_channel(a);
        }
        self.episode_slot = 0;
        self.done = false;
        self.observe()
    }

    fn observe(&self) -> StateVector {
        let occupancy = self.queue.occupancy_ratio().unwrap_or(0.0);
        let mut residual = [0.0; NUM_ACTIONS];
        for a in Action::ALL {
            residual[a.index()] = self.resources.residual_ratio(a);
        }
        let idle = match self.cfg.wifi.observation {
            WifiObservation::Estimate => self.estimator.estimate(),
            WifiObservation::Stationary => self.wifi.stationary_idle(),
        }
        .unwrap_or(if self.wifi.current() == WifiState::Idle { 1.0 } else { 0.0 });
        StateVector::new(occupancy, residual, idle)
    }

    fn step(&mut self, action: Action) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        let arrivals = self.source.generate(self.slot, &mut self.traffic_rng);
        let arrived = arrivals.len() as u32;
        let overflowed = arrivals.into_iter().filter(|p| !self.queue.enqueue(p.clone())).count() as u32;

        let (outcome, rate_bps, delivered_bits) = self.dispatch(action);
        let reward = if outcome == DispatchOutcome::Sent {
            (rate_bps / self.normalizer).min(1.0)
        } else {
            0.0
        };

        let sensed = self.wifi.step(&mut self.wifi_rng);
        self.estimator.update(sensed);
        self.resources.tick();

        let report = EpochReport {
            slot: self.slot,
            action,
            arrivals: arrived,
            overflowed,
            outcome,
            rate_bps,
            delivered_bits,
            reward,
        };
        self.slot += 1;
        self.episode_slot += 1;
        self.done = self.episode_slot >= self.cfg.episode_length;
        Ok(StepResult { reward, state: self.observe(), done: self.done, report })
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn slot_seconds(&self) -> f64 {
        self.cfg.slot_seconds
    }
}

/// One-state, five-armed bandit with fixed rewards; every step ends an episode.
#[derive(Debug, Clone)]
pub struct BanditEnv {
    rewards: [f64; NUM_ACTIONS],
    state: StateVector,
    slot: u64,
    done: bool,
}

impl BanditEnv {
    pub fn new(rewards: [f64; NUM_ACTIONS]) -> Result<Self, EnvError> {
        if rewards.iter().any(|r| !r.is_finite() || *r <= 0.0) {
            return Err(EnvError::Config("bandit rewards must be finite and > 0".into()));
        }
        Ok(Self { rewards, state: StateVector::new(0.5, [1.0; NUM_ACTIONS], 0.5), slot: 0, done: false })
    }

    pub fn best_action(&self) -> Action {
        let mut best = Action::Cc28G;
        for a in Action::ALL {
            if self.rewards[a.index()] > self.rewards[best.index()] {
                best = a;
            }
        }
        best
    }
}

impl Environment for BanditEnv {
    fn reset(&mut self) -> StateVector {
        self.done = false;
        self.state
    }

    fn observe(&self) -> StateVector {
        self.state
    }

    fn step(&mut self, action: Action) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        let reward = self.rewards[action.index()];
        let report = EpochReport {
            slot: self.slot,
            action,
            arrivals: 0,
            overflowed: 0,
            outcome: DispatchOutcome::Sent,
            rate_bps: reward,
            delivered_bits: 0,
            reward,
        };
        self.slot += 1;
        self.done = true;
        Ok(StepResult { reward, state: self.state, done: true, report })
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn slot_seconds(&self) -> f64 {
        1.0
    }
}

/// Blocking counts over a horizon. Every arrival is one presentation to the
/// buffer and every dispatch attempt is one presentation to a band.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockingTally {
    pub arrivals: u64,
    pub attempts: u64,
    pub overflow: u64,
    pub no_bandwidth: u64,
    pub lbt: u64,
    pub sent: u64,
    pub delivered_bits: u64,
    pub epochs: u64,
}

impl BlockingTally {
    pub fn record(&mut self, r: &EpochReport) {
        self.epochs += 1;
        self.arrivals += r.arrivals as u64;
        self.overflow += r.overflowed as u64;
        self.delivered_bits += r.delivered_bits;
        match r.outcome {
            DispatchOutcome::Idle => {}
            DispatchOutcome::Sent => self.sent += 1,
            DispatchOutcome::BlockedNoBandwidth => self.no_bandwidth += 1,
            DispatchOutcome::BlockedLbt => self.lbt += 1,
        }
        if r.outcome.is_attempt() {
            self.attempts += 1;
        }
    }

    pub fn from_reports<'a>(reports: impl IntoIterator<Item = &'a EpochReport>) -> Self {
        let mut t = Self::default();
        for r in reports {
            t.record(r);
        }
        t
    }

    pub fn presented(&self) -> u64 {
        self.arrivals + self.attempts
    }

    pub fn blocked(&self) -> u64 {
        self.overflow + self.no_bandwidth + self.lbt
    }

    /// `None` when no packet arrived.
    pub fn blocking_probability(&self) -> Option<f64> {
        (self.arrivals > 0).then(|| self.blocked() as f64 / self.presented() as f64)
    }

    /// Per-cause fractions of presentations: (overflow, no bandwidth, LBT).
    pub fn breakdown(&self) -> Option<(f64, f64, f64)> {
        (self.arrivals > 0).then(|| {
            let n = self.presented() as f64;
            (self.overflow as f64 / n, self.no_bandwidth as f64 / n, self.lbt as f64 / n)
        })
    }

    pub fn mean_throughput(&self, slot_seconds: f64) -> f64 {
        if self.epochs == 0 {
            return 0.0;
        }
        self.delivered_bits as f64 / (self.epochs as f64 * slot_seconds)
    }
}

/// Fraction of presentations (arrivals plus dispatch attempts) that were blocked.
pub fn blocking_probability(reports: &[EpochReport]) -> Option<f64> {
    BlockingTally::from_reports(reports).blocking_probability()
}

/// Delivered bits per second of simulated time.
pub fn mean_throughput(reports: &[EpochReport], slot_seconds: f64) -> f64 {
    BlockingTally::from_reports(reports).mean_throughput(slot_seconds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(arrivals: u32, overflowed: u32, outcome: DispatchOutcome, bits: u64) -> EpochReport {
        EpochReport {
            slot: 0,
            action: Action::Cc28G,
            arrivals,
            overflowed,
            outcome,
            rate_bps: if outcome == DispatchOutcome::Sent { 1e8 } else { 0.0 },
            delivered_bits: bits,
            reward: 0.0,
        }
    }

    #[test]
    fn action_indices_are_fixed() {
        for (i, a) in Action::ALL.iter().enumerate() {
            assert_eq!(a.index(), i);
            assert_eq!(Action::from_index(i), Some(*a));
        }
        assert_eq!(Action::from_index(5), None);
        assert_eq!(Action::Slu5G.name(), "SLU_5G");
    }

    #[test]
    fn partial_hold_residual() {
        let mut r = BandResources::new([100.0, 100.0, 50.0, 50.0, 10.0]);
        assert!(r.try_hold(Action::Cc28G, 50.0, 3));
        assert_eq!(r.residual_ratio(Action::Cc28G), 0.5);
        let s = StateVector::new(0.0, Action::ALL.map(|a| r.residual_ratio(a)), 0.5);
        assert_eq!(s.residual(Action::Cc28G), 0.5);
        assert!(!r.try_hold(Action::Cc28G, 60.0, 3));
        for _ in 0..3 {
            assert!((r.available(Action::Cc28G) + r.held(Action::Cc28G) - 100.0).abs() < 1e-9);
            r.tick();
        }
        assert_eq!(r.residual_ratio(Action::Cc28G), 1.0);
        assert!(r.in_flight().is_empty());
    }

    #[test]
    fn blocking_metric_examples() {
        let none = vec![report(1, 0, DispatchOutcome::Sent, 4_000_000); 10];
        assert_eq!(blocking_probability(&none), Some(0.0));
        let all = vec![report(1, 1, DispatchOutcome::BlockedLbt, 0); 10];
        assert_eq!(blocking_probability(&all), Some(1.0));
        let empty = vec![report(0, 0, DispatchOutcome::Idle, 0); 10];
        assert_eq!(blocking_probability(&empty), None);
        // 14 overflowed of 1000 arrivals, no dispatch attempts.
        let mut mixed: Vec<_> = (0..1000).map(|i| report(1, u32::from(i < 14), DispatchOutcome::Idle, 0)).collect();
        assert!((blocking_probability(&mixed).unwrap() - 0.014).abs() < 1e-15);
        mixed.push(report(0, 0, DispatchOutcome::BlockedNoBandwidth, 0));
        let t = BlockingTally::from_reports(&mixed);
        assert_eq!(t.presented(), 1001);
        assert_eq!(t.blocked(), 15);
    }

    #[test]
    fn throughput_examples() {
        let idle = vec![report(0, 0, DispatchOutcome::Idle, 0); 100];
        assert_eq!(mean_throughput(&idle, 1e-3), 0.0);
        let mut one = idle.clone();
        one[17] = report(1, 0, DispatchOutcome::Sent, 4_000_000);
        assert!((mean_throughput(&one, 1e-3) - 4e7).abs() < 1e-6);
    }

    #[test]
    fn nominal_bandwidths_follow_budget_split() {
        let cfg = EnvConfig::default();
        let bw = cfg.nominal_bandwidths();
        let cc_rate = bw[0] * (1.0 + 1e4f64).log2();
        assert!((cc_rate - 125e6).abs() < 1e-3);
        assert_eq!(bw[4], 100e6);
    }

    #[test]
    fn config_validation() {
        let mut cfg = EnvConfig::default();
        cfg.episode_length = 0;
        assert!(matches!(SidelinkEnv::new(cfg), Err(EnvError::Config(_))));
        let mut cfg = EnvConfig::default();
        cfg.licensed_budget_bps = 0.0;
        assert!(SidelinkEnv::new(cfg).is_err());
        let mut cfg = EnvConfig::default();
        cfg.wifi.p_idle_to_busy = 2.0;
        assert!(SidelinkEnv::new(cfg).is_err());
    }

    #[test]
    fn bandit_rewards() {
        let mut env = BanditEnv::new([0.1, 0.3, 0.9, 0.5, 0.7]).unwrap();
        assert_eq!(env.best_action(), Action::Sll28G);
        env.reset();
        let r = env.step(Action::Sll28G).unwrap();
        assert_eq!(r.reward, 0.9);
        assert!(r.done);
        assert!(env.step(Action::Cc28G).is_err());
    }
    fn small_env(mut f: impl FnMut(&mut EnvConfig)) -> SidelinkEnv {
        let mut cfg = EnvConfig { episode_length: 200, ..EnvConfig::default() };
        f(&mut cfg);
        SidelinkEnv::new(cfg).unwrap()
    }

    #[test]
    fn reset_state_is_empty_and_free() {
        let env = small_env(|_| {});
        let s = env.observe();
        assert_eq!(s.queue_occupancy(), 0.0);
        for a in Action::ALL {
            assert_eq!(s.residual(a), 1.0);
        }
        assert!((0.0..=1.0).contains(&s.wifi_idle()));
        assert!(s.0.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn empty_queue_is_idle() {
        let mut env = small_env(|c| c.arrival_rate = 0.0);
        let r = env.step(Action::Cc28G).unwrap();
        assert_eq!(r.report.outcome, DispatchOutcome::Idle);
        assert_eq!(r.reward, 0.0);
        assert_eq!(r.state.residual(Action::Cc28G), 1.0);
    }

    #[test]
    fn busy_wifi_blocks_slu() {
        let mut env = small_env(|c| {
            c.arrival_rate = 5.0;
            c.wifi.p_busy_to_idle = 0.0;
            c.wifi.p_idle_to_busy = 1.0;
        });
        assert_eq!(env.wifi_state(), WifiState::Busy);
        let r = env.step(Action::Slu5G).unwrap();
        assert_eq!(r.report.outcome, DispatchOutcome::BlockedLbt);
        assert_eq!(r.reward, 0.0);
        assert_eq!(r.state.residual(Action::Slu5G), 1.0);
        assert_eq!(r.state.wifi_idle(), 0.0);
    }

    #[test]
    fn unit_snr_on_unlicensed_band_gives_bandwidth_rate() {
        // 0 dB target, 100 MHz, line-of-sight only: rate = B log2(2) = 1e8.
        let mut env = small_env(|c| {
            c.arrival_rate = 5.0;
            c.k_factor = f64::INFINITY;
            c.wifi.p_busy_to_idle = 1.0;
            c.wifi.p_idle_to_busy = 0.0;
        });
        let r = env.step(Action::Slu5G).unwrap();
        assert_eq!(r.report.outcome, DispatchOutcome::Sent);
        assert!((r.report.rate_bps - 1e8).abs() < 1e-3 * 1e8 * 1e-6);
        // 4 Mbit at 100 Mbps takes 40 one-millisecond slots.
        let mut held = 0;
        while env.resources().residual_ratio(Action::Slu5G) < 1.0 {
            held += 1;
            env.step(Action::Cc28G).unwrap();
        }
        assert_eq!(held, 39);
    }

    #[test]
    fn second_dispatch_on_held_band_is_blocked() {
        let mut env = small_env(|c| c.arrival_rate = 5.0);
        let first = env.step(Action::Sll28G).unwrap();
        assert_eq!(first.report.outcome, DispatchOutcome::Sent);
        assert_eq!(first.state.residual(Action::Sll28G), 0.0);
        let second = env.step(Action::Sll28G).unwrap();
        assert_eq!(second.report.outcome, DispatchOutcome::BlockedNoBandwidth);
        assert_eq!(second.reward, 0.0);
    }

    #[test]
    fn rewards_match_outcomes_and_stay_normalized() {
        let mut env = small_env(|c| {
            c.arrival_rate = 0.3;
            c.episode_length = 3000;
        });
        let mut pick = ChaCha8Rng::seed_from_u64(9);
        let nominal = env.config().nominal_bandwidths();
        while !env.is_done() {
            let a = Action::from_index(pick.random_range(0..NUM_ACTIONS)).unwrap();
            let r = env.step(a).unwrap();
            assert!((0.0..=1.0).contains(&r.reward));
            assert_eq!(r.reward > 0.0, r.report.outcome == DispatchOutcome::Sent);
            assert!(r.report.overflowed <= r.report.arrivals);
            for b in Action::ALL {
                let i = b.index();
                let used = env.resources().available(b) + env.resources().held(b);
                assert!((used - nominal[i]).abs() <= 1e-9 * nominal[i]);
            }
            assert!(r.state.0.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!(matches!(env.step(Action::Cc28G), Err(EnvError::EpisodeFinished)));
    }

    fn trace(seed: u64, mode: ChannelMode) -> Vec<EpochReport> {
        let mut env = small_env(|c| {
            c.seed = seed;
            c.channel_mode = mode;
            c.arrival_rate = 0.2;
        });
        let mut out = Vec::new();
        let mut k = 0;
        while !env.is_done() {
            out.push(env.step(Action::ALL[k % NUM_ACTIONS]).unwrap().report);
            k += 1;
        }
        out
    }

    #[test]
    fn same_seed_same_trace() {
        assert_eq!(trace(4, ChannelMode::DynamicPerPacket), trace(4, ChannelMode::DynamicPerPacket));
        assert_ne!(trace(4, ChannelMode::DynamicPerPacket), trace(5, ChannelMode::DynamicPerPacket));
    }

    #[test]
    fn traffic_is_common_across_channel_modes() {
        let a = trace(11, ChannelMode::DynamicPerPacket);
        let b = trace(11, ChannelMode::StaticPerEpisode);
        let arrivals = |t: &[EpochReport]| t.iter().map(|r| r.arrivals).collect::<Vec<_>>();
        assert_eq!(arrivals(&a), arrivals(&b));
    }

    #[test]
    fn static_mode_keeps_rate_within_episode() {
        let mut env = small_env(|c| {
            c.channel_mode = ChannelMode::StaticPerEpisode;
            c.arrival_rate = 5.0;
            c.episode_length = 2000;
        });
        let mut rates = Vec::new();
        while !env.is_done() {
            let r = env.step(Action::Cc26G).unwrap();
            if r.report.outcome == DispatchOutcome::Sent {
                rates.push(r.report.rate_bps);
            }
        }
        assert!(rates.len() > 1);
        assert!(rates.iter().all(|r| *r == rates[0]));
        env.reset();
        let r = env.step(Action::Cc26G).unwrap();
        assert_ne!(r.report.rate_bps, rates[0]);
    }

    #[test]
    fn exponential_service_reproduces_mm1k_overflow() {
        // One band, rho = 0.8, buffer 2 plus one in service: K = 3.
        let mut env = SidelinkEnv::new(EnvConfig {
            arrival_rate: 0.008,
            queue_capacity: 2,
            episode_length: 2_000_000,
            service: ServiceModel::Exponential { mean_slots: 100.0 },
            seed: 3,
            ..EnvConfig::default()
        })
        .unwrap();
        let mut tally = BlockingTally::default();
        while !env.is_done() {
            tally.record(&env.step(Action::Cc28G).unwrap().report);
        }
        let sim = tally.overflow as f64 / tally.arrivals as f64;
        let rho: f64 = 0.8;
        let exact = rho.powi(3) * (1.0 - rho) / (1.0 - rho.powi(4));
        assert!((sim - exact).abs() < 0.1 * exact, "sim {sim} exact {exact}");
    }
}
