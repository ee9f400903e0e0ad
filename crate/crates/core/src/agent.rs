//! Double DQN: epsilon-greedy acting, uniform replay, decoupled
//! selection/evaluation targets, and periodic hard target sync.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::Policy;
use crate::env::{Action, StateVector, Transition, NUM_ACTIONS, STATE_DIM};
use crate::nn::{Adam, Gradients, LrSchedule, Mode, NnError};
use crate::QNetwork;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("replay buffer holds {have} transitions, need {need}")]
    Underfilled { have: usize, need: usize },
    #[error("invalid hyperparameters: {0}")]
    Hyperparams(String),
    #[error("malformed checkpoint metadata: {0}")]
    Metadata(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EpsilonSchedule {
    /// `max(min, start * exp(-k / decay_steps))`.
    Exponential { start: f64, min: f64, decay_steps: f64 },
    /// `max(min, start - (start - min) * k / decay_steps)`.
    Linear { start: f64, min: f64, decay_steps: f64 },
    /// `max(min, start - per_step * k)`.
    LinearDecrement { start: f64, min: f64, per_step: f64 },
}

impl EpsilonSchedule {
    pub fn epsilon_at(&self, k: u64) -> f64 {
        let k = k as f64;
        match *self {
            EpsilonSchedule::Exponential { start, min, decay_steps } => min.max(start * (-k / decay_steps).exp()),
            EpsilonSchedule::Linear { start, min, decay_steps } => {
                if k >= decay_steps {
                    return min;
                }
                min.max(start - (start - min) * k / decay_steps)
            }
            EpsilonSchedule::LinearDecrement { start, min, per_step } => min.max(start - per_step * k),
        }
    }

    fn validate(&self) -> Result<(), String> {
        let (start, min, rate) = match *self {
            EpsilonSchedule::Exponential { start, min, decay_steps }
            | EpsilonSchedule::Linear { start, min, decay_steps } => (start, min, decay_steps),
            EpsilonSchedule::LinearDecrement { start, min, per_step } => (start, min, per_step),
        };
        if !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&min) || min > start {
            return Err(format!("epsilon bounds must satisfy 0 <= min <= start <= 1 (start={start}, min={min})"));
        }
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(format!("epsilon decay parameter must be > 0, got {rate}"));
        }
        Ok(())
    }
}

impl fmt::Display for EpsilonSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EpsilonSchedule::Exponential { start, min, decay_steps } => {
                write!(f, "exponential({start},{min},{decay_steps})")
            }
            EpsilonSchedule::Linear { start, min, decay_steps } => write!(f, "linear({start},{min},{decay_steps})"),
            EpsilonSchedule::LinearDecrement { start, min, per_step } => {
                write!(f, "linear_decrement({start},{min},{per_step})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub gamma: f64,
    pub batch_size: usize,
    /// Hard target sync every this many decision epochs.
    pub target_sync_period: u64,
    pub epsilon: EpsilonSchedule,
    /// Minimum replay fill before training starts.
    pub train_start: usize,
    pub replay_capacity: usize,
    pub hidden_sizes: Vec<usize>,
    pub dropout: f64,
    pub learning_rate: LrSchedule,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            batch_size: 64,
            target_sync_period: 1000,
            epsilon: EpsilonSchedule::Linear { start: 1.0, min: 0.05, decay_steps: 30_000.0 },
            train_start: 640,
            replay_capacity: 1_000_000,
            hidden_sizes: vec![128, 64],
            dropout: 0.0,
            learning_rate: LrSchedule { milestones: vec![(0, 1e-3), (30_000, 1e-4), (70_000, 1e-5)] },
        }
    }
}

impl Hyperparams {
    /// Architecture and optimizer settings of the large experiment configuration.
    pub fn paper_scale() -> Self {
        Self {
            hidden_sizes: vec![1024, 512],
            dropout: 0.3,
            epsilon: EpsilonSchedule::LinearDecrement { start: 1.0, min: 0.05, per_step: 5e-7 },
            learning_rate: LrSchedule { milestones: vec![(0, 1e-7), (1_000_000, 1e-8), (2_000_000, 1e-9)] },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: String| Err(AgentError::Hyperparams(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.target_sync_period == 0 {
            return bad("target_sync_period must be >= 1".into());
        }
        if self.replay_capacity == 0 {
            return bad("replay_capacity must be >= 1".into());
        }
        if self.replay_capacity < self.batch_size.max(self.train_start) {
            return bad("replay_capacity must cover batch_size and train_start".into());
        }
        if self.learning_rate.milestones.is_empty() {
            return bad("learning_rate needs at least one milestone".into());
        }
        if !self.learning_rate.milestones.windows(2).all(|w| w[0].0 < w[1].0) {
            return bad("learning_rate milestones must be strictly increasing in step".into());
        }
        self.epsilon.validate().map_err(AgentError::Hyperparams)
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![STATE_DIM];
        sizes.extend(&self.hidden_sizes);
        sizes.push(NUM_ACTIONS);
        sizes
    }
}

/// Ring buffer of transitions; the oldest entry is overwritten when full.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, storage: Vec::with_capacity(capacity.min(1 << 16)), cursor: 0 }
    }

    pub fn push(&mut self, t: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.storage.len() < self.capacity { 0 } else { self.cursor };
        self.storage[split..].iter().chain(self.storage[..split].iter())
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<usize>, AgentError> {
        if self.storage.len() < batch_size || batch_size == 0 {
            return Err(AgentError::Underfilled { have: self.storage.len(), need: batch_size.max(1) });
        }
        Ok((0..batch_size).map(|_| rng.random_range(0..self.storage.len())).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&Transition>, AgentError> {
        Ok(self.sample_indices(batch_size, rng)?.into_iter().map(|i| &self.storage[i]).collect())
    }

    pub fn get(&self, index: usize) -> Option<&Transition> {
        self.storage.get(index)
    }
}

/// Argmax with ties resolved toward the lowest index.
pub fn greedy_index<T: PartialOrd>(q: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in q.iter().enumerate().skip(1) {
        if *v > q[best] {
            best = i;
        }
    }
    best
}

pub fn greedy_action(net: &QNetwork, s: &StateVector) -> Result<Action, AgentError> {
    let q = net.predict(s.as_slice())?;
    Ok(Action::from_index(greedy_index(&q)).expect("network has five outputs"))
}

/// Epsilon-greedy selection. One uniform draw decides exploration; a second
/// picks the random action.
pub fn select_action<R: Rng + ?Sized>(
    net: &QNetwork,
    s: &StateVector,
    epsilon: f64,
    rng: &mut R,
) -> Result<Action, AgentError> {
    let p: f64 = rng.random();
    if p < epsilon {
        let i = rng.random_range(0..NUM_ACTIONS);
        return Ok(Action::from_index(i).expect("index in range"));
    }
    greedy_action(net, s)
}

/// `r` for terminal transitions, else `r + gamma * Q_target(s', argmax_a Q_online(s', a))`.
pub fn ddqn_target(online: &QNetwork, target: &QNetwork, t: &Transition, gamma: f64) -> Result<f64, AgentError> {
    if t.terminal {
        return Ok(t.reward);
    }
    let next = t.next_state.as_slice();
    let chosen = greedy_index(&online.predict(next)?);
    let value = target.predict(next)?[chosen];
    Ok(t.reward + gamma * value)
}

/// One minibatch update of the online network; returns the mean squared Bellman error.
pub fn train_step<R: Rng + ?Sized>(
    online: &mut QNetwork,
    target: &QNetwork,
    opt: &mut Adam<f64>,
    buffer: &ReplayBuffer,
    hp: &Hyperparams,
    grads: &mut Gradients<f64>,
    rng: &mut R,
) -> Result<f64, AgentError> {
    let need = hp.train_start.max(hp.batch_size);
    if buffer.len() < need {
        return Err(AgentError::Underfilled { have: buffer.len(), need });
    }
    let batch = buffer.sample(hp.batch_size, rng)?;
    grads.fill_zero();
    let mut loss = 0.0;
    for t in &batch {
        let y = ddqn_target(online, target, t, hp.gamma)?;
        online.set_mode(Mode::Train);
        let trace = online.forward(t.state.as_slice(), rng);
        online.set_mode(Mode::Inference);
        loss += online.backward(&trace?, t.action.index(), y, grads)?;
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    opt.step(online, grads)?;
    Ok(loss / n)
}

/// Copies the online parameters into the target when `step % period == 0`.
pub fn maybe_sync(online: &QNetwork, target: &mut QNetwork, step: u64, period: u64) -> Result<bool, AgentError> {
    if period == 0 {
        return Err(AgentError::Hyperparams("target_sync_period must be >= 1".into()));
    }
    if step % period == 0 {
        target.copy_from(online)?;
        return Ok(true);
    }
    Ok(false)
}

/// Online/target pair, optimizer and replay memory driven one epoch at a time.
pub struct DdqnAgent {
    pub online: QNetwork,
    pub target: QNetwork,
    pub optimizer: Adam<f64>,
    pub replay: ReplayBuffer,
    pub hp: Hyperparams,
    grads: Gradients<f64>,
    steps: u64,
    seed: u64,
    rng: ChaCha8Rng,
}

impl DdqnAgent {
    pub fn new(hp: Hyperparams, seed: u64) -> Result<Self, AgentError> {
        hp.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let online = QNetwork::new(&hp.layer_sizes(), hp.dropout, &mut rng)?;
        let mut target = online.clone();
        target.set_mode(Mode::Inference);
        Ok(Self {
            optimizer: Adam::new(&online, hp.learning_rate.clone()),
            grads: Gradients::zeros_like(&online),
            replay: ReplayBuffer::new(hp.replay_capacity),
            online,
            target,
            hp,
            steps: 0,
            seed,
            rng,
        })
    }

    /// Decision epochs observed so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn epsilon(&self) -> f64 {
        self.hp.epsilon.epsilon_at(self.steps)
    }

    pub fn act(&mut self, s: &StateVector) -> Result<Action, AgentError> {
        let eps = self.epsilon();
        select_action(&self.online, s, eps, &mut self.rng)
    }

    /// Stores the transition, trains once the buffer is warm, and syncs the
    /// target on schedule. Returns the loss when a training step ran.
    pub fn observe(&mut self, t: Transition) -> Result<Option<f64>, AgentError> {
        self.replay.push(t);
        self.steps += 1;
        let loss = if self.replay.len() >= self.hp.train_start.max(self.hp.batch_size) {
            Some(train_step(
                &mut self.online,
                &self.target,
                &mut self.optimizer,
                &self.replay,
                &self.hp,
                &mut self.grads,
                &mut self.rng,
            )?)
        } else {
            None
        };
        maybe_sync(&self.online, &mut self.target, self.steps, self.hp.target_sync_period)?;
        Ok(loss)
    }

    pub fn metadata(&self) -> CheckpointMeta {
        CheckpointMeta {
            steps: self.steps,
            epsilon: self.epsilon(),
            epsilon_schedule: self.hp.epsilon.to_string(),
            optimizer_steps: self.optimizer.step_count(),
            learning_rate: self.optimizer.current_rate(),
            seed: self.seed,
            layer_sizes: self.online.layer_sizes().to_vec(),
        }
    }
}

/// Greedy policy over a frozen network.
pub struct GreedyPolicy {
    net: QNetwork,
}

impl GreedyPolicy {
    pub fn new(mut net: QNetwork) -> Self {
        net.set_mode(Mode::Inference);
        Self { net }
    }

    pub fn network(&self) -> &QNetwork {
        &self.net
    }
}

impl Policy for GreedyPolicy {
    fn act(&mut self, s: &StateVector) -> Action {
        greedy_action(&self.net, s).expect("observations are finite and 7-wide")
    }

    fn name(&self) -> &'static str {
        "ddqn"
    }
}

/// Sidecar record stored next to a network checkpoint as `key=value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub steps: u64,
    pub epsilon: f64,
    pub epsilon_schedule: String,
    pub optimizer_steps: u64,
    pub learning_rate: f64,
    pub seed: u64,
    pub layer_sizes: Vec<usize>,
}

pub const META_VERSION: u32 = 1;

impl CheckpointMeta {
    pub fn to_kv(&self) -> String {
        let sizes: Vec<String> = self.layer_sizes.iter().map(|s| s.to_string()).collect();
        format!(
            "format_version={META_VERSION}\nsteps={}\nepsilon={:e}\nepsilon_schedule={}\noptimizer_steps={}\nlearning_rate={:e}\nseed={}\nlayer_sizes={}\n",
            self.steps,
            self.epsilon,
            self.epsilon_schedule,
            self.optimizer_steps,
            self.learning_rate,
            self.seed,
            sizes.join(",")
        )
    }

    pub fn from_kv(text: &str) -> Result<Self, AgentError> {
        let mut map = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line.split_once('=').ok_or_else(|| AgentError::Metadata(format!("no `=` in {line:?}")))?;
            map.insert(k.trim(), v.trim());
        }
        let get = |k: &str| map.get(k).copied().ok_or_else(|| AgentError::Metadata(format!("missing key {k}")));
        let num = |k: &str| -> Result<f64, AgentError> {
            get(k)?.parse().map_err(|_| AgentError::Metadata(format!("bad number for {k}")))
        };
        let int = |k: &str| -> Result<u64, AgentError> {
            get(k)?.parse().map_err(|_| AgentError::Metadata(format!("bad integer for {k}")))
        };
        if int("format_version")? != META_VERSION as u64 {
            return Err(AgentError::Metadata("unsupported format_version".into()));
        }
        let layer_sizes = get("layer_sizes")?
            .split(',')
            .map(|s| s.parse().map_err(|_| AgentError::Metadata(format!("bad layer size {s:?}"))))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            steps: int("steps")?,
            epsilon: num("epsilon")?,
            epsilon_schedule: get("epsilon_schedule")?.to_string(),
            optimizer_steps: int("optimizer_steps")?,
            learning_rate: num("learning_rate")?,
            seed: int("seed")?,
            layer_sizes,
        })
    }
}
