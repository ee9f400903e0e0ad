//! Licensed/unlicensed band scheduling for NR sidelink with Wi-Fi coexistence.
//!
//! The numeric kernels ([`channel`], [`nn`]) are generic over [`Scalar`];
//! the simulator and agent run in `f64` through the aliases below.

pub mod agent;
pub mod baselines;
pub mod channel;
pub mod coexistence;
pub mod env;
pub mod nn;
pub mod queue;
pub mod scalar;

pub use scalar::Scalar;

pub type QNetwork = nn::Mlp<f64>;
pub type Optimizer = nn::Adam<f64>;
pub type Gradients = nn::Gradients<f64>;
pub type LinkGeometry = channel::LinkGeometry<f64>;
pub type LinkBudget = channel::LinkBudget<f64>;
pub type ChannelRealization = channel::ChannelRealization<f64>;

pub use agent::{DdqnAgent, EpsilonSchedule, GreedyPolicy, Hyperparams, ReplayBuffer};
pub use baselines::{Policy, RandomPolicy, ThresholdConfig, ThresholdPolicy};
pub use env::{
    Action, BanditEnv, BlockingTally, ChannelMode, DispatchOutcome, EnvConfig, Environment, EpochReport,
    SidelinkEnv, StateVector, Transition,
};
