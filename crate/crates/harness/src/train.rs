use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use sidelink_core::{
    BanditEnv, BlockingTally, DdqnAgent, EnvConfig, Environment, QNetwork, SidelinkEnv, Transition,
};

use crate::config::{ExperimentSpec, Mode};
use crate::error::HarnessError;
use crate::events::EventSink;

/// One line of the training log, covering the epochs since the previous line.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub epsilon: f64,
    /// Mean minibatch loss; absent before training starts.
    pub loss: Option<f64>,
    /// Blocking over the interval; absent when nothing arrived.
    pub blocking: Option<f64>,
}

pub const LOG_HEADER: [&str; 4] = ["step", "epsilon", "loss", "blocking_rate"];

pub struct TrainingOutcome {
    pub agent: DdqnAgent,
    pub log: Vec<LogRow>,
}

pub struct TrainingArtifacts {
    pub checkpoint: PathBuf,
    pub meta: PathBuf,
    pub log: PathBuf,
}

impl TrainingArtifacts {
    pub fn beside(checkpoint: &Path) -> Self {
        Self {
            checkpoint: checkpoint.to_path_buf(),
            meta: with_suffix(checkpoint, ".meta"),
            log: with_suffix(checkpoint, ".log.csv"),
        }
    }
}

pub(crate) fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Runs the training loop in memory. The first seed drives both the agent and
/// the training environment.
pub fn train(spec: &ExperimentSpec, events: &mut EventSink) -> Result<TrainingOutcome, HarnessError> {
    spec.validate(Mode::Train)?;
    let seed = spec.seeds[0];
    let mut agent = DdqnAgent::new(spec.agent.clone(), seed)?;
    let log = match spec.bandit_rewards {
        Some(rewards) => {
            let mut env = BanditEnv::new(rewards)?;
            train_loop(&mut env, &mut agent, spec, 0.0, events)?
        }
        None => {
            let cfg = EnvConfig { seed, ..spec.env.clone() };
            let budget = cfg.licensed_budget_bps;
            let mut env = SidelinkEnv::new(cfg)?;
            train_loop(&mut env, &mut agent, spec, budget, events)?
        }
    };
    Ok(TrainingOutcome { agent, log })
}

fn train_loop<E: Environment>(
    env: &mut E,
    agent: &mut DdqnAgent,
    spec: &ExperimentSpec,
    budget: f64,
    events: &mut EventSink,
) -> Result<Vec<LogRow>, HarnessError> {
    let seed = spec.seeds[0];
    let mut rows = Vec::new();
    let mut tally = BlockingTally::default();
    let (mut loss_sum, mut loss_n) = (0.0, 0u64);
    let mut s = env.reset();
    for k in 0..spec.training_epochs {
        if env.is_done() {
            s = env.reset();
        }
        let a = agent.act(&s)?;
        let r = env.step(a)?;
        events.record("train", budget, seed, &r.report)?;
        tally.record(&r.report);
        let t = Transition { state: s, action: a, reward: r.reward, next_state: r.state, terminal: r.done };
        if let Some(l) = agent.observe(t)? {
            loss_sum += l;
            loss_n += 1;
        }
        s = r.state;
        let step = k + 1;
        if step % spec.log_interval == 0 || step == spec.training_epochs {
            rows.push(LogRow {
                step,
                epsilon: agent.epsilon(),
                loss: (loss_n > 0).then(|| loss_sum / loss_n as f64),
                blocking: tally.blocking_probability(),
            });
            tally = BlockingTally::default();
            loss_sum = 0.0;
            loss_n = 0;
        }
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_log(path: &Path, rows: &[LogRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(HarnessError::csv(path))?;
    w.write_record(LOG_HEADER).map_err(HarnessError::csv(path))?;
    for r in rows {
        w.write_record([r.step.to_string(), r.epsilon.to_string(), opt(r.loss), opt(r.blocking)])
            .map_err(HarnessError::csv(path))?;
    }
    w.flush().map_err(HarnessError::io(path))
}

pub fn save_network(net: &QNetwork, path: &Path) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(HarnessError::io(path))?;
    let mut w = BufWriter::new(file);
    net.write_checkpoint(&mut w)
        .map_err(|e| HarnessError::Checkpoint { path: path.to_path_buf(), msg: e.to_string() })?;
    w.flush().map_err(HarnessError::io(path))
}

pub fn load_network(path: &Path) -> Result<QNetwork, HarnessError> {
    let file = File::open(path).map_err(|e| HarnessError::Checkpoint {
        path: path.to_path_buf(),
        msg: format!("cannot open: {e}"),
    })?;
    QNetwork::read_checkpoint(BufReader::new(file))
        .map_err(|e| HarnessError::Checkpoint { path: path.to_path_buf(), msg: e.to_string() })
}

/// Trains and writes the checkpoint, its `.meta` sidecar and the `.log.csv` beside it.
pub fn run_training(
    spec: &ExperimentSpec,
    checkpoint: &Path,
    events: &mut EventSink,
) -> Result<(TrainingOutcome, TrainingArtifacts), HarnessError> {
    let outcome = train(spec, events)?;
    let paths = TrainingArtifacts::beside(checkpoint);
    save_network(&outcome.agent.online, &paths.checkpoint)?;
    std::fs::write(&paths.meta, outcome.agent.metadata().to_kv()).map_err(HarnessError::io(&paths.meta))?;
    write_log(&paths.log, &outcome.log)?;
    Ok((outcome, paths))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suffixes_append_to_the_full_name() {
        let p = TrainingArtifacts::beside(Path::new("out/net.ckpt"));
        assert_eq!(p.meta, PathBuf::from("out/net.ckpt.meta"));
        assert_eq!(p.log, PathBuf::from("out/net.ckpt.log.csv"));
    }

    #[test]
    fn short_run_logs_every_interval() {
        let spec = ExperimentSpec { training_epochs: 250, log_interval: 100, ..Default::default() };
        let out = train(&spec, &mut EventSink::disabled()).unwrap();
        let steps: Vec<u64> = out.log.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![100, 200, 250]);
        assert_eq!(out.agent.steps(), 250);
        assert!(out.log.iter().all(|r| r.loss.is_none()));
    }
}
