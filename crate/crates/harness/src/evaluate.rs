//! Frozen-policy evaluation, bandwidth sweeps and the channel-mode comparison.

use std::path::{Path, PathBuf};

use sidelink_core::{
    BlockingTally, ChannelMode, EnvConfig, Environment, GreedyPolicy, Policy, QNetwork, RandomPolicy,
    SidelinkEnv, ThresholdPolicy,
};

use crate::config::{ExperimentSpec, Mode, PolicyKind};
use crate::error::HarnessError;
use crate::events::EventSink;
use crate::stats::Summary;
use crate::train::{load_network, with_suffix};

pub const SWEEP_HEADER: [&str; 9] = [
    "licensed_bps",
    "policy",
    "seed",
    "epochs",
    "blocking_prob",
    "blocked_overflow",
    "blocked_no_bandwidth",
    "blocked_lbt",
    "mean_throughput_bps",
];

/// One evaluation result, or the per-budget mean over seeds when `seed` is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub licensed_bps: f64,
    pub policy: String,
    pub seed: Option<u64>,
    pub epochs: u64,
    pub blocking_prob: Option<f64>,
    pub blocked_overflow: Option<f64>,
    pub blocked_no_bandwidth: Option<f64>,
    pub blocked_lbt: Option<f64>,
    pub mean_throughput_bps: f64,
}

impl SweepRow {
    fn from_tally(licensed_bps: f64, policy: &str, seed: u64, t: &BlockingTally, slot_seconds: f64) -> Self {
        let breakdown = t.breakdown();
        Self {
            licensed_bps,
            policy: policy.to_string(),
            seed: Some(seed),
            epochs: t.epochs,
            blocking_prob: t.blocking_probability(),
            blocked_overflow: breakdown.map(|b| b.0),
            blocked_no_bandwidth: breakdown.map(|b| b.1),
            blocked_lbt: breakdown.map(|b| b.2),
            mean_throughput_bps: t.mean_throughput(slot_seconds),
        }
    }

    fn mean_of(rows: &[SweepRow]) -> Self {
        let avg = |f: fn(&SweepRow) -> Option<f64>| {
            let v: Vec<f64> = rows.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        Self {
            licensed_bps: rows[0].licensed_bps,
            policy: rows[0].policy.clone(),
            seed: None,
            epochs: rows[0].epochs,
            blocking_prob: avg(|r| r.blocking_prob),
            blocked_overflow: avg(|r| r.blocked_overflow),
            blocked_no_bandwidth: avg(|r| r.blocked_no_bandwidth),
            blocked_lbt: avg(|r| r.blocked_lbt),
            mean_throughput_bps: avg(|r| Some(r.mean_throughput_bps)).unwrap_or(0.0),
        }
    }

    fn record(&self) -> [String; 9] {
        [
            self.licensed_bps.to_string(),
            self.policy.clone(),
            self.seed.map(|s| s.to_string()).unwrap_or_else(|| "mean".into()),
            self.epochs.to_string(),
            opt(self.blocking_prob),
            opt(self.blocked_overflow),
            opt(self.blocked_no_bandwidth),
            opt(self.blocked_lbt),
            self.mean_throughput_bps.to_string(),
        ]
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Rolls `policy` forward for `epochs` decision epochs, resetting at episode ends.
pub fn evaluate_policy(
    policy: &mut dyn Policy,
    cfg: EnvConfig,
    epochs: u64,
    run: &str,
    events: &mut EventSink,
) -> Result<BlockingTally, HarnessError> {
    let (budget, seed) = (cfg.licensed_budget_bps, cfg.seed);
    let mut env = SidelinkEnv::new(cfg)?;
    let mut tally = BlockingTally::default();
    let mut s = env.reset();
    for _ in 0..epochs {
        if env.is_done() {
            s = env.reset();
        }
        let r = env.step(policy.act(&s))?;
        events.record(run, budget, seed, &r.report)?;
        tally.record(&r.report);
        s = r.state;
    }
    Ok(tally)
}

pub fn make_policy(kind: PolicyKind, spec: &ExperimentSpec, seed: u64, net: Option<&QNetwork>) -> Box<dyn Policy> {
    match kind {
        PolicyKind::Ddqn => Box::new(GreedyPolicy::new(net.expect("ddqn network loaded").clone())),
        PolicyKind::Threshold => Box::new(ThresholdPolicy { cfg: spec.threshold }),
        PolicyKind::Random => Box::new(RandomPolicy::new(seed)),
    }
}

/// Minimum acceptable mean throughput, reported against but never enforced.
#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputFloor {
    pub bps: f64,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub licensed_bps: f64,
    pub policy: String,
    pub blocking: Summary,
    pub throughput: Summary,
    pub meets_floor: bool,
}

pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SummaryRow>,
    pub floor: ThroughputFloor,
}

impl SweepReport {
    pub fn summary_for(&self, licensed_bps: f64, policy: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.licensed_bps == licensed_bps && s.policy == policy)
    }
}

fn sweep_points(spec: &ExperimentSpec, mode: Mode) -> Vec<f64> {
    if mode == Mode::Evaluate && spec.sweep_points.is_empty() {
        vec![spec.env.licensed_budget_bps]
    } else {
        spec.sweep_points.clone()
    }
}

fn eval_all(
    kind: PolicyKind,
    spec: &ExperimentSpec,
    budget: f64,
    net: Option<&QNetwork>,
    events: &mut EventSink,
) -> Result<Vec<SweepRow>, HarnessError> {
    let mut rows = Vec::with_capacity(spec.seeds.len());
    for &seed in &spec.seeds {
        let cfg = EnvConfig { licensed_budget_bps: budget, seed, ..spec.env.clone() };
        let slot = cfg.slot_seconds;
        let mut policy = make_policy(kind, spec, seed, net);
        let tally = evaluate_policy(policy.as_mut(), cfg, spec.epochs_per_point, kind.name(), events)?;
        rows.push(SweepRow::from_tally(budget, kind.name(), seed, &tally, slot));
    }
    Ok(rows)
}

/// Evaluates every listed policy at every budget and seed. Rows come out
/// ordered by budget, then policy, then seed, each group closed by its mean.
pub fn run_sweep(spec: &ExperimentSpec, mode: Mode, events: &mut EventSink) -> Result<SweepReport, HarnessError> {
    spec.validate(mode)?;
    let net = match (spec.policy.contains(&PolicyKind::Ddqn), &spec.checkpoint) {
        (true, Some(p)) => Some(load_network(p)?),
        _ => None,
    };
    let points = sweep_points(spec, mode);
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &budget in &points {
        for &kind in &spec.policy {
            let group = eval_all(kind, spec, budget, net.as_ref(), events)?;
            let blocking: Vec<f64> = group.iter().filter_map(|r| r.blocking_prob).collect();
            let throughput: Vec<f64> = group.iter().map(|r| r.mean_throughput_bps).collect();
            summary.push(SummaryRow {
                licensed_bps: budget,
                policy: kind.name().to_string(),
                blocking: Summary::of(&blocking),
                throughput: Summary::of(&throughput),
                meets_floor: false,
            });
            let mean = SweepRow::mean_of(&group);
            rows.extend(group);
            rows.push(mean);
        }
    }

    let floor = match spec.throughput_floor_bps {
        Some(bps) => ThroughputFloor { bps, source: "configured".into() },
        None => {
            let smallest = points.iter().copied().fold(f64::INFINITY, f64::min);
            let random_mean = match summary.iter().find(|s| s.licensed_bps == smallest && s.policy == "random") {
                Some(s) => s.throughput.mean,
                None => {
                    let group = eval_all(PolicyKind::Random, spec, smallest, None, &mut EventSink::disabled())?;
                    group.iter().map(|r| r.mean_throughput_bps).sum::<f64>() / group.len() as f64
                }
            };
            ThroughputFloor { bps: 0.5 * random_mean, source: format!("0.5 x random at {smallest}") }
        }
    };
    for s in &mut summary {
        s.meets_floor = s.throughput.mean >= floor.bps;
    }
    Ok(SweepReport { rows, summary, floor })
}

pub fn summary_path(out: &Path) -> PathBuf {
    match out.extension() {
        Some(ext) if ext == "csv" => out.with_extension("summary.csv"),
        _ => with_suffix(out, ".summary.csv"),
    }
}

pub fn write_sweep(path: &Path, report: &SweepReport) -> Result<PathBuf, HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(HarnessError::csv(path))?;
    w.write_record(SWEEP_HEADER).map_err(HarnessError::csv(path))?;
    for r in &report.rows {
        w.write_record(r.record()).map_err(HarnessError::csv(path))?;
    }
    w.flush().map_err(HarnessError::io(path))?;

    let spath = summary_path(path);
    let mut w = csv::Writer::from_path(&spath).map_err(HarnessError::csv(&spath))?;
    w.write_record([
        "licensed_bps",
        "policy",
        "seeds",
        "blocking_mean",
        "blocking_ci95",
        "throughput_mean_bps",
        "throughput_ci95_bps",
        "throughput_floor_bps",
        "meets_floor",
    ])
    .map_err(HarnessError::csv(&spath))?;
    for s in &report.summary {
        w.write_record([
            s.licensed_bps.to_string(),
            s.policy.clone(),
            s.blocking.n.to_string(),
            s.blocking.mean.to_string(),
            s.blocking.ci95.to_string(),
            s.throughput.mean.to_string(),
            s.throughput.ci95.to_string(),
            report.floor.bps.to_string(),
            s.meets_floor.to_string(),
        ])
        .map_err(HarnessError::csv(&spath))?;
    }
    w.flush().map_err(HarnessError::io(&spath))?;
    Ok(spath)
}

pub const COMPARE_HEADER: [&str; 7] = [
    "licensed_bps",
    "channel_mode",
    "seed",
    "epochs",
    "blocking_prob",
    "mean_throughput_bps",
    "static_minus_dynamic",
];

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub licensed_bps: f64,
    pub channel_mode: ChannelMode,
    pub seed: u64,
    pub epochs: u64,
    pub blocking_prob: Option<f64>,
    pub mean_throughput_bps: f64,
    /// Static blocking minus dynamic blocking for this (budget, seed) pair.
    pub static_minus_dynamic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparePoint {
    pub licensed_bps: f64,
    pub static_blocking: Summary,
    pub dynamic_blocking: Summary,
    pub difference: Summary,
}

pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub points: Vec<ComparePoint>,
}

pub fn mode_name(m: ChannelMode) -> &'static str {
    match m {
        ChannelMode::StaticPerEpisode => "static_per_episode",
        ChannelMode::DynamicPerPacket => "dynamic_per_packet",
    }
}

/// Evaluates each checkpoint under the channel mode it was trained in, on
/// identical budgets and seeds.
pub fn run_channel_mode_comparison(spec: &ExperimentSpec, events: &mut EventSink) -> Result<CompareReport, HarnessError> {
    spec.validate(Mode::CompareChannel)?;
    let paths = spec.channel_checkpoints.as_ref().expect("validated");
    let nets = [
        (ChannelMode::StaticPerEpisode, load_network(&paths.static_per_episode)?),
        (ChannelMode::DynamicPerPacket, load_network(&paths.dynamic_per_packet)?),
    ];
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for &budget in &spec.sweep_points {
        let mut per_mode: Vec<Vec<CompareRow>> = Vec::new();
        for (mode, net) in &nets {
            let run = format!("ddqn/{}", mode_name(*mode));
            let mut group = Vec::new();
            for &seed in &spec.seeds {
                let cfg = EnvConfig { licensed_budget_bps: budget, seed, channel_mode: *mode, ..spec.env.clone() };
                let slot = cfg.slot_seconds;
                let mut policy = GreedyPolicy::new(net.clone());
                let t = evaluate_policy(&mut policy, cfg, spec.epochs_per_point, &run, events)?;
                group.push(CompareRow {
                    licensed_bps: budget,
                    channel_mode: *mode,
                    seed,
                    epochs: t.epochs,
                    blocking_prob: t.blocking_probability(),
                    mean_throughput_bps: t.mean_throughput(slot),
                    static_minus_dynamic: None,
                });
            }
            per_mode.push(group);
        }
        let (st, dy) = (&per_mode[0], &per_mode[1]);
        let diffs: Vec<Option<f64>> = st
            .iter()
            .zip(dy)
            .map(|(a, b)| Some(a.blocking_prob? - b.blocking_prob?))
            .collect();
        let collect = |g: &[CompareRow]| g.iter().filter_map(|r| r.blocking_prob).collect::<Vec<_>>();
        points.push(ComparePoint {
            licensed_bps: budget,
            static_blocking: Summary::of(&collect(st)),
            dynamic_blocking: Summary::of(&collect(dy)),
            difference: Summary::of(&diffs.iter().flatten().copied().collect::<Vec<_>>()),
        });
        for (i, d) in diffs.iter().enumerate() {
            for g in [&per_mode[0], &per_mode[1]] {
                rows.push(CompareRow { static_minus_dynamic: *d, ..g[i].clone() });
            }
        }
    }
    Ok(CompareReport { rows, points })
}

pub fn write_compare(path: &Path, report: &CompareReport) -> Result<PathBuf, HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(HarnessError::csv(path))?;
    w.write_record(COMPARE_HEADER).map_err(HarnessError::csv(path))?;
    for r in &report.rows {
        w.write_record([
            r.licensed_bps.to_string(),
            mode_name(r.channel_mode).to_string(),
            r.seed.to_string(),
            r.epochs.to_string(),
            opt(r.blocking_prob),
            r.mean_throughput_bps.to_string(),
            opt(r.static_minus_dynamic),
        ])
        .map_err(HarnessError::csv(path))?;
    }
    w.flush().map_err(HarnessError::io(path))?;

    let spath = summary_path(path);
    let mut w = csv::Writer::from_path(&spath).map_err(HarnessError::csv(&spath))?;
    w.write_record([
        "licensed_bps",
        "seeds",
        "static_blocking_mean",
        "dynamic_blocking_mean",
        "difference_mean",
        "difference_ci95",
    ])
    .map_err(HarnessError::csv(&spath))?;
    for p in &report.points {
        w.write_record([
            p.licensed_bps.to_string(),
            p.difference.n.to_string(),
            p.static_blocking.mean.to_string(),
            p.dynamic_blocking.mean.to_string(),
            p.difference.mean.to_string(),
            p.difference.ci95.to_string(),
        ])
        .map_err(HarnessError::csv(&spath))?;
    }
    w.flush().map_err(HarnessError::io(&spath))?;
    Ok(spath)
}
