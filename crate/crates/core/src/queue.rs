//! Poisson packet arrivals feeding a finite FIFO buffer that blocks on overflow.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use thiserror::Error;

use crate::scalar::Scalar;

/// 0.5 MByte packets.
pub const PACKET_SIZE_BITS: u64 = 4_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueueError {
    #[error("queue capacity must be positive to compute an occupancy ratio")]
    ZeroCapacity,
    #[error("arrival rate must be finite and non-negative, got {0}")]
    ArrivalRate(f64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub id: u64,
    pub size_bits: u64,
    pub arrival_slot: u64,
}

/// Number of arrivals in one slot, Poisson with mean `lambda_per_slot`.
pub fn sample_arrivals<R: Rng + ?Sized>(lambda_per_slot: f64, rng: &mut R) -> Result<u32, QueueError> {
    if !lambda_per_slot.is_finite() || lambda_per_slot < 0.0 {
        return Err(QueueError::ArrivalRate(lambda_per_slot));
    }
    if lambda_per_slot == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(lambda_per_slot).map_err(|_| QueueError::ArrivalRate(lambda_per_slot))?;
    Ok(dist.sample(rng) as u32)
}

/// Packet source assigning monotonically increasing ids.
#[derive(Debug, Clone)]
pub struct ArrivalProcess {
    pub lambda_per_slot: f64,
    pub size_bits: u64,
    next_id: u64,
}

impl ArrivalProcess {
    pub fn new(lambda_per_slot: f64) -> Result<Self, QueueError> {
        if !lambda_per_slot.is_finite() || lambda_per_slot < 0.0 {
            return Err(QueueError::ArrivalRate(lambda_per_slot));
        }
        Ok(Self { lambda_per_slot, size_bits: PACKET_SIZE_BITS, next_id: 0 })
    }

    pub fn generate<R: Rng + ?Sized>(&mut self, slot: u64, rng: &mut R) -> Vec<Packet> {
        // lambda validated in new()
        let n = sample_arrivals(self.lambda_per_slot, rng).unwrap_or(0);
        (0..n).map(|_| self.packet(slot)).collect()
    }

    pub fn packet(&mut self, slot: u64) -> Packet {
        let id = self.next_id;
        self.next_id += 1;
        Packet { id, size_bits: self.size_bits, arrival_slot: slot }
    }
}

/// Finite FIFO buffer. Arrivals beyond `capacity` are dropped and counted.
#[derive(Debug, Clone)]
pub struct PacketQueue {
    capacity: usize,
    contents: VecDeque<Packet>,
    arrivals_total: u64,
    blocked_total: u64,
}

impl PacketQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            contents: VecDeque::with_capacity(capacity),
            arrivals_total: 0,
            blocked_total: 0,
        }
    }

    /// Returns whether the packet was accepted.
    pub fn enqueue(&mut self, p: Packet) -> bool {
        self.arrivals_total += 1;
        if self.contents.len() < self.capacity {
            self.contents.push_back(p);
            true
        } else {
            self.blocked_total += 1;
            false
        }
    }

    pub fn head_of_line(&self) -> Option<&Packet> {
        self.contents.front()
    }

    pub fn pop(&mut self) -> Option<Packet> {
        self.contents.pop_front()
    }

    pub fn occupancy_ratio(&self) -> Result<f64, QueueError> {
        if self.capacity == 0 {
            return Err(QueueError::ZeroCapacity);
        }
        Ok(self.contents.len() as f64 / self.capacity as f64)
    }

    pub fn len(&self) -> usize {
        self.contents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contents.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn arrivals_total(&self) -> u64 {
        self.arrivals_total
    }

    pub fn blocked_total(&self) -> u64 {
        self.blocked_total
    }

    pub fn accepted_total(&self) -> u64 {
        self.arrivals_total - self.blocked_total
    }
}

/// Closed-form M/M/1/K blocking probability, `rho^K (1-rho) / (1-rho^{K+1})`,
/// where `K` is the total number of packets the system can hold.
pub fn mm1k_blocking<T: Scalar>(rho: T, k: u32) -> T {
    if (rho - T::one()).abs() < T::lit(1e-12) {
        return T::one() / T::from_u32(k + 1).unwrap();
    }
    let rk = rho.powi(k as i32);
    rk * (T::one() - rho) / (T::one() - rk * rho)
}

/// Outcome of one continuous-time M/M/1/K run.
#[derive(Debug, Clone, PartialEq)]
pub struct Mm1kEstimate {
    pub rho: f64,
    pub k: u32,
    pub arrivals: u64,
    pub blocked: u64,
    pub simulated: f64,
    pub analytic: f64,
    /// Standard error of `simulated`: the larger of the batch-means estimate
    /// and the binomial error implied by the analytic probability.
    pub std_error: f64,
    pub z_score: f64,
}

const BATCHES: u64 = 50;

/// Simulates a single exponential server with Poisson arrivals (`mu = 1`,
/// `lambda = rho`) and system capacity `k`, using [`PacketQueue`] as the
/// buffer (the packet in service stays at the head until it departs).
pub fn simulate_mm1k<R: Rng + ?Sized>(rho: f64, k: u32, arrivals: u64, rng: &mut R) -> Mm1kEstimate {
    assert!(rho > 0.0 && arrivals >= BATCHES, "rho > 0 and at least {BATCHES} arrivals required");
    let inter = Exp::new(rho).expect("positive rate");
    let service = Exp::new(1.0).expect("positive rate");
    let mut source = ArrivalProcess::new(0.0).expect("zero rate is valid");
    let mut queue = PacketQueue::new(k as usize);

    let batch_len = arrivals / BATCHES;
    let mut batch_blocked = vec![0u64; BATCHES as usize];
    let mut now;
    let mut next_arrival: f64 = inter.sample(rng);
    let mut next_departure = f64::INFINITY;
    let mut seen = 0u64;

    while seen < arrivals {
        if next_arrival <= next_departure {
            now = next_arrival;
            let was_empty = queue.is_empty();
            let accepted = queue.enqueue(source.packet(seen));
            if !accepted {
                let b = ((seen / batch_len).min(BATCHES - 1)) as usize;
                batch_blocked[b] += 1;
            } else if was_empty {
                next_departure = now + service.sample(rng);
            }
            seen += 1;
            next_arrival = now + inter.sample(rng);
        } else {
            now = next_departure;
            queue.pop();
            next_departure = if queue.is_empty() {
                f64::INFINITY
            } else {
                now + service.sample(rng)
            };
        }
    }

    let blocked = queue.blocked_total();
    let simulated = blocked as f64 / arrivals as f64;
    let analytic = mm1k_blocking(rho, k);

    let sizes: Vec<f64> = (0..BATCHES)
        .map(|b| if b == BATCHES - 1 { (arrivals - batch_len * (BATCHES - 1)) as f64 } else { batch_len as f64 })
        .collect();
    let means: Vec<f64> = batch_blocked.iter().zip(&sizes).map(|(&c, &n)| c as f64 / n).collect();
    let grand = means.iter().sum::<f64>() / BATCHES as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
    let batch_se = (var / BATCHES as f64).sqrt();
    let binomial_se = (analytic * (1.0 - analytic) / arrivals as f64).sqrt();
    let std_error = batch_se.max(binomial_se);
    let z_score = if std_error > 0.0 { (simulated - analytic) / std_error } else { 0.0 };

    Mm1kEstimate { rho, k, arrivals, blocked, simulated, analytic, std_error, z_score }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pkt(id: u64) -> Packet {
        Packet { id, size_bits: PACKET_SIZE_BITS, arrival_slot: 0 }
    }

    #[test]
    fn zero_rate_never_arrives() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((0..1000).all(|_| sample_arrivals(0.0, &mut rng).unwrap() == 0));
        assert!(sample_arrivals(-1.0, &mut rng).is_err());
    }

    #[test]
    fn poisson_mean_and_dispersion() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_arrivals(2.0, &mut rng).unwrap() as f64).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 2.0).abs() < 0.01, "mean {mean}");
        assert!((var / mean - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn enqueue_accepts_until_full() {
        let mut q = PacketQueue::new(10);
        assert!(q.enqueue(pkt(0)));
        let mut q = PacketQueue::new(2);
        assert!(q.enqueue(pkt(0)));
        assert!(q.enqueue(pkt(1)));
        assert!(!q.enqueue(pkt(2)));
        assert_eq!(q.len(), 2);
        assert_eq!(q.blocked_total(), 1);
        assert_eq!(q.arrivals_total(), 3);
    }

    #[test]
    fn zero_capacity_rejects_everything() {
        let mut q = PacketQueue::new(0);
        assert!((0..5).all(|i| !q.enqueue(pkt(i))));
        assert_eq!(q.blocked_total(), 5);
        assert_eq!(q.occupancy_ratio(), Err(QueueError::ZeroCapacity));
    }

    #[test]
    fn head_of_line_is_fifo() {
        let mut q = PacketQueue::new(4);
        assert!(q.head_of_line().is_none());
        q.enqueue(pkt(1));
        q.enqueue(pkt(2));
        assert_eq!(q.head_of_line().unwrap().id, 1);
        q.pop();
        assert_eq!(q.head_of_line().unwrap().id, 2);
    }

    #[test]
    fn occupancy_examples() {
        let mut q = PacketQueue::new(12);
        assert_eq!(q.occupancy_ratio().unwrap(), 0.0);
        for i in 0..3 {
            q.enqueue(pkt(i));
        }
        assert_eq!(q.occupancy_ratio().unwrap(), 0.25);
        for i in 3..12 {
            q.enqueue(pkt(i));
        }
        assert_eq!(q.occupancy_ratio().unwrap(), 1.0);
    }

    #[test]
    fn ids_increase() {
        let mut src = ArrivalProcess::new(3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ids: Vec<u64> = (0..100).flat_map(|s| src.generate(s, &mut rng)).map(|p| p.id).collect();
        assert!(ids.windows(2).all(|w| w[1] == w[0] + 1));
    }

    #[test]
    fn closed_form_values() {
        let p: f64 = mm1k_blocking(0.5, 5);
        let expected = 0.5f64.powi(5) * 0.5 / (1.0 - 0.5f64.powi(6));
        assert!((p - expected).abs() < 1e-15);
        assert!((p - 0.015_873).abs() < 1e-5);
        assert_eq!(mm1k_blocking(0.7, 0), 1.0);
        assert!(mm1k_blocking(1e-6, 5) < 1e-25);
        assert!((mm1k_blocking(1.0, 4) - 0.2f64).abs() < 1e-15);
        assert!((mm1k_blocking(1.0f32, 4) - 0.2f32).abs() < 1e-6);
    }

    #[test]
    fn simulated_mm1k_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let est = simulate_mm1k(0.5, 5, 200_000, &mut rng);
        assert!(est.z_score.abs() < 3.0, "{est:?}");
        let est = simulate_mm1k(0.5, 0, 1_000, &mut rng);
        assert_eq!(est.simulated, 1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn fifo_and_counter_identity(cap in 0usize..8, ops in proptest::collection::vec(any::<bool>(), 0..64)) {
                let mut q = PacketQueue::new(cap);
                let mut next = 0u64;
                let mut departed = Vec::new();
                for push in ops {
                    if push {
                        q.enqueue(pkt(next));
                        next += 1;
                    } else if let Some(p) = q.pop() {
                        departed.push(p.id);
                    }
                    prop_assert!(q.len() <= cap);
                    prop_assert_eq!(q.blocked_total() + q.accepted_total(), q.arrivals_total());
                }
                prop_assert!(departed.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }
}
