//! Discrete-event kernel: a monotone clock, a `(fire_at, seq)`-ordered event
//! queue and the single seeded random stream every stochastic draw comes from.

use crate::error::{Result, SimError};
use crate::time::SimTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// A queued event. `(fire_at, seq)` is unique within a queue.
#[derive(Debug, Clone)]
pub struct EventRecord<E> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub event: E,
}

impl<E> PartialEq for EventRecord<E> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}

impl<E> Eq for EventRecord<E> {}

impl<E> PartialOrd for EventRecord<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for EventRecord<E> {
    // Reversed so that `BinaryHeap` pops the earliest (fire_at, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_at
            .cmp(&self.fire_at)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Future event list with FIFO tie-breaking on equal timestamps.
#[derive(Debug)]
pub struct EventQueue<E> {
    heap: BinaryHeap<EventRecord<E>>,
    clock: SimTime,
    next_seq: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            clock: SimTime::ZERO,
            next_seq: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Inserts an event. Scheduling before the current clock is a logic error.
    pub fn schedule(&mut self, fire_at: SimTime, event: E) -> Result<u64> {
        if fire_at < self.clock {
            return Err(SimError::PastEvent {
                fire_at,
                clock: self.clock,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(EventRecord {
            fire_at,
            seq,
            event,
        });
        Ok(seq)
    }

    pub fn schedule_in(&mut self, delay: SimTime, event: E) -> Result<u64> {
        self.schedule(self.clock + delay, event)
    }

    /// Pops the next event and moves the clock to it; `None` marks end of simulation.
    pub fn advance(&mut self) -> Option<EventRecord<E>> {
        let rec = self.heap.pop()?;
        debug_assert!(rec.fire_at >= self.clock);
        self.clock = rec.fire_at;
        Some(rec)
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|r| r.fire_at)
    }
}

/// Packet sizes are resampled (never clamped) into this range.
pub const MIN_PAYLOAD_BYTES: f64 = 1.0;
pub const MAX_PAYLOAD_BYTES: f64 = 2304.0;

/// The per-run random stream. Same seed, same call sequence, same values.
#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        RandomStream {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform integer in `[lo, hi]` inclusive.
    pub fn uniform_int(&mut self, lo: u32, hi: u32) -> Result<u32> {
        if lo > hi {
            return Err(SimError::InvalidParam(format!(
                "uniform_int: lo ({lo}) > hi ({hi})"
            )));
        }
        if lo == hi {
            return Ok(lo);
        }
        Ok(self.rng.gen_range(lo..=hi))
    }

    /// Normal draw resampled until it lands in `[lo, hi]`.
    pub fn normal_truncated(&mut self, mean: f64, std: f64, lo: f64, hi: f64) -> Result<f64> {
        if std.is_nan() || std < 0.0 || !std.is_finite() {
            return Err(SimError::InvalidParam(format!(
                "normal_truncated: std must be >= 0, got {std}"
            )));
        }
        if lo.is_nan() || hi.is_nan() || lo >= hi || mean < lo || mean > hi {
            return Err(SimError::InvalidParam(format!(
                "normal_truncated: need lo < hi and lo <= mean <= hi (lo={lo}, mean={mean}, hi={hi})"
            )));
        }
        if std == 0.0 {
            return Ok(mean);
        }
        let dist = Normal::new(mean, std).map_err(|e| SimError::InvalidParam(e.to_string()))?;
        loop {
            let x = dist.sample(&mut self.rng);
            if (lo..=hi).contains(&x) {
                return Ok(x);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn earlier_event_dispatched_first() {
        let mut q = EventQueue::new();
        q.schedule(SimTime(5), "five").unwrap();
        q.schedule(SimTime(3), "three").unwrap();
        let first = q.advance().unwrap();
        assert_eq!(first.fire_at, SimTime(3));
        assert_eq!(first.event, "three");
    }

    #[test]
    fn equal_times_are_fifo() {
        let mut q = EventQueue::new();
        q.schedule(SimTime(7), 'A').unwrap();
        q.schedule(SimTime(7), 'B').unwrap();
        assert_eq!(q.advance().unwrap().event, 'A');
        assert_eq!(q.advance().unwrap().event, 'B');
    }

    #[test]
    fn past_event_rejected() {
        let mut q = EventQueue::new();
        q.schedule(SimTime(4), ()).unwrap();
        q.advance();
        let err = q.schedule(SimTime(2), ()).unwrap_err();
        assert!(matches!(err, SimError::PastEvent { .. }));
        assert!(err.is_audit());
    }

    #[test]
    fn empty_queue_is_end_of_simulation() {
        let mut q: EventQueue<()> = EventQueue::new();
        assert!(q.advance().is_none());
    }

    #[test]
    fn advance_sets_clock() {
        let mut q = EventQueue::new();
        q.schedule(SimTime(3), ()).unwrap();
        let r = q.advance().unwrap();
        assert_eq!(r.fire_at, SimTime(3));
        assert_eq!(q.now(), SimTime(3));
    }

    #[test]
    fn clock_sequence_with_ties() {
        let mut q = EventQueue::new();
        for t in [1, 1, 2] {
            q.schedule(SimTime(t), ()).unwrap();
        }
        let mut clocks = vec![];
        while q.advance().is_some() {
            clocks.push(q.now().micros());
        }
        assert_eq!(clocks, vec![1, 1, 2]);
    }

    #[test]
    fn degenerate_uniform_range() {
        let mut r = RandomStream::new(1);
        assert_eq!(r.uniform_int(5, 5).unwrap(), 5);
        assert!(r.uniform_int(6, 5).is_err());
    }

    #[test]
    fn uniform_mean_matches_law() {
        let mut r = RandomStream::new(42);
        let n = 100_000;
        let mut sum = 0u64;
        let mut counts = [0u32; 32];
        for _ in 0..n {
            let v = r.uniform_int(0, 31).unwrap();
            assert!(v <= 31);
            sum += v as u64;
            counts[v as usize] += 1;
        }
        let mean = sum as f64 / n as f64;
        assert!((mean - 15.5).abs() < 0.1, "mean {mean}");
        // Chi-square with 31 dof; the 0.999 quantile is ~61.1.
        let expected = n as f64 / 32.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 61.1, "chi2 {chi2}");
    }

    #[test]
    fn same_seed_same_draws() {
        let mut a = RandomStream::new(9);
        let mut b = RandomStream::new(9);
        for _ in 0..1000 {
            assert_eq!(a.uniform_int(0, 1023).unwrap(), b.uniform_int(0, 1023).unwrap());
        }
        let xa = a.normal_truncated(300.0, 40.0, 1.0, 2304.0).unwrap();
        let xb = b.normal_truncated(300.0, 40.0, 1.0, 2304.0).unwrap();
        assert_eq!(xa.to_bits(), xb.to_bits());
    }

    #[test]
    fn zero_variance_normal() {
        let mut r = RandomStream::new(3);
        assert_eq!(
            r.normal_truncated(300.0, 0.0, MIN_PAYLOAD_BYTES, MAX_PAYLOAD_BYTES)
                .unwrap(),
            300.0
        );
        assert!(r.normal_truncated(300.0, -1.0, 1.0, 2304.0).is_err());
    }

    fn sample_moments(mean: f64, std: f64, n: usize, seed: u64) -> (f64, f64) {
        let mut r = RandomStream::new(seed);
        let xs: Vec<f64> = (0..n)
            .map(|_| {
                r.normal_truncated(mean, std, MIN_PAYLOAD_BYTES, MAX_PAYLOAD_BYTES)
                    .unwrap()
            })
            .collect();
        assert!(xs
            .iter()
            .all(|x| (MIN_PAYLOAD_BYTES..=MAX_PAYLOAD_BYTES).contains(x)));
        let m = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        (m, var.sqrt())
    }

    #[test]
    fn high_priority_size_moments() {
        let (m, s) = sample_moments(300.0, 40.0, 100_000, 11);
        assert!((m - 300.0).abs() < 1.0, "mean {m}");
        assert!((s - 40.0).abs() < 1.0, "std {s}");
    }

    #[test]
    fn low_priority_size_mean() {
        let (m, _) = sample_moments(800.0, 150.0, 100_000, 12);
        assert!((m - 800.0).abs() < 2.0, "mean {m}");
    }
}
