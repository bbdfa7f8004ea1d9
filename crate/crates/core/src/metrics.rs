//! Per-flow accounting: loss by cause, throughput series, end-to-end delay CDF.
//!
//! Packet counts, losses and delays are kept by creation cohort: a frame
//! belongs to the measurement window iff it was generated at or after the
//! warmup instant, and all of its later fates (delivery or drop) are
//! attributed to the window. This keeps the conservation identity exact:
//! `generated = delivered + drops + in_flight_at_end`.
//!
//! Throughput is a rate, so it counts bytes by delivery time instead: every
//! delivery inside the window counts, whenever the frame was created. A
//! backlog built up during warmup therefore still shows up as carried load.

use crate::error::{Result, SimError};
use crate::time::SimTime;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Queue,
    Retry,
    Unassociated,
    Wired,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::Queue => "queue",
            DropReason::Retry => "retry",
            DropReason::Unassociated => "unassociated",
            DropReason::Wired => "wired",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "queue" => DropReason::Queue,
            "retry" => DropReason::Retry,
            "unassociated" => DropReason::Unassociated,
            "wired" => DropReason::Wired,
            _ => return None,
        })
    }
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Data-frame lifecycle events fed to the collector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameEvent {
    Generated {
        frame_id: u64,
        flow_id: u32,
        at: SimTime,
        bytes: u32,
    },
    Delivered {
        frame_id: u64,
        at: SimTime,
    },
    Dropped {
        frame_id: u64,
        at: SimTime,
        reason: DropReason,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlowCounters {
    pub generated: u64,
    pub delivered: u64,
    pub dropped_queue: u64,
    pub dropped_retry: u64,
    pub dropped_unassociated: u64,
    pub dropped_wired: u64,
    pub in_flight: u64,
    pub bytes_generated: u64,
    pub bytes_delivered: u64,
    /// Bytes delivered inside the window regardless of creation time.
    pub window_bytes_delivered: u64,
    /// Creation-to-delivery delays, in delivery order.
    pub delay_samples: Vec<u64>,
}

impl FlowCounters {
    pub fn dropped(&self) -> u64 {
        self.dropped_queue + self.dropped_retry + self.dropped_unassociated + self.dropped_wired
    }

    pub fn conserved(&self) -> bool {
        self.generated == self.delivered + self.dropped() + self.in_flight
    }

    fn bump(&mut self, reason: DropReason) {
        match reason {
            DropReason::Queue => self.dropped_queue += 1,
            DropReason::Retry => self.dropped_retry += 1,
            DropReason::Unassociated => self.dropped_unassociated += 1,
            DropReason::Wired => self.dropped_wired += 1,
        }
    }
}

/// Bytes delivered per fixed-width bin, starting at the warmup instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputSeries {
    pub start: SimTime,
    pub bin_width: SimTime,
    pub bins: Vec<u64>,
}

impl ThroughputSeries {
    pub fn new(start: SimTime, end: SimTime, bin_width: SimTime) -> Self {
        let span = end.saturating_sub(start).micros();
        let n = span.div_ceil(bin_width.micros()) as usize;
        ThroughputSeries {
            start,
            bin_width,
            bins: vec![0; n],
        }
    }

    pub fn add(&mut self, at: SimTime, bytes: u64) {
        let idx = ((at - self.start).micros() / self.bin_width.micros()) as usize;
        if let Some(b) = self.bins.get_mut(idx) {
            *b += bytes;
        } else if let Some(last) = self.bins.last_mut() {
            *last += bytes;
        }
    }

    pub fn bin_start(&self, idx: usize) -> SimTime {
        self.start + SimTime(idx as u64 * self.bin_width.micros())
    }

    pub fn total(&self) -> u64 {
        self.bins.iter().sum()
    }

    /// Bytes per second in bin `idx`.
    pub fn rate_bytes_per_s(&self, idx: usize) -> f64 {
        self.bins[idx] as f64 / self.bin_width.as_secs_f64()
    }
}

/// Empirical CDF over delay samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayCdf {
    sorted: Vec<u64>,
}

impl DelayCdf {
    pub fn new(samples: &[u64]) -> Self {
        let mut sorted = samples.to_vec();
        sorted.sort_unstable();
        DelayCdf { sorted }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Fraction of samples `<= d`.
    pub fn fraction_le(&self, d: u64) -> f64 {
        if self.sorted.is_empty() {
            return 0.0;
        }
        let n = self.sorted.partition_point(|&x| x <= d);
        n as f64 / self.sorted.len() as f64
    }

    /// Nearest-rank quantile: the `ceil(q * n)`-th smallest sample.
    pub fn quantile(&self, q: f64) -> Option<u64> {
        if self.sorted.is_empty() || !(q > 0.0 && q <= 1.0) {
            return None;
        }
        let n = self.sorted.len();
        let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
        Some(self.sorted[rank - 1])
    }

    /// `(delay, fraction <= delay)` at every distinct sample.
    pub fn points(&self) -> Vec<(u64, f64)> {
        let n = self.sorted.len() as f64;
        let mut out: Vec<(u64, f64)> = Vec::new();
        for (i, &d) in self.sorted.iter().enumerate() {
            let frac = (i + 1) as f64 / n;
            match out.last_mut() {
                Some(last) if last.0 == d => last.1 = frac,
                _ => out.push((d, frac)),
            }
        }
        out
    }
}

/// `(high - low) / (high + low)`, 0 when both are 0.
pub fn differentiation_index(high: f64, low: f64) -> f64 {
    if high + low == 0.0 {
        0.0
    } else {
        (high - low) / (high + low)
    }
}

#[derive(Debug, Clone, Copy)]
struct LedgerEntry {
    flow_id: u32,
    created_at: SimTime,
    bytes: u32,
    counted: bool,
}

/// Collects frame events for every flow of a run.
#[derive(Debug, Clone)]
pub struct MetricsCollector {
    warmup: SimTime,
    end: SimTime,
    flows: BTreeMap<u32, FlowCounters>,
    series: BTreeMap<u32, ThroughputSeries>,
    ledger: HashMap<u64, LedgerEntry>,
}

impl MetricsCollector {
    pub fn new(
        flow_ids: impl IntoIterator<Item = u32>,
        warmup: SimTime,
        end: SimTime,
        bin_width: SimTime,
    ) -> Self {
        let mut flows = BTreeMap::new();
        let mut series = BTreeMap::new();
        for id in flow_ids {
            flows.insert(id, FlowCounters::default());
            series.insert(id, ThroughputSeries::new(warmup, end, bin_width));
        }
        MetricsCollector {
            warmup,
            end,
            flows,
            series,
            ledger: HashMap::new(),
        }
    }

    pub fn warmup(&self) -> SimTime {
        self.warmup
    }

    pub fn window(&self) -> SimTime {
        self.end.saturating_sub(self.warmup)
    }

    pub fn record(&mut self, event: FrameEvent) -> Result<()> {
        match event {
            FrameEvent::Generated {
                frame_id,
                flow_id,
                at,
                bytes,
            } => {
                let counted = at >= self.warmup;
                let flow = self
                    .flows
                    .get_mut(&flow_id)
                    .ok_or_else(|| SimError::Audit(format!("unknown flow {flow_id}")))?;
                if self
                    .ledger
                    .insert(
                        frame_id,
                        LedgerEntry {
                            flow_id,
                            created_at: at,
                            bytes,
                            counted,
                        },
                    )
                    .is_some()
                {
                    return Err(SimError::Audit(format!("frame {frame_id} generated twice")));
                }
                if counted {
                    flow.generated += 1;
                    flow.bytes_generated += bytes as u64;
                }
            }
            FrameEvent::Delivered { frame_id, at } => {
                let e = self.take(frame_id)?;
                let flow = self.flows.get_mut(&e.flow_id).expect("ledger flow exists");
                if e.counted {
                    flow.delivered += 1;
                    flow.bytes_delivered += e.bytes as u64;
                    flow.delay_samples.push((at - e.created_at).micros());
                }
                if at >= self.warmup && at < self.end {
                    flow.window_bytes_delivered += e.bytes as u64;
                    self.series
                        .get_mut(&e.flow_id)
                        .expect("series per flow")
                        .add(at, e.bytes as u64);
                }
            }
            FrameEvent::Dropped {
                frame_id, reason, ..
            } => {
                let e = self.take(frame_id)?;
                if e.counted {
                    self.flows
                        .get_mut(&e.flow_id)
                        .expect("ledger flow exists")
                        .bump(reason);
                }
            }
        }
        Ok(())
    }

    fn take(&mut self, frame_id: u64) -> Result<LedgerEntry> {
        self.ledger.remove(&frame_id).ok_or_else(|| {
            SimError::Audit(format!(
                "frame {frame_id} resolved but not outstanding (unknown or resolved twice)"
            ))
        })
    }

    /// Closes the books: counts outstanding frames as in flight and checks
    /// conservation for every flow.
    pub fn finish(mut self) -> Result<FlowReport> {
        for e in self.ledger.values() {
            if e.counted {
                self.flows
                    .get_mut(&e.flow_id)
                    .expect("ledger flow exists")
                    .in_flight += 1;
            }
        }
        for (id, f) in &self.flows {
            if !f.conserved() {
                return Err(SimError::Audit(format!(
                    "conservation violated for flow {id}: generated {} != delivered {} + dropped {} + in-flight {}",
                    f.generated,
                    f.delivered,
                    f.dropped(),
                    f.in_flight
                )));
            }
            let s = &self.series[id];
            if s.total() != f.window_bytes_delivered {
                return Err(SimError::Audit(format!(
                    "throughput bins for flow {id} sum to {} but {} bytes were delivered",
                    s.total(),
                    f.window_bytes_delivered
                )));
            }
        }
        Ok(FlowReport {
            warmup: self.warmup,
            end: self.end,
            flows: self.flows,
            series: self.series,
        })
    }
}

/// Final per-flow results of one run.
#[derive(Debug, Clone)]
pub struct FlowReport {
    pub warmup: SimTime,
    pub end: SimTime,
    pub flows: BTreeMap<u32, FlowCounters>,
    pub series: BTreeMap<u32, ThroughputSeries>,
}

impl FlowReport {
    pub fn window_secs(&self) -> f64 {
        self.end.saturating_sub(self.warmup).as_secs_f64()
    }

    /// Delivered bytes per second over the measurement window.
    pub fn throughput_bytes_per_s(&self, flow: u32) -> f64 {
        self.flows[&flow].window_bytes_delivered as f64 / self.window_secs()
    }

    /// Delivered over offered bits; absent when nothing was offered.
    pub fn normalized_throughput(&self, flow: u32) -> Option<f64> {
        let f = &self.flows[&flow];
        (f.bytes_generated > 0).then(|| f.bytes_delivered as f64 / f.bytes_generated as f64)
    }

    pub fn delay_cdf(&self, flow: u32) -> DelayCdf {
        DelayCdf::new(&self.flows[&flow].delay_samples)
    }

    pub fn delay_quantile(&self, flow: u32, q: f64) -> Option<u64> {
        self.delay_cdf(flow).quantile(q)
    }

    pub fn total(&self) -> FlowCounters {
        let mut t = FlowCounters::default();
        for f in self.flows.values() {
            t.generated += f.generated;
            t.delivered += f.delivered;
            t.dropped_queue += f.dropped_queue;
            t.dropped_retry += f.dropped_retry;
            t.dropped_unassociated += f.dropped_unassociated;
            t.dropped_wired += f.dropped_wired;
            t.in_flight += f.in_flight;
            t.bytes_generated += f.bytes_generated;
            t.bytes_delivered += f.bytes_delivered;
            t.window_bytes_delivered += f.window_bytes_delivered;
        }
        t
    }
}
