//! Range-disc radio medium and the wired gateway link.
//!
//! The channel is a binary disc: a transmitter is heard by every radio within
//! `range_m`, and any two transmissions that overlap in time at a receiver that
//! hears both destroy each other (no capture). Airtime follows the long-preamble
//! DSSS layout: `preamble + 8 * (payload + mac_overhead) / rate`.

use crate::error::{Result, SimError};
use crate::mobility::in_range;
use crate::time::SimTime;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioParams {
    pub data_rate_bps: u64,
    pub slot_us: u64,
    pub sifs_us: u64,
    pub difs_us: u64,
    pub preamble_us: u64,
    /// MAC header + FCS added to every data/management payload.
    pub mac_overhead_bytes: u32,
    pub ack_bytes: u32,
    pub range_m: f64,
    pub propagation_delay_us: u64,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            data_rate_bps: 1_000_000,
            slot_us: 20,
            sifs_us: 10,
            difs_us: 50,
            preamble_us: 192,
            mac_overhead_bytes: 28,
            ack_bytes: 14,
            range_m: 150.0,
            propagation_delay_us: 0,
        }
    }
}

fn bits_to_micros(bits: u64, rate_bps: u64) -> u64 {
    (bits * 1_000_000).div_ceil(rate_bps)
}

impl RadioParams {
    pub fn validate(&self) -> Result<()> {
        let pos = |key: &str, v: u64| {
            if v == 0 {
                Err(SimError::config(
                    format!("radio.{key}"),
                    "must be strictly positive",
                ))
            } else {
                Ok(())
            }
        };
        pos("data_rate_bps", self.data_rate_bps)?;
        pos("slot_us", self.slot_us)?;
        pos("sifs_us", self.sifs_us)?;
        pos("difs_us", self.difs_us)?;
        pos("preamble_us", self.preamble_us)?;
        if self.difs_us != self.sifs_us + 2 * self.slot_us {
            return Err(SimError::config(
                "radio.difs_us",
                format!(
                    "must equal sifs_us + 2 * slot_us ({})",
                    self.sifs_us + 2 * self.slot_us
                ),
            ));
        }
        if !(self.range_m.is_finite() && self.range_m > 0.0) {
            return Err(SimError::config("radio.range_m", "must be finite and > 0"));
        }
        if self.propagation_delay_us != 0 {
            return Err(SimError::config(
                "radio.propagation_delay_us",
                "only zero propagation delay is modelled",
            ));
        }
        Ok(())
    }

    pub fn slot(&self) -> SimTime {
        SimTime(self.slot_us)
    }

    pub fn sifs(&self) -> SimTime {
        SimTime(self.sifs_us)
    }

    pub fn difs(&self) -> SimTime {
        SimTime(self.difs_us)
    }

    /// Airtime of a data or management frame carrying `payload_bytes` of MSDU.
    pub fn frame_airtime(&self, payload_bytes: u32) -> Result<SimTime> {
        if !(1..=2304).contains(&payload_bytes) {
            return Err(SimError::InvalidParam(format!(
                "payload of {payload_bytes} bytes outside [1, 2304]"
            )));
        }
        let bits = 8 * (payload_bytes as u64 + self.mac_overhead_bytes as u64);
        Ok(SimTime(
            self.preamble_us + bits_to_micros(bits, self.data_rate_bps),
        ))
    }

    /// ACK frames carry no MSDU and no extra MAC overhead.
    pub fn ack_airtime(&self) -> SimTime {
        SimTime(self.preamble_us + bits_to_micros(8 * self.ack_bytes as u64, self.data_rate_bps))
    }

    /// Time a sender waits for an ACK after its data frame ends.
    pub fn ack_timeout(&self) -> SimTime {
        self.sifs() + self.ack_airtime() + self.slot()
    }
}

pub type TxId = u64;

/// Up to 64 radios, one bit each.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NodeSet(u64);

pub const MAX_RADIOS: usize = 64;

impl NodeSet {
    pub fn insert(&mut self, node: usize) {
        debug_assert!(node < MAX_RADIOS);
        self.0 |= 1 << node;
    }

    pub fn contains(&self, node: usize) -> bool {
        node < MAX_RADIOS && self.0 & (1 << node) != 0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        let bits = self.0;
        (0..MAX_RADIOS).filter(move |i| bits & (1 << i) != 0)
    }
}

/// One frame on the air.
#[derive(Debug, Clone)]
pub struct Transmission {
    pub id: TxId,
    pub transmitter: usize,
    pub start: SimTime,
    pub end: SimTime,
    pub origin: Position,
    /// Radios that heard the start of this transmission (includes the transmitter).
    pub listeners: NodeSet,
    /// Radios at which this transmission overlapped another one they could hear.
    pub corrupted: NodeSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reception {
    Success,
    Collision,
    OutOfRange,
}

/// Shared radio medium: active transmissions and per-radio carrier state.
#[derive(Debug)]
pub struct Medium {
    range_m: f64,
    active: Vec<Transmission>,
    heard: Vec<Vec<TxId>>,
    next_id: TxId,
}

impl Medium {
    pub fn new(radios: usize, range_m: f64) -> Self {
        assert!(radios <= MAX_RADIOS, "at most {MAX_RADIOS} radios");
        Medium {
            range_m,
            active: Vec::new(),
            heard: vec![Vec::new(); radios],
            next_id: 0,
        }
    }

    pub fn range_m(&self) -> f64 {
        self.range_m
    }

    /// Puts a frame on the air. `positions[i]` is radio `i`'s position at `start`;
    /// `None` marks an entity without a radio. Returns the id and the radios whose
    /// medium went from idle to busy.
    pub fn begin(
        &mut self,
        transmitter: usize,
        start: SimTime,
        end: SimTime,
        positions: &[Option<Position>],
    ) -> (TxId, Vec<usize>) {
        assert!(end > start, "transmission must have positive airtime");
        let origin = positions[transmitter].expect("transmitter has a radio");
        let id = self.next_id;
        self.next_id += 1;
        let mut listeners = NodeSet::default();
        let mut corrupted = NodeSet::default();
        let mut newly_busy = Vec::new();
        for (node, pos) in positions.iter().enumerate() {
            let Some(pos) = pos else { continue };
            if node != transmitter && !in_range(&origin, pos, self.range_m) {
                continue;
            }
            listeners.insert(node);
            if self.heard[node].is_empty() {
                newly_busy.push(node);
            } else {
                corrupted.insert(node);
                for other in &self.heard[node] {
                    if let Some(tx) = self.active.iter_mut().find(|t| t.id == *other) {
                        tx.corrupted.insert(node);
                    }
                }
            }
            self.heard[node].push(id);
        }
        self.active.push(Transmission {
            id,
            transmitter,
            start,
            end,
            origin,
            listeners,
            corrupted,
        });
        (id, newly_busy)
    }

    /// Takes a transmission off the air; returns it and the radios that went idle.
    pub fn end(&mut self, id: TxId) -> Option<(Transmission, Vec<usize>)> {
        let idx = self.active.iter().position(|t| t.id == id)?;
        let tx = self.active.remove(idx);
        let mut newly_idle = Vec::new();
        for node in tx.listeners.iter() {
            let heard = &mut self.heard[node];
            if let Some(p) = heard.iter().position(|h| *h == id) {
                heard.remove(p);
            }
            if heard.is_empty() {
                newly_idle.push(node);
            }
        }
        Some((tx, newly_idle))
    }

    /// Whether `listener` currently hears at least one transmission.
    pub fn is_busy(&self, listener: usize) -> bool {
        !self.heard[listener].is_empty()
    }

    /// Whether any transmission active at `at` originates within range of `listener_pos`.
    pub fn carrier_sensed(&self, listener_pos: &Position, at: SimTime) -> bool {
        self.active
            .iter()
            .any(|t| t.start <= at && at < t.end && in_range(&t.origin, listener_pos, self.range_m))
    }

    pub fn active(&self) -> &[Transmission] {
        &self.active
    }

    /// Outcome of `tx` at `receiver`, given both radios' positions when `tx` ended.
    pub fn resolve_reception(
        &self,
        receiver: usize,
        tx: &Transmission,
        receiver_pos_at_end: &Position,
        transmitter_pos_at_end: &Position,
    ) -> Reception {
        if receiver == tx.transmitter
            || !tx.listeners.contains(receiver)
            || !in_range(transmitter_pos_at_end, receiver_pos_at_end, self.range_m)
        {
            Reception::OutOfRange
        } else if tx.corrupted.contains(receiver) {
            Reception::Collision
        } else {
            Reception::Success
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WiredParams {
    pub rate_bps: u64,
    pub delay_us: u64,
    pub queue_capacity: usize,
}

impl Default for WiredParams {
    fn default() -> Self {
        WiredParams {
            rate_bps: 5_000_000,
            delay_us: 2_000,
            queue_capacity: 100,
        }
    }
}

impl WiredParams {
    pub fn validate(&self) -> Result<()> {
        if self.rate_bps == 0 {
            return Err(SimError::config("wired.rate_bps", "must be > 0"));
        }
        if self.queue_capacity == 0 {
            return Err(SimError::config("wired.queue_capacity", "must be > 0"));
        }
        Ok(())
    }
}

/// FIFO point-to-point link from a base station to the wired sink.
#[derive(Debug, Clone)]
pub struct WiredLink {
    params: WiredParams,
    busy_until: SimTime,
    /// Serialization end times of frames still in the link buffer.
    in_system: VecDeque<SimTime>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WiredOutcome {
    Delivered { at: SimTime },
    Dropped,
}

impl WiredLink {
    pub fn new(params: WiredParams) -> Self {
        WiredLink {
            params,
            busy_until: SimTime::ZERO,
            in_system: VecDeque::new(),
        }
    }

    pub fn serialization(&self, bytes: u32) -> SimTime {
        SimTime(bits_to_micros(8 * bytes as u64, self.params.rate_bps))
    }

    /// Queues `bytes` at `now`; the payload alone is serialized on the wire.
    pub fn enqueue(&mut self, now: SimTime, bytes: u32) -> WiredOutcome {
        while self.in_system.front().is_some_and(|&end| end <= now) {
            self.in_system.pop_front();
        }
        if self.in_system.len() >= self.params.queue_capacity {
            return WiredOutcome::Dropped;
        }
        let start = self.busy_until.max(now);
        let end = start + self.serialization(bytes);
        self.busy_until = end;
        self.in_system.push_back(end);
        WiredOutcome::Delivered {
            at: end + SimTime(self.params.delay_us),
        }
    }

    pub fn queued(&self) -> usize {
        self.in_system.len()
    }
}
