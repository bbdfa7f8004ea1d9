//! CBR sources with normally distributed packet sizes.

use crate::error::{Result, SimError};
use crate::sim::{RandomStream, MAX_PAYLOAD_BYTES, MIN_PAYLOAD_BYTES};
use crate::time::SimTime;
use serde::{Deserialize, Serialize};

/// Start offset added per flow id so sources do not all fire at the same instant.
pub const FLOW_STAGGER: SimTime = SimTime::from_millis(1);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub flow_id: u32,
    /// 802.1D user priority, 0..=7.
    pub priority: u8,
    /// Station ids as declared in the scenario.
    pub src: u32,
    pub dst: u32,
    pub size_mean_bytes: f64,
    pub size_std_bytes: f64,
    pub interval_us: u64,
    #[serde(default)]
    pub start_at_us: u64,
    /// `None` runs until the end of the simulation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_at_us: Option<u64>,
}

impl FlowSpec {
    pub fn validate(&self, key: &str) -> Result<()> {
        if self.priority > 7 {
            return Err(SimError::config(format!("{key}.priority"), "must be in 0..=7"));
        }
        if self.interval_us == 0 {
            return Err(SimError::config(format!("{key}.interval_us"), "must be > 0"));
        }
        if !(MIN_PAYLOAD_BYTES..=MAX_PAYLOAD_BYTES).contains(&self.size_mean_bytes) {
            return Err(SimError::config(
                format!("{key}.size_mean_bytes"),
                "must lie in [1, 2304]",
            ));
        }
        if !(self.size_std_bytes >= 0.0 && self.size_std_bytes.is_finite()) {
            return Err(SimError::config(format!("{key}.size_std_bytes"), "must be >= 0"));
        }
        if let Some(stop) = self.stop_at_us {
            if stop <= self.start_at_us {
                return Err(SimError::config(
                    format!("{key}.stop_at_us"),
                    "must be after start_at_us",
                ));
            }
        }
        Ok(())
    }

    /// Offered load in bits per second.
    pub fn offered_rate_bps(&self) -> f64 {
        8.0 * self.size_mean_bytes / (self.interval_us as f64 * 1e-6)
    }

    pub fn first_arrival(&self) -> SimTime {
        SimTime(self.start_at_us) + SimTime(FLOW_STAGGER.micros() * self.flow_id as u64)
    }

    /// Arrival instant of the `k`-th packet (0-based).
    pub fn arrival(&self, k: u64) -> SimTime {
        self.first_arrival() + SimTime(k * self.interval_us)
    }

    pub fn is_active_at(&self, t: SimTime) -> bool {
        t >= SimTime(self.start_at_us) && self.stop_at_us.is_none_or(|s| t < SimTime(s))
    }

    /// Packet size for the next arrival, rounded to whole bytes.
    pub fn draw_size(&self, rng: &mut RandomStream) -> Result<u32> {
        let x = rng.normal_truncated(
            self.size_mean_bytes,
            self.size_std_bytes,
            MIN_PAYLOAD_BYTES,
            MAX_PAYLOAD_BYTES,
        )?;
        Ok((x.round() as u32).clamp(MIN_PAYLOAD_BYTES as u32, MAX_PAYLOAD_BYTES as u32))
    }

    /// Copy with the inter-packet interval divided by `multiplier`.
    pub fn scaled(&self, multiplier: f64) -> FlowSpec {
        let interval = ((self.interval_us as f64) / multiplier).round().max(1.0) as u64;
        FlowSpec {
            interval_us: interval,
            ..self.clone()
        }
    }
}

/// A packet drawn from a source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arrival {
    pub at: SimTime,
    pub payload_bytes: u32,
}

/// Iterates the arrivals of one flow up to `horizon` (exclusive).
#[derive(Debug, Clone)]
pub struct TrafficSource {
    spec: FlowSpec,
    next_k: u64,
    horizon: SimTime,
}

impl TrafficSource {
    pub fn new(spec: FlowSpec, horizon: SimTime) -> Self {
        TrafficSource {
            spec,
            next_k: 0,
            horizon,
        }
    }

    pub fn spec(&self) -> &FlowSpec {
        &self.spec
    }

    /// Time of the next arrival, if any remains.
    pub fn peek(&self) -> Option<SimTime> {
        let t = self.spec.arrival(self.next_k);
        (t < self.horizon && self.spec.is_active_at(t)).then_some(t)
    }

    pub fn next_packet(&mut self, rng: &mut RandomStream) -> Result<Option<Arrival>> {
        let Some(at) = self.peek() else {
            return Ok(None);
        };
        self.next_k += 1;
        Ok(Some(Arrival {
            at,
            payload_bytes: self.spec.draw_size(rng)?,
        }))
    }
}
