//! Node motion along waypoint paths and base-station association state.

use crate::error::{Result, SimError};
use crate::phy::Position;
use crate::time::SimTime;
use serde::{Deserialize, Serialize};

/// Closed-disc range test.
pub fn in_range(a: &Position, b: &Position, range_m: f64) -> bool {
    a.distance(b) <= range_m
}

/// Constant-speed motion through a list of waypoints. With `repeat` the node
/// ping-pongs: first to last, back to first, and so on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaypointPath {
    pub waypoints: Vec<Position>,
    pub speed_mps: f64,
    #[serde(default)]
    pub repeat: bool,
}

impl WaypointPath {
    pub fn validate(&self, key: &str) -> Result<()> {
        if self.waypoints.is_empty() {
            return Err(SimError::config(
                format!("{key}.waypoints"),
                "at least one waypoint required",
            ));
        }
        if self.waypoints.iter().any(|p| !p.is_finite()) {
            return Err(SimError::config(
                format!("{key}.waypoints"),
                "coordinates must be finite",
            ));
        }
        if self.waypoints.windows(2).any(|w| w[0] == w[1]) {
            return Err(SimError::config(
                format!("{key}.waypoints"),
                "consecutive waypoints must differ",
            ));
        }
        if !(self.speed_mps.is_finite() && self.speed_mps > 0.0) {
            return Err(SimError::config(
                format!("{key}.speed_mps"),
                "must be finite and > 0",
            ));
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| w[0].distance(&w[1]))
            .sum()
    }

    /// Position after travelling `d` metres forward along the polyline.
    fn point_at_distance(&self, mut d: f64) -> Position {
        for w in self.waypoints.windows(2) {
            let seg = w[0].distance(&w[1]);
            if d <= seg {
                let f = d / seg;
                return Position::new(
                    w[0].x + f * (w[1].x - w[0].x),
                    w[0].y + f * (w[1].y - w[0].y),
                );
            }
            d -= seg;
        }
        *self.waypoints.last().expect("validated non-empty")
    }

    pub fn position_at(&self, t: SimTime) -> Position {
        let len = self.length();
        if len == 0.0 {
            return self.waypoints[0];
        }
        let travelled = self.speed_mps * t.as_secs_f64();
        let d = if self.repeat {
            let r = travelled % (2.0 * len);
            if r > len {
                2.0 * len - r
            } else {
                r
            }
        } else {
            travelled.min(len)
        };
        self.point_at_distance(d)
    }

    /// Straight-line legs `(t_start, from, to, duration_s)` covering `[0, horizon]`.
    fn legs(&self, horizon_s: f64) -> Vec<(f64, Position, Position, f64)> {
        let mut out = Vec::new();
        if self.waypoints.len() < 2 {
            return out;
        }
        let forward: Vec<(Position, Position)> =
            self.waypoints.windows(2).map(|w| (w[0], w[1])).collect();
        let backward: Vec<(Position, Position)> =
            forward.iter().rev().map(|&(a, b)| (b, a)).collect();
        let mut t = 0.0;
        let mut pass = 0usize;
        while t <= horizon_s {
            let segs = if pass.is_multiple_of(2) { &forward } else { &backward };
            for &(a, b) in segs {
                let dur = a.distance(&b) / self.speed_mps;
                out.push((t, a, b, dur));
                t += dur;
            }
            if !self.repeat {
                break;
            }
            pass += 1;
        }
        out
    }

    /// Instants in `[0, horizon]` (seconds) at which the node is exactly `range_m`
    /// from `center`, in ascending order.
    pub fn range_crossings(&self, center: &Position, range_m: f64, horizon: SimTime) -> Vec<f64> {
        let horizon_s = horizon.as_secs_f64();
        let mut out = Vec::new();
        for (t0, a, b, dur) in self.legs(horizon_s) {
            let vx = (b.x - a.x) / dur;
            let vy = (b.y - a.y) / dur;
            let px = a.x - center.x;
            let py = a.y - center.y;
            let qa = vx * vx + vy * vy;
            let qb = 2.0 * (vx * px + vy * py);
            let qc = px * px + py * py - range_m * range_m;
            let disc = qb * qb - 4.0 * qa * qc;
            if qa == 0.0 || disc < 0.0 {
                continue;
            }
            let sq = disc.sqrt();
            for tau in [(-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa)] {
                if (0.0..=dur).contains(&tau) {
                    let t = t0 + tau;
                    if t <= horizon_s {
                        out.push(t);
                    }
                }
            }
        }
        out.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        out.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        out
    }
}

/// How a radio moves.
#[derive(Debug, Clone, PartialEq)]
pub enum Mobility {
    Static(Position),
    Path(WaypointPath),
}

impl Mobility {
    pub fn position_at(&self, t: SimTime) -> Position {
        match self {
            Mobility::Static(p) => *p,
            Mobility::Path(path) => path.position_at(t),
        }
    }

    pub fn is_mobile(&self) -> bool {
        matches!(self, Mobility::Path(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Handshake {
    None,
    RequestSent,
    Complete,
}

/// Association of one station. `current_bs` is set from the moment a
/// reassociation request is issued; data may flow only once the handshake is
/// complete.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssociationState {
    pub current_bs: Option<usize>,
    pub handshake: Handshake,
    pub handshake_started_at: SimTime,
}

impl Default for AssociationState {
    fn default() -> Self {
        AssociationState {
            current_bs: None,
            handshake: Handshake::None,
            handshake_started_at: SimTime::ZERO,
        }
    }
}

impl AssociationState {
    pub fn can_send_data(&self) -> bool {
        self.current_bs.is_some() && self.handshake == Handshake::Complete
    }

    pub fn associated_to(&self, bs: usize) -> bool {
        self.current_bs == Some(bs) && self.handshake == Handshake::Complete
    }
}

/// What an association step decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssociationAction {
    Stay,
    /// Lost coverage of the given base station.
    Disassociate { from: usize },
    /// Start a handshake with the given base station.
    Request { to: usize },
    /// Lost coverage and immediately found another base station.
    Switch { from: usize, to: usize },
}

/// Picks a base station among those in range: the current one if still
/// reachable, else the nearest (lowest index on ties).
fn choose_bs(
    station: &Position,
    bss: &[(usize, Position)],
    range_m: f64,
    current: Option<usize>,
) -> Option<usize> {
    let candidates: Vec<(usize, f64)> = bss
        .iter()
        .filter(|(_, p)| in_range(station, p, range_m))
        .map(|(id, p)| (*id, station.distance(p)))
        .collect();
    if let Some(cur) = current {
        if candidates.iter().any(|(id, _)| *id == cur) {
            return Some(cur);
        }
    }
    candidates
        .into_iter()
        .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite").then(a.0.cmp(&b.0)))
        .map(|(id, _)| id)
}

/// Decides the association transition for a station at its current position.
/// `handshake_timeout` bounds how long a request may stay unanswered.
pub fn association_step(
    state: &AssociationState,
    station: &Position,
    bss: &[(usize, Position)],
    range_m: f64,
    now: SimTime,
    handshake_timeout: SimTime,
) -> AssociationAction {
    let reachable = |bs: usize| {
        bss.iter()
            .find(|(id, _)| *id == bs)
            .is_some_and(|(_, p)| in_range(station, p, range_m))
    };
    match state.current_bs {
        Some(bs) if !reachable(bs) => match choose_bs(station, bss, range_m, None) {
            Some(to) => AssociationAction::Switch { from: bs, to },
            None => AssociationAction::Disassociate { from: bs },
        },
        Some(bs)
            if state.handshake == Handshake::RequestSent
                && now >= state.handshake_started_at + handshake_timeout =>
        {
            AssociationAction::Switch { from: bs, to: bs }
        }
        Some(_) => AssociationAction::Stay,
        None => match choose_bs(station, bss, range_m, None) {
            Some(to) => AssociationAction::Request { to },
            None => AssociationAction::Stay,
        },
    }
}
