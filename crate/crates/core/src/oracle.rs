//! Fixed-point saturation model of DCF basic access for `n` homogeneous
//! stations (Bianchi's Markov-chain model), used to validate the MAC engine.

use crate::error::{Result, SimError};
use crate::phy::RadioParams;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaturationModelParams {
    pub n: u32,
    /// Initial window `cw_min + 1`.
    pub w: u32,
    /// Number of doublings from `cw_min` to `cw_max`.
    pub m: u32,
    pub payload_bytes: u32,
    pub radio: RadioParams,
}

impl SaturationModelParams {
    /// Legacy DCF defaults (W = 32, m = 5).
    pub fn dcf(n: u32, payload_bytes: u32, radio: RadioParams) -> Self {
        SaturationModelParams {
            n,
            w: 32,
            m: 5,
            payload_bytes,
            radio,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 1 || self.w < 1 {
            return Err(SimError::InvalidParam(
                "saturation model needs n >= 1 and w >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixedPoint {
    /// Per-slot transmission probability of a station.
    pub tau: f64,
    /// Conditional collision probability.
    pub p: f64,
}

/// Collision probability seen by one station when all others transmit w.p. `tau`.
pub fn collision_probability(tau: f64, n: u32) -> f64 {
    1.0 - (1.0 - tau).powi(n as i32 - 1)
}

/// Transmission probability as a function of `p`. Written with the geometric
/// sum expanded so it stays finite at `p = 1/2`.
pub fn tau_of_p(p: f64, w: u32, m: u32) -> f64 {
    let w = w as f64;
    let sum: f64 = (0..m).map(|i| (2.0 * p).powi(i as i32)).sum();
    2.0 / (w + 1.0 + p * w * sum)
}

const MAX_BISECTIONS: u32 = 2_000;
const RESIDUAL_TOL: f64 = 1e-12;

/// Solves `tau = tau_of_p(p(tau))` by bisection on `(0, 1)`.
pub fn solve_tau(params: &SaturationModelParams) -> Result<FixedPoint> {
    params.validate()?;
    let f = |tau: f64| tau - tau_of_p(collision_probability(tau, params.n), params.w, params.m);
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for i in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let r = f(mid);
        if r.abs() < RESIDUAL_TOL || hi - lo <= f64::EPSILON * mid {
            if r.abs() >= RESIDUAL_TOL {
                return Err(SimError::NoConvergence { iterations: i });
            }
            return Ok(FixedPoint {
                tau: mid,
                p: collision_probability(mid, params.n),
            });
        }
        if r < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(SimError::NoConvergence {
        iterations: MAX_BISECTIONS,
    })
}

/// Durations (µs) of the three kinds of virtual slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlotDurations {
    pub empty: f64,
    pub success: f64,
    pub collision: f64,
}

pub fn slot_durations(params: &SaturationModelParams) -> Result<SlotDurations> {
    let r = &params.radio;
    let airtime = r.frame_airtime(params.payload_bytes)?.micros() as f64;
    Ok(SlotDurations {
        empty: r.slot_us as f64,
        success: airtime + (r.sifs_us + r.ack_airtime().micros() + r.difs_us) as f64,
        collision: airtime + r.difs_us as f64,
    })
}

/// Saturation throughput (payload bits per second) at a given `tau`.
pub fn throughput_at_tau(params: &SaturationModelParams, tau: f64) -> Result<f64> {
    let d = slot_durations(params)?;
    let n = params.n as i32;
    let p_tr = 1.0 - (1.0 - tau).powi(n);
    if p_tr == 0.0 {
        return Ok(0.0);
    }
    let p_s = n as f64 * tau * (1.0 - tau).powi(n - 1) / p_tr;
    let mean_slot = (1.0 - p_tr) * d.empty + p_tr * p_s * d.success + p_tr * (1.0 - p_s) * d.collision;
    let bits = 8.0 * params.payload_bytes as f64;
    Ok(p_tr * p_s * bits / (mean_slot * 1e-6))
}

pub fn saturation_throughput_bps(params: &SaturationModelParams) -> Result<f64> {
    let fp = solve_tau(params)?;
    throughput_at_tau(params, fp.tau)
}
