//! Run summaries, CSV tables, seed-sweep aggregation and the DCF validation
//! report. Everything here is a pure function of a finished run so outputs
//! are byte-stable for a given scenario and seed.

use crate::engine::{run_scenario, RoamKind, RunOptions, RunOutput};
use crate::error::{Result, SimError};
use crate::mac::{classify, AccessCategory};
use crate::metrics::{DelayCdf, FlowCounters};
use crate::oracle::{solve_tau, throughput_at_tau, SaturationModelParams};
use crate::scenario::{saturation_scenario, Scenario};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

pub const SUMMARY_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSummary {
    pub flow_id: u32,
    pub priority: u8,
    pub access_category: AccessCategory,
    pub offered_bps: f64,
    pub throughput_bytes_per_s: f64,
    pub throughput_bps: f64,
    pub normalized_throughput: Option<f64>,
    pub generated: u64,
    pub delivered: u64,
    pub dropped_queue: u64,
    pub dropped_retry: u64,
    pub dropped_unassociated: u64,
    pub dropped_wired: u64,
    pub dropped_total: u64,
    pub in_flight: u64,
    pub delay_p50_us: Option<u64>,
    pub delay_p90_us: Option<u64>,
    pub delay_p99_us: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub generated: u64,
    pub delivered: u64,
    pub dropped_queue: u64,
    pub dropped_retry: u64,
    pub dropped_unassociated: u64,
    pub dropped_wired: u64,
    pub dropped_total: u64,
    pub in_flight: u64,
}

impl From<&FlowCounters> for Totals {
    fn from(c: &FlowCounters) -> Self {
        Totals {
            generated: c.generated,
            delivered: c.delivered,
            dropped_queue: c.dropped_queue,
            dropped_retry: c.dropped_retry,
            dropped_unassociated: c.dropped_unassociated,
            dropped_wired: c.dropped_wired,
            dropped_total: c.dropped(),
            in_flight: c.in_flight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoamRecord {
    pub time_us: u64,
    pub station: u32,
    pub bs: u32,
    pub event: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoamingSummary {
    pub disassociations: u64,
    pub handshakes_started: u64,
    pub handshakes_completed: u64,
    pub handshakes_aborted: u64,
    pub events: Vec<RoamRecord>,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: u32,
    pub scenario: String,
    pub scenario_hash: String,
    pub seed: u64,
    pub mac_mode: String,
    pub duration_s: f64,
    pub warmup_s: f64,
    pub load_multiplier: f64,
    pub flows: Vec<FlowSummary>,
    pub totals: Totals,
    pub roaming: RoamingSummary,
}

impl RunSummary {
    pub fn flow(&self, flow_id: u32) -> Option<&FlowSummary> {
        self.flows.iter().find(|f| f.flow_id == flow_id)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }
}

fn roam_name(k: RoamKind) -> &'static str {
    match k {
        RoamKind::Disassociated => "disassociated",
        RoamKind::HandshakeAborted => "handshake-aborted",
        RoamKind::HandshakeStarted => "handshake-started",
        RoamKind::HandshakeComplete => "handshake-complete",
    }
}

pub fn summarize(scenario: &Scenario, out: &RunOutput) -> Result<RunSummary> {
    let report = &out.report;
    let mut flows = Vec::new();
    for spec in &out.flows {
        let c = &report.flows[&spec.flow_id];
        let cdf = report.delay_cdf(spec.flow_id);
        let bytes_per_s = report.throughput_bytes_per_s(spec.flow_id);
        flows.push(FlowSummary {
            flow_id: spec.flow_id,
            priority: spec.priority,
            access_category: classify(spec.priority)?,
            offered_bps: spec.offered_rate_bps(),
            throughput_bytes_per_s: bytes_per_s,
            throughput_bps: 8.0 * bytes_per_s,
            normalized_throughput: report.normalized_throughput(spec.flow_id),
            generated: c.generated,
            delivered: c.delivered,
            dropped_queue: c.dropped_queue,
            dropped_retry: c.dropped_retry,
            dropped_unassociated: c.dropped_unassociated,
            dropped_wired: c.dropped_wired,
            dropped_total: c.dropped(),
            in_flight: c.in_flight,
            delay_p50_us: cdf.quantile(0.5),
            delay_p90_us: cdf.quantile(0.9),
            delay_p99_us: cdf.quantile(0.99),
        });
    }
    let count = |k| out.roaming.iter().filter(|e| e.kind == k).count() as u64;
    let roaming = RoamingSummary {
        disassociations: count(RoamKind::Disassociated),
        handshakes_started: count(RoamKind::HandshakeStarted),
        handshakes_completed: count(RoamKind::HandshakeComplete),
        handshakes_aborted: count(RoamKind::HandshakeAborted),
        events: out
            .roaming
            .iter()
            .map(|e| RoamRecord {
                time_us: e.at.micros(),
                station: e.station,
                bs: e.bs,
                event: roam_name(e.kind).to_string(),
            })
            .collect(),
    };
    Ok(RunSummary {
        schema: SUMMARY_SCHEMA,
        scenario: scenario.name.clone(),
        scenario_hash: scenario.hash(),
        seed: out.seed,
        mac_mode: crate::engine::mode_name(scenario.mac_mode).to_string(),
        duration_s: scenario.duration_s,
        warmup_s: scenario.warmup_s,
        load_multiplier: scenario.load_multiplier,
        flows,
        totals: Totals::from(&report.total()),
        roaming,
    })
}

/// `throughput.csv`: one row per (bin, flow).
pub fn throughput_csv(out: &RunOutput) -> String {
    let mut s = String::from("time_s,flow_id,bytes,bps\n");
    let Some(first) = out.report.series.values().next() else {
        return s;
    };
    let width = first.bin_width.as_secs_f64();
    for i in 0..first.bins.len() {
        for (flow, series) in &out.report.series {
            let bytes = series.bins[i];
            let _ = writeln!(
                s,
                "{},{},{},{}",
                series.bin_start(i).as_secs_f64(),
                flow,
                bytes,
                8.0 * bytes as f64 / width
            );
        }
    }
    s
}

/// `delays.csv`: one row per delivered packet, in delivery order per flow.
pub fn delays_csv(out: &RunOutput) -> String {
    let mut s = String::from("flow_id,delay_us\n");
    for (flow, c) in &out.report.flows {
        for d in &c.delay_samples {
            let _ = writeln!(s, "{flow},{d}");
        }
    }
    s
}

/// `delay_cdf.csv` built from per-flow delay samples.
pub fn delay_cdf_csv(samples: &BTreeMap<u32, Vec<u64>>) -> String {
    let mut s = String::from("flow_id,delay_us,fraction\n");
    for (flow, v) in samples {
        for (d, f) in DelayCdf::new(v).points() {
            let _ = writeln!(s, "{flow},{d},{f}");
        }
    }
    s
}

pub fn delay_samples(out: &RunOutput) -> BTreeMap<u32, Vec<u64>> {
    out.report
        .flows
        .iter()
        .map(|(id, c)| (*id, c.delay_samples.clone()))
        .collect()
}

/// `events.csv` from the run trace.
pub fn events_csv(out: &RunOutput) -> String {
    let mut s = String::from("time_us,station,event,frame_id,flow_id,reason\n");
    let opt = |v: Option<String>| v.unwrap_or_default();
    for e in &out.trace {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            e.time.micros(),
            e.station,
            e.event,
            opt(e.frame_id.map(|v| v.to_string())),
            opt(e.flow_id.map(|v| v.to_string())),
            e.reason
        );
    }
    s
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> MeanStd {
        if xs.is_empty() {
            return MeanStd {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFlow {
    pub flow_id: u32,
    pub throughput_bytes_per_s: MeanStd,
    pub throughput_bps: MeanStd,
    pub normalized_throughput: MeanStd,
    pub delivered: MeanStd,
    pub dropped_total: MeanStd,
    pub delay_p50_us: MeanStd,
    pub delay_p99_us: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub schema: u32,
    pub scenario: String,
    pub scenario_hash: String,
    pub seeds: Vec<u64>,
    pub flows: Vec<SweepFlow>,
    pub total_dropped: MeanStd,
    pub total_generated: MeanStd,
}

/// Aggregates per-seed summaries of the same scenario.
pub fn aggregate(runs: &[RunSummary]) -> Result<SweepSummary> {
    let first = runs
        .first()
        .ok_or_else(|| SimError::InvalidParam("sweep needs at least one seed".into()))?;
    if runs.iter().any(|r| r.scenario_hash != first.scenario_hash) {
        return Err(SimError::InvalidParam(
            "sweep runs come from different scenarios".into(),
        ));
    }
    let col = |f: &dyn Fn(&RunSummary) -> f64| MeanStd::of(&runs.iter().map(f).collect::<Vec<_>>());
    let mut flows = Vec::new();
    for fs in &first.flows {
        let id = fs.flow_id;
        let get = |r: &RunSummary| r.flow(id).expect("same scenario, same flows").clone();
        let q = |v: Option<u64>| v.map_or(f64::NAN, |x| x as f64);
        flows.push(SweepFlow {
            flow_id: id,
            throughput_bytes_per_s: col(&|r| get(r).throughput_bytes_per_s),
            throughput_bps: col(&|r| get(r).throughput_bps),
            normalized_throughput: col(&|r| get(r).normalized_throughput.unwrap_or(f64::NAN)),
            delivered: col(&|r| get(r).delivered as f64),
            dropped_total: col(&|r| get(r).dropped_total as f64),
            delay_p50_us: col(&|r| q(get(r).delay_p50_us)),
            delay_p99_us: col(&|r| q(get(r).delay_p99_us)),
        });
    }
    Ok(SweepSummary {
        schema: SUMMARY_SCHEMA,
        scenario: first.scenario.clone(),
        scenario_hash: first.scenario_hash.clone(),
        seeds: runs.iter().map(|r| r.seed).collect(),
        flows,
        total_dropped: col(&|r| r.totals.dropped_total as f64),
        total_generated: col(&|r| r.totals.generated as f64),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcfValidation {
    pub stations: u32,
    pub payload_bytes: u32,
    pub seed: u64,
    pub measure_s: f64,
    pub tau: f64,
    pub collision_probability: f64,
    pub analytic_bps: f64,
    pub simulated_bps: f64,
    pub relative_error: f64,
    /// Fraction of data transmissions that went unacknowledged.
    pub simulated_collision_probability: f64,
}

/// Saturated DCF run against the fixed-point model.
pub fn validate_dcf(n: u32, payload_bytes: u32, seed: u64, measure_s: f64) -> Result<DcfValidation> {
    if n < 2 {
        return Err(SimError::config("stations", "validate-dcf needs at least 2 stations"));
    }
    let scenario = saturation_scenario(n, payload_bytes, measure_s);
    let out = run_scenario(&scenario, seed, RunOptions::default())?;
    let simulated_bps = 8.0 * out.report.total().window_bytes_delivered as f64 / out.report.window_secs();
    let params = SaturationModelParams::dcf(n, payload_bytes, scenario.radio.clone());
    let fp = solve_tau(&params)?;
    let analytic_bps = throughput_at_tau(&params, fp.tau)?;
    Ok(DcfValidation {
        stations: n,
        payload_bytes,
        seed,
        measure_s,
        tau: fp.tau,
        collision_probability: fp.p,
        analytic_bps,
        simulated_bps,
        relative_error: (simulated_bps - analytic_bps).abs() / analytic_bps,
        simulated_collision_probability: out.stats.ack_timeouts as f64
            / out.stats.data_tx_attempts.max(1) as f64,
    })
}

/// Summary rebuilt from stored CSVs by `sim report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFlow {
    pub flow_id: u32,
    pub delivered: u64,
    pub bytes_delivered: u64,
    pub mean_bps: f64,
    pub delay_p50_us: Option<u64>,
    pub delay_p90_us: Option<u64>,
    pub delay_p99_us: Option<u64>,
    pub drops: BTreeMap<String, u64>,
}

/// Rebuilds per-flow figures from raw rows. `throughput` rows are
/// `(time_s, flow_id, bytes)`; `drops` are `(flow_id, reason)` from a trace.
pub fn report_from_raw(
    delays: &BTreeMap<u32, Vec<u64>>,
    throughput: &[(f64, u32, u64)],
    drops: &[(u32, String)],
) -> Vec<ReportFlow> {
    let mut ids: Vec<u32> = delays.keys().copied().collect();
    ids.extend(throughput.iter().map(|r| r.1));
    ids.sort_unstable();
    ids.dedup();
    let bins: Vec<f64> = {
        let mut t: Vec<f64> = throughput.iter().map(|r| r.0).collect();
        t.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        t.dedup();
        t
    };
    let span = match (bins.first(), bins.get(1)) {
        (Some(a), Some(b)) => (b - a) * bins.len() as f64,
        (Some(_), None) => 1.0,
        _ => f64::NAN,
    };
    ids.into_iter()
        .map(|id| {
            let empty = Vec::new();
            let samples = delays.get(&id).unwrap_or(&empty);
            let cdf = DelayCdf::new(samples);
            let bytes: u64 = throughput.iter().filter(|r| r.1 == id).map(|r| r.2).sum();
            let mut d = BTreeMap::new();
            for (_, reason) in drops.iter().filter(|r| r.0 == id) {
                *d.entry(reason.clone()).or_insert(0) += 1;
            }
            ReportFlow {
                flow_id: id,
                delivered: samples.len() as u64,
                bytes_delivered: bytes,
                mean_bps: 8.0 * bytes as f64 / span,
                delay_p50_us: cdf.quantile(0.5),
                delay_p90_us: cdf.quantile(0.9),
                delay_p99_us: cdf.quantile(0.99),
                drops: d,
            }
        })
        .collect()
}
