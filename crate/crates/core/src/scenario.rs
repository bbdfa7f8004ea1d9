//! Scenario configuration: JSON schema, validation, and the built-in presets.
//!
//! A scenario file is a single JSON document with `"schema": 1`. Omitted
//! optional keys take the defaults below; [`Scenario::to_canonical_json`]
//! writes every key back out so a loaded file round-trips exactly.

use crate::error::{Result, SimError};
use crate::mac::{dcf_mode_params, AccessCategory, AccessCategoryParams, MacMode};
use crate::mobility::WaypointPath;
use crate::phy::{Position, RadioParams, WiredParams, MAX_RADIOS};
use crate::time::SimTime;
use crate::traffic::FlowSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;
pub const PRESETS: [&str; 3] = ["A", "B", "C"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Qsta,
    Bs,
    WiredSink,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationSpec {
    pub id: u32,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<Position>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<WaypointPath>,
}

/// Per-category overrides on top of the reference EDCA (or DCF) parameters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aifsn: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cw_min: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cw_max: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub txop_limit_us: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_limit: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queue_capacity: Option<usize>,
}

impl AcOverride {
    fn apply(&self, base: &mut AccessCategoryParams) {
        if let Some(v) = self.aifsn {
            base.aifsn = v;
        }
        if let Some(v) = self.cw_min {
            base.cw_min = v;
        }
        if let Some(v) = self.cw_max {
            base.cw_max = v;
        }
        if let Some(v) = self.txop_limit_us {
            base.txop_limit_us = v;
        }
        if let Some(v) = self.retry_limit {
            base.retry_limit = v;
        }
        if let Some(v) = self.queue_capacity {
            base.queue_capacity = v;
        }
    }
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}
fn default_warmup() -> f64 {
    5.0
}
fn default_load() -> f64 {
    1.0
}
fn default_mode() -> MacMode {
    MacMode::Edcf
}
fn default_tick() -> u64 {
    10_000
}
fn default_handshake_timeout() -> u64 {
    500_000
}
fn default_bin() -> u64 {
    1_000_000
}
fn default_mgmt_bytes() -> u32 {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_schema")]
    pub schema: u32,
    pub name: String,
    pub duration_s: f64,
    #[serde(default = "default_warmup")]
    pub warmup_s: f64,
    #[serde(default = "default_mode")]
    pub mac_mode: MacMode,
    /// Divides every flow's inter-packet interval.
    #[serde(default = "default_load")]
    pub load_multiplier: f64,
    /// Saturated sources and unbounded retries, for checking against the
    /// analytic saturation model.
    #[serde(default)]
    pub oracle_mode: bool,
    #[serde(default)]
    pub radio: RadioParams,
    #[serde(default)]
    pub wired: WiredParams,
    #[serde(default = "default_tick")]
    pub mobility_tick_us: u64,
    #[serde(default = "default_handshake_timeout")]
    pub handshake_timeout_us: u64,
    #[serde(default = "default_mgmt_bytes")]
    pub mgmt_frame_bytes: u32,
    #[serde(default = "default_bin")]
    pub throughput_bin_us: u64,
    #[serde(default)]
    pub ac_overrides: BTreeMap<AccessCategory, AcOverride>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dcf_override: Option<AcOverride>,
    pub stations: Vec<StationSpec>,
    pub flows: Vec<FlowSpec>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario> {
        let sc: Scenario = serde_json::from_str(text)?;
        sc.validate()?;
        Ok(sc)
    }

    /// Pretty JSON with every field materialized.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// SHA-256 of the compact canonical serialization.
    pub fn hash(&self) -> String {
        let compact = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(&compact))
    }

    pub fn duration(&self) -> SimTime {
        SimTime::from_secs_f64(self.duration_s)
    }

    pub fn warmup(&self) -> SimTime {
        SimTime::from_secs_f64(self.warmup_s)
    }

    /// Effective per-category parameters after overrides.
    pub fn ac_params(&self) -> [AccessCategoryParams; 4] {
        AccessCategory::ALL.map(|ac| {
            let mut p = AccessCategoryParams::edca_default(ac);
            if let Some(o) = self.ac_overrides.get(&ac) {
                o.apply(&mut p);
            }
            if self.oracle_mode {
                p.retry_limit = u32::MAX;
            }
            p
        })
    }

    pub fn dcf_params(&self) -> AccessCategoryParams {
        let mut p = dcf_mode_params();
        if let Some(o) = &self.dcf_override {
            o.apply(&mut p);
        }
        if self.oracle_mode {
            p.retry_limit = u32::MAX;
        }
        p
    }

    /// Flows with the load multiplier applied.
    pub fn effective_flows(&self) -> Vec<FlowSpec> {
        self.flows
            .iter()
            .map(|f| {
                if self.load_multiplier == 1.0 {
                    f.clone()
                } else {
                    f.scaled(self.load_multiplier)
                }
            })
            .collect()
    }

    pub fn station(&self, id: u32) -> Option<&StationSpec> {
        self.stations.iter().find(|s| s.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(SimError::config(
                "schema",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema),
            ));
        }
        if !(self.warmup_s.is_finite() && self.warmup_s >= 0.0) {
            return Err(SimError::config("warmup_s", "must be >= 0"));
        }
        if !(self.duration_s.is_finite() && self.duration_s > self.warmup_s) {
            return Err(SimError::config("duration_s", "must exceed warmup_s"));
        }
        if self.duration_s > 1e7 {
            return Err(SimError::config("duration_s", "runs are bounded to 1e7 s"));
        }
        if !(self.load_multiplier.is_finite() && self.load_multiplier > 0.0) {
            return Err(SimError::config("load_multiplier", "must be > 0"));
        }
        if self.mobility_tick_us == 0 {
            return Err(SimError::config("mobility_tick_us", "must be > 0"));
        }
        if self.throughput_bin_us == 0 {
            return Err(SimError::config("throughput_bin_us", "must be > 0"));
        }
        if !(1..=2304).contains(&self.mgmt_frame_bytes) {
            return Err(SimError::config("mgmt_frame_bytes", "must lie in [1, 2304]"));
        }
        self.radio.validate()?;
        self.wired.validate()?;
        for p in self.ac_params() {
            p.validate()?;
        }
        self.dcf_params().validate()?;

        let mut ids = BTreeSet::new();
        let mut radios = 0usize;
        let mut sinks = 0usize;
        let mut bss = 0usize;
        for (i, s) in self.stations.iter().enumerate() {
            let key = format!("stations[{i}]");
            if !ids.insert(s.id) {
                return Err(SimError::config(
                    format!("{key}.id"),
                    format!("duplicate station id {}", s.id),
                ));
            }
            match s.role {
                Role::WiredSink => {
                    sinks += 1;
                    if s.position.is_some() || s.path.is_some() {
                        return Err(SimError::config(
                            key,
                            "wired sink takes neither position nor path",
                        ));
                    }
                }
                Role::Bs => {
                    bss += 1;
                    radios += 1;
                    if s.path.is_some() {
                        return Err(SimError::config(format!("{key}.path"), "base stations are static"));
                    }
                    match s.position {
                        Some(p) if p.is_finite() => {}
                        _ => {
                            return Err(SimError::config(
                                format!("{key}.position"),
                                "base station needs a finite position",
                            ))
                        }
                    }
                }
                Role::Qsta => {
                    radios += 1;
                    match (&s.position, &s.path) {
                        (Some(p), None) if p.is_finite() => {}
                        (None, Some(path)) => path.validate(&format!("{key}.path"))?,
                        (Some(_), None) => {
                            return Err(SimError::config(
                                format!("{key}.position"),
                                "coordinates must be finite",
                            ))
                        }
                        _ => {
                            return Err(SimError::config(
                                key,
                                "station needs exactly one of `position` or `path`",
                            ))
                        }
                    }
                }
            }
        }
        if bss == 0 {
            return Err(SimError::config("stations", "at least one base station required"));
        }
        if sinks > 1 {
            return Err(SimError::config("stations", "at most one wired sink"));
        }
        if radios > MAX_RADIOS {
            return Err(SimError::config(
                "stations",
                format!("at most {MAX_RADIOS} radios supported"),
            ));
        }

        let mut flow_ids = BTreeSet::new();
        for (i, f) in self.flows.iter().enumerate() {
            let key = format!("flows[{i}]");
            f.validate(&key)?;
            if !flow_ids.insert(f.flow_id) {
                return Err(SimError::config(
                    format!("{key}.flow_id"),
                    format!("duplicate flow id {}", f.flow_id),
                ));
            }
            match self.station(f.src) {
                Some(s) if s.role == Role::Qsta => {}
                Some(_) => {
                    return Err(SimError::config(
                        format!("{key}.src"),
                        "flow source must be a QSTA",
                    ))
                }
                None => {
                    return Err(SimError::config(
                        format!("{key}.src"),
                        format!("unknown station {}", f.src),
                    ))
                }
            }
            match self.station(f.dst) {
                Some(s) if s.role == Role::WiredSink => {}
                Some(_) => {
                    return Err(SimError::config(
                        format!("{key}.dst"),
                        "flows terminate at the wired sink (reached through a base station)",
                    ))
                }
                None => {
                    return Err(SimError::config(
                        format!("{key}.dst"),
                        format!("unknown station {}", f.dst),
                    ))
                }
            }
        }
        if self.oracle_mode {
            let mut srcs = BTreeSet::new();
            for (i, f) in self.flows.iter().enumerate() {
                if !srcs.insert(f.src) {
                    return Err(SimError::config(
                        format!("flows[{i}].src"),
                        "oracle mode allows one saturated flow per station",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Loads a preset by name (`A`, `B`, `C`, case-insensitive) or a scenario file.
pub fn load_scenario(arg: &str) -> Result<Scenario> {
    if let Some(sc) = preset(arg) {
        return Ok(sc);
    }
    let path = Path::new(arg);
    if path.exists() {
        let text = std::fs::read_to_string(path)?;
        return Scenario::from_json(&text);
    }
    Err(SimError::UnknownPreset {
        name: arg.to_string(),
        available: PRESETS.join(", "),
    })
}

const BS1: u32 = 0;
const BS2: u32 = 5;
const SINK: u32 = 100;
const SPEED_MPS: f64 = 20.0;
/// Lateral offsets that keep the four mobile stations apart on a shared path.
const LANES: [f64; 4] = [-15.0, -5.0, 5.0, 15.0];

fn flow(flow_id: u32, priority: u8, mean: f64, std: f64, interval_ms: u64) -> FlowSpec {
    FlowSpec {
        flow_id,
        priority,
        src: flow_id,
        dst: SINK,
        size_mean_bytes: mean,
        size_std_bytes: std,
        interval_us: interval_ms * 1000,
        start_at_us: 0,
        stop_at_us: None,
    }
}

/// Two high-priority flows (300 B, 25 ms and 40 ms) and two low-priority
/// flows (800 B every 50 ms) on BE and BK.
fn preset_flows() -> Vec<FlowSpec> {
    vec![
        flow(1, 7, 300.0, 40.0, 25),
        flow(2, 5, 300.0, 40.0, 40),
        flow(3, 3, 800.0, 150.0, 50),
        flow(4, 1, 800.0, 150.0, 50),
    ]
}

fn base(name: &str) -> Scenario {
    Scenario {
        schema: SCHEMA_VERSION,
        name: name.to_string(),
        duration_s: 100.0,
        warmup_s: default_warmup(),
        mac_mode: MacMode::Edcf,
        load_multiplier: 1.0,
        oracle_mode: false,
        radio: RadioParams::default(),
        wired: WiredParams::default(),
        mobility_tick_us: default_tick(),
        handshake_timeout_us: default_handshake_timeout(),
        mgmt_frame_bytes: default_mgmt_bytes(),
        throughput_bin_us: default_bin(),
        ac_overrides: BTreeMap::new(),
        dcf_override: None,
        stations: Vec::new(),
        flows: preset_flows(),
    }
}

fn bs(id: u32, x: f64, y: f64) -> StationSpec {
    StationSpec {
        id,
        role: Role::Bs,
        position: Some(Position::new(x, y)),
        path: None,
    }
}

fn sink() -> StationSpec {
    StationSpec {
        id: SINK,
        role: Role::WiredSink,
        position: None,
        path: None,
    }
}

fn shuttle(id: u32, from_x: f64, to_x: f64, y: f64) -> StationSpec {
    StationSpec {
        id,
        role: Role::Qsta,
        position: None,
        path: Some(WaypointPath {
            waypoints: vec![Position::new(from_x, y), Position::new(to_x, y)],
            speed_mps: SPEED_MPS,
            repeat: true,
        }),
    }
}

/// One BS, four static stations on a 30 m circle.
pub fn preset_a() -> Scenario {
    let mut sc = base("A");
    sc.stations.push(bs(BS1, 0.0, 0.0));
    for (i, angle) in [0.0_f64, 90.0, 180.0, 270.0].iter().enumerate() {
        let a = angle.to_radians();
        sc.stations.push(StationSpec {
            id: i as u32 + 1,
            role: Role::Qsta,
            position: Some(Position::new(30.0 * a.cos(), 30.0 * a.sin())),
            path: None,
        });
    }
    sc.stations.push(sink());
    sc
}

/// One BS, four stations shuttling at 20 m/s and leaving coverage at the far end.
pub fn preset_b() -> Scenario {
    let mut sc = base("B");
    sc.stations.push(bs(BS1, 0.0, 0.0));
    for (i, y) in LANES.iter().enumerate() {
        sc.stations.push(shuttle(i as u32 + 1, -50.0, 250.0, *y));
    }
    sc.stations.push(sink());
    sc
}

/// Two BSs 400 m apart with a 100 m coverage gap; stations shuttle between them.
pub fn preset_c() -> Scenario {
    let mut sc = base("C");
    sc.stations.push(bs(BS1, 0.0, 0.0));
    sc.stations.push(bs(BS2, 400.0, 0.0));
    for (i, y) in LANES.iter().enumerate() {
        sc.stations.push(shuttle(i as u32 + 1, -50.0, 450.0, *y));
    }
    sc.stations.push(sink());
    sc
}

pub fn preset(name: &str) -> Option<Scenario> {
    match name.to_ascii_uppercase().as_str() {
        "A" => Some(preset_a()),
        "B" => Some(preset_b()),
        "C" => Some(preset_c()),
        _ => None,
    }
}

/// `n` saturated DCF stations around one BS, for the analytic comparison.
pub fn saturation_scenario(n: u32, payload_bytes: u32, measure_s: f64) -> Scenario {
    let mut sc = base(&format!("dcf-saturation-n{n}"));
    sc.mac_mode = MacMode::Dcf;
    sc.oracle_mode = true;
    sc.duration_s = sc.warmup_s + measure_s;
    sc.stations.push(bs(BS1, 0.0, 0.0));
    for i in 0..n {
        let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
        sc.stations.push(StationSpec {
            id: i + 1,
            role: Role::Qsta,
            position: Some(Position::new(30.0 * a.cos(), 30.0 * a.sin())),
            path: None,
        });
    }
    sc.stations.push(sink());
    sc.flows = (1..=n)
        .map(|i| FlowSpec {
            flow_id: i,
            priority: 0,
            src: i,
            dst: SINK,
            size_mean_bytes: payload_bytes as f64,
            size_std_bytes: 0.0,
            interval_us: 1,
            start_at_us: 0,
            stop_at_us: None,
        })
        .collect();
    sc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in PRESETS {
            let sc = preset(name).unwrap();
            sc.validate().unwrap();
            assert_eq!(sc.flows.len(), 4);
        }
        assert_eq!(preset("a").unwrap().name, "A");
    }

    #[test]
    fn preset_a_layout() {
        let sc = preset_a();
        let bss: Vec<_> = sc.stations.iter().filter(|s| s.role == Role::Bs).collect();
        assert_eq!(bss.len(), 1);
        assert_eq!(bss[0].position, Some(Position::new(0.0, 0.0)));
        let qstas: Vec<_> = sc.stations.iter().filter(|s| s.role == Role::Qsta).collect();
        assert_eq!(qstas.len(), 4);
        for q in qstas {
            let d = q.position.unwrap().distance(&Position::new(0.0, 0.0));
            assert!((d - 30.0).abs() < 1e-9);
        }
        assert_eq!(sc.mac_mode, MacMode::Edcf);
        let prios: Vec<u8> = sc.flows.iter().map(|f| f.priority).collect();
        assert_eq!(prios, vec![7, 5, 3, 1]);
    }

    #[test]
    fn preset_b_and_c_move_at_20_mps() {
        for sc in [preset_b(), preset_c()] {
            for s in sc.stations.iter().filter(|s| s.role == Role::Qsta) {
                let p = s.path.as_ref().unwrap();
                assert_eq!(p.speed_mps, 20.0);
                assert!(p.repeat);
            }
        }
        assert_eq!(
            preset_c().stations.iter().filter(|s| s.role == Role::Bs).count(),
            2
        );
    }

    #[test]
    fn canonical_round_trip() {
        for name in PRESETS {
            let sc = preset(name).unwrap();
            let back = Scenario::from_json(&sc.to_canonical_json()).unwrap();
            assert_eq!(back, sc);
            assert_eq!(back.hash(), sc.hash());
        }
    }

    #[test]
    fn defaults_fill_in() {
        let text = r#"{
            "schema": 1, "name": "tiny", "duration_s": 10,
            "stations": [
                {"id": 0, "role": "bs", "position": {"x": 0, "y": 0}},
                {"id": 1, "role": "qsta", "position": {"x": 10, "y": 0}},
                {"id": 9, "role": "wired_sink"}
            ],
            "flows": [{"flow_id": 1, "priority": 7, "src": 1, "dst": 9,
                       "size_mean_bytes": 300, "size_std_bytes": 40, "interval_us": 25000}]
        }"#;
        let sc = Scenario::from_json(text).unwrap();
        assert_eq!(sc.warmup_s, 5.0);
        assert_eq!(sc.radio, RadioParams::default());
        assert_eq!(sc.wired, WiredParams::default());
        assert_eq!(sc.mac_mode, MacMode::Edcf);
    }

    #[test]
    fn unknown_key_named_in_error() {
        let mut v: serde_json::Value = serde_json::from_str(&preset_a().to_canonical_json()).unwrap();
        v["radio"]["slot_time"] = serde_json::json!(9);
        let err = Scenario::from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("slot_time"), "{err}");
    }

    #[test]
    fn bad_flow_endpoint_named_in_error() {
        let mut sc = preset_a();
        sc.flows[2].src = 42;
        let err = sc.validate().unwrap_err();
        assert!(err.to_string().contains("flows[2].src"), "{err}");
        let mut sc = preset_a();
        sc.flows[0].dst = 0;
        assert!(sc.validate().unwrap_err().to_string().contains("flows[0].dst"));
    }

    #[test]
    fn duration_must_exceed_warmup() {
        let mut sc = preset_a();
        sc.duration_s = 4.0;
        assert!(sc.validate().unwrap_err().to_string().contains("duration_s"));
    }

    #[test]
    fn override_applies() {
        let mut sc = preset_a();
        sc.ac_overrides.insert(
            AccessCategory::Be,
            AcOverride {
                cw_min: Some(15),
                ..Default::default()
            },
        );
        assert_eq!(sc.ac_params()[AccessCategory::Be.index()].cw_min, 15);
        sc.ac_overrides.insert(
            AccessCategory::Bk,
            AcOverride {
                cw_min: Some(20),
                ..Default::default()
            },
        );
        assert!(sc.validate().is_err());
    }

    #[test]
    fn unknown_preset_lists_available() {
        let err = load_scenario("Z").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("A, B, C"), "{msg}");
    }

    #[test]
    fn load_multiplier_scales_intervals() {
        let mut sc = preset_a();
        sc.load_multiplier = 2.5;
        let f = sc.effective_flows();
        assert_eq!(f[0].interval_us, 10_000);
        assert_eq!(f[2].interval_us, 20_000);
    }
}
