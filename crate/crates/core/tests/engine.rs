use edca_sim::engine::{run_scenario, RunOptions, RunOutput, TraceEvent};
use edca_sim::output::{delays_csv, events_csv, summarize, throughput_csv};
use edca_sim::scenario::{preset, saturation_scenario, Scenario};
use std::collections::{BTreeMap, HashMap, HashSet};

fn traced(s: &Scenario, seed: u64) -> RunOutput {
    run_scenario(s, seed, RunOptions { trace: true }).unwrap()
}

fn by_station(trace: &[TraceEvent]) -> BTreeMap<u32, Vec<&TraceEvent>> {
    let mut m: BTreeMap<u32, Vec<&TraceEvent>> = BTreeMap::new();
    for e in trace {
        m.entry(e.station).or_default().push(e);
    }
    m
}

#[test]
fn simultaneous_starts_always_collide() {
    let mut s = saturation_scenario(2, 800, 20.0);
    s.warmup_s = 1.0;
    let out = traced(&s, 3);
    let mut starts: BTreeMap<u64, Vec<(u32, u64)>> = BTreeMap::new();
    for e in out.trace.iter().filter(|e| e.event == "tx-start") {
        starts
            .entry(e.time.micros())
            .or_default()
            .push((e.station, e.frame_id.unwrap()));
    }
    let acked: HashSet<(u64, u64)> = {
        // (frame, time of the tx-start it acknowledges) via the preceding start
        let mut last_start: HashMap<u64, u64> = HashMap::new();
        let mut s = HashSet::new();
        for e in &out.trace {
            match e.event {
                "tx-start" => {
                    last_start.insert(e.frame_id.unwrap(), e.time.micros());
                }
                "acked" => {
                    let f = e.frame_id.unwrap();
                    s.insert((f, last_start[&f]));
                }
                _ => {}
            }
        }
        s
    };
    let mut pairs = 0;
    let horizon = (s.duration_s * 1e6) as u64 - 20_000;
    for (t, v) in starts.range(..horizon) {
        if v.len() > 1 {
            pairs += 1;
            assert_eq!(v.len(), 2);
            assert_ne!(v[0].0, v[1].0);
            for (_, f) in v {
                assert!(!acked.contains(&(*f, *t)), "frame {f} started at {t} was acked");
            }
        } else {
            assert!(acked.contains(&(v[0].1, *t)), "lone transmission at {t} not acked");
        }
    }
    assert!(pairs > 10, "expected some same-slot expiries, got {pairs}");
    let all_pairs = starts.values().filter(|v| v.len() > 1).count() as u64;
    assert_eq!(out.stats.collisions, 2 * all_pairs);
}

#[test]
fn single_station_service_time_matches_closed_form() {
    let mut s = saturation_scenario(1, 800, 80.0);
    s.warmup_s = 1.0;
    let out = traced(&s, 11);
    let acks: Vec<u64> = out
        .trace
        .iter()
        .filter(|e| e.event == "acked" && e.time.micros() >= 1_000_000)
        .map(|e| e.time.micros())
        .collect();
    assert!(acks.len() > 10_001, "{} frames", acks.len());
    let n = 10_000;
    let mean = (acks[n] - acks[0]) as f64 / n as f64;
    let r = &s.radio;
    // DIFS + mean backoff + data + SIFS + ACK
    let closed = r.difs_us as f64
        + r.slot_us as f64 * 31.0 / 2.0
        + r.frame_airtime(800).unwrap().micros() as f64
        + r.sifs_us as f64
        + r.ack_airtime().micros() as f64;
    assert!(
        ((mean - closed) / closed).abs() < 0.02,
        "mean service {mean} us vs {closed} us"
    );
}

fn bursty_scenario() -> Scenario {
    let mut s = preset("A").unwrap();
    s.duration_s = 20.0;
    // small frames so several fit in the VO and VI TXOP limits
    s.flows[0].size_mean_bytes = 60.0;
    s.flows[0].size_std_bytes = 0.0;
    s.flows[0].interval_us = 1_000;
    s.flows[1].size_mean_bytes = 100.0;
    s.flows[1].size_std_bytes = 20.0;
    s.flows[1].interval_us = 1_000;
    s
}

#[test]
fn txop_bursts_stay_within_limit() {
    let s = bursty_scenario();
    let out = traced(&s, 5);
    let limit: BTreeMap<u32, u64> = [(1, 3008), (2, 6016), (3, 0), (4, 0)].into();
    let sifs = s.radio.sifs_us;
    let mut longest_burst = 0;
    for (station, events) in by_station(&out.trace) {
        let Some(&lim) = limit.get(&station) else {
            continue;
        };
        let mut burst_start: Option<u64> = None;
        let mut frames = 0;
        let mut last_ack: Option<u64> = None;
        for e in events {
            match e.event {
                "tx-start" => {
                    let t = e.time.micros();
                    if last_ack.is_some_and(|a| a + sifs == t) {
                        frames += 1;
                    } else {
                        burst_start = Some(t);
                        frames = 1;
                    }
                    last_ack = None;
                }
                "acked" => {
                    let t = e.time.micros();
                    if frames > 1 {
                        let dur = t - burst_start.unwrap();
                        assert!(dur <= lim, "station {station} burst of {frames} lasted {dur} us");
                    }
                    longest_burst = longest_burst.max(frames);
                    last_ack = Some(t);
                }
                _ => {}
            }
        }
    }
    assert!(longest_burst >= 3, "no multi-frame bursts seen");
    assert!(out.stats.burst_frames > 100);
}

#[test]
fn internal_collision_goes_to_highest_category() {
    let mut s = bursty_scenario();
    // give station 1 a background flow next to its voice flow
    let mut bk = s.flows[3].clone();
    bk.flow_id = 5;
    bk.src = 1;
    bk.interval_us = 5_000;
    s.flows.push(bk);
    let out = traced(&s, 9);
    let mut on_air: HashMap<u32, (u64, u64)> = HashMap::new();
    let mut pending: Vec<(u64, u32, String)> = Vec::new();
    let mut seen = 0;
    for e in &out.trace {
        let t = e.time.micros();
        match e.event {
            "tx-start" => {
                assert!(on_air.insert(e.station, (e.frame_id.unwrap(), t)).is_none());
            }
            "tx-end" => assert_eq!(on_air.remove(&e.station).map(|x| x.0), e.frame_id),
            "internal-collision" => pending.push((t, e.station, e.reason.clone())),
            _ => {}
        }
    }
    for (t, station, reason) in pending {
        let (win, lose) = reason.split_once('>').unwrap();
        let rank = |ac: &str| ["BK", "BE", "VI", "VO"].iter().position(|x| *x == ac).unwrap();
        assert!(rank(win) > rank(lose), "{reason}");
        // the winner went on the air at that instant
        let started = out.trace.iter().any(|e| {
            e.event == "tx-start" && e.station == station && e.time.micros() == t && e.reason == win
        });
        assert!(started, "no {win} transmission at {t}");
        seen += 1;
    }
    assert!(seen > 0);
    assert_eq!(seen, out.stats.internal_collisions);
}

#[test]
fn data_only_flows_while_associated() {
    let s = preset("C").unwrap();
    let out = traced(&s, 2);
    let mut assoc: HashMap<u32, Option<u32>> = HashMap::new();
    let mut data_tx = 0;
    for e in &out.trace {
        match e.event {
            "associated" => {
                assoc.insert(e.station, Some(e.reason.parse().unwrap()));
            }
            "disassociated" => {
                assoc.insert(e.station, None);
            }
            "tx-start" if e.flow_id.is_some() => {
                data_tx += 1;
                assert!(
                    assoc.get(&e.station).copied().flatten().is_some(),
                    "station {} sent data unassociated at {}",
                    e.station,
                    e.time
                );
            }
            "rx-accepted" => {
                let src: u32 = e.reason.parse().unwrap();
                assert_eq!(assoc.get(&src).copied().flatten(), Some(e.station));
            }
            _ => {}
        }
    }
    assert!(data_tx > 1000);
    let sum = summarize(&s, &out).unwrap();
    assert!(sum.totals.dropped_unassociated > 0);
    assert!(sum.roaming.disassociations >= 8);
}

#[test]
fn static_stations_associate_at_start() {
    let s = preset("A").unwrap();
    let out = traced(&s, 1);
    let done: Vec<_> = out
        .trace
        .iter()
        .filter(|e| e.event == "associated")
        .collect();
    assert_eq!(done.len(), 4);
    assert!(done.iter().all(|e| e.time.micros() < 100_000));
}

#[test]
fn identical_seed_identical_outputs() {
    let s = preset("C").unwrap();
    let a = traced(&s, 17);
    let b = traced(&s, 17);
    let c = traced(&s, 18);
    let render = |o: &RunOutput| {
        (
            summarize(&s, o).unwrap().to_json(),
            throughput_csv(o),
            delays_csv(o),
            events_csv(o),
        )
    };
    assert_eq!(render(&a), render(&b));
    assert_ne!(render(&a).2, render(&c).2);
}

#[test]
fn conservation_holds_for_all_presets() {
    for name in ["A", "B", "C"] {
        let s = preset(name).unwrap();
        for seed in 1..=2 {
            let out = run_scenario(&s, seed, RunOptions::default()).unwrap();
            for (id, f) in &out.report.flows {
                assert!(f.conserved(), "{name}/{seed} flow {id}");
                assert!(f.generated > 0);
            }
        }
    }
}
