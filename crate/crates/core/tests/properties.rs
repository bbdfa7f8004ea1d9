use edca_sim::mac::{
    resolve_virtual_collision, AccessCategory, AccessCategoryParams, EdcaQueue, FailureOutcome,
    Frame, FrameKind, Phase,
};
use edca_sim::metrics::DelayCdf;
use edca_sim::mobility::WaypointPath;
use edca_sim::phy::{Medium, Position, RadioParams, Reception};
use edca_sim::scenario::{preset, Scenario};
use edca_sim::sim::{EventQueue, RandomStream};
use edca_sim::SimTime;
use proptest::prelude::*;

fn frame(id: u64) -> Frame {
    Frame {
        id,
        kind: FrameKind::Data,
        flow_id: Some(1),
        priority: 0,
        src: 1,
        dst: 0,
        payload_bytes: 800,
        created_at: SimTime::ZERO,
        enqueued_at: None,
        first_tx_at: None,
        delivered_at: None,
        retry_count: 0,
    }
}

fn ac_strategy() -> impl Strategy<Value = AccessCategory> {
    prop::sample::select(AccessCategory::ALL.to_vec())
}

proptest! {
    #[test]
    fn event_queue_pops_in_time_then_fifo_order(times in prop::collection::vec(0u64..1_000, 1..200)) {
        let mut q = EventQueue::new();
        for (i, t) in times.iter().enumerate() {
            q.schedule(SimTime(*t), i).unwrap();
        }
        let mut last: Option<(SimTime, usize)> = None;
        while let Some(rec) = q.advance() {
            if let Some((t, i)) = last {
                prop_assert!(rec.fire_at > t || (rec.fire_at == t && rec.event > i));
            }
            prop_assert_eq!(q.now(), rec.fire_at);
            last = Some((rec.fire_at, rec.event));
        }
    }

    #[test]
    fn cw_stays_bounded_and_of_power_form(
        ac in ac_strategy(),
        outcomes in prop::collection::vec(any::<bool>(), 1..120),
        seed in any::<u64>(),
    ) {
        let radio = RadioParams::default();
        let params = AccessCategoryParams::edca_default(ac);
        let mut q = EdcaQueue::new(params.clone(), &radio);
        let mut rng = RandomStream::new(seed);
        let mut id = 0;
        let mut expected_cw = params.cw_min;
        let mut expected_retries = 0;
        for ok in outcomes {
            while q.len() < 2 {
                q.enqueue(frame(id), SimTime::ZERO).unwrap();
                id += 1;
            }
            q.begin_transmit(SimTime::ZERO);
            q.end_transmit();
            if ok {
                q.on_tx_success(SimTime::ZERO);
                expected_cw = params.cw_min;
                expected_retries = 0;
            } else {
                expected_retries += 1;
                let out = q.on_tx_failure(Some(SimTime::ZERO), &mut rng).unwrap();
                if expected_retries > params.retry_limit {
                    prop_assert!(matches!(out, FailureOutcome::Dropped(_)));
                    expected_cw = params.cw_min;
                    expected_retries = 0;
                } else {
                    prop_assert!(matches!(out, FailureOutcome::Retry));
                    expected_cw = (2 * (expected_cw + 1) - 1).min(params.cw_max);
                }
                prop_assert!(q.backoff_counter() <= q.cw_current());
            }
            let cw = q.cw_current();
            prop_assert_eq!(cw, expected_cw);
            prop_assert!(cw >= params.cw_min && cw <= params.cw_max);
            prop_assert!((cw + 1).is_power_of_two(), "cw {} not 2^k-1", cw);
            prop_assert_eq!(q.retry_count(), expected_retries);
        }
    }

    #[test]
    fn backoff_counts_only_whole_idle_slots(
        ac in ac_strategy(),
        periods in prop::collection::vec((0u64..800, 1u64..3_000), 1..40),
        seed in any::<u64>(),
    ) {
        let radio = RadioParams::default();
        let mut q = EdcaQueue::new(AccessCategoryParams::edca_default(ac), &radio);
        let mut rng = RandomStream::new(seed);
        q.enqueue(frame(0), SimTime::ZERO).unwrap();
        // medium busy when the frame arrives
        q.start_contention(SimTime::ZERO, None, &mut rng).unwrap();
        let aifs = q.aifs().micros();
        let slot = radio.slot_us;
        let mut expected = q.backoff_counter();
        let mut t = 1_000u64;
        for (idle, busy) in periods {
            q.resume(SimTime(t));
            let access = q.access_time().unwrap();
            prop_assert_eq!(access.micros(), t + aifs + expected as u64 * slot);
            let busy_at = t + idle;
            if access.micros() <= busy_at {
                // would have transmitted during this idle period
                break;
            }
            q.freeze(SimTime(busy_at));
            let credited = busy_at.saturating_sub(t + aifs) / slot;
            expected -= credited as u32;
            prop_assert_eq!(q.backoff_counter(), expected);
            prop_assert!(q.access_time().is_none(), "frozen while busy");
            t = busy_at + busy;
        }
    }

    #[test]
    fn virtual_collision_picks_highest_ready(ready in prop::collection::vec(ac_strategy(), 0..6)) {
        let w = resolve_virtual_collision(&ready);
        match ready.iter().max() {
            None => prop_assert!(w.is_none()),
            Some(m) => {
                prop_assert_eq!(w, Some(*m));
                prop_assert!(ready.iter().all(|a| *a <= w.unwrap()));
            }
        }
    }

    #[test]
    fn same_slot_expiry_always_collides(
        c in 0u32..32,
        other in 0u32..32,
        gap_slots in 0u64..10,
        r1 in 1.0f64..140.0,
        r2 in 1.0f64..140.0,
        a1 in 0.0f64..std::f64::consts::TAU,
        a2 in 0.0f64..std::f64::consts::TAU,
    ) {
        // two stations around a BS, counting from the same idle instant
        let radio = RadioParams::default();
        let params = AccessCategoryParams::edca_default(AccessCategory::Be);
        let pos = vec![
            Some(Position::new(0.0, 0.0)),
            Some(Position::new(r1 * a1.cos(), r1 * a1.sin())),
            Some(Position::new(r2 * a2.cos(), r2 * a2.sin())),
        ];
        let aifs = params.aifsn as u64 * radio.slot_us + radio.sifs_us;
        let idle = SimTime(10_000 + gap_slots * radio.slot_us);
        let t1 = idle + SimTime(aifs + c as u64 * radio.slot_us);
        let t2 = idle + SimTime(aifs + other as u64 * radio.slot_us);
        let air = radio.frame_airtime(800).unwrap();
        let mut m = Medium::new(3, radio.range_m);
        let mut ids = vec![];
        for (who, t) in [(1usize, t1), (2usize, t2)] {
            if c == other || ids.is_empty() {
                ids.push(m.begin(who, t, t + air, &pos).0);
            }
        }
        if c == other {
            let tx: Vec<_> = m.active().to_vec();
            for t in &tx {
                let r = m.resolve_reception(0, t, &pos[0].unwrap(), &pos[t.transmitter].unwrap());
                prop_assert_eq!(r, Reception::Collision);
            }
        } else {
            let tx = m.active()[0].clone();
            let r = m.resolve_reception(0, &tx, &pos[0].unwrap(), &pos[tx.transmitter].unwrap());
            prop_assert_eq!(r, Reception::Success);
        }
    }

    #[test]
    fn waypoint_motion_is_continuous(
        pts in prop::collection::vec((-500.0f64..500.0, -500.0f64..500.0), 2..6),
        speed in 0.5f64..40.0,
        t0 in 0u64..200_000_000,
        dt in 1u64..2_000_000,
    ) {
        let waypoints: Vec<Position> = pts.iter().map(|&(x, y)| Position::new(x, y)).collect();
        prop_assume!(waypoints.windows(2).all(|w| w[0].distance(&w[1]) > 1e-3));
        let path = WaypointPath { waypoints, speed_mps: speed, repeat: true };
        let a = path.position_at(SimTime(t0));
        let b = path.position_at(SimTime(t0 + dt));
        let moved = a.distance(&b);
        prop_assert!(moved <= speed * dt as f64 * 1e-6 + 1e-6, "moved {} in {} us", moved, dt);
    }

    #[test]
    fn cdf_is_monotone_and_ends_at_one(samples in prop::collection::vec(0u64..100_000, 1..500)) {
        let cdf = DelayCdf::new(&samples);
        let pts = cdf.points();
        prop_assert!(pts.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
        prop_assert!((pts.last().unwrap().1 - 1.0).abs() < 1e-12);
        let mut prev = 0.0;
        for d in (0..100_000).step_by(997) {
            let f = cdf.fraction_le(d);
            prop_assert!(f >= prev);
            prev = f;
        }
    }

    #[test]
    fn quantiles_are_monotone(samples in prop::collection::vec(0u64..1_000_000, 1..300)) {
        let cdf = DelayCdf::new(&samples);
        let mut prev = 0;
        for k in 1..=100 {
            let q = cdf.quantile(k as f64 / 100.0).unwrap();
            prop_assert!(q >= prev);
            prev = q;
        }
    }
}

#[test]
fn quantiles_match_sort_oracle_on_large_sample() {
    let mut rng = RandomStream::new(42);
    let samples: Vec<u64> = (0..10_000)
        .map(|_| rng.uniform_int(0, 2_000_000).unwrap() as u64)
        .collect();
    let cdf = DelayCdf::new(&samples);
    let mut sorted = samples.clone();
    sorted.sort();
    for k in 1..=1000 {
        let q = k as f64 / 1000.0;
        // nearest rank: smallest x with at least q*n samples <= x
        let need = (q * sorted.len() as f64).ceil() as usize;
        let oracle = sorted[need - 1];
        assert_eq!(cdf.quantile(q), Some(oracle), "q={q}");
        if k % 50 == 0 {
            let at_or_below = samples.iter().filter(|&&y| y <= oracle).count();
            let below = samples.iter().filter(|&&y| y < oracle).count();
            assert!(at_or_below >= need && below < need);
        }
    }
}

#[test]
fn scenarios_round_trip_through_json() {
    for name in ["A", "B", "C"] {
        let s = preset(name).unwrap();
        let text = s.to_canonical_json();
        let back = Scenario::from_json(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_canonical_json(), text);
        assert_eq!(back.hash(), s.hash());
    }
}

#[test]
fn idle_queue_has_no_access_time() {
    let radio = RadioParams::default();
    let q = EdcaQueue::new(AccessCategoryParams::edca_default(AccessCategory::Vo), &radio);
    assert_eq!(q.phase(), Phase::Idle);
    assert!(q.access_time().is_none());
}
