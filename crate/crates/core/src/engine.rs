//! The event loop: radios, MAC state machines, traffic sources, mobility and
//! the wired gateways, all driven from one [`EventQueue`].
//!
//! Traffic is uplink: every flow runs from a QSTA through its associated base
//! station and over that base station's wired link to the sink. A data frame
//! counts as delivered when it leaves the wired link.

use crate::error::{Result, SimError};
use crate::mac::{
    classify, resolve_virtual_collision, txop_burst_may_continue, AccessCategory, FailureOutcome, Frame, FrameKind,
    MacMode, Phase, StationMac,
};
use crate::metrics::{DropReason, FlowReport, FrameEvent, MetricsCollector};
use crate::mobility::{association_step, AssociationAction, AssociationState, Handshake, Mobility};
use crate::phy::{Medium, Position, RadioParams, Reception, TxId, WiredLink, WiredOutcome};
use crate::scenario::{Role, Scenario};
use crate::sim::{EventQueue, RandomStream};
use crate::time::SimTime;
use crate::traffic::{FlowSpec, TrafficSource};
use std::collections::{BTreeMap, HashSet};

#[derive(Debug, Clone)]
enum Ev {
    Access { node: usize, gen: u64 },
    SendAck { node: usize, to: usize, frame_id: u64 },
    BurstNext { node: usize, queue: usize },
    TxEnd { tx: TxId },
    AckTimeout { node: usize, gen: u64 },
    Arrival { flow: usize },
    MobilityTick,
    Crossing { node: usize },
    WiredDelivered { frame_id: u64, bs: usize },
}

/// One line of the optional event trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub time: SimTime,
    /// Scenario station id.
    pub station: u32,
    pub event: &'static str,
    pub frame_id: Option<u64>,
    pub flow_id: Option<u32>,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoamKind {
    /// Lost a completed association.
    Disassociated,
    /// Gave up on an unfinished handshake.
    HandshakeAborted,
    HandshakeStarted,
    HandshakeComplete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoamEvent {
    pub at: SimTime,
    pub station: u32,
    pub bs: u32,
    pub kind: RoamKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MacStats {
    pub data_tx_attempts: u64,
    pub mgmt_tx_attempts: u64,
    pub acks_sent: u64,
    pub collisions: u64,
    pub ack_timeouts: u64,
    pub internal_collisions: u64,
    pub burst_frames: u64,
    pub events_dispatched: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: FlowReport,
    pub roaming: Vec<RoamEvent>,
    pub trace: Vec<TraceEvent>,
    pub stats: MacStats,
    /// Effective flow specs (after the load multiplier).
    pub flows: Vec<FlowSpec>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub trace: bool,
}

enum TxPayload {
    Frame { frame: Frame, queue: usize },
    Ack { to: usize, frame_id: u64 },
}

struct Node {
    ext_id: u32,
    role: Role,
    mobility: Mobility,
    mac: StationMac,
    /// Medium busy as this radio sees it, including its own pending ACK wait.
    busy: bool,
    hold: bool,
    idle_since: SimTime,
    access_gen: u64,
    scheduled_access: Option<SimTime>,
    ack_gen: u64,
    transmitting: Option<TxId>,
    txop_start: Option<SimTime>,
    burst_len: u32,
    assoc: AssociationState,
    wired: Option<WiredLink>,
    /// Saturated source bound to this station (oracle mode).
    saturated_flow: Option<usize>,
}

impl Node {
    fn idle(&self) -> Option<SimTime> {
        (!self.busy).then_some(self.idle_since)
    }
}

struct FlowRt {
    spec: FlowSpec,
    src: usize,
    source: TrafficSource,
}

/// A single simulation run.
pub struct Simulation {
    radio: RadioParams,
    end: SimTime,
    tick: SimTime,
    handshake_timeout: SimTime,
    mgmt_bytes: u32,
    oracle_mode: bool,
    queue: EventQueue<Ev>,
    rng: RandomStream,
    nodes: Vec<Node>,
    bss: Vec<usize>,
    medium: Medium,
    active: BTreeMap<TxId, TxPayload>,
    flows: Vec<FlowRt>,
    metrics: MetricsCollector,
    /// Frames the addressed radio has already taken (duplicate suppression).
    accepted: HashSet<u64>,
    next_frame_id: u64,
    trace: Option<Vec<TraceEvent>>,
    roaming: Vec<RoamEvent>,
    stats: MacStats,
}

impl Simulation {
    pub fn new(scenario: &Scenario, seed: u64, opts: RunOptions) -> Result<Self> {
        scenario.validate()?;
        let radio = scenario.radio.clone();
        let ac_params = scenario.ac_params();
        let dcf = scenario.dcf_params();
        let mut nodes = Vec::new();
        let mut index_of = BTreeMap::new();
        for s in &scenario.stations {
            if s.role == Role::WiredSink {
                continue;
            }
            let mobility = match (&s.position, &s.path) {
                (_, Some(path)) => Mobility::Path(path.clone()),
                (Some(p), None) => Mobility::Static(*p),
                (None, None) => unreachable!("validated"),
            };
            index_of.insert(s.id, nodes.len());
            nodes.push(Node {
                ext_id: s.id,
                role: s.role,
                mobility,
                mac: StationMac::new(scenario.mac_mode, &dcf, &ac_params, &radio),
                busy: false,
                hold: false,
                idle_since: SimTime::ZERO,
                access_gen: 0,
                scheduled_access: None,
                ack_gen: 0,
                transmitting: None,
                txop_start: None,
                burst_len: 0,
                assoc: AssociationState::default(),
                wired: (s.role == Role::Bs).then(|| WiredLink::new(scenario.wired.clone())),
                saturated_flow: None,
            });
        }
        let bss = nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.role == Role::Bs)
            .map(|(i, _)| i)
            .collect();
        let end = scenario.duration();
        let flows: Vec<FlowRt> = scenario
            .effective_flows()
            .into_iter()
            .map(|spec| FlowRt {
                src: index_of[&spec.src],
                source: TrafficSource::new(spec.clone(), end),
                spec,
            })
            .collect();
        if scenario.oracle_mode {
            for (i, f) in flows.iter().enumerate() {
                nodes[f.src].saturated_flow = Some(i);
            }
        }
        let metrics = MetricsCollector::new(
            flows.iter().map(|f| f.spec.flow_id),
            scenario.warmup(),
            end,
            SimTime(scenario.throughput_bin_us),
        );
        let medium = Medium::new(nodes.len(), radio.range_m);
        Ok(Simulation {
            radio,
            end,
            tick: SimTime(scenario.mobility_tick_us),
            handshake_timeout: SimTime(scenario.handshake_timeout_us),
            mgmt_bytes: scenario.mgmt_frame_bytes,
            oracle_mode: scenario.oracle_mode,
            queue: EventQueue::new(),
            rng: RandomStream::new(seed),
            nodes,
            bss,
            medium,
            active: BTreeMap::new(),
            flows,
            metrics,
            accepted: HashSet::new(),
            next_frame_id: 0,
            trace: opts.trace.then(Vec::new),
            roaming: Vec::new(),
            stats: MacStats::default(),
        })
    }

    /// Runs to the configured duration and closes the books.
    pub fn run(mut self) -> Result<RunOutput> {
        self.bootstrap()?;
        while let Some(t) = self.queue.peek_time() {
            if t >= self.end {
                break;
            }
            let rec = self.queue.advance().expect("peeked");
            self.stats.events_dispatched += 1;
            self.dispatch(rec.fire_at, rec.event)?;
        }
        let seed = self.rng.seed();
        let report = self.metrics.finish()?;
        Ok(RunOutput {
            report,
            roaming: self.roaming,
            trace: self.trace.unwrap_or_default(),
            stats: self.stats,
            flows: self.flows.into_iter().map(|f| f.spec).collect(),
            seed,
        })
    }

    fn bootstrap(&mut self) -> Result<()> {
        self.queue.schedule(SimTime::ZERO, Ev::MobilityTick)?;
        for i in 0..self.flows.len() {
            if self.oracle_mode {
                continue;
            }
            if let Some(t) = self.flows[i].source.peek() {
                self.queue.schedule(t, Ev::Arrival { flow: i })?;
            }
        }
        let bs_positions: Vec<Position> = self
            .bss
            .iter()
            .map(|&b| self.nodes[b].mobility.position_at(SimTime::ZERO))
            .collect();
        for n in 0..self.nodes.len() {
            let Mobility::Path(path) = &self.nodes[n].mobility else {
                continue;
            };
            let mut times = Vec::new();
            for bp in &bs_positions {
                times.extend(path.range_crossings(bp, self.radio.range_m, self.end));
            }
            times.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            for t in times {
                // one microsecond past the crossing, so the closed-disc test sees the new side
                let at = SimTime((t * 1e6).ceil() as u64 + 1);
                if at < self.end {
                    self.queue.schedule(at, Ev::Crossing { node: n })?;
                }
            }
        }
        Ok(())
    }

    fn dispatch(&mut self, now: SimTime, ev: Ev) -> Result<()> {
        match ev {
            Ev::Access { node, gen } => {
                if self.nodes[node].access_gen == gen {
                    self.on_access(node, now)?;
                }
            }
            Ev::SendAck { node, to, frame_id } => self.send_ack(node, to, frame_id, now)?,
            Ev::BurstNext { node, queue } => self.on_burst_next(node, queue, now)?,
            Ev::TxEnd { tx } => self.on_tx_end(tx, now)?,
            Ev::AckTimeout { node, gen } => {
                if self.nodes[node].ack_gen == gen {
                    self.on_ack_timeout(node, now)?;
                }
            }
            Ev::Arrival { flow } => self.on_arrival(flow, now)?,
            Ev::MobilityTick => {
                for n in 0..self.nodes.len() {
                    if self.nodes[n].role == Role::Qsta {
                        self.association(n, now)?;
                    }
                }
                let next = now + self.tick;
                if next < self.end {
                    self.queue.schedule(next, Ev::MobilityTick)?;
                }
            }
            Ev::Crossing { node } => self.association(node, now)?,
            Ev::WiredDelivered { frame_id, bs } => {
                self.metrics.record(FrameEvent::Delivered { frame_id, at: now })?;
                let sid = self.nodes[bs].ext_id;
                self.trace(now, sid, "delivered", Some(frame_id), None, String::new());
            }
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // helpers

    fn trace(
        &mut self,
        time: SimTime,
        station: u32,
        event: &'static str,
        frame_id: Option<u64>,
        flow_id: Option<u32>,
        reason: String,
    ) {
        if let Some(t) = &mut self.trace {
            t.push(TraceEvent {
                time,
                station,
                event,
                frame_id,
                flow_id,
                reason,
            });
        }
    }

    fn positions(&self, at: SimTime) -> Vec<Option<Position>> {
        self.nodes
            .iter()
            .map(|n| Some(n.mobility.position_at(at)))
            .collect()
    }

    fn new_frame_id(&mut self) -> u64 {
        let id = self.next_frame_id;
        self.next_frame_id += 1;
        id
    }

    fn can_send(&self, node: usize, frame: &Frame) -> bool {
        match frame.kind {
            FrameKind::Data => self.nodes[node].assoc.associated_to(frame.dst),
            FrameKind::ReassocRequest => {
                let a = &self.nodes[node].assoc;
                a.current_bs == Some(frame.dst) && a.handshake == Handshake::RequestSent
            }
            FrameKind::ReassocResponse => true,
        }
    }

    /// Re-evaluates the radio's busy state and its access timer.
    fn update_busy(&mut self, n: usize, now: SimTime) {
        let busy = self.medium.is_busy(n) || self.nodes[n].hold;
        let node = &mut self.nodes[n];
        if busy != node.busy {
            node.busy = busy;
            if busy {
                for q in node.mac.queues_mut() {
                    q.freeze(now);
                }
            } else {
                node.idle_since = now;
                for q in node.mac.queues_mut() {
                    q.resume(now);
                }
            }
        }
        self.reschedule(n, now);
    }

    fn reschedule(&mut self, n: usize, now: SimTime) {
        let node = &mut self.nodes[n];
        let next = node
            .mac
            .queues()
            .iter()
            .filter_map(|q| q.access_time())
            .min()
            .map(|t| t.max(now));
        if next != node.scheduled_access {
            node.access_gen += 1;
            node.scheduled_access = next;
            if let Some(t) = next {
                self.queue
                    .schedule(t, Ev::Access { node: n, gen: node.access_gen })
                    .expect("access time is never in the past");
            }
        }
    }

    fn kick(&mut self, n: usize, qi: usize, now: SimTime) -> Result<()> {
        let idle = self.nodes[n].idle();
        self.nodes[n]
            .mac
            .queue_mut(qi)
            .start_contention(now, idle, &mut self.rng)?;
        self.reschedule(n, now);
        Ok(())
    }

    // ------------------------------------------------------------------
    // channel access

    fn on_access(&mut self, n: usize, now: SimTime) -> Result<()> {
        self.nodes[n].scheduled_access = None;
        let self_busy = self.nodes[n].transmitting.is_some() || self.nodes[n].hold;
        let mut ready: Vec<(AccessCategory, usize)> = Vec::new();
        for qi in 0..self.nodes[n].mac.queues().len() {
            let q = self.nodes[n].mac.queue_mut(qi);
            match q.access_time() {
                Some(t) if t <= now => {}
                _ => continue,
            }
            if q.is_empty() {
                q.finish_post_backoff();
            } else if self_busy {
                // own ACK or burst on the air: wait for the next idle period
                q.force_freeze(now);
            } else {
                ready.push((q.ac(), qi));
            }
        }
        let acs: Vec<AccessCategory> = ready.iter().map(|r| r.0).collect();
        if let Some(win_ac) = resolve_virtual_collision(&acs) {
            let winner = ready.iter().find(|r| r.0 == win_ac).expect("winner is ready").1;
            let head = self.nodes[n].mac.queue(winner).head().expect("ready").clone();
            if !self.can_send(n, &head) {
                self.drop_head(n, winner, now)?;
            } else {
                self.start_frame_tx(n, winner, now)?;
            }
            for &(ac, qi) in ready.iter().filter(|(_, qi)| *qi != winner) {
                self.stats.internal_collisions += 1;
                let loser = self.nodes[n].mac.queue(qi).head().expect("ready");
                let (fid, flow) = (loser.id, loser.flow_id);
                let sid = self.nodes[n].ext_id;
                self.trace(now, sid, "internal-collision", Some(fid), flow, format!("{win_ac}>{ac}"));
                self.fail_queue(n, qi, now)?;
            }
        }
        self.reschedule(n, now);
        Ok(())
    }

    fn begin_tx(&mut self, n: usize, now: SimTime, airtime: SimTime, payload: TxPayload) -> Result<()> {
        if self.nodes[n].transmitting.is_some() {
            return Err(SimError::Audit(format!(
                "station {} started a second simultaneous transmission at {now}",
                self.nodes[n].ext_id
            )));
        }
        let positions = self.positions(now);
        let (id, newly_busy) = self.medium.begin(n, now, now + airtime, &positions);
        self.nodes[n].transmitting = Some(id);
        self.active.insert(id, payload);
        self.queue.schedule(now + airtime, Ev::TxEnd { tx: id })?;
        for m in newly_busy {
            self.update_busy(m, now);
        }
        self.update_busy(n, now);
        Ok(())
    }

    fn start_frame_tx(&mut self, n: usize, qi: usize, now: SimTime) -> Result<()> {
        let frame = self.nodes[n].mac.queue_mut(qi).begin_transmit(now).clone();
        let airtime = self.radio.frame_airtime(frame.payload_bytes)?;
        {
            let node = &mut self.nodes[n];
            node.hold = true;
            if node.txop_start.is_none() {
                node.txop_start = Some(now);
                node.burst_len = 0;
            }
            node.burst_len += 1;
            node.ack_gen += 1;
        }
        let gen = self.nodes[n].ack_gen;
        match frame.kind {
            FrameKind::Data => self.stats.data_tx_attempts += 1,
            _ => self.stats.mgmt_tx_attempts += 1,
        }
        let sid = self.nodes[n].ext_id;
        self.trace(
            now,
            sid,
            "tx-start",
            Some(frame.id),
            frame.flow_id,
            frame_reason(&frame),
        );
        self.queue.schedule(
            now + airtime + self.radio.ack_timeout(),
            Ev::AckTimeout { node: n, gen },
        )?;
        self.begin_tx(n, now, airtime, TxPayload::Frame { frame, queue: qi })
    }

    fn send_ack(&mut self, n: usize, to: usize, frame_id: u64, now: SimTime) -> Result<()> {
        if self.nodes[n].transmitting.is_some() {
            return Ok(());
        }
        self.stats.acks_sent += 1;
        let airtime = self.radio.ack_airtime();
        self.begin_tx(n, now, airtime, TxPayload::Ack { to, frame_id })
    }

    fn on_tx_end(&mut self, tx: TxId, now: SimTime) -> Result<()> {
        let (t, newly_idle) = self
            .medium
            .end(tx)
            .ok_or_else(|| SimError::Audit(format!("unknown transmission {tx}")))?;
        let payload = self.active.remove(&tx).expect("payload per transmission");
        self.nodes[t.transmitter].transmitting = None;
        for m in newly_idle {
            self.update_busy(m, now);
        }
        let tx_pos = self.nodes[t.transmitter].mobility.position_at(now);
        match payload {
            TxPayload::Frame { frame, queue } => {
                self.nodes[t.transmitter].mac.queue_mut(queue).end_transmit();
                let sid = self.nodes[t.transmitter].ext_id;
                self.trace(now, sid, "tx-end", Some(frame.id), frame.flow_id, String::new());
                let rx_pos = self.nodes[frame.dst].mobility.position_at(now);
                match self.medium.resolve_reception(frame.dst, &t, &rx_pos, &tx_pos) {
                    Reception::Success => self.on_frame_received(frame, now)?,
                    Reception::Collision => self.stats.collisions += 1,
                    Reception::OutOfRange => {}
                }
            }
            TxPayload::Ack { to, frame_id } => {
                let rx_pos = self.nodes[to].mobility.position_at(now);
                if self.medium.resolve_reception(to, &t, &rx_pos, &tx_pos) == Reception::Success {
                    self.on_ack(to, frame_id, now)?;
                }
            }
        }
        Ok(())
    }

    fn on_frame_received(&mut self, frame: Frame, now: SimTime) -> Result<()> {
        let r = frame.dst;
        let src = frame.src;
        match frame.kind {
            FrameKind::Data => {
                if self.nodes[r].role != Role::Bs || !self.nodes[src].assoc.associated_to(r) {
                    return Ok(());
                }
                self.queue.schedule(
                    now + self.radio.sifs(),
                    Ev::SendAck {
                        node: r,
                        to: src,
                        frame_id: frame.id,
                    },
                )?;
                if self.accepted.insert(frame.id) {
                    let rid = self.nodes[r].ext_id;
                    self.trace(now, rid, "rx-accepted", Some(frame.id), frame.flow_id, self.nodes[src].ext_id.to_string());
                    let link = self.nodes[r].wired.as_mut().expect("base station has a wired link");
                    match link.enqueue(now, frame.payload_bytes) {
                        WiredOutcome::Delivered { at } => {
                            self.queue.schedule(
                                at,
                                Ev::WiredDelivered {
                                    frame_id: frame.id,
                                    bs: r,
                                },
                            )?;
                        }
                        WiredOutcome::Dropped => {
                            self.metrics.record(FrameEvent::Dropped {
                                frame_id: frame.id,
                                at: now,
                                reason: DropReason::Wired,
                            })?;
                            self.trace(now, rid, "dropped", Some(frame.id), frame.flow_id, "wired".into());
                        }
                    }
                }
            }
            FrameKind::ReassocRequest => {
                if self.nodes[r].role != Role::Bs {
                    return Ok(());
                }
                self.queue.schedule(
                    now + self.radio.sifs(),
                    Ev::SendAck {
                        node: r,
                        to: src,
                        frame_id: frame.id,
                    },
                )?;
                let a = self.nodes[src].assoc;
                if self.accepted.insert(frame.id)
                    && a.current_bs == Some(r)
                    && a.handshake == Handshake::RequestSent
                {
                    let id = self.new_frame_id();
                    let resp = Frame {
                        id,
                        kind: FrameKind::ReassocResponse,
                        flow_id: None,
                        priority: 7,
                        src: r,
                        dst: src,
                        payload_bytes: self.mgmt_bytes,
                        created_at: now,
                        enqueued_at: None,
                        first_tx_at: None,
                        delivered_at: None,
                        retry_count: 0,
                    };
                    let qi = self.nodes[r].mac.management_queue();
                    self.nodes[r].mac.queue_mut(qi).enqueue_front(resp, now);
                    self.kick(r, qi, now)?;
                }
            }
            FrameKind::ReassocResponse => {
                self.queue.schedule(
                    now + self.radio.sifs(),
                    Ev::SendAck {
                        node: r,
                        to: src,
                        frame_id: frame.id,
                    },
                )?;
                let a = self.nodes[r].assoc;
                if a.current_bs == Some(src) && a.handshake == Handshake::RequestSent {
                    self.nodes[r].assoc.handshake = Handshake::Complete;
                    let ev = RoamEvent {
                        at: now,
                        station: self.nodes[r].ext_id,
                        bs: self.nodes[src].ext_id,
                        kind: RoamKind::HandshakeComplete,
                    };
                    self.roaming.push(ev);
                    let (sid, bid) = (ev.station, ev.bs);
                    self.trace(now, sid, "associated", None, None, bid.to_string());
                    self.refill(r, now)?;
                }
            }
        }
        Ok(())
    }

    fn on_ack(&mut self, n: usize, frame_id: u64, now: SimTime) -> Result<()> {
        let Some(qi) = self.nodes[n].mac.transmitting_queue() else {
            return Ok(());
        };
        let q = self.nodes[n].mac.queue(qi);
        if q.phase() != Phase::AwaitingAck || q.head().map(|f| f.id) != Some(frame_id) {
            return Ok(());
        }
        self.nodes[n].ack_gen += 1;
        let frame = self.nodes[n].mac.queue_mut(qi).on_tx_success(now);
        self.accepted.remove(&frame.id);
        let sid = self.nodes[n].ext_id;
        self.trace(now, sid, "acked", Some(frame.id), frame.flow_id, String::new());

        let node = &self.nodes[n];
        let txop_start = node.txop_start.expect("burst started");
        let limit = node.mac.queue(qi).params().txop_limit_us;
        if node.burst_len > 1 && (now - txop_start).micros() > limit {
            return Err(SimError::Audit(format!(
                "station {sid} burst ran {} us past a {limit} us TXOP",
                (now - txop_start).micros()
            )));
        }
        if frame.is_data() {
            self.refill(n, now)?;
        }
        let next = self.nodes[n].mac.queue(qi).head().cloned();
        let cont = match &next {
            Some(f) if self.can_send(n, f) => txop_burst_may_continue(
                limit,
                true,
                now - txop_start,
                self.radio.frame_airtime(f.payload_bytes)?,
                &self.radio,
            ),
            _ => false,
        };
        if cont {
            self.stats.burst_frames += 1;
            self.queue
                .schedule(now + self.radio.sifs(), Ev::BurstNext { node: n, queue: qi })?;
        } else {
            self.end_hold(n, now);
            let idle = self.nodes[n].idle();
            self.nodes[n].mac.queue_mut(qi).post_backoff(idle, &mut self.rng)?;
            self.reschedule(n, now);
        }
        Ok(())
    }

    fn end_hold(&mut self, n: usize, now: SimTime) {
        let node = &mut self.nodes[n];
        node.hold = false;
        node.txop_start = None;
        node.burst_len = 0;
        self.update_busy(n, now);
    }

    fn on_burst_next(&mut self, n: usize, qi: usize, now: SimTime) -> Result<()> {
        let sendable = match self.nodes[n].mac.queue(qi).head() {
            Some(f) => self.can_send(n, f),
            None => false,
        };
        if sendable && self.nodes[n].transmitting.is_none() {
            self.start_frame_tx(n, qi, now)
        } else {
            self.end_hold(n, now);
            let idle = self.nodes[n].idle();
            self.nodes[n].mac.queue_mut(qi).post_backoff(idle, &mut self.rng)?;
            self.reschedule(n, now);
            Ok(())
        }
    }

    fn on_ack_timeout(&mut self, n: usize, now: SimTime) -> Result<()> {
        let Some(qi) = self.nodes[n].mac.transmitting_queue() else {
            return Ok(());
        };
        self.stats.ack_timeouts += 1;
        self.end_hold(n, now);
        self.fail_queue(n, qi, now)?;
        self.reschedule(n, now);
        Ok(())
    }

    /// Failure path for the head of queue `qi`: retry or drop.
    fn fail_queue(&mut self, n: usize, qi: usize, now: SimTime) -> Result<()> {
        let head = self.nodes[n]
            .mac
            .queue(qi)
            .head()
            .expect("failure with a frame queued")
            .clone();
        if !self.can_send(n, &head) {
            return self.drop_head(n, qi, now);
        }
        let idle = self.nodes[n].idle();
        let outcome = self.nodes[n]
            .mac
            .queue_mut(qi)
            .on_tx_failure(idle, &mut self.rng)?;
        if let FailureOutcome::Dropped(frame) = outcome {
            self.resolve_drop(n, frame, DropReason::Retry, now)?;
        }
        Ok(())
    }

    /// Discards a head frame that may no longer be sent.
    fn drop_head(&mut self, n: usize, qi: usize, now: SimTime) -> Result<()> {
        let frame = self.nodes[n].mac.queue_mut(qi).abandon_head().expect("head");
        let idle = self.nodes[n].idle();
        self.nodes[n].mac.queue_mut(qi).post_backoff(idle, &mut self.rng)?;
        self.resolve_drop(n, frame, DropReason::Unassociated, now)
    }

    fn resolve_drop(&mut self, n: usize, frame: Frame, reason: DropReason, now: SimTime) -> Result<()> {
        let already_taken = self.accepted.remove(&frame.id);
        match frame.kind {
            FrameKind::Data => {
                if !already_taken {
                    self.metrics.record(FrameEvent::Dropped {
                        frame_id: frame.id,
                        at: now,
                        reason,
                    })?;
                    let sid = self.nodes[n].ext_id;
                    self.trace(now, sid, "dropped", Some(frame.id), frame.flow_id, reason.to_string());
                }
                self.refill(n, now)?;
            }
            FrameKind::ReassocRequest => {
                let a = &mut self.nodes[n].assoc;
                if a.current_bs == Some(frame.dst) && a.handshake == Handshake::RequestSent {
                    let bs = frame.dst;
                    self.nodes[n].assoc = AssociationState::default();
                    self.roaming.push(RoamEvent {
                        at: now,
                        station: self.nodes[n].ext_id,
                        bs: self.nodes[bs].ext_id,
                        kind: RoamKind::HandshakeAborted,
                    });
                }
            }
            FrameKind::ReassocResponse => {}
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // traffic

    fn make_data_frame(&mut self, flow: usize, bytes: u32, now: SimTime) -> Result<Frame> {
        let id = self.new_frame_id();
        let f = &self.flows[flow];
        let frame = Frame {
            id,
            kind: FrameKind::Data,
            flow_id: Some(f.spec.flow_id),
            priority: f.spec.priority,
            src: f.src,
            dst: self.nodes[f.src].assoc.current_bs.unwrap_or(usize::MAX),
            payload_bytes: bytes,
            created_at: now,
            enqueued_at: None,
            first_tx_at: None,
            delivered_at: None,
            retry_count: 0,
        };
        self.metrics.record(FrameEvent::Generated {
            frame_id: id,
            flow_id: f.spec.flow_id,
            at: now,
            bytes,
        })?;
        let sid = self.nodes[f.src].ext_id;
        let fid = f.spec.flow_id;
        self.trace(now, sid, "generated", Some(id), Some(fid), bytes.to_string());
        Ok(frame)
    }

    /// Hands a fresh data frame to its station's MAC.
    fn offer(&mut self, frame: Frame, now: SimTime) -> Result<bool> {
        let n = frame.src;
        if !self.nodes[n].assoc.can_send_data() {
            self.resolve_drop_no_refill(n, frame, DropReason::Unassociated, now)?;
            return Ok(false);
        }
        let qi = self.nodes[n].mac.queue_for_priority(frame.priority)?;
        match self.nodes[n].mac.queue_mut(qi).enqueue(frame, now) {
            Ok(()) => {
                self.kick(n, qi, now)?;
                Ok(true)
            }
            Err(frame) => {
                self.resolve_drop_no_refill(n, frame, DropReason::Queue, now)?;
                Ok(false)
            }
        }
    }

    fn resolve_drop_no_refill(
        &mut self,
        n: usize,
        frame: Frame,
        reason: DropReason,
        now: SimTime,
    ) -> Result<()> {
        self.metrics.record(FrameEvent::Dropped {
            frame_id: frame.id,
            at: now,
            reason,
        })?;
        let sid = self.nodes[n].ext_id;
        self.trace(now, sid, "dropped", Some(frame.id), frame.flow_id, reason.to_string());
        Ok(())
    }

    fn on_arrival(&mut self, flow: usize, now: SimTime) -> Result<()> {
        let Some(arrival) = self.flows[flow].source.next_packet(&mut self.rng)? else {
            return Ok(());
        };
        debug_assert_eq!(arrival.at, now);
        if let Some(t) = self.flows[flow].source.peek() {
            self.queue.schedule(t, Ev::Arrival { flow })?;
        }
        let frame = self.make_data_frame(flow, arrival.payload_bytes, now)?;
        self.offer(frame, now)?;
        Ok(())
    }

    /// Tops a saturated station's queue back up to capacity.
    fn refill(&mut self, n: usize, now: SimTime) -> Result<()> {
        let Some(flow) = self.nodes[n].saturated_flow else {
            return Ok(());
        };
        if !self.nodes[n].assoc.can_send_data() {
            return Ok(());
        }
        let prio = self.flows[flow].spec.priority;
        let qi = self.nodes[n].mac.queue_for_priority(prio)?;
        let bytes = self.flows[flow].spec.size_mean_bytes.round() as u32;
        while self.nodes[n].mac.queue(qi).len() < self.nodes[n].mac.queue(qi).params().queue_capacity {
            let frame = self.make_data_frame(flow, bytes, now)?;
            if !self.offer(frame, now)? {
                break;
            }
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // mobility and roaming

    fn association(&mut self, n: usize, now: SimTime) -> Result<()> {
        let pos = self.nodes[n].mobility.position_at(now);
        let bss: Vec<(usize, Position)> = self
            .bss
            .iter()
            .map(|&b| (b, self.nodes[b].mobility.position_at(now)))
            .collect();
        let action = association_step(
            &self.nodes[n].assoc,
            &pos,
            &bss,
            self.radio.range_m,
            now,
            self.handshake_timeout,
        );
        match action {
            AssociationAction::Stay => {}
            AssociationAction::Disassociate { from } => self.disassociate(n, from, now)?,
            AssociationAction::Request { to } => self.request(n, to, now)?,
            AssociationAction::Switch { from, to } => {
                self.disassociate(n, from, now)?;
                self.request(n, to, now)?;
            }
        }
        Ok(())
    }

    fn disassociate(&mut self, n: usize, from: usize, now: SimTime) -> Result<()> {
        let was = self.nodes[n].assoc;
        self.nodes[n].assoc = AssociationState::default();
        let kind = if was.handshake == Handshake::Complete {
            RoamKind::Disassociated
        } else {
            RoamKind::HandshakeAborted
        };
        let (sid, bid) = (self.nodes[n].ext_id, self.nodes[from].ext_id);
        self.roaming.push(RoamEvent {
            at: now,
            station: sid,
            bs: bid,
            kind,
        });
        self.trace(now, sid, "disassociated", None, None, bid.to_string());
        for qi in 0..self.nodes[n].mac.queues().len() {
            let flushed = self.nodes[n].mac.queue_mut(qi).flush_where(|_| true);
            for frame in flushed {
                let taken = self.accepted.remove(&frame.id);
                if frame.is_data() && !taken {
                    self.resolve_drop_no_refill(n, frame, DropReason::Unassociated, now)?;
                }
            }
        }
        self.reschedule(n, now);
        Ok(())
    }

    fn request(&mut self, n: usize, to: usize, now: SimTime) -> Result<()> {
        let id = self.new_frame_id();
        let frame = Frame {
            id,
            kind: FrameKind::ReassocRequest,
            flow_id: None,
            priority: 7,
            src: n,
            dst: to,
            payload_bytes: self.mgmt_bytes,
            created_at: now,
            enqueued_at: None,
            first_tx_at: None,
            delivered_at: None,
            retry_count: 0,
        };
        self.nodes[n].assoc = AssociationState {
            current_bs: Some(to),
            handshake: Handshake::RequestSent,
            handshake_started_at: now,
        };
        let (sid, bid) = (self.nodes[n].ext_id, self.nodes[to].ext_id);
        self.roaming.push(RoamEvent {
            at: now,
            station: sid,
            bs: bid,
            kind: RoamKind::HandshakeStarted,
        });
        let qi = self.nodes[n].mac.management_queue();
        self.nodes[n].mac.queue_mut(qi).enqueue_front(frame, now);
        self.kick(n, qi, now)
    }
}

fn frame_reason(frame: &Frame) -> String {
    match frame.kind {
        FrameKind::Data => match classify(frame.priority) {
            Ok(ac) => ac.to_string(),
            Err(_) => String::new(),
        },
        FrameKind::ReassocRequest => "reassoc-request".into(),
        FrameKind::ReassocResponse => "reassoc-response".into(),
    }
}

/// Convenience wrapper: build and run.
pub fn run_scenario(scenario: &Scenario, seed: u64, opts: RunOptions) -> Result<RunOutput> {
    Simulation::new(scenario, seed, opts)?.run()
}

/// Mode label used in outputs.
pub fn mode_name(mode: MacMode) -> &'static str {
    match mode {
        MacMode::Dcf => "dcf",
        MacMode::Edcf => "edcf",
    }
}
