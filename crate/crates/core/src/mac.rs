//! Contention state machines for legacy DCF and 802.11e EDCF.
//!
//! Each [`EdcaQueue`] owns one FIFO plus its contention state (current window,
//! backoff counter, retry count). A station in DCF mode has a single queue; in
//! EDCF mode it has four, one per access category, each contending with its own
//! AIFS and window. The queue does not know about time directly: the engine
//! tells it when its medium went busy or idle and asks for its access instant.

use crate::error::{Result, SimError};
use crate::phy::RadioParams;
use crate::sim::RandomStream;
use crate::time::SimTime;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::fmt;

/// Access categories in ascending priority order.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum AccessCategory {
    #[serde(rename = "BK")]
    Bk,
    #[serde(rename = "BE")]
    Be,
    #[serde(rename = "VI")]
    Vi,
    #[serde(rename = "VO")]
    Vo,
}

impl AccessCategory {
    pub const ALL: [AccessCategory; 4] = [
        AccessCategory::Bk,
        AccessCategory::Be,
        AccessCategory::Vi,
        AccessCategory::Vo,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            AccessCategory::Bk => "BK",
            AccessCategory::Be => "BE",
            AccessCategory::Vi => "VI",
            AccessCategory::Vo => "VO",
        }
    }
}

impl fmt::Display for AccessCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Maps an 802.1D user priority onto its access category.
pub fn classify(priority: u8) -> Result<AccessCategory> {
    match priority {
        7 | 6 => Ok(AccessCategory::Vo),
        5 | 4 => Ok(AccessCategory::Vi),
        3 | 0 => Ok(AccessCategory::Be),
        2 | 1 => Ok(AccessCategory::Bk),
        p => Err(SimError::InvalidParam(format!(
            "user priority {p} outside 0..=7"
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MacMode {
    #[serde(rename = "dcf")]
    Dcf,
    #[serde(rename = "edcf")]
    Edcf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessCategoryParams {
    pub ac: AccessCategory,
    pub aifsn: u32,
    pub cw_min: u32,
    pub cw_max: u32,
    /// 0 means one frame per channel access.
    pub txop_limit_us: u64,
    pub retry_limit: u32,
    pub queue_capacity: usize,
}

fn is_window(v: u32) -> bool {
    (v as u64 + 1).is_power_of_two()
}

impl AccessCategoryParams {
    /// Reference EDCA parameter set for the DSSS PHY.
    pub fn edca_default(ac: AccessCategory) -> Self {
        let (aifsn, cw_min, cw_max, txop_limit_us) = match ac {
            AccessCategory::Vo => (2, 7, 15, 3008),
            AccessCategory::Vi => (2, 15, 31, 6016),
            AccessCategory::Be => (3, 31, 1023, 0),
            AccessCategory::Bk => (7, 31, 1023, 0),
        };
        AccessCategoryParams {
            ac,
            aifsn,
            cw_min,
            cw_max,
            txop_limit_us,
            retry_limit: 7,
            queue_capacity: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let key = |f: &str| format!("ac_params.{}.{f}", self.ac);
        if self.aifsn < 2 {
            return Err(SimError::config(key("aifsn"), "must be >= 2"));
        }
        if !is_window(self.cw_min) {
            return Err(SimError::config(key("cw_min"), "must be of the form 2^k - 1"));
        }
        if !is_window(self.cw_max) {
            return Err(SimError::config(key("cw_max"), "must be of the form 2^k - 1"));
        }
        if self.cw_min > self.cw_max {
            return Err(SimError::config(key("cw_min"), "must not exceed cw_max"));
        }
        if self.retry_limit < 1 {
            return Err(SimError::config(key("retry_limit"), "must be >= 1"));
        }
        if self.queue_capacity < 1 {
            return Err(SimError::config(key("queue_capacity"), "must be >= 1"));
        }
        Ok(())
    }
}

/// The single-queue legacy DCF parameters.
pub fn dcf_mode_params() -> AccessCategoryParams {
    AccessCategoryParams {
        ac: AccessCategory::Be,
        aifsn: 2,
        cw_min: 31,
        cw_max: 1023,
        txop_limit_us: 0,
        retry_limit: 7,
        queue_capacity: 50,
    }
}

/// `SIFS + AIFSN * slot`; AIFSN = 2 gives DIFS.
pub fn aifs_duration(params: &AccessCategoryParams, radio: &RadioParams) -> SimTime {
    SimTime(radio.sifs_us + params.aifsn as u64 * radio.slot_us)
}

/// The highest-priority ready category wins an internal collision.
pub fn resolve_virtual_collision(ready: &[AccessCategory]) -> Option<AccessCategory> {
    ready.iter().copied().max()
}

/// Whether another SIFS-separated frame fits in the current TXOP.
pub fn txop_burst_may_continue(
    txop_limit_us: u64,
    queue_nonempty: bool,
    elapsed_in_txop: SimTime,
    next_airtime: SimTime,
    radio: &RadioParams,
) -> bool {
    if txop_limit_us == 0 || !queue_nonempty {
        return false;
    }
    let needed = elapsed_in_txop + radio.sifs() + next_airtime + radio.sifs() + radio.ack_airtime();
    needed.micros() <= txop_limit_us
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameKind {
    Data,
    ReassocRequest,
    ReassocResponse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub id: u64,
    pub kind: FrameKind,
    /// `None` for management frames.
    pub flow_id: Option<u32>,
    pub priority: u8,
    /// Radio indices.
    pub src: usize,
    pub dst: usize,
    pub payload_bytes: u32,
    pub created_at: SimTime,
    pub enqueued_at: Option<SimTime>,
    pub first_tx_at: Option<SimTime>,
    pub delivered_at: Option<SimTime>,
    pub retry_count: u32,
}

impl Frame {
    pub fn is_data(&self) -> bool {
        self.kind == FrameKind::Data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Idle,
    DeferringAifs,
    Backoff,
    Transmitting,
    AwaitingAck,
}

/// Result of a failed attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum FailureOutcome {
    Retry,
    Dropped(Frame),
}

#[derive(Debug, Clone)]
pub struct EdcaQueue {
    params: AccessCategoryParams,
    aifs: SimTime,
    slot: SimTime,
    fifo: VecDeque<Frame>,
    cw_current: u32,
    backoff_counter: u32,
    retry_count: u32,
    phase: Phase,
    /// Instant from which this queue has been counting idle time (AIFS then slots).
    /// `None` while frozen by a busy medium.
    count_from: Option<SimTime>,
}

impl EdcaQueue {
    pub fn new(params: AccessCategoryParams, radio: &RadioParams) -> Self {
        let aifs = aifs_duration(&params, radio);
        EdcaQueue {
            cw_current: params.cw_min,
            params,
            aifs,
            slot: radio.slot(),
            fifo: VecDeque::new(),
            backoff_counter: 0,
            retry_count: 0,
            phase: Phase::Idle,
            count_from: None,
        }
    }

    pub fn params(&self) -> &AccessCategoryParams {
        &self.params
    }

    pub fn ac(&self) -> AccessCategory {
        self.params.ac
    }

    pub fn aifs(&self) -> SimTime {
        self.aifs
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn cw_current(&self) -> u32 {
        self.cw_current
    }

    pub fn backoff_counter(&self) -> u32 {
        self.backoff_counter
    }

    pub fn retry_count(&self) -> u32 {
        self.retry_count
    }

    pub fn len(&self) -> usize {
        self.fifo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fifo.is_empty()
    }

    pub fn head(&self) -> Option<&Frame> {
        self.fifo.front()
    }

    pub fn head_mut(&mut self) -> Option<&mut Frame> {
        self.fifo.front_mut()
    }

    pub fn frames(&self) -> impl Iterator<Item = &Frame> {
        self.fifo.iter()
    }

    pub fn is_contending(&self) -> bool {
        matches!(self.phase, Phase::DeferringAifs | Phase::Backoff)
    }

    /// True while the head frame is on the air or awaiting its ACK.
    pub fn in_flight(&self) -> bool {
        matches!(self.phase, Phase::Transmitting | Phase::AwaitingAck)
    }

    /// Appends a frame; hands it back when the queue is full.
    pub fn enqueue(&mut self, mut frame: Frame, now: SimTime) -> std::result::Result<(), Frame> {
        if self.fifo.len() >= self.params.queue_capacity {
            return Err(frame);
        }
        frame.enqueued_at = Some(now);
        self.fifo.push_back(frame);
        Ok(())
    }

    /// Pushes a frame ahead of everything else (used for management frames).
    pub fn enqueue_front(&mut self, mut frame: Frame, now: SimTime) {
        frame.enqueued_at = Some(now);
        let at = usize::from(self.in_flight());
        self.fifo.insert(at.min(self.fifo.len()), frame);
    }

    fn draw_backoff(&mut self, rng: &mut RandomStream) -> Result<()> {
        self.backoff_counter = rng.uniform_int(0, self.cw_current)?;
        Ok(())
    }

    /// Begins contention for the head frame. `idle_since` is `None` when the
    /// medium is busy. An idle medium that has already been idle for AIFS with no
    /// backoff pending lets the frame go out immediately.
    pub fn start_contention(
        &mut self,
        now: SimTime,
        idle_since: Option<SimTime>,
        rng: &mut RandomStream,
    ) -> Result<()> {
        if self.phase != Phase::Idle || self.fifo.is_empty() {
            return Ok(());
        }
        match idle_since {
            Some(since) if since + self.aifs <= now => {
                self.backoff_counter = 0;
                self.count_from = Some(since);
                self.phase = Phase::Backoff;
            }
            _ => {
                self.draw_backoff(rng)?;
                self.count_from = idle_since;
                self.phase = Phase::DeferringAifs;
            }
        }
        Ok(())
    }

    /// Instant at which this queue's backoff would expire if the medium stays idle.
    /// May lie in the past for the immediate-access case; callers clamp.
    pub fn access_time(&self) -> Option<SimTime> {
        if !self.is_contending() {
            return None;
        }
        let from = self.count_from?;
        Some(from + self.aifs + SimTime(self.backoff_counter as u64 * self.slot.micros()))
    }

    /// One full idle slot passed after AIFS. Returns true when the counter hits zero.
    pub fn on_idle_slot(&mut self) -> bool {
        debug_assert_eq!(self.phase, Phase::Backoff);
        if self.backoff_counter > 0 {
            self.backoff_counter -= 1;
        }
        self.backoff_counter == 0
    }

    /// Medium turned busy at `busy_at`: credit the whole idle slots elapsed since
    /// AIFS expiry and freeze. A queue whose access instant is `busy_at` or
    /// earlier is already committed and is left alone.
    pub fn freeze(&mut self, busy_at: SimTime) {
        let Some(access) = self.access_time() else {
            return;
        };
        if access <= busy_at {
            return;
        }
        let from = self.count_from.take().expect("access_time implies count_from");
        let aifs_end = from + self.aifs;
        if busy_at > aifs_end {
            self.phase = Phase::Backoff;
            let slots = (busy_at - aifs_end).micros() / self.slot.micros();
            for _ in 0..slots {
                self.on_idle_slot();
            }
        }
    }

    /// Like [`freeze`](Self::freeze) but also stops a queue that is already due,
    /// for when the station itself occupies the medium. The counter keeps
    /// whatever slots were credited (possibly reaching zero).
    pub fn force_freeze(&mut self, at: SimTime) {
        let Some(from) = self.count_from.take() else {
            return;
        };
        if !self.is_contending() {
            return;
        }
        let aifs_end = from + self.aifs;
        if at > aifs_end {
            self.phase = Phase::Backoff;
            let slots = (at - aifs_end).micros() / self.slot.micros();
            let n = slots.min(self.backoff_counter as u64) as u32;
            self.backoff_counter -= n;
        }
    }

    /// Medium turned idle at `idle_at`: restart AIFS deference.
    pub fn resume(&mut self, idle_at: SimTime) {
        if self.is_contending() && self.count_from.is_none() {
            self.count_from = Some(idle_at);
            self.phase = Phase::DeferringAifs;
        }
    }

    /// Backoff expired with nothing queued (post-backoff finished).
    pub fn finish_post_backoff(&mut self) {
        debug_assert!(self.fifo.is_empty());
        self.phase = Phase::Idle;
        self.count_from = None;
        self.backoff_counter = 0;
    }

    /// Marks the head frame as on the air.
    pub fn begin_transmit(&mut self, now: SimTime) -> &Frame {
        self.phase = Phase::Transmitting;
        self.count_from = None;
        self.backoff_counter = 0;
        let head = self.fifo.front_mut().expect("transmit with empty queue");
        head.first_tx_at.get_or_insert(now);
        head.retry_count = self.retry_count;
        head
    }

    pub fn end_transmit(&mut self) {
        debug_assert_eq!(self.phase, Phase::Transmitting);
        self.phase = Phase::AwaitingAck;
    }

    /// ACK received: dequeue the head and reset the window.
    pub fn on_tx_success(&mut self, now: SimTime) -> Frame {
        let mut frame = self.fifo.pop_front().expect("success with empty queue");
        frame.delivered_at = Some(now);
        self.cw_current = self.params.cw_min;
        self.retry_count = 0;
        self.phase = Phase::Idle;
        frame
    }

    /// Post-success backoff, run even with an empty queue so a station cannot
    /// capture the channel.
    pub fn post_backoff(
        &mut self,
        idle_since: Option<SimTime>,
        rng: &mut RandomStream,
    ) -> Result<()> {
        self.draw_backoff(rng)?;
        self.count_from = idle_since;
        self.phase = Phase::DeferringAifs;
        Ok(())
    }

    /// Missed ACK, collision, or lost internal collision: double the window and
    /// either redraw or give up on the head frame.
    pub fn on_tx_failure(
        &mut self,
        idle_since: Option<SimTime>,
        rng: &mut RandomStream,
    ) -> Result<FailureOutcome> {
        self.cw_current = (2 * (self.cw_current + 1) - 1).min(self.params.cw_max);
        self.retry_count += 1;
        let outcome = if self.retry_count > self.params.retry_limit {
            let frame = self.fifo.pop_front().expect("failure with empty queue");
            self.cw_current = self.params.cw_min;
            self.retry_count = 0;
            FailureOutcome::Dropped(frame)
        } else {
            FailureOutcome::Retry
        };
        self.draw_backoff(rng)?;
        self.count_from = idle_since;
        self.phase = Phase::DeferringAifs;
        Ok(outcome)
    }

    /// Drops the head without touching the window (used on disassociation).
    pub fn abandon_head(&mut self) -> Option<Frame> {
        let f = self.fifo.pop_front();
        self.cw_current = self.params.cw_min;
        self.retry_count = 0;
        if self.in_flight() {
            self.phase = Phase::Idle;
            self.count_from = None;
        }
        f
    }

    /// Removes queued frames matching `pred`, leaving any in-flight head in place.
    pub fn flush_where(&mut self, mut pred: impl FnMut(&Frame) -> bool) -> Vec<Frame> {
        let keep_head = usize::from(self.in_flight());
        let mut kept = VecDeque::with_capacity(self.fifo.len());
        let mut removed = Vec::new();
        let mut head_removed = false;
        for (i, f) in self.fifo.drain(..).enumerate() {
            if i >= keep_head && pred(&f) {
                head_removed |= i == 0;
                removed.push(f);
            } else {
                kept.push_back(f);
            }
        }
        self.fifo = kept;
        if head_removed {
            // window and retries belonged to the removed head; a pending
            // backoff carries on as post-backoff
            self.cw_current = self.params.cw_min;
            self.retry_count = 0;
        }
        removed
    }
}

/// The MAC entity of one radio.
#[derive(Debug, Clone)]
pub struct StationMac {
    mode: MacMode,
    queues: Vec<EdcaQueue>,
}

impl StationMac {
    /// `ac_params` must hold one entry per category, indexed by `AccessCategory::index`.
    pub fn new(
        mode: MacMode,
        dcf: &AccessCategoryParams,
        ac_params: &[AccessCategoryParams; 4],
        radio: &RadioParams,
    ) -> Self {
        let queues = match mode {
            MacMode::Dcf => vec![EdcaQueue::new(dcf.clone(), radio)],
            MacMode::Edcf => ac_params
                .iter()
                .map(|p| EdcaQueue::new(p.clone(), radio))
                .collect(),
        };
        StationMac { mode, queues }
    }

    pub fn mode(&self) -> MacMode {
        self.mode
    }

    pub fn queues(&self) -> &[EdcaQueue] {
        &self.queues
    }

    pub fn queues_mut(&mut self) -> &mut [EdcaQueue] {
        &mut self.queues
    }

    pub fn queue(&self, idx: usize) -> &EdcaQueue {
        &self.queues[idx]
    }

    pub fn queue_mut(&mut self, idx: usize) -> &mut EdcaQueue {
        &mut self.queues[idx]
    }

    /// Queue index serving a given user priority.
    pub fn queue_for_priority(&self, priority: u8) -> Result<usize> {
        let ac = classify(priority)?;
        Ok(match self.mode {
            MacMode::Dcf => 0,
            MacMode::Edcf => ac.index(),
        })
    }

    /// Management frames ride the voice queue.
    pub fn management_queue(&self) -> usize {
        match self.mode {
            MacMode::Dcf => 0,
            MacMode::Edcf => AccessCategory::Vo.index(),
        }
    }

    pub fn transmitting_queue(&self) -> Option<usize> {
        self.queues.iter().position(|q| q.in_flight())
    }
}
