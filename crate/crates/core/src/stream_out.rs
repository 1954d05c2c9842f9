//! Frame pacing and broadcast to viewer channels.
//!
//! The pacer owns the output queue. Each frame is released at its scheduled
//! presentation time and pushed to every sink without waiting on slow
//! consumers: bystander sinks drop their oldest entry when full, while the
//! immersant sink applies backpressure once its buffer exceeds two sequences.
//! Full-canvas keyframes are sent to late joiners on connect and to everyone
//! every few seconds; frames emitted while a keyframe is being encoded are
//! replayed after it so client composites stay exact.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicU8, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender, TryRecvError};
use image::RgbImage;

use crate::imaging;
use crate::interpolate::{Direction, MorphSequence, TimingModel};
use crate::protocol::{self, CaptionEvent, FramePatch, Message, PatchRegion, Ping};
use crate::session::Phase;

/// Milliseconds since a fixed epoch, shared by every stage.
#[derive(Debug, Clone, Copy)]
pub struct SessionClock {
    epoch: Instant,
}

impl SessionClock {
    pub fn new() -> Self {
        Self { epoch: Instant::now() }
    }

    pub fn starting_at(epoch: Instant) -> Self {
        Self { epoch }
    }

    pub fn epoch(&self) -> Instant {
        self.epoch
    }

    pub fn now_ms(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64() * 1000.0
    }

    pub fn instant_at(&self, ms: f64) -> Instant {
        self.epoch + Duration::from_secs_f64(ms.max(0.0) / 1000.0)
    }

    /// Sleeps until `ms`, finishing with a short yield loop for accuracy.
    pub fn sleep_until(&self, ms: f64) {
        loop {
            let remaining = ms - self.now_ms();
            if remaining <= 0.0 {
                return;
            }
            if remaining > 1.0 {
                thread::sleep(Duration::from_secs_f64((remaining - 0.6) / 1000.0));
            } else {
                thread::yield_now();
            }
        }
    }
}

impl Default for SessionClock {
    fn default() -> Self {
        Self::new()
    }
}

/// Counters exposed on `GET /metrics`.
#[derive(Debug, Default)]
pub struct Metrics {
    pub frames_emitted: AtomicU64,
    pub underflows: AtomicU64,
    pub bystander_drops: AtomicU64,
    pub cycle_count: AtomicU64,
    pub keyframes_sent: AtomicU64,
    pub captions_sent: AtomicU64,
    pub gaze_received: AtomicU64,
    pub gaze_rejected: AtomicU64,
    pub malformed_messages: AtomicU64,
    pub ignored_signals: AtomicU64,
    pub backend_failures: AtomicU64,
    pub sessions_archived: AtomicU64,
}

impl Metrics {
    pub fn get(counter: &AtomicU64) -> u64 {
        counter.load(Ordering::Relaxed)
    }

    pub fn bump(counter: &AtomicU64) {
        counter.fetch_add(1, Ordering::Relaxed);
    }

    /// Plain-text `name value` lines.
    pub fn render(&self, canvas_hash: Option<&str>) -> String {
        let rows = [
            ("frames_emitted", &self.frames_emitted),
            ("underflows", &self.underflows),
            ("bystander_drops", &self.bystander_drops),
            ("cycle_count", &self.cycle_count),
            ("keyframes_sent", &self.keyframes_sent),
            ("captions_sent", &self.captions_sent),
            ("gaze_received", &self.gaze_received),
            ("gaze_rejected", &self.gaze_rejected),
            ("malformed_messages", &self.malformed_messages),
            ("ignored_signals", &self.ignored_signals),
            ("backend_failures", &self.backend_failures),
            ("sessions_archived", &self.sessions_archived),
        ];
        let mut out = String::new();
        for (name, counter) in rows {
            out.push_str(&format!("{name} {}\n", Self::get(counter)));
        }
        if let Some(hash) = canvas_hash {
            out.push_str(&format!("canvas_hash {hash}\n"));
        }
        out
    }
}

/// Phase shared between stages.
#[derive(Debug, Default)]
pub struct SharedPhase(AtomicU8);

impl SharedPhase {
    pub fn get(&self) -> Phase {
        Phase::from_u8(self.0.load(Ordering::Acquire))
    }

    pub fn set(&self, phase: Phase) {
        self.0.store(phase.as_u8(), Ordering::Release);
    }
}

#[derive(Debug, Clone)]
pub struct ScheduledFrame {
    pub index: usize,
    pub present_at_ms: f64,
    pub region: PatchRegion,
    pub image: Arc<RgbImage>,
    pub png: Option<Arc<[u8]>>,
}

impl ScheduledFrame {
    fn png(&mut self) -> Arc<[u8]> {
        self.png.get_or_insert_with(|| imaging::encode_png_rgb(&self.image).into()).clone()
    }
}

#[derive(Debug, Clone)]
pub struct ScheduledSequence {
    pub cycle_index: u64,
    pub direction: Direction,
    pub frames: Vec<ScheduledFrame>,
    pub caption: Option<CaptionEvent>,
    pub window_start_ms: Option<u64>,
    /// Slot after the last frame; the next sequence may start here.
    pub end_ms: f64,
}

impl ScheduledSequence {
    /// Attaches pre-encoded PNG payloads, one per frame.
    pub fn attach_pngs(&mut self, pngs: Vec<Arc<[u8]>>) {
        for (frame, png) in self.frames.iter_mut().zip(pngs) {
            frame.png = Some(png);
        }
    }
}

/// Encodes every frame of a sequence as PNG.
pub fn encode_frames(seq: &MorphSequence) -> Vec<Arc<[u8]>> {
    seq.frames.iter().map(|f| imaging::encode_png_rgb(f).into()).collect()
}

/// Assigns presentation times so consecutive sequences never overlap.
#[derive(Debug, Clone, Default)]
pub struct Scheduler {
    end_of_previous_ms: Option<f64>,
}

impl Scheduler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn end_of_previous_ms(&self) -> Option<f64> {
        self.end_of_previous_ms
    }

    /// Frame `i` is presented at `start + i * interval`, with
    /// `start = max(now, end of previous sequence)`.
    pub fn schedule(&mut self, seq: &MorphSequence, now_ms: f64) -> ScheduledSequence {
        let start = self.end_of_previous_ms.map_or(now_ms, |end| end.max(now_ms));
        let interval = seq.frame_interval_ms;
        let region = PatchRegion { x0: seq.region.x0, y0: seq.region.y0, width: seq.region.side, height: seq.region.side };
        let frames: Vec<_> = seq
            .frames
            .iter()
            .enumerate()
            .map(|(index, image)| ScheduledFrame {
                index,
                present_at_ms: start + index as f64 * interval,
                region,
                image: image.clone(),
                png: None,
            })
            .collect();
        let end_ms = start + frames.len() as f64 * interval;
        self.end_of_previous_ms = Some(end_ms);
        ScheduledSequence {
            cycle_index: seq.cycle_index,
            direction: seq.direction,
            frames,
            caption: seq.prompt.as_ref().map(|p| CaptionEvent { text: p.text.clone(), cycle_index: seq.cycle_index }),
            window_start_ms: seq.window_start_ms,
            end_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SinkRole {
    Immersant,
    Bystander,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outbound {
    Frame(FramePatch),
    Caption(CaptionEvent),
    Ping(Ping),
}

impl Outbound {
    pub fn into_message(self) -> Message {
        match self {
            Outbound::Frame(f) => Message::Frame(f),
            Outbound::Caption(c) => Message::Caption(c),
            Outbound::Ping(p) => Message::Ping(p),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        protocol::encode_message(&self.clone().into_message())
    }
}

#[derive(Debug, Default)]
struct SinkState {
    queue: VecDeque<Outbound>,
    next_seq: u32,
    closed: bool,
}

/// Buffered per-connection output with its own frame counter.
#[derive(Debug)]
pub struct Sink {
    id: u64,
    role: SinkRole,
    capacity: usize,
    state: Mutex<SinkState>,
    readable: Condvar,
    writable: Condvar,
    drops: AtomicU64,
}

impl Sink {
    pub fn new(id: u64, role: SinkRole, capacity: usize) -> Self {
        Self {
            id,
            role,
            capacity: capacity.max(1),
            state: Mutex::new(SinkState::default()),
            readable: Condvar::new(),
            writable: Condvar::new(),
            drops: AtomicU64::new(0),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn role(&self) -> SinkRole {
        self.role
    }

    pub fn drops(&self) -> u64 {
        self.drops.load(Ordering::Relaxed)
    }

    pub fn is_closed(&self) -> bool {
        self.state.lock().unwrap().closed
    }

    pub fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.readable.notify_all();
        self.writable.notify_all();
    }

    pub fn len(&self) -> usize {
        self.state.lock().unwrap().queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Returns the number of entries dropped to make room.
    fn enqueue(&self, make: impl FnOnce(&mut SinkState) -> Outbound) -> u64 {
        let mut state = self.state.lock().unwrap();
        let mut dropped = 0;
        match self.role {
            SinkRole::Immersant => {
                while state.queue.len() >= self.capacity && !state.closed {
                    state = self.writable.wait(state).unwrap();
                }
            }
            SinkRole::Bystander => {
                while state.queue.len() >= self.capacity {
                    state.queue.pop_front();
                    dropped += 1;
                }
            }
        }
        if state.closed {
            return 0;
        }
        let item = make(&mut state);
        state.queue.push_back(item);
        drop(state);
        self.readable.notify_one();
        if dropped > 0 {
            self.drops.fetch_add(dropped, Ordering::Relaxed);
        }
        dropped
    }

    pub fn push_frame(&self, region: PatchRegion, present_at_ms: u64, png: Arc<[u8]>) -> u64 {
        self.enqueue(|state| {
            let seq_no = state.next_seq;
            state.next_seq = state.next_seq.wrapping_add(1);
            Outbound::Frame(FramePatch { seq_no, region, present_at_ms, png })
        })
    }

    pub fn push_caption(&self, caption: CaptionEvent) -> u64 {
        self.enqueue(|_| Outbound::Caption(caption))
    }

    pub fn push_ping(&self, ping: Ping) -> u64 {
        self.enqueue(|_| Outbound::Ping(ping))
    }

    /// Next queued item; `None` on timeout or once closed and drained.
    pub fn pop(&self, timeout: Duration) -> Option<Outbound> {
        let deadline = Instant::now() + timeout;
        let mut state = self.state.lock().unwrap();
        loop {
            if let Some(item) = state.queue.pop_front() {
                drop(state);
                self.writable.notify_one();
                return Some(item);
            }
            if state.closed {
                return None;
            }
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            state = self.readable.wait_timeout(state, deadline - now).unwrap().0;
        }
    }
}

/// Immersant, bystander, and caption sinks.
#[derive(Debug)]
pub struct ChannelSet {
    immersant: Mutex<Arc<Sink>>,
    bystanders: Mutex<Vec<Arc<Sink>>>,
    captions: Mutex<Vec<Arc<Sink>>>,
    next_id: AtomicU64,
    immersant_capacity: usize,
    bystander_capacity: usize,
}

impl ChannelSet {
    /// Immersant capacity covers two sequences; bystanders get the same buffer
    /// but drop their oldest entries instead of blocking.
    pub fn new(timing: TimingModel) -> Self {
        let cap = 2 * timing.frames_per_sequence() + 4;
        let immersant = Arc::new(Sink::new(0, SinkRole::Immersant, cap));
        Self {
            immersant: Mutex::new(immersant),
            bystanders: Mutex::new(Vec::new()),
            captions: Mutex::new(Vec::new()),
            next_id: AtomicU64::new(1),
            immersant_capacity: cap,
            bystander_capacity: cap,
        }
    }

    pub fn new_sink(&self, role: SinkRole) -> Arc<Sink> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let cap = match role {
            SinkRole::Immersant => self.immersant_capacity,
            SinkRole::Bystander => self.bystander_capacity,
        };
        Arc::new(Sink::new(id, role, cap))
    }

    pub fn immersant(&self) -> Arc<Sink> {
        self.immersant.lock().unwrap().clone()
    }

    /// Installs a new immersant sink and closes the previous one.
    pub fn set_immersant(&self, sink: Arc<Sink>) {
        let old = std::mem::replace(&mut *self.immersant.lock().unwrap(), sink);
        old.close();
    }

    /// Adds a bystander that also receives captions.
    pub fn add_bystander(&self, sink: Arc<Sink>) {
        self.bystanders.lock().unwrap().push(sink.clone());
        self.captions.lock().unwrap().push(sink);
    }

    pub fn add_caption_sink(&self, sink: Arc<Sink>) {
        self.captions.lock().unwrap().push(sink);
    }

    pub fn bystanders(&self) -> Vec<Arc<Sink>> {
        let mut list = self.bystanders.lock().unwrap();
        list.retain(|s| !s.is_closed());
        list.clone()
    }

    /// Every frame sink, immersant first.
    pub fn frame_sinks(&self) -> Vec<Arc<Sink>> {
        let mut all = vec![self.immersant()];
        all.extend(self.bystanders());
        all
    }

    pub fn caption_sinks(&self) -> Vec<Arc<Sink>> {
        let mut list = self.captions.lock().unwrap();
        list.retain(|s| !s.is_closed());
        let mut all = vec![self.immersant()];
        all.extend(list.iter().cloned());
        all
    }

    pub fn close_all(&self) {
        for sink in self.frame_sinks() {
            sink.close();
        }
        for sink in self.captions.lock().unwrap().iter() {
            sink.close();
        }
    }
}

/// Sends a caption to every caption sink.
pub fn emit_caption(caption: &CaptionEvent, channels: &ChannelSet, metrics: &Metrics) {
    for sink in channels.caption_sinks() {
        sink.push_caption(caption.clone());
    }
    Metrics::bump(&metrics.captions_sent);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Emission {
    pub cycle_index: u64,
    pub direction: Direction,
    pub frame_index: usize,
    pub scheduled_ms: f64,
    pub emitted_ms: f64,
}

/// What the pacer observed over its lifetime.
#[derive(Debug, Clone, Default)]
pub struct PlaybackLog {
    pub emissions: Vec<Emission>,
    /// `(cycle_index, ms from window start to first frame)` for forward sequences.
    pub first_visibility_ms: Vec<(u64, f64)>,
    /// Emission time of the first frame of each sequence, in play order.
    pub sequence_starts_ms: Vec<(u64, Direction, f64)>,
    pub underflow_times_ms: Vec<f64>,
    pub captions: Vec<(CaptionEvent, f64)>,
}

impl PlaybackLog {
    /// Absolute emission error in ms for every frame.
    pub fn pacing_errors_ms(&self) -> Vec<f64> {
        self.emissions.iter().map(|e| (e.emitted_ms - e.scheduled_ms).abs()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyframeTarget {
    All,
    Sink(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PacerCommand {
    Keyframe(KeyframeTarget),
}

pub struct PacerContext {
    pub clock: SessionClock,
    pub channels: Arc<ChannelSet>,
    pub metrics: Arc<Metrics>,
    pub phase: Arc<SharedPhase>,
    /// Composite of everything emitted so far.
    pub displayed: Arc<Mutex<RgbImage>>,
    pub keyframe_interval: Option<Duration>,
}

struct PendingKeyframe {
    targets: Vec<KeyframeTarget>,
    backlog: Vec<(PatchRegion, u64, Arc<[u8]>)>,
    result: Receiver<Arc<[u8]>>,
}

/// The pacing stage. Runs until `handoff` disconnects and all queued frames
/// have been emitted.
pub struct Pacer {
    ctx: PacerContext,
    handoff: Receiver<ScheduledSequence>,
    commands: Receiver<PacerCommand>,
    log: PlaybackLog,
    requested: Vec<KeyframeTarget>,
    pending: Option<PendingKeyframe>,
    next_periodic_ms: Option<f64>,
    stop: Arc<AtomicBool>,
}

impl Pacer {
    pub fn new(ctx: PacerContext, handoff: Receiver<ScheduledSequence>, commands: Receiver<PacerCommand>) -> Self {
        let next_periodic_ms = ctx.keyframe_interval.map(|_| 0.0);
        Self {
            ctx,
            handoff,
            commands,
            log: PlaybackLog::default(),
            requested: Vec::new(),
            pending: None,
            next_periodic_ms,
            stop: Arc::new(AtomicBool::new(false)),
        }
    }

    /// Setting the flag abandons queued frames and ends the loop.
    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }

    pub fn spawn(self) -> JoinHandle<PlaybackLog> {
        thread::Builder::new()
            .name("pacer".into())
            .spawn(move || self.pump())
            .expect("spawn pacer thread")
    }

    /// Emits scheduled frames at their presentation times.
    pub fn pump(mut self) -> PlaybackLog {
        let mut current: Option<ScheduledSequence> = None;
        let mut cursor = 0usize;
        let mut next_deadline: Option<f64> = None;
        let mut underflow_flagged = false;
        let mut was_active = false;
        loop {
            if self.stop.load(Ordering::Relaxed) {
                break;
            }
            let active = self.ctx.phase.get() == Phase::Active;
            if active && !was_active {
                next_deadline = None;
            }
            was_active = active;
            self.service_keyframes();
            let Some(seq) = current.as_mut().filter(|s| cursor < s.frames.len()) else {
                current = None;
                match self.handoff.try_recv() {
                    Ok(seq) => {
                        current = Some(seq);
                        cursor = 0;
                        continue;
                    }
                    Err(TryRecvError::Disconnected) => {
                        if self.pending.is_none() {
                            break;
                        }
                        thread::sleep(Duration::from_millis(1));
                        continue;
                    }
                    Err(TryRecvError::Empty) => {}
                }
                let now = self.ctx.clock.now_ms();
                if let Some(deadline) = next_deadline {
                    if now >= deadline && !underflow_flagged && active {
                        underflow_flagged = true;
                        Metrics::bump(&self.ctx.metrics.underflows);
                        self.log.underflow_times_ms.push(deadline);
                    }
                }
                match self.handoff.recv_timeout(Duration::from_millis(2)) {
                    Ok(seq) => {
                        current = Some(seq);
                        cursor = 0;
                    }
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => {
                        if self.pending.is_none() {
                            break;
                        }
                    }
                }
                continue;
            };

            let present_at = seq.frames[cursor].present_at_ms;
            self.ctx.clock.sleep_until(present_at);
            let frame = &mut seq.frames[cursor];
            let png = frame.png();
            let region = frame.region;
            let index = frame.index;
            let at_ms = present_at.round() as u64;
            for sink in self.ctx.channels.frame_sinks() {
                let dropped = sink.push_frame(region, at_ms, png.clone());
                if dropped > 0 {
                    self.ctx.metrics.bystander_drops.fetch_add(dropped, Ordering::Relaxed);
                }
            }
            let emitted_ms = self.ctx.clock.now_ms();
            imaging::paste(&mut self.ctx.displayed.lock().unwrap(), &frame.image, region.x0, region.y0);
            if let Some(pending) = self.pending.as_mut() {
                pending.backlog.push((region, at_ms, png));
            }
            Metrics::bump(&self.ctx.metrics.frames_emitted);
            self.log.emissions.push(Emission {
                cycle_index: seq.cycle_index,
                direction: seq.direction,
                frame_index: index,
                scheduled_ms: present_at,
                emitted_ms,
            });
            if cursor == 0 {
                self.log.sequence_starts_ms.push((seq.cycle_index, seq.direction, emitted_ms));
                if let Some(start) = seq.window_start_ms {
                    self.log.first_visibility_ms.push((seq.cycle_index, emitted_ms - start as f64));
                }
                if let Some(caption) = &seq.caption {
                    emit_caption(caption, &self.ctx.channels, &self.ctx.metrics);
                    self.log.captions.push((caption.clone(), emitted_ms));
                }
            }
            next_deadline = Some(seq.end_ms);
            underflow_flagged = false;
            cursor += 1;
        }
        self.log
    }

    fn service_keyframes(&mut self) {
        while let Ok(PacerCommand::Keyframe(target)) = self.commands.try_recv() {
            self.requested.push(target);
        }
        if let (Some(interval), Some(next)) = (self.ctx.keyframe_interval, self.next_periodic_ms) {
            let now = self.ctx.clock.now_ms();
            if now >= next {
                self.requested.push(KeyframeTarget::All);
                self.next_periodic_ms = Some(now + interval.as_secs_f64() * 1000.0);
            }
        }
        if let Some(pending) = &self.pending {
            match pending.result.try_recv() {
                Ok(png) => {
                    let pending = self.pending.take().unwrap();
                    self.deliver_keyframe(pending, png);
                }
                Err(TryRecvError::Empty) => return,
                Err(TryRecvError::Disconnected) => self.pending = None,
            }
        }
        if self.pending.is_none() && !self.requested.is_empty() {
            let targets = std::mem::take(&mut self.requested);
            let snapshot = self.ctx.displayed.lock().unwrap().clone();
            let (tx, rx) = crossbeam_channel::bounded(1);
            thread::spawn(move || {
                let _ = tx.send(imaging::encode_png_rgb(&snapshot).into());
            });
            self.pending = Some(PendingKeyframe { targets, backlog: Vec::new(), result: rx });
        }
    }

    fn deliver_keyframe(&mut self, pending: PendingKeyframe, png: Arc<[u8]>) {
        let (width, height) = self.ctx.displayed.lock().unwrap().dimensions();
        let region = PatchRegion { x0: 0, y0: 0, width, height };
        let now = self.ctx.clock.now_ms().round() as u64;
        let sinks = self.ctx.channels.frame_sinks();
        let all = pending.targets.contains(&KeyframeTarget::All);
        for sink in sinks.iter().filter(|s| all || pending.targets.contains(&KeyframeTarget::Sink(s.id()))) {
            sink.push_frame(region, now, png.clone());
            for (r, at, p) in &pending.backlog {
                sink.push_frame(*r, *at, p.clone());
            }
            Metrics::bump(&self.ctx.metrics.keyframes_sent);
        }
    }
}

/// Drains a sink in-process, recording `(seq_no, payload hash)` of every
/// frame. Stands in for the headset's local rendering buffer when no remote
/// immersant is connected.
pub fn spawn_recorder(sink: Arc<Sink>, hash_payloads: bool) -> JoinHandle<Vec<(u32, String)>> {
    thread::spawn(move || {
        let mut seen = Vec::new();
        while let Some(item) = sink.pop(Duration::from_secs(3600)) {
            if let Outbound::Frame(f) = item {
                let hash = if hash_payloads { imaging::bytes_hash(&f.png) } else { String::new() };
                seen.push((f.seq_no, hash));
            }
        }
        seen
    })
}

/// Installs a fresh in-process immersant sink drained by a background
/// thread, replacing (and closing) the current one.
pub fn install_local_display(channels: &ChannelSet) -> JoinHandle<Vec<(u32, String)>> {
    let sink = channels.new_sink(SinkRole::Immersant);
    channels.set_immersant(sink.clone());
    spawn_recorder(sink, false)
}

/// Presentation-time channel connecting the orchestrator to the pacer.
pub fn handoff_channel() -> (Sender<ScheduledSequence>, Receiver<ScheduledSequence>) {
    crossbeam_channel::bounded(2)
}
