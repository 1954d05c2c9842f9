//! Stage wiring: collect → orchestrate → pace.
//!
//! The collect stage owns the gaze window and decides when cycles fire. A
//! cycle for trigger time `T` fires once an event stamped after `T` has been
//! seen, so the window contents depend only on arrival stamps and replays are
//! reproducible. Trigger times come from a just-in-time planner: each cycle
//! is started late enough that its sequence becomes ready shortly before the
//! previous one finishes playing, which keeps playback contiguous without
//! letting the output queue (and therefore latency) grow.
//!
//! The orchestrator owns the session, backend, and scheduler. Control
//! signals reach it on a separate channel that is always checked before the
//! job queue. The pacer owns presentation.

use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, Sender};
use image::RgbImage;

use crate::gaze_mask::{CanvasDims, GazeWindow};
use crate::imaging;
use crate::ingest::{Event, Stamper, ViewContext};
use crate::interpolate::CrossDissolve;
use crate::protocol::{ControlKind, ControlSignal};
use crate::session::{ControlOutcome, Phase, Session, SessionConfig, SessionError};
use crate::stream_out::{
    self, ChannelSet, Metrics, Pacer, PacerCommand, PacerContext, PlaybackLog, ScheduledSequence, Scheduler,
    SessionClock, SharedPhase,
};
use crate::synthesis::{InpaintBackend, PromptRegistry};

pub struct PipelineOptions {
    pub session: SessionConfig,
    pub canvas: RgbImage,
    pub prompts: PromptRegistry,
    pub backend: Box<dyn InpaintBackend>,
    pub archive_dir: PathBuf,
    pub keyframe_interval: Option<Duration>,
    pub dump_masks: Option<PathBuf>,
    pub clock: SessionClock,
}

/// Decides trigger times. All quantities are on the session clock in ms.
#[derive(Debug, Clone, PartialEq)]
pub struct CyclePlanner {
    delta_t_ms: u64,
    expected_compute_ms: u64,
    margin_ms: u64,
    span_ms: f64,
    plan_end_ms: f64,
}

impl CyclePlanner {
    pub fn new(config: &SessionConfig) -> Self {
        Self {
            delta_t_ms: config.delta_t_ms,
            expected_compute_ms: config.synthesis.simulated_latency_ms + config.sim_interp_ms,
            margin_ms: config.schedule_margin_ms,
            span_ms: config.timing().sequence_span_ms(),
            plan_end_ms: 0.0,
        }
    }

    /// First trigger after a mount at `mount_ms`.
    pub fn start(&mut self, mount_ms: u64) -> u64 {
        self.plan_end_ms = mount_ms as f64;
        mount_ms + self.delta_t_ms
    }

    /// Planned playback start for a sequence triggered at `trigger_ms`.
    pub fn planned_start(&self, trigger_ms: u64) -> f64 {
        ((trigger_ms + self.expected_compute_ms) as f64).max(self.plan_end_ms)
    }

    /// Records the cycle fired at `trigger_ms` and returns the next trigger.
    /// `produces` is false when the window cannot yield a mask.
    pub fn advance(&mut self, trigger_ms: u64, produces: bool) -> u64 {
        if produces {
            self.plan_end_ms = self.planned_start(trigger_ms) + self.span_ms;
        }
        let just_in_time = self.plan_end_ms - (self.expected_compute_ms + self.margin_ms) as f64;
        (trigger_ms + self.delta_t_ms).max(just_in_time.ceil().max(0.0) as u64)
    }
}

enum Job {
    Cycle { trigger_ms: u64, window: GazeWindow },
    /// Finish everything queued, archive if active, and stop.
    Drain,
}

enum ControlRequest {
    Signal { signal: ControlSignal, arrival_ms: u64, reply: Sender<ControlOutcome> },
    /// Stop now: queued jobs are discarded and an active session is archived
    /// without reversal.
    Abort,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleTiming {
    pub cycle_index: u64,
    pub trigger_ms: u64,
    pub ready_ms: f64,
    pub start_ms: f64,
    pub compute_ms: f64,
    pub delta_t_prime_ms: u64,
}

#[derive(Debug, Default)]
pub struct PipelineReport {
    pub playback: PlaybackLog,
    pub archives: Vec<PathBuf>,
    pub cycles: Vec<CycleTiming>,
    pub errors: Vec<String>,
    pub final_canvas_hash: String,
    pub metrics_text: String,
}

pub struct Pipeline {
    clock: SessionClock,
    events: Sender<Event>,
    channels: Arc<ChannelSet>,
    metrics: Arc<Metrics>,
    phase: Arc<SharedPhase>,
    displayed: Arc<Mutex<RgbImage>>,
    pacer_commands: Sender<PacerCommand>,
    pacer_stop: Arc<AtomicBool>,
    collect: JoinHandle<()>,
    orchestrator: JoinHandle<OrchestratorOutput>,
    pacer: JoinHandle<PlaybackLog>,
    ticker_stop: Arc<AtomicBool>,
}

struct OrchestratorOutput {
    archives: Vec<PathBuf>,
    cycles: Vec<CycleTiming>,
    errors: Vec<String>,
}

impl Pipeline {
    pub fn start(opts: PipelineOptions) -> Pipeline {
        let clock = opts.clock;
        let timing = opts.session.timing();
        let channels = Arc::new(ChannelSet::new(timing));
        stream_out::install_local_display(&channels);
        let metrics = Arc::new(Metrics::default());
        let phase = Arc::new(SharedPhase::default());
        let displayed = Arc::new(Mutex::new(opts.canvas.clone()));

        let (events_tx, events_rx) = crossbeam_channel::unbounded();
        let (jobs_tx, jobs_rx) = crossbeam_channel::bounded(2);
        let (control_tx, control_rx) = crossbeam_channel::unbounded();
        let (handoff_tx, handoff_rx) = stream_out::handoff_channel();
        let (pacer_tx, pacer_rx) = crossbeam_channel::unbounded();

        let pacer = Pacer::new(
            PacerContext {
                clock,
                channels: channels.clone(),
                metrics: metrics.clone(),
                phase: phase.clone(),
                displayed: displayed.clone(),
                keyframe_interval: opts.keyframe_interval,
            },
            handoff_rx,
            pacer_rx,
        );
        let pacer_stop = pacer.stop_flag();
        let pacer = pacer.spawn();

        let dims = CanvasDims::new(opts.canvas.width(), opts.canvas.height());
        let collect_stage = CollectStage {
            window: GazeWindow::new(opts.session.delta_t_ms),
            dims,
            planner: CyclePlanner::new(&opts.session),
            next_trigger: None,
            jobs: jobs_tx,
            control: control_tx,
        };
        let collect = thread::Builder::new()
            .name("collect".into())
            .spawn(move || collect_stage.run(events_rx))
            .expect("spawn collect thread");

        let mut session = Session::new(opts.canvas, opts.session);
        session.keep_heatmaps(opts.dump_masks.is_some());
        let orchestrator_stage = Orchestrator {
            session,
            backend: opts.backend,
            prompts: opts.prompts,
            archive_dir: opts.archive_dir,
            dump_masks: opts.dump_masks,
            clock,
            scheduler: Scheduler::new(),
            handoff: handoff_tx,
            metrics: metrics.clone(),
            phase: phase.clone(),
            pacer_stop: pacer_stop.clone(),
            out: OrchestratorOutput { archives: Vec::new(), cycles: Vec::new(), errors: Vec::new() },
        };
        let orchestrator = thread::Builder::new()
            .name("orchestrator".into())
            .spawn(move || orchestrator_stage.run(jobs_rx, control_rx))
            .expect("spawn orchestrator thread");

        Pipeline {
            clock,
            events: events_tx,
            channels,
            metrics,
            phase,
            displayed,
            pacer_commands: pacer_tx,
            pacer_stop,
            collect,
            orchestrator,
            pacer,
            ticker_stop: Arc::new(AtomicBool::new(false)),
        }
    }

    pub fn clock(&self) -> SessionClock {
        self.clock
    }

    pub fn events(&self) -> Sender<Event> {
        self.events.clone()
    }

    pub fn stamper(&self) -> Arc<Stamper> {
        Arc::new(Stamper::new(self.clock, self.events.clone()))
    }

    pub fn metrics(&self) -> Arc<Metrics> {
        self.metrics.clone()
    }

    pub fn channels(&self) -> Arc<ChannelSet> {
        self.channels.clone()
    }

    pub fn phase(&self) -> Phase {
        self.phase.get()
    }

    pub fn view_context(&self) -> ViewContext {
        ViewContext {
            clock: self.clock,
            channels: self.channels.clone(),
            metrics: self.metrics.clone(),
            pacer: self.pacer_commands.clone(),
            displayed: self.displayed.clone(),
        }
    }

    /// Sends clock ticks so cycles fire without gaze input.
    pub fn spawn_ticker(&self, stamper: Arc<Stamper>, period: Duration) -> JoinHandle<()> {
        let stop = self.ticker_stop.clone();
        thread::spawn(move || {
            while !stop.load(Ordering::Relaxed) && stamper.tick() {
                thread::sleep(period);
            }
        })
    }

    /// Stops the pipeline. With `drain`, queued cycles and playback finish
    /// first; without it, pending work is dropped and an active session is
    /// archived as-is.
    pub fn shutdown(self, drain: bool) -> PipelineReport {
        let _ = self.events.send(Event::Shutdown { drain });
        if !drain {
            self.pacer_stop.store(true, Ordering::Relaxed);
            self.channels.immersant().close();
        }
        self.wait()
    }

    /// Waits for a shutdown already sent on the event channel.
    pub fn wait(self) -> PipelineReport {
        let _ = self.collect.join();
        let out = self.orchestrator.join().unwrap_or_else(|_| OrchestratorOutput {
            archives: Vec::new(),
            cycles: Vec::new(),
            errors: vec!["orchestrator panicked".into()],
        });
        let playback = self.pacer.join().unwrap_or_default();
        self.ticker_stop.store(true, Ordering::Relaxed);
        self.pacer_stop.store(true, Ordering::Relaxed);
        self.channels.close_all();
        let final_canvas_hash = imaging::image_hash(&self.displayed.lock().unwrap());
        PipelineReport {
            playback,
            archives: out.archives,
            cycles: out.cycles,
            errors: out.errors,
            metrics_text: self.metrics.render(Some(&final_canvas_hash)),
            final_canvas_hash,
        }
    }
}

struct CollectStage {
    window: GazeWindow,
    dims: CanvasDims,
    planner: CyclePlanner,
    next_trigger: Option<u64>,
    jobs: Sender<Job>,
    control: Sender<ControlRequest>,
}

impl CollectStage {
    fn run(mut self, events: Receiver<Event>) {
        for event in events.iter() {
            if let Some(stamp) = event.stamp() {
                if !self.fire_due(stamp) {
                    return;
                }
            }
            match event {
                Event::Gaze { sample, arrival_ms } => {
                    if self.next_trigger.is_some() {
                        self.window.push_sample(&sample, self.dims, arrival_ms);
                    }
                }
                Event::Control { signal, arrival_ms } => {
                    let (reply_tx, reply_rx) = crossbeam_channel::bounded(1);
                    let request = ControlRequest::Signal { signal, arrival_ms, reply: reply_tx };
                    if self.control.send(request).is_err() {
                        return;
                    }
                    match reply_rx.recv() {
                        Ok(ControlOutcome::Transitioned(Phase::Active)) => {
                            self.window.clear();
                            self.next_trigger = Some(self.planner.start(arrival_ms));
                        }
                        Ok(ControlOutcome::Transitioned(_)) => {
                            self.window.clear();
                            self.next_trigger = None;
                        }
                        Ok(ControlOutcome::Ignored) => {}
                        Err(_) => return,
                    }
                }
                Event::Tick(_) => {}
                Event::Shutdown { drain } => {
                    if drain {
                        let _ = self.jobs.send(Job::Drain);
                    } else {
                        let _ = self.control.send(ControlRequest::Abort);
                    }
                    return;
                }
            }
        }
        let _ = self.control.send(ControlRequest::Abort);
    }

    /// Fires every trigger strictly before `stamp`. Returns false when the
    /// orchestrator is gone.
    fn fire_due(&mut self, stamp: u64) -> bool {
        while let Some(trigger) = self.next_trigger.filter(|&t| stamp > t) {
            let window = self.window.snapshot_at(trigger);
            let produces = window.len() >= 2;
            self.next_trigger = Some(self.planner.advance(trigger, produces));
            if window.is_empty() {
                continue;
            }
            if self.jobs.send(Job::Cycle { trigger_ms: trigger, window }).is_err() {
                return false;
            }
        }
        true
    }
}

struct Orchestrator {
    session: Session,
    backend: Box<dyn InpaintBackend>,
    prompts: PromptRegistry,
    archive_dir: PathBuf,
    dump_masks: Option<PathBuf>,
    clock: SessionClock,
    scheduler: Scheduler,
    handoff: Sender<ScheduledSequence>,
    metrics: Arc<Metrics>,
    phase: Arc<SharedPhase>,
    pacer_stop: Arc<AtomicBool>,
    out: OrchestratorOutput,
}

enum Flow {
    Continue,
    Stop,
}

impl Orchestrator {
    fn run(mut self, jobs: Receiver<Job>, control: Receiver<ControlRequest>) -> OrchestratorOutput {
        loop {
            let flow = if let Ok(request) = control.try_recv() {
                self.on_control(request, &jobs, &control)
            } else {
                crossbeam_channel::select! {
                    recv(control) -> msg => match msg {
                        Ok(request) => self.on_control(request, &jobs, &control),
                        Err(_) => self.abort(),
                    },
                    recv(jobs) -> msg => match msg {
                        Ok(job) => self.on_job(job, &control),
                        Err(_) => self.abort(),
                    },
                }
            };
            if let Flow::Stop = flow {
                break;
            }
        }
        self.out
    }

    fn sync_phase(&self) {
        self.phase.set(self.session.phase());
        self.metrics.ignored_signals.store(self.session.ignored_signals(), Ordering::Relaxed);
    }

    fn on_job(&mut self, job: Job, control: &Receiver<ControlRequest>) -> Flow {
        match job {
            Job::Cycle { trigger_ms, window } => {
                self.run_cycle(trigger_ms, &window);
                Flow::Continue
            }
            Job::Drain => {
                while let Ok(ControlRequest::Signal { reply, .. }) = control.try_recv() {
                    let _ = reply.send(ControlOutcome::Ignored);
                }
                self.archive_if_active();
                Flow::Stop
            }
        }
    }

    fn on_control(&mut self, request: ControlRequest, jobs: &Receiver<Job>, control: &Receiver<ControlRequest>) -> Flow {
        match request {
            ControlRequest::Abort => self.abort(),
            ControlRequest::Signal { signal, arrival_ms, reply } => {
                if self.session.phase() == Phase::Active && signal.kind == ControlKind::Unmounted {
                    let mut drain_after = false;
                    while let Ok(job) = jobs.try_recv() {
                        match job {
                            Job::Cycle { trigger_ms, window } => self.run_cycle(trigger_ms, &window),
                            Job::Drain => drain_after = true,
                        }
                    }
                    let outcome = self.session.on_control(&signal);
                    self.sync_phase();
                    let _ = reply.send(outcome);
                    log::info!("unmounted at {arrival_ms} ms after {} cycles", self.session.cycle_count());
                    if let Flow::Stop = self.reverse_and_archive(control) {
                        return Flow::Stop;
                    }
                    return if drain_after { Flow::Stop } else { Flow::Continue };
                }
                let outcome = self.session.on_control(&signal);
                self.sync_phase();
                if outcome == ControlOutcome::Transitioned(Phase::Active) {
                    log::info!("mounted at {arrival_ms} ms");
                }
                let _ = reply.send(outcome);
                Flow::Continue
            }
        }
    }

    fn abort(&mut self) -> Flow {
        self.pacer_stop.store(true, Ordering::Relaxed);
        self.archive_if_active();
        Flow::Stop
    }

    fn archive_if_active(&mut self) {
        match self.session.phase() {
            Phase::Active => {
                if let Err(e) = self.session.abandon() {
                    self.out.errors.push(e.to_string());
                    return;
                }
                self.sync_phase();
                self.archive();
            }
            Phase::Reversing => {
                let _ = self.session.finish_reversal();
                self.archive();
            }
            Phase::Archiving => self.archive(),
            Phase::Idle => {}
        }
    }

    fn archive(&mut self) {
        match self.session.archive(&self.archive_dir) {
            Ok(path) => {
                log::info!("archived session to {}", path.display());
                Metrics::bump(&self.metrics.sessions_archived);
                self.out.archives.push(path);
            }
            Err(e) => {
                log::error!("archive failed: {e}");
                self.out.errors.push(e.to_string());
            }
        }
        self.sync_phase();
    }

    fn run_cycle(&mut self, trigger_ms: u64, window: &GazeWindow) {
        if self.session.phase() != Phase::Active {
            return;
        }
        let started = Instant::now();
        let started_ms = self.clock.now_ms();
        let result = self.session.run_cycle(window, self.backend.as_ref(), &self.prompts, &CrossDissolve);
        let mut seq = match result {
            Ok(Some(seq)) => seq,
            Ok(None) => return,
            Err(SessionError::Synthesis(e)) => {
                log::warn!("cycle at {trigger_ms} ms skipped: {e}");
                Metrics::bump(&self.metrics.backend_failures);
                return;
            }
            Err(e) => {
                log::error!("cycle at {trigger_ms} ms failed: {e}");
                self.out.errors.push(e.to_string());
                return;
            }
        };
        let encode_started = Instant::now();
        let pngs = stream_out::encode_frames(&seq);
        let interp_ms = seq.delta_t_prime_ms as f64 + encode_started.elapsed().as_secs_f64() * 1000.0;
        let sim_ms = self.session.config().sim_interp_ms as f64;
        if interp_ms < sim_ms {
            thread::sleep(Duration::from_secs_f64((sim_ms - interp_ms) / 1000.0));
        }
        seq.delta_t_prime_ms = interp_ms.max(sim_ms).round() as u64;
        seq.window_start_ms = Some(trigger_ms.saturating_sub(self.session.config().delta_t_ms));
        if let (Some(dir), Some(heat)) = (&self.dump_masks, self.session.last_heatmap()) {
            let path = dir.join(format!("mask_{}.png", seq.cycle_index));
            if let Err(e) = fs::create_dir_all(dir).and_then(|_| fs::write(&path, imaging::encode_png_gray(&heat.to_gray_image()))) {
                log::warn!("could not write {}: {e}", path.display());
            }
        }
        Metrics::bump(&self.metrics.cycle_count);
        let ready_ms = self.clock.now_ms();
        let mut scheduled = self.scheduler.schedule(&seq, ready_ms);
        scheduled.attach_pngs(pngs);
        self.out.cycles.push(CycleTiming {
            cycle_index: seq.cycle_index,
            trigger_ms,
            ready_ms,
            start_ms: scheduled.frames[0].present_at_ms,
            compute_ms: started.elapsed().as_secs_f64() * 1000.0,
            delta_t_prime_ms: seq.delta_t_prime_ms,
        });
        log::debug!(
            "cycle {} trigger {trigger_ms} began {started_ms:.1} ready {ready_ms:.1} start {:.1}",
            seq.cycle_index,
            scheduled.frames[0].present_at_ms
        );
        let _ = self.handoff.send(scheduled);
    }

    fn reverse_and_archive(&mut self, control: &Receiver<ControlRequest>) -> Flow {
        let plan = match self.session.reversal_plan() {
            Ok(plan) => plan,
            Err(e) => {
                self.out.errors.push(e.to_string());
                return Flow::Continue;
            }
        };
        let mut stop = false;
        for seq in plan.sequences(&CrossDissolve) {
            while let Ok(request) = control.try_recv() {
                match request {
                    ControlRequest::Signal { signal, reply, .. } => {
                        let _ = reply.send(self.session.on_control(&signal));
                        self.sync_phase();
                    }
                    ControlRequest::Abort => {
                        stop = true;
                        self.pacer_stop.store(true, Ordering::Relaxed);
                    }
                }
            }
            if stop {
                break;
            }
            let seq = match seq {
                Ok(seq) => seq,
                Err(e) => {
                    self.out.errors.push(e.to_string());
                    break;
                }
            };
            let pngs = stream_out::encode_frames(&seq);
            let mut scheduled = self.scheduler.schedule(&seq, self.clock.now_ms());
            scheduled.attach_pngs(pngs);
            let _ = self.handoff.send(scheduled);
        }
        if let Err(e) = self.session.finish_reversal() {
            self.out.errors.push(e.to_string());
        }
        self.sync_phase();
        self.archive();
        if stop {
            Flow::Stop
        } else {
            Flow::Continue
        }
    }
}
