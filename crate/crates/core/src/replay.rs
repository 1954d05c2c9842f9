//! Recorded gaze traces: parsing, real-time playback into a pipeline, and a
//! summary of what came out.
//!
//! A trace is a file of gaze and control messages, one JSON line each, in
//! the ordinary wire format. Message `ts` values are milliseconds after the
//! start of the replay and are used directly as arrival stamps, so the same
//! trace always produces the same gaze windows.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::ingest::Event;
use crate::interpolate::Direction;
use crate::pipeline::{CycleTiming, Pipeline, PipelineOptions};
use crate::protocol::{decode_message, encode_message, Message};
use crate::stream_out::PlaybackLog;

/// Idle gap after which the feeder advances the clock with a tick.
pub const TICK_MS: u64 = 5;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("trace line {line}: {reason}")]
    BadLine { line: usize, reason: String },
    #[error("reading trace {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceEntry {
    Gaze(crate::protocol::GazeSample),
    Control(crate::protocol::ControlSignal),
}

impl TraceEntry {
    pub fn ts_ms(&self) -> u64 {
        match self {
            TraceEntry::Gaze(g) => g.ts_ms,
            TraceEntry::Control(c) => c.ts_ms,
        }
    }

    fn into_event(self) -> Event {
        match self {
            TraceEntry::Gaze(sample) => Event::Gaze { arrival_ms: sample.ts_ms, sample },
            TraceEntry::Control(signal) => Event::Control { arrival_ms: signal.ts_ms, signal },
        }
    }
}

/// Parses a trace. Blank lines are skipped; timestamps must not decrease.
pub fn parse_trace(text: &str) -> Result<Vec<TraceEntry>, ReplayError> {
    let mut out: Vec<TraceEntry> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let entry = match decode_message(line.trim().as_bytes()) {
            Ok(Message::Gaze(g)) => TraceEntry::Gaze(g),
            Ok(Message::Control(c)) => TraceEntry::Control(c),
            Ok(_) => return Err(ReplayError::BadLine { line: line_no, reason: "only gaze and control messages belong in a trace".into() }),
            Err(e) => return Err(ReplayError::BadLine { line: line_no, reason: e.to_string() }),
        };
        if let Some(prev) = out.last() {
            if entry.ts_ms() < prev.ts_ms() {
                return Err(ReplayError::BadLine {
                    line: line_no,
                    reason: format!("timestamp {} precedes {}", entry.ts_ms(), prev.ts_ms()),
                });
            }
        }
        out.push(entry);
    }
    Ok(out)
}

pub fn load_trace(path: &Path) -> Result<Vec<TraceEntry>, ReplayError> {
    let text = std::fs::read_to_string(path).map_err(|source| ReplayError::Io { path: path.to_owned(), source })?;
    parse_trace(&text)
}

/// Serializes entries back into trace text.
pub fn write_trace(entries: &[TraceEntry]) -> String {
    let mut out = Vec::new();
    for e in entries {
        let msg = match e {
            TraceEntry::Gaze(g) => Message::Gaze(*g),
            TraceEntry::Control(c) => Message::Control(*c),
        };
        out.extend(encode_message(&msg));
    }
    String::from_utf8(out).expect("text messages are UTF-8")
}

#[derive(Debug, Default)]
pub struct ReplayReport {
    pub playback: PlaybackLog,
    pub archives: Vec<PathBuf>,
    pub cycles: Vec<CycleTiming>,
    pub errors: Vec<String>,
    pub metrics_text: String,
    pub final_canvas_hash: String,
}

impl ReplayReport {
    /// Frames per second over forward playback, excluding the first sequence.
    pub fn steady_state_fps(&self) -> Option<f64> {
        let first_cycle = self.playback.sequence_starts_ms.iter().find(|s| s.1 == Direction::Forward)?.0;
        let times: Vec<f64> = self
            .playback
            .emissions
            .iter()
            .filter(|e| e.direction == Direction::Forward && e.cycle_index != first_cycle)
            .map(|e| e.emitted_ms)
            .collect();
        if times.len() < 2 {
            return None;
        }
        Some((times.len() - 1) as f64 / ((times[times.len() - 1] - times[0]) / 1000.0))
    }

    /// Underflows that happened after the first sequence started.
    pub fn underflows_after_first_sequence(&self) -> usize {
        let Some(first) = self.playback.sequence_starts_ms.first() else {
            return 0;
        };
        self.playback.underflow_times_ms.iter().filter(|t| **t > first.2).count()
    }

    pub fn max_first_visibility_ms(&self) -> Option<f64> {
        self.playback.first_visibility_ms.iter().map(|(_, l)| *l).reduce(f64::max)
    }
}

/// Feeds `trace` into a fresh pipeline in real time and waits for it to
/// archive and finish playback.
pub fn run_replay(opts: PipelineOptions, trace: Vec<TraceEntry>) -> ReplayReport {
    let pipeline = Pipeline::start(opts);
    let clock = pipeline.clock();
    let events = pipeline.events();
    let mut next_tick = 0u64;
    for entry in trace {
        let ts = entry.ts_ms();
        while next_tick < ts {
            clock.sleep_until(next_tick as f64);
            if events.send(Event::Tick(next_tick)).is_err() {
                break;
            }
            next_tick += TICK_MS;
        }
        clock.sleep_until(ts as f64);
        if events.send(entry.into_event()).is_err() {
            break;
        }
        next_tick = ts + TICK_MS;
    }
    let _ = events.send(Event::Shutdown { drain: true });
    drop(events);
    let report = pipeline.wait();
    ReplayReport {
        playback: report.playback,
        archives: report.archives,
        cycles: report.cycles,
        errors: report.errors,
        metrics_text: report.metrics_text,
        final_canvas_hash: report.final_canvas_hash,
    }
}

/// Deterministic synthetic trace: mount at 0, a wandering gaze path sampled
/// at `rate_hz` for `duration_ms`, then unmount.
pub fn synthetic_trace(duration_ms: u64, rate_hz: f64, seed: u64) -> Vec<TraceEntry> {
    let mut trace = synthetic_gaze(duration_ms, rate_hz, seed);
    trace.push(TraceEntry::Control(crate::protocol::ControlSignal {
        kind: crate::protocol::ControlKind::Unmounted,
        ts_ms: duration_ms,
    }));
    trace
}

/// [`synthetic_trace`] without the final unmount.
pub fn synthetic_gaze(duration_ms: u64, rate_hz: f64, seed: u64) -> Vec<TraceEntry> {
    use crate::protocol::{ControlKind, ControlSignal, GazeSample};
    let mut out = vec![TraceEntry::Control(ControlSignal { kind: ControlKind::Mounted, ts_ms: 0 })];
    let phase = (seed % 997) as f64 / 997.0 * std::f64::consts::TAU;
    let period = 1000.0 / rate_hz;
    let mut k = 1u64;
    loop {
        let ts = (k as f64 * period).round() as u64;
        if ts >= duration_ms {
            break;
        }
        let t = ts as f64 / 1000.0;
        let x = 0.5 + 0.32 * (0.31 * t + phase).sin() + 0.05 * (2.3 * t).sin();
        let y = 0.5 + 0.30 * (0.23 * t + 2.0 * phase).cos() + 0.05 * (1.7 * t).cos();
        out.push(TraceEntry::Gaze(GazeSample::new(ts, x.clamp(0.0, 1.0), y.clamp(0.0, 1.0)).expect("in range")));
        k += 1;
    }
    out
}
