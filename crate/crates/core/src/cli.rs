//! Process entry: configuration, startup, and shutdown.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use crate::config::{self, Config, ConfigError};
use crate::ingest;
use crate::pipeline::{Pipeline, PipelineOptions};
use crate::replay;
use crate::stream_out::SessionClock;
use crate::synthesis::{BackendKind, InpaintBackend, MockBackend, PromptRegistry, RemoteBackend};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Parses `args` and the process environment, then runs. Returns the exit status.
pub fn main_with_args(args: Vec<String>) -> i32 {
    match config::load_config(args, std::env::vars()) {
        Ok(config) => run(&config),
        Err(ConfigError::Help(text)) => {
            print!("{text}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("morphcanvas: {e}");
            EXIT_USAGE
        }
    }
}

fn load_canvas(path: &Path) -> Result<image::RgbImage, String> {
    let img = image::open(path).map_err(|e| format!("cannot read canvas {}: {e}", path.display()))?;
    Ok(img.to_rgb8())
}

fn build_backend(config: &Config) -> Box<dyn InpaintBackend> {
    let synth = &config.session.synthesis;
    match &synth.backend {
        BackendKind::Mock => Box::new(MockBackend::new(Duration::from_millis(synth.simulated_latency_ms))),
        BackendKind::Remote { url } => Box::new(RemoteBackend::new(url.clone(), config.remote_timeout)),
    }
}

fn pipeline_options(config: &Config) -> Result<PipelineOptions, String> {
    let canvas = load_canvas(&config.canvas_path)?;
    let prompts = match &config.prompts_path {
        Some(path) => PromptRegistry::load(path).map_err(|e| format!("prompts {}: {e}", path.display()))?,
        None => PromptRegistry::builtin(),
    };
    Ok(PipelineOptions {
        session: config.session.clone(),
        canvas,
        prompts,
        backend: build_backend(config),
        archive_dir: config.archive_dir.clone(),
        keyframe_interval: (config.keyframe_interval_ms > 0).then(|| Duration::from_millis(config.keyframe_interval_ms)),
        dump_masks: config.dump_masks.clone(),
        clock: SessionClock::new(),
    })
}

/// Runs the server (or a replay) to completion.
pub fn run(config: &Config) -> i32 {
    let opts = match pipeline_options(config) {
        Ok(opts) => opts,
        Err(e) => {
            eprintln!("morphcanvas: {e}");
            return EXIT_FAILURE;
        }
    };
    match &config.replay {
        Some(trace_path) => run_replay(opts, trace_path),
        None => run_live(config, opts),
    }
}

fn run_replay(opts: PipelineOptions, trace_path: &Path) -> i32 {
    let trace = match replay::load_trace(trace_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("morphcanvas: {e}");
            return EXIT_FAILURE;
        }
    };
    let report = replay::run_replay(opts, trace);
    for path in &report.archives {
        println!("archived {}", path.display());
    }
    for e in &report.errors {
        eprintln!("morphcanvas: {e}");
    }
    if report.errors.is_empty() {
        EXIT_OK
    } else {
        EXIT_FAILURE
    }
}

fn run_live(config: &Config, opts: PipelineOptions) -> i32 {
    let (stop_tx, stop_rx) = crossbeam_channel::bounded::<()>(1);
    if let Err(e) = ctrlc::set_handler(move || {
        let _ = stop_tx.try_send(());
    }) {
        eprintln!("morphcanvas: cannot install interrupt handler: {e}");
        return EXIT_FAILURE;
    }
    let pipeline = Pipeline::start(opts);
    let stamper = pipeline.stamper();
    let gaze = match ingest::spawn_gaze_listener(&config.gaze_listen, stamper.clone(), pipeline.metrics()) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("morphcanvas: cannot listen for gaze on {}: {e}", config.gaze_listen);
            pipeline.shutdown(false);
            return EXIT_FAILURE;
        }
    };
    let view = match ingest::spawn_view_listener(&config.view_listen, pipeline.view_context()) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("morphcanvas: cannot listen for viewers on {}: {e}", config.view_listen);
            pipeline.shutdown(false);
            return EXIT_FAILURE;
        }
    };
    let _ticker = pipeline.spawn_ticker(Arc::clone(&stamper), Duration::from_millis(5));
    log::info!("gaze on {}, viewers on {}", gaze.local_addr(), view.local_addr());
    eprintln!("morphcanvas: gaze on {}, viewers on {}", gaze.local_addr(), view.local_addr());
    let _ = stop_rx.recv();
    eprintln!("morphcanvas: shutting down");
    gaze.stop();
    view.stop();
    let report = pipeline.shutdown(false);
    for path in &report.archives {
        println!("archived {}", path.display());
    }
    EXIT_OK
}
