//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Criteria run one at a time; the real-time ones
//! take about a minute each.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::net::TcpStream;
use std::path::Path;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use image::{Rgb, RgbImage};
use morphcanvas::gaze_mask::{self, CanvasDims, GazeWindow, MaskBitmap, StrokeParams};
use morphcanvas::ingest::{self, Event, Stamper};
use morphcanvas::interpolate::{interpolate_pair, CrossDissolve};
use morphcanvas::protocol::{
    decode_message, encode_message, CaptionEvent, ControlKind, ControlSignal, FramePatch, GazeSample, Message,
    PatchRegion, Ping, StreamDecoder,
};
use morphcanvas::replay::{run_replay, synthetic_gaze, synthetic_trace, ReplayReport};
use morphcanvas::stream_out::{Metrics, SessionClock};
use morphcanvas::synthesis::{MockBackend, PromptRegistry, SeedPolicy};
use morphcanvas::{imaging, CropBounds, Session, SessionConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn main() {
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("timing_model_n32", timing_model_n32),
        ("timing_model_n16", timing_model_n16),
        ("crop_bounds_1000_traces", crop_bounds),
        ("interpolation_oracle", interpolation_oracle),
        ("exact_restitution_200_sessions", exact_restitution),
        ("protocol_roundtrip_and_fuzz", protocol_fuzz),
        ("ingestion_80hz_60s", ingestion_throughput),
        ("replay_determinism", replay_determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} ({secs:.1}s)");
            }
        }
        std::io::stdout().flush().unwrap();
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn p95(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values[(values.len() * 95 / 100).min(values.len() - 1)]
}

fn timed_replay(n_frames: u32, sim_interp_ms: u64) -> ReplayReport {
    let archive = tempfile::tempdir().unwrap();
    let mut config = SessionConfig { delta_t_ms: 1000, n_frames, sim_interp_ms, ..Default::default() };
    config.synthesis.simulated_latency_ms = 410;
    let opts = common::options(config, common::landscape(2250, 1500), archive.path());
    run_replay(opts, synthetic_gaze(60_000, 75.0, 11))
}

/// Δt 1000 ms, inpaint 410 ms, Δt′ 210 ms, N = 32, 60 s: 31 ± 2 FPS, no
/// underflow after the first sequence, first-visibility latency ≤ 2.54 s.
fn timing_model_n32() -> Outcome {
    let report = timed_replay(32, 210);
    let fps = report.steady_state_fps().unwrap_or(0.0);
    let underflows = report.underflows_after_first_sequence();
    let latency = report.max_first_visibility_ms().unwrap_or(f64::INFINITY);
    let pacing = p95(report.playback.pacing_errors_ms());
    let detail = format!(
        "fps {fps:.2} (want 29..=33), underflows {underflows}, max latency {latency:.0} ms (want <= 2540), \
         pacing p95 {pacing:.2} ms (want <= 5), cycles {}",
        report.cycles.len()
    );
    verdict(
        (29.0..=33.0).contains(&fps) && underflows == 0 && latency <= 2540.0 && pacing <= 5.0 && report.errors.is_empty(),
        detail,
    )
}

/// Same run with N = 16 and Δt′ 120 ms: 16 ± 2 FPS, zero underflows.
fn timing_model_n16() -> Outcome {
    let report = timed_replay(16, 120);
    let fps = report.steady_state_fps().unwrap_or(0.0);
    let underflows = report.playback.underflow_times_ms.len();
    let latency = report.max_first_visibility_ms().unwrap_or(f64::INFINITY);
    let detail = format!(
        "fps {fps:.2} (want 14..=18), underflows {underflows}, max latency {latency:.0} ms, cycles {}",
        report.cycles.len()
    );
    verdict((14.0..=18.0).contains(&fps) && underflows == 0 && report.errors.is_empty(), detail)
}

fn random_trace(rng: &mut ChaCha8Rng) -> Vec<GazeSample> {
    let n = rng.gen_range(1..=160);
    let mut x: f64 = rng.gen();
    let mut y: f64 = rng.gen();
    let mut ts = 0u64;
    let jumpy = rng.gen_bool(0.2);
    let step = rng.gen_range(0.0..0.04);
    (0..n)
        .map(|_| {
            ts += rng.gen_range(8..=20);
            if jumpy && rng.gen_bool(0.05) {
                x = rng.gen();
                y = rng.gen();
            } else {
                x = (x + rng.gen_range(-step..=step)).clamp(0.0, 1.0);
                y = (y + rng.gen_range(-step..=step)).clamp(0.0, 1.0);
            }
            GazeSample::new(ts, x, y).unwrap()
        })
        .collect()
}

/// 1,000 random traces on 2250 × 1500: every crop square, side in
/// [256, 1500], backend side ≤ 512, inside the canvas, covering the mask
/// whenever the mask fits in a square at all.
fn crop_bounds() -> Outcome {
    let canvas = CanvasDims::new(2250, 1500);
    let params = StrokeParams::default();
    let bounds = CropBounds::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2250);
    let (mut crops, mut downscaled, mut empty, mut clipped) = (0, 0, 0, 0);
    for trial in 0..1000 {
        let mut window = GazeWindow::new(60_000);
        let samples = random_trace(&mut rng);
        for s in &samples {
            window.push_sample(s, canvas, s.ts_ms);
        }
        let heat = gaze_mask::rasterize(&window, canvas, &params, &MaskBitmap::zeros(canvas));
        let binary = gaze_mask::binarize(&heat, params.threshold);
        let Some(region) = gaze_mask::fit_crop(&binary, canvas, bounds) else {
            if binary.count_ones() > 0 {
                return Err(format!("trial {trial}: non-empty mask without a crop"));
            }
            empty += 1;
            continue;
        };
        crops += 1;
        let side = region.side;
        if region.width() != region.height() {
            return Err(format!("trial {trial}: crop not square: {region:?}"));
        }
        if !(256..=1500).contains(&side) {
            return Err(format!("trial {trial}: side {side} outside [256, 1500]"));
        }
        if region.backend_side > 512 || region.backend_side != side.min(512) {
            return Err(format!("trial {trial}: backend side {} for side {side}", region.backend_side));
        }
        if region.x0 + side > 2250 || region.y0 + side > 1500 {
            return Err(format!("trial {trial}: crop leaves the canvas: {region:?}"));
        }
        let (min_x, min_y, max_x, max_y) = binary.bounding_box().unwrap();
        if (max_x - min_x).max(max_y - min_y) >= 1500 {
            clipped += 1;
        } else if !(region.contains(min_x, min_y) && region.contains(max_x, max_y)) {
            return Err(format!("trial {trial}: crop {region:?} misses mask bbox {:?}", (min_x, min_y, max_x, max_y)));
        }
        if side > 512 {
            downscaled += 1;
        }
    }
    Ok(format!(
        "{crops} crops ({downscaled} downscaled, {clipped} masks wider than the canvas height), {empty} traces below threshold"
    ))
}

fn random_image(rng: &mut ChaCha8Rng, w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |_, _| Rgb([rng.gen(), rng.gen(), rng.gen()]))
}

/// Direct linear blend at `t`, rounded half-up.
fn blend_oracle(a: &RgbImage, b: &RgbImage, t: f64) -> Vec<u8> {
    a.as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&x, &y)| ((1.0 - t) * x as f64 + t * y as f64 + 0.5).floor() as u8)
        .collect()
}

/// N ∈ {1, 3, 7, 15, 16, 31, 32} on 100 random pairs: within ±1 of the
/// direct blend, endpoints bit-exact.
fn interpolation_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0i16;
    let mut checked = 0usize;
    for n in [1u32, 3, 7, 15, 16, 31, 32] {
        for pair in 0..100 {
            let (w, h) = (rng.gen_range(1..=24), rng.gen_range(1..=24));
            let a = random_image(&mut rng, w, h);
            let b = random_image(&mut rng, w, h);
            let frames = interpolate_pair(&a, &b, n).map_err(|e| e.to_string())?;
            if frames.len() != n as usize + 2 {
                return Err(format!("N={n}: {} frames", frames.len()));
            }
            if frames[0] != a || frames[n as usize + 1] != b {
                return Err(format!("N={n} pair {pair}: endpoints differ"));
            }
            for (i, frame) in frames.iter().enumerate() {
                let t = i as f64 / (n + 1) as f64;
                for (got, want) in frame.as_raw().iter().zip(blend_oracle(&a, &b, t)) {
                    let d = (*got as i16 - want as i16).abs();
                    worst = worst.max(d);
                    if d > 1 {
                        return Err(format!("N={n} pair {pair} frame {i}: {got} vs {want}"));
                    }
                }
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} frames checked, worst deviation {worst}"))
}

/// 200 random sessions of 1–10 cycles with the mock backend: the canvas is
/// bit-identical to pristine after reversal.
fn exact_restitution() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let pristine = common::landscape(700, 500);
    let canvas = CanvasDims::new(700, 500);
    let backend = MockBackend::default();
    let prompts = PromptRegistry::builtin();
    let (mut cycles_total, mut overlapping) = (0usize, 0usize);
    for trial in 0..200 {
        let mut config = SessionConfig { n_frames: rng.gen_range(1..=8), ..Default::default() };
        config.synthesis.seed_policy = SeedPolicy::Fixed(rng.gen());
        let mut session = Session::new(pristine.clone(), config);
        session.on_control(&ControlSignal { kind: ControlKind::Mounted, ts_ms: 0 });
        let cycles = rng.gen_range(1..=10);
        let mut regions = Vec::new();
        let mut t = 0u64;
        while regions.len() < cycles {
            let mut window = GazeWindow::new(1000);
            let mut x: f64 = rng.gen_range(0.1..0.9);
            let mut y: f64 = rng.gen_range(0.1..0.9);
            for _ in 0..rng.gen_range(10..60) {
                t += 13;
                x = (x + rng.gen_range(-0.02..0.02)).clamp(0.0, 1.0);
                y = (y + rng.gen_range(-0.02..0.02)).clamp(0.0, 1.0);
                window.push_sample(&GazeSample::new(t, x, y).unwrap(), canvas, t);
            }
            let seq = session
                .run_cycle(&window, &backend, &prompts, &CrossDissolve)
                .map_err(|e| format!("trial {trial}: {e}"))?;
            if let Some(seq) = seq {
                regions.push(seq.region);
            }
        }
        overlapping += regions
            .windows(2)
            .filter(|w| {
                let (a, b) = (w[0], w[1]);
                a.x0 < b.x0 + b.side && b.x0 < a.x0 + a.side && a.y0 < b.y0 + b.side && b.y0 < a.y0 + a.side
            })
            .count();
        cycles_total += regions.len();
        if session.canvas() == &pristine {
            return Err(format!("trial {trial}: cycles left the canvas unchanged"));
        }
        session.on_control(&ControlSignal { kind: ControlKind::Unmounted, ts_ms: t });
        let reversed = session.reverse(&CrossDissolve).map_err(|e| format!("trial {trial}: {e}"))?;
        if reversed.len() != regions.len() {
            return Err(format!("trial {trial}: {} reversal sequences for {} cycles", reversed.len(), regions.len()));
        }
        if session.canvas() != &pristine {
            let diff = session.canvas().pixels().zip(pristine.pixels()).filter(|(a, b)| a != b).count();
            return Err(format!("trial {trial}: {diff} pixels differ after reversal"));
        }
    }
    Ok(format!("200 sessions, {cycles_total} cycles, {overlapping} overlapping consecutive crops, all restored"))
}

fn random_message(rng: &mut ChaCha8Rng) -> Message {
    match rng.gen_range(0..5) {
        0 => Message::Gaze(GazeSample::new(rng.gen(), rng.gen(), rng.gen()).unwrap()),
        1 => Message::Control(ControlSignal {
            kind: if rng.gen() { ControlKind::Mounted } else { ControlKind::Unmounted },
            ts_ms: rng.gen(),
        }),
        2 => Message::Ping(Ping { ts_ms: rng.gen(), server_ms: rng.gen::<bool>().then(|| rng.gen()), keyframe: rng.gen() }),
        3 => {
            let len = rng.gen_range(1..40);
            let text: String = (0..len).map(|_| rng.gen_range(' '..='\u{2FFF}')).collect();
            Message::Caption(CaptionEvent { text, cycle_index: rng.gen() })
        }
        _ => {
            let (w, h) = (rng.gen_range(1..6), rng.gen_range(1..6));
            let img = random_image(rng, w, h);
            Message::Frame(FramePatch {
                seq_no: rng.gen(),
                region: PatchRegion { x0: rng.gen_range(0..2000), y0: rng.gen_range(0..1400), width: w, height: h },
                present_at_ms: rng.gen(),
                png: imaging::encode_png_rgb(&img).into(),
            })
        }
    }
}

/// 10,000 random valid messages round-trip; 10,000 random byte strings
/// never crash the decoder.
fn protocol_fuzz() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    let mut stream = Vec::new();
    let mut sent = Vec::new();
    for i in 0..10_000 {
        let msg = random_message(&mut rng);
        let bytes = encode_message(&msg);
        if let Message::Frame(f) = &msg {
            if bytes.len() != 36 + f.png.len() {
                return Err(format!("message {i}: envelope length {}", bytes.len()));
            }
        } else if !bytes.ends_with(b"\n") || bytes[..bytes.len() - 1].contains(&b'\n') {
            return Err(format!("message {i}: not a single line"));
        }
        match decode_message(&bytes) {
            Ok(back) if back == msg => {}
            other => return Err(format!("message {i}: {msg:?} decoded as {other:?}")),
        }
        stream.extend_from_slice(&bytes);
        sent.push(msg);
    }
    let mut decoder = StreamDecoder::new();
    let mut received = Vec::new();
    for chunk in stream.chunks(997) {
        decoder.push(chunk);
        while let Some(item) = decoder.next_message() {
            received.push(item.map_err(|e| e.to_string())?);
        }
    }
    if received != sent {
        return Err(format!("stream decoder returned {} of {} messages", received.len(), sent.len()));
    }

    let prefixes: [&[u8]; 4] = [b"", b"MCV1", b"{\"t\":\"g\"", b"{"];
    let mut rejected = 0;
    let result = std::panic::catch_unwind(move || {
        let mut decoder = StreamDecoder::new();
        for _ in 0..10_000 {
            let mut bytes = prefixes[rng.gen_range(0..prefixes.len())].to_vec();
            let len = rng.gen_range(0..200);
            bytes.extend((0..len).map(|_| rng.gen::<u8>()));
            if decode_message(&bytes).is_err() {
                rejected += 1;
            }
            decoder.push(&bytes);
            while decoder.next_message().is_some() {}
        }
        rejected
    });
    match result {
        Ok(rejected) => Ok(format!("10000 round-trips and stream-decoded; {rejected}/10000 random inputs rejected, no panic")),
        Err(_) => Err("decoder panicked on random input".into()),
    }
}

/// A client at 80 Hz for 60 s over TCP: every sample arrives, re-stamped
/// arrival times never decrease.
fn ingestion_throughput() -> Outcome {
    const RATE_HZ: u64 = 80;
    const SECONDS: u64 = 60;
    let expected = (RATE_HZ * SECONDS) as usize;
    let (tx, rx) = crossbeam_channel::unbounded();
    let stamper = Arc::new(Stamper::new(SessionClock::new(), tx));
    let metrics = Arc::new(Metrics::default());
    let listener = ingest::spawn_gaze_listener("127.0.0.1:0", stamper, metrics.clone()).map_err(|e| e.to_string())?;
    let addr = listener.local_addr();
    let client = thread::spawn(move || {
        let mut stream = TcpStream::connect(addr).unwrap();
        stream.set_nodelay(true).unwrap();
        let start = Instant::now();
        let period = Duration::from_micros(1_000_000 / RATE_HZ);
        for k in 0..expected as u64 {
            let due = period * k as u32;
            if let Some(wait) = due.checked_sub(start.elapsed()) {
                thread::sleep(wait);
            }
            let t = k as f64 / RATE_HZ as f64;
            let sample = GazeSample::new(k * 1000 / RATE_HZ, 0.5 + 0.4 * t.sin(), 0.5 + 0.4 * (0.7 * t).cos()).unwrap();
            stream.write_all(&encode_message(&Message::Gaze(sample))).unwrap();
        }
        start.elapsed()
    });
    let mut stamps = Vec::with_capacity(expected);
    let deadline = Instant::now() + Duration::from_secs(SECONDS + 15);
    while stamps.len() < expected && Instant::now() < deadline {
        if let Ok(Event::Gaze { arrival_ms, .. }) = rx.recv_timeout(Duration::from_millis(200)) {
            stamps.push(arrival_ms);
        }
    }
    let elapsed = client.join().map_err(|_| "client panicked".to_string())?;
    listener.stop();
    let monotone = stamps.windows(2).all(|w| w[0] <= w[1]);
    let rate = stamps.len() as f64 / ((stamps.last().unwrap_or(&0) - stamps.first().unwrap_or(&0)) as f64 / 1000.0);
    let detail = format!(
        "{}/{expected} samples received over {:.1} s (arrival rate {rate:.1} Hz), rejected {}, malformed {}, stamps monotone: {monotone}",
        stamps.len(),
        elapsed.as_secs_f64(),
        Metrics::get(&metrics.gaze_rejected),
        Metrics::get(&metrics.malformed_messages),
    );
    verdict(stamps.len() == expected && monotone && Metrics::get(&metrics.gaze_rejected) == 0, detail)
}

fn archive_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for session in std::fs::read_dir(dir).unwrap() {
        let session = session.unwrap().path();
        for file in std::fs::read_dir(&session).unwrap() {
            let file = file.unwrap().path();
            let key = format!(
                "{}/{}",
                session.file_name().unwrap().to_string_lossy(),
                file.file_name().unwrap().to_string_lossy()
            );
            out.insert(key, std::fs::read(&file).unwrap());
        }
    }
    out
}

/// Two replays of one trace with fixed seeds produce byte-identical
/// archives.
fn replay_determinism() -> Outcome {
    let trace = synthetic_trace(5000, 75.0, 21);
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let mut config = SessionConfig { n_frames: 8, sim_interp_ms: 30, ..Default::default() };
        config.synthesis.simulated_latency_ms = 60;
        config.synthesis.seed_policy = SeedPolicy::Fixed(1234);
        let report = run_replay(common::options(config, common::landscape(1200, 800), dir.path()), trace.clone());
        (archive_files(dir.path()), report.errors, dir)
    };
    let (a, errors_a, _da) = run();
    let (b, errors_b, _db) = run();
    if !errors_a.is_empty() || !errors_b.is_empty() {
        return Err(format!("replay errors: {errors_a:?} {errors_b:?}"));
    }
    let cycles = a.keys().filter(|k| k.ends_with("_pre.png")).count();
    if a.is_empty() || cycles == 0 {
        return Err("no archive written".into());
    }
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    let bytes: usize = a.values().map(Vec::len).sum();
    verdict(
        differing.is_empty() && a.len() == b.len(),
        format!("{} files ({bytes} bytes, {cycles} cycles) compared; differing: {differing:?}", a.len()),
    )
}
