#![allow(dead_code)]

use std::path::Path;
use std::time::Duration;

use image::{Rgb, RgbImage};
use morphcanvas::pipeline::PipelineOptions;
use morphcanvas::stream_out::SessionClock;
use morphcanvas::synthesis::{MockBackend, PromptRegistry};
use morphcanvas::SessionConfig;

/// Ink-wash style gradient with ridges; deterministic.
pub fn landscape(width: u32, height: u32) -> RgbImage {
    RgbImage::from_fn(width, height, |x, y| {
        let fx = x as f64 / width as f64;
        let fy = y as f64 / height as f64;
        let ridge = 0.55 + 0.12 * (fx * 9.0).sin() + 0.05 * (fx * 31.0).cos();
        let ink = if fy > ridge { 60.0 + 80.0 * (fy - ridge) } else { 225.0 - 40.0 * fy };
        let grain = ((x * 7 + y * 13) % 11) as f64;
        let v = (ink + grain).clamp(0.0, 255.0) as u8;
        Rgb([v, v.saturating_add(4), v.saturating_sub(6)])
    })
}

pub fn options(config: SessionConfig, canvas: RgbImage, archive: &Path) -> PipelineOptions {
    let latency = Duration::from_millis(config.synthesis.simulated_latency_ms);
    PipelineOptions {
        session: config,
        canvas,
        prompts: PromptRegistry::builtin(),
        backend: Box::new(MockBackend::new(latency)),
        archive_dir: archive.to_owned(),
        keyframe_interval: Some(Duration::from_secs(5)),
        dump_masks: None,
        clock: SessionClock::new(),
    }
}
