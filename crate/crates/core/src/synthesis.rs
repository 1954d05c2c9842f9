//! Inpainting backends and the prompt registry.
//!
//! Prompts are loaded once and carry a precomputed token, so nothing is
//! re-derived from prompt text while a session runs. Backends replace only
//! masked pixels; everything outside the mask is returned untouched.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::imaging;
use crate::protocol;

/// Largest crop side a backend is asked to process.
pub const MAX_BACKEND_SIDE: u32 = 512;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("prompt registry is empty")]
    EmptyRegistry,
    #[error("prompt file line {line}: {reason}")]
    BadPrompt { line: usize, reason: String },
    #[error("reading prompts from {path}: {source}")]
    PromptIo { path: String, source: std::io::Error },
    #[error("invalid inpaint input: {0}")]
    InvalidInput(String),
    #[error("synthesis backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("synthesis backend returned a bad response: {0}")]
    BackendBadResponse(String),
}

/// Stand-in for a cached prompt embedding.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptToken([u8; 16]);

impl PromptToken {
    fn of(text: &str) -> Self {
        let digest = Sha256::digest(text.as_bytes());
        Self(digest[..16].try_into().unwrap())
    }
}

impl std::fmt::Debug for PromptToken {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptEntry {
    pub id: u32,
    pub text: String,
    pub precomputed: PromptToken,
}

const BUILTIN_PROMPTS: &[&str] = &[
    "wildfire consumes the ridge",
    "floodwater swallows the terraced fields",
    "smokestacks rise where the pines once stood",
    "the river runs dry beneath a bleached sky",
    "landslide scars tear through the mountain path",
    "plastic tides wash over the quiet shore",
    "melting glaciers bleed into the valley",
    "a haze of smog erases the distant peaks",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptRegistry {
    entries: Vec<PromptEntry>,
}

impl PromptRegistry {
    /// One prompt per line; the zero-based line number is the prompt id.
    pub fn from_lines(text: &str) -> Result<Self, SynthError> {
        let entries = text
            .lines()
            .enumerate()
            .map(|(i, line)| {
                let line = line.trim_end_matches('\r');
                if line.trim().is_empty() {
                    return Err(SynthError::BadPrompt { line: i + 1, reason: "empty prompt".into() });
                }
                Ok(PromptEntry { id: i as u32, text: line.to_string(), precomputed: PromptToken::of(line) })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| SynthError::PromptIo { path: path.display().to_string(), source })?;
        Self::from_lines(&text)
    }

    pub fn builtin() -> Self {
        Self::from_lines(&BUILTIN_PROMPTS.join("\n")).expect("builtin prompts are valid")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&PromptEntry> {
        self.entries.get(id as usize)
    }

    /// Round-robin assignment of prompts to cycles.
    pub fn next_prompt(&self, cycle_index: u64) -> Result<&PromptEntry, SynthError> {
        if self.entries.is_empty() {
            return Err(SynthError::EmptyRegistry);
        }
        Ok(&self.entries[(cycle_index % self.entries.len() as u64) as usize])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum BackendKind {
    Mock,
    Remote { url: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedPolicy {
    Fixed(u64),
    #[default]
    PerCycleCounter,
}

impl SeedPolicy {
    pub fn seed_for(&self, cycle_index: u64) -> u64 {
        match *self {
            SeedPolicy::Fixed(seed) => seed,
            SeedPolicy::PerCycleCounter => cycle_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub backend: BackendKind,
    pub simulated_latency_ms: u64,
    pub seed_policy: SeedPolicy,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self { backend: BackendKind::Mock, simulated_latency_ms: 410, seed_policy: SeedPolicy::PerCycleCounter }
    }
}

pub trait InpaintBackend: Send + Sync {
    /// Replaces masked pixels of `crop`. Callers go through [`inpaint`],
    /// which checks dimensions and the exterior contract.
    fn inpaint_raw(&self, crop: &RgbImage, mask: &GrayImage, prompt: &PromptEntry, seed: u64) -> Result<RgbImage, SynthError>;

    /// Responses that had to be corrected outside the mask.
    fn exterior_corrections(&self) -> u64 {
        0
    }
}

/// Validated inpainting call: dimensions match and pixels outside the mask
/// come back bit-identical.
pub fn inpaint(
    backend: &dyn InpaintBackend,
    crop: &RgbImage,
    mask: &GrayImage,
    prompt: &PromptEntry,
    seed: u64,
) -> Result<RgbImage, SynthError> {
    if crop.dimensions() != mask.dimensions() {
        return Err(SynthError::InvalidInput(format!(
            "crop {:?} and mask {:?} differ",
            crop.dimensions(),
            mask.dimensions()
        )));
    }
    if crop.width() > MAX_BACKEND_SIDE || crop.height() > MAX_BACKEND_SIDE {
        return Err(SynthError::InvalidInput(format!("crop {:?} exceeds {MAX_BACKEND_SIDE}", crop.dimensions())));
    }
    if mask.pixels().all(|m| m.0[0] == 0) {
        return Ok(crop.clone());
    }
    let out = backend.inpaint_raw(crop, mask, prompt, seed)?;
    if out.dimensions() != crop.dimensions() {
        return Err(SynthError::BackendBadResponse(format!(
            "expected {:?}, got {:?}",
            crop.dimensions(),
            out.dimensions()
        )));
    }
    Ok(out)
}

/// Takes masked pixels from `generated` and all others from `original`.
/// Returns the composite and whether any exterior pixel had to be restored.
pub fn composite_masked(original: &RgbImage, generated: &RgbImage, mask: &GrayImage) -> (RgbImage, bool) {
    let mut out = original.clone();
    let mut corrected = false;
    for ((dst, gen), m) in out.pixels_mut().zip(generated.pixels()).zip(mask.pixels()) {
        if m.0[0] != 0 {
            *dst = *gen;
        } else if dst != gen {
            corrected = true;
        }
    }
    (out, corrected)
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const NOISE_CELL: u32 = 16;
const DISPLACEMENT: f64 = 6.0;

/// Smooth value noise in `[0, 1)` keyed by seed, prompt, and channel.
fn value_noise(key: u64, x: u32, y: u32) -> f64 {
    let lattice = |gx: u32, gy: u32| -> f64 {
        let h = mix64(key ^ mix64(((gx as u64) << 32) | gy as u64));
        (h >> 11) as f64 / (1u64 << 53) as f64
    };
    let (gx, gy) = (x / NOISE_CELL, y / NOISE_CELL);
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let fx = smooth((x % NOISE_CELL) as f64 / NOISE_CELL as f64);
    let fy = smooth((y % NOISE_CELL) as f64 / NOISE_CELL as f64);
    let top = lattice(gx, gy) * (1.0 - fx) + lattice(gx + 1, gy) * fx;
    let bottom = lattice(gx, gy + 1) * (1.0 - fx) + lattice(gx + 1, gy + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Deterministic offline backend: inside the mask, pixels are displaced by
/// seeded value noise and scaled toward black, so every nonzero channel
/// strictly darkens.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    latency: Duration,
}

impl MockBackend {
    pub fn new(latency: Duration) -> Self {
        Self { latency }
    }

    fn transform(crop: &RgbImage, mask: &GrayImage, prompt_id: u32, seed: u64) -> RgbImage {
        let base = mix64(seed ^ mix64(prompt_id as u64 ^ 0x6d6f_7270_6863_6e76));
        let keys = [mix64(base ^ 1), mix64(base ^ 2), mix64(base ^ 3)];
        let (w, h) = crop.dimensions();
        let mut out = crop.clone();
        for y in 0..h {
            for x in 0..w {
                if mask.get_pixel(x, y).0[0] == 0 {
                    continue;
                }
                let offset = |n: f64| ((n - 0.5) * 2.0 * DISPLACEMENT).round() as i64;
                let qx = (x as i64 + offset(value_noise(keys[0], x, y))).clamp(0, w as i64 - 1) as u32;
                let qy = (y as i64 + offset(value_noise(keys[1], x, y))).clamp(0, h as i64 - 1) as u32;
                let (qx, qy) = if mask.get_pixel(qx, qy).0[0] != 0 { (qx, qy) } else { (x, y) };
                let darken = 0.80 + 0.15 * value_noise(keys[2], x, y);
                let here = crop.get_pixel(x, y).0;
                let there = crop.get_pixel(qx, qy).0;
                let px = out.get_pixel_mut(x, y);
                for c in 0..3 {
                    px.0[c] = (here[c].min(there[c]) as f64 * darken).floor() as u8;
                }
            }
        }
        out
    }
}

impl InpaintBackend for MockBackend {
    fn inpaint_raw(&self, crop: &RgbImage, mask: &GrayImage, prompt: &PromptEntry, seed: u64) -> Result<RgbImage, SynthError> {
        let started = Instant::now();
        let out = Self::transform(crop, mask, prompt.id, seed);
        if let Some(rest) = self.latency.checked_sub(started.elapsed()) {
            std::thread::sleep(rest);
        }
        Ok(out)
    }
}

/// HTTP client for a remote inpainting service speaking the `/inpaint`
/// multipart contract.
pub struct RemoteBackend {
    url: String,
    agent: ureq::Agent,
    corrections: AtomicU64,
}

impl RemoteBackend {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().new_agent();
        Self { url: url.into(), agent, corrections: AtomicU64::new(0) }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl InpaintBackend for RemoteBackend {
    fn inpaint_raw(&self, crop: &RgbImage, mask: &GrayImage, prompt: &PromptEntry, seed: u64) -> Result<RgbImage, SynthError> {
        let request = protocol::synth_request(crop, mask, prompt.id, seed)
            .map_err(|e| SynthError::InvalidInput(e.to_string()))?;
        let (content_type, body) = request.to_multipart();
        let response = self
            .agent
            .post(&self.url)
            .header("Content-Type", &content_type)
            .send(&body[..]);
        let mut response = match response {
            Ok(r) => r,
            Err(ureq::Error::StatusCode(code)) => {
                return Err(SynthError::BackendBadResponse(format!("HTTP status {code}")))
            }
            Err(e) => return Err(SynthError::BackendUnreachable(e.to_string())),
        };
        let bytes = response
            .body_mut()
            .with_config()
            .limit(64 * 1024 * 1024)
            .read_to_vec()
            .map_err(|e| SynthError::BackendUnreachable(e.to_string()))?;
        let generated = imaging::decode_png_rgb(&bytes)
            .ok_or_else(|| SynthError::BackendBadResponse("reply is not a PNG image".into()))?;
        if generated.dimensions() != crop.dimensions() {
            return Err(SynthError::BackendBadResponse(format!(
                "reply is {:?}, request was {:?}",
                generated.dimensions(),
                crop.dimensions()
            )));
        }
        let (out, corrected) = composite_masked(crop, &generated, mask);
        if corrected {
            self.corrections.fetch_add(1, Ordering::Relaxed);
            log::warn!("remote backend modified pixels outside the mask; restored");
        }
        Ok(out)
    }

    fn exterior_corrections(&self) -> u64 {
        self.corrections.load(Ordering::Relaxed)
    }
}

pub fn build_backend(config: &SynthesisConfig) -> Box<dyn InpaintBackend> {
    match &config.backend {
        BackendKind::Mock => Box::new(MockBackend::new(Duration::from_millis(config.simulated_latency_ms))),
        BackendKind::Remote { url } => Box::new(RemoteBackend::new(url.clone(), Duration::from_secs(30))),
    }
}
