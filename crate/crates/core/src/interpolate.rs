//! Morph frame generation between keyframes, and the sequence timing model.
//!
//! Intermediate frames are produced by recursive subdivision: the frame at
//! the middle index of a span is blended from the span's two endpoint frames
//! with the exact weight for its position, then both halves recurse. Blends
//! are carried in `f32` and rounded half-up only on output, so every frame
//! stays within one step of the direct linear blend.

use std::sync::Arc;

use image::RgbImage;
use thiserror::Error;

use crate::gaze_mask::CropRegion;
use crate::synthesis::PromptEntry;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InterpolateError {
    #[error("keyframes differ in size: {0:?} vs {1:?}")]
    DimensionMismatch((u32, u32), (u32, u32)),
    #[error("at least one intermediate frame is required")]
    NoFrames,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimingModel {
    pub delta_t_ms: u64,
    pub n_frames: u32,
}

impl Default for TimingModel {
    fn default() -> Self {
        Self { delta_t_ms: 1000, n_frames: 32 }
    }
}

impl TimingModel {
    pub fn new(delta_t_ms: u64, n_frames: u32) -> Self {
        Self { delta_t_ms, n_frames }
    }

    /// Worst-case time from window start to a visible sequence: `2Δt + Δt′`.
    pub fn sequence_duration_ms(&self, delta_t_prime_ms: u64) -> u64 {
        2 * self.delta_t_ms + delta_t_prime_ms
    }

    /// `Δt / N`.
    pub fn playback_interval_ms(&self) -> f64 {
        self.delta_t_ms as f64 / self.n_frames.max(1) as f64
    }

    pub fn target_fps(&self) -> f64 {
        1000.0 / self.playback_interval_ms()
    }

    /// Keyframes plus intermediates.
    pub fn frames_per_sequence(&self) -> usize {
        self.n_frames as usize + 2
    }

    /// Time a sequence occupies on the output, from its first frame to the
    /// slot after its last.
    pub fn sequence_span_ms(&self) -> f64 {
        self.frames_per_sequence() as f64 * self.playback_interval_ms()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Reverse,
}

/// One keyframe pair and everything played between them.
#[derive(Debug, Clone)]
pub struct MorphSequence {
    pub cycle_index: u64,
    pub region: CropRegion,
    /// `[A, f1, ..., fN, B]`, all at the region's size.
    pub frames: Vec<Arc<RgbImage>>,
    pub frame_interval_ms: f64,
    pub delta_t_prime_ms: u64,
    pub direction: Direction,
    /// Caption to announce when the first frame is shown.
    pub prompt: Option<PromptEntry>,
    /// Start of the gaze window the sequence was derived from, on the session clock.
    pub window_start_ms: Option<u64>,
}

impl MorphSequence {
    pub fn first(&self) -> &RgbImage {
        &self.frames[0]
    }

    pub fn last(&self) -> &RgbImage {
        self.frames.last().expect("sequence has at least two frames")
    }

    /// The same morph played from B back to A.
    pub fn reversed(&self) -> MorphSequence {
        let mut frames = self.frames.clone();
        frames.reverse();
        MorphSequence {
            frames,
            direction: match self.direction {
                Direction::Forward => Direction::Reverse,
                Direction::Reverse => Direction::Forward,
            },
            prompt: None,
            window_start_ms: None,
            ..self.clone()
        }
    }
}

/// Source of intermediate frames between two keyframes.
pub trait Interpolator: Send + Sync {
    /// Returns `[a, f1, ..., fN, b]`.
    fn interpolate(&self, a: &RgbImage, b: &RgbImage, n: u32) -> Result<Vec<RgbImage>, InterpolateError>;
}

/// Recursive linear cross-dissolve.
#[derive(Debug, Clone, Copy, Default)]
pub struct CrossDissolve;

impl Interpolator for CrossDissolve {
    fn interpolate(&self, a: &RgbImage, b: &RgbImage, n: u32) -> Result<Vec<RgbImage>, InterpolateError> {
        interpolate_pair(a, b, n)
    }
}

pub fn interpolate_pair(a: &RgbImage, b: &RgbImage, n: u32) -> Result<Vec<RgbImage>, InterpolateError> {
    if a.dimensions() != b.dimensions() {
        return Err(InterpolateError::DimensionMismatch(a.dimensions(), b.dimensions()));
    }
    if n == 0 {
        return Err(InterpolateError::NoFrames);
    }
    let last = n as usize + 1;
    let mut frames: Vec<Option<RgbImage>> = vec![None; last + 1];
    let fa: Vec<f32> = a.as_raw().iter().map(|&v| v as f32).collect();
    let fb: Vec<f32> = b.as_raw().iter().map(|&v| v as f32).collect();
    subdivide(&fa, &fb, 0, last, a.dimensions(), &mut frames);
    frames[0] = Some(a.clone());
    frames[last] = Some(b.clone());
    Ok(frames.into_iter().map(|f| f.expect("every index is filled")).collect())
}

fn subdivide(lo: &[f32], hi: &[f32], lo_idx: usize, hi_idx: usize, dims: (u32, u32), out: &mut [Option<RgbImage>]) {
    if hi_idx - lo_idx < 2 {
        return;
    }
    let mid_idx = (lo_idx + hi_idx) / 2;
    let w = (mid_idx - lo_idx) as f32 / (hi_idx - lo_idx) as f32;
    let mid: Vec<f32> = lo.iter().zip(hi).map(|(l, h)| l + w * (h - l)).collect();
    let rounded = mid.iter().map(|v| (v + 0.5).floor().clamp(0.0, 255.0) as u8).collect();
    out[mid_idx] = Some(RgbImage::from_raw(dims.0, dims.1, rounded).expect("buffer matches dimensions"));
    subdivide(lo, &mid, lo_idx, mid_idx, dims, out);
    subdivide(&mid, hi, mid_idx, hi_idx, dims, out);
}
