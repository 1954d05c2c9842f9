//! Gaze window, heatmap rasterization, and crop fitting.
//!
//! Consecutive gaze samples inside the temporal window are joined by filled
//! capsules whose width follows gaze velocity. Every stamp adds a fixed
//! intensity with saturation at 1, so dwell accumulates heat. The heatmap is
//! thresholded into a binary inpaint mask, and the mask's bounding box is
//! grown into the square crop sent to the synthesis backend.

use std::collections::VecDeque;

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use crate::protocol::GazeSample;

/// Intensity added by one capsule stamp.
pub const STAMP_INTENSITY: f32 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CanvasDims {
    pub width: u32,
    pub height: u32,
}

impl CanvasDims {
    pub const fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub fn min_side(&self) -> u32 {
        self.width.min(self.height)
    }

    /// Maps a normalized coordinate to a pixel: `floor(x * (w - 1))`.
    pub fn to_pixel(&self, x: f64, y: f64) -> (u32, u32) {
        let px = (x.clamp(0.0, 1.0) * (self.width.saturating_sub(1)) as f64).floor() as u32;
        let py = (y.clamp(0.0, 1.0) * (self.height.saturating_sub(1)) as f64).floor() as u32;
        (px, py)
    }
}

impl Default for CanvasDims {
    fn default() -> Self {
        Self::new(2250, 1500)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSample {
    pub arrival_ms: u64,
    pub px: u32,
    pub py: u32,
}

/// Samples that arrived within the last `delta_t_ms`, in arrival order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GazeWindow {
    samples: VecDeque<WindowSample>,
    delta_t_ms: u64,
}

impl GazeWindow {
    pub fn new(delta_t_ms: u64) -> Self {
        Self { samples: VecDeque::new(), delta_t_ms }
    }

    pub fn delta_t_ms(&self) -> u64 {
        self.delta_t_ms
    }

    /// Adds a sample stamped with `now_ms` and drops everything outside
    /// `(now_ms - delta_t, now_ms]`.
    pub fn push_sample(&mut self, sample: &GazeSample, canvas: CanvasDims, now_ms: u64) {
        let arrival_ms = self.samples.back().map_or(now_ms, |s| s.arrival_ms.max(now_ms));
        let (px, py) = canvas.to_pixel(sample.x, sample.y);
        self.samples.push_back(WindowSample { arrival_ms, px, py });
        self.prune(arrival_ms);
    }

    pub fn push_pixel(&mut self, sample: WindowSample) {
        let arrival_ms = self.samples.back().map_or(sample.arrival_ms, |s| s.arrival_ms.max(sample.arrival_ms));
        self.samples.push_back(WindowSample { arrival_ms, ..sample });
    }

    pub fn prune(&mut self, now_ms: u64) {
        let Some(cutoff) = now_ms.checked_sub(self.delta_t_ms) else { return };
        while self.samples.front().is_some_and(|s| s.arrival_ms <= cutoff) {
            self.samples.pop_front();
        }
    }

    /// The window as it stood at `t_ms`: samples with arrival in `(t - delta_t, t]`.
    pub fn snapshot_at(&self, t_ms: u64) -> GazeWindow {
        let lo = t_ms.checked_sub(self.delta_t_ms);
        let samples = self
            .samples
            .iter()
            .filter(|s| s.arrival_ms <= t_ms && lo.is_none_or(|lo| s.arrival_ms > lo))
            .copied()
            .collect();
        GazeWindow { samples, delta_t_ms: self.delta_t_ms }
    }

    pub fn samples(&self) -> impl ExactSizeIterator<Item = &WindowSample> {
        self.samples.iter()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn clear(&mut self) {
        self.samples.clear();
    }
}

/// How stroke width responds to gaze velocity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WidthLaw {
    /// Faster gaze draws wider strokes.
    #[default]
    Direct,
    /// Slower gaze (dwell) draws wider strokes.
    Inverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrokeParams {
    pub w_min: f64,
    pub w_max: f64,
    /// Pixels of width per pixel/second of gaze speed.
    pub alpha: f64,
    pub threshold: f32,
    #[serde(default)]
    pub law: WidthLaw,
}

impl Default for StrokeParams {
    fn default() -> Self {
        Self { w_min: 4.0, w_max: 48.0, alpha: 0.02, threshold: 0.5, law: WidthLaw::Direct }
    }
}

impl StrokeParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.w_min > 0.0 && self.w_min <= self.w_max) {
            return Err(format!("need 0 < w_min <= w_max, got {} and {}", self.w_min, self.w_max));
        }
        if !(self.alpha >= 0.0) {
            return Err(format!("alpha must be non-negative, got {}", self.alpha));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(format!("threshold must lie in (0, 1), got {}", self.threshold));
        }
        Ok(())
    }
}

/// Stroke width in pixels for gaze speed `v` (pixels per second).
pub fn stroke_width(v: f64, p: &StrokeParams) -> f64 {
    let raw = match p.law {
        WidthLaw::Direct => p.w_min + p.alpha * v,
        WidthLaw::Inverse => p.w_max - p.alpha * v,
    };
    raw.clamp(p.w_min, p.w_max)
}

/// Per-pixel heat in `[0, 1]` over the whole canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskBitmap {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl MaskBitmap {
    pub fn zeros(canvas: CanvasDims) -> Self {
        Self {
            width: canvas.width,
            height: canvas.height,
            values: vec![0.0; canvas.width as usize * canvas.height as usize],
        }
    }

    pub fn from_values(canvas: CanvasDims, values: Vec<f32>) -> Option<Self> {
        let ok = values.len() == canvas.width as usize * canvas.height as usize
            && values.iter().all(|v| (0.0..=1.0).contains(v));
        ok.then_some(Self { width: canvas.width, height: canvas.height, values })
    }

    pub fn dims(&self) -> CanvasDims {
        CanvasDims::new(self.width, self.height)
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// 8-bit grayscale rendering, for debugging dumps.
    pub fn to_gray_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| Luma([(self.get(x, y) * 255.0).round() as u8]))
    }

    fn stamp_capsule(&mut self, a: (f64, f64), b: (f64, f64), radius: f64) {
        if self.width == 0 || self.height == 0 {
            return;
        }
        let x_lo = (a.0.min(b.0) - radius).floor().max(0.0) as u32;
        let y_lo = (a.1.min(b.1) - radius).floor().max(0.0) as u32;
        let x_hi = ((a.0.max(b.0) + radius).ceil().max(0.0) as u32).min(self.width - 1);
        let y_hi = ((a.1.max(b.1) + radius).ceil().max(0.0) as u32).min(self.height - 1);
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len_sq = dx * dx + dy * dy;
        let r_sq = radius * radius;
        for y in y_lo..=y_hi {
            let row = y as usize * self.width as usize;
            for x in x_lo..=x_hi {
                let (px, py) = (x as f64, y as f64);
                let t = if len_sq == 0.0 {
                    0.0
                } else {
                    (((px - a.0) * dx + (py - a.1) * dy) / len_sq).clamp(0.0, 1.0)
                };
                let (cx, cy) = (a.0 + t * dx - px, a.1 + t * dy - py);
                if cx * cx + cy * cy <= r_sq {
                    let v = &mut self.values[row + x as usize];
                    *v = (*v + STAMP_INTENSITY).min(1.0);
                }
            }
        }
    }
}

/// Accumulates the window's strokes on top of `prior`.
///
/// The first sample stamps a disc of diameter `w_min`; each later sample
/// stamps a capsule back to its predecessor with width taken from the
/// segment's speed. A pixel is covered when its center lies in the shape.
pub fn rasterize(window: &GazeWindow, canvas: CanvasDims, p: &StrokeParams, prior: &MaskBitmap) -> MaskBitmap {
    debug_assert_eq!(prior.dims(), canvas);
    let mut out = prior.clone();
    let mut prev: Option<&WindowSample> = None;
    for s in window.samples() {
        let here = (s.px as f64, s.py as f64);
        match prev {
            None => out.stamp_capsule(here, here, p.w_min / 2.0),
            Some(q) => {
                let there = (q.px as f64, q.py as f64);
                let dist = ((here.0 - there.0).powi(2) + (here.1 - there.1).powi(2)).sqrt();
                let gap_s = s.arrival_ms.saturating_sub(q.arrival_ms) as f64 / 1000.0;
                let v = match (dist == 0.0, gap_s == 0.0) {
                    (true, _) => 0.0,
                    (false, true) => f64::INFINITY,
                    (false, false) => dist / gap_s,
                };
                out.stamp_capsule(there, here, stroke_width(v, p) / 2.0);
            }
        }
        prev = Some(s);
    }
    out
}

/// Binary inpaint mask over the canvas.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn dims(&self) -> CanvasDims {
        CanvasDims::new(self.width, self.height)
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    /// Inclusive bounding box `(min_x, min_y, max_x, max_y)` of set pixels.
    pub fn bounding_box(&self) -> Option<(u32, u32, u32, u32)> {
        let w = self.width as usize;
        let mut bbox: Option<(u32, u32, u32, u32)> = None;
        for (i, _) in self.bits.iter().enumerate().filter(|(_, b)| **b) {
            let (x, y) = ((i % w) as u32, (i / w) as u32);
            bbox = Some(match bbox {
                None => (x, y, x, y),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
            });
        }
        bbox
    }

    /// The mask restricted to `region`, as 0/255 grayscale.
    pub fn crop(&self, region: &CropRegion) -> GrayImage {
        GrayImage::from_fn(region.side, region.side, |x, y| {
            Luma([if self.get(region.x0 + x, region.y0 + y) { 255 } else { 0 }])
        })
    }
}

/// `1` wherever intensity reaches `threshold` (inclusive).
pub fn binarize(mask: &MaskBitmap, threshold: f32) -> BinaryMask {
    BinaryMask {
        width: mask.width,
        height: mask.height,
        bits: mask.values.iter().map(|v| *v >= threshold).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropBounds {
    pub min_side: u32,
    pub max_side: u32,
}

impl Default for CropBounds {
    fn default() -> Self {
        Self { min_side: 256, max_side: 512 }
    }
}

/// Square canvas region sent to the synthesis backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CropRegion {
    pub x0: u32,
    pub y0: u32,
    pub side: u32,
    /// Side length the backend sees; `side` is downscaled to this when larger.
    pub backend_side: u32,
}

impl CropRegion {
    pub fn width(&self) -> u32 {
        self.side
    }

    pub fn height(&self) -> u32 {
        self.side
    }

    pub fn scale(&self) -> f64 {
        self.side as f64 / self.backend_side as f64
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && y >= self.y0 && x < self.x0 + self.side && y < self.y0 + self.side
    }
}

/// Grows the mask's bounding box into a square crop that stays on the canvas.
pub fn fit_crop(mask: &BinaryMask, canvas: CanvasDims, bounds: CropBounds) -> Option<CropRegion> {
    let (min_x, min_y, max_x, max_y) = mask.bounding_box()?;
    fit_bbox(min_x, min_y, max_x, max_y, canvas, bounds)
}

/// Crop fitting for an inclusive bounding box.
pub fn fit_bbox(min_x: u32, min_y: u32, max_x: u32, max_y: u32, canvas: CanvasDims, bounds: CropBounds) -> Option<CropRegion> {
    let canvas_min = canvas.min_side();
    if canvas_min == 0 {
        return None;
    }
    let bbox_w = max_x - min_x + 1;
    let bbox_h = max_y - min_y + 1;
    let side = bbox_w.max(bbox_h).max(bounds.min_side).min(canvas_min);
    let x0 = min_x.saturating_sub(side.saturating_sub(bbox_w) / 2).min(canvas.width - side);
    let y0 = min_y.saturating_sub(side.saturating_sub(bbox_h) / 2).min(canvas.height - side);
    Some(CropRegion { x0, y0, side, backend_side: side.min(bounds.max_side) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn window_of(points: &[(u64, u32, u32)], delta_t: u64) -> GazeWindow {
        let mut w = GazeWindow::new(delta_t);
        for &(t, px, py) in points {
            w.push_pixel(WindowSample { arrival_ms: t, px, py });
        }
        w
    }

    #[test]
    fn push_sample_maps_to_pixels() {
        let canvas = CanvasDims::default();
        let mut w = GazeWindow::new(1000);
        w.push_sample(&GazeSample::new(0, 0.5, 0.5).unwrap(), canvas, 10);
        w.push_sample(&GazeSample::new(0, 1.0, 1.0).unwrap(), canvas, 20);
        let s: Vec<_> = w.samples().map(|s| (s.px, s.py)).collect();
        assert_eq!(s, [(1124, 749), (2249, 1499)]);
    }

    #[test]
    fn push_sample_expires_old_samples() {
        let canvas = CanvasDims::default();
        let mut w = GazeWindow::new(1000);
        w.push_sample(&GazeSample::new(0, 0.1, 0.1).unwrap(), canvas, 5000);
        w.push_sample(&GazeSample::new(0, 0.2, 0.2).unwrap(), canvas, 6200);
        assert_eq!(w.len(), 1);
        assert_eq!(w.samples().next().unwrap().arrival_ms, 6200);
    }

    #[test]
    fn snapshot_is_half_open_window() {
        let w = window_of(&[(0, 1, 1), (500, 2, 2), (1000, 3, 3), (1500, 4, 4)], 1000);
        let snap: Vec<_> = w.snapshot_at(1500).samples().map(|s| s.arrival_ms).collect();
        assert_eq!(snap, [1000, 1500]);
        let early: Vec<_> = w.snapshot_at(400).samples().map(|s| s.arrival_ms).collect();
        assert_eq!(early, [0]);
    }

    #[test]
    fn stroke_width_law() {
        let p = StrokeParams::default();
        assert_eq!(stroke_width(0.0, &p), 4.0);
        assert_eq!(stroke_width(1000.0, &p), 24.0);
        assert_eq!(stroke_width(10000.0, &p), 48.0);
        let inv = StrokeParams { law: WidthLaw::Inverse, ..p };
        assert_eq!(stroke_width(0.0, &inv), 48.0);
        assert_eq!(stroke_width(1000.0, &inv), 28.0);
    }

    #[test]
    fn empty_window_leaves_prior_unchanged() {
        let canvas = CanvasDims::new(32, 32);
        let mut values = vec![0.0; 32 * 32];
        values[40] = 0.75;
        let prior = MaskBitmap::from_values(canvas, values).unwrap();
        let out = rasterize(&GazeWindow::new(1000), canvas, &StrokeParams::default(), &prior);
        assert_eq!(out, prior);
    }

    /// Brute-force: two coincident samples 10 ms apart on a 64x64 canvas.
    #[test]
    fn coincident_samples_stamp_disc_twice() {
        let canvas = CanvasDims::new(64, 64);
        let w = window_of(&[(100, 30, 20), (110, 30, 20)], 1000);
        let out = rasterize(&w, canvas, &StrokeParams::default(), &MaskBitmap::zeros(canvas));
        let mut covered = 0;
        for y in 0..64u32 {
            for x in 0..64u32 {
                let d2 = (x as i64 - 30).pow(2) + (y as i64 - 20).pow(2);
                let expected = if d2 <= 4 { 0.5 } else { 0.0 };
                assert_eq!(out.get(x, y), expected, "pixel ({x},{y})");
                covered += (d2 <= 4) as usize;
            }
        }
        assert_eq!(covered, 13);
    }

    #[test]
    fn single_sample_stamps_minimal_disc() {
        let canvas = CanvasDims::new(16, 16);
        let w = window_of(&[(0, 0, 0)], 1000);
        let out = rasterize(&w, canvas, &StrokeParams::default(), &MaskBitmap::zeros(canvas));
        let lit: Vec<_> = (0..16u32)
            .flat_map(|y| (0..16u32).map(move |x| (x, y)))
            .filter(|&(x, y)| out.get(x, y) > 0.0)
            .collect();
        assert_eq!(lit, [(0, 0), (1, 0), (2, 0), (0, 1), (1, 1), (0, 2)]);
    }

    #[test]
    fn binarize_edges() {
        let canvas = CanvasDims::new(4, 3);
        assert!(binarize(&MaskBitmap::zeros(canvas), 0.5).is_empty());
        let half = MaskBitmap::from_values(canvas, vec![0.5; 12]).unwrap();
        assert_eq!(binarize(&half, 0.5).count_ones(), 12);
    }

    #[test]
    fn binarize_matches_pixel_oracle_on_rasterized_mask() {
        let canvas = CanvasDims::new(64, 64);
        let w = window_of(&[(0, 10, 10), (20, 12, 10), (40, 30, 40), (60, 30, 41), (80, 50, 50)], 1000);
        let mask = rasterize(&w, canvas, &StrokeParams::default(), &MaskBitmap::zeros(canvas));
        let bin = binarize(&mask, 0.5);
        for y in 0..64 {
            for x in 0..64 {
                assert_eq!(bin.get(x, y), mask.get(x, y) >= 0.5);
            }
        }
        assert!(!bin.is_empty());
    }

    #[test]
    fn fit_crop_small_bbox_expands_to_min_side() {
        let r = fit_bbox(1100, 740, 1150, 760, CanvasDims::default(), CropBounds::default()).unwrap();
        assert_eq!(r, CropRegion { x0: 998, y0: 623, side: 256, backend_side: 256 });
        assert_eq!(r.scale(), 1.0);
    }

    #[test]
    fn fit_crop_clamps_at_canvas_edge() {
        let r = fit_bbox(5, 5, 15, 15, CanvasDims::default(), CropBounds::default()).unwrap();
        assert_eq!((r.x0, r.y0, r.side), (0, 0, 256));
        let r = fit_bbox(2240, 1490, 2249, 1499, CanvasDims::default(), CropBounds::default()).unwrap();
        assert_eq!((r.x0, r.y0), (2250 - 256, 1500 - 256));
    }

    #[test]
    fn fit_crop_large_bbox_falls_back_to_scaling() {
        let r = fit_bbox(100, 100, 699, 399, CanvasDims::default(), CropBounds::default()).unwrap();
        assert_eq!(r.side, 600);
        assert_eq!(r.backend_side, 512);
        assert_eq!(r.scale(), 600.0 / 512.0);
    }

    #[test]
    fn fit_crop_on_tiny_canvas_is_canvas_limited() {
        let canvas = CanvasDims::new(300, 200);
        let r = fit_bbox(10, 10, 20, 20, canvas, CropBounds::default()).unwrap();
        assert_eq!(r.side, 200);
        assert_eq!(r.y0, 0);
    }

    #[test]
    fn fit_crop_none_for_empty_mask() {
        let canvas = CanvasDims::new(10, 10);
        assert_eq!(fit_crop(&binarize(&MaskBitmap::zeros(canvas), 0.5), canvas, CropBounds::default()), None);
    }

    fn dist_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let l2 = dx * dx + dy * dy;
        let t = if l2 == 0.0 { 0.0 } else { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / l2).clamp(0.0, 1.0) };
        ((a.0 + t * dx - p.0).powi(2) + (a.1 + t * dy - p.1).powi(2)).sqrt()
    }

    fn trace_strategy() -> impl Strategy<Value = Vec<(u64, u32, u32)>> {
        prop::collection::vec((0u64..40, 0u32..96, 0u32..64), 0..12).prop_map(|steps| {
            let mut t = 0;
            steps
                .into_iter()
                .map(|(dt, x, y)| {
                    t += dt;
                    (t, x, y)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn rasterize_dominates_prior(trace in trace_strategy(), seed_vals in prop::collection::vec(0u8..5, 96 * 64)) {
            let canvas = CanvasDims::new(96, 64);
            let prior = MaskBitmap::from_values(canvas, seed_vals.iter().map(|v| *v as f32 * 0.25).collect()).unwrap();
            let out = rasterize(&window_of(&trace, 10_000), canvas, &StrokeParams::default(), &prior);
            for (o, p) in out.values().iter().zip(prior.values()) {
                prop_assert!(o >= p && *o <= 1.0);
            }
        }

        #[test]
        fn mask_stays_near_polyline(trace in trace_strategy()) {
            let canvas = CanvasDims::new(96, 64);
            let p = StrokeParams::default();
            let out = rasterize(&window_of(&trace, 10_000), canvas, &p, &MaskBitmap::zeros(canvas));
            let pts: Vec<(f64, f64)> = trace.iter().map(|&(_, x, y)| (x as f64, y as f64)).collect();
            for y in 0..64u32 {
                for x in 0..96u32 {
                    if out.get(x, y) == 0.0 {
                        continue;
                    }
                    let here = (x as f64, y as f64);
                    let mut best = dist_to_segment(here, pts[0], pts[0]);
                    for seg in pts.windows(2) {
                        best = best.min(dist_to_segment(here, seg[0], seg[1]));
                    }
                    prop_assert!(best <= p.w_max / 2.0 + 1.0);
                }
            }
        }

        #[test]
        fn rasterize_is_deterministic(trace in trace_strategy()) {
            let canvas = CanvasDims::new(96, 64);
            let w = window_of(&trace, 10_000);
            let a = rasterize(&w, canvas, &StrokeParams::default(), &MaskBitmap::zeros(canvas));
            let b = rasterize(&w, canvas, &StrokeParams::default(), &MaskBitmap::zeros(canvas));
            prop_assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }

        #[test]
        fn fitted_crop_is_square_and_inside(x0 in 0u32..2250, y0 in 0u32..1500, w in 1u32..2250, h in 1u32..1500) {
            let canvas = CanvasDims::default();
            let (x1, y1) = ((x0 + w - 1).min(2249), (y0 + h - 1).min(1499));
            let r = fit_bbox(x0, y0, x1, y1, canvas, CropBounds::default()).unwrap();
            prop_assert!(r.x0 + r.side <= 2250 && r.y0 + r.side <= 1500);
            prop_assert!(r.side >= 256 && r.backend_side <= 512 && r.scale() >= 1.0);
            if r.side < 1500 {
                prop_assert!(r.contains(x0, y0) && r.contains(x1, y1), "{r:?} misses {:?}", (x0, y0, x1, y1));
            }
        }
    }
}
