//! Installation session state machine: idle → active → reversing →
//! archiving → idle.
//!
//! Every cycle snapshots the canvas region it is about to change, so reversal
//! restores the pristine canvas bit-exactly by pasting those snapshots back in
//! inverse order, even when crops overlap.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use image::imageops::FilterType;
use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaze_mask::{self, CanvasDims, CropBounds, CropRegion, GazeWindow, MaskBitmap, StrokeParams};
use crate::imaging;
use crate::interpolate::{Direction, InterpolateError, Interpolator, MorphSequence, TimingModel};
use crate::protocol::{ControlKind, ControlSignal};
use crate::synthesis::{self, InpaintBackend, PromptRegistry, SynthError, SynthesisConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Idle,
    Active,
    Reversing,
    Archiving,
}

impl Phase {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_u8(v: u8) -> Phase {
        match v {
            1 => Phase::Active,
            2 => Phase::Reversing,
            3 => Phase::Archiving,
            _ => Phase::Idle,
        }
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("operation requires phase {expected:?}, session is {actual:?}")]
    WrongPhase { expected: Phase, actual: Phase },
    #[error(transparent)]
    Synthesis(#[from] SynthError),
    #[error(transparent)]
    Interpolate(#[from] InterpolateError),
    #[error("archive I/O: {0}")]
    Io(#[from] io::Error),
}

/// Pipeline parameters recorded with every archived session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub delta_t_ms: u64,
    pub n_frames: u32,
    pub stroke: StrokeParams,
    pub crop: CropBounds,
    pub synthesis: SynthesisConfig,
    /// Simulated interpolation time Δt′; zero means measured only.
    pub sim_interp_ms: u64,
    /// Slack the cycle planner keeps between a sequence becoming ready and
    /// the moment it is due on the output.
    pub schedule_margin_ms: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            delta_t_ms: 1000,
            n_frames: 32,
            stroke: StrokeParams::default(),
            crop: CropBounds::default(),
            synthesis: SynthesisConfig::default(),
            sim_interp_ms: 210,
            schedule_margin_ms: 200,
        }
    }
}

impl SessionConfig {
    pub fn timing(&self) -> TimingModel {
        TimingModel::new(self.delta_t_ms, self.n_frames)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub cycle_index: u64,
    pub region: CropRegion,
    pub prompt_id: u32,
    pub seed: u64,
    pub pre_patch: Arc<RgbImage>,
    pub post_patch: Arc<RgbImage>,
    pub frames_archived: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    pub session_id: Option<String>,
    pub config: SessionConfig,
    pub cycles: Vec<CycleRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlOutcome {
    Transitioned(Phase),
    Ignored,
}

pub struct Session {
    phase: Phase,
    config: SessionConfig,
    pristine: Arc<RgbImage>,
    canvas: RgbImage,
    record: SessionRecord,
    cycle_index: u64,
    ignored_signals: u64,
    reversed: bool,
    keep_heatmap: bool,
    last_heatmap: Option<MaskBitmap>,
}

impl Session {
    pub fn new(pristine: RgbImage, config: SessionConfig) -> Self {
        let canvas = pristine.clone();
        Self {
            phase: Phase::Idle,
            record: SessionRecord { session_id: None, config: config.clone(), cycles: Vec::new() },
            config,
            pristine: Arc::new(pristine),
            canvas,
            cycle_index: 0,
            ignored_signals: 0,
            reversed: false,
            keep_heatmap: false,
            last_heatmap: None,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn canvas(&self) -> &RgbImage {
        &self.canvas
    }

    pub fn pristine(&self) -> &RgbImage {
        &self.pristine
    }

    pub fn dims(&self) -> CanvasDims {
        CanvasDims::new(self.pristine.width(), self.pristine.height())
    }

    pub fn record(&self) -> &SessionRecord {
        &self.record
    }

    pub fn ignored_signals(&self) -> u64 {
        self.ignored_signals
    }

    pub fn cycle_count(&self) -> u64 {
        self.cycle_index
    }

    /// Retain the heatmap of the latest cycle for [`Session::last_heatmap`].
    pub fn keep_heatmaps(&mut self, keep: bool) {
        self.keep_heatmap = keep;
    }

    pub fn last_heatmap(&self) -> Option<&MaskBitmap> {
        self.last_heatmap.as_ref()
    }

    pub fn on_control(&mut self, signal: &ControlSignal) -> ControlOutcome {
        match (self.phase, signal.kind) {
            (Phase::Idle, ControlKind::Mounted) => {
                self.phase = Phase::Active;
                self.cycle_index = 0;
                self.reversed = false;
                self.record = SessionRecord { session_id: None, config: self.config.clone(), cycles: Vec::new() };
                self.canvas = (*self.pristine).clone();
                ControlOutcome::Transitioned(Phase::Active)
            }
            (Phase::Active, ControlKind::Unmounted) => {
                self.phase = Phase::Reversing;
                ControlOutcome::Transitioned(Phase::Reversing)
            }
            _ => {
                self.ignored_signals += 1;
                ControlOutcome::Ignored
            }
        }
    }

    fn require(&self, expected: Phase) -> Result<(), SessionError> {
        if self.phase != expected {
            return Err(SessionError::WrongPhase { expected, actual: self.phase });
        }
        Ok(())
    }

    /// One morph cycle: mask → crop → inpaint → composite → interpolate.
    ///
    /// Returns `None` when the window yields no mask. Backend failures leave
    /// the canvas and record untouched.
    pub fn run_cycle(
        &mut self,
        window: &GazeWindow,
        backend: &dyn InpaintBackend,
        prompts: &PromptRegistry,
        interpolator: &dyn Interpolator,
    ) -> Result<Option<MorphSequence>, SessionError> {
        self.require(Phase::Active)?;
        if window.is_empty() {
            return Ok(None);
        }
        let dims = self.dims();
        let heat = gaze_mask::rasterize(window, dims, &self.config.stroke, &MaskBitmap::zeros(dims));
        let binary = gaze_mask::binarize(&heat, self.config.stroke.threshold);
        if self.keep_heatmap {
            self.last_heatmap = Some(heat);
        }
        let Some(region) = gaze_mask::fit_crop(&binary, dims, self.config.crop) else {
            return Ok(None);
        };
        let prompt = prompts.next_prompt(self.cycle_index)?;
        let seed = self.config.synthesis.seed_policy.seed_for(self.cycle_index);
        let pre_patch = imaging::crop(&self.canvas, &region);
        let mask_patch = binary.crop(&region);
        let post_patch = inpaint_region(backend, &pre_patch, &mask_patch, &region, prompt, seed)?;

        let started = Instant::now();
        let frames = interpolator.interpolate(&pre_patch, &post_patch, self.config.n_frames)?;
        let delta_t_prime_ms = started.elapsed().as_millis() as u64;

        imaging::paste(&mut self.canvas, &post_patch, region.x0, region.y0);
        let index = self.cycle_index;
        self.record.cycles.push(CycleRecord {
            cycle_index: index,
            region,
            prompt_id: prompt.id,
            seed,
            pre_patch: Arc::new(pre_patch),
            post_patch: Arc::new(post_patch),
            frames_archived: frames.len(),
        });
        self.cycle_index += 1;
        let window_start_ms = window
            .samples()
            .last()
            .map(|s| s.arrival_ms.saturating_sub(self.config.delta_t_ms));
        Ok(Some(MorphSequence {
            cycle_index: index,
            region,
            frames: frames.into_iter().map(Arc::new).collect(),
            frame_interval_ms: self.config.timing().playback_interval_ms(),
            delta_t_prime_ms,
            direction: Direction::Forward,
            prompt: Some(prompt.clone()),
            window_start_ms,
        }))
    }

    pub fn reversal_plan(&self) -> Result<ReversalPlan, SessionError> {
        self.require(Phase::Reversing)?;
        Ok(reversal_plan(&self.record, self.config.timing()))
    }

    /// Restores every cycle's pre-patch in inverse order and moves to archiving.
    pub fn finish_reversal(&mut self) -> Result<(), SessionError> {
        self.require(Phase::Reversing)?;
        for cycle in self.record.cycles.iter().rev() {
            imaging::paste(&mut self.canvas, &cycle.pre_patch, cycle.region.x0, cycle.region.y0);
        }
        self.reversed = true;
        self.phase = Phase::Archiving;
        Ok(())
    }

    /// Builds the plan, applies it to the canvas, and returns every reversed sequence.
    pub fn reverse(&mut self, interpolator: &dyn Interpolator) -> Result<Vec<MorphSequence>, SessionError> {
        let plan = self.reversal_plan()?;
        let sequences = plan.sequences(interpolator).collect::<Result<Vec<_>, _>>()?;
        self.finish_reversal()?;
        Ok(sequences)
    }

    /// Shutdown path: archive an active session as-is, without reversal.
    pub fn abandon(&mut self) -> Result<(), SessionError> {
        self.require(Phase::Active)?;
        self.phase = Phase::Archiving;
        Ok(())
    }

    /// Writes the session under `dir/<session_id>/` and returns to idle.
    pub fn archive(&mut self, dir: &Path) -> Result<PathBuf, SessionError> {
        self.require(Phase::Archiving)?;
        let (session_id, manifest) = write_archive(&self.record, &self.canvas, self.reversed, dir)?;
        self.record.session_id = Some(session_id);
        self.phase = Phase::Idle;
        self.canvas = (*self.pristine).clone();
        Ok(manifest)
    }
}

fn inpaint_region(
    backend: &dyn InpaintBackend,
    pre: &RgbImage,
    mask: &GrayImage,
    region: &CropRegion,
    prompt: &synthesis::PromptEntry,
    seed: u64,
) -> Result<RgbImage, SynthError> {
    if region.backend_side == region.side {
        let out = synthesis::inpaint(backend, pre, mask, prompt, seed)?;
        return Ok(synthesis::composite_masked(pre, &out, mask).0);
    }
    let side = region.backend_side;
    let small_crop = image::imageops::resize(pre, side, side, FilterType::Triangle);
    let small_mask = image::imageops::resize(mask, side, side, FilterType::Nearest);
    let small_out = synthesis::inpaint(backend, &small_crop, &small_mask, prompt, seed)?;
    let upscaled = image::imageops::resize(&small_out, region.side, region.side, FilterType::Triangle);
    Ok(synthesis::composite_masked(pre, &upscaled, mask).0)
}

/// Ordered reversal of a session: last cycle first, each morph played
/// from its post-patch back to its pre-patch.
#[derive(Debug, Clone)]
pub struct ReversalPlan {
    cycles: Vec<CycleRecord>,
    timing: TimingModel,
}

pub fn reversal_plan(record: &SessionRecord, timing: TimingModel) -> ReversalPlan {
    ReversalPlan { cycles: record.cycles.iter().rev().cloned().collect(), timing }
}

impl ReversalPlan {
    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    /// Sequences are produced lazily so playback can start before the whole
    /// plan is rendered.
    pub fn sequences<'a>(
        &'a self,
        interpolator: &'a dyn Interpolator,
    ) -> impl Iterator<Item = Result<MorphSequence, InterpolateError>> + 'a {
        self.cycles.iter().map(move |cycle| {
            let started = Instant::now();
            let mut frames = interpolator.interpolate(&cycle.pre_patch, &cycle.post_patch, self.timing.n_frames)?;
            frames.reverse();
            Ok(MorphSequence {
                cycle_index: cycle.cycle_index,
                region: cycle.region,
                frames: frames.into_iter().map(Arc::new).collect(),
                frame_interval_ms: self.timing.playback_interval_ms(),
                delta_t_prime_ms: started.elapsed().as_millis() as u64,
                direction: Direction::Reverse,
                prompt: None,
                window_start_ms: None,
            })
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCycle {
    pub cycle_index: u64,
    pub region: CropRegion,
    pub prompt_id: u32,
    pub seed: u64,
    pub frames_archived: usize,
    pub pre: String,
    pub post: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub session_id: String,
    pub config: SessionConfig,
    pub canvas: CanvasDims,
    pub reversed: bool,
    pub cycles: Vec<ManifestCycle>,
    #[serde(rename = "final")]
    pub final_canvas: String,
    pub final_hash: String,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn write_archive(record: &SessionRecord, canvas: &RgbImage, reversed: bool, dir: &Path) -> Result<(String, PathBuf), io::Error> {
    fs::create_dir_all(dir)?;
    let nonce = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .unwrap_or(Duration::ZERO)
        .as_nanos();
    let tmp = dir.join(format!(".tmp-{}-{nonce}", std::process::id()));
    fs::create_dir(&tmp)?;
    let result = populate_and_commit(record, canvas, reversed, dir, &tmp);
    if result.is_err() {
        let _ = fs::remove_dir_all(&tmp);
    }
    result
}

fn populate_and_commit(
    record: &SessionRecord,
    canvas: &RgbImage,
    reversed: bool,
    dir: &Path,
    tmp: &Path,
) -> Result<(String, PathBuf), io::Error> {
    let mut cycles = Vec::with_capacity(record.cycles.len());
    for c in &record.cycles {
        let pre = format!("cycle_{}_pre.png", c.cycle_index);
        let post = format!("cycle_{}_post.png", c.cycle_index);
        fs::write(tmp.join(&pre), imaging::encode_png_rgb(&c.pre_patch))?;
        fs::write(tmp.join(&post), imaging::encode_png_rgb(&c.post_patch))?;
        cycles.push(ManifestCycle {
            cycle_index: c.cycle_index,
            region: c.region,
            prompt_id: c.prompt_id,
            seed: c.seed,
            frames_archived: c.frames_archived,
            pre,
            post,
        });
    }
    fs::write(tmp.join("final.png"), imaging::encode_png_rgb(canvas))?;

    let mut index = 0u32;
    loop {
        let session_id = format!("session-{index:04}");
        let target = dir.join(&session_id);
        if target.exists() {
            index += 1;
            continue;
        }
        let manifest = Manifest {
            session_id: session_id.clone(),
            config: record.config.clone(),
            canvas: CanvasDims::new(canvas.width(), canvas.height()),
            reversed,
            cycles: cycles.clone(),
            final_canvas: "final.png".into(),
            final_hash: imaging::image_hash(canvas),
        };
        let json = serde_json::to_vec_pretty(&manifest).map_err(io::Error::other)?;
        fs::write(tmp.join(MANIFEST_FILE), json)?;
        match fs::rename(tmp, &target) {
            Ok(()) => return Ok((session_id, target.join(MANIFEST_FILE))),
            // lost a race for this id, or the target appeared meanwhile
            Err(_) if target.exists() => index += 1,
            Err(e) => return Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaze_mask::WindowSample;
    use crate::interpolate::CrossDissolve;
    use crate::synthesis::MockBackend;
    use image::Rgb;

    fn quick_config() -> SessionConfig {
        SessionConfig {
            n_frames: 3,
            sim_interp_ms: 0,
            synthesis: SynthesisConfig { simulated_latency_ms: 0, ..Default::default() },
            ..Default::default()
        }
    }

    fn mounted(cfg: SessionConfig, canvas: RgbImage) -> Session {
        let mut s = Session::new(canvas, cfg);
        s.on_control(&ControlSignal { kind: ControlKind::Mounted, ts_ms: 0 });
        s
    }

    fn stroke(points: &[(u32, u32)], t0: u64) -> GazeWindow {
        let mut w = GazeWindow::new(1000);
        for (i, &(px, py)) in points.iter().enumerate() {
            w.push_pixel(WindowSample { arrival_ms: t0 + i as u64 * 13, px, py });
        }
        w
    }

    #[test]
    fn control_transitions() {
        let mut s = Session::new(RgbImage::new(8, 8), quick_config());
        let m = ControlSignal { kind: ControlKind::Mounted, ts_ms: 0 };
        let u = ControlSignal { kind: ControlKind::Unmounted, ts_ms: 9000 };
        assert_eq!(s.on_control(&u), ControlOutcome::Ignored);
        assert_eq!(s.on_control(&m), ControlOutcome::Transitioned(Phase::Active));
        assert_eq!(s.on_control(&m), ControlOutcome::Ignored);
        assert_eq!(s.ignored_signals(), 2);
        assert_eq!(s.on_control(&u), ControlOutcome::Transitioned(Phase::Reversing));
        assert_eq!(s.on_control(&m), ControlOutcome::Ignored);
        assert_eq!(s.phase(), Phase::Reversing);
    }

    #[test]
    fn empty_window_changes_nothing() {
        let mut s = mounted(quick_config(), RgbImage::from_pixel(300, 200, Rgb([128; 3])));
        let out = s
            .run_cycle(&GazeWindow::new(1000), &MockBackend::default(), &PromptRegistry::builtin(), &CrossDissolve)
            .unwrap();
        assert!(out.is_none());
        assert_eq!(s.canvas(), s.pristine());
        assert_eq!(s.cycle_count(), 0);
    }

    #[test]
    fn run_cycle_requires_active_phase() {
        let mut s = Session::new(RgbImage::new(300, 200), quick_config());
        let err = s
            .run_cycle(&stroke(&[(10, 10)], 0), &MockBackend::default(), &PromptRegistry::builtin(), &CrossDissolve)
            .unwrap_err();
        assert!(matches!(err, SessionError::WrongPhase { expected: Phase::Active, actual: Phase::Idle }));
    }

    /// Pixel-diff oracle: only masked pixels inside the crop may change.
    #[test]
    fn cycle_changes_exactly_the_masked_crop() {
        let cfg = quick_config();
        let mut s = mounted(cfg.clone(), RgbImage::from_pixel(300, 200, Rgb([128; 3])));
        s.keep_heatmaps(true);
        let w = stroke(&[(100, 100), (110, 104), (120, 108), (130, 112), (130, 112), (130, 112)], 0);
        let seq = s
            .run_cycle(&w, &MockBackend::default(), &PromptRegistry::builtin(), &CrossDissolve)
            .unwrap()
            .unwrap();
        let binary = gaze_mask::binarize(s.last_heatmap().unwrap(), cfg.stroke.threshold);
        let region = seq.region;
        assert_eq!(region.side, 200);
        let mut changed = 0;
        for y in 0..200 {
            for x in 0..300 {
                let differs = s.canvas().get_pixel(x, y) != s.pristine().get_pixel(x, y);
                let expected = region.contains(x, y) && binary.get(x, y);
                assert_eq!(differs, expected, "pixel ({x},{y})");
                changed += differs as usize;
            }
        }
        assert!(changed > 0);
        assert_eq!(seq.frames.len(), 5);
        assert_eq!(*seq.first(), imaging::crop(s.pristine(), &region));
        assert_eq!(*seq.last(), imaging::crop(s.canvas(), &region));
    }

    #[test]
    fn downscaled_crop_still_preserves_exterior() {
        let canvas = RgbImage::from_fn(1200, 900, |x, y| Rgb([(x % 251) as u8, (y % 241) as u8, 90]));
        let mut s = mounted(quick_config(), canvas);
        s.keep_heatmaps(true);
        let pts: Vec<_> = (0..40).map(|i| (200 + i * 18, 300 + (i % 5) * 3)).collect();
        let mut w = GazeWindow::new(1000);
        for (i, &(px, py)) in pts.iter().enumerate() {
            // slow enough to stay narrow, dense enough to overlap
            w.push_pixel(WindowSample { arrival_ms: i as u64 * 2000 / 40, px, py });
            w.push_pixel(WindowSample { arrival_ms: i as u64 * 2000 / 40 + 1, px, py });
        }
        let seq = s
            .run_cycle(&w, &MockBackend::default(), &PromptRegistry::builtin(), &CrossDissolve)
            .unwrap()
            .unwrap();
        assert!(seq.region.side > 512, "{:?}", seq.region);
        assert_eq!(seq.region.backend_side, 512);
        let binary = gaze_mask::binarize(s.last_heatmap().unwrap(), 0.5);
        for y in 0..900 {
            for x in 0..1200 {
                if !(seq.region.contains(x, y) && binary.get(x, y)) {
                    assert_eq!(s.canvas().get_pixel(x, y), s.pristine().get_pixel(x, y));
                }
            }
        }
    }

    #[test]
    fn reversal_restores_pristine_and_reverses_frames() {
        let canvas = RgbImage::from_fn(300, 200, |x, y| Rgb([x as u8, y as u8, 200]));
        let mut s = mounted(quick_config(), canvas);
        let reg = PromptRegistry::builtin();
        for (i, start) in [(40u32, 50u32), (60, 70)].iter().enumerate() {
            let pts: Vec<_> = (0..6).map(|k| (start.0 + k * 3, start.1 + k)).collect();
            s.run_cycle(&stroke(&pts, i as u64 * 1000), &MockBackend::default(), &reg, &CrossDissolve)
                .unwrap()
                .unwrap();
        }
        assert_ne!(s.canvas(), s.pristine());
        s.on_control(&ControlSignal { kind: ControlKind::Unmounted, ts_ms: 5000 });
        let plan = s.reverse(&CrossDissolve).unwrap();
        assert_eq!(plan.len(), 2);
        assert_eq!(plan[0].cycle_index, 1);
        assert_eq!(*plan[1].last(), *s.record().cycles[0].pre_patch);
        assert_eq!(*plan[0].first(), *s.record().cycles[1].post_patch);
        assert_eq!(s.canvas(), s.pristine());
        assert_eq!(s.phase(), Phase::Archiving);
    }

    #[test]
    fn zero_cycle_reversal_goes_straight_to_archive() {
        let mut s = mounted(quick_config(), RgbImage::new(16, 16));
        s.on_control(&ControlSignal { kind: ControlKind::Unmounted, ts_ms: 1 });
        assert!(s.reverse(&CrossDissolve).unwrap().is_empty());
        assert_eq!(s.phase(), Phase::Archiving);
    }

    #[test]
    fn archive_layout_and_unique_ids() {
        let dir = tempfile::tempdir().unwrap();
        let canvas = RgbImage::from_pixel(300, 200, Rgb([120, 130, 140]));
        let reg = PromptRegistry::builtin();
        let mut s = mounted(quick_config(), canvas);
        for i in 0..3u32 {
            let pts: Vec<_> = (0..6).map(|k| (50 + i * 60 + k * 2, 80 + k)).collect();
            s.run_cycle(&stroke(&pts, i as u64 * 1000), &MockBackend::default(), &reg, &CrossDissolve)
                .unwrap()
                .unwrap();
        }
        s.on_control(&ControlSignal { kind: ControlKind::Unmounted, ts_ms: 1 });
        s.reverse(&CrossDissolve).unwrap();
        let manifest_path = s.archive(dir.path()).unwrap();
        assert_eq!(s.phase(), Phase::Idle);
        let session_dir = manifest_path.parent().unwrap();
        assert_eq!(session_dir.file_name().unwrap(), "session-0000");
        let manifest: Manifest = serde_json::from_slice(&fs::read(&manifest_path).unwrap()).unwrap();
        assert_eq!(manifest.cycles.len(), 3);
        let mut files: Vec<_> = fs::read_dir(session_dir)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        files.sort();
        assert_eq!(files.len(), 8);
        for c in &manifest.cycles {
            assert!(files.contains(&c.pre) && files.contains(&c.post));
        }
        let final_png = imaging::decode_png_rgb(&fs::read(session_dir.join("final.png")).unwrap()).unwrap();
        assert_eq!(final_png, *s.pristine());

        // second, empty session into the same directory
        s.on_control(&ControlSignal { kind: ControlKind::Mounted, ts_ms: 2 });
        s.on_control(&ControlSignal { kind: ControlKind::Unmounted, ts_ms: 3 });
        s.reverse(&CrossDissolve).unwrap();
        let second = s.archive(dir.path()).unwrap();
        assert_eq!(second.parent().unwrap().file_name().unwrap(), "session-0001");
        let m2: Manifest = serde_json::from_slice(&fs::read(&second).unwrap()).unwrap();
        assert!(m2.cycles.is_empty());
        assert!(fs::read_dir(dir.path()).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().starts_with(".tmp")));
    }

    #[test]
    fn abandon_archives_without_reversal() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = mounted(quick_config(), RgbImage::from_pixel(300, 200, Rgb([100; 3])));
        let pts: Vec<_> = (0..6).map(|k| (150 + k, 100)).collect();
        s.run_cycle(&stroke(&pts, 0), &MockBackend::default(), &PromptRegistry::builtin(), &CrossDissolve)
            .unwrap()
            .unwrap();
        let distorted = s.canvas().clone();
        s.abandon().unwrap();
        let path = s.archive(dir.path()).unwrap();
        let m: Manifest = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        assert!(!m.reversed);
        assert_eq!(m.final_hash, imaging::image_hash(&distorted));
    }
}
