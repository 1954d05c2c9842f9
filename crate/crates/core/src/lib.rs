//! Gaze-driven generative morphing pipeline.
//!
//! Gaze samples stream in over TCP or WebSocket, a temporal-window heatmap
//! selects a region of a landscape canvas, an inpainting backend replaces the
//! masked pixels, and a cross-dissolve interpolator turns every change into a
//! paced morph sequence that is broadcast to viewer channels. Unmounting the
//! headset plays every change back in reverse until the canvas is pristine
//! again, and the session is archived to disk.

pub mod cli;
pub mod config;
pub mod gaze_mask;
pub mod imaging;
pub mod ingest;
pub mod interpolate;
pub mod pipeline;
pub mod protocol;
pub mod replay;
pub mod session;
pub mod stream_out;
pub mod synthesis;

pub use gaze_mask::{CanvasDims, CropBounds, CropRegion, GazeWindow, MaskBitmap, StrokeParams};
pub use interpolate::{MorphSequence, TimingModel};
pub use protocol::{CaptionEvent, ControlKind, ControlSignal, FramePatch, GazeSample, Message};
pub use session::{Phase, Session, SessionConfig};
