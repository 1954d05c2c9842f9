//! Wire formats between gaze sources, frame viewers, the server, and a remote
//! inpainting backend.
//!
//! Control-plane messages are newline-delimited JSON objects carrying a
//! one-character discriminator `t`:
//!
//! ```text
//! {"t":"g","ts":0,"x":0.5,"y":0.5}          gaze sample
//! {"t":"c","k":"unmounted","ts":9000}       control signal
//! {"t":"v","cycle":0,"text":"..."}          caption (voice-over) event
//! {"t":"p","ts":120}                         viewer ping
//! {"t":"p","ts":120,"srv":5031}              server echo
//! {"t":"p","ts":120,"kf":true}               ping requesting a keyframe
//! ```
//!
//! Frame patches use a binary envelope, all integers little-endian:
//!
//! ```text
//! "MCV1" | seq_no u32 | x0 u32 | y0 u32 | width u32 | height u32 |
//! present_at_ms u64 | payload_len u32 | PNG payload
//! ```
//!
//! Over WebSocket the same bytes travel as text frames (JSON) and binary
//! frames (envelopes).

use std::fmt;
use std::sync::Arc;

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging;

pub const FRAME_MAGIC: [u8; 4] = *b"MCV1";
/// Bytes preceding the PNG payload in a frame envelope.
pub const ENVELOPE_HEADER_LEN: usize = 4 + 4 * 5 + 8 + 4;
/// Upper bound on a single JSON line accepted from a stream.
pub const MAX_LINE_LEN: usize = 64 * 1024;
/// Upper bound on a frame payload accepted from a stream.
pub const MAX_PAYLOAD_LEN: usize = 64 * 1024 * 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error("invalid message: {0}")]
    InvalidMessage(String),
}

fn malformed(msg: impl Into<String>) -> ProtocolError {
    ProtocolError::MalformedMessage(msg.into())
}

/// One timestamped normalized gaze point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeSample {
    pub ts_ms: u64,
    pub x: f64,
    pub y: f64,
}

impl GazeSample {
    pub fn new(ts_ms: u64, x: f64, y: f64) -> Result<Self, ProtocolError> {
        let sample = Self { ts_ms, x, y };
        sample.validate()?;
        Ok(sample)
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if !(0.0..=1.0).contains(&self.x) || !(0.0..=1.0).contains(&self.y) {
            return Err(ProtocolError::InvalidMessage(format!(
                "gaze coordinate ({}, {}) outside [0,1]",
                self.x, self.y
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlKind {
    Mounted,
    Unmounted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControlSignal {
    pub kind: ControlKind,
    pub ts_ms: u64,
}

/// Placement of a patch in canvas pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchRegion {
    pub x0: u32,
    pub y0: u32,
    pub width: u32,
    pub height: u32,
}

impl PatchRegion {
    pub fn fits_in(&self, canvas_width: u32, canvas_height: u32) -> bool {
        self.x0 as u64 + self.width as u64 <= canvas_width as u64
            && self.y0 as u64 + self.height as u64 <= canvas_height as u64
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct FramePatch {
    pub seq_no: u32,
    pub region: PatchRegion,
    pub present_at_ms: u64,
    /// PNG bytes of exactly `region.width x region.height` pixels.
    pub png: Arc<[u8]>,
}

impl fmt::Debug for FramePatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FramePatch")
            .field("seq_no", &self.seq_no)
            .field("region", &self.region)
            .field("present_at_ms", &self.present_at_ms)
            .field("png_len", &self.png.len())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionEvent {
    pub text: String,
    pub cycle_index: u64,
}

/// Viewer handshake. The server echoes `ts_ms` back with its own clock in
/// `server_ms` so clients can estimate their offset; `keyframe` asks for a
/// full-canvas frame after a sequence gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ping {
    pub ts_ms: u64,
    pub server_ms: Option<u64>,
    pub keyframe: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Gaze(GazeSample),
    Control(ControlSignal),
    Ping(Ping),
    Frame(FramePatch),
    Caption(CaptionEvent),
}

impl Message {
    /// True for messages that travel as JSON text.
    pub fn is_text(&self) -> bool {
        !matches!(self, Message::Frame(_))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "t", deny_unknown_fields)]
enum TextWire<'a> {
    #[serde(rename = "g")]
    Gaze { ts: u64, x: f64, y: f64 },
    #[serde(rename = "c")]
    Control { k: ControlKind, ts: u64 },
    #[serde(rename = "p")]
    Ping {
        ts: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        srv: Option<u64>,
        #[serde(default, skip_serializing_if = "is_false")]
        kf: bool,
    },
    #[serde(rename = "v")]
    Caption {
        cycle: u64,
        #[serde(borrow)]
        text: std::borrow::Cow<'a, str>,
    },
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// Serializes one message. Text messages end with a newline; frame patches
/// use the binary envelope.
pub fn encode_message(msg: &Message) -> Vec<u8> {
    let wire = match msg {
        Message::Frame(patch) => return encode_envelope(patch),
        Message::Gaze(g) => TextWire::Gaze { ts: g.ts_ms, x: g.x, y: g.y },
        Message::Control(c) => TextWire::Control { k: c.kind, ts: c.ts_ms },
        Message::Ping(p) => TextWire::Ping { ts: p.ts_ms, srv: p.server_ms, kf: p.keyframe },
        Message::Caption(c) => TextWire::Caption { cycle: c.cycle_index, text: c.text.as_str().into() },
    };
    let mut out = serde_json::to_vec(&wire).expect("wire structs always serialize");
    out.push(b'\n');
    out
}

fn encode_envelope(patch: &FramePatch) -> Vec<u8> {
    let mut out = Vec::with_capacity(ENVELOPE_HEADER_LEN + patch.png.len());
    out.extend_from_slice(&FRAME_MAGIC);
    out.extend_from_slice(&patch.seq_no.to_le_bytes());
    out.extend_from_slice(&patch.region.x0.to_le_bytes());
    out.extend_from_slice(&patch.region.y0.to_le_bytes());
    out.extend_from_slice(&patch.region.width.to_le_bytes());
    out.extend_from_slice(&patch.region.height.to_le_bytes());
    out.extend_from_slice(&patch.present_at_ms.to_le_bytes());
    out.extend_from_slice(&(patch.png.len() as u32).to_le_bytes());
    out.extend_from_slice(&patch.png);
    out
}

/// Parses exactly one message from `bytes`.
pub fn decode_message(bytes: &[u8]) -> Result<Message, ProtocolError> {
    if bytes.starts_with(&FRAME_MAGIC) {
        return decode_envelope(bytes);
    }
    if bytes.first() == Some(&b'{') {
        return decode_text(bytes);
    }
    Err(malformed("neither a JSON object nor a frame envelope"))
}

fn decode_text(bytes: &[u8]) -> Result<Message, ProtocolError> {
    let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    let body = body.strip_suffix(b"\r").unwrap_or(body);
    if body.contains(&b'\n') {
        return Err(malformed("text message spans multiple lines"));
    }
    let wire: TextWire<'_> = serde_json::from_slice(body).map_err(|e| malformed(e.to_string()))?;
    let msg = match wire {
        TextWire::Gaze { ts, x, y } => {
            Message::Gaze(GazeSample::new(ts, x, y).map_err(|e| malformed(e.to_string()))?)
        }
        TextWire::Control { k, ts } => Message::Control(ControlSignal { kind: k, ts_ms: ts }),
        TextWire::Ping { ts, srv, kf } => Message::Ping(Ping { ts_ms: ts, server_ms: srv, keyframe: kf }),
        TextWire::Caption { cycle, text } => {
            if text.is_empty() {
                return Err(malformed("caption text is empty"));
            }
            Message::Caption(CaptionEvent { text: text.into_owned(), cycle_index: cycle })
        }
    };
    Ok(msg)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn decode_envelope(bytes: &[u8]) -> Result<Message, ProtocolError> {
    if bytes.len() < ENVELOPE_HEADER_LEN {
        return Err(malformed("truncated envelope header"));
    }
    let seq_no = read_u32(bytes, 4);
    let region = PatchRegion {
        x0: read_u32(bytes, 8),
        y0: read_u32(bytes, 12),
        width: read_u32(bytes, 16),
        height: read_u32(bytes, 20),
    };
    let present_at_ms = u64::from_le_bytes(bytes[24..32].try_into().unwrap());
    let len = read_u32(bytes, 32) as usize;
    let payload = &bytes[ENVELOPE_HEADER_LEN..];
    if payload.len() != len {
        return Err(malformed(format!("envelope declares {len} payload bytes, found {}", payload.len())));
    }
    match imaging::png_dimensions(payload) {
        Some((w, h)) if w == region.width && h == region.height => {}
        Some((w, h)) => {
            return Err(malformed(format!(
                "payload is {w}x{h}, region declares {}x{}",
                region.width, region.height
            )))
        }
        None => return Err(malformed("payload is not a PNG image")),
    }
    Ok(Message::Frame(FramePatch { seq_no, region, present_at_ms, png: payload.into() }))
}

/// Incremental decoder for a byte stream carrying interleaved JSON lines and
/// frame envelopes. Malformed items are reported and skipped; the stream
/// stays usable.
#[derive(Debug, Default)]
pub struct StreamDecoder {
    buf: Vec<u8>,
}

impl StreamDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Returns the next complete item, or `None` when more bytes are needed.
    pub fn next_message(&mut self) -> Option<Result<Message, ProtocolError>> {
        loop {
            if self.buf.is_empty() {
                return None;
            }
            let magic_prefix = self.buf.len().min(4);
            if self.buf[..magic_prefix] == FRAME_MAGIC[..magic_prefix] {
                if self.buf.len() < ENVELOPE_HEADER_LEN {
                    return None;
                }
                let len = read_u32(&self.buf, 32) as usize;
                if len > MAX_PAYLOAD_LEN {
                    self.buf.drain(..4);
                    return Some(Err(malformed(format!("payload length {len} exceeds limit"))));
                }
                if self.buf.len() < ENVELOPE_HEADER_LEN + len {
                    return None;
                }
                let item: Vec<u8> = self.buf.drain(..ENVELOPE_HEADER_LEN + len).collect();
                return Some(decode_envelope(&item));
            }
            match self.buf.iter().position(|&b| b == b'\n') {
                Some(end) => {
                    let line: Vec<u8> = self.buf.drain(..=end).collect();
                    if line.iter().all(|b| b.is_ascii_whitespace()) {
                        continue;
                    }
                    if line.len() > MAX_LINE_LEN {
                        return Some(Err(malformed("line exceeds length limit")));
                    }
                    return Some(decode_message(&line));
                }
                None if self.buf.len() > MAX_LINE_LEN => {
                    self.buf.clear();
                    return Some(Err(malformed("unterminated line exceeds length limit")));
                }
                None => return None,
            }
        }
    }
}

/// Body of a `POST /inpaint` request to a remote synthesis backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthRequest {
    pub crop_png: Vec<u8>,
    pub mask_png: Vec<u8>,
    pub prompt_id: u32,
    pub seed: u64,
}

pub const SYNTH_PATH: &str = "/inpaint";

/// Builds the request for one inpainting call. `mask` is single-channel;
/// nonzero marks pixels to replace.
pub fn synth_request(crop: &RgbImage, mask: &GrayImage, prompt_id: u32, seed: u64) -> Result<SynthRequest, ProtocolError> {
    if crop.dimensions() != mask.dimensions() {
        return Err(ProtocolError::InvalidMessage(format!(
            "crop is {:?}, mask is {:?}",
            crop.dimensions(),
            mask.dimensions()
        )));
    }
    Ok(SynthRequest {
        crop_png: imaging::encode_png_rgb(crop),
        mask_png: imaging::encode_png_gray(mask),
        prompt_id,
        seed,
    })
}

/// One part of a multipart/form-data body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormPart {
    pub name: String,
    pub content_type: Option<String>,
    pub data: Vec<u8>,
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    haystack.windows(needle.len()).any(|w| w == needle)
}

fn find(haystack: &[u8], needle: &[u8], from: usize) -> Option<usize> {
    haystack.get(from..)?.windows(needle.len()).position(|w| w == needle).map(|p| p + from)
}

impl SynthRequest {
    pub fn parts(&self) -> Vec<FormPart> {
        let png = Some("image/png".to_string());
        vec![
            FormPart { name: "crop".into(), content_type: png.clone(), data: self.crop_png.clone() },
            FormPart { name: "mask".into(), content_type: png, data: self.mask_png.clone() },
            FormPart { name: "prompt_id".into(), content_type: None, data: self.prompt_id.to_string().into_bytes() },
            FormPart { name: "seed".into(), content_type: None, data: self.seed.to_string().into_bytes() },
        ]
    }

    /// Returns `(content_type, body)`.
    pub fn to_multipart(&self) -> (String, Vec<u8>) {
        let parts = self.parts();
        let mut n = 0u32;
        let boundary = loop {
            let candidate = format!("morphcanvas-{:08x}-{n}", self.seed as u32 ^ self.prompt_id);
            if !parts.iter().any(|p| contains(&p.data, candidate.as_bytes())) {
                break candidate;
            }
            n += 1;
        };
        let mut body = Vec::new();
        for part in &parts {
            body.extend_from_slice(format!("--{boundary}\r\n").as_bytes());
            match &part.content_type {
                Some(ct) => body.extend_from_slice(
                    format!(
                        "Content-Disposition: form-data; name=\"{0}\"; filename=\"{0}.png\"\r\nContent-Type: {ct}\r\n\r\n",
                        part.name
                    )
                    .as_bytes(),
                ),
                None => body.extend_from_slice(
                    format!("Content-Disposition: form-data; name=\"{}\"\r\n\r\n", part.name).as_bytes(),
                ),
            }
            body.extend_from_slice(&part.data);
            body.extend_from_slice(b"\r\n");
        }
        body.extend_from_slice(format!("--{boundary}--\r\n").as_bytes());
        (format!("multipart/form-data; boundary={boundary}"), body)
    }

    /// Server-side inverse of [`SynthRequest::to_multipart`].
    pub fn from_multipart(content_type: &str, body: &[u8]) -> Result<Self, ProtocolError> {
        let parts = parse_multipart(content_type, body)?;
        let get = |name: &str| {
            parts
                .iter()
                .find(|p| p.name == name)
                .map(|p| p.data.as_slice())
                .ok_or_else(|| malformed(format!("missing part {name:?}")))
        };
        let text = |name: &str| -> Result<String, ProtocolError> {
            String::from_utf8(get(name)?.to_vec()).map_err(|_| malformed(format!("part {name:?} is not UTF-8")))
        };
        Ok(Self {
            crop_png: get("crop")?.to_vec(),
            mask_png: get("mask")?.to_vec(),
            prompt_id: text("prompt_id")?.trim().parse().map_err(|_| malformed("bad prompt_id"))?,
            seed: text("seed")?.trim().parse().map_err(|_| malformed("bad seed"))?,
        })
    }
}

pub fn parse_multipart(content_type: &str, body: &[u8]) -> Result<Vec<FormPart>, ProtocolError> {
    let boundary = content_type
        .split(';')
        .filter_map(|p| p.trim().strip_prefix("boundary="))
        .next()
        .map(|b| b.trim_matches('"'))
        .ok_or_else(|| malformed("content type has no boundary"))?;
    let delim = format!("--{boundary}").into_bytes();
    let mut parts = Vec::new();
    let mut pos = find(body, &delim, 0).ok_or_else(|| malformed("no opening boundary"))? + delim.len();
    loop {
        if body[pos..].starts_with(b"--") {
            return Ok(parts);
        }
        if !body[pos..].starts_with(b"\r\n") {
            return Err(malformed("boundary not followed by CRLF"));
        }
        pos += 2;
        let head_end = find(body, b"\r\n\r\n", pos).ok_or_else(|| malformed("unterminated part headers"))?;
        let head = std::str::from_utf8(&body[pos..head_end]).map_err(|_| malformed("non-UTF-8 headers"))?;
        let mut name = None;
        let mut content_type = None;
        for line in head.split("\r\n") {
            let Some((key, value)) = line.split_once(':') else { continue };
            match key.trim().to_ascii_lowercase().as_str() {
                "content-disposition" => {
                    name = value
                        .split(';')
                        .filter_map(|p| p.trim().strip_prefix("name="))
                        .next()
                        .map(|n| n.trim_matches('"').to_string());
                }
                "content-type" => content_type = Some(value.trim().to_string()),
                _ => {}
            }
        }
        let data_start = head_end + 4;
        let mut closing = b"\r\n".to_vec();
        closing.extend_from_slice(&delim);
        let data_end = find(body, &closing, data_start).ok_or_else(|| malformed("unterminated part body"))?;
        parts.push(FormPart {
            name: name.ok_or_else(|| malformed("part without a name"))?,
            content_type,
            data: body[data_start..data_end].to_vec(),
        });
        pos = data_end + closing.len();
    }
}
