//! Network front ends: gaze/control input and viewer output.
//!
//! Both listeners accept raw TCP and WebSocket clients on the same port. A
//! connection that opens with an HTTP `GET` is upgraded to WebSocket (or, on
//! the viewer port, answered as `GET /metrics`); anything else is treated as
//! a raw byte stream of protocol messages.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crossbeam_channel::Sender;
use image::RgbImage;
use tungstenite::handshake::server::{Request, Response};
use tungstenite::{Message as WsMessage, WebSocket};

use crate::imaging;
use crate::protocol::{ControlSignal, GazeSample, Message, Ping, StreamDecoder};
use crate::stream_out::{self, ChannelSet, KeyframeTarget, Metrics, Outbound, PacerCommand, SessionClock, Sink, SinkRole};

/// Input to the collect stage, in arrival order.
#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Gaze { sample: GazeSample, arrival_ms: u64 },
    Control { signal: ControlSignal, arrival_ms: u64 },
    /// Clock advance with no input.
    Tick(u64),
    /// Stop the pipeline. With `drain`, queued work finishes first.
    Shutdown { drain: bool },
}

impl Event {
    pub fn stamp(&self) -> Option<u64> {
        match self {
            Event::Gaze { arrival_ms, .. } | Event::Control { arrival_ms, .. } => Some(*arrival_ms),
            Event::Tick(ms) => Some(*ms),
            Event::Shutdown { .. } => None,
        }
    }
}

/// Re-stamps arrivals with the server clock. Stamping and sending happen
/// under one lock, so stamps on the event channel never decrease even with
/// many connections.
#[derive(Debug)]
pub struct Stamper {
    clock: SessionClock,
    last: Mutex<u64>,
    events: Sender<Event>,
}

impl Stamper {
    pub fn new(clock: SessionClock, events: Sender<Event>) -> Self {
        Self { clock, last: Mutex::new(0), events }
    }

    pub fn clock(&self) -> SessionClock {
        self.clock
    }

    /// Returns false once the receiving side is gone.
    pub fn send(&self, make: impl FnOnce(u64) -> Event) -> bool {
        let mut last = self.last.lock().unwrap();
        let now = (self.clock.now_ms() as u64).max(*last);
        *last = now;
        self.events.send(make(now)).is_ok()
    }

    pub fn tick(&self) -> bool {
        self.send(Event::Tick)
    }
}

/// Handles one decoded item from a gaze connection.
struct GazeConnection {
    stamper: Arc<Stamper>,
    metrics: Arc<Metrics>,
    last_ts: Option<u64>,
}

impl GazeConnection {
    /// Returns false when the pipeline has stopped.
    fn handle(&mut self, item: Result<Message, crate::protocol::ProtocolError>) -> bool {
        match item {
            Ok(Message::Gaze(sample)) => {
                if self.last_ts.is_some_and(|last| sample.ts_ms < last) {
                    Metrics::bump(&self.metrics.gaze_rejected);
                    return true;
                }
                self.last_ts = Some(sample.ts_ms);
                Metrics::bump(&self.metrics.gaze_received);
                self.stamper.send(|arrival_ms| Event::Gaze { sample, arrival_ms })
            }
            Ok(Message::Control(signal)) => self.stamper.send(|arrival_ms| Event::Control { signal, arrival_ms }),
            Ok(Message::Ping(_)) => true,
            Ok(other) => {
                log::debug!("gaze port ignoring {:?}", std::mem::discriminant(&other));
                Metrics::bump(&self.metrics.malformed_messages);
                true
            }
            Err(e) => {
                log::debug!("gaze port: {e}");
                Metrics::bump(&self.metrics.malformed_messages);
                true
            }
        }
    }
}

/// Long-lived listener thread plus its bound address.
pub struct Listener {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl Listener {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting. Open connections end when their peers disconnect or
    /// the pipeline stops.
    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Listener {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn spawn_listener(
    addr: &str,
    name: &str,
    serve: impl Fn(TcpStream) + Send + Sync + 'static,
) -> io::Result<Listener> {
    let listener = TcpListener::bind(addr)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let stop2 = stop.clone();
    let serve = Arc::new(serve);
    let thread_name = name.to_owned();
    let handle = thread::Builder::new().name(name.into()).spawn(move || {
        for stream in listener.incoming() {
            if stop2.load(Ordering::Relaxed) {
                break;
            }
            match stream {
                Ok(stream) => {
                    let serve = serve.clone();
                    let _ = thread::Builder::new().name(format!("{thread_name}-conn")).spawn(move || serve(stream));
                }
                Err(e) => log::warn!("{thread_name}: accept failed: {e}"),
            }
        }
    })?;
    Ok(Listener { addr, stop, handle: Some(handle) })
}

/// How long a silent client may wait before it is assumed to speak raw TCP.
const SNIFF_TIMEOUT: Duration = Duration::from_millis(300);

/// Peeks at the first bytes. Returns true for an HTTP `GET`.
fn opens_with_get(stream: &TcpStream) -> bool {
    let _ = stream.set_read_timeout(Some(SNIFF_TIMEOUT));
    let mut buf = [0u8; 4];
    let deadline = std::time::Instant::now() + SNIFF_TIMEOUT;
    loop {
        match stream.peek(&mut buf) {
            Ok(n) if n >= 4 => break buf == *b"GET ",
            Ok(0) => break false,
            Ok(n) if buf[..n] != b"GET "[..n] => break false,
            Ok(_) if std::time::Instant::now() < deadline => thread::sleep(Duration::from_millis(2)),
            _ => break false,
        }
    }
}

/// Gaze and control input on `addr`.
pub fn spawn_gaze_listener(addr: &str, stamper: Arc<Stamper>, metrics: Arc<Metrics>) -> io::Result<Listener> {
    spawn_listener(addr, "gaze", move |stream| {
        let _ = stream.set_nodelay(true);
        let conn = GazeConnection { stamper: stamper.clone(), metrics: metrics.clone(), last_ts: None };
        let result = if opens_with_get(&stream) { serve_gaze_ws(stream, conn) } else { serve_gaze_tcp(stream, conn) };
        if let Err(e) = result {
            log::debug!("gaze connection closed: {e}");
        }
    })
}

fn serve_gaze_tcp(mut stream: TcpStream, mut conn: GazeConnection) -> io::Result<()> {
    stream.set_read_timeout(None)?;
    let mut decoder = StreamDecoder::new();
    let mut buf = vec![0u8; 16 * 1024];
    loop {
        let n = stream.read(&mut buf)?;
        if n == 0 {
            return Ok(());
        }
        decoder.push(&buf[..n]);
        while let Some(item) = decoder.next_message() {
            if !conn.handle(item) {
                return Ok(());
            }
        }
    }
}

fn serve_gaze_ws(stream: TcpStream, mut conn: GazeConnection) -> io::Result<()> {
    stream.set_read_timeout(None)?;
    let mut ws = tungstenite::accept(stream).map_err(io::Error::other)?;
    let mut decoder = StreamDecoder::new();
    loop {
        let payload = match ws.read() {
            Ok(WsMessage::Text(t)) => {
                let mut bytes = t.as_bytes().to_vec();
                if !bytes.ends_with(b"\n") {
                    bytes.push(b'\n');
                }
                bytes
            }
            Ok(WsMessage::Binary(b)) => b.to_vec(),
            Ok(WsMessage::Close(_)) => return Ok(()),
            Ok(_) => continue,
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(io::Error::other(e)),
        };
        decoder.push(&payload);
        while let Some(item) = decoder.next_message() {
            if !conn.handle(item) {
                return Ok(());
            }
        }
    }
}

/// What the viewer port needs from the running pipeline.
#[derive(Clone)]
pub struct ViewContext {
    pub clock: SessionClock,
    pub channels: Arc<ChannelSet>,
    pub metrics: Arc<Metrics>,
    pub pacer: Sender<PacerCommand>,
    pub displayed: Arc<Mutex<RgbImage>>,
}

impl ViewContext {
    pub fn metrics_text(&self) -> String {
        let hash = imaging::image_hash(&self.displayed.lock().unwrap());
        self.metrics.render(Some(&hash))
    }

    fn handle_ping(&self, sink: &Sink, ping: Ping) {
        if ping.keyframe {
            let _ = self.pacer.send(PacerCommand::Keyframe(KeyframeTarget::Sink(sink.id())));
        }
        sink.push_ping(Ping { ts_ms: ping.ts_ms, server_ms: Some(self.clock.now_ms() as u64), keyframe: ping.keyframe });
    }
}

/// Viewer output and `GET /metrics` on `addr`.
pub fn spawn_view_listener(addr: &str, ctx: ViewContext) -> io::Result<Listener> {
    spawn_listener(addr, "view", move |stream| {
        let _ = stream.set_nodelay(true);
        let result = if opens_with_get(&stream) { serve_view_http(stream, &ctx) } else { serve_view_tcp(stream, &ctx) };
        if let Err(e) = result {
            log::debug!("viewer connection closed: {e}");
        }
    })
}

fn request_head(stream: &TcpStream) -> io::Result<String> {
    let mut buf = vec![0u8; 8192];
    let deadline = std::time::Instant::now() + Duration::from_secs(2);
    loop {
        let n = stream.peek(&mut buf)?;
        if let Some(end) = buf[..n].windows(4).position(|w| w == b"\r\n\r\n") {
            return Ok(String::from_utf8_lossy(&buf[..end]).into_owned());
        }
        if n == buf.len() || std::time::Instant::now() > deadline {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "incomplete HTTP request head"));
        }
        thread::sleep(Duration::from_millis(2));
    }
}

fn serve_view_http(mut stream: TcpStream, ctx: &ViewContext) -> io::Result<()> {
    let head = request_head(&stream)?;
    let path = head.split_whitespace().nth(1).unwrap_or("/").to_owned();
    let upgrade = head.lines().any(|l| {
        let l = l.to_ascii_lowercase();
        l.starts_with("upgrade:") && l.contains("websocket")
    });
    if !upgrade {
        let mut consumed = vec![0u8; head.len() + 4];
        stream.read_exact(&mut consumed)?;
        let (status, body) = if path == "/metrics" {
            ("200 OK", ctx.metrics_text())
        } else {
            ("404 Not Found", "not found\n".to_owned())
        };
        let reply = format!(
            "HTTP/1.1 {status}\r\nContent-Type: text/plain; charset=utf-8\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        );
        return stream.write_all(reply.as_bytes());
    }
    stream.set_read_timeout(None)?;
    let ws = tungstenite::accept_hdr(stream, |_: &Request, resp: Response| Ok(resp)).map_err(io::Error::other)?;
    let role = if path.starts_with("/immersant") { SinkRole::Immersant } else { SinkRole::Bystander };
    let sink = attach_viewer(ctx, role);
    let result = pump_ws(ws, &sink, ctx);
    detach_viewer(ctx, &sink);
    result
}

fn attach_viewer(ctx: &ViewContext, role: SinkRole) -> Arc<Sink> {
    let sink = ctx.channels.new_sink(role);
    match role {
        SinkRole::Immersant => ctx.channels.set_immersant(sink.clone()),
        SinkRole::Bystander => ctx.channels.add_bystander(sink.clone()),
    }
    let _ = ctx.pacer.send(PacerCommand::Keyframe(KeyframeTarget::Sink(sink.id())));
    sink
}

fn detach_viewer(ctx: &ViewContext, sink: &Arc<Sink>) {
    sink.close();
    if sink.role() == SinkRole::Immersant && ctx.channels.immersant().id() == sink.id() {
        stream_out::install_local_display(&ctx.channels);
    }
}

/// Writes queued output and answers pings on one WebSocket.
fn pump_ws(mut ws: WebSocket<TcpStream>, sink: &Arc<Sink>, ctx: &ViewContext) -> io::Result<()> {
    ws.get_mut().set_read_timeout(Some(Duration::from_millis(2)))?;
    let mut decoder = StreamDecoder::new();
    loop {
        let mut wrote = false;
        while let Some(item) = sink.pop(Duration::from_millis(if wrote { 0 } else { 5 })) {
            let msg = match &item {
                Outbound::Frame(_) => WsMessage::Binary(item.encode().into()),
                _ => {
                    let mut text = item.encode();
                    text.pop();
                    WsMessage::Text(String::from_utf8(text).expect("JSON is UTF-8").into())
                }
            };
            ws.write(msg).map_err(io::Error::other)?;
            wrote = true;
        }
        if sink.is_closed() && sink.is_empty() {
            let _ = ws.close(None);
            let _ = ws.flush();
            return Ok(());
        }
        match ws.flush() {
            Ok(()) => {}
            Err(tungstenite::Error::Io(e)) if e.kind() == io::ErrorKind::WouldBlock || e.kind() == io::ErrorKind::TimedOut => {}
            Err(e) => return Err(io::Error::other(e)),
        }
        match ws.read() {
            Ok(WsMessage::Text(t)) => {
                decoder.push(t.as_bytes());
                decoder.push(b"\n");
            }
            Ok(WsMessage::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if e.kind() == io::ErrorKind::WouldBlock || e.kind() == io::ErrorKind::TimedOut => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(io::Error::other(e)),
        }
        while let Some(item) = decoder.next_message() {
            match item {
                Ok(Message::Ping(p)) => ctx.handle_ping(sink, p),
                _ => Metrics::bump(&ctx.metrics.malformed_messages),
            }
        }
    }
}

fn serve_view_tcp(stream: TcpStream, ctx: &ViewContext) -> io::Result<()> {
    stream.set_read_timeout(None)?;
    let sink = attach_viewer(ctx, SinkRole::Bystander);
    let mut reader = stream.try_clone()?;
    let reader_sink = sink.clone();
    let reader_ctx = ctx.clone();
    let reader_thread = thread::spawn(move || {
        let mut decoder = StreamDecoder::new();
        let mut buf = [0u8; 4096];
        loop {
            match reader.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => decoder.push(&buf[..n]),
            }
            while let Some(item) = decoder.next_message() {
                match item {
                    Ok(Message::Ping(p)) => reader_ctx.handle_ping(&reader_sink, p),
                    _ => Metrics::bump(&reader_ctx.metrics.malformed_messages),
                }
            }
        }
        reader_sink.close();
    });
    let mut writer = stream;
    let result = loop {
        match sink.pop(Duration::from_millis(50)) {
            Some(item) => {
                if let Err(e) = writer.write_all(&item.encode()) {
                    break Err(e);
                }
            }
            None if sink.is_closed() => break Ok(()),
            None => {}
        }
    };
    detach_viewer(ctx, &sink);
    let _ = writer.shutdown(std::net::Shutdown::Both);
    let _ = reader_thread.join();
    result
}
