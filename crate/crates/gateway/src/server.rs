//! Live session service.
//!
//! Each connection runs one engine session on its own thread. Client
//! timestamps drive the session clock; between messages the clock is
//! extrapolated from wall time so turn deadlines fire on time. Every event
//! applied to the engine is persisted so the session can be replayed.

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use log::{info, warn};
use tungstenite::{Message, WebSocket};

use reflex_core::corpus;
use reflex_core::engine::Session;
use reflex_core::timeline::{BehaviorKind, Payload};
use reflex_core::{DialogueEvent, EngineAssets, Task};

use crate::protocol::{parse_client_line, ClientMessage, ServerEvent};
use crate::tagger;

/// Wall-clock period at which an idle session clock is advanced.
pub const TICK: Duration = Duration::from_millis(20);

pub const LOG_DIR_ENV: &str = "REFLEX_LOG_DIR";

pub struct ServerConfig {
    /// Assets per task; the task is chosen by the client's start message.
    pub listening: Arc<EngineAssets>,
    pub interview: Arc<EngineAssets>,
    pub sessions_dir: PathBuf,
}

impl ServerConfig {
    fn assets(&self, task: Task) -> Arc<EngineAssets> {
        match task {
            Task::Listening => Arc::clone(&self.listening),
            Task::Interview => Arc::clone(&self.interview),
        }
    }
}

/// Sessions directory from the environment, falling back to `configured`.
pub fn sessions_dir(configured: &Path) -> PathBuf {
    std::env::var_os(LOG_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| configured.to_path_buf())
}

/// A bidirectional line transport.
pub trait Transport {
    /// Next client line; `Ok(None)` when nothing arrived within `timeout`.
    fn recv(&mut self, timeout: Duration) -> io::Result<Option<String>>;
    fn send(&mut self, line: &str) -> io::Result<()>;
    fn close(&mut self);
}

pub struct LineTransport {
    lines: mpsc::Receiver<io::Result<String>>,
    writer: TcpStream,
}

impl LineTransport {
    pub fn new(stream: TcpStream) -> io::Result<Self> {
        let reader = stream.try_clone()?;
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(Self {
            lines: rx,
            writer: stream,
        })
    }
}

impl Transport for LineTransport {
    fn recv(&mut self, timeout: Duration) -> io::Result<Option<String>> {
        match self.lines.recv_timeout(timeout) {
            Ok(line) => line.map(Some),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(io::ErrorKind::UnexpectedEof.into()),
        }
    }

    fn send(&mut self, line: &str) -> io::Result<()> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")
    }

    fn close(&mut self) {
        let _ = self.writer.flush();
        let _ = self.writer.shutdown(Shutdown::Both);
    }
}

/// Browser socket adapter: one text frame per protocol line.
pub struct WsTransport {
    ws: WebSocket<TcpStream>,
}

impl WsTransport {
    pub fn accept(stream: TcpStream) -> io::Result<Self> {
        let ws = tungstenite::accept(stream).map_err(|e| io::Error::other(e.to_string()))?;
        Ok(Self { ws })
    }
}

fn ws_err(e: tungstenite::Error) -> io::Error {
    match e {
        tungstenite::Error::Io(e) => e,
        tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed => io::ErrorKind::UnexpectedEof.into(),
        other => io::Error::other(other.to_string()),
    }
}

impl Transport for WsTransport {
    fn recv(&mut self, timeout: Duration) -> io::Result<Option<String>> {
        self.ws.get_ref().set_read_timeout(Some(timeout))?;
        loop {
            match self.ws.read() {
                Ok(Message::Text(t)) => return Ok(Some(t.trim_end().to_string())),
                Ok(Message::Binary(b)) => {
                    return String::from_utf8(b)
                        .map(Some)
                        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
                }
                Ok(Message::Close(_)) => return Err(io::ErrorKind::UnexpectedEof.into()),
                Ok(_) => continue,
                Err(tungstenite::Error::Io(e))
                    if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) =>
                {
                    return Ok(None)
                }
                Err(e) => return Err(ws_err(e)),
            }
        }
    }

    fn send(&mut self, line: &str) -> io::Result<()> {
        self.ws.send(Message::Text(line.to_string())).map_err(ws_err)
    }

    fn close(&mut self) {
        let _ = self.ws.close(None);
        let _ = self.ws.flush();
        let _ = self.ws.get_ref().shutdown(Shutdown::Both);
    }
}

static SESSION_SEQ: AtomicU64 = AtomicU64::new(0);

fn new_session_id() -> String {
    let ms = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis());
    let seq = SESSION_SEQ.fetch_add(1, Ordering::Relaxed);
    format!("{ms}-{}-{seq:04}", std::process::id())
}

/// Engine session plus the bookkeeping that makes it replayable.
pub struct LiveSession {
    engine: Session,
    task: Task,
    dir: PathBuf,
    events: Vec<DialogueEvent>,
    transcript: Vec<String>,
    /// Session time at `anchor_at`.
    anchor_t: u64,
    anchor_at: Instant,
    /// No event may be applied before this time.
    floor: u64,
    last_client_t: u64,
    clamped: u64,
    closed: bool,
}

impl LiveSession {
    pub fn start(assets: Arc<EngineAssets>, task: Task, dir: PathBuf) -> (Self, Vec<ServerEvent>) {
        let mut engine = Session::new(assets);
        let _ = engine.start();
        let mut s = Self {
            engine,
            task,
            dir,
            events: Vec::new(),
            transcript: Vec::new(),
            anchor_t: 0,
            anchor_at: Instant::now(),
            floor: 0,
            last_client_t: 0,
            clamped: 0,
            closed: false,
        };
        let out = s.drain();
        (s, out)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn clock(&self) -> u64 {
        self.anchor_t + self.anchor_at.elapsed().as_millis() as u64
    }

    fn drain(&mut self) -> Vec<ServerEvent> {
        let out: Vec<ServerEvent> = self
            .engine
            .drain_new()
            .iter()
            .filter_map(ServerEvent::from_record)
            .collect();
        self.transcript.extend(out.iter().map(ServerEvent::to_line));
        out
    }

    /// Advances the engine to the extrapolated session clock.
    pub fn tick(&mut self) -> Vec<ServerEvent> {
        let now = self.clock();
        if now > self.floor {
            self.floor = now;
            self.engine.advance_to(now);
        }
        self.drain()
    }

    /// Applies one timestamped client message. Returns the server events
    /// it produced, or a protocol error.
    pub fn handle(&mut self, msg: ClientMessage) -> Result<Vec<ServerEvent>, ServerEvent> {
        let mut out = Vec::new();
        let Some(t_client) = msg.t() else {
            return Err(ServerEvent::error("protocol", "expected a timestamped message"));
        };
        if t_client < self.last_client_t {
            out.push(ServerEvent::Warning {
                code: "non_monotone_time".into(),
                msg: format!("t={t_client} is before previous t={}", self.last_client_t),
                t: self.floor,
            });
        }
        self.last_client_t = self.last_client_t.max(t_client);
        let t = t_client.max(self.floor);
        if t != t_client {
            self.clamped += 1;
        }
        let payload = match msg {
            ClientMessage::Vad { on: true, .. } => Payload::VadOn,
            ClientMessage::Vad { on: false, .. } => Payload::VadOff,
            ClientMessage::Word {
                surface, pos, t_end, ..
            } => {
                if surface.trim().is_empty() {
                    return Err(ServerEvent::error("protocol", "empty word surface"));
                }
                let pos = tagger::resolve(&surface, pos.as_deref());
                let end = t_end.max(t_client) + (t - t_client);
                DialogueEvent::word(t, &surface, &pos, end).payload
            }
            ClientMessage::Behavior { kind, .. } => match BehaviorKind::parse(&kind) {
                Some(k) => Payload::Behavior(k),
                None => return Err(ServerEvent::error("protocol", format!("unknown behavior {kind:?}"))),
            },
            ClientMessage::Prosody { f0, power, .. } => {
                if !(f0.is_finite() && f0 >= 0.0 && power.is_finite()) {
                    return Err(ServerEvent::error("protocol", "invalid prosody frame"));
                }
                Payload::Prosody {
                    f0_hz: f0,
                    power_db: power,
                }
            }
            ClientMessage::Start { .. } | ClientMessage::End => unreachable!("untimed messages handled above"),
        };
        let e = DialogueEvent::new(t, payload);
        self.floor = t;
        self.anchor_t = t;
        self.anchor_at = Instant::now();
        self.events.push(e.clone());
        // Rejections are recorded in the log and surfaced as error events.
        let _ = self.engine.ingest(e);
        out.extend(self.drain());
        Ok(out)
    }

    /// Runs the session to the current clock and writes it to disk.
    pub fn close(&mut self) -> io::Result<Vec<ServerEvent>> {
        if self.closed {
            return Ok(Vec::new());
        }
        self.closed = true;
        let end = self.clock().max(self.floor);
        self.engine.finish(end);
        let out = self.drain();
        self.persist(end)?;
        Ok(out)
    }

    fn persist(&self, end_t: u64) -> io::Result<()> {
        fs::create_dir_all(&self.dir)?;
        let mut ev = io::BufWriter::new(fs::File::create(self.dir.join("events.jsonl"))?);
        corpus::write_corpus(&mut ev, &self.events)?;
        ev.flush()?;
        self.engine.log().write_to(&self.dir.join("log.jsonl"))?;
        let mut tr = String::new();
        for l in &self.transcript {
            tr.push_str(l);
            tr.push('\n');
        }
        fs::write(self.dir.join("transcript.jsonl"), tr)?;
        let meta = serde_json::json!({
            "task": self.task.as_str(),
            "end_t": end_t,
            "events": self.events.len(),
            "clamped": self.clamped,
        });
        fs::write(self.dir.join("meta.json"), format!("{meta}\n"))
    }
}

fn send_all<T: Transport>(tr: &mut T, events: &[ServerEvent]) -> io::Result<()> {
    for e in events {
        tr.send(&e.to_line())?;
    }
    Ok(())
}

/// Serves one connection until the client ends the session, disconnects, or
/// violates the protocol.
pub fn run_connection<T: Transport>(mut tr: T, cfg: &ServerConfig) {
    let mut session: Option<LiveSession> = None;
    let result = (|| -> io::Result<()> {
        loop {
            let line = match tr.recv(TICK) {
                Ok(Some(l)) => l,
                Ok(None) => {
                    if let Some(s) = session.as_mut() {
                        let out = s.tick();
                        send_all(&mut tr, &out)?;
                    }
                    continue;
                }
                Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(()),
                Err(e) => return Err(e),
            };
            if line.trim().is_empty() {
                continue;
            }
            let msg = match parse_client_line(&line) {
                Ok(m) => m,
                Err(e) => {
                    tr.send(&ServerEvent::error("malformed", e).to_line())?;
                    return Ok(());
                }
            };
            match (msg, session.as_mut()) {
                (ClientMessage::Start { task }, None) => {
                    let dir = cfg.sessions_dir.join(new_session_id());
                    info!("session {} started ({})", dir.display(), task.as_str());
                    let (s, out) = LiveSession::start(cfg.assets(task), task, dir);
                    session = Some(s);
                    send_all(&mut tr, &out)?;
                }
                (ClientMessage::Start { .. }, Some(_)) => {
                    tr.send(&ServerEvent::error("protocol", "session already started").to_line())?;
                    return Ok(());
                }
                (ClientMessage::End, Some(s)) => {
                    let out = s.close()?;
                    send_all(&mut tr, &out)?;
                    return Ok(());
                }
                (_, None) => {
                    tr.send(&ServerEvent::error("protocol", "send start first").to_line())?;
                    return Ok(());
                }
                (msg, Some(s)) => {
                    let out = s.tick();
                    send_all(&mut tr, &out)?;
                    match s.handle(msg) {
                        Ok(out) => send_all(&mut tr, &out)?,
                        Err(err) => {
                            tr.send(&err.to_line())?;
                            return Ok(());
                        }
                    }
                }
            }
        }
    })();
    if let Err(e) = result {
        warn!("connection ended with error: {e}");
    }
    if let Some(mut s) = session {
        match s.close() {
            Ok(_) => info!("session {} saved", s.dir().display()),
            Err(e) => warn!("could not save session {}: {e}", s.dir().display()),
        }
    }
    tr.close();
}

/// Accepts newline-framed connections forever.
pub fn serve_lines(listener: TcpListener, cfg: Arc<ServerConfig>) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                warn!("accept failed: {e}");
                continue;
            }
        };
        let cfg = Arc::clone(&cfg);
        thread::spawn(move || match LineTransport::new(stream) {
            Ok(tr) => run_connection(tr, &cfg),
            Err(e) => warn!("connection setup failed: {e}"),
        });
    }
    Ok(())
}

/// Accepts browser socket connections forever.
pub fn serve_ws(listener: TcpListener, cfg: Arc<ServerConfig>) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                warn!("accept failed: {e}");
                continue;
            }
        };
        let cfg = Arc::clone(&cfg);
        thread::spawn(move || match WsTransport::accept(stream) {
            Ok(tr) => run_connection(tr, &cfg),
            Err(e) => warn!("handshake failed: {e}"),
        });
    }
    Ok(())
}
