//! TCP recording endpoint and a reference streaming client.
//!
//! One session per connection: `HELLO`, any number of `FRAME`s, then
//! `END(count)`. Frames are appended to `<id>_<n>.jsonl.partial` as they
//! arrive; a clean `END` whose count matches renames the file to
//! `<id>_<n>.jsonl` and is answered with `ACK`. Anything else (disconnect,
//! count mismatch, invalid frame, shutdown) leaves the `.partial` file in
//! place. A protocol violation before `HELLO` gets an `ERROR` reply and
//! produces no file.
//!
//! In raw-hand mode the server derives the gripper state from the pinch
//! distance and stores frames with an empty joint vector (`joint_count` 0).

use std::fs::{self, File};
use std::io::{self, BufWriter, ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{info, warn};
use thiserror::Error;

use crate::demofile::{read_demo_file, DemoFileError, DemoHeader, DemoWriter, DEMO_EXTENSION};
use crate::model::{frame_violations, Gripper, ModelError, PinchThresholds, PoseFrame};
use crate::wire::{codes, encode_message, FrameDecoder, Hello, StreamMode, WireError, WireFrame, WireMessage};

pub const DEFAULT_PORT: u16 = 10000;
pub const PARTIAL_SUFFIX: &str = "partial";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: io::Error,
    },
    #[error("output directory {path}: {source}")]
    OutputDir {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("transport error: {0}")]
    Transport(#[from] io::Error),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    File(#[from] DemoFileError),
    #[error("unexpected reply {0}")]
    UnexpectedReply(String),
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub max_frame_len: usize,
    pub pinch: PinchThresholds,
    /// How often idle sockets check for shutdown.
    pub poll_interval: Duration,
    /// Stop accepting after this many sessions have finished.
    pub max_sessions: Option<usize>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            max_frame_len: crate::wire::DEFAULT_MAX_FRAME_LEN,
            pinch: PinchThresholds::default(),
            poll_interval: Duration::from_millis(20),
            max_sessions: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    AwaitHello,
    Recording,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionStatus {
    /// ACK sent; the final file is in place.
    Completed,
    /// File left with the `.partial` suffix.
    Partial(String),
    /// Closed before `HELLO`; no file.
    Rejected(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionOutcome {
    pub peer: Option<SocketAddr>,
    pub path: Option<PathBuf>,
    pub frames: usize,
    pub status: SessionStatus,
}

struct Recording {
    mode: StreamMode,
    joint_count: usize,
    writer: DemoWriter<BufWriter<File>>,
    partial_path: PathBuf,
    final_path: PathBuf,
    last_t: f64,
    gripper: Gripper,
}

/// Per-connection protocol state machine.
pub struct Session {
    phase: Phase,
    frames_received: usize,
    recording: Option<Recording>,
    out_dir: PathBuf,
    pinch: PinchThresholds,
    seq: Arc<AtomicU64>,
}

/// What the connection handler should do after a message.
enum Step {
    Continue,
    Reply(WireMessage, SessionStatus),
}

fn sanitize(id: &str) -> String {
    let s: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    let s = s.trim_start_matches('.').to_string();
    if s.is_empty() {
        "demo".into()
    } else {
        s
    }
}

impl Session {
    fn new(out_dir: PathBuf, pinch: PinchThresholds, seq: Arc<AtomicU64>) -> Self {
        Self {
            phase: Phase::AwaitHello,
            frames_received: 0,
            recording: None,
            out_dir,
            pinch,
            seq,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn frames_received(&self) -> usize {
        self.frames_received
    }

    fn error(&mut self, code: u16, message: String) -> Step {
        let status = match self.phase {
            Phase::AwaitHello => SessionStatus::Rejected(message.clone()),
            _ => SessionStatus::Partial(message.clone()),
        };
        self.close_partial();
        Step::Reply(WireMessage::Error { code, message }, status)
    }

    fn close_partial(&mut self) {
        if let Some(rec) = &mut self.recording {
            let _ = rec.writer.flush();
        }
        self.phase = Phase::Closed;
    }

    fn start(&mut self, hello: Hello) -> Step {
        if !(hello.frequency_hz.is_finite() && hello.frequency_hz > 0.0) {
            return self.error(codes::MALFORMED, format!("frequency_hz must be positive, got {}", hello.frequency_hz));
        }
        if hello.mode == StreamMode::RawHand && hello.joint_count != 0 {
            return self.error(codes::MALFORMED, "raw-hand sessions must declare joint_count 0".into());
        }
        let base = sanitize(&hello.id);
        let (partial_path, final_path) = loop {
            let n = self.seq.fetch_add(1, Ordering::SeqCst);
            let name = format!("{base}_{n:04}.{DEMO_EXTENSION}");
            let final_path = self.out_dir.join(&name);
            let partial_path = self.out_dir.join(format!("{name}.{PARTIAL_SUFFIX}"));
            if !final_path.exists() && !partial_path.exists() {
                break (partial_path, final_path);
            }
        };
        let header = DemoHeader {
            id: hello.id,
            joint_count: hello.joint_count as usize,
            frequency_hz: hello.frequency_hz,
            task_tag: hello.task_tag,
        };
        let writer = match DemoWriter::create(&partial_path, &header) {
            Ok(w) => w,
            Err(e) => return self.error(codes::STORAGE, e.to_string()),
        };
        info!("session {} recording to {}", header.id, partial_path.display());
        self.recording = Some(Recording {
            mode: hello.mode,
            joint_count: header.joint_count,
            writer,
            partial_path,
            final_path,
            last_t: f64::NEG_INFINITY,
            gripper: Gripper::Open,
        });
        self.phase = Phase::Recording;
        Step::Continue
    }

    fn frame(&mut self, frame: WireFrame) -> Step {
        let rec = self.recording.as_mut().expect("recording phase has a writer");
        let pose = match (rec.mode, frame) {
            (StreamMode::Pose, WireFrame::Pose(p)) => p,
            (StreamMode::RawHand, WireFrame::RawHand(raw)) => {
                match self.pinch.next_state(raw.pinch_distance, rec.gripper) {
                    Ok(g) => rec.gripper = g,
                    Err(ModelError::InvalidInput(m) | ModelError::InvalidConfig(m)) => {
                        return self.error(codes::INVALID_FRAME, m)
                    }
                }
                PoseFrame {
                    t: raw.t,
                    position: raw.hand_position,
                    orientation: raw.hand_orientation,
                    joints: Vec::new(),
                    gripper: rec.gripper,
                }
            }
            _ => return self.error(codes::UNEXPECTED_MESSAGE, "frame variant does not match HELLO mode".into()),
        };
        let index = self.frames_received;
        let mut rules: Vec<String> = frame_violations(&pose, rec.joint_count)
            .into_iter()
            .map(|r| r.to_string())
            .collect();
        if pose.t < rec.last_t {
            rules.push("monotone-time".into());
        }
        if !rules.is_empty() {
            return self.error(codes::INVALID_FRAME, format!("frame {index}: {}", rules.join(", ")));
        }
        rec.last_t = pose.t;
        if let Err(e) = rec.writer.append(&pose).and_then(|_| rec.writer.flush()) {
            return self.error(codes::STORAGE, e.to_string());
        }
        self.frames_received += 1;
        Step::Continue
    }

    fn end(&mut self, count: u64) -> Step {
        if count != self.frames_received as u64 {
            return self.error(
                codes::COUNT_MISMATCH,
                format!("END declared {count} frames, received {}", self.frames_received),
            );
        }
        if self.frames_received < 2 {
            return self.error(
                codes::TOO_FEW_FRAMES,
                format!("a demonstration needs at least 2 frames, received {}", self.frames_received),
            );
        }
        let rec = self.recording.as_mut().expect("recording phase has a writer");
        let finished = rec
            .writer
            .flush()
            .and_then(|_| fs::rename(&rec.partial_path, &rec.final_path));
        if let Err(e) = finished {
            return self.error(codes::STORAGE, e.to_string());
        }
        self.phase = Phase::Closed;
        let file = rec
            .final_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        Step::Reply(
            WireMessage::Ack {
                count,
                file,
            },
            SessionStatus::Completed,
        )
    }

    fn handle(&mut self, msg: WireMessage) -> Step {
        match (self.phase, msg) {
            (Phase::AwaitHello, WireMessage::Hello(h)) => self.start(h),
            (Phase::Recording, WireMessage::Frame(f)) => self.frame(f),
            (Phase::Recording, WireMessage::End { count }) => self.end(count),
            (phase, other) => self.error(
                codes::UNEXPECTED_MESSAGE,
                format!("unexpected {} in phase {phase:?}", other.kind_name()),
            ),
        }
    }

    fn path(&self) -> Option<PathBuf> {
        self.recording.as_ref().map(|r| match self.phase {
            Phase::Closed if r.final_path.exists() => r.final_path.clone(),
            _ => r.partial_path.clone(),
        })
    }

    fn outcome(&self, peer: Option<SocketAddr>, status: SessionStatus) -> SessionOutcome {
        SessionOutcome {
            peer,
            path: self.path(),
            frames: self.frames_received,
            status,
        }
    }
}

fn run_session(
    mut stream: TcpStream,
    out_dir: PathBuf,
    cfg: ServeConfig,
    seq: Arc<AtomicU64>,
    shutdown: Arc<AtomicBool>,
) -> SessionOutcome {
    let peer = stream.peer_addr().ok();
    let mut session = Session::new(out_dir, cfg.pinch, seq);
    let mut decoder = FrameDecoder::new(cfg.max_frame_len);
    let _ = stream.set_read_timeout(Some(cfg.poll_interval));
    let mut buf = vec![0u8; 64 * 1024];
    loop {
        // Drain every complete message already buffered.
        loop {
            let msg = match decoder.next_message() {
                Ok(Some(m)) => m,
                Ok(None) => break,
                Err(e) => {
                    let code = codes::MALFORMED;
                    let step = session.error(code, e.to_string());
                    return finish(&mut stream, &session, peer, step);
                }
            };
            match session.handle(msg) {
                Step::Continue => {}
                step @ Step::Reply(..) => return finish(&mut stream, &session, peer, step),
            }
        }
        if shutdown.load(Ordering::SeqCst) {
            session.close_partial();
            return closed_early(&session, peer, "server shutdown");
        }
        match stream.read(&mut buf) {
            Ok(0) => {
                session.close_partial();
                return closed_early(&session, peer, "client disconnected");
            }
            Ok(n) => decoder.push(&buf[..n]),
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => {}
            Err(e) => {
                session.close_partial();
                return closed_early(&session, peer, &e.to_string());
            }
        }
    }
}

fn closed_early(session: &Session, peer: Option<SocketAddr>, why: &str) -> SessionOutcome {
    let status = if session.recording.is_some() {
        SessionStatus::Partial(why.to_string())
    } else {
        SessionStatus::Rejected(why.to_string())
    };
    session.outcome(peer, status)
}

fn finish(stream: &mut TcpStream, session: &Session, peer: Option<SocketAddr>, step: Step) -> SessionOutcome {
    let Step::Reply(reply, status) = step else {
        unreachable!("finish is only called with a reply")
    };
    if let Err(e) = stream.write_all(&encode_message(&reply)).and_then(|_| stream.flush()) {
        warn!("could not send {} to {peer:?}: {e}", reply.kind_name());
    }
    let _ = stream.shutdown(std::net::Shutdown::Write);
    session.outcome(peer, status)
}

/// A bound recording endpoint.
pub struct Server {
    listener: TcpListener,
    out_dir: PathBuf,
    cfg: ServeConfig,
    shutdown: Arc<AtomicBool>,
}

impl Server {
    pub fn bind<A: ToSocketAddrs + std::fmt::Display>(
        addr: A,
        out_dir: &Path,
        cfg: ServeConfig,
    ) -> Result<Self, IngestError> {
        cfg.pinch
            .validate()
            .map_err(|e| IngestError::InvalidConfig(e.to_string()))?;
        if cfg.max_frame_len < 1 {
            return Err(IngestError::InvalidConfig("max_frame_len must be >= 1".into()));
        }
        check_writable(out_dir)?;
        let listener = TcpListener::bind(&addr).map_err(|source| IngestError::Bind {
            addr: addr.to_string(),
            source,
        })?;
        listener.set_nonblocking(true)?;
        Ok(Self {
            listener,
            out_dir: out_dir.to_path_buf(),
            cfg,
            shutdown: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Flag that stops the server when set.
    pub fn shutdown_flag(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.shutdown)
    }

    /// Accepts connections until shutdown (or `max_sessions`), then waits
    /// for open sessions to finish. Open sessions see the same flag and
    /// close as `.partial`.
    pub fn run(self) -> Result<Vec<SessionOutcome>, IngestError> {
        let seq = Arc::new(AtomicU64::new(1));
        let outcomes = Arc::new(Mutex::new(Vec::new()));
        let mut handles: Vec<JoinHandle<()>> = Vec::new();
        let mut accepted = 0usize;
        loop {
            if self.shutdown.load(Ordering::SeqCst) {
                break;
            }
            if let Some(max) = self.cfg.max_sessions {
                if outcomes.lock().unwrap().len() >= max {
                    break;
                }
                if accepted >= max {
                    thread::sleep(self.cfg.poll_interval);
                    continue;
                }
            }
            match self.listener.accept() {
                Ok((stream, _)) => {
                    stream.set_nonblocking(false)?;
                    accepted += 1;
                    let out_dir = self.out_dir.clone();
                    let cfg = self.cfg.clone();
                    let seq = Arc::clone(&seq);
                    let shutdown = Arc::clone(&self.shutdown);
                    let outcomes = Arc::clone(&outcomes);
                    handles.push(thread::spawn(move || {
                        let outcome = run_session(stream, out_dir, cfg, seq, shutdown);
                        info!("session finished: {:?}", outcome.status);
                        outcomes.lock().unwrap().push(outcome);
                    }));
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(self.cfg.poll_interval),
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        // Let in-flight sessions observe the shutdown flag.
        self.shutdown.store(true, Ordering::SeqCst);
        for h in handles {
            let _ = h.join();
        }
        let outcomes = std::mem::take(&mut *outcomes.lock().unwrap());
        Ok(outcomes)
    }

    /// Runs the server on a background thread.
    pub fn spawn(self) -> io::Result<ServerHandle> {
        let addr = self.local_addr()?;
        let shutdown = self.shutdown_flag();
        let join = thread::spawn(move || self.run());
        Ok(ServerHandle { addr, shutdown, join })
    }
}

pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    join: JoinHandle<Result<Vec<SessionOutcome>, IngestError>>,
}

impl ServerHandle {
    /// Signals shutdown and returns every session outcome.
    pub fn stop(self) -> Result<Vec<SessionOutcome>, IngestError> {
        self.shutdown.store(true, Ordering::SeqCst);
        self.join.join().expect("server thread panicked")
    }

    /// Waits for the server to exit on its own (e.g. `max_sessions`).
    pub fn join(self) -> Result<Vec<SessionOutcome>, IngestError> {
        self.join.join().expect("server thread panicked")
    }
}

fn check_writable(dir: &Path) -> Result<(), IngestError> {
    let err = |source| IngestError::OutputDir {
        path: dir.to_path_buf(),
        source,
    };
    fs::create_dir_all(dir).map_err(err)?;
    let probe = dir.join(format!(".write-probe-{}", std::process::id()));
    File::create(&probe).map_err(err)?;
    fs::remove_file(&probe).map_err(err)?;
    Ok(())
}

/// Binds and serves until `shutdown` is set.
pub fn serve<A: ToSocketAddrs + std::fmt::Display>(
    addr: A,
    out_dir: &Path,
    cfg: ServeConfig,
    shutdown: Arc<AtomicBool>,
) -> Result<Vec<SessionOutcome>, IngestError> {
    let server = Server::bind(addr, out_dir, cfg)?;
    let flag = server.shutdown_flag();
    let watcher = thread::spawn(move || {
        while !shutdown.load(Ordering::SeqCst) && !flag.load(Ordering::SeqCst) {
            thread::sleep(Duration::from_millis(20));
        }
        flag.store(true, Ordering::SeqCst);
    });
    let result = server.run();
    let _ = watcher.join();
    result
}

/// Final answer from the server for a streamed session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionResult {
    Acked { count: u64, file: String },
    Rejected { code: u16, message: String },
}

/// Minimal blocking client for the recording protocol.
pub struct StreamClient {
    stream: TcpStream,
    sent: u64,
    max_frame_len: usize,
}

impl StreamClient {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self, IngestError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            stream,
            sent: 0,
            max_frame_len: crate::wire::DEFAULT_MAX_FRAME_LEN,
        })
    }

    pub fn send(&mut self, msg: &WireMessage) -> Result<(), IngestError> {
        self.stream.write_all(&encode_message(msg))?;
        if matches!(msg, WireMessage::Frame(_)) {
            self.sent += 1;
        }
        Ok(())
    }

    pub fn frames_sent(&self) -> u64 {
        self.sent
    }

    pub fn send_raw(&mut self, bytes: &[u8]) -> Result<(), IngestError> {
        self.stream.write_all(bytes)?;
        Ok(())
    }

    /// Blocks until the server replies.
    pub fn read_reply(&mut self) -> Result<SessionResult, IngestError> {
        let mut decoder = FrameDecoder::new(self.max_frame_len);
        let mut buf = [0u8; 4096];
        loop {
            if let Some(msg) = decoder.next_message()? {
                return match msg {
                    WireMessage::Ack { count, file } => Ok(SessionResult::Acked { count, file }),
                    WireMessage::Error { code, message } => Ok(SessionResult::Rejected { code, message }),
                    other => Err(IngestError::UnexpectedReply(other.kind_name().into())),
                };
            }
            let n = self.stream.read(&mut buf)?;
            if n == 0 {
                return Err(IngestError::Transport(io::Error::new(
                    ErrorKind::UnexpectedEof,
                    "server closed the connection without replying",
                )));
            }
            decoder.push(&buf[..n]);
        }
    }

    /// Sends `END` with the number of frames sent and waits for the reply.
    pub fn finish(mut self) -> Result<SessionResult, IngestError> {
        let count = self.sent;
        self.send(&WireMessage::End { count })?;
        self.read_reply()
    }

    /// Drops the connection without `END`.
    pub fn abort(self) {
        let _ = self.stream.shutdown(std::net::Shutdown::Both);
    }
}

/// Streams a demonstration file to a recording server, pacing frames at
/// `frequency_hz × rate_multiplier` (`f64::INFINITY` sends unpaced).
pub fn replay_client<A: ToSocketAddrs>(
    demo_file: &Path,
    target: A,
    rate_multiplier: f64,
) -> Result<SessionResult, IngestError> {
    if rate_multiplier.is_nan() || rate_multiplier <= 0.0 {
        return Err(IngestError::InvalidConfig(format!(
            "rate multiplier must be positive, got {rate_multiplier}"
        )));
    }
    let demo = read_demo_file(demo_file)?;
    let mut client = StreamClient::connect(target)?;
    client.send(&WireMessage::Hello(Hello {
        mode: StreamMode::Pose,
        joint_count: demo.joint_count as u32,
        frequency_hz: demo.frequency_hz,
        id: demo.id.clone(),
        task_tag: demo.task_tag.clone(),
    }))?;
    let period = Duration::from_secs_f64(1.0 / (demo.frequency_hz * rate_multiplier));
    let start = Instant::now();
    for (i, frame) in demo.frames.iter().enumerate() {
        if rate_multiplier.is_finite() {
            let due = start + period * i as u32;
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                thread::sleep(wait);
            }
        }
        client.send(&WireMessage::Frame(WireFrame::Pose(frame.clone())))?;
    }
    client.finish()
}
