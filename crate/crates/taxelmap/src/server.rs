//! Streaming server: a read-only texture store shared by one handler
//! thread per connection.

use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};
use taxelmap_core::protocol::{error_code, Contact, Message, TextureInfo, VibFrame, PROTOCOL_VERSION};
use taxelmap_core::render::{contact_intensity, session_tick, RenderError, SessionState, SynthConfig};
use taxelmap_core::vibmap::VibrationMap;
use thiserror::Error;

use crate::mapfile::{read_map, MapFileError};
use crate::wire::{BinaryTransport, Transport, TransportError, WsTransport};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("{path}: {source}")]
    MapFile { path: PathBuf, source: MapFileError },
    #[error("texture {0:?} is not normalized")]
    NotNormalized(String),
    #[error("texture {0:?} exceeds 65535 px on a side")]
    TooLarge(String),
    #[error("more than 65536 textures")]
    TooManyTextures,
    #[error("invalid server config: {0}")]
    Config(#[from] RenderError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

/// How a session's output clock advances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// Driven by contact timestamps; deterministic, used for replay.
    Logical,
    /// Driven by the server's monotonic clock from the first `SELECT`.
    Wall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub texture_dir: PathBuf,
    pub bind: String,
    pub tcp_port: u16,
    /// `None` disables the WebSocket listener.
    pub ws_port: Option<u16>,
    pub f_out_hz: f64,
    pub frame_len: usize,
    pub d_ref_mm: f64,
    pub carrier_hz: Option<f64>,
    pub tcp_clock: ClockMode,
    pub ws_clock: ClockMode,
}

impl Default for ServerConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        Self {
            texture_dir: PathBuf::from("textures"),
            bind: "127.0.0.1".into(),
            tcp_port: 7070,
            ws_port: Some(7071),
            f_out_hz: synth.f_out_hz,
            frame_len: synth.frame_len,
            d_ref_mm: synth.d_ref_mm,
            carrier_hz: synth.carrier_hz,
            tcp_clock: ClockMode::Logical,
            ws_clock: ClockMode::Wall,
        }
    }
}

impl ServerConfig {
    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            f_out_hz: self.f_out_hz,
            frame_len: self.frame_len,
            d_ref_mm: self.d_ref_mm,
            carrier_hz: self.carrier_hz,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TextureEntry {
    pub info: TextureInfo,
    pub map: VibrationMap,
    pub preview: Option<PathBuf>,
}

/// Textures by id. Ids are assigned in insertion order from 0.
#[derive(Debug, Clone, Default)]
pub struct TextureStore {
    entries: Vec<TextureEntry>,
}

impl TextureStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, map: VibrationMap, preview: Option<PathBuf>) -> Result<u16, ServerError> {
        if !map.is_normalized() {
            return Err(ServerError::NotNormalized(name.into()));
        }
        let id = u16::try_from(self.entries.len()).map_err(|_| ServerError::TooManyTextures)?;
        let (Ok(width_px), Ok(height_px)) = (u16::try_from(map.width()), u16::try_from(map.height())) else {
            return Err(ServerError::TooLarge(name.into()));
        };
        self.entries.push(TextureEntry {
            info: TextureInfo {
                id,
                name: name.into(),
                width_px,
                height_px,
            },
            map,
            preview,
        });
        Ok(id)
    }

    /// Loads every `*.vibmap` in `dir`, sorted by file name. A `.png` with
    /// the same stem is recorded as the preview.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, ServerError> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir.as_ref())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "vibmap"))
            .collect();
        paths.sort();
        let mut store = Self::new();
        for path in paths {
            let map = read_map(&path).map_err(|source| ServerError::MapFile {
                path: path.clone(),
                source,
            })?;
            let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let png = path.with_extension("png");
            let id = store.add(&name, map, png.is_file().then_some(png))?;
            info!("texture {id}: {name} ({})", path.display());
        }
        Ok(store)
    }

    pub fn get(&self, id: u16) -> Option<&TextureEntry> {
        self.entries.get(id as usize)
    }

    pub fn list(&self) -> Vec<TextureInfo> {
        self.entries.iter().map(|e| e.info.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Counters for a finished session.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SessionSummary {
    pub frames_sent: u32,
    pub samples_sent: u64,
    pub errors_sent: u32,
}

struct Handler<'a, T> {
    transport: &'a mut T,
    store: &'a TextureStore,
    state: SessionState,
    clock: ClockMode,
    origin: Option<Instant>,
    summary: SessionSummary,
}

impl<T: Transport> Handler<'_, T> {
    fn send_frames(&mut self, frames: Vec<VibFrame>) -> Result<(), TransportError> {
        for f in frames {
            self.summary.frames_sent += 1;
            self.summary.samples_sent += f.n() as u64;
            self.transport.send(&Message::VibFrame(f))?;
        }
        Ok(())
    }

    fn send_error(&mut self, code: u8, text: impl Into<String>) -> Result<(), TransportError> {
        let text = text.into();
        debug!("error {code}: {text}");
        self.summary.errors_sent += 1;
        self.transport.send(&Message::error(code, text))
    }

    fn now(&self) -> Option<f64> {
        self.origin.map(|o| o.elapsed().as_secs_f64())
    }

    fn wall_tick(&mut self) -> Result<(), SessionError> {
        if self.clock == ClockMode::Wall && self.state.selected().is_some() {
            if let Some(now) = self.now() {
                let frames = session_tick(&mut self.state, now)?;
                self.send_frames(frames)?;
            }
        }
        Ok(())
    }

    fn contact(&mut self, c: Contact) -> Result<(), SessionError> {
        let Some(id) = self.state.selected() else {
            return Ok(self.send_error(error_code::NO_TEXTURE_SELECTED, "select a texture first")?);
        };
        let map = &self.store.get(id).expect("selected ids exist").map;
        let intensity = match contact_intensity(map, &c, self.state.config().d_ref_mm) {
            Ok(i) => i,
            Err(e) => return Ok(self.send_error(error_code::INVALID_CONTACT, e.to_string())?),
        };
        let c = match (self.clock, self.now()) {
            (ClockMode::Wall, Some(now)) => Contact { t: now, ..c },
            _ => c,
        };
        match self.state.apply_contact(c, intensity) {
            Ok(frames) => Ok(self.send_frames(frames)?),
            Err(e @ RenderError::ClockJump(_)) => Ok(self.send_error(error_code::INVALID_CONTACT, e.to_string())?),
            Err(e) => Err(e.into()),
        }
    }

    /// Returns `false` once the session should end.
    fn handle(&mut self, msg: Message, greeted: &mut bool) -> Result<bool, SessionError> {
        if !*greeted {
            match msg {
                Message::Hello { version } if version == PROTOCOL_VERSION => {
                    self.transport.send(&Message::Hello {
                        version: PROTOCOL_VERSION,
                    })?;
                    *greeted = true;
                }
                Message::Hello { version } => {
                    self.send_error(
                        error_code::VERSION_MISMATCH,
                        format!("server speaks version {PROTOCOL_VERSION}, client sent {version}"),
                    )?;
                    return Ok(false);
                }
                Message::Bye => return Ok(false),
                other => self.send_error(error_code::UNEXPECTED_MESSAGE, format!("expected HELLO, got tag {}", other.tag()))?,
            }
            return Ok(true);
        }
        match msg {
            Message::ListTextures => {
                let entries = self.store.list();
                self.transport.send(&Message::TextureList { entries })?;
            }
            Message::Select { id } => {
                if self.store.get(id).is_none() {
                    self.send_error(error_code::UNKNOWN_TEXTURE, format!("no texture with id {id}"))?;
                } else {
                    self.state.select(id);
                    if self.clock == ClockMode::Wall && self.origin.is_none() {
                        self.origin = Some(Instant::now());
                    }
                }
            }
            Message::Contact(c) => self.contact(c)?,
            Message::Bye => {
                self.wall_tick()?;
                if let Some(f) = self.state.flush()? {
                    self.send_frames(vec![f])?;
                }
                self.transport.send(&Message::Bye)?;
                return Ok(false);
            }
            other => self.send_error(error_code::UNEXPECTED_MESSAGE, format!("unexpected tag {}", other.tag()))?,
        }
        Ok(true)
    }
}

/// Runs one session to completion over `transport`.
pub fn run_session<T: Transport>(
    transport: &mut T,
    store: &TextureStore,
    synth: &SynthConfig,
    clock: ClockMode,
) -> Result<SessionSummary, SessionError> {
    let frame_period = Duration::from_secs_f64(synth.frame_len as f64 / synth.f_out_hz);
    transport.set_read_timeout(match clock {
        ClockMode::Logical => None,
        // Waking twice per frame keeps emission latency under one frame.
        ClockMode::Wall => Some((frame_period / 2).max(Duration::from_millis(1))),
    })
    .map_err(TransportError::from)?;
    let mut h = Handler {
        transport,
        store,
        state: SessionState::new(synth.clone())?,
        clock,
        origin: None,
        summary: SessionSummary::default(),
    };
    let mut greeted = false;
    loop {
        let keep_going = match h.transport.recv() {
            Ok(Some(msg)) => h.handle(msg, &mut greeted)?,
            Ok(None) => true,
            Err(TransportError::Closed) => false,
            Err(e) if e.is_recoverable() => {
                h.send_error(error_code::UNEXPECTED_MESSAGE, e.to_string())?;
                true
            }
            Err(e) => return Err(e.into()),
        };
        if !keep_going {
            return Ok(h.summary);
        }
        h.wall_tick()?;
    }
}

/// Bound listeners, ready to serve.
pub struct Server {
    tcp: TcpListener,
    ws: Option<TcpListener>,
    store: Arc<TextureStore>,
    cfg: ServerConfig,
}

impl Server {
    pub fn bind(cfg: ServerConfig, store: TextureStore) -> Result<Self, ServerError> {
        cfg.synth().validate()?;
        let tcp = TcpListener::bind((cfg.bind.as_str(), cfg.tcp_port))?;
        let ws = cfg
            .ws_port
            .map(|p| TcpListener::bind((cfg.bind.as_str(), p)))
            .transpose()?;
        Ok(Self {
            tcp,
            ws,
            store: Arc::new(store),
            cfg,
        })
    }

    pub fn tcp_addr(&self) -> std::io::Result<SocketAddr> {
        self.tcp.local_addr()
    }

    pub fn ws_addr(&self) -> Option<SocketAddr> {
        self.ws.as_ref().and_then(|l| l.local_addr().ok())
    }

    /// Serves on background threads until the handle is shut down.
    pub fn spawn(self) -> std::io::Result<ServerHandle> {
        let stop = Arc::new(AtomicBool::new(false));
        let tcp_addr = self.tcp.local_addr()?;
        let ws_addr = self.ws_addr();
        let synth = self.cfg.synth();
        let mut threads = vec![spawn_accept(
            self.tcp,
            stop.clone(),
            self.store.clone(),
            synth.clone(),
            self.cfg.tcp_clock,
            Kind::Binary,
        )];
        if let Some(ws) = self.ws {
            threads.push(spawn_accept(ws, stop.clone(), self.store, synth, self.cfg.ws_clock, Kind::WebSocket));
        }
        Ok(ServerHandle {
            tcp_addr,
            ws_addr,
            stop,
            threads,
        })
    }

    /// Serves forever on the calling thread.
    pub fn run(self) -> std::io::Result<()> {
        let handle = self.spawn()?;
        for t in handle.threads {
            let _ = t.join();
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Binary,
    WebSocket,
}

fn spawn_accept(
    listener: TcpListener,
    stop: Arc<AtomicBool>,
    store: Arc<TextureStore>,
    synth: SynthConfig,
    clock: ClockMode,
    kind: Kind,
) -> JoinHandle<()> {
    thread::spawn(move || {
        for stream in listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    warn!("accept failed: {e}");
                    continue;
                }
            };
            let (store, synth) = (store.clone(), synth.clone());
            thread::spawn(move || serve_connection(stream, &store, &synth, clock, kind));
        }
    })
}

fn serve_connection(stream: TcpStream, store: &TextureStore, synth: &SynthConfig, clock: ClockMode, kind: Kind) {
    let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_else(|_| "?".into());
    info!("{kind:?} session from {peer}");
    let result = match kind {
        Kind::Binary => BinaryTransport::new(stream)
            .map_err(|e| SessionError::Transport(e.into()))
            .and_then(|mut t| run_session(&mut t, store, synth, clock)),
        Kind::WebSocket => match tungstenite::accept(stream) {
            Ok(ws) => {
                let mut t = WsTransport::new(ws);
                let r = run_session(&mut t, store, synth, clock);
                t.close();
                r
            }
            Err(e) => {
                warn!("{peer}: websocket handshake failed: {e}");
                return;
            }
        },
    };
    match result {
        Ok(s) => info!("{peer}: session ended, {} frames, {} samples", s.frames_sent, s.samples_sent),
        Err(e) => warn!("{peer}: session aborted: {e}"),
    }
}

/// Running server. Dropping the handle leaves it running; call
/// [`ServerHandle::shutdown`] to stop accepting.
pub struct ServerHandle {
    pub tcp_addr: SocketAddr,
    pub ws_addr: Option<SocketAddr>,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    /// Stops accepting new connections. Sessions in progress run to their end.
    pub fn shutdown(self) {
        self.stop.store(true, Ordering::SeqCst);
        for addr in std::iter::once(self.tcp_addr).chain(self.ws_addr) {
            let _ = TcpStream::connect(addr);
        }
        for t in self.threads {
            let _ = t.join();
        }
    }
}
