//! HTTP and web socket front end: one tick loop per connection, frames
//! streamed as a JSON header followed by the raw RGB payload.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;
use tokio::time::{interval, MissedTickBehavior};
use tower_http::services::ServeDir;

use neurosim::env::render::{FRAME_H, FRAME_W};
use neurosim::eval::human::{Manifest, Rating, MANIFEST_FILE};

use crate::engine::{ModelInfo, Worker};
use crate::keys::{held_keys_to_action, KEYMAP_VERSION};
use crate::protocol::{
    parse_client, ClientMessage, Envelope, Mode, PairClip, ServerMessage, WireError, FRAME_ENCODING,
};

pub const DEFAULT_TICK_HZ: f64 = 20.0;
pub const RATINGS_FILE: &str = "ratings.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeConfig {
    pub port: u16,
    pub model_dir: PathBuf,
    /// Served at `/` when set.
    pub static_dir: Option<PathBuf>,
    /// Human-eval pairs served at `/clips`; ratings are appended here.
    pub rate_dir: Option<PathBuf>,
    pub tick_hz: f64,
    pub default_map: String,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            port: 8080,
            model_dir: PathBuf::from("models"),
            static_dir: None,
            rate_dir: None,
            tick_hz: DEFAULT_TICK_HZ,
            default_map: "crossroads".into(),
        }
    }
}

impl ServeConfig {
    /// Applies `PORT`, `MODEL_DIR` and `STATIC_DIR` from the environment.
    pub fn with_env(mut self) -> Self {
        if let Some(p) = std::env::var("PORT").ok().and_then(|p| p.parse().ok()) {
            self.port = p;
        }
        if let Ok(d) = std::env::var("MODEL_DIR") {
            self.model_dir = d.into();
        }
        if let Ok(d) = std::env::var("STATIC_DIR") {
            self.static_dir = Some(d.into());
        }
        self
    }
}

/// Aggregate frame timing across all sessions.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LoopStats {
    pub frames: u64,
    pub total_ms: f64,
    pub model_ms: f64,
}

impl LoopStats {
    /// Share of frame time not spent in the model.
    pub fn overhead_fraction(&self) -> f64 {
        if self.total_ms <= 0.0 {
            0.0
        } else {
            (self.total_ms - self.model_ms) / self.total_ms
        }
    }
}

struct AppState {
    worker: Worker,
    info: ModelInfo,
    config: ServeConfig,
    next_session: AtomicU64,
    stats: Mutex<LoopStats>,
    ratings_lock: Mutex<()>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub models: ModelInfo,
    pub keymap_version: u32,
    pub tick_hz: f64,
    pub stats: LoopStats,
}

pub struct RunningServer {
    pub addr: SocketAddr,
    pub info: ModelInfo,
    pub handle: JoinHandle<std::io::Result<()>>,
}

impl RunningServer {
    pub fn ws_url(&self) -> String {
        format!("ws://{}/ws", self.addr)
    }
}

/// Binds `config.port` (0 picks a free port) and serves in the background.
pub async fn start(
    config: ServeConfig,
    worker: Worker,
    info: ModelInfo,
) -> std::io::Result<RunningServer> {
    let listener = TcpListener::bind(("127.0.0.1", config.port)).await?;
    let addr = listener.local_addr()?;
    let app = router(config, worker, info.clone());
    let handle = tokio::spawn(async move { axum::serve(listener, app).await });
    Ok(RunningServer { addr, info, handle })
}

/// Serves until the process exits, on all interfaces.
pub async fn serve(config: ServeConfig, worker: Worker, info: ModelInfo) -> std::io::Result<()> {
    let listener = TcpListener::bind(("0.0.0.0", config.port)).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(config, worker, info)).await
}

fn router(config: ServeConfig, worker: Worker, info: ModelInfo) -> Router {
    let static_dir = config.static_dir.clone();
    let rate_dir = config.rate_dir.clone();
    let state = Arc::new(AppState {
        worker,
        info,
        config,
        next_session: AtomicU64::new(1),
        stats: Mutex::new(LoopStats::default()),
        ratings_lock: Mutex::new(()),
    });
    let mut app = Router::new()
        .route("/health", get(health))
        .route("/ws", get(ws_upgrade))
        .with_state(state);
    if let Some(dir) = rate_dir {
        app = app.nest_service("/clips", ServeDir::new(dir));
    }
    if let Some(dir) = static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    app
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        models: state.info.clone(),
        keymap_version: KEYMAP_VERSION,
        tick_hz: state.config.tick_hz,
        stats: *state.stats.lock().unwrap(),
    })
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(state): State<Arc<AppState>>) -> Response {
    ws.on_upgrade(move |socket| async move {
        let id = state.next_session.fetch_add(1, Ordering::Relaxed);
        Session::new(id, state.clone(), socket).run().await;
        state.worker.close(id);
    })
    .into_response()
}

#[derive(Debug, Clone)]
enum KeyEvent {
    Down(String),
    Up(String),
}

/// Per-connection state. The tick loop runs only after `reset`.
struct Session {
    id: u64,
    app: Arc<AppState>,
    socket: WebSocket,
    seq: u64,
    mode: Mode,
    held: BTreeSet<String>,
    scheduled: BTreeMap<u64, Vec<KeyEvent>>,
    tick: u64,
    frame: u64,
    max_frames: Option<u64>,
    active: bool,
    recent: VecDeque<Instant>,
    pairs: Vec<neurosim::eval::human::PairEntry>,
    rated: BTreeSet<String>,
}

enum Flow {
    Continue,
    Close,
}

impl Session {
    fn new(id: u64, app: Arc<AppState>, socket: WebSocket) -> Self {
        Session {
            id,
            app,
            socket,
            seq: 0,
            mode: Mode::Play,
            held: BTreeSet::new(),
            scheduled: BTreeMap::new(),
            tick: 0,
            frame: 0,
            max_frames: None,
            active: false,
            recent: VecDeque::new(),
            pairs: Vec::new(),
            rated: BTreeSet::new(),
        }
    }

    async fn send(&mut self, body: ServerMessage) -> Result<(), axum::Error> {
        self.seq += 1;
        let env = Envelope {
            session: self.id,
            seq: self.seq,
            body,
        };
        let text = serde_json::to_string(&env).expect("server messages serialize");
        self.socket.send(Message::Text(text.into())).await
    }

    async fn send_error(&mut self, e: WireError) -> Result<(), axum::Error> {
        self.send(e.to_message()).await
    }

    async fn run(mut self) {
        let period = Duration::from_secs_f64(1.0 / self.app.config.tick_hz);
        let mut ticker = interval(period);
        ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
        loop {
            let flow = tokio::select! {
                msg = self.socket.recv() => match msg {
                    Some(Ok(Message::Text(t))) => self.on_text(t.as_str()).await,
                    Some(Ok(Message::Binary(_))) => self.send_error(WireError::new("bad_type", "binary client messages are not accepted")).await.map(|_| Flow::Continue),
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => Ok(Flow::Close),
                    Some(Ok(_)) => Ok(Flow::Continue),
                },
                _ = ticker.tick(), if self.active => self.on_tick().await,
            };
            match flow {
                Ok(Flow::Continue) => {}
                Ok(Flow::Close) | Err(_) => break,
            }
        }
    }

    async fn on_text(&mut self, text: &str) -> Result<Flow, axum::Error> {
        let msg = match parse_client(text) {
            Ok(m) => m,
            Err(e) => {
                self.send_error(e).await?;
                return Ok(Flow::Continue);
            }
        };
        match msg {
            ClientMessage::Hello { mode } => {
                self.mode = mode;
                self.send(ServerMessage::Welcome {
                    mode,
                    tick_hz: self.app.config.tick_hz,
                    keymap_version: KEYMAP_VERSION,
                })
                .await?;
                if mode == Mode::Rate {
                    match self.load_pairs() {
                        Ok(pairs) => {
                            self.pairs = pairs;
                            self.next_pair().await?;
                        }
                        Err(e) => self.send_error(e).await?,
                    }
                }
            }
            ClientMessage::Keydown { code, tick } => self.key(KeyEvent::Down(code), tick),
            ClientMessage::Keyup { code, tick } => self.key(KeyEvent::Up(code), tick),
            ClientMessage::Reset {
                seed,
                map,
                max_frames,
            } => {
                let map = map.unwrap_or_else(|| self.app.config.default_map.clone());
                if let Err(e) = self.app.worker.reset(self.id, map, seed).await {
                    self.send_error(WireError::new("reset_failed", e.to_string()))
                        .await?;
                    return Ok(Flow::Continue);
                }
                self.tick = 0;
                self.frame = 0;
                self.held.clear();
                self.scheduled.clear();
                self.max_frames = max_frames;
                self.recent.clear();
                self.active = true;
            }
            ClientMessage::Rate { pair_id, choice } => self.on_rate(pair_id, choice).await?,
        }
        Ok(Flow::Continue)
    }

    fn key(&mut self, event: KeyEvent, tick: Option<u64>) {
        match tick {
            Some(t) if t >= self.tick || !self.active => {
                self.scheduled.entry(t).or_default().push(event)
            }
            _ => self.apply(event),
        }
    }

    fn apply(&mut self, event: KeyEvent) {
        match event {
            KeyEvent::Down(k) => {
                self.held.insert(k);
            }
            KeyEvent::Up(k) => {
                self.held.remove(&k);
            }
        }
    }

    async fn on_tick(&mut self) -> Result<Flow, axum::Error> {
        let started = Instant::now();
        let due: Vec<u64> = self
            .scheduled
            .range(..=self.tick)
            .map(|(&t, _)| t)
            .collect();
        for t in due {
            for e in self.scheduled.remove(&t).unwrap_or_default() {
                self.apply(e);
            }
        }
        let action = held_keys_to_action(&self.held);
        let out = match self.app.worker.step(self.id, action, self.tick).await {
            Ok(o) => o,
            Err(e) => {
                self.send_error(WireError::new("inference", e.to_string()))
                    .await?;
                return Ok(Flow::Close);
            }
        };
        let now = Instant::now();
        self.recent.push_back(now);
        if self.recent.len() > 21 {
            self.recent.pop_front();
        }
        let fps = match (self.recent.front(), self.recent.len()) {
            (Some(&first), n) if n > 1 => {
                (n - 1) as f64 / now.duration_since(first).as_secs_f64().max(1e-9)
            }
            _ => 0.0,
        };
        let payload = out.frame.pixels.clone();
        let latency_ms = started.elapsed().as_secs_f64() * 1e3;
        {
            let mut s = self.app.stats.lock().unwrap();
            s.frames += 1;
            s.total_ms += latency_ms;
            s.model_ms += out.model_ms;
        }
        self.send(ServerMessage::Frame {
            frame: self.frame,
            tick: self.tick,
            w: FRAME_W,
            h: FRAME_H,
            encoding: FRAME_ENCODING.into(),
            fps,
            latency_ms,
            model_ms: out.model_ms,
        })
        .await?;
        self.socket.send(Message::Binary(payload.into())).await?;
        self.frame += 1;
        self.tick += 1;
        if self.max_frames.is_some_and(|m| self.frame >= m) {
            self.active = false;
        }
        Ok(Flow::Continue)
    }

    fn load_pairs(&self) -> Result<Vec<neurosim::eval::human::PairEntry>, WireError> {
        let dir = self
            .app
            .config
            .rate_dir
            .as_ref()
            .ok_or_else(|| WireError::new("no_pairs", "server has no rating set"))?;
        let bytes = std::fs::read(dir.join(MANIFEST_FILE))
            .map_err(|e| WireError::new("no_pairs", e.to_string()))?;
        let manifest: Manifest = serde_json::from_slice(&bytes)
            .map_err(|e| WireError::new("no_pairs", e.to_string()))?;
        Ok(manifest.pairs)
    }

    async fn next_pair(&mut self) -> Result<(), axum::Error> {
        let next = self
            .pairs
            .iter()
            .find(|p| !self.rated.contains(&p.pair_id))
            .cloned();
        match next {
            Some(p) => {
                let clip = |rel: &str| PairClip {
                    url: format!("/clips/{rel}/frames.rgb"),
                    frames: p.clip_len,
                };
                self.send(ServerMessage::Pair {
                    pair_id: p.pair_id.clone(),
                    clip_len: p.clip_len,
                    left: clip(&p.left),
                    right: clip(&p.right),
                })
                .await
            }
            None => {
                self.send(ServerMessage::Done {
                    rated: self.rated.len(),
                })
                .await
            }
        }
    }

    async fn on_rate(
        &mut self,
        pair_id: String,
        choice: neurosim::eval::human::Side,
    ) -> Result<(), axum::Error> {
        if self.mode != Mode::Rate || !self.pairs.iter().any(|p| p.pair_id == pair_id) {
            return self
                .send_error(WireError::new(
                    "bad_pair",
                    format!("unknown pair {pair_id}"),
                ))
                .await;
        }
        if !self.rated.insert(pair_id.clone()) {
            return self
                .send_error(WireError::new("already_rated", pair_id))
                .await;
        }
        if let Err(e) = self.log_rating(&Rating { pair_id, choice }) {
            return self
                .send_error(WireError::new("log_failed", e.to_string()))
                .await;
        }
        self.next_pair().await
    }

    fn log_rating(&self, rating: &Rating) -> std::io::Result<()> {
        use std::io::Write;
        let Some(dir) = &self.app.config.rate_dir else {
            return Ok(());
        };
        let _guard = self.app.ratings_lock.lock().unwrap();
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join(RATINGS_FILE))?;
        writeln!(f, "{}", serde_json::to_string(rating)?)
    }
}
