//! Headless web socket client for scripted play and rating sessions.

use futures_util::{SinkExt, StreamExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

use neurosim::eval::human::{Rating, Side};

use crate::keys::KEYMAP;
use crate::protocol::{Envelope, Mode, ServerMessage};
use crate::server::Health;

pub type ClientResult<T> = Result<T, Box<dyn std::error::Error + Send + Sync>>;

/// A key transition at a given server tick.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptEvent {
    pub tick: u64,
    pub code: String,
    pub down: bool,
}

/// `n_events` keydown/keyup pairs spread over `n_ticks`.
pub fn random_key_script(n_events: usize, n_ticks: u64, seed: u64) -> Vec<ScriptEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * n_events);
    for _ in 0..n_events {
        let code = KEYMAP[rng.random_range(0..KEYMAP.len())].0.to_string();
        let start = rng.random_range(0..n_ticks);
        let len = rng.random_range(1..=20);
        out.push(ScriptEvent {
            tick: start,
            code: code.clone(),
            down: true,
        });
        out.push(ScriptEvent {
            tick: (start + len).min(n_ticks),
            code,
            down: false,
        });
    }
    out.sort_by_key(|e| e.tick);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedFrame {
    pub seq: u64,
    pub frame: u64,
    pub tick: u64,
    pub pixels: Vec<u8>,
    pub fps: f64,
    pub latency_ms: f64,
    pub model_ms: f64,
}

pub struct Client {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
}

impl Client {
    pub async fn connect(url: &str) -> ClientResult<Self> {
        let (ws, _) = connect_async(url).await?;
        Ok(Client { ws })
    }

    pub async fn send_json(&mut self, value: serde_json::Value) -> ClientResult<()> {
        self.ws
            .send(Message::Text(value.to_string().into()))
            .await?;
        Ok(())
    }

    pub async fn send_text(&mut self, text: &str) -> ClientResult<()> {
        self.ws.send(Message::Text(text.to_string().into())).await?;
        Ok(())
    }

    /// Next text message, skipping pings.
    pub async fn recv(&mut self) -> ClientResult<Envelope> {
        loop {
            match self.ws.next().await.ok_or("connection closed")?? {
                Message::Text(t) => return Ok(serde_json::from_str(t.as_str())?),
                Message::Binary(_) => return Err("unexpected binary message".into()),
                Message::Close(_) => return Err("connection closed".into()),
                _ => {}
            }
        }
    }

    async fn recv_binary(&mut self) -> ClientResult<Vec<u8>> {
        loop {
            match self.ws.next().await.ok_or("connection closed")?? {
                Message::Binary(b) => return Ok(b.to_vec()),
                Message::Close(_) => return Err("connection closed".into()),
                Message::Text(t) => return Err(format!("expected payload, got {t}").into()),
                _ => {}
            }
        }
    }

    pub async fn hello(&mut self, mode: Mode) -> ClientResult<Envelope> {
        self.send_json(json!({"type": "hello", "mode": mode}))
            .await?;
        self.recv().await
    }

    /// Plays `n_frames` frames from `seed` with the scripted key timeline.
    ///
    /// Returns the frames and every non-frame message seen on the way.
    pub async fn play(
        &mut self,
        seed: u64,
        map: Option<&str>,
        script: &[ScriptEvent],
        n_frames: u64,
    ) -> ClientResult<(Vec<ReceivedFrame>, Vec<Envelope>)> {
        self.send_json(json!({"type": "reset", "seed": seed, "map": map, "max_frames": n_frames}))
            .await?;
        for e in script {
            let ty = if e.down { "keydown" } else { "keyup" };
            self.send_json(json!({"type": ty, "code": e.code, "tick": e.tick}))
                .await?;
        }
        let mut frames = Vec::with_capacity(n_frames as usize);
        let mut other = Vec::new();
        while (frames.len() as u64) < n_frames {
            let env = self.recv().await?;
            match env.body {
                ServerMessage::Frame {
                    frame,
                    tick,
                    fps,
                    latency_ms,
                    model_ms,
                    ..
                } => {
                    let pixels = self.recv_binary().await?;
                    frames.push(ReceivedFrame {
                        seq: env.seq,
                        frame,
                        tick,
                        pixels,
                        fps,
                        latency_ms,
                        model_ms,
                    });
                }
                ServerMessage::Error { ref code, .. }
                    if code == "inference" || code == "reset_failed" =>
                {
                    return Err(format!("server error: {:?}", env.body).into());
                }
                _ => other.push(env),
            }
        }
        Ok((frames, other))
    }

    /// Rates every pair the server offers with `choose`.
    pub async fn rate_all(
        &mut self,
        mut choose: impl FnMut(&str) -> Side,
    ) -> ClientResult<Vec<Rating>> {
        let mut out = Vec::new();
        let mut env = self.hello(Mode::Rate).await?;
        if matches!(env.body, ServerMessage::Welcome { .. }) {
            env = self.recv().await?;
        }
        loop {
            match env.body {
                ServerMessage::Pair { pair_id, .. } => {
                    let choice = choose(&pair_id);
                    self.send_json(json!({"type": "rate", "pair_id": pair_id, "choice": choice}))
                        .await?;
                    out.push(Rating { pair_id, choice });
                }
                ServerMessage::Done { .. } => return Ok(out),
                other => return Err(format!("unexpected message {other:?}").into()),
            }
            env = self.recv().await?;
        }
    }

    pub async fn close(mut self) -> ClientResult<()> {
        self.ws.close(None).await?;
        Ok(())
    }
}

/// `GET /health` on a running server.
pub async fn fetch_health(addr: std::net::SocketAddr) -> ClientResult<Health> {
    let mut s = TcpStream::connect(addr).await?;
    s.write_all(b"GET /health HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")
        .await?;
    let mut body = String::new();
    s.read_to_string(&mut body).await?;
    let start = body.find("\r\n\r\n").ok_or("health response has no body")? + 4;
    Ok(serde_json::from_str(&body[start..])?)
}
