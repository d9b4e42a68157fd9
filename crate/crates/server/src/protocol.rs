//! Wire messages: JSON text headers, plus a binary RGB24 payload after each
//! `frame` header.

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const FRAME_ENCODING: &str = "raw-rgb24";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Play,
    Rate,
}

/// Client to server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClientMessage {
    Hello {
        #[serde(default)]
        mode: Mode,
    },
    /// `tick` schedules the event for the start of that tick; without it the
    /// event applies at the next tick.
    Keydown {
        code: String,
        #[serde(default)]
        tick: Option<u64>,
    },
    Keyup {
        code: String,
        #[serde(default)]
        tick: Option<u64>,
    },
    Reset {
        seed: u64,
        #[serde(default)]
        map: Option<String>,
        /// Stop after this many frames.
        #[serde(default)]
        max_frames: Option<u64>,
    },
    Rate {
        pair_id: String,
        choice: neurosim::eval::human::Side,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairClip {
    pub url: String,
    pub frames: usize,
}

/// Server to client. `session` and `seq` are added by [`Envelope`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    Welcome {
        mode: Mode,
        tick_hz: f64,
        keymap_version: u32,
    },
    Frame {
        /// Frame counter, gapless from 0 after each reset.
        frame: u64,
        tick: u64,
        w: usize,
        h: usize,
        encoding: String,
        /// Rolling frames per second over recent frames.
        fps: f64,
        latency_ms: f64,
        model_ms: f64,
    },
    Pair {
        pair_id: String,
        clip_len: usize,
        left: PairClip,
        right: PairClip,
    },
    Done {
        rated: usize,
    },
    Error {
        code: String,
        msg: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub session: u64,
    pub seq: u64,
    #[serde(flatten)]
    pub body: ServerMessage,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireError {
    pub code: &'static str,
    pub msg: String,
}

impl WireError {
    pub fn new(code: &'static str, msg: impl Into<String>) -> Self {
        WireError {
            code,
            msg: msg.into(),
        }
    }

    pub fn to_message(&self) -> ServerMessage {
        ServerMessage::Error {
            code: self.code.into(),
            msg: self.msg.clone(),
        }
    }
}

const CLIENT_TYPES: [&str; 5] = ["hello", "keydown", "keyup", "reset", "rate"];

/// Parses a client text frame, classifying failures as `bad_json`,
/// `bad_type` or `bad_fields`.
pub fn parse_client(text: &str) -> Result<ClientMessage, WireError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| WireError::new("bad_json", e.to_string()))?;
    let ty = value
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| WireError::new("bad_type", "missing type"))?;
    if !CLIENT_TYPES.contains(&ty) {
        return Err(WireError::new(
            "bad_type",
            format!("unknown message type {ty:?}"),
        ));
    }
    serde_json::from_value(value).map_err(|e| WireError::new("bad_fields", e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_client_messages() {
        assert_eq!(
            parse_client(r#"{"type":"hello"}"#).unwrap(),
            ClientMessage::Hello { mode: Mode::Play }
        );
        assert_eq!(
            parse_client(r#"{"type":"keydown","code":"Space","tick":3}"#).unwrap(),
            ClientMessage::Keydown {
                code: "Space".into(),
                tick: Some(3)
            }
        );
        assert_eq!(
            parse_client(r#"{"type":"reset","seed":9}"#).unwrap(),
            ClientMessage::Reset {
                seed: 9,
                map: None,
                max_frames: None
            }
        );
    }

    #[test]
    fn classifies_errors() {
        assert_eq!(parse_client("{").unwrap_err().code, "bad_json");
        assert_eq!(
            parse_client(r#"{"type":"jump"}"#).unwrap_err().code,
            "bad_type"
        );
        assert_eq!(parse_client(r#"{"seed":1}"#).unwrap_err().code, "bad_type");
        assert_eq!(
            parse_client(r#"{"type":"reset"}"#).unwrap_err().code,
            "bad_fields"
        );
    }

    #[test]
    fn envelope_flattens_body() {
        let e = Envelope {
            session: 1,
            seq: 2,
            body: ServerMessage::Done { rated: 3 },
        };
        let v: Value = serde_json::to_value(&e).unwrap();
        assert_eq!(v["type"], "done");
        assert_eq!(v["seq"], 2);
        assert_eq!(serde_json::from_value::<Envelope>(v).unwrap(), e);
    }
}
