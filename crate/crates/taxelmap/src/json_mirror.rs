//! JSON mirror of the wire protocol for browser clients: one object per
//! message, `{"type": "VIB_FRAME", ...fields}`, with frame bytes `q` in
//! base64.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use taxelmap_core::protocol::{Contact, Message, TextureInfo, VibFrame};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonMirrorError {
    #[error("invalid json message: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid base64 in q: {0}")]
    Base64(#[from] base64::DecodeError),
    #[error("n = {n} but q holds {len} bytes")]
    CountMismatch { n: u16, len: usize },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
enum Json {
    Hello {
        version: u8,
    },
    ListTextures {},
    TextureList {
        entries: Vec<TextureInfo>,
    },
    Select {
        id: u16,
    },
    Contact {
        t: f64,
        u: f32,
        v: f32,
        depth_mm: f32,
    },
    VibFrame {
        seq: u32,
        t0: f64,
        dt: f32,
        n: u16,
        qmin: f32,
        qmax: f32,
        q: String,
    },
    Error {
        code: u8,
        text: String,
    },
    Bye {},
}

pub fn to_json(msg: &Message) -> String {
    let j = match msg.clone() {
        Message::Hello { version } => Json::Hello { version },
        Message::ListTextures => Json::ListTextures {},
        Message::TextureList { entries } => Json::TextureList { entries },
        Message::Select { id } => Json::Select { id },
        Message::Contact(Contact { t, u, v, depth_mm }) => Json::Contact { t, u, v, depth_mm },
        Message::VibFrame(f) => Json::VibFrame {
            seq: f.seq,
            t0: f.t0,
            dt: f.dt,
            n: f.q.len() as u16,
            qmin: f.qmin,
            qmax: f.qmax,
            q: STANDARD.encode(&f.q),
        },
        Message::Error { code, text } => Json::Error { code, text },
        Message::Bye => Json::Bye {},
    };
    serde_json::to_string(&j).expect("message serializes")
}

pub fn from_json(text: &str) -> Result<Message, JsonMirrorError> {
    Ok(match serde_json::from_str(text)? {
        Json::Hello { version } => Message::Hello { version },
        Json::ListTextures {} => Message::ListTextures,
        Json::TextureList { entries } => Message::TextureList { entries },
        Json::Select { id } => Message::Select { id },
        Json::Contact { t, u, v, depth_mm } => Message::Contact(Contact { t, u, v, depth_mm }),
        Json::VibFrame {
            seq,
            t0,
            dt,
            n,
            qmin,
            qmax,
            q,
        } => {
            let q = STANDARD.decode(q)?;
            if q.len() != n as usize {
                return Err(JsonMirrorError::CountMismatch { n, len: q.len() });
            }
            Message::VibFrame(VibFrame {
                seq,
                t0,
                dt,
                qmin,
                qmax,
                q,
            })
        }
        Json::Error { code, text } => Message::Error { code, text },
        Json::Bye {} => Message::Bye,
    })
}
