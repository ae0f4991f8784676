//! Vibrotactile frame codec and the binary client-server wire format.
//!
//! # Framing
//!
//! Every message is `len: u32 BE | tag: u8 | payload[len]`, where `len`
//! counts payload bytes after the tag. Numbers are big-endian; text is a
//! `u16` byte length followed by UTF-8.
//!
//! | tag | message        | payload                                             |
//! |-----|----------------|-----------------------------------------------------|
//! | 1   | `HELLO`        | `version: u8`                                       |
//! | 2   | `LIST_TEXTURES`| (empty)                                             |
//! | 3   | `TEXTURE_LIST` | `count: u16`, then `id: u16, name, w: u16, h: u16`  |
//! | 4   | `SELECT`       | `id: u16`                                           |
//! | 5   | `CONTACT`      | `t: f64, u: f32, v: f32, depth_mm: f32`             |
//! | 6   | `VIB_FRAME`    | `codec: u8 (0), seq: u32, t0: f64, dt: f32, n: u16, qmin: f32, qmax: f32, q: [u8; n]` |
//! | 7   | `ERROR`        | `code: u8, text`                                    |
//! | 8   | `BYE`          | (empty)                                             |
//!
//! # Codec
//!
//! Frames use per-frame min-max uniform 8-bit quantization (codec id 0):
//! `q = round_half_up(255 · (s − qmin) / (qmax − qmin))`, decoded as
//! `qmin + q · (qmax − qmin) / 255`. Reconstruction error is at most half a
//! quantization step.

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

pub const PROTOCOL_VERSION: u8 = 1;

pub const TAG_HELLO: u8 = 1;
pub const TAG_LIST_TEXTURES: u8 = 2;
pub const TAG_TEXTURE_LIST: u8 = 3;
pub const TAG_SELECT: u8 = 4;
pub const TAG_CONTACT: u8 = 5;
pub const TAG_VIB_FRAME: u8 = 6;
pub const TAG_ERROR: u8 = 7;
pub const TAG_BYE: u8 = 8;

/// Codec id for per-frame min-max uniform 8-bit quantization.
pub const CODEC_UNIFORM8: u8 = 0;

/// Bytes before the payload: length prefix plus tag.
pub const HEADER_LEN: usize = 5;

/// Payloads above this size are refused before allocation.
pub const MAX_PAYLOAD_LEN: u32 = 1 << 20;

/// Error codes carried in `ERROR` messages.
pub mod error_code {
    pub const VERSION_MISMATCH: u8 = 1;
    pub const UNKNOWN_TEXTURE: u8 = 2;
    pub const NO_TEXTURE_SELECTED: u8 = 3;
    pub const INVALID_CONTACT: u8 = 4;
    pub const UNEXPECTED_MESSAGE: u8 = 5;
    pub const INTERNAL: u8 = 255;
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("frame has no samples")]
    EmptyFrame,
    #[error("frame has {0} samples, at most 65535 allowed")]
    TooManySamples(usize),
    #[error("sample {0} is not finite")]
    NonFiniteSample(usize),
    #[error("malformed frame: {0}")]
    MalformedFrame(&'static str),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WireError {
    #[error("truncated frame: need {needed} bytes, have {available}")]
    TruncatedFrame { needed: usize, available: usize },
    /// The whole frame (`frame_len` bytes) can be skipped to resynchronize.
    #[error("unknown message tag {tag}")]
    UnknownTag { tag: u8, frame_len: usize },
    #[error("payload length {declared} does not match message contents ({consumed} bytes)")]
    LengthMismatch { declared: usize, consumed: usize },
    #[error("payload length {0} exceeds limit")]
    PayloadTooLarge(u32),
    #[error("text field is not valid UTF-8")]
    InvalidUtf8,
    #[error("text field longer than 65535 bytes")]
    TextTooLong,
    #[error("list longer than 65535 entries")]
    ListTooLong,
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Quantized block of vibrotactile samples.
#[derive(Debug, Clone, PartialEq)]
pub struct VibFrame {
    pub seq: u32,
    /// Time of the first sample, seconds.
    pub t0: f64,
    /// Sample spacing, seconds.
    pub dt: f32,
    pub qmin: f32,
    pub qmax: f32,
    pub q: Vec<u8>,
}

impl VibFrame {
    pub fn n(&self) -> usize {
        self.q.len()
    }

    fn validate(&self) -> Result<(), CodecError> {
        if self.q.is_empty() {
            return Err(CodecError::MalformedFrame("n = 0"));
        }
        if self.q.len() > u16::MAX as usize {
            return Err(CodecError::TooManySamples(self.q.len()));
        }
        if !(self.qmin.is_finite() && self.qmax.is_finite()) {
            return Err(CodecError::MalformedFrame("non-finite range"));
        }
        if self.qmin > self.qmax {
            return Err(CodecError::MalformedFrame("qmin > qmax"));
        }
        Ok(())
    }
}

/// Quantizes `samples` into one frame.
pub fn encode_frame(samples: &[f32], seq: u32, t0: f64, dt: f32) -> Result<VibFrame, CodecError> {
    if samples.is_empty() {
        return Err(CodecError::EmptyFrame);
    }
    if samples.len() > u16::MAX as usize {
        return Err(CodecError::TooManySamples(samples.len()));
    }
    if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
        return Err(CodecError::NonFiniteSample(i));
    }
    let qmin = samples.iter().copied().fold(f32::INFINITY, f32::min);
    let qmax = samples.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = qmax as f64 - qmin as f64;
    let q = if span > 0.0 {
        samples
            .iter()
            .map(|&s| {
                let x = 255.0 * (s as f64 - qmin as f64) / span;
                libm::floor(x + 0.5).clamp(0.0, 255.0) as u8
            })
            .collect()
    } else {
        alloc::vec![0u8; samples.len()]
    };
    Ok(VibFrame {
        seq,
        t0,
        dt,
        qmin,
        qmax,
        q,
    })
}

/// Reconstructs the samples of a frame.
pub fn decode_frame(frame: &VibFrame) -> Result<Vec<f32>, CodecError> {
    frame.validate()?;
    let lo = frame.qmin as f64;
    let span = frame.qmax as f64 - lo;
    Ok(frame
        .q
        .iter()
        .map(|&q| (lo + q as f64 * span / 255.0) as f32)
        .collect())
}

/// One entry of a `TEXTURE_LIST`.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TextureInfo {
    pub id: u16,
    pub name: String,
    pub width_px: u16,
    pub height_px: u16,
}

/// A contact event: UV on the texture and penetration depth.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Contact {
    pub t: f64,
    pub u: f32,
    pub v: f32,
    pub depth_mm: f32,
}

impl Contact {
    /// `u, v ∈ [0, 1]`, `depth_mm ≥ 0`, all finite.
    pub fn is_valid(&self) -> bool {
        self.t.is_finite()
            && (0.0..=1.0).contains(&self.u)
            && (0.0..=1.0).contains(&self.v)
            && self.depth_mm.is_finite()
            && self.depth_mm >= 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello { version: u8 },
    ListTextures,
    TextureList { entries: Vec<TextureInfo> },
    Select { id: u16 },
    Contact(Contact),
    VibFrame(VibFrame),
    Error { code: u8, text: String },
    Bye,
}

impl Message {
    pub fn tag(&self) -> u8 {
        match self {
            Message::Hello { .. } => TAG_HELLO,
            Message::ListTextures => TAG_LIST_TEXTURES,
            Message::TextureList { .. } => TAG_TEXTURE_LIST,
            Message::Select { .. } => TAG_SELECT,
            Message::Contact(_) => TAG_CONTACT,
            Message::VibFrame(_) => TAG_VIB_FRAME,
            Message::Error { .. } => TAG_ERROR,
            Message::Bye => TAG_BYE,
        }
    }

    pub fn error(code: u8, text: impl Into<String>) -> Self {
        Message::Error {
            code,
            text: text.into(),
        }
    }
}

fn put_text(out: &mut Vec<u8>, s: &str) -> Result<(), WireError> {
    let len = u16::try_from(s.len()).map_err(|_| WireError::TextTooLong)?;
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn encode_payload(msg: &Message, out: &mut Vec<u8>) -> Result<(), WireError> {
    match msg {
        Message::Hello { version } => out.push(*version),
        Message::ListTextures | Message::Bye => {}
        Message::TextureList { entries } => {
            let count = u16::try_from(entries.len()).map_err(|_| WireError::ListTooLong)?;
            out.extend_from_slice(&count.to_be_bytes());
            for e in entries {
                out.extend_from_slice(&e.id.to_be_bytes());
                put_text(out, &e.name)?;
                out.extend_from_slice(&e.width_px.to_be_bytes());
                out.extend_from_slice(&e.height_px.to_be_bytes());
            }
        }
        Message::Select { id } => out.extend_from_slice(&id.to_be_bytes()),
        Message::Contact(c) => {
            out.extend_from_slice(&c.t.to_be_bytes());
            out.extend_from_slice(&c.u.to_be_bytes());
            out.extend_from_slice(&c.v.to_be_bytes());
            out.extend_from_slice(&c.depth_mm.to_be_bytes());
        }
        Message::VibFrame(f) => {
            f.validate()?;
            out.push(CODEC_UNIFORM8);
            out.extend_from_slice(&f.seq.to_be_bytes());
            out.extend_from_slice(&f.t0.to_be_bytes());
            out.extend_from_slice(&f.dt.to_be_bytes());
            out.extend_from_slice(&(f.q.len() as u16).to_be_bytes());
            out.extend_from_slice(&f.qmin.to_be_bytes());
            out.extend_from_slice(&f.qmax.to_be_bytes());
            out.extend_from_slice(&f.q);
        }
        Message::Error { code, text } => {
            out.push(*code);
            put_text(out, text)?;
        }
    }
    Ok(())
}

/// Serializes one message including its length prefix and tag.
pub fn encode_message(msg: &Message) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::with_capacity(16);
    out.extend_from_slice(&[0, 0, 0, 0]);
    out.push(msg.tag());
    encode_payload(msg, &mut out)?;
    let len = (out.len() - HEADER_LEN) as u32;
    out[..4].copy_from_slice(&len.to_be_bytes());
    Ok(out)
}

/// Reads fields from a payload slice; running past the end is a length
/// mismatch because the declared length was too short for the fields.
struct Fields<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Fields<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() - self.pos < n {
            return Err(WireError::LengthMismatch {
                declared: self.buf.len(),
                consumed: self.pos + n,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32, WireError> {
        Ok(f32::from_be_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_be_bytes(self.array()?))
    }

    fn text(&mut self) -> Result<String, WireError> {
        let len = self.u16()? as usize;
        let bytes = self.take(len)?;
        core::str::from_utf8(bytes)
            .map(String::from)
            .map_err(|_| WireError::InvalidUtf8)
    }

    fn finish(self) -> Result<(), WireError> {
        if self.pos != self.buf.len() {
            return Err(WireError::LengthMismatch {
                declared: self.buf.len(),
                consumed: self.pos,
            });
        }
        Ok(())
    }
}

/// Decodes a payload whose tag and length have already been read.
pub fn decode_payload(tag: u8, payload: &[u8]) -> Result<Message, WireError> {
    let mut f = Fields { buf: payload, pos: 0 };
    let msg = match tag {
        TAG_HELLO => Message::Hello { version: f.u8()? },
        TAG_LIST_TEXTURES => Message::ListTextures,
        TAG_TEXTURE_LIST => {
            let count = f.u16()? as usize;
            let mut entries = Vec::with_capacity(count.min(payload.len() / 8));
            for _ in 0..count {
                entries.push(TextureInfo {
                    id: f.u16()?,
                    name: f.text()?,
                    width_px: f.u16()?,
                    height_px: f.u16()?,
                });
            }
            Message::TextureList { entries }
        }
        TAG_SELECT => Message::Select { id: f.u16()? },
        TAG_CONTACT => Message::Contact(Contact {
            t: f.f64()?,
            u: f.f32()?,
            v: f.f32()?,
            depth_mm: f.f32()?,
        }),
        TAG_VIB_FRAME => {
            if f.u8()? != CODEC_UNIFORM8 {
                return Err(CodecError::MalformedFrame("unknown codec id").into());
            }
            let seq = f.u32()?;
            let t0 = f.f64()?;
            let dt = f.f32()?;
            let n = f.u16()? as usize;
            let qmin = f.f32()?;
            let qmax = f.f32()?;
            let q = f.take(n)?.to_vec();
            let frame = VibFrame {
                seq,
                t0,
                dt,
                qmin,
                qmax,
                q,
            };
            frame.validate()?;
            Message::VibFrame(frame)
        }
        TAG_ERROR => Message::Error {
            code: f.u8()?,
            text: f.text()?,
        },
        TAG_BYE => Message::Bye,
        tag => {
            return Err(WireError::UnknownTag {
                tag,
                frame_len: HEADER_LEN + payload.len(),
            })
        }
    };
    f.finish()?;
    Ok(msg)
}

/// Parses the length prefix and tag at the start of `buf`.
pub fn decode_header(buf: &[u8]) -> Result<(u32, u8), WireError> {
    if buf.len() < HEADER_LEN {
        return Err(WireError::TruncatedFrame {
            needed: HEADER_LEN,
            available: buf.len(),
        });
    }
    let len = u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]);
    if len > MAX_PAYLOAD_LEN {
        return Err(WireError::PayloadTooLarge(len));
    }
    Ok((len, buf[4]))
}

/// Decodes the first message in `buf`, returning it with the number of
/// bytes consumed.
pub fn decode_message(buf: &[u8]) -> Result<(Message, usize), WireError> {
    let (len, tag) = decode_header(buf)?;
    let total = HEADER_LEN + len as usize;
    if buf.len() < total {
        return Err(WireError::TruncatedFrame {
            needed: total,
            available: buf.len(),
        });
    }
    let msg = decode_payload(tag, &buf[HEADER_LEN..total])?;
    Ok((msg, total))
}
