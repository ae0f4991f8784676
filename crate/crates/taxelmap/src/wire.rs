//! Protocol messages over byte streams and WebSockets.

use std::io::{self, BufWriter, ErrorKind, Read, Write};
use std::net::TcpStream;
use std::time::Duration;

use taxelmap_core::protocol::{decode_header, decode_payload, encode_message, Message, WireError, HEADER_LEN};
use thiserror::Error;
use tungstenite::WebSocket;

use crate::json_mirror::{self, JsonMirrorError};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("connection closed")]
    Closed,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Json(#[from] JsonMirrorError),
    #[error(transparent)]
    WebSocket(Box<tungstenite::Error>),
}

impl From<tungstenite::Error> for TransportError {
    fn from(e: tungstenite::Error) -> Self {
        TransportError::WebSocket(Box::new(e))
    }
}

impl TransportError {
    /// True for errors after which the connection can keep going: the
    /// offending message has been skipped whole.
    pub fn is_recoverable(&self) -> bool {
        match self {
            TransportError::Wire(e) => !matches!(e, WireError::PayloadTooLarge(_)),
            TransportError::Json(_) => true,
            _ => false,
        }
    }
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut)
}

/// Buffered message reader. Partial frames survive read timeouts, and a
/// frame that fails to decode is consumed whole so the next read starts on
/// a frame boundary.
#[derive(Debug)]
pub struct MessageReader<R> {
    inner: R,
    buf: Vec<u8>,
}

impl<R: Read> MessageReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            buf: Vec::with_capacity(4096),
        }
    }

    pub fn get_ref(&self) -> &R {
        &self.inner
    }

    fn try_decode(&mut self) -> Option<Result<Message, WireError>> {
        let (len, tag) = match decode_header(&self.buf) {
            Ok(h) => h,
            Err(WireError::TruncatedFrame { .. }) => return None,
            Err(e) => return Some(Err(e)),
        };
        let total = HEADER_LEN + len as usize;
        if self.buf.len() < total {
            return None;
        }
        let result = decode_payload(tag, &self.buf[HEADER_LEN..total]);
        self.buf.drain(..total);
        Some(result)
    }

    /// Reads the next message. `Io` errors of kind `WouldBlock` or
    /// `TimedOut` leave the reader intact.
    pub fn read_message(&mut self) -> Result<Message, TransportError> {
        loop {
            if let Some(r) = self.try_decode() {
                return r.map_err(TransportError::from);
            }
            let mut chunk = [0u8; 4096];
            match self.inner.read(&mut chunk) {
                Ok(0) if self.buf.is_empty() => return Err(TransportError::Closed),
                Ok(0) => return Err(io::Error::from(ErrorKind::UnexpectedEof).into()),
                Ok(n) => self.buf.extend_from_slice(&chunk[..n]),
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
}

pub fn write_message(w: &mut impl Write, msg: &Message) -> Result<(), TransportError> {
    w.write_all(&encode_message(msg)?)?;
    Ok(())
}

/// A bidirectional message channel.
pub trait Transport {
    /// `Ok(None)` when the read timeout elapsed first.
    fn recv(&mut self) -> Result<Option<Message>, TransportError>;
    fn send(&mut self, msg: &Message) -> Result<(), TransportError>;
    fn set_read_timeout(&mut self, timeout: Option<Duration>) -> io::Result<()>;
}

/// The binary protocol over TCP.
pub struct BinaryTransport {
    reader: MessageReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl BinaryTransport {
    pub fn new(stream: TcpStream) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        let writer = BufWriter::new(stream.try_clone()?);
        Ok(Self {
            reader: MessageReader::new(stream),
            writer,
        })
    }
}

impl Transport for BinaryTransport {
    fn recv(&mut self) -> Result<Option<Message>, TransportError> {
        match self.reader.read_message() {
            Ok(m) => Ok(Some(m)),
            Err(TransportError::Io(e)) if is_timeout(&e) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        write_message(&mut self.writer, msg)?;
        self.writer.flush()?;
        Ok(())
    }

    fn set_read_timeout(&mut self, timeout: Option<Duration>) -> io::Result<()> {
        self.reader.get_ref().set_read_timeout(timeout)
    }
}

/// The JSON mirror over WebSocket: one text frame per message. Binary
/// frames carrying the wire encoding are accepted too.
pub struct WsTransport {
    ws: WebSocket<TcpStream>,
}

impl WsTransport {
    pub fn new(ws: WebSocket<TcpStream>) -> Self {
        Self { ws }
    }

    pub fn close(&mut self) {
        let _ = self.ws.close(None);
        let _ = self.ws.flush();
    }
}

impl Transport for WsTransport {
    fn recv(&mut self) -> Result<Option<Message>, TransportError> {
        use tungstenite::Message as Ws;
        loop {
            match self.ws.read() {
                Ok(Ws::Text(text)) => return Ok(Some(json_mirror::from_json(text.as_str())?)),
                Ok(Ws::Binary(bytes)) => {
                    let (msg, used) = taxelmap_core::protocol::decode_message(&bytes)?;
                    if used != bytes.len() {
                        return Err(WireError::LengthMismatch {
                            declared: bytes.len(),
                            consumed: used,
                        }
                        .into());
                    }
                    return Ok(Some(msg));
                }
                Ok(Ws::Close(_)) => return Err(TransportError::Closed),
                Ok(_) => {}
                Err(tungstenite::Error::Io(e)) if is_timeout(&e) => return Ok(None),
                Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => {
                    return Err(TransportError::Closed)
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        self.ws.send(tungstenite::Message::text(json_mirror::to_json(msg)))?;
        Ok(())
    }

    fn set_read_timeout(&mut self, timeout: Option<Duration>) -> io::Result<()> {
        self.ws.get_ref().set_read_timeout(timeout)
    }
}
