//! Headless replay client and trace files.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use taxelmap_core::protocol::{decode_frame, Contact, Message, TextureInfo, VibFrame, PROTOCOL_VERSION};
use thiserror::Error;

use crate::wire::{write_message, MessageReader, TransportError};

/// Upper end of the plotted intensity axis.
pub const SVG_Y_MAX: f64 = 0.8;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot connect to {addr}: {source}")]
    ConnectionFailed { addr: String, source: std::io::Error },
    #[error("server error {code}: {text}")]
    Protocol { code: u8, text: String },
    #[error("server has no texture {0}")]
    UnknownTexture(u16),
    #[error("unexpected message with tag {0}")]
    Unexpected(u8),
    #[error("invalid script: {0}")]
    InvalidScript(String),
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Contact rows with strictly increasing `t`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryScript {
    rows: Vec<Contact>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct ScriptRow {
    t: f64,
    u: f32,
    v: f32,
    depth_mm: f32,
}

impl TrajectoryScript {
    pub fn new(rows: Vec<Contact>) -> Result<Self, ClientError> {
        for (i, c) in rows.iter().enumerate() {
            if !c.is_valid() {
                return Err(ClientError::InvalidScript(format!("row {i} is out of range")));
            }
            if i > 0 && c.t.partial_cmp(&rows[i - 1].t) != Some(std::cmp::Ordering::Greater) {
                return Err(ClientError::InvalidScript(format!("t not increasing at row {i}")));
            }
        }
        Ok(Self { rows })
    }

    /// Straight line from `from` to `to` (UV) over `duration_s`, one contact
    /// every `step_s`.
    pub fn line(from: (f32, f32), to: (f32, f32), duration_s: f64, step_s: f64, depth_mm: f32) -> Result<Self, ClientError> {
        let n = (duration_s / step_s).round() as usize;
        let rows = (0..=n)
            .map(|i| {
                let f = i as f64 / n.max(1) as f64;
                let lerp = |a: f32, b: f32| (a as f64 + (b as f64 - a as f64) * f) as f32;
                Contact {
                    t: duration_s * f,
                    u: lerp(from.0, to.0),
                    v: lerp(from.1, to.1),
                    depth_mm,
                }
            })
            .collect();
        Self::new(rows)
    }

    pub fn rows(&self) -> &[Contact] {
        &self.rows
    }

    pub fn end_time(&self) -> Option<f64> {
        self.rows.last().map(|c| c.t)
    }

    /// Reads a `t,u,v,depth_mm` CSV.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, ClientError> {
        let path = path.as_ref();
        let csv_err = |source| ClientError::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let rows = r
            .deserialize::<ScriptRow>()
            .map(|row| {
                row.map(|r| Contact {
                    t: r.t,
                    u: r.u,
                    v: r.v,
                    depth_mm: r.depth_mm,
                })
                .map_err(csv_err)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(rows)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), ClientError> {
        let path = path.as_ref();
        let csv_err = |source| ClientError::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        for c in &self.rows {
            w.serialize(ScriptRow {
                t: c.t,
                u: c.u,
                v: c.v,
                depth_mm: c.depth_mm,
            })
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    pub t: f64,
    pub intensity: f64,
}

/// Decoded output stream.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub samples: Vec<TraceSample>,
}

impl Trace {
    /// Concatenates decoded frames in arrival order.
    pub fn from_frames(frames: &[VibFrame]) -> Result<Self, ClientError> {
        let mut samples = Vec::with_capacity(frames.iter().map(|f| f.n()).sum());
        for f in frames {
            let values = decode_frame(f).map_err(|e| TransportError::Wire(e.into()))?;
            for (i, v) in values.into_iter().enumerate() {
                samples.push(TraceSample {
                    t: f.t0 + i as f64 * f.dt as f64,
                    intensity: v as f64,
                });
            }
        }
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,intensity\n");
        for p in &self.samples {
            let _ = writeln!(s, "{:.6},{:.6}", p.t, p.intensity);
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), ClientError> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, ClientError> {
        let path = path.as_ref();
        let csv_err = |source| ClientError::Csv {
            path: path.to_path_buf(),
            source,
        };
        #[derive(Deserialize)]
        struct Row {
            t: f64,
            intensity: f64,
        }
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let samples = r
            .deserialize::<Row>()
            .map(|row| row.map(|r| TraceSample { t: r.t, intensity: r.intensity }).map_err(csv_err))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { samples })
    }

    /// Time-vs-intensity line plot with the y axis fixed to `[0, 0.8]`.
    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (800.0, 300.0, 40.0);
        let (t0, t1) = match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) if b.t > a.t => (a.t, b.t),
            (Some(a), _) => (a.t, a.t + 1.0),
            _ => (0.0, 1.0),
        };
        let x = |t: f64| pad + (t - t0) / (t1 - t0) * (w - 2.0 * pad);
        let y = |v: f64| h - pad - v.clamp(0.0, SVG_Y_MAX) / SVG_Y_MAX * (h - 2.0 * pad);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" data-y-min="0" data-y-max="{SVG_Y_MAX}">"#
        );
        let _ = writeln!(
            s,
            r#"<g stroke="black" fill="none"><line x1="{pad}" y1="{}" x2="{}" y2="{}"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}"/></g>"#,
            h - pad,
            w - pad,
            h - pad,
            h - pad
        );
        let _ = writeln!(
            s,
            r#"<g font-size="12" font-family="sans-serif"><text x="4" y="{}">0</text><text x="4" y="{}">{SVG_Y_MAX}</text><text x="{}" y="{}">t (s)</text></g>"#,
            h - pad,
            pad + 4.0,
            w / 2.0,
            h - 8.0
        );
        s.push_str(r#"<polyline fill="none" stroke="steelblue" stroke-width="1" points=""#);
        for (i, p) in self.samples.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{:.2},{:.2}", x(p.t), y(p.intensity));
        }
        s.push_str("\"/>\n</svg>\n");
        s
    }

    pub fn write_svg(&self, path: impl AsRef<Path>) -> Result<(), ClientError> {
        fs::write(path, self.to_svg())?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ReplayOptions {
    /// Send contacts back to back instead of pacing them in real time.
    pub accelerated: bool,
    /// When later than the last script row, a release contact (depth 0) is
    /// sent at this time so the stream covers it.
    pub end_t: Option<f64>,
    /// Give up if the server stays silent this long.
    pub read_timeout: Duration,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self {
            accelerated: false,
            end_t: None,
            read_timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Replay {
    pub textures: Vec<TextureInfo>,
    pub frames: Vec<VibFrame>,
    pub trace: Trace,
}

fn expect_reply(reader: &mut MessageReader<TcpStream>) -> Result<Message, ClientError> {
    match reader.read_message()? {
        Message::Error { code, text } => Err(ClientError::Protocol { code, text }),
        m => Ok(m),
    }
}

/// Contacts actually sent for a script, including the trailing release.
pub fn contacts_for(script: &TrajectoryScript, end_t: Option<f64>) -> Vec<Contact> {
    let mut rows = script.rows().to_vec();
    if let Some(end) = end_t {
        if script.end_time().is_none_or(|last| end > last) {
            let (u, v) = rows.last().map_or((0.0, 0.0), |c| (c.u, c.v));
            rows.push(Contact { t: end, u, v, depth_mm: 0.0 });
        }
    }
    rows
}

/// Plays `script` against the server at `addr` on texture `texture_id`.
pub fn replay(
    addr: impl ToSocketAddrs + std::fmt::Debug,
    texture_id: u16,
    script: &TrajectoryScript,
    opts: &ReplayOptions,
) -> Result<Replay, ClientError> {
    let label = format!("{addr:?}");
    let stream = TcpStream::connect(addr).map_err(|source| ClientError::ConnectionFailed { addr: label, source })?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(opts.read_timeout))?;
    let mut writer = BufWriter::new(stream.try_clone()?);
    let mut reader = MessageReader::new(stream);

    let send = |w: &mut BufWriter<TcpStream>, m: &Message| -> Result<(), ClientError> {
        write_message(w, m)?;
        w.flush()?;
        Ok(())
    };
    send(&mut writer, &Message::Hello { version: PROTOCOL_VERSION })?;
    match expect_reply(&mut reader)? {
        Message::Hello { .. } => {}
        m => return Err(ClientError::Unexpected(m.tag())),
    }
    send(&mut writer, &Message::ListTextures)?;
    let textures = match expect_reply(&mut reader)? {
        Message::TextureList { entries } => entries,
        m => return Err(ClientError::Unexpected(m.tag())),
    };
    if !textures.iter().any(|t| t.id == texture_id) {
        let _ = send(&mut writer, &Message::Bye);
        return Err(ClientError::UnknownTexture(texture_id));
    }
    send(&mut writer, &Message::Select { id: texture_id })?;

    let contacts = contacts_for(script, opts.end_t);
    let accelerated = opts.accelerated;
    let sender = thread::spawn(move || -> Result<(), ClientError> {
        let start = Instant::now();
        let t_first = contacts.first().map_or(0.0, |c| c.t);
        for c in contacts {
            if !accelerated {
                let due = Duration::from_secs_f64((c.t - t_first).max(0.0));
                if let Some(wait) = due.checked_sub(start.elapsed()) {
                    thread::sleep(wait);
                }
            }
            write_message(&mut writer, &Message::Contact(c))?;
            if !accelerated {
                writer.flush()?;
            }
        }
        write_message(&mut writer, &Message::Bye)?;
        writer.flush()?;
        Ok(())
    });

    let mut frames = Vec::new();
    let mut server_error = None;
    let outcome = loop {
        match reader.read_message() {
            Ok(Message::VibFrame(f)) => frames.push(f),
            Ok(Message::Bye) => break Ok(()),
            Ok(Message::Error { code, text }) => {
                server_error.get_or_insert(ClientError::Protocol { code, text });
            }
            Ok(m) => break Err(ClientError::Unexpected(m.tag())),
            Err(e) => break Err(e.into()),
        }
    };
    let sent = sender.join().expect("sender thread panicked");
    outcome?;
    sent?;
    if let Some(e) = server_error {
        return Err(e);
    }
    let trace = Trace::from_frames(&frames)?;
    Ok(Replay {
        textures,
        frames,
        trace,
    })
}
