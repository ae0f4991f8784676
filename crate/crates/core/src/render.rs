//! Contact to vibrotactile stream.
//!
//! A contact's intensity is the bilinear sample of the normalized map at its
//! UV, scaled by `min(depth / d_ref, 1)`. The output stream runs at a fixed
//! rate as a zero-order hold of the latest contact intensity and is cut into
//! fixed-size encoded frames.

use alloc::vec::Vec;

use thiserror::Error;

use crate::protocol::{encode_frame, CodecError, Contact, VibFrame};
use crate::vibmap::VibrationMap;

pub const DEFAULT_F_OUT_HZ: f64 = 1000.0;
pub const DEFAULT_FRAME_LEN: usize = 64;
pub const DEFAULT_D_REF_MM: f64 = 1.0;

/// Largest forward clock step accepted in one tick, seconds.
pub const MAX_CLOCK_STEP_S: f64 = 3600.0;

const UV_SNAP_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RenderError {
    #[error("uv ({u}, {v}) outside [0, 1]")]
    UVOutOfRange { u: f64, v: f64 },
    #[error("map is not normalized")]
    MapNotNormalized,
    #[error("invalid contact")]
    InvalidContact,
    #[error("no texture selected")]
    NoTextureSelected,
    #[error("clock jumped forward by {0} s")]
    ClockJump(f64),
    #[error("invalid synth config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[inline]
fn snap(v: f64) -> f64 {
    let r = libm::round(v);
    if libm::fabs(v - r) <= UV_SNAP_EPS {
        r
    } else {
        v
    }
}

/// Bilinear lookup at texture coordinates; `(0, 0)` is the top-left pixel
/// center and `(1, 1)` the bottom-right one.
pub fn lookup_bilinear(map: &VibrationMap, u: f64, v: f64) -> Result<f64, RenderError> {
    if !map.is_normalized() {
        return Err(RenderError::MapNotNormalized);
    }
    if !((0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v)) {
        return Err(RenderError::UVOutOfRange { u, v });
    }
    let x = snap(u * (map.width() - 1) as f64);
    let y = snap(v * (map.height() - 1) as f64);
    map.values()
        .sample_bilinear(x, y)
        .ok_or(RenderError::UVOutOfRange { u, v })
}

/// Map intensity at the contact point, ramped linearly with depth up to
/// `d_ref_mm`.
pub fn contact_intensity(map: &VibrationMap, contact: &Contact, d_ref_mm: f64) -> Result<f64, RenderError> {
    if !contact.is_valid() {
        if !((0.0..=1.0).contains(&contact.u) && (0.0..=1.0).contains(&contact.v)) {
            return Err(RenderError::UVOutOfRange {
                u: contact.u as f64,
                v: contact.v as f64,
            });
        }
        return Err(RenderError::InvalidContact);
    }
    let value = lookup_bilinear(map, contact.u as f64, contact.v as f64)?;
    let gain = (contact.depth_mm as f64 / d_ref_mm).min(1.0);
    Ok(value * gain)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SynthConfig {
    pub f_out_hz: f64,
    pub frame_len: usize,
    pub d_ref_mm: f64,
    /// Optional sine carrier, amplitude-modulated by the held intensity.
    pub carrier_hz: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            f_out_hz: DEFAULT_F_OUT_HZ,
            frame_len: DEFAULT_FRAME_LEN,
            d_ref_mm: DEFAULT_D_REF_MM,
            carrier_hz: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.f_out_hz.is_finite() && self.f_out_hz > 0.0) {
            return Err(RenderError::InvalidConfig("f_out_hz must be positive"));
        }
        if self.frame_len == 0 || self.frame_len > u16::MAX as usize {
            return Err(RenderError::InvalidConfig("frame_len must be in 1..=65535"));
        }
        if !(self.d_ref_mm.is_finite() && self.d_ref_mm > 0.0) {
            return Err(RenderError::InvalidConfig("d_ref_mm must be positive"));
        }
        if let Some(c) = self.carrier_hz {
            if !(c.is_finite() && c > 0.0) {
                return Err(RenderError::InvalidConfig("carrier_hz must be positive"));
            }
        }
        Ok(())
    }
}

/// Per-session stream state. Sample `k` is due at `k / f_out` seconds and
/// holds the intensity of the latest contact applied before it was
/// generated.
#[derive(Debug, Clone)]
pub struct SessionState {
    cfg: SynthConfig,
    selected: Option<u16>,
    last_contact: Option<Contact>,
    hold: f32,
    out_clock: u64,
    seq: u32,
    pending: Vec<f32>,
    pending_start: u64,
}

impl SessionState {
    pub fn new(cfg: SynthConfig) -> Result<Self, RenderError> {
        cfg.validate()?;
        let cap = cfg.frame_len;
        Ok(Self {
            cfg,
            selected: None,
            last_contact: None,
            hold: 0.0,
            out_clock: 0,
            seq: 0,
            pending: Vec::with_capacity(cap),
            pending_start: 0,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    /// Selects a texture; the held intensity drops to 0.
    pub fn select(&mut self, id: u16) {
        self.selected = Some(id);
        self.hold = 0.0;
        self.last_contact = None;
    }

    pub fn selected(&self) -> Option<u16> {
        self.selected
    }

    pub fn last_contact(&self) -> Option<&Contact> {
        self.last_contact.as_ref()
    }

    /// Number of samples generated so far.
    pub fn out_clock(&self) -> u64 {
        self.out_clock
    }

    /// Sequence number the next frame will carry.
    pub fn next_seq(&self) -> u32 {
        self.seq
    }

    pub fn sample_time(&self, k: u64) -> f64 {
        k as f64 / self.cfg.f_out_hz
    }

    /// Advances the clock to `contact.t`, then holds `intensity` from there on.
    pub fn apply_contact(&mut self, contact: Contact, intensity: f64) -> Result<Vec<VibFrame>, RenderError> {
        let frames = session_tick(self, contact.t)?;
        self.hold = intensity as f32;
        self.last_contact = Some(contact);
        Ok(frames)
    }

    fn sample_value(&self, k: u64) -> f32 {
        match self.cfg.carrier_hz {
            None => self.hold,
            Some(fc) => {
                let phase = 2.0 * core::f64::consts::PI * fc * self.sample_time(k);
                (self.hold as f64 * 0.5 * (1.0 + libm::sin(phase))) as f32
            }
        }
    }

    fn emit(&mut self) -> Result<VibFrame, RenderError> {
        let frame = encode_frame(
            &self.pending,
            self.seq,
            self.sample_time(self.pending_start),
            (1.0 / self.cfg.f_out_hz) as f32,
        )?;
        self.seq = self.seq.wrapping_add(1);
        self.pending_start += self.pending.len() as u64;
        self.pending.clear();
        Ok(frame)
    }

    /// Emits any buffered samples as a final, possibly short, frame.
    pub fn flush(&mut self) -> Result<Option<VibFrame>, RenderError> {
        if self.pending.is_empty() {
            return Ok(None);
        }
        self.emit().map(Some)
    }
}

/// Generates every sample due strictly before `now` and returns the frames
/// completed by them.
pub fn session_tick(state: &mut SessionState, now: f64) -> Result<Vec<VibFrame>, RenderError> {
    if state.selected.is_none() {
        return Err(RenderError::NoTextureSelected);
    }
    let step = now - state.sample_time(state.out_clock);
    if step > MAX_CLOCK_STEP_S || now.is_nan() {
        return Err(RenderError::ClockJump(step));
    }
    let mut frames = Vec::new();
    while state.sample_time(state.out_clock) < now {
        let v = state.sample_value(state.out_clock);
        state.pending.push(v);
        state.out_clock += 1;
        if state.pending.len() == state.cfg.frame_len {
            frames.push(state.emit()?);
        }
    }
    Ok(frames)
}
