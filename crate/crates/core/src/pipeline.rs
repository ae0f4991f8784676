//! Session to vibration map, end to end.
//!
//! Passes are aligned independently; a pass that fails alignment is reported
//! and left out while the rest of the session still produces a map.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use thiserror::Error;

use crate::alignment::{align_pass, AlignError, PassAlignment, PositionedVibration, DEFAULT_W};
use crate::geometry::CameraProjection;
use crate::scansim::ScanSession;
use crate::vibmap::{
    bin_taxels, normalize, rasterize, sort_by_position, to_intensity, MapError, TaxelLane,
    VibrationMap, DEFAULT_BASELINE_G, DEFAULT_STRETCH_PX, TAXEL_PITCH_MM,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("all {0} passes were rejected")]
    NoUsablePasses(usize),
    #[error(transparent)]
    Map(#[from] MapError),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct BuildConfig {
    pub w: f64,
    pub baseline_g: f64,
    pub stretch_px: u32,
    pub width_px: usize,
    pub height_px: usize,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            w: DEFAULT_W,
            baseline_g: DEFAULT_BASELINE_G,
            stretch_px: DEFAULT_STRETCH_PX,
            width_px: 1920,
            height_px: 1080,
        }
    }
}

/// Outcome of aligning one pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PassReport {
    pub lane_index: u32,
    pub pass_index: u32,
    pub result: Result<PassAlignment, AlignError>,
}

impl PassReport {
    pub fn is_rejected(&self) -> bool {
        self.result.is_err()
    }
}

/// Aligns every pass of a session, in session order.
pub fn align_session(session: &ScanSession, w: f64) -> Vec<PassReport> {
    session
        .passes
        .iter()
        .map(|p| PassReport {
            lane_index: p.lane_index,
            pass_index: p.pass_index,
            result: align_pass(p, session.config.y_len_mm, w),
        })
        .collect()
}

/// Groups positioned samples into lanes by X and bins each lane into 1 mm
/// taxels on a common integer-aligned Y grid. Lanes come out in ascending X.
pub fn build_lanes(points: &[PositionedVibration], baseline_g: f64) -> Result<Vec<TaxelLane>, MapError> {
    let mut d = to_intensity(points, baseline_g);
    if d.is_empty() {
        return Ok(Vec::new());
    }
    sort_by_position(&mut d);
    let (y_min, y_max) = d
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.y_mm), hi.max(p.y_mm)));
    let y0 = libm::floor(y_min / TAXEL_PITCH_MM) * TAXEL_PITCH_MM;
    let n_bins = libm::floor((y_max - y0) / TAXEL_PITCH_MM) as usize + 1;

    let mut lanes = Vec::new();
    let mut start = 0;
    while start < d.len() {
        let x = d[start].x_mm;
        let end = start + d[start..].iter().take_while(|p| p.x_mm == x).count();
        lanes.push(bin_taxels(&d[start..end], x, y0, n_bins)?);
        start = end;
    }
    Ok(lanes)
}

/// Everything produced by a map build.
#[derive(Debug, Clone, PartialEq)]
pub struct MapBuild {
    pub passes: Vec<PassReport>,
    pub lanes: Vec<TaxelLane>,
    pub raw: VibrationMap,
    pub map: VibrationMap,
}

impl MapBuild {
    pub fn rejected(&self) -> impl Iterator<Item = &PassReport> {
        self.passes.iter().filter(|p| p.is_rejected())
    }
}

/// Bins, rasterizes and normalizes already-aligned passes.
pub fn assemble_map(
    passes: Vec<PassReport>,
    proj: &CameraProjection,
    cfg: &BuildConfig,
) -> Result<MapBuild, PipelineError> {
    // Lane-major, pass-ascending order keeps accumulation deterministic.
    let mut ordered: BTreeMap<(u32, u32), &PassAlignment> = BTreeMap::new();
    for p in &passes {
        if let Ok(a) = &p.result {
            ordered.insert((p.lane_index, p.pass_index), a);
        }
    }
    if ordered.is_empty() {
        return Err(PipelineError::NoUsablePasses(passes.len()));
    }
    let points: Vec<PositionedVibration> = ordered
        .values()
        .flat_map(|a| a.samples.iter().copied())
        .collect();
    let lanes = build_lanes(&points, cfg.baseline_g)?;
    let raw = rasterize(&lanes, proj, cfg.width_px, cfg.height_px, cfg.stretch_px)?;
    let map = normalize(&raw);
    Ok(MapBuild {
        passes,
        lanes,
        raw,
        map,
    })
}

/// Aligns, bins, rasterizes and normalizes a whole session.
pub fn build_map(
    session: &ScanSession,
    proj: &CameraProjection,
    cfg: &BuildConfig,
) -> Result<MapBuild, PipelineError> {
    assemble_map(align_session(session, cfg.w), proj, cfg)
}
