//! Vibration maps: from positioned accelerometer samples to a pixel grid.
//!
//! Intensity is the deviation of vertical acceleration from the 1 g
//! baseline, `V = |acc − baseline|`. Samples are averaged into 1 mm taxels
//! along each lane, each taxel is projected into the image and stretched
//! across the lane direction, and the resulting grid is min-max normalized.
//! Statistics are taken on the raw grid, before normalization.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use thiserror::Error;

use crate::alignment::PositionedVibration;
use crate::geometry::{warp_perspective, CameraProjection, GeometryError, PixelPoint, Quad, WorldPoint};
use crate::grid::Grid;

/// Taxel length along the lane.
pub const TAXEL_PITCH_MM: f64 = 1.0;
/// Pixels written on each side of a taxel, across the lane.
pub const DEFAULT_STRETCH_PX: u32 = 3;
/// Resting vertical acceleration in g units.
pub const DEFAULT_BASELINE_G: f64 = 1.0;

const LANE_X_TOLERANCE_MM: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MapError {
    #[error("sample at x = {x_mm} mm does not belong to lane x = {lane_x_mm} mm")]
    LaneMismatch { x_mm: f64, lane_x_mm: f64 },
    #[error("sample at y = {y_mm} mm lies outside the taxel range")]
    SampleOutOfRange { y_mm: f64 },
    #[error("no taxel projects inside the image guard band")]
    ProjectionOutOfFrame,
    #[error("map has no touched pixels")]
    NoTouchedPixels,
    #[error("invalid map: {0}")]
    Invalid(&'static str),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// A positioned sample after the intensity transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionedIntensity {
    pub v: f64,
    pub x_mm: f64,
    pub y_mm: f64,
}

/// `V = |acc − baseline_g|`, element-wise; positions are copied unchanged.
pub fn to_intensity(d: &[PositionedVibration], baseline_g: f64) -> Vec<PositionedIntensity> {
    d.iter()
        .map(|p| PositionedIntensity {
            v: libm::fabs(p.acc_g - baseline_g),
            x_mm: p.x_mm,
            y_mm: p.y_mm,
        })
        .collect()
}

fn position_order(a: &PositionedIntensity, b: &PositionedIntensity) -> Ordering {
    a.x_mm
        .total_cmp(&b.x_mm)
        .then_with(|| a.y_mm.total_cmp(&b.y_mm))
}

/// Stable ascending sort by `(x_mm, y_mm)`.
pub fn sort_by_position(d: &mut [PositionedIntensity]) {
    d.sort_by(position_order);
}

/// Mean intensity per 1 mm bin along one lane. Bin `k` covers
/// `[y0_mm + k, y0_mm + k + 1)`; empty bins hold 0 with a count of 0.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TaxelLane {
    pub x_mm: f64,
    pub y0_mm: f64,
    pub pitch_mm: f64,
    pub values: Vec<f64>,
    pub counts: Vec<u32>,
}

impl TaxelLane {
    /// World position of the center of bin `k`.
    pub fn center(&self, k: usize) -> WorldPoint {
        WorldPoint::new(self.x_mm, self.y0_mm + (k as f64 + 0.5) * self.pitch_mm)
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }
}

/// Averages lane samples into `n_bins` taxels starting at `y0_mm`.
pub fn bin_taxels(
    d_sorted: &[PositionedIntensity],
    lane_x: f64,
    y0_mm: f64,
    n_bins: usize,
) -> Result<TaxelLane, MapError> {
    let mut sums = vec![0.0f64; n_bins];
    let mut counts = vec![0u32; n_bins];
    for p in d_sorted {
        if !(libm::fabs(p.x_mm - lane_x) <= LANE_X_TOLERANCE_MM) {
            return Err(MapError::LaneMismatch {
                x_mm: p.x_mm,
                lane_x_mm: lane_x,
            });
        }
        let offset = (p.y_mm - y0_mm) / TAXEL_PITCH_MM;
        let k = libm::floor(offset);
        if !(k >= 0.0 && k < n_bins as f64) {
            return Err(MapError::SampleOutOfRange { y_mm: p.y_mm });
        }
        let k = k as usize;
        sums[k] += p.v;
        counts[k] += 1;
    }
    let values = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    Ok(TaxelLane {
        x_mm: lane_x,
        y0_mm,
        pitch_mm: TAXEL_PITCH_MM,
        values,
        counts,
    })
}

/// Statistics of the raw (pre-normalization) intensity over touched pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RawStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl RawStats {
    /// `None` for an empty input.
    pub fn compute(values: impl Iterator<Item = f64> + Clone) -> Option<Self> {
        let (mut n, mut min, mut max) = (0usize, f64::INFINITY, f64::NEG_INFINITY);
        for v in values.clone() {
            n += 1;
            min = min.min(v);
            max = max.max(v);
        }
        if n == 0 {
            return None;
        }
        // Offsetting by the minimum keeps constant inputs exact.
        let mean = min + values.clone().map(|v| v - min).sum::<f64>() / n as f64;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        Some(Self {
            min,
            max,
            mean,
            std: libm::sqrt(var),
        })
    }
}

/// Pixel grid of vibration intensity registered to the texture image.
#[derive(Debug, Clone, PartialEq)]
pub struct VibrationMap {
    values: Grid<f32>,
    touched: Vec<bool>,
    normalized: bool,
    raw: Option<RawStats>,
}

impl VibrationMap {
    /// A raw (unnormalized) map; statistics are computed from the touched
    /// values.
    pub fn from_raw(values: Grid<f32>, touched: Vec<bool>) -> Result<Self, MapError> {
        if touched.len() != values.data().len() {
            return Err(MapError::Invalid("mask size does not match grid"));
        }
        if values.data().iter().any(|v| !v.is_finite()) {
            return Err(MapError::Invalid("non-finite value"));
        }
        let raw = RawStats::compute(
            values
                .data()
                .iter()
                .zip(&touched)
                .filter(|(_, &t)| t)
                .map(|(&v, _)| v as f64),
        );
        Ok(Self {
            values,
            touched,
            normalized: false,
            raw,
        })
    }

    /// Reassembles a map from stored parts, validating the invariants.
    pub fn from_parts(
        values: Grid<f32>,
        touched: Vec<bool>,
        normalized: bool,
        raw: Option<RawStats>,
    ) -> Result<Self, MapError> {
        if touched.len() != values.data().len() {
            return Err(MapError::Invalid("mask size does not match grid"));
        }
        if values.data().iter().any(|v| !v.is_finite()) {
            return Err(MapError::Invalid("non-finite value"));
        }
        if normalized && values.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(MapError::Invalid("normalized value outside [0, 1]"));
        }
        if let Some(r) = raw {
            if !(r.min.is_finite() && r.max.is_finite() && r.mean.is_finite() && r.std.is_finite()) {
                return Err(MapError::Invalid("non-finite statistics"));
            }
        }
        Ok(Self {
            values,
            touched,
            normalized,
            raw,
        })
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn values(&self) -> &Grid<f32> {
        &self.values
    }

    pub fn touched(&self) -> &[bool] {
        &self.touched
    }

    pub fn is_touched(&self, x: usize, y: usize) -> bool {
        self.touched[y * self.width() + x]
    }

    pub fn touched_count(&self) -> usize {
        self.touched.iter().filter(|&&t| t).count()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn raw_stats(&self) -> Option<RawStats> {
        self.raw
    }

    fn touched_values(&self) -> impl Iterator<Item = f32> + Clone + '_ {
        self.values
            .data()
            .iter()
            .zip(&self.touched)
            .filter(|(_, &t)| t)
            .map(|(&v, _)| v)
    }
}

/// Projects taxels into a `width_px` × `height_px` raw vibration map.
///
/// Each taxel with samples covers the projected segment between its bin
/// edges, one pixel per projected pixel of length, and is stretched
/// `stretch_px` pixels on both sides perpendicular to the projected lane.
/// Pixels hit by several taxels hold their mean; accumulation runs in lane
/// order so output is bit-stable.
pub fn rasterize(
    lanes: &[TaxelLane],
    proj: &CameraProjection,
    width_px: usize,
    height_px: usize,
    stretch_px: u32,
) -> Result<VibrationMap, MapError> {
    let mut sums = vec![0.0f64; width_px * height_px];
    let mut counts = vec![0u32; width_px * height_px];
    let (w, h) = (width_px as f64, height_px as f64);
    let in_guard = |p: PixelPoint| {
        p.u_px >= -0.5 * w && p.u_px < 1.5 * w && p.v_px >= -0.5 * h && p.v_px < 1.5 * h
    };
    let stretch = stretch_px as i64;
    let mut placed = 0usize;
    let mut pixels: Vec<usize> = Vec::new();

    for lane in lanes {
        for (k, (&value, &count)) in lane.values.iter().zip(&lane.counts).enumerate() {
            if count == 0 {
                continue;
            }
            let y_lo = lane.y0_mm + k as f64 * lane.pitch_mm;
            let (Ok(center), Ok(start), Ok(end)) = (
                proj.project(lane.center(k)),
                proj.project(WorldPoint::new(lane.x_mm, y_lo)),
                proj.project(WorldPoint::new(lane.x_mm, y_lo + lane.pitch_mm)),
            ) else {
                continue;
            };
            if !in_guard(center) {
                continue;
            }
            placed += 1;

            let (du, dv) = (end.u_px - start.u_px, end.v_px - start.v_px);
            let len = libm::hypot(du, dv);
            let (nu, nv) = if len > 0.0 { (-dv / len, du / len) } else { (1.0, 0.0) };
            let steps = (libm::round(len) as usize).max(1);

            pixels.clear();
            for a in 0..steps {
                let f = (a as f64 + 0.5) / steps as f64;
                let (pu, pv) = (start.u_px + du * f, start.v_px + dv * f);
                for s in -stretch..=stretch {
                    let qu = libm::floor(pu + nu * s as f64 + 0.5);
                    let qv = libm::floor(pv + nv * s as f64 + 0.5);
                    if qu >= 0.0 && qu < w && qv >= 0.0 && qv < h {
                        pixels.push(qv as usize * width_px + qu as usize);
                    }
                }
            }
            pixels.sort_unstable();
            pixels.dedup();
            for &i in &pixels {
                sums[i] += value;
                counts[i] += 1;
            }
        }
    }
    if placed == 0 {
        return Err(MapError::ProjectionOutOfFrame);
    }

    let touched: Vec<bool> = counts.iter().map(|&c| c > 0).collect();
    let data: Vec<f32> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { (s / c as f64) as f32 } else { 0.0 })
        .collect();
    let grid = Grid::from_vec(width_px, height_px, data).expect("sized above");
    VibrationMap::from_raw(grid, touched)
}

/// Min-max normalization of touched pixels to `[0, 1]`. Untouched pixels
/// stay 0 and the raw statistics are carried over unchanged. A map whose
/// touched pixels are all equal normalizes to 0.
pub fn normalize(map: &VibrationMap) -> VibrationMap {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in map.touched_values() {
        lo = lo.min(v as f64);
        hi = hi.max(v as f64);
    }
    let spread = hi - lo;
    let data = map
        .values
        .data()
        .iter()
        .zip(&map.touched)
        .map(|(&v, &t)| {
            if !t || !(spread > 0.0) {
                0.0
            } else {
                ((v as f64 - lo) / spread) as f32
            }
        })
        .collect();
    VibrationMap {
        values: Grid::from_vec(map.width(), map.height(), data).expect("same size"),
        touched: map.touched.clone(),
        normalized: true,
        raw: map.raw,
    }
}

/// Amplitude, mean and standard deviation of the raw intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapStats {
    pub v_scale: f64,
    pub v_mean: f64,
    pub v_std: f64,
}

impl MapStats {
    pub const CSV_HEADER: &'static str = "v_scale,v_mean,v_std";

    /// Three-decimal CSV row, e.g. `0.666,0.065,0.052`.
    pub fn csv_line(&self) -> alloc::string::String {
        alloc::format!("{:.3},{:.3},{:.3}", self.v_scale, self.v_mean, self.v_std)
    }
}

pub fn map_stats(map: &VibrationMap) -> Result<MapStats, MapError> {
    let raw = map.raw.ok_or(MapError::NoTouchedPixels)?;
    Ok(MapStats {
        v_scale: raw.max - raw.min,
        v_mean: raw.mean,
        v_std: raw.std,
    })
}

/// Perspective-rectifies a map. The touched mask is resampled the same way
/// and thresholded at one half.
pub fn rectify(map: &VibrationMap, src: &Quad, out_w: usize, out_h: usize) -> Result<VibrationMap, MapError> {
    let values = warp_perspective(&map.values, src, out_w, out_h)?;
    let mask = Grid::from_vec(
        map.width(),
        map.height(),
        map.touched.iter().map(|&t| if t { 1.0f32 } else { 0.0 }).collect(),
    )
    .expect("same size");
    let mask = warp_perspective(&mask, src, out_w, out_h)?;
    let touched: Vec<bool> = mask.data().iter().map(|&m| m >= 0.5).collect();
    let data: Vec<f32> = values
        .data()
        .iter()
        .zip(&touched)
        .map(|(&v, &t)| if t { v } else { 0.0 })
        .collect();
    let values = Grid::from_vec(out_w, out_h, data).expect("same size");
    let rectified = VibrationMap::from_raw(values, touched)?;
    Ok(if map.normalized {
        VibrationMap {
            normalized: true,
            raw: map.raw,
            ..rectified
        }
    } else {
        rectified
    })
}

/// 8-bit preview: `value · 255` rounded half-up and clamped.
pub fn preview_u8(map: &VibrationMap) -> Grid<u8> {
    map.values
        .map(|v| libm::floor(v as f64 * 255.0 + 0.5).clamp(0.0, 255.0) as u8)
}

/// Fills untouched pixels from the nearest touched pixel within `radius_px`.
/// For display only; the server always reads the unfilled map.
pub fn fill_nearest(map: &VibrationMap, radius_px: usize) -> Grid<f32> {
    let (w, h) = (map.width(), map.height());
    let r = radius_px as isize;
    Grid::from_fn(w, h, |x, y| {
        if map.is_touched(x, y) {
            return map.values.get(x, y);
        }
        let mut best: Option<(isize, f32)> = None;
        for dy in -r..=r {
            for dx in -r..=r {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let d2 = dx * dx + dy * dy;
                if d2 > r * r || !map.is_touched(nx as usize, ny as usize) {
                    continue;
                }
                if best.is_none_or(|(bd, _)| d2 < bd) {
                    best = Some((d2, map.values.get(nx as usize, ny as usize)));
                }
            }
        }
        best.map_or(0.0, |(_, v)| v)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(acc_g: f64) -> PositionedVibration {
        PositionedVibration {
            acc_g,
            x_mm: 0.0,
            y_mm: 0.0,
        }
    }

    fn pi(v: f64, x_mm: f64, y_mm: f64) -> PositionedIntensity {
        PositionedIntensity { v, x_mm, y_mm }
    }

    #[test]
    fn intensity_is_deviation_from_baseline() {
        let out = to_intensity(&[pv(1.0), pv(1.3), pv(0.6)], DEFAULT_BASELINE_G);
        assert_eq!(out[0].v, 0.0);
        assert!((out[1].v - 0.3).abs() < 1e-15);
        assert!((out[2].v - 0.4).abs() < 1e-15);
    }

    #[test]
    fn sort_orders_by_x_then_y() {
        let mut d = vec![pi(1.0, 2.0, 1.0), pi(2.0, 0.0, 5.0), pi(3.0, 2.0, 0.0), pi(4.0, 0.0, 5.0)];
        sort_by_position(&mut d);
        let vs: Vec<f64> = d.iter().map(|p| p.v).collect();
        // Equal keys keep input order.
        assert_eq!(vs, vec![2.0, 4.0, 3.0, 1.0]);
    }

    #[test]
    fn bin_means_and_empty_bins() {
        let d = vec![pi(0.2, 1.0, 0.1), pi(0.4, 1.0, 0.9), pi(0.5, 1.0, 2.5)];
        let lane = bin_taxels(&d, 1.0, 0.0, 4).unwrap();
        assert!((lane.values[0] - 0.3).abs() < 1e-15);
        assert_eq!(lane.counts, vec![2, 0, 1, 0]);
        assert_eq!(lane.values[3], 0.0);
        assert_eq!(lane.values[1], 0.0);
    }

    #[test]
    fn bin_rejects_foreign_lane_and_range() {
        assert!(matches!(
            bin_taxels(&[pi(0.1, 2.0, 0.5)], 1.0, 0.0, 2),
            Err(MapError::LaneMismatch { .. })
        ));
        assert!(matches!(
            bin_taxels(&[pi(0.1, 1.0, 2.0)], 1.0, 0.0, 2),
            Err(MapError::SampleOutOfRange { .. })
        ));
    }

    fn single_taxel(x: f64, y_center: f64, value: f64) -> TaxelLane {
        TaxelLane {
            x_mm: x,
            y0_mm: y_center - 0.5,
            pitch_mm: 1.0,
            values: vec![value],
            counts: vec![1],
        }
    }

    #[test]
    fn single_taxel_stripe() {
        let lanes = [single_taxel(100.0, 50.0, 0.2)];
        let map = rasterize(&lanes, &CameraProjection::identity(), 200, 100, 3).unwrap();
        for y in 0..100 {
            for x in 0..200 {
                let expect = if y == 50 && (97..=103).contains(&x) { 0.2f32 } else { 0.0 };
                assert_eq!(map.values().get(x, y), expect, "({x}, {y})");
                assert_eq!(map.is_touched(x, y), expect != 0.0);
            }
        }
    }

    #[test]
    fn overlapping_taxels_average() {
        let lanes = [single_taxel(100.0, 50.0, 0.2), single_taxel(102.0, 50.0, 0.4)];
        let map = rasterize(&lanes, &CameraProjection::identity(), 200, 100, 3).unwrap();
        assert!((map.values().get(101, 50) - 0.3).abs() < 1e-7);
        assert_eq!(map.values().get(97, 50), 0.2);
        assert_eq!(map.values().get(105, 50), 0.4);
    }

    #[test]
    fn all_out_of_frame() {
        let lanes = [single_taxel(1000.0, 50.0, 0.2)];
        assert_eq!(
            rasterize(&lanes, &CameraProjection::identity(), 200, 100, 3),
            Err(MapError::ProjectionOutOfFrame)
        );
    }

    #[test]
    fn empty_taxels_skipped() {
        let mut lane = single_taxel(100.0, 50.0, 0.0);
        lane.counts[0] = 0;
        assert_eq!(
            rasterize(&[lane], &CameraProjection::identity(), 200, 100, 3),
            Err(MapError::ProjectionOutOfFrame)
        );
    }

    fn map_of(values: &[f32]) -> VibrationMap {
        let g = Grid::from_vec(values.len(), 1, values.to_vec()).unwrap();
        VibrationMap::from_raw(g, vec![true; values.len()]).unwrap()
    }

    #[test]
    fn normalize_three_points() {
        let n = normalize(&map_of(&[2.0, 3.0, 4.0]));
        assert_eq!(n.values().data(), &[0.0, 0.5, 1.0]);
        assert!(n.is_normalized());
        assert_eq!(n.raw_stats(), map_of(&[2.0, 3.0, 4.0]).raw_stats());
    }

    #[test]
    fn normalize_constant() {
        let m = map_of(&[0.25; 5]);
        let n = normalize(&m);
        assert!(n.values().data().iter().all(|&v| v == 0.0));
        assert_eq!(n.raw_stats().unwrap().mean, 0.25);
    }

    #[test]
    fn untouched_stay_zero() {
        let g = Grid::from_vec(3, 1, vec![2.0f32, 0.0, 4.0]).unwrap();
        let m = VibrationMap::from_raw(g, vec![true, false, true]).unwrap();
        let n = normalize(&m);
        assert_eq!(n.values().data(), &[0.0, 0.0, 1.0]);
        assert_eq!(map_stats(&m).unwrap().v_scale, 2.0);
    }

    #[test]
    fn stats_fixtures() {
        let s = map_stats(&map_of(&[0.0, 1.0])).unwrap();
        assert_eq!((s.v_scale, s.v_mean, s.v_std), (1.0, 0.5, 0.5));
        let s = map_stats(&map_of(&[0.1; 7])).unwrap();
        assert_eq!((s.v_scale, s.v_mean, s.v_std), (0.0, 0.1f32 as f64, 0.0));
    }

    #[test]
    fn stats_need_touched_pixels() {
        let g = Grid::from_vec(2, 1, vec![0.0f32, 0.0]).unwrap();
        let m = VibrationMap::from_raw(g, vec![false, false]).unwrap();
        assert_eq!(map_stats(&m), Err(MapError::NoTouchedPixels));
    }

    #[test]
    fn csv_formatting() {
        let s = MapStats {
            v_scale: 0.666,
            v_mean: 0.065,
            v_std: 0.052,
        };
        assert_eq!(s.csv_line(), "0.666,0.065,0.052");
    }

    #[test]
    fn preview_rounds_half_up() {
        let p = preview_u8(&map_of(&[0.0, 0.5, 1.0]));
        assert_eq!(p.data(), &[0, 128, 255]);
    }

    #[test]
    fn fill_nearest_uses_closest_touched() {
        let g = Grid::from_vec(5, 1, vec![0.2f32, 0.0, 0.0, 0.0, 0.8]).unwrap();
        let m = VibrationMap::from_raw(g, vec![true, false, false, false, true]).unwrap();
        let f = fill_nearest(&m, 1);
        assert_eq!(f.data(), &[0.2, 0.2, 0.0, 0.8, 0.8]);
    }
}
