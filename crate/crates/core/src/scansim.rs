//! Synthetic raster-scan rig.
//!
//! Stands in for the robot arm and stylus accelerometer: each lane is swept
//! back and forth along Y with a trapezoidal velocity profile while an
//! independently clocked accelerometer reads a known intensity field. The
//! output has the same shape as a real acquisition so the alignment and map
//! building code can be checked against ground truth.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScanError {
    #[error("invalid scan config: {0}")]
    InvalidConfig(&'static str),
    #[error("invalid intensity field: {0}")]
    InvalidField(&'static str),
    #[error("time {t} s outside pass duration [0, {duration}] s")]
    TOutOfRange { t: f64, duration: f64 },
}

/// Ground-truth vibration intensity (g) over the object plane.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum IntensityField {
    Constant { value: f64 },
    /// Square cells of side `period_mm` anchored at the origin; the cell
    /// containing the origin reads `lo`.
    Checkerboard { period_mm: f64, lo: f64, hi: f64 },
    /// `amplitude · (1 + sin(2π y / period_mm)) / 2`, varying along Y only.
    Sinusoid { period_mm: f64, amplitude: f64 },
    /// `lo` for `y < edge_y_mm`, `hi` otherwise.
    StepEdge { edge_y_mm: f64, lo: f64, hi: f64 },
}

impl IntensityField {
    pub fn validate(&self) -> Result<(), ScanError> {
        let non_neg = |v: f64| v.is_finite() && v >= 0.0;
        let ok = match *self {
            IntensityField::Constant { value } => non_neg(value),
            IntensityField::Checkerboard { period_mm, lo, hi } => {
                period_mm.is_finite() && period_mm > 0.0 && non_neg(lo) && non_neg(hi)
            }
            IntensityField::Sinusoid {
                period_mm,
                amplitude,
            } => period_mm.is_finite() && period_mm > 0.0 && non_neg(amplitude),
            IntensityField::StepEdge { edge_y_mm, lo, hi } => {
                edge_y_mm.is_finite() && non_neg(lo) && non_neg(hi)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(ScanError::InvalidField(
                "levels must be finite and non-negative, periods positive",
            ))
        }
    }

    pub fn eval(&self, x_mm: f64, y_mm: f64) -> f64 {
        match *self {
            IntensityField::Constant { value } => value,
            IntensityField::Checkerboard { period_mm, lo, hi } => {
                let cx = libm::floor(x_mm / period_mm) as i64;
                let cy = libm::floor(y_mm / period_mm) as i64;
                if (cx + cy).rem_euclid(2) == 0 {
                    lo
                } else {
                    hi
                }
            }
            IntensityField::Sinusoid {
                period_mm,
                amplitude,
            } => {
                let phase = 2.0 * core::f64::consts::PI * y_mm / period_mm;
                amplitude * (1.0 + libm::sin(phase)) / 2.0
            }
            IntensityField::StepEdge { edge_y_mm, lo, hi } => {
                if y_mm < edge_y_mm {
                    lo
                } else {
                    hi
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Direction {
    #[cfg_attr(feature = "serde", serde(rename = "+Y"))]
    PositiveY,
    #[cfg_attr(feature = "serde", serde(rename = "-Y"))]
    NegativeY,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::PositiveY => 1.0,
            Direction::NegativeY => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ScanConfig {
    pub x_origin_mm: f64,
    pub y_start_mm: f64,
    /// Total travel along Y per pass.
    pub y_len_mm: f64,
    pub lanes: u32,
    pub lane_pitch_mm: f64,
    pub passes_per_lane: u32,
    pub cruise_speed_mm_s: f64,
    pub accel_mm_s2: f64,
    pub robot_rate_hz: f64,
    pub accel_rate_hz: f64,
    /// Accelerometer clock minus robot clock.
    pub clock_offset_s: f64,
    pub noise_sigma_g: f64,
    pub seed: u64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            x_origin_mm: 0.0,
            y_start_mm: 0.0,
            y_len_mm: 40.0,
            lanes: 20,
            lane_pitch_mm: 2.0,
            passes_per_lane: 8,
            cruise_speed_mm_s: 20.0,
            accel_mm_s2: 200.0,
            robot_rate_hz: 125.0,
            accel_rate_hz: 1000.0,
            clock_offset_s: 0.003,
            noise_sigma_g: 0.01,
            seed: 0,
        }
    }
}

/// Timing of one trapezoidal sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassTiming {
    /// Duration of the acceleration (and of the deceleration) ramp.
    pub ramp_s: f64,
    /// Duration of the constant-velocity phase.
    pub cruise_s: f64,
    /// Distance covered by one ramp.
    pub ramp_mm: f64,
}

impl PassTiming {
    pub fn duration_s(&self) -> f64 {
        2.0 * self.ramp_s + self.cruise_s
    }

    /// Analytic `[start, end]` of the constant-velocity phase.
    pub fn cruise_interval(&self) -> (f64, f64) {
        (self.ramp_s, self.ramp_s + self.cruise_s)
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<(), ScanError> {
        use ScanError::InvalidConfig as E;
        let finite = [
            self.x_origin_mm,
            self.y_start_mm,
            self.y_len_mm,
            self.lane_pitch_mm,
            self.cruise_speed_mm_s,
            self.accel_mm_s2,
            self.robot_rate_hz,
            self.accel_rate_hz,
            self.clock_offset_s,
            self.noise_sigma_g,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(E("all numeric fields must be finite"));
        }
        if self.y_len_mm <= 0.0 {
            return Err(E("y_len_mm must be positive"));
        }
        if self.lanes == 0 {
            return Err(E("lanes must be at least 1"));
        }
        if self.passes_per_lane == 0 || !self.passes_per_lane.is_multiple_of(2) {
            return Err(E("passes_per_lane must be a positive even number"));
        }
        if self.robot_rate_hz <= 0.0 || self.accel_rate_hz <= 0.0 {
            return Err(E("sample rates must be positive"));
        }
        if self.cruise_speed_mm_s <= 0.0 || self.accel_mm_s2 <= 0.0 {
            return Err(E("cruise speed and acceleration must be positive"));
        }
        if self.noise_sigma_g < 0.0 {
            return Err(E("noise_sigma_g must be non-negative"));
        }
        let ramp_mm = self.cruise_speed_mm_s * self.cruise_speed_mm_s / (2.0 * self.accel_mm_s2);
        if 2.0 * ramp_mm >= self.y_len_mm {
            return Err(E("travel too short to reach cruise speed"));
        }
        Ok(())
    }

    pub fn timing(&self) -> PassTiming {
        let v = self.cruise_speed_mm_s;
        let a = self.accel_mm_s2;
        let ramp_mm = v * v / (2.0 * a);
        PassTiming {
            ramp_s: v / a,
            cruise_s: (self.y_len_mm - 2.0 * ramp_mm) / v,
            ramp_mm,
        }
    }

    pub fn lane_x(&self, lane_index: u32) -> f64 {
        self.x_origin_mm + lane_index as f64 * self.lane_pitch_mm
    }

    /// Passes alternate +Y, −Y, +Y, … within a lane.
    pub fn pass_direction(&self, pass_index: u32) -> Direction {
        if pass_index.is_multiple_of(2) {
            Direction::PositiveY
        } else {
            Direction::NegativeY
        }
    }
}

/// Distance travelled `t` seconds into a pass.
fn travelled(t: f64, cfg: &ScanConfig, timing: &PassTiming) -> f64 {
    let a = cfg.accel_mm_s2;
    let v = cfg.cruise_speed_mm_s;
    let (cruise_start, cruise_end) = timing.cruise_interval();
    if t <= cruise_start {
        0.5 * a * t * t
    } else if t <= cruise_end {
        timing.ramp_mm + v * (t - cruise_start)
    } else {
        let remaining = timing.duration_s() - t;
        cfg.y_len_mm - 0.5 * a * remaining * remaining
    }
}

/// Y position of the stylus `t` seconds into a pass.
pub fn trapezoid_position(t: f64, cfg: &ScanConfig, direction: Direction) -> Result<f64, ScanError> {
    cfg.validate()?;
    let timing = cfg.timing();
    let duration = timing.duration_s();
    if !(t >= 0.0 && t <= duration) {
        return Err(ScanError::TOutOfRange { t, duration });
    }
    Ok(position_unchecked(t, cfg, &timing, direction))
}

fn position_unchecked(t: f64, cfg: &ScanConfig, timing: &PassTiming, direction: Direction) -> f64 {
    let s = travelled(t, cfg, timing);
    match direction {
        Direction::PositiveY => cfg.y_start_mm + s,
        Direction::NegativeY => cfg.y_start_mm + cfg.y_len_mm - s,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RobotSample {
    pub t: f64,
    pub x_mm: f64,
    pub y_mm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AccelSample {
    pub t: f64,
    pub acc_g: f64,
}

/// One straight-line sweep at fixed X. Timestamps are pass-local: the robot
/// clock reads 0 at the start of motion.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanPass {
    pub lane_index: u32,
    pub pass_index: u32,
    pub x_mm: f64,
    pub direction: Direction,
    pub robot: Vec<RobotSample>,
    pub accel: Vec<AccelSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanSession {
    pub config: ScanConfig,
    pub passes: Vec<ScanPass>,
}

/// Number of samples taken at `rate_hz` over `[0, duration]`.
pub fn sample_count(duration_s: f64, rate_hz: f64) -> usize {
    libm::floor(duration_s * rate_hz) as usize + 1
}

/// Simulates one pass. The random stream is derived from
/// `(seed, lane_index, pass_index)` only, so passes can be generated in any
/// order or in parallel.
pub fn simulate_pass(
    field: &IntensityField,
    cfg: &ScanConfig,
    lane_index: u32,
    pass_index: u32,
) -> Result<ScanPass, ScanError> {
    cfg.validate()?;
    field.validate()?;
    let timing = cfg.timing();
    let duration = timing.duration_s();
    let direction = cfg.pass_direction(pass_index);
    let x_mm = cfg.lane_x(lane_index);

    let robot = (0..sample_count(duration, cfg.robot_rate_hz))
        .map(|k| {
            let t = k as f64 / cfg.robot_rate_hz;
            RobotSample {
                t,
                x_mm,
                y_mm: position_unchecked(t, cfg, &timing, direction),
            }
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(lane_index as u64 * cfg.passes_per_lane as u64 + pass_index as u64);
    let noise = (cfg.noise_sigma_g > 0.0)
        .then(|| Normal::new(0.0, cfg.noise_sigma_g).expect("sigma validated"));

    let accel = (0..sample_count(duration, cfg.accel_rate_hz))
        .map(|k| {
            let tau = k as f64 / cfg.accel_rate_hz;
            let y = position_unchecked(tau, cfg, &timing, direction);
            let magnitude = field.eval(x_mm, y);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let n = noise.map_or(0.0, |d| d.sample(&mut rng));
            AccelSample {
                t: tau + cfg.clock_offset_s,
                acc_g: 1.0 + sign * magnitude + n,
            }
        })
        .collect();

    Ok(ScanPass {
        lane_index,
        pass_index,
        x_mm,
        direction,
        robot,
        accel,
    })
}

/// Simulates a full session of `lanes × passes_per_lane` passes, lane-major.
pub fn simulate_session(field: &IntensityField, cfg: &ScanConfig) -> Result<ScanSession, ScanError> {
    cfg.validate()?;
    field.validate()?;
    let mut passes = Vec::with_capacity((cfg.lanes * cfg.passes_per_lane) as usize);
    for lane in 0..cfg.lanes {
        for pass in 0..cfg.passes_per_lane {
            passes.push(simulate_pass(field, cfg, lane, pass)?);
        }
    }
    Ok(ScanSession {
        config: cfg.clone(),
        passes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ScanConfig {
        ScanConfig {
            y_len_mm: 100.0,
            lanes: 2,
            cruise_speed_mm_s: 10.0,
            accel_mm_s2: 100.0,
            noise_sigma_g: 0.0,
            ..ScanConfig::default()
        }
    }

    #[test]
    fn position_endpoints_and_midpoint() {
        let cfg = small_cfg();
        let d = cfg.timing().duration_s();
        assert_eq!(trapezoid_position(0.0, &cfg, Direction::PositiveY).unwrap(), 0.0);
        let mid = trapezoid_position(d / 2.0, &cfg, Direction::PositiveY).unwrap();
        assert!((mid - 50.0).abs() < 1e-12);
        let end = trapezoid_position(d, &cfg, Direction::PositiveY).unwrap();
        assert!((end - 100.0).abs() < 1e-12);
        assert_eq!(trapezoid_position(0.0, &cfg, Direction::NegativeY).unwrap(), 100.0);
    }

    #[test]
    fn position_out_of_range() {
        let cfg = small_cfg();
        assert!(matches!(
            trapezoid_position(-0.1, &cfg, Direction::PositiveY),
            Err(ScanError::TOutOfRange { .. })
        ));
        let d = cfg.timing().duration_s();
        assert!(trapezoid_position(d + 1e-6, &cfg, Direction::PositiveY).is_err());
    }

    #[test]
    fn config_rejects_odd_passes_and_short_travel() {
        let mut cfg = small_cfg();
        cfg.passes_per_lane = 7;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.y_len_mm = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.accel_rate_hz = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn checkerboard_cells() {
        let f = IntensityField::Checkerboard {
            period_mm: 10.0,
            lo: 0.1,
            hi: 0.5,
        };
        assert_eq!(f.eval(0.0, 0.0), 0.1);
        assert_eq!(f.eval(10.0, 0.0), 0.5);
        assert_eq!(f.eval(9.999, 10.0), 0.5);
        assert_eq!(f.eval(15.0, 15.0), 0.1);
        assert_eq!(f.eval(-1.0, 0.5), 0.5);
    }

    #[test]
    fn negative_field_rejected() {
        let f = IntensityField::Constant { value: -0.1 };
        assert!(simulate_session(&f, &small_cfg()).is_err());
    }

    #[test]
    fn flat_field_reads_baseline() {
        let s = simulate_session(&IntensityField::Constant { value: 0.0 }, &small_cfg()).unwrap();
        assert!(s.passes.iter().flat_map(|p| &p.accel).all(|a| a.acc_g == 1.0));
    }

    #[test]
    fn pass_x_follows_lane_pitch() {
        let mut cfg = small_cfg();
        cfg.x_origin_mm = 3.0;
        let s = simulate_session(&IntensityField::Constant { value: 0.0 }, &cfg).unwrap();
        assert_eq!(s.passes.len(), 16);
        for p in &s.passes {
            assert_eq!(p.x_mm, 3.0 + 2.0 * p.lane_index as f64);
            assert!(p.robot.iter().all(|r| r.x_mm == p.x_mm));
        }
    }
}
