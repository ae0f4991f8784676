//! Alignment of robot positions and accelerometer samples.
//!
//! For each pass: locate the constant-velocity segment from the robot Y
//! samples, fit `y = m·t + b` to it by least squares, select the
//! accelerometer samples inside that time window and assign each one a world
//! position from the fitted line.

use alloc::vec::Vec;

use thiserror::Error;

use crate::scansim::{AccelSample, Direction, RobotSample, ScanPass};

/// Default weight for the cruise-window targets `Ȳ ± w·l`.
pub const DEFAULT_W: f64 = 0.45;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlignError {
    #[error("w = {0} outside (0, 0.5]")]
    WOutOfRange(f64),
    #[error("need at least {needed} robot samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("cruise window has no distinct timestamps")]
    DegenerateWindow,
    #[error("accelerometer window is empty (j1 = {j1}, j2 = {j2})")]
    EmptyWindow { j1: i64, j2: i64 },
    #[error("{stream} timestamps are not strictly increasing at index {index}")]
    NonMonotonicTimestamps { stream: &'static str, index: usize },
    #[error("robot did not move along Y")]
    NoNetMotion,
    #[error("fitted slope {slope} disagrees with the pass direction")]
    DirectionMismatch { slope: f64 },
    #[error("non-finite sample value")]
    NonFinite,
}

/// Constant-velocity segment of a pass, with `i1` the start index and `i2`
/// the end index in time order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CruiseWindow {
    pub i1: usize,
    pub i2: usize,
    pub t_i1: f64,
    pub t_i2: f64,
    pub direction: Direction,
}

/// Fitted motion line over the cruise window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    /// Slope, mm/s.
    pub m: f64,
    /// Intercept, mm.
    pub b: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub rmse_mm: f64,
}

impl LinearFit {
    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        self.m * t + self.b
    }
}

/// Inclusive accelerometer index range `[j1, j2]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccelWindow {
    pub j1: usize,
    pub j2: usize,
}

impl AccelWindow {
    pub fn sample_count(&self) -> usize {
        self.j2 - self.j1 + 1
    }
}

/// An accelerometer reading paired with the world position it was taken at.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PositionedVibration {
    pub acc_g: f64,
    pub x_mm: f64,
    pub y_mm: f64,
}

/// Index of the first element minimizing `|value(i) − target|`.
fn argmin_abs(len: usize, target: f64, value: impl Fn(usize) -> f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for i in 0..len {
        let d = libm::fabs(value(i) - target);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Finds the constant-velocity segment of a pass from the robot Y samples.
///
/// `Ȳ` is the arithmetic mean of all Y samples and `l_mm` the commanded travel.
/// The samples nearest `Ȳ − w·l` and `Ȳ + w·l` bound the window; on a −Y
/// pass the roles are swapped so that `i1` always precedes `i2` in time.
pub fn cruise_indices(robot: &[RobotSample], l_mm: f64, w: f64) -> Result<CruiseWindow, AlignError> {
    if !(w > 0.0 && w <= 0.5) {
        return Err(AlignError::WOutOfRange(w));
    }
    if robot.len() < 4 {
        return Err(AlignError::TooFewSamples {
            needed: 4,
            got: robot.len(),
        });
    }
    if robot.iter().any(|r| !(r.t.is_finite() && r.y_mm.is_finite())) || !l_mm.is_finite() {
        return Err(AlignError::NonFinite);
    }
    let net = robot[robot.len() - 1].y_mm - robot[0].y_mm;
    let direction = if net > 0.0 {
        Direction::PositiveY
    } else if net < 0.0 {
        Direction::NegativeY
    } else {
        return Err(AlignError::NoNetMotion);
    };

    let y_bar = robot.iter().map(|r| r.y_mm).sum::<f64>() / robot.len() as f64;
    let low = argmin_abs(robot.len(), y_bar - w * l_mm, |i| robot[i].y_mm);
    let high = argmin_abs(robot.len(), y_bar + w * l_mm, |i| robot[i].y_mm);
    let (i1, i2) = match direction {
        Direction::PositiveY => (low, high),
        Direction::NegativeY => (high, low),
    };
    Ok(CruiseWindow {
        i1,
        i2,
        t_i1: robot[i1].t,
        t_i2: robot[i2].t,
        direction,
    })
}

/// Ordinary least squares of Y on t over the robot samples inside `win`.
pub fn fit_cruise_line(robot: &[RobotSample], win: &CruiseWindow) -> Result<LinearFit, AlignError> {
    let lo = win.i1.min(win.i2);
    let hi = win.i1.max(win.i2);
    if hi >= robot.len() {
        return Err(AlignError::TooFewSamples {
            needed: hi + 1,
            got: robot.len(),
        });
    }
    let pts = &robot[lo..=hi];
    let n = pts.len() as f64;
    let t_mean = pts.iter().map(|r| r.t).sum::<f64>() / n;
    let y_mean = pts.iter().map(|r| r.y_mm).sum::<f64>() / n;
    let (mut stt, mut sty) = (0.0, 0.0);
    for r in pts {
        let dt = r.t - t_mean;
        stt += dt * dt;
        sty += dt * (r.y_mm - y_mean);
    }
    if !(stt > 0.0) {
        return Err(AlignError::DegenerateWindow);
    }
    let m = sty / stt;
    let b = y_mean - m * t_mean;
    let sse: f64 = pts
        .iter()
        .map(|r| {
            let e = r.y_mm - (m * r.t + b);
            e * e
        })
        .sum();
    let (t_lo, t_hi) = if win.t_i1 <= win.t_i2 {
        (win.t_i1, win.t_i2)
    } else {
        (win.t_i2, win.t_i1)
    };
    Ok(LinearFit {
        m,
        b,
        t_lo,
        t_hi,
        rmse_mm: libm::sqrt(sse / n),
    })
}

/// Accelerometer indices bounding the cruise window: the sample after the
/// one nearest `t_i1` through the sample before the one nearest `t_i2`.
pub fn accel_window(accel: &[AccelSample], t_i1: f64, t_i2: f64) -> Result<AccelWindow, AlignError> {
    if accel.is_empty() {
        return Err(AlignError::EmptyWindow { j1: 1, j2: -1 });
    }
    let j1 = argmin_abs(accel.len(), t_i1, |j| accel[j].t) as i64 + 1;
    let j2 = argmin_abs(accel.len(), t_i2, |j| accel[j].t) as i64 - 1;
    if j1 > j2 || j2 < 0 || j1 >= accel.len() as i64 {
        return Err(AlignError::EmptyWindow { j1, j2 });
    }
    Ok(AccelWindow {
        j1: j1 as usize,
        j2: j2 as usize,
    })
}

/// Assigns each accelerometer sample in `win` the position `(x_mm, m·t + b)`.
pub fn position_accels(
    accel: &[AccelSample],
    win: AccelWindow,
    fit: &LinearFit,
    x_mm: f64,
) -> Vec<PositionedVibration> {
    accel[win.j1..=win.j2]
        .iter()
        .map(|a| PositionedVibration {
            acc_g: a.acc_g,
            x_mm,
            y_mm: fit.eval(a.t),
        })
        .collect()
}

fn check_increasing(stream: &'static str, ts: impl Iterator<Item = f64>) -> Result<(), AlignError> {
    let mut prev = f64::NEG_INFINITY;
    for (index, t) in ts.enumerate() {
        if !t.is_finite() {
            return Err(AlignError::NonFinite);
        }
        if !(t > prev) {
            return Err(AlignError::NonMonotonicTimestamps { stream, index });
        }
        prev = t;
    }
    Ok(())
}

/// Everything the alignment stage learned about one pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PassAlignment {
    pub cruise: CruiseWindow,
    pub fit: LinearFit,
    pub window: AccelWindow,
    pub samples: Vec<PositionedVibration>,
}

/// Runs the full alignment chain on one pass after validating its streams.
pub fn align_pass(pass: &ScanPass, l_mm: f64, w: f64) -> Result<PassAlignment, AlignError> {
    check_increasing("robot", pass.robot.iter().map(|r| r.t))?;
    check_increasing("accelerometer", pass.accel.iter().map(|a| a.t))?;
    if pass.accel.iter().any(|a| !a.acc_g.is_finite()) {
        return Err(AlignError::NonFinite);
    }
    let cruise = cruise_indices(&pass.robot, l_mm, w)?;
    let fit = fit_cruise_line(&pass.robot, &cruise)?;
    if fit.m * cruise.direction.sign() <= 0.0 {
        return Err(AlignError::DirectionMismatch { slope: fit.m });
    }
    let window = accel_window(&pass.accel, cruise.t_i1, cruise.t_i2)?;
    let samples = position_accels(&pass.accel, window, &fit, pass.x_mm);
    Ok(PassAlignment {
        cruise,
        fit,
        window,
        samples,
    })
}
