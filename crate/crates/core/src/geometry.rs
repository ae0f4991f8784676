//! Planar camera calibration and projective warping.
//!
//! The object is treated as the plane `Z = 0` in robot base coordinates, so
//! the full pinhole model `K [R | t]` collapses to one 3×3 homography `H`
//! acting on `(x_mm, y_mm, 1)`. The per-point projective scale is the third
//! homogeneous coordinate of `H · p`.
//!
//! A projection is only valid for the object height it was calibrated at;
//! callers carry one [`CameraProjection`] per dataset.

use alloc::vec::Vec;

use nalgebra::{DMatrix, Matrix3, SMatrix, SVector, Vector3};
use thiserror::Error;

use crate::grid::{Grid, Texel};

/// Minimum number of correspondences accepted by [`calibrate_planar`].
pub const MIN_CORRESPONDENCES: usize = 8;

/// Homogeneous divisors smaller than this are treated as points at infinity.
const INFINITY_EPS: f64 = 1e-12;

/// Sample coordinates within this distance of an integer snap onto it.
const SNAP_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("need at least {MIN_CORRESPONDENCES} correspondences, got {0}")]
    FewerThan8Points(usize),
    #[error("degenerate point configuration (design matrix rank < 8)")]
    DegenerateConfiguration,
    #[error("point maps to infinity (homogeneous scale {0:e})")]
    PointAtInfinity(f64),
    #[error("projection matrix is singular or has h[2][2] = 0")]
    SingularProjection,
    #[error("quadrilateral is not strictly convex")]
    NonConvexQuad,
    #[error("output size must be at least 2×2, got {0}×{1}")]
    OutputTooSmall(usize, usize),
    #[error("non-finite coordinate")]
    NonFinite,
}

/// A point on the object plane, in millimetres of robot base coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WorldPoint {
    pub x_mm: f64,
    pub y_mm: f64,
}

impl WorldPoint {
    pub const fn new(x_mm: f64, y_mm: f64) -> Self {
        Self { x_mm, y_mm }
    }
}

/// An image location in pixels (`u` right, `v` down).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PixelPoint {
    pub u_px: f64,
    pub v_px: f64,
}

impl PixelPoint {
    pub const fn new(u_px: f64, v_px: f64) -> Self {
        Self { u_px, v_px }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Correspondence {
    pub world: WorldPoint,
    pub pixel: PixelPoint,
}

/// Homography from the object plane to image pixels, normalized so that
/// `h[2][2] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraProjection {
    h: Matrix3<f64>,
}

impl CameraProjection {
    pub fn identity() -> Self {
        Self {
            h: Matrix3::identity(),
        }
    }

    /// Builds a projection from any nonzero multiple of a nonsingular matrix.
    pub fn new(h: Matrix3<f64>) -> Result<Self, GeometryError> {
        if h.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let s = h[(2, 2)];
        if s.abs() < INFINITY_EPS * h.abs().max() {
            return Err(GeometryError::SingularProjection);
        }
        let h = h / s;
        let det = h.determinant();
        if !det.is_finite() || det.abs() < 1e-300 {
            return Err(GeometryError::SingularProjection);
        }
        Ok(Self { h })
    }

    /// Row-major `[h00, h01, h02, h10, …, h22]`.
    pub fn from_row_major(m: [f64; 9]) -> Result<Self, GeometryError> {
        Self::new(Matrix3::from_row_slice(&m))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 3 + c] = self.h[(r, c)];
            }
        }
        out
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.h
    }

    pub fn inverse(&self) -> Result<Self, GeometryError> {
        let inv = self
            .h
            .try_inverse()
            .ok_or(GeometryError::SingularProjection)?;
        Self::new(inv)
    }

    /// Applies the projection to a world point.
    pub fn project(&self, p: WorldPoint) -> Result<PixelPoint, GeometryError> {
        let (u, v) = apply_homography(&self.h, p.x_mm, p.y_mm)?;
        Ok(PixelPoint::new(u, v))
    }
}

/// Free-function form of [`CameraProjection::project`].
pub fn project(proj: &CameraProjection, p: WorldPoint) -> Result<PixelPoint, GeometryError> {
    proj.project(p)
}

fn apply_homography(h: &Matrix3<f64>, x: f64, y: f64) -> Result<(f64, f64), GeometryError> {
    let q = h * Vector3::new(x, y, 1.0);
    let w = q[2];
    if !(w.abs() >= INFINITY_EPS) {
        return Err(GeometryError::PointAtInfinity(w));
    }
    Ok((q[0] / w, q[1] / w))
}

/// Result of [`calibrate_planar`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub projection: CameraProjection,
    /// Root-mean-square reprojection error over the input points, in pixels.
    pub rmse_px: f64,
}

/// Similarity transform moving the centroid to the origin and the mean
/// distance from it to √2.
fn normalizing_transform(pts: &[(f64, f64)]) -> Result<Matrix3<f64>, GeometryError> {
    let n = pts.len() as f64;
    let (sx, sy) = pts
        .iter()
        .fold((0.0, 0.0), |(ax, ay), &(x, y)| (ax + x, ay + y));
    let (cx, cy) = (sx / n, sy / n);
    let mean_dist = pts
        .iter()
        .map(|&(x, y)| libm::hypot(x - cx, y - cy))
        .sum::<f64>()
        / n;
    if !(mean_dist > 0.0) || !mean_dist.is_finite() {
        return Err(GeometryError::DegenerateConfiguration);
    }
    let s = core::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

/// Estimates the plane-to-image homography with the normalized direct linear
/// transform, minimizing algebraic error over all correspondences.
pub fn calibrate_planar(points: &[Correspondence]) -> Result<Calibration, GeometryError> {
    if points.len() < MIN_CORRESPONDENCES {
        return Err(GeometryError::FewerThan8Points(points.len()));
    }
    if points.iter().any(|c| {
        !(c.world.x_mm.is_finite()
            && c.world.y_mm.is_finite()
            && c.pixel.u_px.is_finite()
            && c.pixel.v_px.is_finite())
    }) {
        return Err(GeometryError::NonFinite);
    }

    let world: Vec<(f64, f64)> = points.iter().map(|c| (c.world.x_mm, c.world.y_mm)).collect();
    let pixel: Vec<(f64, f64)> = points.iter().map(|c| (c.pixel.u_px, c.pixel.v_px)).collect();
    let t_world = normalizing_transform(&world)?;
    let t_pixel = normalizing_transform(&pixel)?;

    let mut a = DMatrix::<f64>::zeros(2 * points.len(), 9);
    for (i, (&(x, y), &(u, v))) in world.iter().zip(&pixel).enumerate() {
        let pw = t_world * Vector3::new(x, y, 1.0);
        let pp = t_pixel * Vector3::new(u, v, 1.0);
        let (x, y, u, v) = (pw[0], pw[1], pp[0], pp[1]);
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, -u]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, -v]);
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::DegenerateConfiguration)?;
    let sv = &svd.singular_values;

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
    let smallest = order[0];
    let second = order[1];
    let largest = order[order.len() - 1];
    // One null direction is expected; a second one means rank < 8.
    if !(sv[second] > 1e-10 * sv[largest]) {
        return Err(GeometryError::DegenerateConfiguration);
    }

    let hv = v_t.row(smallest);
    let h_norm = Matrix3::new(hv[0], hv[1], hv[2], hv[3], hv[4], hv[5], hv[6], hv[7], hv[8]);
    let t_pixel_inv = t_pixel
        .try_inverse()
        .ok_or(GeometryError::DegenerateConfiguration)?;
    let h = t_pixel_inv * h_norm * t_world;
    let projection =
        CameraProjection::new(h).map_err(|_| GeometryError::DegenerateConfiguration)?;

    let rmse_px = reprojection_rmse(&projection, points)?;
    Ok(Calibration {
        projection,
        rmse_px,
    })
}

/// Root-mean-square pixel distance between projected world points and their
/// observed pixels.
pub fn reprojection_rmse(
    proj: &CameraProjection,
    points: &[Correspondence],
) -> Result<f64, GeometryError> {
    if points.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for c in points {
        let p = proj.project(c.world)?;
        let du = p.u_px - c.pixel.u_px;
        let dv = p.v_px - c.pixel.v_px;
        sum += du * du + dv * dv;
    }
    Ok(libm::sqrt(sum / points.len() as f64))
}

/// Four image corners in top-left, top-right, bottom-right, bottom-left order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad {
    corners: [PixelPoint; 4],
}

impl Quad {
    pub fn new(corners: [PixelPoint; 4]) -> Result<Self, GeometryError> {
        if corners
            .iter()
            .any(|c| !(c.u_px.is_finite() && c.v_px.is_finite()))
        {
            return Err(GeometryError::NonFinite);
        }
        let mut sign = 0.0f64;
        for i in 0..4 {
            let a = corners[i];
            let b = corners[(i + 1) % 4];
            let c = corners[(i + 2) % 4];
            let cross = (b.u_px - a.u_px) * (c.v_px - b.v_px) - (b.v_px - a.v_px) * (c.u_px - b.u_px);
            if cross == 0.0 || (sign != 0.0 && cross.signum() != sign) {
                return Err(GeometryError::NonConvexQuad);
            }
            sign = cross.signum();
        }
        Ok(Self { corners })
    }

    /// The full extent of a `width` × `height` grid.
    pub fn full_frame(width: usize, height: usize) -> Result<Self, GeometryError> {
        let (w, h) = ((width as f64) - 1.0, (height as f64) - 1.0);
        Self::new([
            PixelPoint::new(0.0, 0.0),
            PixelPoint::new(w, 0.0),
            PixelPoint::new(w, h),
            PixelPoint::new(0.0, h),
        ])
    }

    pub fn corners(&self) -> &[PixelPoint; 4] {
        &self.corners
    }
}

/// Exact homography taking four source points onto four destination points.
fn homography_from_4(
    src: &[(f64, f64); 4],
    dst: &[(f64, f64); 4],
) -> Result<Matrix3<f64>, GeometryError> {
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let (x, y) = src[i];
        let (u, v) = dst[i];
        let r = 2 * i;
        let row0 = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y];
        let row1 = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y];
        for c in 0..8 {
            a[(r, c)] = row0[c];
            a[(r + 1, c)] = row1[c];
        }
        b[r] = u;
        b[r + 1] = v;
    }
    let sol = a
        .lu()
        .solve(&b)
        .ok_or(GeometryError::SingularProjection)?;
    Ok(Matrix3::new(
        sol[0], sol[1], sol[2], sol[3], sol[4], sol[5], sol[6], sol[7], 1.0,
    ))
}

#[inline]
fn snap(v: f64) -> f64 {
    let r = libm::round(v);
    if libm::fabs(v - r) <= SNAP_EPS {
        r
    } else {
        v
    }
}

/// Rectifies the region `src` of `grid` onto an `out_w` × `out_h` rectangle.
///
/// Output pixel `(i, j)` samples the input at `H·(i, j)` where `H` maps the
/// output corners onto the corners of `src` in declared order. Sampling is
/// bilinear; samples outside the input are 0.
pub fn warp_perspective<T: Texel>(
    grid: &Grid<T>,
    src: &Quad,
    out_w: usize,
    out_h: usize,
) -> Result<Grid<T>, GeometryError> {
    if out_w < 2 || out_h < 2 {
        return Err(GeometryError::OutputTooSmall(out_w, out_h));
    }
    let (w, h) = ((out_w - 1) as f64, (out_h - 1) as f64);
    let rect = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
    let c = src.corners();
    let quad = [
        (c[0].u_px, c[0].v_px),
        (c[1].u_px, c[1].v_px),
        (c[2].u_px, c[2].v_px),
        (c[3].u_px, c[3].v_px),
    ];
    let hq = homography_from_4(&rect, &quad)?;

    let mut out = Grid::new(out_w, out_h);
    for j in 0..out_h {
        for i in 0..out_w {
            let value = match apply_homography(&hq, i as f64, j as f64) {
                Ok((x, y)) => grid.sample_bilinear(snap(x), snap(y)).unwrap_or(0.0),
                Err(_) => 0.0,
            };
            out.set(i, j, T::from_f64(value));
        }
    }
    Ok(out)
}
