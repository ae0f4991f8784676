use nalgebra::Matrix3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taxelmap_core::geometry::{
    calibrate_planar, warp_perspective, CameraProjection, Correspondence, PixelPoint, Quad, WorldPoint,
};
use taxelmap_core::Grid;

/// A well-conditioned camera-like homography: ~8 px/mm with mild keystone.
fn reference_h() -> [f64; 9] {
    [8.1, 0.35, 412.0, -0.22, 7.6, 238.0, 1.1e-4, -2.3e-4, 1.0]
}

/// Scalar multiply-then-divide, written out by hand.
fn project_oracle(h: &[f64; 9], x: f64, y: f64) -> (f64, f64) {
    let u = h[0] * x + h[1] * y + h[2];
    let v = h[3] * x + h[4] * y + h[5];
    let w = h[6] * x + h[7] * y + h[8];
    (u / w, v / w)
}

fn correspondences(h: &[f64; 9], world: &[(f64, f64)]) -> Vec<Correspondence> {
    world
        .iter()
        .map(|&(x, y)| {
            let (u, v) = project_oracle(h, x, y);
            Correspondence {
                world: WorldPoint::new(x, y),
                pixel: PixelPoint::new(u, v),
            }
        })
        .collect()
}

fn dispersed_world(n: usize, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    (0..n)
        .map(|_| (rng.random_range(-60.0..60.0), rng.random_range(-40.0..40.0)))
        .collect()
}

#[test]
fn recovers_known_homography_from_12_points() {
    let h0 = reference_h();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pts = correspondences(&h0, &dispersed_world(12, &mut rng));
    let cal = calibrate_planar(&pts).unwrap();
    let h = cal.projection.to_row_major();
    for k in 0..9 {
        let rel = (h[k] - h0[k]).abs() / h0[k].abs().max(1e-3);
        assert!(rel <= 1e-9, "entry {k}: {} vs {}", h[k], h0[k]);
    }
    assert!(cal.rmse_px <= 1e-6);
}

#[test]
fn project_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let mut h: [f64; 9] = core::array::from_fn(|_| rng.random_range(-2.0..2.0));
        h[6] *= 1e-3;
        h[7] *= 1e-3;
        h[8] = 1.0;
        let Ok(proj) = CameraProjection::from_row_major(h) else {
            continue;
        };
        let (x, y) = (rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0));
        let (u, v) = project_oracle(&h, x, y);
        let p = proj.project(WorldPoint::new(x, y)).unwrap();
        let scale = 1.0 + u.abs().max(v.abs());
        assert!((p.u_px - u).abs() <= 1e-12 * scale);
        assert!((p.v_px - v).abs() <= 1e-12 * scale);
    }
}

#[test]
fn noisy_calibration_stays_sub_pixel() {
    use rand_distr::{Distribution, Normal};
    let h0 = reference_h();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut pts = correspondences(&h0, &dispersed_world(12, &mut rng));
    for c in &mut pts {
        c.pixel.u_px += noise.sample(&mut rng);
        c.pixel.v_px += noise.sample(&mut rng);
    }
    let cal = calibrate_planar(&pts).unwrap();
    assert!(cal.rmse_px <= 1.0, "rmse {}", cal.rmse_px);
}

#[test]
fn warp_square_rotation_matches_index_permutation() {
    let n = 9;
    let g = Grid::from_fn(n, n, |x, y| (x * 13 + y * 101) as f64 * 0.01);
    let m = (n - 1) as f64;
    // Corner order rotated by one: output top-left reads input top-right.
    let src = Quad::new([
        PixelPoint::new(m, 0.0),
        PixelPoint::new(m, m),
        PixelPoint::new(0.0, m),
        PixelPoint::new(0.0, 0.0),
    ])
    .unwrap();
    let out = warp_perspective(&g, &src, n, n).unwrap();
    for y in 0..n {
        for x in 0..n {
            assert_eq!(out.get(x, y), g.get(n - 1 - y, x), "({x}, {y})");
        }
    }
}

#[test]
fn warp_outside_source_is_zero() {
    let g = Grid::from_fn(10, 10, |_, _| 1.0f32);
    let src = Quad::new([
        PixelPoint::new(-5.0, -5.0),
        PixelPoint::new(14.0, -5.0),
        PixelPoint::new(14.0, 14.0),
        PixelPoint::new(-5.0, 14.0),
    ])
    .unwrap();
    let out = warp_perspective(&g, &src, 20, 20).unwrap();
    assert_eq!(out.get(0, 0), 0.0);
    assert_eq!(out.get(10, 10), 1.0);
}

fn invertible_h() -> impl Strategy<Value = [f64; 9]> {
    (
        prop::array::uniform6(-3.0f64..3.0),
        -1e-3f64..1e-3,
        -1e-3f64..1e-3,
    )
        .prop_map(|(a, g, h)| [a[0] + 4.0, a[1], a[2] * 100.0, a[3], a[4] + 4.0, a[5] * 100.0, g, h, 1.0])
}

proptest! {
    #[test]
    fn project_round_trip(h in invertible_h(), x in -1e4f64..1e4, y in -1e4f64..1e4) {
        let proj = CameraProjection::from_row_major(h).unwrap();
        let Ok(p) = proj.project(WorldPoint::new(x, y)) else { return Ok(()); };
        let back = proj.inverse().unwrap().project(WorldPoint::new(p.u_px, p.v_px));
        // Points near the horizon line are ill-conditioned; skip them.
        let w = h[6] * x + h[7] * y + 1.0;
        prop_assume!(w.abs() > 0.05);
        let back = back.unwrap();
        let tol = 1e-11 * (1.0 + x.abs() + y.abs());
        prop_assert!((back.u_px - x).abs() <= tol, "{} vs {}", back.u_px, x);
        prop_assert!((back.v_px - y).abs() <= tol, "{} vs {}", back.v_px, y);
    }

    #[test]
    fn calibration_is_order_invariant(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h0 = reference_h();
        let mut pts = correspondences(&h0, &dispersed_world(10, &mut rng));
        for c in &mut pts {
            c.pixel.u_px += rng.random_range(-0.3..0.3);
            c.pixel.v_px += rng.random_range(-0.3..0.3);
        }
        let a = calibrate_planar(&pts).unwrap().projection.to_row_major();
        pts.reverse();
        pts.rotate_left(seed as usize % 10);
        let b = calibrate_planar(&pts).unwrap().projection.to_row_major();
        for k in 0..9 {
            prop_assert!((a[k] - b[k]).abs() <= 1e-6 * a[k].abs().max(1e-3));
        }
    }

    #[test]
    fn noiseless_calibration_rmse(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = correspondences(&reference_h(), &dispersed_world(8 + (seed % 8) as usize, &mut rng));
        let cal = calibrate_planar(&pts).unwrap();
        prop_assert!(cal.rmse_px <= 1e-6);
    }

    #[test]
    fn identity_warp_is_identity(w in 2usize..24, h in 2usize..24, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Grid::from_fn(w, h, |_, _| rng.random::<f32>());
        let out = warp_perspective(&g, &Quad::full_frame(w, h).unwrap(), w, h).unwrap();
        prop_assert_eq!(out, g);
    }
}

#[test]
fn identity_matrix_constructor() {
    let p = CameraProjection::new(Matrix3::identity() * 3.0).unwrap();
    assert_eq!(p, CameraProjection::identity());
}
