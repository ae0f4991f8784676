//! Dense row-major 2D grids and bilinear sampling.

use alloc::vec;
use alloc::vec::Vec;

/// Scalar types that can be stored in a [`Grid`] and resampled.
pub trait Texel: Copy + Default + PartialEq {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Texel for f64 {
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
}

impl Texel for f32 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Texel for u8 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        libm::floor(v + 0.5).clamp(0.0, 255.0) as u8
    }
}

/// A `width` × `height` grid stored row-major (`data[y * width + x]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Texel> Grid<T> {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![T::default(); width * height],
        }
    }

    /// Wraps existing row-major data. Returns `None` on a size mismatch.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == width * height).then_some(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn map<U: Texel>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Bilinear sample at continuous pixel coordinates, pixel centers on
    /// integers. Returns `None` outside `[0, width-1] × [0, height-1]`.
    ///
    /// Neighbours with zero weight are never read, so sampling exactly on a
    /// node returns the stored value bit for bit.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        if self.width == 0 || self.height == 0 {
            return None;
        }
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if !(x >= 0.0 && x <= max_x && y >= 0.0 && y <= max_y) {
            return None;
        }
        let x0 = libm::floor(x);
        let y0 = libm::floor(y);
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as usize, y0 as usize);

        let row = |yy: usize| -> f64 {
            let a = self.get(x0, yy).to_f64();
            if fx == 0.0 {
                a
            } else {
                let b = self.get(x0 + 1, yy).to_f64();
                a * (1.0 - fx) + b * fx
            }
        };
        let top = row(y0);
        if fy == 0.0 {
            Some(top)
        } else {
            let bottom = row(y0 + 1);
            Some(top * (1.0 - fy) + bottom * fy)
        }
    }
}
