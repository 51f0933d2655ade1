//! Row-major RGB float images.

use crate::real::Real;

/// `height x width x 3` scalars, row-major, RGB interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![T::zero(); width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [T; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self {
            width,
            height,
            data,
        }
    }

    /// Wraps `data`; returns `None` when the length is not `width * height * 3`.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == width * height * 3).then_some(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        (row * self.width + col) * 3
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [T; 3] {
        let i = self.index(row, col);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [T; 3]) {
        let i = self.index(row, col);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape<U>(&self, other: &Image<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Copy with every value clamped to `[0, 1]`.
    pub fn clamped(&self) -> Self {
        let data = self
            .data
            .iter()
            .map(|v| v.max(T::zero()).min(T::one()))
            .collect();
        Self {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Clamps to `[0, 1]` and quantizes with `round(v * 255)`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| {
                let c = v.as_f64().clamp(0.0, 1.0);
                (c * 255.0).round() as u8
            })
            .collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Option<Self> {
        let data = bytes.iter().map(|&b| T::lit(b as f64 / 255.0)).collect();
        Self::from_vec(width, height, data)
    }
}
