//! Binary masks and real-valued change maps.

use std::path::Path;

use cdgan_tensor::Tensor;
use image::GrayImage;

use crate::error::{Error, Result};

/// Row-major binary raster; `true` marks a changed pixel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Contract(format!(
                "mask {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    /// Parses rows of `.`/`#` characters, handy for fixtures.
    pub fn from_ascii(rows: &[&str]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let data = rows
            .iter()
            .flat_map(|r| {
                assert_eq!(r.len(), width, "ragged mask fixture");
                r.bytes().map(|c| c == b'#')
            })
            .collect();
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    pub fn union_with(&mut self, other: &Mask) {
        assert_eq!(self.dims(), other.dims());
        self.data.iter_mut().zip(&other.data).for_each(|(a, &b)| *a |= b);
    }

    pub fn xor(&self, other: &Mask) -> Mask {
        assert_eq!(self.dims(), other.dims());
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a ^ b).collect();
        Mask { data, ..*self }
    }

    /// Targets in generator output range: -1 unchanged, +1 changed, shaped
    /// `1×1×H×W`.
    pub fn to_signed_tensor(&self) -> Tensor {
        let data = self.data.iter().map(|&v| if v { 1.0 } else { -1.0 }).collect();
        Tensor::new(vec![1, 1, self.height, self.width], data).expect("mask dims are non-zero")
    }

    pub fn to_image(&self) -> GrayImage {
        let pixels = self.data.iter().map(|&v| if v { 255 } else { 0 }).collect();
        GrayImage::from_raw(self.width as u32, self.height as u32, pixels).expect("buffer sized from dims")
    }

    /// Gray levels of at least 128 count as changed.
    pub fn from_image(img: &GrayImage) -> Self {
        let data = img.pixels().map(|p| p.0[0] >= 128).collect();
        Self {
            height: img.height() as usize,
            width: img.width() as usize,
            data,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::image(path, e))?;
        Ok(Self::from_image(&img.to_luma8()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_image().save(path).map_err(|e| Error::image(path, e))
    }

    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Mask {
        assert!(y0 + height <= self.height && x0 + width <= self.width);
        Mask::from_fn(height, width, |y, x| self.get(y0 + y, x0 + x))
    }
}

/// A real-valued per-pixel change score in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl ChangeMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Contract(format!(
                "change map {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        Ok(Self { height, width, values })
    }

    /// Takes a `1×1×H×W` generator output.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [1, 1, h, w] => Self::new(h, w, t.data().to_vec()),
            ref s => Err(Error::Contract(format!("change map tensor must be 1x1xHxW, got {s:?}"))),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Strictly above `threshold` is changed; the default threshold is 0.
    pub fn binarize(&self, threshold: f32) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            data: self.values.iter().map(|&v| v > threshold).collect(),
        }
    }

    /// Maps `[-1, 1]` to gray levels for inspection.
    pub fn to_image(&self) -> GrayImage {
        let pixels = self
            .values
            .iter()
            .map(|&v| ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8)
            .collect();
        GrayImage::from_raw(self.width as u32, self.height as u32, pixels).expect("buffer sized from dims")
    }
}
