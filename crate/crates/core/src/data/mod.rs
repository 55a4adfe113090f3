//! Image pairs, their masks, and the tensors fed to the networks.

mod dataset;
mod sim;

pub use dataset::{
    load_dataset, load_record, write_dataset, DatasetLayout, DatasetManifest, ManifestEntry, Split,
};
pub use sim::{
    rasterize, render_scene, simulate_dataset, simulate_pair, simulate_scene, Background, Edit,
    Nuisance, Polygon, Scene, SceneObject, SimConfig,
};

use std::collections::BTreeMap;

use cdgan_tensor::Tensor;
use image::{Rgb, RgbImage};
use rand::Rng;

use crate::error::{Error, Result};
use crate::raster::Mask;

/// One co-registered image pair and its ground-truth change mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub image_a: RgbImage,
    pub image_b: RgbImage,
    pub mask: Mask,
    pub meta: BTreeMap<String, String>,
}

impl SampleRecord {
    /// Builds a record after checking that all three rasters agree in size.
    pub fn new(id: impl Into<String>, image_a: RgbImage, image_b: RgbImage, mask: Mask) -> Result<Self> {
        let id = id.into();
        let (h, w) = (image_a.height() as usize, image_a.width() as usize);
        if image_b.dimensions() != image_a.dimensions() || mask.dims() != (h, w) {
            return Err(Error::Data(format!(
                "sample {id}: sizes disagree (A {}x{}, B {}x{}, mask {}x{})",
                h,
                w,
                image_b.height(),
                image_b.width(),
                mask.height(),
                mask.width()
            )));
        }
        if h == 0 || w == 0 {
            return Err(Error::Data(format!("sample {id} is empty")));
        }
        Ok(Self {
            id,
            image_a,
            image_b,
            mask,
            meta: BTreeMap::new(),
        })
    }

    pub fn height(&self) -> usize {
        self.mask.height()
    }

    pub fn width(&self) -> usize {
        self.mask.width()
    }

    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || y0 + height > self.height() || x0 + width > self.width() {
            return Err(Error::Contract(format!(
                "crop {height}x{width} at ({y0}, {x0}) outside {}x{}",
                self.height(),
                self.width()
            )));
        }
        let crop = |img: &RgbImage| image::imageops::crop_imm(img, x0 as u32, y0 as u32, width as u32, height as u32).to_image();
        Ok(Self {
            id: self.id.clone(),
            image_a: crop(&self.image_a),
            image_b: crop(&self.image_b),
            mask: self.mask.crop(y0, x0, height, width),
            meta: self.meta.clone(),
        })
    }
}

/// Square `size×size` crop at an origin drawn uniformly over the valid
/// positions.
pub fn random_crop<R: Rng + ?Sized>(record: &SampleRecord, size: usize, rng: &mut R) -> Result<SampleRecord> {
    if size == 0 || record.height() < size || record.width() < size {
        return Err(Error::Contract(format!(
            "cannot crop {size}x{size} from a {}x{} record",
            record.height(),
            record.width()
        )));
    }
    let y0 = rng.gen_range(0..=record.height() - size);
    let x0 = rng.gen_range(0..=record.width() - size);
    record.crop(y0, x0, size, size)
}

/// Maps 8-bit RGB to a `3×H×W` tensor in `[-1, 1]`.
pub fn normalize(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (i, p) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = p.0[c] as f32 / 127.5 - 1.0;
        }
    }
    Tensor::new(vec![3, h, w], data).expect("image dims are non-zero")
}

/// Inverse of [`normalize`], clamping out-of-range values. Accepts `3×H×W`
/// or `1×3×H×W`.
pub fn denormalize(t: &Tensor) -> Result<RgbImage> {
    let (h, w) = match *t.shape() {
        [3, h, w] | [1, 3, h, w] => (h, w),
        ref s => return Err(Error::Contract(format!("expected a 3xHxW tensor, got {s:?}"))),
    };
    let d = t.data();
    let plane = h * w;
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let px = |c: usize| ((d[c * plane + i].clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8;
        Rgb([px(0), px(1), px(2)])
    }))
}

/// `1×3×H×W` input for a single image.
pub fn image_tensor(img: &RgbImage) -> Tensor {
    let t = normalize(img);
    let s = t.shape().to_vec();
    t.reshape(vec![1, s[0], s[1], s[2]]).expect("same element count")
}

/// A dihedral transform: optional flips followed by clockwise quarter turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Transform {
    pub hflip: bool,
    pub vflip: bool,
    pub quarter_turns: u8,
}

impl Transform {
    pub fn random<R: Rng + ?Sized>(rng: &mut R, flips: bool, rotations: bool) -> Self {
        Self {
            hflip: flips && rng.gen_bool(0.5),
            vflip: flips && rng.gen_bool(0.5),
            quarter_turns: if rotations { rng.gen_range(0..4) } else { 0 },
        }
    }

    /// Output dimensions for an input of `(height, width)`.
    pub fn output_dims(&self, height: usize, width: usize) -> (usize, usize) {
        if self.quarter_turns % 2 == 1 {
            (width, height)
        } else {
            (height, width)
        }
    }

    /// Row-major grid transform shared by images and masks.
    pub fn apply_grid<T: Copy>(&self, height: usize, width: usize, data: &[T]) -> Vec<T> {
        let mut cur: Vec<T> = data.to_vec();
        let (mut h, mut w) = (height, width);
        if self.hflip {
            cur = (0..h * w).map(|i| cur[(i / w) * w + (w - 1 - i % w)]).collect();
        }
        if self.vflip {
            cur = (0..h * w).map(|i| cur[(h - 1 - i / w) * w + i % w]).collect();
        }
        for _ in 0..self.quarter_turns % 4 {
            // Clockwise: new (y, x) reads old (h - 1 - x, y); new dims are w x h.
            let (nh, nw) = (w, h);
            cur = (0..nh * nw)
                .map(|i| {
                    let (y, x) = (i / nw, i % nw);
                    cur[(h - 1 - x) * w + y]
                })
                .collect();
            (h, w) = (nh, nw);
        }
        cur
    }

    pub fn apply_mask(&self, mask: &Mask) -> Mask {
        let (h, w) = self.output_dims(mask.height(), mask.width());
        Mask::from_vec(h, w, self.apply_grid(mask.height(), mask.width(), mask.data())).expect("dims preserved")
    }

    pub fn apply_image(&self, img: &RgbImage) -> RgbImage {
        let (ih, iw) = (img.height() as usize, img.width() as usize);
        let px: Vec<[u8; 3]> = img.pixels().map(|p| p.0).collect();
        let out = self.apply_grid(ih, iw, &px);
        let (h, w) = self.output_dims(ih, iw);
        RgbImage::from_raw(w as u32, h as u32, out.into_iter().flatten().collect()).expect("dims preserved")
    }

    pub fn apply(&self, record: &SampleRecord) -> SampleRecord {
        SampleRecord {
            id: record.id.clone(),
            image_a: self.apply_image(&record.image_a),
            image_b: self.apply_image(&record.image_b),
            mask: self.apply_mask(&record.mask),
            meta: record.meta.clone(),
        }
    }
}

/// Random flips (and quarter turns when enabled and the record is square),
/// applied identically to both images and the mask.
pub fn augment<R: Rng + ?Sized>(record: &SampleRecord, flips: bool, rotations: bool, rng: &mut R) -> SampleRecord {
    let rotations = rotations && record.height() == record.width();
    Transform::random(rng, flips, rotations).apply(record)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_round_trip_is_exact() {
        let img = RgbImage::from_fn(5, 3, |x, y| Rgb([(x * 50) as u8, (y * 90) as u8, 255 - (x + y) as u8]));
        let t = normalize(&img);
        assert_eq!(t.shape(), &[3, 3, 5]);
        assert_eq!(denormalize(&t).unwrap(), img);
        assert!(t.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn transforms_agree_on_images_and_masks() {
        let mask = Mask::from_ascii(&["#..", "...", ".#."]);
        let img = RgbImage::from_fn(3, 3, |x, y| if mask.get(y as usize, x as usize) { Rgb([255; 3]) } else { Rgb([0; 3]) });
        for turns in 0..4 {
            for (hflip, vflip) in [(false, false), (true, false), (false, true), (true, true)] {
                let t = Transform { hflip, vflip, quarter_turns: turns };
                let m2 = t.apply_mask(&mask);
                let i2 = t.apply_image(&img);
                let from_img = Mask::from_fn(3, 3, |y, x| i2.get_pixel(x as u32, y as u32).0[0] > 0);
                assert_eq!(m2, from_img);
            }
        }
    }

    #[test]
    fn quarter_turn_matches_image_crate() {
        let img = RgbImage::from_fn(4, 2, |x, y| Rgb([x as u8, y as u8, 0]));
        let t = Transform { quarter_turns: 1, ..Default::default() };
        assert_eq!(t.apply_image(&img), image::imageops::rotate90(&img));
        let f = Transform { hflip: true, ..Default::default() };
        assert_eq!(f.apply_image(&img), image::imageops::flip_horizontal(&img));
    }
}
