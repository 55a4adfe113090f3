//! Whole-image and tiled inference.

use image::RgbImage;

use crate::data::{image_tensor, load_record, DatasetManifest};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::nets::Generator;
use crate::raster::{ChangeMap, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileConfig {
    pub tile_size: usize,
    pub overlap: usize,
}

impl Default for TileConfig {
    fn default() -> Self {
        Self {
            tile_size: 256,
            overlap: 32,
        }
    }
}

impl TileConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tile_size == 0 || self.tile_size % 4 != 0 {
            return Err(Error::Config(format!("tile_size {} must be a positive multiple of 4", self.tile_size)));
        }
        if self.overlap >= self.tile_size {
            return Err(Error::Config(format!(
                "overlap {} must be smaller than tile_size {}",
                self.overlap, self.tile_size
            )));
        }
        Ok(())
    }
}

/// Start offsets covering `0..len` with windows of `tile` that overlap by at
/// least `overlap`; the last window ends flush with `len`.
pub fn tile_starts(len: usize, tile: usize, overlap: usize) -> Vec<usize> {
    if len <= tile {
        return vec![0];
    }
    let stride = tile - overlap;
    let mut starts: Vec<usize> = (0..).map(|k| k * stride).take_while(|&s| s + tile < len).collect();
    starts.push(len - tile);
    starts
}

fn check_pair(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if a.dimensions() != b.dimensions() {
        return Err(Error::Data(format!(
            "image sizes differ: A is {}x{}, B is {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Edge-replicates `img` out to `(height, width)`.
fn pad_to(img: &RgbImage, height: u32, width: u32) -> RgbImage {
    if img.dimensions() == (width, height) {
        return img.clone();
    }
    let (w, h) = img.dimensions();
    RgbImage::from_fn(width, height, |x, y| *img.get_pixel(x.min(w - 1), y.min(h - 1)))
}

/// One eval-mode pass over the full frame, padded up to a multiple of 4 and
/// cropped back.
pub fn predict_whole(gen: &Generator, a: &RgbImage, b: &RgbImage) -> Result<ChangeMap> {
    check_pair(a, b)?;
    let (w, h) = a.dimensions();
    let (ph, pw) = (h.div_ceil(4) * 4, w.div_ceil(4) * 4);
    let out = gen.predict(&image_tensor(&pad_to(a, ph, pw)), &image_tensor(&pad_to(b, ph, pw)))?;
    let full = out.data();
    let (h, w, pw) = (h as usize, w as usize, pw as usize);
    let mut values = Vec::with_capacity(h * w);
    for y in 0..h {
        values.extend_from_slice(&full[y * pw..y * pw + w]);
    }
    ChangeMap::new(h, w, values)
}

/// Overlapping tiles, averaging raw map values where tiles overlap.
pub fn predict_tiled(gen: &Generator, a: &RgbImage, b: &RgbImage, tile: &TileConfig) -> Result<ChangeMap> {
    check_pair(a, b)?;
    tile.validate()?;
    let (w, h) = (a.width() as usize, a.height() as usize);
    let mut sum = vec![0.0f64; h * w];
    let mut count = vec![0u32; h * w];
    let (th, tw) = (tile.tile_size.min(h), tile.tile_size.min(w));
    for &y0 in &tile_starts(h, tile.tile_size, tile.overlap) {
        for &x0 in &tile_starts(w, tile.tile_size, tile.overlap) {
            let crop = |img: &RgbImage| {
                image::imageops::crop_imm(img, x0 as u32, y0 as u32, tw as u32, th as u32).to_image()
            };
            let map = predict_whole(gen, &crop(a), &crop(b))?;
            for y in 0..th {
                for x in 0..tw {
                    let i = (y0 + y) * w + x0 + x;
                    sum[i] += map.get(y, x) as f64;
                    count[i] += 1;
                }
            }
        }
    }
    let values = sum.iter().zip(&count).map(|(&s, &c)| (s / c as f64) as f32).collect();
    ChangeMap::new(h, w, values)
}

/// Whole-image inference when the frame fits in one tile, tiled otherwise.
pub fn predict_map(gen: &Generator, a: &RgbImage, b: &RgbImage, tile: &TileConfig) -> Result<ChangeMap> {
    check_pair(a, b)?;
    if a.height() as usize <= tile.tile_size && a.width() as usize <= tile.tile_size {
        predict_whole(gen, a, b)
    } else {
        predict_tiled(gen, a, b, tile)
    }
}

pub fn predict_mask(gen: &Generator, a: &RgbImage, b: &RgbImage, tile: &TileConfig) -> Result<Mask> {
    Ok(predict_map(gen, a, b, tile)?.binarize(0.0))
}

/// Source of predicted masks for dataset evaluation.
#[derive(Clone, Copy)]
pub enum Predictor<'a> {
    Model(&'a Generator),
    /// Returns the ground truth itself; exercises the evaluation plumbing.
    Oracle,
}

/// Evaluates every manifest entry. Samples that fail to load or predict are
/// listed in `failures` and left out of the aggregates.
pub fn evaluate_dataset(
    predictor: Predictor<'_>,
    manifest: &DatasetManifest,
    tile: &TileConfig,
    iou_threshold: f64,
) -> Result<EvalReport> {
    if manifest.is_empty() {
        return Err(Error::Data("cannot evaluate an empty dataset".into()));
    }
    let mut report = EvalReport::new(iou_threshold);
    for entry in &manifest.entries {
        let outcome = load_record(entry).and_then(|r| {
            let pred = match predictor {
                Predictor::Model(gen) => predict_mask(gen, &r.image_a, &r.image_b, tile)?,
                Predictor::Oracle => r.mask.clone(),
            };
            Ok((pred, r.mask))
        });
        match outcome {
            Ok((pred, gt)) => report.add(entry.id.clone(), &pred, &gt)?,
            Err(e) => {
                log::warn!("sample {}: {e}", entry.id);
                report.add_failure(entry.id.clone(), e.to_string());
            }
        }
    }
    Ok(report)
}
