//! Synthetic change scenes: flat-colored polygons on a textured background,
//! with objects added, removed or shifted between the two images.

use std::f32::consts::TAU;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::SampleRecord;
use crate::error::{Error, Result};
use crate::raster::Mask;

const MIN_CANVAS: usize = 64;
const TEXTURE_SIGMA: f32 = 3.0;
const GRADIENT_AMPLITUDE: f32 = 30.0;
/// Summed per-channel distance an object color keeps from the background.
const MIN_CONTRAST: f32 = 120.0;
const HUE_JITTER_DEGREES: f32 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub height: usize,
    pub width: usize,
    pub polygons_min: usize,
    pub polygons_max: usize,
    pub vertices_min: usize,
    pub vertices_max: usize,
    pub radius_min: f32,
    pub radius_max: f32,
    pub shift_min: f32,
    pub shift_max: f32,
    pub p_add: f32,
    pub p_remove: f32,
    pub p_shift: f32,
    /// Image B brightness is scaled by `1 + d`, `d` uniform in `±brightness`.
    pub brightness: f32,
    /// Per-pixel Gaussian noise on image B, in 8-bit levels.
    pub noise_sigma: f32,
    pub hue_jitter: bool,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            polygons_min: 2,
            polygons_max: 5,
            vertices_min: 3,
            vertices_max: 8,
            radius_min: 8.0,
            radius_max: 20.0,
            shift_min: 3.0,
            shift_max: 10.0,
            p_add: 0.25,
            p_remove: 0.25,
            p_shift: 0.4,
            brightness: 0.15,
            noise_sigma: 2.0,
            hue_jitter: false,
            seed: 0,
        }
    }
}

impl SimConfig {
    /// Same scene statistics with every edit probability set to zero.
    pub fn nuisance_only(&self) -> Self {
        Self {
            p_add: 0.0,
            p_remove: 0.0,
            p_shift: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.height < MIN_CANVAS || self.width < MIN_CANVAS {
            return fail(format!("canvas {}x{} is smaller than 64x64", self.height, self.width));
        }
        if self.polygons_min > self.polygons_max {
            return fail("polygons_min exceeds polygons_max".into());
        }
        if self.vertices_min < 3 || self.vertices_min > self.vertices_max || self.vertices_max > 8 {
            return fail(format!(
                "vertex range {}..={} must lie within 3..=8",
                self.vertices_min, self.vertices_max
            ));
        }
        let max_radius = (self.height.min(self.width) as f32) / 2.0;
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max && self.radius_max < max_radius) {
            return fail(format!(
                "radius range {}..={} must be positive and below half the canvas",
                self.radius_min, self.radius_max
            ));
        }
        if !(self.shift_min >= 0.0 && self.shift_min <= self.shift_max) {
            return fail("shift range must be non-negative and ordered".into());
        }
        let probs = [self.p_add, self.p_remove, self.p_shift];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || probs.iter().sum::<f32>() > 1.0 + 1e-6 {
            return fail("edit probabilities must lie in [0, 1] and sum to at most 1".into());
        }
        if !(0.0..1.0).contains(&self.brightness) || !(self.noise_sigma >= 0.0) {
            return fail("brightness must lie in [0, 1) and noise_sigma must be non-negative".into());
        }
        Ok(())
    }
}

/// A closed polygon given by its vertices `(x, y)` in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub vertices: Vec<(f32, f32)>,
}

impl Polygon {
    pub fn rect(x0: f32, y0: f32, x1: f32, y1: f32) -> Self {
        Self {
            vertices: vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)],
        }
    }

    pub fn translated(&self, dx: f32, dy: f32) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&(x, y)| (x + dx, y + dy)).collect(),
        }
    }

    /// Shoelace area (absolute value).
    pub fn area(&self) -> f32 {
        let n = self.vertices.len();
        let twice: f32 = (0..n)
            .map(|i| {
                let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
                a.0 * b.1 - b.0 * a.1
            })
            .sum();
        twice.abs() / 2.0
    }

    fn has_collinear_corner(&self, tol: f32) -> bool {
        let n = self.vertices.len();
        (0..n).any(|i| {
            let (p, q, r) = (self.vertices[i], self.vertices[(i + 1) % n], self.vertices[(i + 2) % n]);
            ((q.0 - p.0) * (r.1 - p.1) - (q.1 - p.1) * (r.0 - p.0)).abs() < tol
        })
    }
}

/// Even-odd fill sampled at pixel centers `(x + 0.5, y + 0.5)`.
pub fn rasterize(poly: &Polygon, height: usize, width: usize) -> Mask {
    let mut mask = Mask::new(height, width);
    let v = &poly.vertices;
    let n = v.len();
    let mut xs = Vec::new();
    for y in 0..height {
        let yc = y as f32 + 0.5;
        xs.clear();
        for i in 0..n {
            let (p, q) = (v[i], v[(i + 1) % n]);
            if (p.1 > yc) != (q.1 > yc) {
                xs.push(p.0 + (yc - p.1) * (q.0 - p.0) / (q.1 - p.1));
            }
        }
        xs.sort_by(f32::total_cmp);
        for span in xs.chunks_exact(2) {
            // Centers strictly right of span[0] and not right of span[1].
            let lo = ((span[0] - 0.5).floor() + 1.0).max(0.0);
            let hi = (span[1] - 0.5).floor().min(width as f32 - 1.0);
            let mut x = lo;
            while x <= hi {
                mask.set(y, x as usize, true);
                x += 1.0;
            }
        }
    }
    mask
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Edit {
    Unchanged,
    /// Present only in image B.
    Add,
    /// Present only in image A.
    Remove,
    Shift { dx: f32, dy: f32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub polygon: Polygon,
    pub color: [u8; 3],
    pub edit: Edit,
}

impl SceneObject {
    pub fn polygon_a(&self) -> Option<Polygon> {
        match self.edit {
            Edit::Add => None,
            _ => Some(self.polygon.clone()),
        }
    }

    pub fn polygon_b(&self) -> Option<Polygon> {
        match self.edit {
            Edit::Remove => None,
            Edit::Shift { dx, dy } => Some(self.polygon.translated(dx, dy)),
            _ => Some(self.polygon.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Background {
    pub base: [f32; 3],
    /// Per-channel color change across the canvas along `direction`.
    pub gradient: [f32; 3],
    /// Angle of the gradient in radians.
    pub direction: f32,
    /// Sigma of the texture noise shared by both images, in levels.
    pub texture_sigma: f32,
    pub texture_seed: u64,
}

impl Background {
    pub fn flat(color: [u8; 3]) -> Self {
        Self {
            base: color.map(f32::from),
            gradient: [0.0; 3],
            direction: 0.0,
            texture_sigma: 0.0,
            texture_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub height: usize,
    pub width: usize,
    pub background: Background,
    pub objects: Vec<SceneObject>,
}

/// Perturbations applied to image B only; never part of the mask.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Nuisance {
    /// Relative brightness change, e.g. `0.15` for +15%.
    pub brightness: f32,
    pub noise_sigma: f32,
    pub hue_degrees: f32,
    pub seed: u64,
}

impl Nuisance {
    pub fn is_zero(&self) -> bool {
        self.brightness == 0.0 && self.noise_sigma == 0.0 && self.hue_degrees == 0.0
    }

    fn flags(&self) -> String {
        let mut f = Vec::new();
        if self.brightness != 0.0 {
            f.push("brightness");
        }
        if self.noise_sigma != 0.0 {
            f.push("noise");
        }
        if self.hue_degrees != 0.0 {
            f.push("hue");
        }
        if f.is_empty() {
            "none".to_string()
        } else {
            f.join(",")
        }
    }
}

fn random_polygon<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Result<Polygon> {
    for _ in 0..1000 {
        let r = rng.gen_range(config.radius_min..=config.radius_max);
        let cx = rng.gen_range(r..=config.width as f32 - r);
        let cy = rng.gen_range(r..=config.height as f32 - r);
        let n = rng.gen_range(config.vertices_min..=config.vertices_max);
        let mut angles: Vec<f32> = (0..n).map(|_| rng.gen_range(0.0..TAU)).collect();
        angles.sort_by(f32::total_cmp);
        // Sorted angles around the center give a star-shaped, simple polygon.
        let vertices = angles
            .iter()
            .map(|&t| {
                let rr = r * rng.gen_range(0.6..=1.0);
                (cx + rr * t.cos(), cy + rr * t.sin())
            })
            .collect();
        let poly = Polygon { vertices };
        if poly.area() >= 0.5 * r * r && !poly.has_collinear_corner(0.05 * r * r) {
            return Ok(poly);
        }
    }
    Err(Error::Contract("could not sample a non-degenerate polygon".into()))
}

fn contrasting_color<R: Rng + ?Sized>(background: [f32; 3], rng: &mut R) -> [u8; 3] {
    loop {
        let c: [u8; 3] = [rng.gen(), rng.gen(), rng.gen()];
        let dist: f32 = c.iter().zip(&background).map(|(&a, &b)| (a as f32 - b).abs()).sum();
        if dist >= MIN_CONTRAST {
            return c;
        }
    }
}

/// Draws a scene layout and nuisance settings from `config`.
pub fn simulate_scene<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Result<(Scene, Nuisance)> {
    config.validate()?;
    let base = [(); 3].map(|_| rng.gen_range(40.0..=215.0f32));
    let background = Background {
        base,
        gradient: [(); 3].map(|_| rng.gen_range(-GRADIENT_AMPLITUDE..=GRADIENT_AMPLITUDE)),
        direction: rng.gen_range(0.0..TAU),
        texture_sigma: TEXTURE_SIGMA,
        texture_seed: rng.gen(),
    };
    let count = rng.gen_range(config.polygons_min..=config.polygons_max);
    let mut objects = Vec::with_capacity(count);
    for _ in 0..count {
        let polygon = random_polygon(config, rng)?;
        let color = contrasting_color(base, rng);
        let u: f32 = rng.gen();
        let edit = if u < config.p_add {
            Edit::Add
        } else if u < config.p_add + config.p_remove {
            Edit::Remove
        } else if u < config.p_add + config.p_remove + config.p_shift {
            let mag = rng.gen_range(config.shift_min..=config.shift_max);
            let theta = rng.gen_range(0.0..TAU);
            Edit::Shift {
                dx: mag * theta.cos(),
                dy: mag * theta.sin(),
            }
        } else {
            Edit::Unchanged
        };
        objects.push(SceneObject { polygon, color, edit });
    }
    let brightness = if config.brightness > 0.0 {
        rng.gen_range(-config.brightness..=config.brightness)
    } else {
        0.0
    };
    let hue_degrees = if config.hue_jitter {
        rng.gen_range(-HUE_JITTER_DEGREES..=HUE_JITTER_DEGREES)
    } else {
        0.0
    };
    let nuisance = Nuisance {
        brightness,
        noise_sigma: config.noise_sigma,
        hue_degrees,
        seed: rng.gen(),
    };
    let scene = Scene {
        height: config.height,
        width: config.width,
        background,
        objects,
    };
    Ok((scene, nuisance))
}

/// Hue rotation about the gray axis.
fn hue_matrix(degrees: f32) -> [[f32; 3]; 3] {
    let (s, c) = degrees.to_radians().sin_cos();
    let (k, r) = ((1.0 - c) / 3.0, (1.0f32 / 3.0).sqrt() * s);
    [[c + k, k - r, k + r], [k + r, c + k, k - r], [k - r, k + r, c + k]]
}

fn render_image(scene: &Scene, polygons: &[(Mask, [u8; 3])], texture: &[f32]) -> Vec<[f32; 3]> {
    let (h, w) = (scene.height, scene.width);
    let bg = &scene.background;
    let (dx, dy) = (bg.direction.cos(), bg.direction.sin());
    let span = ((h * h + w * w) as f32).sqrt();
    let mut buf = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let t = (x as f32 * dx + y as f32 * dy) / span;
            buf.push([0, 1, 2].map(|c| bg.base[c] + bg.gradient[c] * t));
        }
    }
    for (footprint, color) in polygons {
        for (px, &inside) in buf.iter_mut().zip(footprint.data()) {
            if inside {
                *px = color.map(f32::from);
            }
        }
    }
    for (px, &n) in buf.iter_mut().zip(texture) {
        px.iter_mut().for_each(|v| *v += n);
    }
    buf
}

fn quantize(h: usize, w: usize, buf: &[[f32; 3]]) -> RgbImage {
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let p = buf[y as usize * w + x as usize];
        Rgb(p.map(|v| v.round().clamp(0.0, 255.0) as u8))
    })
}

/// Deterministically renders a scene. Unchanged objects are painted first so
/// edited objects always sit on top; the mask is the union, over edited
/// objects, of the symmetric difference of their A and B footprints.
pub fn render_scene(id: impl Into<String>, scene: &Scene, nuisance: &Nuisance) -> Result<SampleRecord> {
    let (h, w) = (scene.height, scene.width);
    if h == 0 || w == 0 {
        return Err(Error::Contract("empty scene canvas".into()));
    }
    let mut order: Vec<&SceneObject> = scene.objects.iter().filter(|o| o.edit == Edit::Unchanged).collect();
    order.extend(scene.objects.iter().filter(|o| o.edit != Edit::Unchanged));

    let mut layers_a = Vec::new();
    let mut layers_b = Vec::new();
    let mut mask = Mask::new(h, w);
    for obj in order {
        let fa = obj.polygon_a().map(|p| rasterize(&p, h, w));
        let fb = obj.polygon_b().map(|p| rasterize(&p, h, w));
        if obj.edit != Edit::Unchanged {
            let empty = Mask::new(h, w);
            mask.union_with(&fa.as_ref().unwrap_or(&empty).xor(fb.as_ref().unwrap_or(&empty)));
        }
        layers_a.extend(fa.map(|m| (m, obj.color)));
        layers_b.extend(fb.map(|m| (m, obj.color)));
    }

    let sigma = scene.background.texture_sigma;
    let texture: Vec<f32> = if sigma > 0.0 {
        let mut trng = ChaCha8Rng::seed_from_u64(scene.background.texture_seed);
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::Contract(e.to_string()))?;
        (0..h * w).map(|_| normal.sample(&mut trng)).collect()
    } else {
        vec![0.0; h * w]
    };

    let buf_a = render_image(scene, &layers_a, &texture);
    let mut buf_b = render_image(scene, &layers_b, &texture);
    if !nuisance.is_zero() {
        let m = hue_matrix(nuisance.hue_degrees);
        let gain = 1.0 + nuisance.brightness;
        let mut nrng = ChaCha8Rng::seed_from_u64(nuisance.seed);
        let noise = Normal::new(0.0, nuisance.noise_sigma.max(0.0)).map_err(|e| Error::Contract(e.to_string()))?;
        for px in &mut buf_b {
            let p = px.map(|v| v * gain);
            let rot = [0, 1, 2].map(|r| m[r][0] * p[0] + m[r][1] * p[1] + m[r][2] * p[2]);
            *px = if nuisance.noise_sigma > 0.0 { rot.map(|v| v + noise.sample(&mut nrng)) } else { rot };
        }
    }

    let edits = scene.objects.iter().filter(|o| o.edit != Edit::Unchanged).count();
    let mut record = SampleRecord::new(id, quantize(h, w, &buf_a), quantize(h, w, &buf_b), mask)?;
    record.meta.insert("edits".into(), edits.to_string());
    record.meta.insert("nuisance".into(), nuisance.flags());
    Ok(record)
}

/// Samples and renders one pair.
pub fn simulate_pair<R: Rng + ?Sized>(config: &SimConfig, id: impl Into<String>, rng: &mut R) -> Result<SampleRecord> {
    let (scene, nuisance) = simulate_scene(config, rng)?;
    render_scene(id, &scene, &nuisance)
}

/// `count` pairs with ids `00000`, `00001`, ...; pair `i` depends only on
/// `(config, i)`.
pub fn simulate_dataset(config: &SimConfig, count: usize) -> Result<Vec<SampleRecord>> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            simulate_pair(config, format!("{i:05}"), &mut rng)
        })
        .collect()
}
