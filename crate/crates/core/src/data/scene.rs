//! Procedural two-domain street-scene stand-ins.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Domain, LabelMap, SceneSample};
use crate::error::{Error, Result};

pub const MIN_CLASSES: usize = 3;
pub const MAX_CLASSES: usize = 8;
pub const MIN_SIDE: usize = 16;
pub const MAX_SIDE: usize = 128;

/// Base RGB colour per class; class 0 is background.
const PALETTE: [[f64; 3]; MAX_CLASSES] = [
    [0.40, 0.40, 0.42],
    [0.75, 0.30, 0.25],
    [0.25, 0.60, 0.30],
    [0.25, 0.35, 0.75],
    [0.80, 0.75, 0.25],
    [0.65, 0.30, 0.70],
    [0.25, 0.70, 0.70],
    [0.85, 0.55, 0.25],
];

const TEXTURE_AMPLITUDE: f64 = 0.06;
const COLOR_JITTER: f64 = 0.04;
const PIXEL_NOISE: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RegionShape {
    /// Axis-aligned box `[y0, y1) x [x0, x1)`.
    Rect { y0: usize, x0: usize, y1: usize, x1: usize },
    Disc { cy: f64, cx: f64, radius: f64 },
    /// Full-width horizontal band of rows `[y0, y1)`.
    Band { y0: usize, y1: usize },
}

impl RegionShape {
    fn contains(&self, y: usize, x: usize) -> bool {
        match *self {
            RegionShape::Rect { y0, x0, y1, x1 } => y >= y0 && y < y1 && x >= x0 && x < x1,
            RegionShape::Disc { cy, cx, radius } => {
                let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                dy * dy + dx * dx <= radius * radius
            }
            RegionShape::Band { y0, y1 } => y >= y0 && y < y1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Region {
    pub class: u8,
    pub shape: RegionShape,
}

/// Painting order is region order; later regions overwrite earlier ones.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneLayout {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub regions: Vec<Region>,
}

pub fn check_dims(height: usize, width: usize, classes: usize) -> Result<()> {
    if !(MIN_CLASSES..=MAX_CLASSES).contains(&classes) {
        return Err(Error::InvalidDims(format!("classes {classes} outside [{MIN_CLASSES}, {MAX_CLASSES}]")));
    }
    for (name, v) in [("height", height), ("width", width)] {
        if !(MIN_SIDE..=MAX_SIDE).contains(&v) {
            return Err(Error::InvalidDims(format!("{name} {v} outside [{MIN_SIDE}, {MAX_SIDE}]")));
        }
    }
    Ok(())
}

/// Relative size of foreground class `k >= 1`; shrinks geometrically so the
/// background dominates and high class ids are rare.
fn size_prior(k: usize) -> f64 {
    0.42 * 0.74f64.powi(k as i32 - 1)
}

/// Samples one region per foreground class. Bands go first, the rest are
/// painted in class order so smaller (rarer) objects stay visible.
pub fn sample_layout<R: Rng>(rng: &mut R, height: usize, width: usize, classes: usize) -> SceneLayout {
    let (hf, wf) = (height as f64, width as f64);
    let mut regions = Vec::with_capacity(classes - 1);
    for k in 1..classes {
        let s = size_prior(k) * rng.random_range(0.8..1.2);
        let shape = match k {
            1 => {
                let band = ((s * 0.55 * hf).round() as usize).max(2);
                let y0 = rng.random_range(height / 3..height - band);
                RegionShape::Band { y0, y1: y0 + band }
            }
            k if k % 2 == 0 => {
                let radius = (s * 0.5 * hf.min(wf)).max(2.5);
                let cy = rng.random_range(radius * 0.5..hf - radius * 0.5);
                let cx = rng.random_range(radius * 0.5..wf - radius * 0.5);
                RegionShape::Disc { cy, cx, radius }
            }
            _ => {
                let rh = ((s * hf * rng.random_range(0.6..1.1)).round() as usize).clamp(3, height - 1);
                let rw = ((s * wf * rng.random_range(0.6..1.1)).round() as usize).clamp(3, width - 1);
                let y0 = rng.random_range(0..=height - rh);
                let x0 = rng.random_range(0..=width - rw);
                RegionShape::Rect { y0, x0, y1: y0 + rh, x1: x0 + rw }
            }
        };
        regions.push(Region { class: k as u8, shape });
    }
    SceneLayout { height, width, classes, regions }
}

/// Paints a layout: class colour with per-image jitter, an oriented stripe
/// texture per class, and mild pixel noise. Labels match painted regions.
pub fn render<R: Rng>(layout: &SceneLayout, rng: &mut R) -> Result<SceneSample> {
    let (h, w, c) = (layout.height, layout.width, layout.classes);
    check_dims(h, w, c)?;
    let mut labels = vec![0u8; h * w];
    for region in &layout.regions {
        if region.class as usize >= c {
            return Err(Error::InvalidDims(format!("region class {} >= {c}", region.class)));
        }
        for y in 0..h {
            for x in 0..w {
                if region.shape.contains(y, x) {
                    labels[y * w + x] = region.class;
                }
            }
        }
    }
    let colors: Vec<[f64; 3]> = PALETTE[..c]
        .iter()
        .map(|base| base.map(|v| v + rng.random_range(-COLOR_JITTER..COLOR_JITTER)))
        .collect();
    let phases: Vec<f64> = (0..c).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let noise = Normal::new(0.0, PIXEL_NOISE).expect("positive std");
    let plane = h * w;
    let mut image = vec![0.0; 3 * plane];
    for y in 0..h {
        for x in 0..w {
            let k = labels[y * w + x] as usize;
            let angle = k as f64 * 0.7;
            let freq = 0.35 + 0.12 * k as f64;
            let t = TEXTURE_AMPLITUDE * (freq * (x as f64 * angle.cos() + y as f64 * angle.sin()) + phases[k]).sin();
            for ch in 0..3 {
                let v = colors[k][ch] + t + noise.sample(rng);
                image[ch * plane + y * w + x] = v.clamp(0.0, 1.0);
            }
        }
    }
    Ok(SceneSample {
        image,
        height: h,
        width: w,
        labels: Some(LabelMap { height: h, width: w, labels }),
        domain: Domain::Source,
    })
}

/// Deterministic source-domain scene for `seed`.
pub fn generate_scene(seed: u64, height: usize, width: usize, classes: usize) -> Result<SceneSample> {
    check_dims(height, width, classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = sample_layout(&mut rng, height, width, classes);
    render(&layout, &mut rng)
}
