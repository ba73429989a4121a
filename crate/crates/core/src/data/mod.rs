//! Synthetic source/target segmentation corpora.
//!
//! Both domains come from the same scene generator, so category layout
//! statistics match; the target domain additionally goes through a
//! photometric [`StyleShiftSpec`].

mod corpus;
pub mod scene;
pub mod style;

pub use corpus::{build_corpus, read_corpus, write_corpus, Corpus, CorpusConfig, SeedRange, UnlabeledSplit};
pub use scene::{generate_scene, render, sample_layout, Region, RegionShape, SceneLayout};
pub use style::{apply_style_shift, StyleShiftSpec};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Source,
    Target,
}

/// Per-pixel class ids, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

impl LabelMap {
    pub fn histogram(&self, classes: usize) -> Vec<usize> {
        let mut h = vec![0; classes];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    /// `[3, H, W]` row-major, values in `[0, 1]`.
    pub image: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub labels: Option<LabelMap>,
    pub domain: Domain,
}

impl SceneSample {
    /// Mean of each colour channel.
    pub fn channel_means(&self) -> [f64; 3] {
        let plane = (self.height * self.width) as f64;
        let mut m = [0.0; 3];
        for (ch, chunk) in self.image.chunks(self.height * self.width).enumerate() {
            m[ch] = chunk.iter().sum::<f64>() / plane;
        }
        m
    }
}

/// Stacks images into an `[N, 3, H, W]` tensor.
pub fn stack_images<'a, T: Scalar>(images: impl IntoIterator<Item = &'a SceneSample>) -> Result<Tensor<T>> {
    let mut data = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    let mut n = 0;
    for s in images {
        match dims {
            None => dims = Some((s.height, s.width)),
            Some(d) if d != (s.height, s.width) => {
                return Err(Error::shape("stack_images", format!("{d:?} vs {:?}", (s.height, s.width))));
            }
            _ => {}
        }
        data.extend(s.image.iter().map(|&v| T::lit(v)));
        n += 1;
    }
    let (h, w) = dims.ok_or_else(|| Error::shape("stack_images", "empty batch"))?;
    Tensor::new(vec![n, 3, h, w], data)
}
