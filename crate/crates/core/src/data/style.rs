use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Domain, SceneSample};
use crate::error::{Error, Result};

/// Photometric domain shift: illumination, contrast, colour cast, grain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleShiftSpec {
    pub brightness_offset: f64,
    pub contrast_gain: f64,
    pub color_gain: [f64; 3],
    pub texture_noise_std: f64,
    pub seed: u64,
}

impl Default for StyleShiftSpec {
    fn default() -> Self {
        StyleShiftSpec {
            brightness_offset: 0.08,
            contrast_gain: 0.7,
            color_gain: [1.12, 0.95, 0.65],
            texture_noise_std: 0.04,
            seed: 0x5eed,
        }
    }
}

impl StyleShiftSpec {
    pub fn identity() -> Self {
        StyleShiftSpec {
            brightness_offset: 0.0,
            contrast_gain: 1.0,
            color_gain: [1.0; 3],
            texture_noise_std: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.contrast_gain > 0.0) {
            return Err(Error::Config(format!("contrast_gain must be > 0, got {}", self.contrast_gain)));
        }
        if !(self.texture_noise_std >= 0.0) {
            return Err(Error::Config("texture_noise_std must be >= 0".into()));
        }
        if self.color_gain.iter().any(|g| !(g.is_finite() && *g >= 0.0)) || !self.brightness_offset.is_finite() {
            return Err(Error::Config("style shift gains must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Same shift with the noise stream re-keyed for one scene.
    pub fn for_scene(&self, scene_seed: u64) -> Self {
        let mut s = *self;
        s.seed = self.seed ^ scene_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(17);
        s
    }
}

/// `clamp((gain_c * (contrast * (x - 0.5) + 0.5 + brightness)) + noise)`;
/// labels are carried over untouched and the sample is tagged target.
pub fn apply_style_shift(sample: &SceneSample, spec: &StyleShiftSpec) -> SceneSample {
    let plane = sample.height * sample.width;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = (spec.texture_noise_std > 0.0).then(|| Normal::new(0.0, spec.texture_noise_std).expect("std"));
    let mut image = sample.image.clone();
    for (ch, chan) in image.chunks_mut(plane).enumerate() {
        for v in chan.iter_mut() {
            let mut x = (spec.contrast_gain * (*v - 0.5) + 0.5 + spec.brightness_offset) * spec.color_gain[ch];
            if let Some(n) = &noise {
                x += n.sample(&mut rng);
            }
            *v = x.clamp(0.0, 1.0);
        }
    }
    SceneSample {
        image,
        height: sample.height,
        width: sample.width,
        labels: sample.labels.clone(),
        domain: Domain::Target,
    }
}
