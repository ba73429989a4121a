//! Toy-scale segmentation network with style extractors and the three
//! discriminators used for adversarial alignment.
//!
//! ```text
//! image ─ E1 (3→16→16, /2) ─┬─ GAP → S1 ─ D_f1
//!                           └─ E2 (16→32, /2) ─┬─ GAP → S2 ─ D_f2
//!                                              └─ decoder (32→16→C, x4) → logits
//! softmax(logits) ─ D_c → patch logits (/16)
//! ```

pub mod checkpoint;
mod params;

pub use params::{Bound, Group, Param, ParamId, ParamStore};

use rand::{Rng, SeedableRng};

use crate::autodiff::{Graph, Var};
use crate::data::Domain;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const STAGE1_CHANNELS: usize = 16;
pub const STAGE2_CHANNELS: usize = 32;
pub const LEAKY_SLOPE: f64 = 0.2;
const STYLE_WIDTHS: [usize; 5] = [1, 8, 16, 16, 1];
const STYLE_KERNEL: usize = 4;
const SEG_DISC_WIDTHS: [usize; 4] = [16, 32, 32, 1];

/// Encoder stage a style vector was pooled from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    One,
    Two,
}

impl Stage {
    pub fn number(self) -> usize {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }

    pub fn channels(self) -> usize {
        match self {
            Stage::One => STAGE1_CHANNELS,
            Stage::Two => STAGE2_CHANNELS,
        }
    }
}

/// Channel means `[N, C_stage]` of one encoder stage.
#[derive(Clone, Copy, Debug)]
pub struct StyleVector {
    pub values: Var,
    pub stage: Stage,
    pub domain: Domain,
}

/// Intermediate encoder outputs kept for decoding and style losses.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub feat1: Var,
    pub style1: StyleVector,
    pub feat2: Var,
    pub style2: StyleVector,
}

#[derive(Clone, Copy, Debug)]
struct ConvLayer {
    weight: ParamId,
    bias: ParamId,
    stride: usize,
    pad: usize,
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        group: Group,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_kaiming(format!("{name}.weight"), group, &[cout, cin, k, k], rng);
        let bias = store.add(format!("{name}.bias"), group, Tensor::zeros(vec![cout]));
        ConvLayer { weight, bias, stride, pad }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = g.conv2d(x, p.var(self.weight), self.stride, self.pad)?;
        g.channel_bias(y, p.var(self.bias))
    }
}

#[derive(Clone, Copy, Debug)]
struct Conv1dLayer {
    weight: ParamId,
    bias: ParamId,
}

impl Conv1dLayer {
    fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = g.conv1d(x, p.var(self.weight), 1)?;
        g.channel_bias(y, p.var(self.bias))
    }
}

/// Two-stage shared encoder.
#[derive(Clone, Debug)]
pub struct EncoderStack {
    stage1: [ConvLayer; 2],
    stage2: ConvLayer,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    hidden: ConvLayer,
    classifier: ConvLayer,
}

/// Patch discriminator over softmax maps; output is `H/16 x W/16`.
#[derive(Clone, Debug)]
pub struct SegDiscriminator {
    layers: Vec<ConvLayer>,
}

/// Four 1-D conv layers over a style vector read as a length-`C` signal.
#[derive(Clone, Debug)]
pub struct StyleDiscriminator {
    stage: Stage,
    layers: Vec<Conv1dLayer>,
}

impl StyleDiscriminator {
    fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, stage: Stage, rng: &mut R) -> Self {
        let group = match stage {
            Stage::One => Group::StyleDiscriminator1,
            Stage::Two => Group::StyleDiscriminator2,
        };
        let layers = STYLE_WIDTHS
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let name = format!("style_disc{}.conv{}", stage.number(), i + 1);
                let weight = store.add_kaiming(format!("{name}.weight"), group, &[w[1], w[0], STYLE_KERNEL], rng);
                let bias = store.add(format!("{name}.bias"), group, Tensor::zeros(vec![w[1]]));
                Conv1dLayer { weight, bias }
            })
            .collect();
        StyleDiscriminator { stage, layers }
    }

    /// Number of patch logits produced for a style vector of `len` channels.
    pub fn output_len(len: usize) -> Option<usize> {
        (0..STYLE_WIDTHS.len() - 1).try_fold(len, |l, _| l.checked_sub(STYLE_KERNEL).map(|r| r + 1))
    }
}

/// Full model: shared encoder/decoder plus role-specific discriminators.
#[derive(Clone, Debug)]
pub struct SegNetwork<T> {
    pub store: ParamStore<T>,
    classes: usize,
    encoder: EncoderStack,
    decoder: Decoder,
    seg_disc: SegDiscriminator,
    style_disc: [StyleDiscriminator; 2],
}

impl<T: Scalar> SegNetwork<T> {
    /// Fresh network with fan-in scaled kernels and zero biases.
    pub fn new<R: Rng>(classes: usize, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let s = &mut store;
        let (c1, c2) = (STAGE1_CHANNELS, STAGE2_CHANNELS);
        let encoder = EncoderStack {
            stage1: [
                ConvLayer::new(s, "enc.stage1.conv1", Group::Encoder, 3, c1, 3, 1, 1, rng),
                ConvLayer::new(s, "enc.stage1.conv2", Group::Encoder, c1, c1, 3, 2, 1, rng),
            ],
            stage2: ConvLayer::new(s, "enc.stage2.conv1", Group::Encoder, c1, c2, 3, 2, 1, rng),
        };
        let decoder = Decoder {
            hidden: ConvLayer::new(s, "dec.conv1", Group::Decoder, c2, c1, 3, 1, 1, rng),
            classifier: ConvLayer::new(s, "dec.classifier", Group::Decoder, c1, classes, 3, 1, 1, rng),
        };
        let mut cin = classes;
        let mut layers = Vec::new();
        for (i, &cout) in SEG_DISC_WIDTHS.iter().enumerate() {
            let name = format!("seg_disc.conv{}", i + 1);
            layers.push(ConvLayer::new(s, &name, Group::SegDiscriminator, cin, cout, 4, 2, 1, rng));
            cin = cout;
        }
        let seg_disc = SegDiscriminator { layers };
        let style_disc = [
            StyleDiscriminator::new(s, Stage::One, rng),
            StyleDiscriminator::new(s, Stage::Two, rng),
        ];
        SegNetwork { store, classes, encoder, decoder, seg_disc, style_disc }
    }

    /// Network for `classes` classes with weights read from a checkpoint.
    pub fn from_checkpoint(classes: usize, path: impl AsRef<std::path::Path>) -> Result<Self> {
        let mut net = Self::new(classes, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
        checkpoint::load_into(&mut net.store, path)?;
        Ok(net)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: &[Group]) -> Bound {
        self.store.bind(g, trainable)
    }

    /// Runs both encoder stages and pools their style vectors.
    pub fn encode(&self, g: &mut Graph<T>, p: &Bound, image: Var, domain: Domain) -> Result<Encoded> {
        let s = g.shape(image);
        if s.len() != 4 || s[1] != 3 || s[2] % 4 != 0 || s[3] % 4 != 0 {
            return Err(Error::shape(
                "encode",
                format!("expected [N, 3, H, W] with H, W divisible by 4, got {s:?}"),
            ));
        }
        let mut x = image;
        for layer in &self.encoder.stage1 {
            x = layer.forward(g, p, x)?;
            x = g.relu(x)?;
        }
        let feat1 = x;
        let s1 = g.global_average_pool(feat1)?;
        let x = self.encoder.stage2.forward(g, p, feat1)?;
        let feat2 = g.relu(x)?;
        let s2 = g.global_average_pool(feat2)?;
        Ok(Encoded {
            feat1,
            style1: StyleVector { values: s1, stage: Stage::One, domain },
            feat2,
            style2: StyleVector { values: s2, stage: Stage::Two, domain },
        })
    }

    /// Full-resolution logits `[N, C, H, W]` from stage-2 features.
    pub fn decode(&self, g: &mut Graph<T>, p: &Bound, feat2: Var) -> Result<Var> {
        let s = g.shape(feat2);
        if s.len() != 4 || s[1] != STAGE2_CHANNELS {
            return Err(Error::shape("decode", format!("expected [N, {STAGE2_CHANNELS}, h, w], got {s:?}")));
        }
        let x = g.upsample2x(feat2)?;
        let x = self.decoder.hidden.forward(g, p, x)?;
        let x = g.relu(x)?;
        let x = g.upsample2x(x)?;
        self.decoder.classifier.forward(g, p, x)
    }

    /// Convenience: image to per-pixel probabilities.
    pub fn predict(&self, g: &mut Graph<T>, p: &Bound, image: Var, domain: Domain) -> Result<(Encoded, Var)> {
        let enc = self.encode(g, p, image, domain)?;
        let logits = self.decode(g, p, enc.feat2)?;
        let probs = g.softmax_channels(logits)?;
        Ok((enc, probs))
    }

    /// Raw patch logits `[N, 1, H/16, W/16]` for a probability map.
    pub fn discriminate_seg(&self, g: &mut Graph<T>, p: &Bound, probs: Var) -> Result<Var> {
        let s = g.shape(probs);
        if s.len() != 4 || s[1] != self.classes || s[2] < 16 || s[3] < 16 {
            return Err(Error::shape(
                "discriminate_seg",
                format!("expected [N, {}, H>=16, W>=16], got {s:?}", self.classes),
            ));
        }
        let last = self.seg_disc.layers.len() - 1;
        let mut x = probs;
        for (i, layer) in self.seg_disc.layers.iter().enumerate() {
            x = layer.forward(g, p, x)?;
            if i < last {
                x = g.leaky_relu(x, T::lit(LEAKY_SLOPE))?;
            }
        }
        Ok(x)
    }

    /// Raw patch logits `[N, 1, L]` of the stage-`stage` style discriminator.
    pub fn discriminate_style(&self, g: &mut Graph<T>, p: &Bound, s: &StyleVector, stage: Stage) -> Result<Var> {
        if s.stage != stage {
            return Err(Error::StageMismatch { expected: stage.number(), got: s.stage.number() });
        }
        let disc = &self.style_disc[stage.number() - 1];
        debug_assert_eq!(disc.stage, stage);
        let shape = g.shape(s.values).to_vec();
        if shape.len() != 2 || shape[1] != stage.channels() {
            return Err(Error::shape("discriminate_style", format!("style vector shape {shape:?}")));
        }
        let mut x = g.reshape(s.values, &[shape[0], 1, shape[1]])?;
        let last = disc.layers.len() - 1;
        for (i, layer) in disc.layers.iter().enumerate() {
            x = layer.forward(g, p, x)?;
            if i < last {
                x = g.leaky_relu(x, T::lit(LEAKY_SLOPE))?;
            }
        }
        Ok(x)
    }
}
