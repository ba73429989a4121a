//! Training objectives over graph variables.
//!
//! Probability maps are `[N, C, H, W]`; per-image losses are averaged over
//! the batch. Discriminators emit raw logits and the sigmoid lives here,
//! through `softplus(-x) = -log sigmoid(x)`. Source plays "real".

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::LabelMap;
use crate::error::{Error, Result};
use crate::network::{Bound, Encoded, SegNetwork, StyleVector};
use crate::pseudo::PseudoLabelSelection;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Lower clamp for every probability that enters a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;
/// Added to the population variance before the square root.
pub const STD_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub seg: f64,
    pub adv_seg: f64,
    pub style: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { seg: 1.0, adv_seg: 1e-3, style: 1e-3 }
    }
}

impl LossWeights {
    pub fn source_only() -> Self {
        LossWeights { seg: 1.0, adv_seg: 0.0, style: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("seg", self.seg), ("adv_seg", self.adv_seg), ("style", self.style)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn is_adversarial(&self) -> bool {
        self.adv_seg > 0.0 || self.style > 0.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StyleLossKind {
    /// GAN loss on pooled channel means through the style discriminators.
    #[default]
    AdversarialMean,
    /// Squared distance between normalized Gram matrices.
    MseGram,
    /// Squared distance between channel means and standard deviations.
    MseMeanStd,
}

impl StyleLossKind {
    pub const ALL: [StyleLossKind; 3] =
        [StyleLossKind::AdversarialMean, StyleLossKind::MseGram, StyleLossKind::MseMeanStd];

    pub fn name(self) -> &'static str {
        match self {
            StyleLossKind::AdversarialMean => "adversarial-mean",
            StyleLossKind::MseGram => "mse-gram",
            StyleLossKind::MseMeanStd => "mse-mean-std",
        }
    }
}

/// One-hot `[N, C, H, W]` encoding of a batch of label maps.
pub fn one_hot<T: Scalar>(labels: &[&LabelMap], classes: usize) -> Result<Tensor<T>> {
    let first = labels.first().ok_or_else(|| Error::shape("one_hot", "empty batch"))?;
    let (h, w) = (first.height, first.width);
    let plane = h * w;
    let mut out = vec![T::zero(); labels.len() * classes * plane];
    for (b, l) in labels.iter().enumerate() {
        if (l.height, l.width) != (h, w) {
            return Err(Error::shape("one_hot", "label maps differ in size"));
        }
        for (i, &c) in l.labels.iter().enumerate() {
            let c = c as usize;
            if c >= classes {
                return Err(Error::LabelOutOfRange { label: c, classes });
            }
            out[(b * classes + c) * plane + i] = T::one();
        }
    }
    Tensor::new(vec![labels.len(), classes, h, w], out)
}

/// Mask-weighted one-hot targets `m * y_hat` for a batch of selections.
pub fn pseudo_targets<T: Scalar>(sel: &[&PseudoLabelSelection], classes: usize) -> Result<Tensor<T>> {
    let first = sel.first().ok_or_else(|| Error::shape("pseudo_targets", "empty batch"))?;
    let (h, w) = (first.height, first.width);
    let plane = h * w;
    let mut out = vec![T::zero(); sel.len() * classes * plane];
    for (b, s) in sel.iter().enumerate() {
        if (s.height, s.width) != (h, w) {
            return Err(Error::shape("pseudo_targets", "selections differ in size"));
        }
        for i in 0..plane {
            let c = s.labels[i] as usize;
            if c >= classes {
                return Err(Error::LabelOutOfRange { label: c, classes });
            }
            if s.mask[i] {
                out[(b * classes + c) * plane + i] = T::one();
            }
        }
    }
    Tensor::new(vec![sel.len(), classes, h, w], out)
}

/// `-(1 / (N H W)) * sum(weights * log clamp(probs))`.
fn weighted_nll<T: Scalar>(g: &mut Graph<T>, op: &'static str, probs: Var, weights: Var) -> Result<Var> {
    let s = g.shape(probs).to_vec();
    if s.len() != 4 || g.shape(weights) != s.as_slice() {
        return Err(Error::shape(op, format!("probs {s:?}, targets {:?}", g.shape(weights))));
    }
    let p = g.clamp(probs, T::lit(PROB_FLOOR), T::one())?;
    let lp = g.log(p)?;
    let t = g.mul(weights, lp)?;
    let total = g.sum(t)?;
    g.scale(total, T::lit(-1.0 / (s[0] * s[2] * s[3]) as f64))
}

/// Cross-entropy of probabilities against one-hot ground truth.
pub fn seg_loss<T: Scalar>(g: &mut Graph<T>, probs: Var, one_hot: Var) -> Result<Var> {
    weighted_nll(g, "seg_loss", probs, one_hot)
}

/// Masked cross-entropy against pseudo labels, divided by the full map area
/// rather than by the number of selected pixels.
pub fn ssl_loss<T: Scalar>(g: &mut Graph<T>, probs: Var, targets: Var) -> Result<Var> {
    weighted_nll(g, "ssl_loss", probs, targets)
}

/// Non-saturating generator term: `mean(-log sigmoid(fake))`.
pub fn gan_generator_loss<T: Scalar>(g: &mut Graph<T>, fake_logits: Var) -> Result<Var> {
    let n = g.neg(fake_logits)?;
    let sp = g.softplus(n)?;
    g.mean(sp)
}

/// `mean(-log sigmoid(real)) + mean(-log(1 - sigmoid(fake)))`.
pub fn gan_discriminator_loss<T: Scalar>(g: &mut Graph<T>, real_logits: Var, fake_logits: Var) -> Result<Var> {
    let n = g.neg(real_logits)?;
    let a = g.softplus(n)?;
    let a = g.mean(a)?;
    let b = g.softplus(fake_logits)?;
    let b = g.mean(b)?;
    g.add(a, b)
}

/// Generator side of the output-space adversarial loss.
pub fn adv_seg_loss_g<T: Scalar>(g: &mut Graph<T>, target_logits: Var) -> Result<Var> {
    gan_generator_loss(g, target_logits)
}

/// Discriminator side of the output-space adversarial loss.
pub fn adv_seg_loss_d<T: Scalar>(g: &mut Graph<T>, source_logits: Var, target_logits: Var) -> Result<Var> {
    gan_discriminator_loss(g, source_logits, target_logits)
}

/// Squared distance between batch-averaged normalized Gram matrices.
pub fn mse_gram<T: Scalar>(g: &mut Graph<T>, source_feat: Var, target_feat: Var) -> Result<Var> {
    check_pair(g, "mse_gram", source_feat, target_feat)?;
    let gs = g.gram(source_feat)?;
    let gs = g.mean_batch(gs)?;
    let gt = g.gram(target_feat)?;
    let gt = g.mean_batch(gt)?;
    let d = g.sub(gs, gt)?;
    let sq = g.mul(d, d)?;
    g.mean(sq)
}

/// Batch-averaged channel means and population standard deviations `[C]`.
fn mean_std<T: Scalar>(g: &mut Graph<T>, feat: Var) -> Result<(Var, Var)> {
    let s = g.shape(feat).to_vec();
    let mu = g.global_average_pool(feat)?;
    let mu_b = g.broadcast_spatial(mu, s[2], s[3])?;
    let centered = g.sub(feat, mu_b)?;
    let sq = g.mul(centered, centered)?;
    let var = g.global_average_pool(sq)?;
    let var = g.offset(var, T::lit(STD_EPS))?;
    let sd = g.pow_const(var, T::lit(0.5))?;
    Ok((g.mean_batch(mu)?, g.mean_batch(sd)?))
}

/// Mean squared difference of the concatenated `[means, stds]` vectors.
pub fn mse_mean_std<T: Scalar>(g: &mut Graph<T>, source_feat: Var, target_feat: Var) -> Result<Var> {
    check_pair(g, "mse_mean_std", source_feat, target_feat)?;
    let (ms, ss) = mean_std(g, source_feat)?;
    let (mt, st) = mean_std(g, target_feat)?;
    let dm = g.sub(ms, mt)?;
    let dm = g.mul(dm, dm)?;
    let dm = g.sum(dm)?;
    let ds = g.sub(ss, st)?;
    let ds = g.mul(ds, ds)?;
    let ds = g.sum(ds)?;
    let total = g.add(dm, ds)?;
    let c = g.shape(source_feat)[1];
    g.scale(total, T::lit(1.0 / (2 * c) as f64))
}

fn check_pair<T: Scalar>(g: &Graph<T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa.len() != 4 || sb.len() != 4 || sa[1] != sb[1] {
        return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
    }
    Ok(())
}

/// Generator term of the style loss, summed over both encoder stages.
///
/// For the adversarial kind the discriminator parameters in `p` should be
/// bound as constants so only the encoder receives gradient.
pub fn style_generator_loss<T: Scalar>(
    g: &mut Graph<T>,
    net: &SegNetwork<T>,
    p: &Bound,
    kind: StyleLossKind,
    source: &Encoded,
    target: &Encoded,
) -> Result<Var> {
    let stages = [
        (source.style1, target.style1, source.feat1, target.feat1),
        (source.style2, target.style2, source.feat2, target.feat2),
    ];
    let mut total: Option<Var> = None;
    for (ss, st, fs, ft) in stages {
        if ss.stage != st.stage {
            return Err(Error::StageMismatch { expected: ss.stage.number(), got: st.stage.number() });
        }
        let term = match kind {
            StyleLossKind::AdversarialMean => {
                let logits = net.discriminate_style(g, p, &st, st.stage)?;
                gan_generator_loss(g, logits)?
            }
            StyleLossKind::MseGram => mse_gram(g, fs, ft)?,
            StyleLossKind::MseMeanStd => mse_mean_std(g, fs, ft)?,
        };
        total = Some(match total {
            None => term,
            Some(t) => g.add(t, term)?,
        });
    }
    Ok(total.expect("two stages"))
}

/// Discriminator term of the adversarial style loss for one stage.
pub fn style_discriminator_loss<T: Scalar>(
    g: &mut Graph<T>,
    net: &SegNetwork<T>,
    p: &Bound,
    source: &StyleVector,
    target: &StyleVector,
) -> Result<Var> {
    if source.stage != target.stage {
        return Err(Error::StageMismatch { expected: source.stage.number(), got: target.stage.number() });
    }
    let real = net.discriminate_style(g, p, source, source.stage)?;
    let fake = net.discriminate_style(g, p, target, target.stage)?;
    gan_discriminator_loss(g, real, fake)
}

/// `w_seg * seg + w_adv * adv + w_style * style`.
pub fn total_loss<T: Scalar>(g: &mut Graph<T>, w: &LossWeights, seg: Var, adv: Var, style: Var) -> Result<Var> {
    let a = g.scale(seg, T::lit(w.seg))?;
    let b = g.scale(adv, T::lit(w.adv_seg))?;
    let c = g.scale(style, T::lit(w.style))?;
    let ab = g.add(a, b)?;
    g.add(ab, c)
}
