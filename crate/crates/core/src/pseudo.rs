//! Category-adaptive pseudo-label selection.
//!
//! Each class `l` gets a centroid `f^l`, the mean prediction vector over the
//! pixels whose argmax is `l`. A pixel predicted as `l` is kept when its
//! prediction entropy is strictly below `E(f^l) - delta`.

use serde::{Deserialize, Serialize};

use crate::data::LabelMap;
use crate::error::{Error, Result};
use crate::loss::PROB_FLOOR;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Default entropy margin.
pub const DEFAULT_DELTA: f64 = 0.05;
/// Allowed deviation of a pixel's probabilities from summing to one.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Per-pixel class probabilities, `[H, W, C]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionMap {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub probs: Vec<f64>,
}

impl PredictionMap {
    pub fn new(height: usize, width: usize, classes: usize, probs: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || classes == 0 || probs.len() != height * width * classes {
            return Err(Error::shape(
                "prediction_map",
                format!("{height}x{width}x{classes} vs {} values", probs.len()),
            ));
        }
        for (i, px) in probs.chunks(classes).enumerate() {
            let sum: f64 = px.iter().sum();
            if px.iter().any(|v| !(0.0..=1.0).contains(v)) || (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::DomainError { op: "prediction_map", detail: format!("pixel {i} is not a distribution: {px:?}") });
            }
        }
        Ok(PredictionMap { height, width, classes, probs })
    }

    /// Splits an `[N, C, H, W]` probability tensor into one map per image.
    pub fn from_nchw<T: Scalar>(t: &Tensor<T>) -> Result<Vec<Self>> {
        let s = t.shape();
        if s.len() != 4 {
            return Err(Error::shape("prediction_map", format!("expected [N, C, H, W], got {s:?}")));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let plane = h * w;
        let d = t.data();
        (0..n)
            .map(|b| {
                let img = &d[b * c * plane..(b + 1) * c * plane];
                let mut probs = vec![0.0; plane * c];
                for ch in 0..c {
                    for i in 0..plane {
                        probs[i * c + ch] = img[ch * plane + i].to_f64_lossy();
                    }
                }
                // single-precision softmax rows drift from 1 by ~1e-7
                for px in probs.chunks_mut(c) {
                    let s: f64 = px.iter().sum();
                    px.iter_mut().for_each(|v| *v /= s);
                }
                PredictionMap::new(h, w, c, probs)
            })
            .collect()
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.probs[i * self.classes..(i + 1) * self.classes]
    }

    /// Relabels class `c` as `perm[c]`.
    pub fn permute_classes(&self, perm: &[usize]) -> Self {
        let mut probs = vec![0.0; self.probs.len()];
        for i in 0..self.pixels() {
            for (c, &v) in self.pixel(i).iter().enumerate() {
                probs[i * self.classes + perm[c]] = v;
            }
        }
        PredictionMap { probs, ..*self }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = c;
        }
    }
    best
}

/// Natural-log entropy with probabilities clamped away from zero.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().map(|&v| v * v.clamp(PROB_FLOOR, 1.0).ln()).sum::<f64>()
}

pub fn hard_labels(p: &PredictionMap) -> Vec<u8> {
    (0..p.pixels()).map(|i| argmax(p.pixel(i)) as u8).collect()
}

pub fn entropy_map(p: &PredictionMap) -> Vec<f64> {
    (0..p.pixels()).map(|i| entropy(p.pixel(i))).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoryCentroid {
    pub class: usize,
    /// Mean prediction vector; `None` when no pixel is assigned to the class.
    pub centroid: Option<Vec<f64>>,
    pub support: usize,
    pub entropy: Option<f64>,
}

/// Running sums for centroids pooled over many maps.
#[derive(Clone, Debug, PartialEq)]
pub struct CentroidAccumulator {
    classes: usize,
    sums: Vec<f64>,
    support: Vec<usize>,
}

impl CentroidAccumulator {
    pub fn new(classes: usize) -> Self {
        CentroidAccumulator { classes, sums: vec![0.0; classes * classes], support: vec![0; classes] }
    }

    pub fn add(&mut self, p: &PredictionMap) -> Result<()> {
        if p.classes != self.classes {
            return Err(Error::CentroidMismatch { centroids: self.classes, map: p.classes });
        }
        for i in 0..p.pixels() {
            let px = p.pixel(i);
            let l = argmax(px);
            self.support[l] += 1;
            for (s, &v) in self.sums[l * self.classes..(l + 1) * self.classes].iter_mut().zip(px) {
                *s += v;
            }
        }
        Ok(())
    }

    pub fn finish(&self) -> Vec<CategoryCentroid> {
        (0..self.classes)
            .map(|l| {
                let support = self.support[l];
                let centroid = (support > 0).then(|| {
                    self.sums[l * self.classes..(l + 1) * self.classes]
                        .iter()
                        .map(|s| s / support as f64)
                        .collect::<Vec<_>>()
                });
                let entropy = centroid.as_deref().map(entropy);
                CategoryCentroid { class: l, centroid, support, entropy }
            })
            .collect()
    }
}

/// Centroids of a single map.
pub fn category_centroids(p: &PredictionMap) -> Vec<CategoryCentroid> {
    let mut acc = CentroidAccumulator::new(p.classes);
    acc.add(p).expect("same class count");
    acc.finish()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SelectionRule {
    /// Entropy below the class centroid entropy minus a margin.
    Adaptive { delta: f64 },
    /// Max confidence above a single global threshold.
    FixedThreshold { tau: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelSelection {
    pub height: usize,
    pub width: usize,
    /// Argmax label of every pixel, selected or not.
    pub labels: Vec<u8>,
    pub mask: Vec<bool>,
    /// Selected pixels per class.
    pub counts: Vec<usize>,
    pub rule: SelectionRule,
}

impl PseudoLabelSelection {
    pub fn selected(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Label map restricted to selected pixels, for dumping.
    pub fn label_map(&self) -> LabelMap {
        LabelMap { height: self.height, width: self.width, labels: self.labels.clone() }
    }
}

fn build_selection(p: &PredictionMap, rule: SelectionRule, keep: impl Fn(usize, &[f64]) -> bool) -> PseudoLabelSelection {
    let labels = hard_labels(p);
    let mut counts = vec![0; p.classes];
    let mask = (0..p.pixels())
        .map(|i| {
            let k = keep(labels[i] as usize, p.pixel(i));
            if k {
                counts[labels[i] as usize] += 1;
            }
            k
        })
        .collect();
    PseudoLabelSelection { height: p.height, width: p.width, labels, mask, counts, rule }
}

/// Keeps pixel `(h, w)` with argmax `l` iff `E(p) < E(f^l) - delta`.
/// Classes without a centroid never contribute pseudo labels.
pub fn select(p: &PredictionMap, centroids: &[CategoryCentroid], delta: f64) -> Result<PseudoLabelSelection> {
    if centroids.len() != p.classes {
        return Err(Error::CentroidMismatch { centroids: centroids.len(), map: p.classes });
    }
    let thresholds: Vec<Option<f64>> = centroids.iter().map(|c| c.entropy.map(|e| e - delta)).collect();
    Ok(build_selection(p, SelectionRule::Adaptive { delta }, |l, px| {
        thresholds[l].is_some_and(|t| entropy(px) < t)
    }))
}

/// Keeps every pixel whose max confidence exceeds `tau`.
pub fn select_fixed_threshold(p: &PredictionMap, tau: f64) -> PseudoLabelSelection {
    build_selection(p, SelectionRule::FixedThreshold { tau }, |l, px| px[l] > tau)
}

/// Per-class selection statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassSelection {
    pub class: usize,
    /// Pixels predicted as this class.
    pub support: usize,
    pub centroid_entropy: Option<f64>,
    pub selected: usize,
    /// Selected pixels whose pseudo label matches the audit label.
    pub correct: Option<usize>,
}

impl ClassSelection {
    pub fn coverage_pct(&self) -> f64 {
        if self.support == 0 {
            0.0
        } else {
            100.0 * self.selected as f64 / self.support as f64
        }
    }

    /// `None` without audit labels or when nothing was selected.
    pub fn precision_pct(&self) -> Option<f64> {
        let c = self.correct?;
        (self.selected > 0).then(|| 100.0 * c as f64 / self.selected as f64)
    }
}

/// Accumulates per-class selection statistics across images.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionReport {
    pub classes: Vec<ClassSelection>,
}

impl SelectionReport {
    pub fn new(classes: usize, audited: bool) -> Self {
        SelectionReport {
            classes: (0..classes)
                .map(|class| ClassSelection {
                    class,
                    support: 0,
                    centroid_entropy: None,
                    selected: 0,
                    correct: audited.then_some(0),
                })
                .collect(),
        }
    }

    pub fn add(&mut self, sel: &PseudoLabelSelection, audit: Option<&LabelMap>) -> Result<()> {
        if let Some(gt) = audit {
            if (gt.height, gt.width) != (sel.height, sel.width) {
                return Err(Error::shape(
                    "selection_report",
                    format!("audit {}x{} vs selection {}x{}", gt.height, gt.width, sel.height, sel.width),
                ));
            }
        }
        for (i, (&l, &m)) in sel.labels.iter().zip(&sel.mask).enumerate() {
            let l = l as usize;
            let row = self
                .classes
                .get_mut(l)
                .ok_or(Error::LabelOutOfRange { label: l, classes: sel.counts.len() })?;
            row.support += 1;
            if m {
                row.selected += 1;
                if let (Some(c), Some(gt)) = (row.correct.as_mut(), audit) {
                    if gt.labels[i] as usize == l {
                        *c += 1;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn with_centroids(mut self, centroids: &[CategoryCentroid]) -> Self {
        for (row, c) in self.classes.iter_mut().zip(centroids) {
            row.centroid_entropy = c.entropy;
        }
        self
    }

    pub fn selected(&self) -> usize {
        self.classes.iter().map(|c| c.selected).sum()
    }

    pub fn support(&self) -> usize {
        self.classes.iter().map(|c| c.support).sum()
    }

    /// Overall fraction of pixels selected, in percent.
    pub fn coverage_pct(&self) -> f64 {
        let s = self.support();
        if s == 0 {
            0.0
        } else {
            100.0 * self.selected() as f64 / s as f64
        }
    }

    /// Overall precision over every selected pixel, when audited.
    pub fn precision_pct(&self) -> Option<f64> {
        let correct: Option<usize> = self.classes.iter().map(|c| c.correct).sum();
        let sel = self.selected();
        (sel > 0).then_some(())?;
        correct.map(|c| 100.0 * c as f64 / sel as f64)
    }

    /// Max over min per-class coverage among classes with support.
    /// Infinite when some supported class receives no pseudo labels.
    pub fn coverage_ratio(&self) -> f64 {
        let cov: Vec<f64> = self.classes.iter().filter(|c| c.support > 0).map(|c| c.coverage_pct()).collect();
        let max = cov.iter().cloned().fold(0.0, f64::max);
        let min = cov.iter().cloned().fold(f64::INFINITY, f64::min);
        if max == 0.0 {
            1.0
        } else {
            max / min
        }
    }
}

/// Statistics for a single selection.
pub fn selection_report(sel: &PseudoLabelSelection, audit: Option<&LabelMap>) -> Result<SelectionReport> {
    let mut r = SelectionReport::new(sel.counts.len(), audit.is_some());
    r.add(sel, audit)?;
    Ok(r)
}
