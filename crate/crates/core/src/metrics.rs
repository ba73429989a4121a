//! Confusion matrices and intersection-over-union.

use crate::error::{Error, Result};

/// Rows are ground truth, columns are predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![0; classes * classes] }
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn add(&mut self, pred: &[u8], gt: &[u8]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::shape("confusion", format!("{} predictions vs {} labels", pred.len(), gt.len())));
        }
        for &l in pred.iter().chain(gt) {
            if l as usize >= self.classes {
                return Err(Error::LabelOutOfRange { label: l as usize, classes: self.classes });
            }
        }
        for (&p, &g) in pred.iter().zip(gt) {
            self.counts[g as usize * self.classes + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::shape("confusion", format!("{} vs {} classes", self.classes, other.classes)));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

pub fn confusion(pred: &[u8], gt: &[u8], classes: usize) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(classes);
    cm.add(pred, gt)?;
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IouReport {
    /// `None` for classes absent from both ground truth and prediction.
    pub iou: Vec<Option<f64>>,
    pub miou: f64,
}

impl IouReport {
    pub fn excluded(&self) -> Vec<usize> {
        self.iou.iter().enumerate().filter(|(_, v)| v.is_none()).map(|(c, _)| c).collect()
    }
}

/// `TP / (TP + FP + FN)` per class; mIoU averages the defined entries.
pub fn iou_per_class(cm: &ConfusionMatrix) -> IouReport {
    let c = cm.classes;
    let iou: Vec<Option<f64>> = (0..c)
        .map(|k| {
            let tp = cm.get(k, k);
            let fn_: u64 = (0..c).map(|p| cm.get(k, p)).sum::<u64>() - tp;
            let fp: u64 = (0..c).map(|g| cm.get(g, k)).sum::<u64>() - tp;
            let denom = tp + fp + fn_;
            (denom > 0).then(|| tp as f64 / denom as f64)
        })
        .collect();
    let defined: Vec<f64> = iou.iter().flatten().copied().collect();
    let miou = if defined.is_empty() { 0.0 } else { defined.iter().sum::<f64>() / defined.len() as f64 };
    IouReport { iou, miou }
}
