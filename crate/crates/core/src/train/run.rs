use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PseudoLabels, RunConfig, StepMetrics, Trainer};
use crate::data::Corpus;
use crate::error::{Error, Result};
use crate::io::tensorfile::TensorFile;
use crate::loss::LossWeights;
use crate::metrics::IouReport;
use crate::network::{checkpoint, SegNetwork};
use crate::pseudo::PseudoLabelSelection;
use crate::report;
use crate::scalar::Scalar;

/// Ablation arms, cumulative from left to right.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    Original,
    Adv,
    AdvSsl1,
    AdvSsl2,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Original, Arm::Adv, Arm::AdvSsl1, Arm::AdvSsl2];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Original => "original",
            Arm::Adv => "+adv",
            Arm::AdvSsl1 => "+adv+ssl1",
            Arm::AdvSsl2 => "+adv+ssl2",
        }
    }

    pub fn ssl_rounds(self) -> usize {
        match self {
            Arm::Original | Arm::Adv => 0,
            Arm::AdvSsl1 => 1,
            Arm::AdvSsl2 => 2,
        }
    }

    pub fn is_adversarial(self) -> bool {
        self != Arm::Original
    }

    /// The base config specialized to this arm: source-only weights for
    /// `original`, the base weights otherwise.
    pub fn configure(self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        if !self.is_adversarial() {
            cfg.weights = LossWeights { adv_seg: 0.0, style: 0.0, ..base.weights };
        }
        cfg.phases.ssl_rounds = self.ssl_rounds();
        cfg
    }
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown arm {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmResult {
    pub arm: Arm,
    pub iou: IouReport,
}

/// Model state and evaluation at the end of one phase.
#[derive(Clone, Debug)]
pub struct StageResult<T> {
    /// `"da"` or `"ssl<k>"`.
    pub label: String,
    pub global_step: usize,
    pub iou: IouReport,
    pub network: SegNetwork<T>,
}

#[derive(Clone, Debug)]
pub struct RunArtifacts<T> {
    pub trainer: Trainer<T>,
    pub metrics: Vec<StepMetrics>,
    pub stages: Vec<StageResult<T>>,
    pub rounds: Vec<PseudoLabels>,
}

impl<T> RunArtifacts<T> {
    pub fn final_iou(&self) -> &IouReport {
        &self.stages.last().expect("at least the DA stage").iou
    }
}

/// Hard labels and masks as `u8` TensorFiles, one pair per image.
pub fn write_pseudo_labels(dir: &Path, selections: &[PseudoLabelSelection]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, s) in selections.iter().enumerate() {
        let dims = vec![s.height, s.width];
        TensorFile::u8(dims.clone(), s.labels.clone())?.write(dir.join(format!("pseudo_{i:05}.bin")))?;
        let mask = s.mask.iter().map(|&m| u8::from(m)).collect();
        TensorFile::u8(dims, mask)?.write(dir.join(format!("mask_{i:05}.bin")))?;
    }
    Ok(())
}

fn save_checkpoint<T: Scalar>(out: Option<&Path>, net: &SegNetwork<T>, step: usize) -> Result<()> {
    if let Some(dir) = out {
        checkpoint::save(&net.store, dir.join("checkpoints").join(format!("step_{step}.bin")))?;
    }
    Ok(())
}

/// Domain adaptation followed by `config.phases.ssl_rounds` self-training
/// rounds, evaluating on target-eval after every phase.
///
/// With `out` set, writes the run directory: `config.toml`, `metrics.csv`,
/// `checkpoints/step_<n>.bin`, `ssl_round_<k>/`, `stage_eval.csv` and
/// `final_eval.csv`.
pub fn run_training<T: Scalar>(config: &RunConfig, corpus: &Corpus, out: Option<&Path>) -> Result<RunArtifacts<T>> {
    if corpus.config.classes != config.corpus.classes {
        return Err(Error::Config(format!(
            "corpus has {} classes, config expects {}",
            corpus.config.classes, config.corpus.classes
        )));
    }
    let mut trainer = Trainer::<T>::new(config.clone())?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        fs::write(dir.join("config.toml"), config.to_toml()).map_err(|e| Error::io(dir.join("config.toml"), e))?;
    }
    let mut rec = Recorder { out, every: config.phases.checkpoint_every, metrics: Vec::new(), rows: Vec::new() };
    let mut stages = Vec::new();
    let mut rounds = Vec::new();
    for step in 0..config.phases.da_steps {
        let (s, t) = trainer.draw_da(&corpus.source, &corpus.target_train);
        let m = trainer.da_step(&s, &t, step)?;
        rec.push(m, &trainer.net)?;
    }
    stages.push(finish_stage(&trainer, corpus, "da".into(), rec.metrics.len(), out)?);
    for round in 1..=config.phases.ssl_rounds {
        let labels = trainer.begin_ssl_round(&corpus.target_train)?;
        for step in 0..config.phases.ssl_steps {
            let (s, t, p) = trainer.draw_ssl(&corpus.source, &corpus.target_train, &labels);
            let mut m = trainer.ssl_step(&s, &t, &p, step)?;
            m.round = round;
            rec.push(m, &trainer.net)?;
        }
        if let Some(dir) = out {
            let rd = dir.join(format!("ssl_round_{round}"));
            report::write_selection_report(rd.join("selection_report.csv"), &labels.report)?;
            write_pseudo_labels(&rd.join("pseudo_labels"), &labels.selections)?;
        }
        rounds.push(labels);
        stages.push(finish_stage(&trainer, corpus, format!("ssl{round}"), rec.metrics.len(), out)?);
    }
    if let Some(dir) = out {
        report::write_csv(dir.join("metrics.csv"), &report::METRICS_HEADER, &rec.rows)?;
        let stage_rows: Vec<Vec<String>> = stages
            .iter()
            .map(|s| vec![s.label.clone(), s.global_step.to_string(), s.iou.miou.to_string()])
            .collect();
        report::write_csv(dir.join("stage_eval.csv"), &["stage", "global_step", "miou"], &stage_rows)?;
        report::write_final_eval(dir.join("final_eval.csv"), &stages.last().expect("da stage").iou)?;
    }
    Ok(RunArtifacts { trainer, metrics: rec.metrics, stages, rounds })
}

struct Recorder<'a> {
    out: Option<&'a Path>,
    every: usize,
    metrics: Vec<StepMetrics>,
    rows: Vec<Vec<String>>,
}

impl Recorder<'_> {
    fn push<T: Scalar>(&mut self, m: StepMetrics, net: &SegNetwork<T>) -> Result<()> {
        let global = self.metrics.len() + 1;
        if !m.is_finite() {
            log::warn!("non-finite loss at step {global}: {m:?}");
        }
        self.rows.push(report::metrics_row(global, &m));
        self.metrics.push(m);
        if self.every > 0 && global % self.every == 0 {
            save_checkpoint(self.out, net, global)?;
        }
        Ok(())
    }
}

fn finish_stage<T: Scalar>(
    trainer: &Trainer<T>,
    corpus: &Corpus,
    label: String,
    global_step: usize,
    out: Option<&Path>,
) -> Result<StageResult<T>> {
    let (_, iou) = trainer.evaluate(&corpus.target_eval)?;
    log::info!("{label}: step {global_step}, target-eval mIoU {:.4}", iou.miou);
    save_checkpoint(out, &trainer.net, global_step)?;
    Ok(StageResult { label, global_step, iou, network: trainer.net.clone() })
}
