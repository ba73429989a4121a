//! Domain-adaptation training followed by pseudo-label self-training rounds.

mod config;
pub mod optim;
mod run;

pub use config::{OptimConfig, PhaseConfig, RunConfig};
pub use optim::{lr_at, LrSchedule, Optimizer, OptimizerKind};
pub use run::{run_training, write_pseudo_labels, Arm, ArmResult, RunArtifacts, StageResult};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Graph, Var};
use crate::data::{stack_images, Domain, LabelMap, SceneSample, UnlabeledSplit};
use crate::error::Result;
use crate::loss::{self, StyleLossKind};
use crate::metrics::{iou_per_class, ConfusionMatrix, IouReport};
use crate::network::{Bound, Encoded, Group, SegNetwork, Stage, StyleVector};
use crate::pseudo::{self, CategoryCentroid, CentroidAccumulator, PredictionMap, PseudoLabelSelection, SelectionReport};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Loss components and learning rates logged after every update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StepMetrics {
    /// Step within the current phase; the schedules restart every phase.
    pub step: usize,
    pub phase: &'static str,
    /// Self-training round, 0 during domain adaptation.
    pub round: usize,
    pub lr_encoder: f64,
    pub lr_decoder: f64,
    pub lr_discriminator: f64,
    pub seg: f64,
    pub adv_seg_g: f64,
    pub style_g: f64,
    pub ssl: f64,
    pub total: f64,
    pub adv_seg_d: f64,
    pub style_d1: f64,
    pub style_d2: f64,
}

impl StepMetrics {
    pub fn is_finite(&self) -> bool {
        [
            self.lr_encoder,
            self.lr_decoder,
            self.lr_discriminator,
            self.seg,
            self.adv_seg_g,
            self.style_g,
            self.ssl,
            self.total,
            self.adv_seg_d,
            self.style_d1,
            self.style_d2,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Model plus one optimizer per parameter group.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub net: SegNetwork<T>,
    pub config: RunConfig,
    optimizers: Vec<(Group, Optimizer<T>)>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Trainer<T> {
    /// Fresh model initialized from `config.seed`.
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let mut init = ChaCha8Rng::seed_from_u64(config.seed);
        let net = SegNetwork::new(config.corpus.classes, &mut init);
        Ok(Self::from_network(net, config))
    }

    pub fn from_network(net: SegNetwork<T>, config: RunConfig) -> Self {
        let optimizers = Group::ALL
            .iter()
            .map(|&group| {
                let kind = if Group::GENERATOR.contains(&group) { config.optim.sgd() } else { config.optim.adam() };
                (group, Optimizer::new(kind, net.store.ids_in(group), &net.store))
            })
            .collect();
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xba7c_4e55);
        Trainer { net, config, optimizers, rng }
    }

    /// Clears momentum and moment estimates of every optimizer.
    pub fn reset_optimizers(&mut self) {
        self.optimizers.iter_mut().for_each(|(_, o)| o.reset());
    }

    fn schedule(&self, group: Group) -> LrSchedule {
        match group {
            Group::Encoder => self.config.optim.encoder_schedule(),
            Group::Decoder => self.config.optim.decoder_schedule(),
            _ => self.config.optim.discriminator_schedule(),
        }
    }

    fn apply(&mut self, g: &Graph<T>, p: &Bound, groups: &[Group], step: usize) -> Result<()> {
        for i in 0..self.optimizers.len() {
            let group = self.optimizers[i].0;
            if !groups.contains(&group) {
                continue;
            }
            let lr = self.schedule(group).lr_at(step)?;
            let (_, opt) = &mut self.optimizers[i];
            let grads: Vec<Tensor<T>> = opt.ids().iter().map(|&id| g.grad(p.var(id))).collect();
            opt.step(&mut self.net.store, &grads, lr)?;
        }
        Ok(())
    }

    fn lrs(&self, step: usize, m: &mut StepMetrics) -> Result<()> {
        m.step = step;
        m.lr_encoder = self.schedule(Group::Encoder).lr_at(step)?;
        m.lr_decoder = self.schedule(Group::Decoder).lr_at(step)?;
        m.lr_discriminator = self.schedule(Group::SegDiscriminator).lr_at(step)?;
        Ok(())
    }

    /// Draws `batch_size` indices uniformly with replacement.
    pub fn sample_batch(&mut self, len: usize) -> Vec<usize> {
        (0..self.config.phases.batch_size).map(|_| self.rng.random_range(0..len)).collect()
    }

    /// One generator update on the weighted total loss, then one update of
    /// each discriminator on outputs detached from the generator.
    ///
    /// With zero adversarial weights the target path and the
    /// discriminator updates are skipped: they cannot affect the generator.
    pub fn da_step(&mut self, source: &[&SceneSample], target: &[&SceneSample], step: usize) -> Result<StepMetrics> {
        let w = self.config.weights;
        let kind = self.config.style_loss;
        let classes = self.net.classes();
        let mut m = StepMetrics { phase: "da", ..Default::default() };
        self.lrs(step, &mut m)?;

        let mut g = Graph::new();
        let p = self.net.bind(&mut g, &Group::GENERATOR);
        let xs = g.constant(stack_images(source.iter().copied())?);
        let (enc_s, probs_s) = self.net.predict(&mut g, &p, xs, Domain::Source)?;
        let labels: Vec<&LabelMap> = source.iter().map(|s| s.labels.as_ref().expect("source is labeled")).collect();
        let y = g.constant(loss::one_hot(&labels, classes)?);
        let seg = loss::seg_loss(&mut g, probs_s, y)?;

        let adversarial = w.is_adversarial();
        let mut detached = None;
        let (adv, style) = if adversarial {
            let xt = g.constant(stack_images(target.iter().copied())?);
            let (enc_t, probs_t) = self.net.predict(&mut g, &p, xt, Domain::Target)?;
            let dc = self.net.discriminate_seg(&mut g, &p, probs_t)?;
            let adv = loss::adv_seg_loss_g(&mut g, dc)?;
            let style = loss::style_generator_loss(&mut g, &self.net, &p, kind, &enc_s, &enc_t)?;
            detached = Some(Detached::capture(&g, probs_s, probs_t, &enc_s, &enc_t));
            (adv, style)
        } else {
            let z = g.constant(Tensor::scalar(T::zero()));
            (z, z)
        };
        let total = loss::total_loss(&mut g, &w, seg, adv, style)?;
        g.backward(total)?;
        self.apply(&g, &p, &Group::GENERATOR, step)?;
        m.seg = g.value(seg).item().to_f64_lossy();
        m.adv_seg_g = g.value(adv).item().to_f64_lossy();
        m.style_g = g.value(style).item().to_f64_lossy();
        m.total = g.value(total).item().to_f64_lossy();

        if let Some(d) = detached {
            let mut g = Graph::new();
            let mut groups = vec![Group::SegDiscriminator];
            if kind == StyleLossKind::AdversarialMean {
                groups.extend([Group::StyleDiscriminator1, Group::StyleDiscriminator2]);
            }
            let p = self.net.bind(&mut g, &groups);
            let ps = g.constant(d.probs_s);
            let pt = g.constant(d.probs_t);
            let ls = self.net.discriminate_seg(&mut g, &p, ps)?;
            let lt = self.net.discriminate_seg(&mut g, &p, pt)?;
            let mut root = loss::adv_seg_loss_d(&mut g, ls, lt)?;
            m.adv_seg_d = g.value(root).item().to_f64_lossy();
            if kind == StyleLossKind::AdversarialMean {
                for (i, (ss, st)) in d.styles.into_iter().enumerate() {
                    let stage = if i == 0 { Stage::One } else { Stage::Two };
                    let sv = StyleVector { values: g.constant(ss), stage, domain: Domain::Source };
                    let tv = StyleVector { values: g.constant(st), stage, domain: Domain::Target };
                    let l = loss::style_discriminator_loss(&mut g, &self.net, &p, &sv, &tv)?;
                    let v = g.value(l).item().to_f64_lossy();
                    if i == 0 {
                        m.style_d1 = v;
                    } else {
                        m.style_d2 = v;
                    }
                    root = g.add(root, l)?;
                }
            }
            g.backward(root)?;
            self.apply(&g, &p, &groups, step)?;
        }
        Ok(m)
    }

    /// One update on `w_seg * L_seg(source) + L_ssl(target, pseudo labels)`.
    pub fn ssl_step(
        &mut self,
        source: &[&SceneSample],
        target: &[&SceneSample],
        pseudo: &[&PseudoLabelSelection],
        step: usize,
    ) -> Result<StepMetrics> {
        let classes = self.net.classes();
        let mut m = StepMetrics { phase: "ssl", ..Default::default() };
        self.lrs(step, &mut m)?;
        let mut g = Graph::new();
        let p = self.net.bind(&mut g, &Group::GENERATOR);
        let xs = g.constant(stack_images(source.iter().copied())?);
        let (_, probs_s) = self.net.predict(&mut g, &p, xs, Domain::Source)?;
        let labels: Vec<&LabelMap> = source.iter().map(|s| s.labels.as_ref().expect("source is labeled")).collect();
        let y = g.constant(loss::one_hot(&labels, classes)?);
        let seg = loss::seg_loss(&mut g, probs_s, y)?;
        let xt = g.constant(stack_images(target.iter().copied())?);
        let (_, probs_t) = self.net.predict(&mut g, &p, xt, Domain::Target)?;
        let yt = g.constant(loss::pseudo_targets(pseudo, classes)?);
        let ssl = loss::ssl_loss(&mut g, probs_t, yt)?;
        let seg_w = g.scale(seg, T::lit(self.config.weights.seg))?;
        let total = g.add(seg_w, ssl)?;
        g.backward(total)?;
        self.apply(&g, &p, &Group::GENERATOR, step)?;
        m.seg = g.value(seg).item().to_f64_lossy();
        m.ssl = g.value(ssl).item().to_f64_lossy();
        m.total = g.value(total).item().to_f64_lossy();
        Ok(m)
    }

    /// Per-image prediction maps of a split, without recording gradients.
    pub fn predict_maps(&self, images: &[SceneSample]) -> Result<Vec<PredictionMap>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(self.config.phases.eval_batch) {
            let mut g = Graph::new();
            let p = self.net.bind(&mut g, &[]);
            let x = g.constant(stack_images(chunk)?);
            let (_, probs) = self.net.predict(&mut g, &p, x, chunk[0].domain)?;
            out.extend(PredictionMap::from_nchw(g.value(probs))?);
        }
        Ok(out)
    }

    /// Confusion matrix and IoU on a labeled split.
    pub fn evaluate(&self, images: &[SceneSample]) -> Result<(ConfusionMatrix, IouReport)> {
        let mut cm = ConfusionMatrix::new(self.net.classes());
        for (map, s) in self.predict_maps(images)?.iter().zip(images) {
            let gt = s.labels.as_ref().expect("evaluation split is labeled");
            cm.add(&pseudo::hard_labels(map), &gt.labels)?;
        }
        let iou = iou_per_class(&cm);
        Ok((cm, iou))
    }

    /// Freezes the model and labels the whole target-train split.
    pub fn pseudo_label(&self, split: &UnlabeledSplit, delta: f64) -> Result<PseudoLabels> {
        let maps = self.predict_maps(split.images())?;
        let centroids = corpus_centroids(&maps, self.net.classes())?;
        let selections = maps.iter().map(|m| pseudo::select(m, &centroids, delta)).collect::<Result<Vec<_>>>()?;
        let mut report = SelectionReport::new(self.net.classes(), true);
        for (s, gt) in selections.iter().zip(split.audit_labels()) {
            report.add(s, Some(gt))?;
        }
        let report = report.with_centroids(&centroids);
        Ok(PseudoLabels { centroids, selections, report })
    }

    /// Freezes the model, labels the target split with the configured
    /// margin and resets optimizer state for a new round.
    pub fn begin_ssl_round(&mut self, target: &UnlabeledSplit) -> Result<PseudoLabels> {
        let labels = self.pseudo_label(target, self.config.delta)?;
        if labels.report.selected() == 0 {
            log::warn!("empty selection: no target pixel passed the entropy threshold");
        }
        self.reset_optimizers();
        Ok(labels)
    }

    pub(crate) fn draw_da<'a>(
        &mut self,
        source: &'a [SceneSample],
        target: &'a UnlabeledSplit,
    ) -> (Vec<&'a SceneSample>, Vec<&'a SceneSample>) {
        let si = self.sample_batch(source.len());
        let ti = self.sample_batch(target.len());
        (si.iter().map(|&i| &source[i]).collect(), ti.iter().map(|&i| &target.images()[i]).collect())
    }

    pub(crate) fn draw_ssl<'a>(
        &mut self,
        source: &'a [SceneSample],
        target: &'a UnlabeledSplit,
        labels: &'a PseudoLabels,
    ) -> (Vec<&'a SceneSample>, Vec<&'a SceneSample>, Vec<&'a PseudoLabelSelection>) {
        let si = self.sample_batch(source.len());
        let ti = self.sample_batch(target.len());
        (
            si.iter().map(|&i| &source[i]).collect(),
            ti.iter().map(|&i| &target.images()[i]).collect(),
            ti.iter().map(|&i| &labels.selections[i]).collect(),
        )
    }

    /// Pseudo-labels the target split, then trains for `ssl_steps` with a
    /// restarted schedule and fresh optimizer state.
    pub fn ssl_round(
        &mut self,
        round: usize,
        source: &[SceneSample],
        target: &UnlabeledSplit,
        log: &mut dyn FnMut(&StepMetrics),
    ) -> Result<PseudoLabels> {
        let labels = self.begin_ssl_round(target)?;
        for step in 0..self.config.phases.ssl_steps {
            let (s, t, p) = self.draw_ssl(source, target, &labels);
            let mut m = self.ssl_step(&s, &t, &p, step)?;
            m.round = round;
            log(&m);
        }
        Ok(labels)
    }

    /// Runs the configured number of domain-adaptation steps.
    pub fn da_phase(
        &mut self,
        source: &[SceneSample],
        target: &UnlabeledSplit,
        log: &mut dyn FnMut(&StepMetrics),
    ) -> Result<()> {
        for step in 0..self.config.phases.da_steps {
            let (s, t) = self.draw_da(source, target);
            let m = self.da_step(&s, &t, step)?;
            log(&m);
        }
        Ok(())
    }
}

/// Output of one pseudo-labeling sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabels {
    pub centroids: Vec<CategoryCentroid>,
    pub selections: Vec<PseudoLabelSelection>,
    pub report: SelectionReport,
}

/// Centroids pooled over every pixel of every map.
pub fn corpus_centroids(maps: &[PredictionMap], classes: usize) -> Result<Vec<CategoryCentroid>> {
    let mut acc = CentroidAccumulator::new(classes);
    for m in maps {
        acc.add(m)?;
    }
    Ok(acc.finish())
}

/// Generator outputs copied out of the generator graph.
struct Detached<T> {
    probs_s: Tensor<T>,
    probs_t: Tensor<T>,
    styles: [(Tensor<T>, Tensor<T>); 2],
}

impl<T: Scalar> Detached<T> {
    fn capture(g: &Graph<T>, probs_s: Var, probs_t: Var, s: &Encoded, t: &Encoded) -> Self {
        Detached {
            probs_s: g.value(probs_s).clone(),
            probs_t: g.value(probs_t).clone(),
            styles: [
                (g.value(s.style1.values).clone(), g.value(t.style1.values).clone()),
                (g.value(s.style2.values).clone(), g.value(t.style2.values).clone()),
            ],
        }
    }
}
