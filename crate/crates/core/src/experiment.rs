//! Multi-run experiments: the arm ablation, margin sweeps and the
//! class-balance comparison against a fixed confidence threshold.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::data::{Corpus, LabelMap};
use crate::error::{Error, Result};
use crate::metrics::IouReport;
use crate::pseudo::{self, PredictionMap, SelectionReport};
use crate::report;
use crate::scalar::Scalar;
use crate::train::{corpus_centroids, run_training, Arm, RunConfig, Trainer};

/// One row of a margin sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub delta: f64,
    pub selected: usize,
    pub coverage_pct: f64,
    pub precision_pct: Option<f64>,
}

/// `steps` evenly spaced margins from `from` to `to` inclusive.
pub fn delta_grid(from: f64, to: f64, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 || !from.is_finite() || !to.is_finite() || (steps == 1 && from != to) {
        return Err(Error::Config(format!("bad delta grid {from}..{to} in {steps} steps")));
    }
    if steps == 1 {
        return Ok(vec![from]);
    }
    Ok((0..steps).map(|i| from + (to - from) * i as f64 / (steps - 1) as f64).collect())
}

/// Selection statistics at each margin, with centroids pooled once over
/// all maps.
pub fn sweep_delta(maps: &[PredictionMap], audit: Option<&[LabelMap]>, deltas: &[f64]) -> Result<Vec<SweepRow>> {
    let classes = maps.first().map(|m| m.classes).ok_or_else(|| Error::shape("sweep_delta", "no maps"))?;
    let centroids = corpus_centroids(maps, classes)?;
    deltas
        .iter()
        .map(|&delta| {
            let mut r = SelectionReport::new(classes, audit.is_some());
            for (i, m) in maps.iter().enumerate() {
                r.add(&pseudo::select(m, &centroids, delta)?, audit.map(|a| &a[i]))?;
            }
            Ok(SweepRow { delta, selected: r.selected(), coverage_pct: r.coverage_pct(), precision_pct: r.precision_pct() })
        })
        .collect()
}

pub fn write_sweep(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.delta.to_string(),
                r.selected.to_string(),
                r.coverage_pct.to_string(),
                r.precision_pct.map(|p| p.to_string()).unwrap_or_default(),
            ]
        })
        .collect();
    report::write_csv(path, &["delta", "selected", "coverage_pct", "precision_pct"], &rows)
}

/// Adaptive selection against a fixed threshold tuned to the same count.
#[derive(Clone, Debug, PartialEq)]
pub struct BalanceComparison {
    pub delta: f64,
    pub tau: f64,
    pub adaptive: SelectionReport,
    pub fixed: SelectionReport,
}

impl BalanceComparison {
    /// Relative difference of the two selected-pixel totals.
    pub fn count_gap(&self) -> f64 {
        let (a, f) = (self.adaptive.selected() as f64, self.fixed.selected() as f64);
        (a - f).abs() / a.max(1.0)
    }
}

fn fixed_report(maps: &[PredictionMap], audit: &[LabelMap], tau: f64) -> Result<SelectionReport> {
    let mut r = SelectionReport::new(maps[0].classes, true);
    for (m, gt) in maps.iter().zip(audit) {
        r.add(&pseudo::select_fixed_threshold(m, tau), Some(gt))?;
    }
    Ok(r)
}

/// Bisects the fixed confidence threshold until its selected count is
/// within `tolerance` (relative) of the adaptive selector's.
pub fn balance_comparison(
    maps: &[PredictionMap],
    audit: &[LabelMap],
    delta: f64,
    tolerance: f64,
) -> Result<BalanceComparison> {
    let classes = maps.first().map(|m| m.classes).ok_or_else(|| Error::shape("balance_comparison", "no maps"))?;
    let centroids = corpus_centroids(maps, classes)?;
    let mut adaptive = SelectionReport::new(classes, true);
    for (m, gt) in maps.iter().zip(audit) {
        adaptive.add(&pseudo::select(m, &centroids, delta)?, Some(gt))?;
    }
    let adaptive = adaptive.with_centroids(&centroids);
    let target = adaptive.selected() as f64;
    // selected count is non-increasing in tau
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut best: Option<(f64, SelectionReport)> = None;
    for _ in 0..60 {
        let tau = 0.5 * (lo + hi);
        let r = fixed_report(maps, audit, tau)?;
        let n = r.selected() as f64;
        let gap = (n - target).abs();
        if best.as_ref().is_none_or(|(_, b)| gap < (b.selected() as f64 - target).abs()) {
            best = Some((tau, r));
        }
        if gap <= tolerance * target.max(1.0) {
            break;
        }
        if n > target {
            lo = tau;
        } else {
            hi = tau;
        }
    }
    let (tau, fixed) = best.expect("at least one probe");
    Ok(BalanceComparison { delta, tau, adaptive, fixed })
}

/// Per-seed outcome of the ablation.
#[derive(Clone, Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    pub arms: Vec<(Arm, IouReport)>,
    /// Selection counts of the two self-training rounds.
    pub round_selected: Vec<usize>,
    pub balance: BalanceComparison,
}

impl SeedOutcome {
    pub fn miou(&self, arm: Arm) -> Option<f64> {
        self.arms.iter().find(|(a, _)| *a == arm).map(|(_, r)| r.miou)
    }
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub seeds: Vec<SeedOutcome>,
}

pub fn median(v: &[f64]) -> f64 {
    let mut s: Vec<f64> = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

impl AblationReport {
    pub fn median_miou(&self, arm: Arm) -> f64 {
        median(&self.seeds.iter().filter_map(|s| s.miou(arm)).collect::<Vec<_>>())
    }

    /// Median over seeds of the per-seed difference `a - b`.
    pub fn median_gain(&self, a: Arm, b: Arm) -> f64 {
        median(&self.seeds.iter().filter_map(|s| Some(s.miou(a)? - s.miou(b)?)).collect::<Vec<_>>())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut rows = Vec::new();
        for s in &self.seeds {
            for (arm, r) in &s.arms {
                rows.push(vec![s.seed.to_string(), arm.name().to_string(), r.miou.to_string()]);
            }
        }
        report::write_csv(dir.join("ablation.csv"), &["seed", "arm", "miou"], &rows)?;
        let summary: Vec<Vec<String>> =
            Arm::ALL.iter().map(|&a| vec![a.name().to_string(), self.median_miou(a).to_string()]).collect();
        report::write_csv(dir.join("ablation_summary.csv"), &["arm", "median_miou"], &summary)?;
        let balance: Vec<Vec<String>> = self
            .seeds
            .iter()
            .map(|s| {
                let b = &s.balance;
                vec![
                    s.seed.to_string(),
                    b.delta.to_string(),
                    b.tau.to_string(),
                    b.adaptive.selected().to_string(),
                    b.fixed.selected().to_string(),
                    b.adaptive.coverage_ratio().to_string(),
                    b.fixed.coverage_ratio().to_string(),
                ]
            })
            .collect();
        report::write_csv(
            dir.join("balance.csv"),
            &["seed", "delta", "tau", "adaptive_selected", "fixed_selected", "adaptive_ratio", "fixed_ratio"],
            &balance,
        )
    }

    /// Arm x median mIoU, formatted as a text table.
    pub fn table(&self) -> String {
        let mut s = format!("{:<12} {:>12}\n", "arm", "median mIoU");
        for a in Arm::ALL {
            s.push_str(&format!("{:<12} {:>12.4}\n", a.name(), self.median_miou(a)));
        }
        s
    }
}

/// Runs the arms for one seed. The self-training arms continue from the
/// `+adv` model, so one adversarial run yields three arms.
pub fn run_seed<T: Scalar>(base: &RunConfig, corpus: &Corpus, seed: u64, out: Option<&Path>) -> Result<SeedOutcome> {
    let mut cfg = base.clone();
    cfg.seed = seed;
    let sub = |name: &str| out.map(|d| d.join(format!("seed_{seed}")).join(name));
    let original = run_training::<T>(&Arm::Original.configure(&cfg), corpus, sub("original").as_deref())?;
    let adv = run_training::<T>(&Arm::AdvSsl2.configure(&cfg), corpus, sub("adv").as_deref())?;
    let mut arms = vec![(Arm::Original, original.final_iou().clone())];
    for (arm, stage) in [Arm::Adv, Arm::AdvSsl1, Arm::AdvSsl2].into_iter().zip(&adv.stages) {
        arms.push((arm, stage.iou.clone()));
    }
    let da = Trainer::from_network(adv.stages[0].network.clone(), cfg.clone());
    let maps = da.predict_maps(corpus.target_train.images())?;
    let balance = balance_comparison(&maps, corpus.target_train.audit_labels(), cfg.delta, 0.05)?;
    let round_selected = adv.rounds.iter().map(|r| r.report.selected()).collect();
    Ok(SeedOutcome { seed, arms, round_selected, balance })
}

/// Every arm for every seed; seeds run on up to `threads` worker threads.
pub fn run_ablation<T: Scalar>(
    base: &RunConfig,
    corpus: &Corpus,
    seeds: &[u64],
    threads: usize,
    out: Option<&Path>,
) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    base.validate()?;
    let next = Mutex::new(0usize);
    let results: Mutex<Vec<Option<Result<SeedOutcome>>>> = Mutex::new((0..seeds.len()).map(|_| None).collect());
    let out: Option<PathBuf> = out.map(Path::to_path_buf);
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, seeds.len()) {
            scope.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("lock");
                    let i = *n;
                    *n += 1;
                    i
                };
                if i >= seeds.len() {
                    break;
                }
                let r = run_seed::<T>(base, corpus, seeds[i], out.as_deref());
                results.lock().expect("lock")[i] = Some(r);
            });
        }
    });
    let seeds = results
        .into_inner()
        .expect("lock")
        .into_iter()
        .map(|r| r.expect("every seed ran"))
        .collect::<Result<Vec<_>>>()?;
    let report = AblationReport { seeds };
    if let Some(dir) = &out {
        report.write(dir)?;
    }
    Ok(report)
}
