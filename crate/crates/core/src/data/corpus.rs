use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scene::{check_dims, generate_scene};
use super::style::{apply_style_shift, StyleShiftSpec};
use super::{Domain, LabelMap, SceneSample};
use crate::error::{Error, Result};
use crate::io::tensorfile::TensorFile;

const MANIFEST: &str = "corpus.toml";
const SPLITS: [&str; 3] = ["source_train", "target_train", "target_eval"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRange {
    pub start: u64,
    pub count: usize,
}

impl SeedRange {
    pub fn end(&self) -> u64 {
        self.start + self.count as u64
    }

    fn overlaps(&self, other: &SeedRange) -> bool {
        self.count > 0 && other.count > 0 && self.start < other.end() && other.start < self.end()
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> {
        self.start..self.end()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub source: SeedRange,
    pub target_train: SeedRange,
    pub target_eval: SeedRange,
    pub style: StyleShiftSpec,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            height: 64,
            width: 64,
            classes: 6,
            source: SeedRange { start: 0, count: 400 },
            target_train: SeedRange { start: 100_000, count: 400 },
            target_eval: SeedRange { start: 200_000, count: 100 },
            style: StyleShiftSpec::default(),
        }
    }
}

impl CorpusConfig {
    /// Shifts every seed range (and the noise stream) by a base seed.
    pub fn with_base_seed(mut self, seed: u64) -> Self {
        let offset = seed.wrapping_mul(1_000_000);
        for r in [&mut self.source, &mut self.target_train, &mut self.target_eval] {
            r.start = r.start.wrapping_add(offset);
        }
        self.style.seed ^= seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_dims(self.height, self.width, self.classes).map_err(|e| Error::Config(e.to_string()))?;
        if self.height % 4 != 0 || self.width % 4 != 0 {
            return Err(Error::Config("height and width must be divisible by 4".into()));
        }
        self.style.validate()?;
        let ranges = [("source", self.source), ("target_train", self.target_train), ("target_eval", self.target_eval)];
        for (i, (a, ra)) in ranges.iter().enumerate() {
            if ra.start.checked_add(ra.count as u64).is_none() {
                return Err(Error::Config(format!("{a} seed range overflows")));
            }
            for (b, rb) in &ranges[i + 1..] {
                if ra.overlaps(rb) {
                    return Err(Error::Config(format!("seed ranges of {a} and {b} overlap")));
                }
            }
        }
        Ok(())
    }
}

/// Target training images whose ground truth is held back from training.
#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledSplit {
    images: Vec<SceneSample>,
    audit: Vec<LabelMap>,
}

impl UnlabeledSplit {
    /// Images only; every returned sample has `labels == None`.
    pub fn images(&self) -> &[SceneSample] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Withheld ground truth, for pseudo-label precision audits only.
    pub fn audit_labels(&self) -> &[LabelMap] {
        &self.audit
    }

    fn from_labeled(samples: Vec<SceneSample>) -> Self {
        let mut audit = Vec::with_capacity(samples.len());
        let images = samples
            .into_iter()
            .map(|mut s| {
                audit.push(s.labels.take().expect("generated samples are labeled"));
                s
            })
            .collect();
        UnlabeledSplit { images, audit }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub source: Vec<SceneSample>,
    pub target_train: UnlabeledSplit,
    pub target_eval: Vec<SceneSample>,
}

impl Corpus {
    /// FNV-1a digest over every image and label of every split.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        let all = self.source.iter().chain(self.target_train.images()).chain(&self.target_eval);
        for s in all {
            s.image.iter().for_each(|v| eat(&v.to_le_bytes()));
            if let Some(l) = &s.labels {
                eat(&l.labels);
            }
        }
        for l in self.target_train.audit_labels() {
            eat(&l.labels);
        }
        h
    }
}

fn target_sample(cfg: &CorpusConfig, seed: u64) -> Result<SceneSample> {
    let s = generate_scene(seed, cfg.height, cfg.width, cfg.classes)?;
    Ok(apply_style_shift(&s, &cfg.style.for_scene(seed)))
}

pub fn build_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    cfg.validate()?;
    let source = cfg
        .source
        .seeds()
        .map(|s| generate_scene(s, cfg.height, cfg.width, cfg.classes))
        .collect::<Result<Vec<_>>>()?;
    let target_train = cfg.target_train.seeds().map(|s| target_sample(cfg, s)).collect::<Result<Vec<_>>>()?;
    let target_eval = cfg.target_eval.seeds().map(|s| target_sample(cfg, s)).collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        config: cfg.clone(),
        source,
        target_train: UnlabeledSplit::from_labeled(target_train),
        target_eval,
    })
}

fn write_split(dir: &Path, samples: &[SceneSample], labels: &[&LabelMap]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, (s, l)) in samples.iter().zip(labels).enumerate() {
        TensorFile::f64(vec![3, s.height, s.width], s.image.clone())?.write(dir.join(format!("img_{i:05}.bin")))?;
        TensorFile::u8(vec![l.height, l.width], l.labels.clone())?.write(dir.join(format!("lbl_{i:05}.bin")))?;
    }
    Ok(())
}

/// Writes one directory per split plus a `corpus.toml` manifest.
pub fn write_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = toml::to_string(&corpus.config).map_err(|e| Error::format(dir, e.to_string()))?;
    fs::write(dir.join(MANIFEST), manifest).map_err(|e| Error::io(dir.join(MANIFEST), e))?;
    write_split(&dir.join(SPLITS[0]), &corpus.source, &labeled(&corpus.source))?;
    let audit: Vec<&LabelMap> = corpus.target_train.audit.iter().collect();
    write_split(&dir.join(SPLITS[1]), &corpus.target_train.images, &audit)?;
    write_split(&dir.join(SPLITS[2]), &corpus.target_eval, &labeled(&corpus.target_eval))?;
    Ok(())
}

fn labeled(v: &[SceneSample]) -> Vec<&LabelMap> {
    v.iter().map(|s| s.labels.as_ref().expect("labeled split")).collect()
}

fn read_split(dir: &Path, count: usize, cfg: &CorpusConfig, domain: Domain) -> Result<Vec<SceneSample>> {
    (0..count)
        .map(|i| {
            let ip = dir.join(format!("img_{i:05}.bin"));
            let lp = dir.join(format!("lbl_{i:05}.bin"));
            let (idims, image) = TensorFile::read(&ip)?.into_f64(&ip)?;
            let (ldims, labels) = TensorFile::read(&lp)?.into_u8(&lp)?;
            if idims != [3, cfg.height, cfg.width] || ldims != [cfg.height, cfg.width] {
                return Err(Error::format(&ip, "dimensions disagree with manifest"));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l as usize >= cfg.classes) {
                return Err(Error::LabelOutOfRange { label: bad as usize, classes: cfg.classes });
            }
            Ok(SceneSample {
                image,
                height: cfg.height,
                width: cfg.width,
                labels: Some(LabelMap { height: cfg.height, width: cfg.width, labels }),
                domain,
            })
        })
        .collect()
}

pub fn read_corpus(dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    let mp = dir.join(MANIFEST);
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let config: CorpusConfig = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", mp.display())))?;
    config.validate()?;
    let source = read_split(&dir.join(SPLITS[0]), config.source.count, &config, Domain::Source)?;
    let target_train = read_split(&dir.join(SPLITS[1]), config.target_train.count, &config, Domain::Target)?;
    let target_eval = read_split(&dir.join(SPLITS[2]), config.target_eval.count, &config, Domain::Target)?;
    Ok(Corpus {
        config,
        source,
        target_train: UnlabeledSplit::from_labeled(target_train),
        target_eval,
    })
}
