//! `styleseg`: corpus generation, training, pseudo-labeling, evaluation,
//! ablations and figures.
//!
//! Exit status is 0 on success, 2 for configuration errors and 1 for any
//! other failure. Failures also print one `styleseg-error` line to stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use styleseg::data::{build_corpus, read_corpus, write_corpus, Corpus};
use styleseg::experiment::{delta_grid, run_ablation, sweep_delta, write_sweep};
use styleseg::network::SegNetwork;
use styleseg::report;
use styleseg::train::{run_training, write_pseudo_labels, Arm, RunConfig, Trainer};
use styleseg::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "styleseg", version, about = "Style-gap domain adaptation lab on synthetic scenes")]
struct Cli {
    /// Worker threads for multi-seed commands.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Log progress to stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the source / target-train / target-eval corpus.
    GenData {
        #[arg(long)]
        out: PathBuf,
        /// Run config whose `corpus` section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Offsets every split's seed range.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Domain adaptation plus the configured self-training rounds.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Pre-generated corpus; generated from the config otherwise.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Ablation arm to train instead of the config as written.
        #[arg(long)]
        arm: Option<String>,
        #[arg(long, value_enum, default_value = "f64")]
        precision: Precision,
    },
    /// Label target-train with a checkpoint and write selection reports.
    Pseudolabel {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config margin.
        #[arg(long, allow_negative_numbers = true)]
        delta: Option<f64>,
    },
    /// Per-class IoU and mIoU of a checkpoint on target-eval.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Every ablation arm over several seeds.
    Ablation {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
        seeds: Vec<u64>,
        #[arg(long, value_enum, default_value = "f64")]
        precision: Precision,
    },
    /// Selection coverage and precision over a grid of margins.
    SweepDelta {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, allow_negative_numbers = true, default_value_t = 0.0)]
        from: f64,
        #[arg(long, allow_negative_numbers = true, default_value_t = 0.5)]
        to: f64,
        #[arg(long, default_value_t = 11)]
        steps: usize,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Render every known CSV under a directory to SVG.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn corpus_for(cfg: &mut RunConfig, dir: Option<&Path>) -> Result<Corpus> {
    match dir {
        Some(d) => {
            let c = read_corpus(d)?;
            cfg.corpus = c.config.clone();
            Ok(c)
        }
        None => build_corpus(&cfg.corpus),
    }
}

/// Checkpoint plus corpus, with the config's class count taken from the corpus.
fn load_model(config: Option<&Path>, corpus: &Path, checkpoint: &Path) -> Result<(Trainer<f64>, Corpus)> {
    let mut cfg = load_config(config)?;
    let corpus = corpus_for(&mut cfg, Some(corpus))?;
    cfg.validate()?;
    let net = SegNetwork::from_checkpoint(cfg.corpus.classes, checkpoint)?;
    Ok((Trainer::from_network(net, cfg), corpus))
}

fn iou_table(r: &styleseg::metrics::IouReport) -> String {
    let mut s = format!("{:>5}  {:>8}\n", "class", "IoU");
    for (c, v) in r.iou.iter().enumerate() {
        match v {
            Some(v) => s.push_str(&format!("{c:>5}  {v:>8.4}\n")),
            None => s.push_str(&format!("{c:>5}  {:>8}\n", "excluded")),
        }
    }
    s.push_str(&format!("{:>5}  {:>8.4}\n", "mIoU", r.miou));
    let ex = r.excluded();
    if !ex.is_empty() {
        s.push_str(&format!("excluded (no pixels): {ex:?}\n"));
    }
    s
}

fn train<T: styleseg::scalar::Scalar>(cfg: &RunConfig, corpus: &Corpus, out: &Path) -> Result<()> {
    let a = run_training::<T>(cfg, corpus, Some(out))?;
    for s in &a.stages {
        println!("{:<5} step {:>5}  mIoU {:.4}", s.label, s.global_step, s.iou.miou);
    }
    print!("{}", iou_table(a.final_iou()));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { out, config, seed } => {
            let cfg = load_config(config.as_deref())?;
            let corpus = build_corpus(&cfg.corpus.with_base_seed(seed))?;
            write_corpus(&corpus, &out)?;
            println!(
                "wrote {} source, {} target-train, {} target-eval samples to {}",
                corpus.source.len(),
                corpus.target_train.len(),
                corpus.target_eval.len(),
                out.display()
            );
            println!("checksum {:016x}", corpus.checksum());
        }
        Command::Train { config, corpus, out, arm, precision } => {
            let mut cfg = load_config(config.as_deref())?;
            let corpus = corpus_for(&mut cfg, corpus.as_deref())?;
            if let Some(a) = arm {
                cfg = a.parse::<Arm>()?.configure(&cfg);
            }
            cfg.validate()?;
            match precision {
                Precision::F64 => train::<f64>(&cfg, &corpus, &out)?,
                Precision::F32 => train::<f32>(&cfg, &corpus, &out)?,
            }
        }
        Command::Pseudolabel { checkpoint, corpus, out, config, delta } => {
            let (trainer, corpus) = load_model(config.as_deref(), &corpus, &checkpoint)?;
            let delta = delta.unwrap_or(trainer.config.delta);
            if !delta.is_finite() {
                return Err(Error::Config("delta must be finite".into()));
            }
            let labels = trainer.pseudo_label(&corpus.target_train, delta)?;
            report::write_selection_report(out.join("selection_report.csv"), &labels.report)?;
            write_pseudo_labels(&out.join("pseudo_labels"), &labels.selections)?;
            let r = &labels.report;
            println!("delta {delta}: selected {} pixels, coverage {:.2}%", r.selected(), r.coverage_pct());
            if let Some(p) = r.precision_pct() {
                println!("precision {p:.2}%");
            }
        }
        Command::Eval { checkpoint, corpus, out, config } => {
            let (trainer, corpus) = load_model(config.as_deref(), &corpus, &checkpoint)?;
            let (_, iou) = trainer.evaluate(&corpus.target_eval)?;
            report::write_final_eval(out.join("final_eval.csv"), &iou)?;
            print!("{}", iou_table(&iou));
        }
        Command::Ablation { config, corpus, out, seeds, precision } => {
            let mut cfg = load_config(config.as_deref())?;
            let corpus = corpus_for(&mut cfg, corpus.as_deref())?;
            let r = match precision {
                Precision::F64 => run_ablation::<f64>(&cfg, &corpus, &seeds, cli.threads, Some(&out))?,
                Precision::F32 => run_ablation::<f32>(&cfg, &corpus, &seeds, cli.threads, Some(&out))?,
            };
            print!("{}", r.table());
        }
        Command::SweepDelta { checkpoint, corpus, out, from, to, steps, config } => {
            let grid = delta_grid(from, to, steps)?;
            let (trainer, corpus) = load_model(config.as_deref(), &corpus, &checkpoint)?;
            let maps = trainer.predict_maps(corpus.target_train.images())?;
            let rows = sweep_delta(&maps, Some(corpus.target_train.audit_labels()), &grid)?;
            write_sweep(out.join("sweep_delta.csv"), &rows)?;
            println!("{:>8} {:>10} {:>10} {:>10}", "delta", "selected", "coverage", "precision");
            for r in &rows {
                let p = r.precision_pct.map(|p| format!("{p:.2}")).unwrap_or_else(|| "-".into());
                println!("{:>8.4} {:>10} {:>10.2} {:>10}", r.delta, r.selected, r.coverage_pct, p);
            }
        }
        Command::Report { dir } => {
            let files = report::render_dir(&dir)?;
            for f in &files {
                println!("{}", f.display());
            }
            if files.is_empty() {
                log::warn!("no known CSV files under {}", dir.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = if e.is_config() { ("config", 2) } else { ("runtime", 1) };
            eprintln!("styleseg-error kind={kind} exit={code} message={:?}", e.to_string());
            ExitCode::from(code)
        }
    }
}
