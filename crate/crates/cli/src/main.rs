//! `aclkit` command-line driver.

mod config;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aclkit::attack::{self, AttackConfig};
use aclkit::corruption::{severity_tables_json, CorruptionKind};
use aclkit::data::{gen_synthetic, load_dataset_dir, save_dataset, Dataset};
use aclkit::evaluation::{self, corrupted_copy, render_report, EvalOptions, PerfRecord, EVAL_CHUNK};
use aclkit::model::{load_checkpoint, save_checkpoint};
use aclkit::rng::{derive_seed, stream};
use aclkit::training::{train_acl, train_standard};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::{Recipe, RunConfig};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser, Debug)]
#[command(name = "aclkit", version, about = "Adversarial contrastive training and robustness evaluation")]
struct Cli {
    /// Worker threads for per-image parallel work; does not change results.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// JSON run config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic shape dataset.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Write a corrupted copy of a dataset.
    Corrupt {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        kind: Option<CorruptionKind>,
        #[arg(long)]
        severity: Option<u8>,
        /// Write all 19 x 5 copies under `<output>/<kind>/<severity>`.
        #[arg(long)]
        all: bool,
        /// Print the severity tables as JSON and exit.
        #[arg(long)]
        dump_severity_tables: bool,
    },
    /// Attack a dataset with PGD and write the adversarial images.
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        step_size: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Train a model with standard or adversarial contrastive training.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        recipe: Option<Recipe>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Score a checkpoint on clean, corrupted and adversarial data.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        label: Option<String>,
        /// Skip the adversarial score.
        #[arg(long)]
        no_attack: bool,
        /// Also write the 95 corrupted copies under `<output>/corrupted`.
        #[arg(long)]
        materialize: bool,
    },
    /// Combine performance records into a side-by-side table.
    Report {
        #[command(flatten)]
        common: Common,
        /// `perf_record.json` files, one column each.
        records: Vec<PathBuf>,
    },
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &common.dataset {
        cfg.dataset = Some(d.clone());
    }
    if let Some(o) = &common.output {
        cfg.output = o.clone();
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.train.config.seed = cfg.seed;
    Ok(cfg)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let dir = cfg.dataset()?;
    load_dataset_dir(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

#[derive(Serialize)]
struct ImageAudit {
    index: usize,
    label: usize,
    loss_before: f64,
    loss_after: f64,
    loss_delta: f64,
    linf: f64,
    in_ball: bool,
}

#[derive(Serialize)]
struct AttackSummary {
    attack: AttackConfig,
    seed: u64,
    images: usize,
    mean_loss_delta: f64,
    max_linf: f64,
    ball_violations: usize,
    per_image: Vec<ImageAudit>,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { common, classes, per_class, size } => {
            let mut cfg = resolve(&common)?;
            cfg.gen.classes = classes.unwrap_or(cfg.gen.classes);
            cfg.gen.per_class = per_class.unwrap_or(cfg.gen.per_class);
            cfg.gen.size = size.unwrap_or(cfg.gen.size);
            let data = gen_synthetic(cfg.gen.classes, cfg.gen.per_class, cfg.gen.size, cfg.seed)?;
            save_dataset(&cfg.output, &data)?;
            eprintln!("wrote {} images to {}", data.len(), cfg.output.display());
        }
        Command::Corrupt { common, kind, severity, all, dump_severity_tables } => {
            if dump_severity_tables {
                emit(&(severity_tables_json() + "\n"));
                return Ok(());
            }
            let mut cfg = resolve(&common)?;
            cfg.corrupt.kind = kind.or(cfg.corrupt.kind);
            cfg.corrupt.severity = severity.or(cfg.corrupt.severity);
            let data = load_dataset(&cfg)?;
            if all {
                evaluation::materialize_corruptions(&data, cfg.seed, &cfg.output)?;
                eprintln!("wrote 95 corrupted copies to {}", cfg.output.display());
            } else {
                let kind = cfg.corrupt.kind.context("no corruption kind given (--kind or corrupt.kind)")?;
                let sev = cfg.corrupt.severity.context("no severity given (--severity or corrupt.severity)")?;
                save_dataset(&cfg.output, &corrupted_copy(&data, kind, sev, cfg.seed)?)?;
                eprintln!("wrote {kind} severity {sev} copy to {}", cfg.output.display());
            }
        }
        Command::Attack { common, checkpoint, radius, step_size, iterations } => {
            let mut cfg = resolve(&common)?;
            let a = &mut cfg.attack;
            a.checkpoint = checkpoint.or(a.checkpoint.take());
            a.config.radius = radius.unwrap_or(a.config.radius);
            a.config.step_size = step_size.unwrap_or(a.config.step_size);
            a.config.iterations = iterations.unwrap_or(a.config.iterations);
            a.config.validate()?;
            let ckpt = cfg.attack.checkpoint.as_deref().context("no checkpoint given (--checkpoint or attack.checkpoint)")?;
            let model = load_checkpoint(ckpt)?;
            let data = load_dataset(&cfg)?;
            let mut pairs = Vec::with_capacity(data.len());
            for (c, (images, labels)) in data.images.chunks(EVAL_CHUNK).zip(data.labels.chunks(EVAL_CHUNK)).enumerate() {
                let seed = derive_seed(cfg.seed, &[stream::ATTACK, c as u64]);
                pairs.extend(attack::pgd(&model, images, labels, &cfg.attack.config, seed)?);
            }
            let radius = cfg.attack.config.radius;
            let per_image: Vec<ImageAudit> = pairs
                .iter()
                .zip(&data.labels)
                .enumerate()
                .map(|(index, (p, &label))| ImageAudit {
                    index,
                    label,
                    loss_before: p.loss_before,
                    loss_after: p.loss_after,
                    loss_delta: p.loss_after - p.loss_before,
                    linf: p.linf_distance(),
                    in_ball: p.within_ball(radius),
                })
                .collect();
            let summary = AttackSummary {
                attack: cfg.attack.config,
                seed: cfg.seed,
                images: per_image.len(),
                mean_loss_delta: per_image.iter().map(|a| a.loss_delta).sum::<f64>() / per_image.len() as f64,
                max_linf: per_image.iter().map(|a| a.linf).fold(0.0, f64::max),
                ball_violations: per_image.iter().filter(|a| !a.in_ball).count(),
                per_image,
            };
            let adversarial = data.with_images(pairs.into_iter().map(|p| p.adversarial).collect())?;
            save_dataset(&cfg.output.join("images"), &adversarial)?;
            write_json(&cfg.output.join("attack_summary.json"), &summary)?;
            cfg.save(&cfg.output.join("run_config.json"))?;
            eprintln!(
                "attacked {} images: mean loss delta {:.4}, {} ball violations",
                summary.images, summary.mean_loss_delta, summary.ball_violations
            );
        }
        Command::Train { common, recipe, epochs, batch_size, learning_rate } => {
            let mut cfg = resolve(&common)?;
            let t = &mut cfg.train;
            t.recipe = recipe.unwrap_or(t.recipe);
            t.config.epochs = epochs.unwrap_or(t.config.epochs);
            t.config.batch_size = batch_size.unwrap_or(t.config.batch_size);
            t.config.learning_rate = learning_rate.unwrap_or(t.config.learning_rate);
            t.config.validate()?;
            let data = load_dataset(&cfg)?;
            let (model, history) = match cfg.train.recipe {
                Recipe::Standard => train_standard::<f32>(&data, &cfg.train.config)?,
                Recipe::Acl => train_acl::<f32>(&data, &cfg.train.config)?,
            };
            create_dir(&cfg.output)?;
            save_checkpoint(&model, cfg.output.join("checkpoint.bin"))?;
            write_json(&cfg.output.join("history.json"), &history)?;
            cfg.save(&cfg.output.join("run_config.json"))?;
            if let Some(last) = history.epochs.last() {
                eprintln!(
                    "trained {} epochs ({}): final loss {:.4}, train accuracy {:.4}",
                    history.epochs.len(),
                    cfg.train.recipe.label(),
                    last.loss.total,
                    last.accuracy
                );
            }
        }
        Command::Eval { common, checkpoint, label, no_attack, materialize } => {
            let mut cfg = resolve(&common)?;
            let e = &mut cfg.eval;
            e.checkpoint = checkpoint.or(e.checkpoint.take());
            e.label = label.or(e.label.take());
            e.materialize |= materialize;
            if no_attack {
                e.attack = None;
            }
            let ckpt = cfg.eval.checkpoint.clone().context("no checkpoint given (--checkpoint or eval.checkpoint)")?;
            let label = cfg.eval.label.clone().unwrap_or_else(|| default_label(&ckpt));
            let model = load_checkpoint(&ckpt)?;
            let data = load_dataset(&cfg)?;
            let opts = EvalOptions {
                corruption_seed: cfg.seed,
                attack: cfg.eval.attack.map(|a| (a, cfg.seed)),
            };
            let record = evaluation::evaluate(&model, &data, &label, &opts)?;
            create_dir(&cfg.output)?;
            if cfg.eval.materialize {
                evaluation::materialize_corruptions(&data, cfg.seed, &cfg.output.join("corrupted"))?;
            }
            write_json(&cfg.output.join("perf_record.json"), &record)?;
            cfg.save(&cfg.output.join("run_config.json"))?;
            eprintln!(
                "{label}: clean {:.2}%, corruption mean {:.2}%",
                100.0 * record.clean,
                100.0 * record.corruption.overall()?
            );
        }
        Command::Report { common, records } => {
            let mut cfg = resolve(&common)?;
            if !records.is_empty() {
                cfg.report.records = records;
            }
            if cfg.report.records.is_empty() {
                bail!("no performance records given");
            }
            let records = cfg
                .report
                .records
                .iter()
                .map(|p| {
                    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str::<PerfRecord>(&text).with_context(|| format!("parsing {}", p.display()))
                })
                .collect::<Result<Vec<_>>>()?;
            let rendered = render_report(&records)?;
            create_dir(&cfg.output)?;
            fs::write(cfg.output.join("report.txt"), &rendered.text)?;
            fs::write(cfg.output.join("report.json"), rendered.json + "\n")?;
            emit(&rendered.text);
        }
    }
    Ok(())
}

/// Writes to stdout, tolerating a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn default_label(checkpoint: &Path) -> String {
    // `<run>/checkpoint.bin` is labelled by its run directory
    let named = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned());
    match checkpoint.parent() {
        Some(dir) if named(checkpoint).as_deref() == Some("checkpoint") => named(dir),
        _ => named(checkpoint),
    }
    .unwrap_or_else(|| "model".into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
