//! Clean, corrupted and adversarial accuracy, the severity and corruption
//! means, and side-by-side robustness reports.
//!
//! Scores are top-1 accuracies stored as fractions in `f64`. A corruption
//! row is summarized by the mean over its five severities, and the overall
//! score is the mean of the 19 row means.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{self, AttackConfig};
use crate::corruption::{corrupt_dataset, CorruptionGroup, CorruptionKind, SEVERITIES};
use crate::data::{save_dataset, to_byte, Dataset};
use crate::error::{Error, Result};
use crate::image::{batch_to_images, images_to_batch, ImageTensor};
use crate::model::{write_checkpoint, ModelBundle};
use crate::rng::{derive_seed, stream};
use crate::scalar::Scalar;

/// Label attached to every score.
pub const METRIC: &str = "top-1 accuracy";

/// Images per forward pass and per attack batch.
pub const EVAL_CHUNK: usize = 100;

fn check_nonempty(dataset: &Dataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Config("evaluation dataset is empty".into()));
    }
    Ok(())
}

fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    let correct = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    correct as f64 / labels.len() as f64
}

/// Fraction of images whose arg-max class equals the label.
pub fn eval_clean<T: Scalar>(model: &ModelBundle<T>, dataset: &Dataset) -> Result<f64> {
    check_nonempty(dataset)?;
    Ok(accuracy(&model.predict(&dataset.images, EVAL_CHUNK)?, &dataset.labels))
}

/// Rounds every value to the nearest 8-bit level, as storing the image would.
pub fn quantize(image: &ImageTensor) -> ImageTensor {
    image.map(|v| f32::from(to_byte(v)) / 255.0)
}

/// The dataset corrupted with `kind` at `severity` and quantized to 8 bits.
/// Identical to writing the corrupted copy as PNG and loading it back.
pub fn corrupted_copy(dataset: &Dataset, kind: CorruptionKind, severity: u8, base_seed: u64) -> Result<Dataset> {
    let images = corrupt_dataset(&dataset.images, kind, severity, base_seed)?;
    dataset.with_images(images.iter().map(quantize).collect())
}

/// Writes all 95 corrupted copies under `dir/<kind>/<severity>/`.
pub fn materialize_corruptions(dataset: &Dataset, base_seed: u64, dir: &Path) -> Result<()> {
    for kind in CorruptionKind::ALL {
        for severity in SEVERITIES {
            let copy = corrupted_copy(dataset, kind, severity, base_seed)?;
            save_dataset(&dir.join(kind.name()).join(severity.to_string()), &copy)?;
        }
    }
    Ok(())
}

/// Scores of one corruption kind at severities 1 through 5.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionRow {
    pub kind: CorruptionKind,
    pub scores: [f64; 5],
}

/// One row per corruption kind, in [`CorruptionKind::ALL`] order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CorruptionMatrix {
    pub rows: Vec<CorruptionRow>,
}

impl CorruptionMatrix {
    /// A matrix whose every row has all five severities equal to `row_values[kind]`.
    pub fn from_row_values(row_values: &[f64]) -> Result<Self> {
        if row_values.len() != CorruptionKind::ALL.len() {
            return Err(Error::Contract(format!("need 19 row values, got {}", row_values.len())));
        }
        Ok(Self {
            rows: CorruptionKind::ALL
                .iter()
                .zip(row_values)
                .map(|(&kind, &v)| CorruptionRow { kind, scores: [v; 5] })
                .collect(),
        })
    }

    pub fn get(&self, kind: CorruptionKind, severity: u8) -> Option<f64> {
        let row = self.rows.iter().find(|r| r.kind == kind)?;
        row.scores.get(usize::from(severity).checked_sub(1)?).copied()
    }

    /// All 19 kinds present in canonical order, every score in `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        let kinds: Vec<CorruptionKind> = self.rows.iter().map(|r| r.kind).collect();
        if kinds != CorruptionKind::ALL {
            return Err(Error::Contract(format!(
                "corruption matrix must list the 19 kinds in canonical order, got {} rows",
                kinds.len()
            )));
        }
        for row in &self.rows {
            if let Some(v) = row.scores.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Contract(format!("{} score {v} outside [0, 1]", row.kind)));
            }
        }
        Ok(())
    }

    /// Severity mean of every row.
    pub fn per_corruption(&self) -> Result<Vec<f64>> {
        self.validate()?;
        self.rows.iter().map(|r| aggregate_per_corruption(&r.scores)).collect()
    }

    /// Mean of the per-corruption means.
    pub fn overall(&self) -> Result<f64> {
        aggregate_overall(&self.per_corruption()?)
    }
}

/// Accuracy on every `(kind, severity)` corrupted copy of `dataset`.
pub fn eval_corruption_matrix<T: Scalar>(
    model: &ModelBundle<T>,
    dataset: &Dataset,
    base_seed: u64,
) -> Result<CorruptionMatrix> {
    check_nonempty(dataset)?;
    let cells: Vec<(CorruptionKind, u8)> = CorruptionKind::ALL
        .iter()
        .flat_map(|&k| SEVERITIES.map(move |s| (k, s)))
        .collect();
    let scores = cells
        .par_iter()
        .map(|&(kind, severity)| {
            let copy = corrupted_copy(dataset, kind, severity, base_seed)?;
            Ok(accuracy(&model.predict(&copy.images, EVAL_CHUNK)?, &copy.labels))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(CorruptionMatrix {
        rows: CorruptionKind::ALL
            .iter()
            .zip(scores.chunks_exact(5))
            .map(|(&kind, s)| CorruptionRow {
                kind,
                scores: [s[0], s[1], s[2], s[3], s[4]],
            })
            .collect(),
    })
}

fn mean_of(values: &[f64], arity: usize, what: &str) -> Result<f64> {
    if values.len() != arity {
        return Err(Error::Contract(format!(
            "{what} needs exactly {arity} values, got {}",
            values.len()
        )));
    }
    Ok(values.iter().sum::<f64>() / arity as f64)
}

/// Mean over the five severities of one corruption.
pub fn aggregate_per_corruption(scores: &[f64]) -> Result<f64> {
    mean_of(scores, 5, "per-corruption mean")
}

/// Mean over the 19 per-corruption means.
pub fn aggregate_overall(per_corruption: &[f64]) -> Result<f64> {
    mean_of(per_corruption, CorruptionKind::ALL.len(), "overall mean")
}

/// PGD images of `dataset`, attacked in chunks of [`EVAL_CHUNK`]. Chunk `c`
/// draws its random start from `derive_seed(seed, [ATTACK, c])`.
pub fn adversarial_images<T: Scalar>(
    model: &ModelBundle<T>,
    dataset: &Dataset,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<Vec<attack::AttackOutcome<T>>> {
    check_nonempty(dataset)?;
    cfg.validate()?;
    dataset
        .images
        .chunks(EVAL_CHUNK)
        .zip(dataset.labels.chunks(EVAL_CHUNK))
        .enumerate()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(c, (images, labels))| {
            let x = images_to_batch::<T>(images)?;
            attack::pgd_batch(model, &x, labels, cfg, derive_seed(seed, &[stream::ATTACK, c as u64]))
        })
        .collect()
}

/// Accuracy on PGD outputs, one attack per sample.
pub fn eval_adversarial<T: Scalar>(
    model: &ModelBundle<T>,
    dataset: &Dataset,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<f64> {
    let mut predictions = Vec::with_capacity(dataset.len());
    for out in adversarial_images(model, dataset, cfg, seed)? {
        predictions.extend(model.predict(&batch_to_images(&out.adversarial)?, EVAL_CHUNK)?);
    }
    Ok(accuracy(&predictions, &dataset.labels))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// SHA-256 over class names, labels and 8-bit pixel values.
pub fn dataset_fingerprint(dataset: &Dataset) -> String {
    let mut h = Sha256::new();
    for name in &dataset.class_names {
        h.update(name.as_bytes());
        h.update([0]);
    }
    for (img, &label) in dataset.images.iter().zip(&dataset.labels) {
        h.update((label as u64).to_le_bytes());
        let (height, width) = img.dims();
        h.update((height as u64).to_le_bytes());
        h.update((width as u64).to_le_bytes());
        h.update(img.data().iter().map(|&v| to_byte(v)).collect::<Vec<u8>>());
    }
    hex(&h.finalize())
}

/// SHA-256 of the serialized checkpoint.
pub fn checkpoint_hash(model: &ModelBundle<f32>) -> String {
    hex(&Sha256::digest(write_checkpoint(model)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarialScore {
    pub attack: AttackConfig,
    pub seed: u64,
    pub accuracy: f64,
}

/// Everything measured for one trained model on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerfRecord {
    /// Column title, usually the training recipe.
    pub label: String,
    pub metric: String,
    pub dataset_id: String,
    pub checkpoint_hash: String,
    pub corruption_seed: u64,
    pub clean: f64,
    pub corruption: CorruptionMatrix,
    pub adversarial: Option<AdversarialScore>,
}

impl PerfRecord {
    pub fn validate(&self) -> Result<()> {
        let in_range = |v: f64| (0.0..=1.0).contains(&v);
        if !in_range(self.clean) {
            return Err(Error::Contract(format!("clean score {} outside [0, 1]", self.clean)));
        }
        if let Some(a) = &self.adversarial {
            if !in_range(a.accuracy) {
                return Err(Error::Contract(format!("adversarial score {} outside [0, 1]", a.accuracy)));
            }
        }
        self.corruption.validate()
    }
}

/// Options for [`evaluate`].
#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub corruption_seed: u64,
    /// Attack and seed for the adversarial score; skipped when `None`.
    pub attack: Option<(AttackConfig, u64)>,
}

/// Clean, corrupted and (optionally) adversarial scores of `model`.
pub fn evaluate(model: &ModelBundle<f32>, dataset: &Dataset, label: &str, opts: &EvalOptions) -> Result<PerfRecord> {
    let clean = eval_clean(model, dataset)?;
    let corruption = eval_corruption_matrix(model, dataset, opts.corruption_seed)?;
    let adversarial = match &opts.attack {
        Some((cfg, seed)) => Some(AdversarialScore {
            attack: *cfg,
            seed: *seed,
            accuracy: eval_adversarial(model, dataset, cfg, *seed)?,
        }),
        None => None,
    };
    let record = PerfRecord {
        label: label.to_string(),
        metric: METRIC.to_string(),
        dataset_id: dataset_fingerprint(dataset),
        checkpoint_hash: checkpoint_hash(model),
        corruption_seed: opts.corruption_seed,
        clean,
        corruption,
        adversarial,
    };
    record.validate()?;
    Ok(record)
}

/// One table row: a value per record, its percent rendering and the best
/// column(s).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub group: Option<String>,
    pub name: String,
    pub values: Vec<Option<f64>>,
    pub display: Vec<String>,
    pub best: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub metric: String,
    pub dataset_id: String,
    pub columns: Vec<String>,
    pub checkpoints: Vec<String>,
    pub rows: Vec<ReportRow>,
}

pub const CLEAN_ROW: &str = "Natural samples";
pub const AVERAGE_ROW: &str = "Average of 19 corruptions";
pub const ADVERSARIAL_ROW: &str = "Adversarial (PGD)";

/// Human-readable corruption name.
pub fn corruption_title(kind: CorruptionKind) -> String {
    if kind == CorruptionKind::JpegCompression {
        return "JPEG Compression".into();
    }
    kind.name()
        .split('_')
        .map(|w| {
            let mut c = w.chars();
            c.next().map_or(String::new(), |f| f.to_uppercase().chain(c).collect())
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Percent with two decimals; `-` for a missing value.
pub fn format_score(value: Option<f64>) -> String {
    value.map_or_else(|| "-".into(), |v| format!("{:.2}", 100.0 * v))
}

fn make_row(group: Option<CorruptionGroup>, name: String, values: Vec<Option<f64>>) -> ReportRow {
    let display: Vec<String> = values.iter().map(|&v| format_score(v)).collect();
    // ties are judged on the printed value
    let best_text = values
        .iter()
        .zip(&display)
        .filter(|(v, _)| v.is_some())
        .max_by(|a, b| a.0.partial_cmp(b.0).unwrap_or(std::cmp::Ordering::Equal))
        .map(|(_, d)| d.clone());
    let best = match best_text {
        Some(t) if values.len() > 1 => display.iter().enumerate().filter(|(_, d)| **d == t).map(|(i, _)| i).collect(),
        _ => Vec::new(),
    };
    ReportRow {
        group: group.map(|g| g.label().to_string()),
        name,
        values,
        display,
        best,
    }
}

/// Aggregates records into table rows: clean, 19 corruptions, their
/// average and, when any record has one, the adversarial score.
pub fn build_report(records: &[PerfRecord]) -> Result<RobustnessReport> {
    let first = records
        .first()
        .ok_or_else(|| Error::Contract("a report needs at least one record".into()))?;
    for r in records {
        r.validate()?;
        if r.dataset_id != first.dataset_id {
            return Err(Error::Contract(format!(
                "records '{}' and '{}' were evaluated on different datasets ({} vs {}); \
                 their scores are not comparable",
                first.label, r.label, first.dataset_id, r.dataset_id
            )));
        }
        if r.metric != first.metric {
            return Err(Error::Contract(format!(
                "records '{}' and '{}' use different metrics ({} vs {})",
                first.label, r.label, first.metric, r.metric
            )));
        }
    }
    let per: Vec<Vec<f64>> = records.iter().map(|r| r.corruption.per_corruption()).collect::<Result<_>>()?;
    let mut rows = vec![make_row(None, CLEAN_ROW.into(), records.iter().map(|r| Some(r.clean)).collect())];
    for (k, kind) in CorruptionKind::ALL.iter().enumerate() {
        rows.push(make_row(
            Some(kind.group()),
            corruption_title(*kind),
            per.iter().map(|p| Some(p[k])).collect(),
        ));
    }
    let averages = per.iter().map(|p| aggregate_overall(p).map(Some)).collect::<Result<_>>()?;
    rows.push(make_row(None, AVERAGE_ROW.into(), averages));
    if records.iter().any(|r| r.adversarial.is_some()) {
        rows.push(make_row(
            None,
            ADVERSARIAL_ROW.into(),
            records.iter().map(|r| r.adversarial.as_ref().map(|a| a.accuracy)).collect(),
        ));
    }
    Ok(RobustnessReport {
        metric: first.metric.clone(),
        dataset_id: first.dataset_id.clone(),
        columns: records.iter().map(|r| r.label.clone()).collect(),
        checkpoints: records.iter().map(|r| r.checkpoint_hash.clone()).collect(),
        rows,
    })
}

impl RobustnessReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned plain-text table; the best value per row carries a `*`.
    pub fn to_text(&self) -> String {
        let group_w = self.rows.iter().filter_map(|r| r.group.as_ref()).map(String::len).max().unwrap_or(0).max(5);
        let name_w = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
        let col_w: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .map(|(c, title)| {
                self.rows.iter().map(|r| r.display[c].len() + 1).max().unwrap_or(0).max(title.len())
            })
            .collect();
        let mut out = String::new();
        let _ = writeln!(out, "Metric: {} (%), higher is better; * marks the best value per row", self.metric);
        let _ = writeln!(out, "Dataset: {}", self.dataset_id);
        let mut header = format!("{:<group_w$} | {:<name_w$}", "Group", "Row");
        for (title, w) in self.columns.iter().zip(&col_w) {
            let _ = write!(header, " | {title:>w$}");
        }
        let rule: String = header.chars().map(|c| if c == '|' { '+' } else { '-' }).collect();
        let _ = writeln!(out, "{header}\n{rule}");
        let mut last_group: Option<&str> = None;
        for row in &self.rows {
            let group = row.group.as_deref();
            if group != last_group {
                let _ = writeln!(out, "{rule}");
            }
            let shown = if group.is_some() && group != last_group { group.unwrap_or("") } else { "" };
            last_group = group;
            let mut line = format!("{shown:<group_w$} | {:<name_w$}", row.name);
            for (c, w) in col_w.iter().enumerate() {
                let mark = if row.best.contains(&c) { "*" } else { " " };
                let _ = write!(line, " | {:>w$}", format!("{}{mark}", row.display[c]));
            }
            let _ = writeln!(out, "{}", line.trim_end());
        }
        out
    }
}

/// JSON and text renderings of the same report.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedReport {
    pub report: RobustnessReport,
    pub json: String,
    pub text: String,
}

pub fn render_report(records: &[PerfRecord]) -> Result<RenderedReport> {
    let report = build_report(records)?;
    Ok(RenderedReport {
        json: report.to_json()?,
        text: report.to_text(),
        report,
    })
}
