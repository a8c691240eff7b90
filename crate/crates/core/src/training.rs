//! Standard cross-entropy training and adversarial contrastive learning.
//!
//! One ACL step augments every sample into two views, perturbs the first
//! view with the configured attack, and minimizes
//!
//! ```text
//! contrastive = α · Σᵢ InfoNCE(h(f(xᵢ)), h(f(x̂ᵢ)))
//! adversarial = β · ½ Σᵢ [CE(g(f(xᵢ)), yᵢ) + CE(g(f(x̂ᵢ)), yᵢ)]   (÷ N when normalized)
//! total       = contrastive / N + adversarial
//! ```
//!
//! where `x` is the first view, `x̂` its perturbation, and `α`, `β` are the
//! contrastive and adversarial weights. A term with zero weight is not
//! evaluated, so its head receives exactly zero gradient.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{self, AttackConfig, AttackObjective, InfoNceSettings};
use crate::autodiff::{DenominatorMode, Reduction, Tape, Tensor, Var};
use crate::corruption::{augment_view, AugmentationSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::image::{images_to_batch, ImageTensor};
use crate::model::{argmax_rows, Architecture, ModelBundle};
use crate::rng::{derive_seed, stream, stream_rng};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// InfoNCE temperature τ.
    pub temperature: f64,
    /// Weight α of the contrastive term. Distinct from the attack step size.
    pub contrastive_weight: f64,
    /// Weight β of the cross-entropy term.
    pub adversarial_weight: f64,
    pub attack: AttackConfig,
    pub augmentation: AugmentationSpec,
    pub seed: u64,
    pub denominator_mode: DenominatorMode,
    /// Divide the summed cross-entropy by the batch size.
    pub normalize_adversarial: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 0.05,
            momentum: 0.9,
            temperature: 0.5,
            contrastive_weight: 1.0,
            adversarial_weight: 1.0,
            attack: AttackConfig::train_default(),
            augmentation: AugmentationSpec::default(),
            seed: 0,
            denominator_mode: DenominatorMode::Standard,
            normalize_adversarial: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        for (name, w) in [
            ("contrastive", self.contrastive_weight),
            ("adversarial", self.adversarial_weight),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("{name} weight must be finite and non-negative, got {w}"));
            }
        }
        if self.contrastive_weight == 0.0 && self.adversarial_weight == 0.0 {
            return bad("at least one loss weight must be positive".into());
        }
        if self.contrastive_weight > 0.0 && self.batch_size < 2 {
            return bad("the contrastive term needs batch size >= 2".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be non-negative, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        self.attack.validate()?;
        self.augmentation.validate()
    }

    pub fn infonce(&self) -> InfoNceSettings {
        InfoNceSettings {
            temperature: self.temperature,
            mode: self.denominator_mode,
        }
    }
}

/// The reported terms of one batch or the batch mean over an epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// `α · Σ InfoNCE`.
    pub contrastive: f64,
    /// `β · ½ Σ (CE + CE)`, divided by N when normalized.
    pub adversarial: f64,
    /// `contrastive / N + adversarial`.
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.contrastive.is_finite() && self.adversarial.is_finite() && self.total.is_finite()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over the epoch's batches.
    pub loss: LossBreakdown,
    /// Accuracy on the clean views seen during the epoch.
    pub accuracy: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

/// Per-step telemetry passed to training observers.
#[derive(Clone, Debug)]
pub struct StepReport {
    pub epoch: usize,
    pub step: usize,
    pub loss: LossBreakdown,
    /// Gradient norms of encoder, classifier and projector before the update.
    pub grad_norms: [f64; 3],
}

/// Clean views, their perturbations and labels.
#[derive(Clone, Debug)]
pub struct AclBatch<T> {
    pub clean: Tensor<T>,
    pub adversarial: Tensor<T>,
    pub labels: Vec<usize>,
}

/// Mean InfoNCE of two `[M, D]` latent batches.
pub fn compute_infonce_batch<T: Scalar>(
    latents_clean: &Tensor<T>,
    latents_adv: &Tensor<T>,
    temperature: f64,
    mode: DenominatorMode,
) -> Result<f64> {
    Ok(crate::autodiff::info_nce(latents_clean, latents_adv, temperature, mode)?.mean)
}

/// Evaluates the combined objective on `batch` and stores its gradients in
/// the model's gradient slots. Parameters are not updated.
pub fn combined_loss<T: Scalar>(
    model: &mut ModelBundle<T>,
    batch: &AclBatch<T>,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    Ok(combined_step(model, batch, cfg)?.0)
}

/// Returns the breakdown and the number of correctly classified clean views.
fn combined_step<T: Scalar>(
    model: &mut ModelBundle<T>,
    batch: &AclBatch<T>,
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, usize)> {
    if batch.clean.shape() != batch.adversarial.shape() {
        return Err(Error::dim("acl batch", batch.clean.shape(), batch.adversarial.shape()));
    }
    let n = batch.labels.len();
    if batch.clean.shape().first() != Some(&n) {
        return Err(Error::dim("acl labels", batch.clean.shape(), &[n]));
    }
    let (alpha, beta) = (cfg.contrastive_weight, cfg.adversarial_weight);
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let xa = tape.constant(batch.clean.clone());
    let fa = model.encode_on(&mut tape, &bound, xa)?;
    let logits_a = model.classify_on(&mut tape, &bound, fa)?;
    let correct = argmax_rows(tape.value(logits_a))
        .iter()
        .zip(&batch.labels)
        .filter(|(p, y)| p == y)
        .count();
    let fadv = if alpha > 0.0 || beta > 0.0 {
        let xadv = tape.constant(batch.adversarial.clone());
        Some(model.encode_on(&mut tape, &bound, xadv)?)
    } else {
        None
    };

    let mut terms: Vec<Var> = Vec::new();
    let mut breakdown = LossBreakdown::default();
    if let (true, Some(fadv)) = (alpha > 0.0, fadv) {
        let za = model.project_on(&mut tape, &bound, fa)?;
        let zadv = model.project_on(&mut tape, &bound, fadv)?;
        let mean = tape.info_nce(za, zadv, cfg.temperature, cfg.denominator_mode)?;
        let term = tape.scale(mean, T::from_f64_lossy(alpha));
        breakdown.contrastive = tape.value(term).item()?.as_f64() * n as f64;
        terms.push(term);
    }
    if let (true, Some(fadv)) = (beta > 0.0, fadv) {
        let reduction = if cfg.normalize_adversarial { Reduction::Mean } else { Reduction::Sum };
        let logits_adv = model.classify_on(&mut tape, &bound, fadv)?;
        let ce_a = tape.softmax_cross_entropy(logits_a, &batch.labels, reduction)?;
        let ce_adv = tape.softmax_cross_entropy(logits_adv, &batch.labels, reduction)?;
        let both = tape.add(ce_a, ce_adv)?;
        let term = tape.scale(both, T::from_f64_lossy(0.5 * beta));
        breakdown.adversarial = tape.value(term).item()?.as_f64();
        terms.push(term);
    }
    let total = match terms[..] {
        [one] => one,
        [c, a] => tape.add(c, a)?,
        _ => return Err(Error::Config("at least one loss weight must be positive".into())),
    };
    breakdown.total = breakdown.contrastive / n as f64 + breakdown.adversarial;
    let grads = tape.backward(total)?;
    model.store_grads(&bound, &grads)?;
    Ok((breakdown, correct))
}

/// Cross-entropy on clean images only; stores gradients and returns the
/// mean loss and the number of correct predictions.
fn standard_step<T: Scalar>(
    model: &mut ModelBundle<T>,
    x: &Tensor<T>,
    labels: &[usize],
) -> Result<(LossBreakdown, usize)> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let xv = tape.constant(x.clone());
    let f = model.encode_on(&mut tape, &bound, xv)?;
    let logits = model.classify_on(&mut tape, &bound, f)?;
    let correct = argmax_rows(tape.value(logits))
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    let loss = tape.softmax_cross_entropy(logits, labels, Reduction::Mean)?;
    let value = tape.value(loss).item()?.as_f64();
    let grads = tape.backward(loss)?;
    model.store_grads(&bound, &grads)?;
    Ok((
        LossBreakdown {
            contrastive: 0.0,
            adversarial: value,
            total: value,
        },
        correct,
    ))
}

/// Batches of one epoch as index lists. A trailing single sample joins the
/// previous batch so every batch has negatives.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, &[stream::SHUFFLE, epoch as u64]));
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().unwrap_or_default();
        if let Some(prev) = batches.last_mut() {
            prev.extend(last);
        }
    }
    batches
}

/// The two views of sample `index` in `epoch`. The first view does not
/// depend on whether the second is drawn.
pub fn training_views(
    image: &ImageTensor,
    spec: &AugmentationSpec,
    seed: u64,
    epoch: usize,
    index: usize,
    both: bool,
) -> (ImageTensor, Option<ImageTensor>) {
    let mut rng = stream_rng(seed, &[stream::AUGMENT, spec.seed, epoch as u64, index as u64]);
    let a = augment_view(image, spec, &mut rng);
    let b = both.then(|| augment_view(image, spec, &mut rng));
    (a, b)
}

fn check_dataset(dataset: &Dataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    if dataset.num_classes() < 2 {
        return Err(Error::Config("training needs at least two classes".into()));
    }
    Ok(())
}

/// Fresh model for `dataset`, initialized from `cfg.seed`.
pub fn initial_model<T: Scalar>(dataset: &Dataset, cfg: &TrainConfig) -> Result<ModelBundle<T>> {
    check_dataset(dataset)?;
    let (h, w) = dataset.dims();
    ModelBundle::init(Architecture::desk(dataset.num_classes(), h, w), cfg.seed)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Recipe {
    Standard,
    Acl,
}

/// Supervised training on the first augmented view of every sample.
pub fn train_standard<T: Scalar>(dataset: &Dataset, cfg: &TrainConfig) -> Result<(ModelBundle<T>, TrainHistory)> {
    let model = initial_model(dataset, cfg)?;
    train_standard_from(model, dataset, cfg, |_| {})
}

pub fn train_standard_from<T: Scalar>(
    model: ModelBundle<T>,
    dataset: &Dataset,
    cfg: &TrainConfig,
    observer: impl FnMut(&StepReport),
) -> Result<(ModelBundle<T>, TrainHistory)> {
    run(model, dataset, cfg, Recipe::Standard, observer)
}

/// Adversarial contrastive learning.
pub fn train_acl<T: Scalar>(dataset: &Dataset, cfg: &TrainConfig) -> Result<(ModelBundle<T>, TrainHistory)> {
    let model = initial_model(dataset, cfg)?;
    train_acl_from(model, dataset, cfg, |_| {})
}

pub fn train_acl_from<T: Scalar>(
    model: ModelBundle<T>,
    dataset: &Dataset,
    cfg: &TrainConfig,
    observer: impl FnMut(&StepReport),
) -> Result<(ModelBundle<T>, TrainHistory)> {
    run(model, dataset, cfg, Recipe::Acl, observer)
}

fn run<T: Scalar>(
    mut model: ModelBundle<T>,
    dataset: &Dataset,
    cfg: &TrainConfig,
    recipe: Recipe,
    mut observer: impl FnMut(&StepReport),
) -> Result<(ModelBundle<T>, TrainHistory)> {
    check_dataset(dataset)?;
    if recipe == Recipe::Acl {
        cfg.validate()?;
    } else {
        cfg.augmentation.validate()?;
        if cfg.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
    }
    let (lr, momentum) = (T::from_f64_lossy(cfg.learning_rate), T::from_f64_lossy(cfg.momentum));
    let instancewise = cfg.attack.objective == AttackObjective::InstanceInfoNce;
    let mut history = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        let batches = epoch_batches(dataset.len(), cfg.batch_size, cfg.seed, epoch);
        let mut sum = LossBreakdown::default();
        let mut correct = 0;
        for (step, idx) in batches.iter().enumerate() {
            let need_b = recipe == Recipe::Acl && instancewise && cfg.attack.radius > 0.0;
            let views: Vec<(ImageTensor, Option<ImageTensor>)> = idx
                .par_iter()
                .map(|&i| training_views(&dataset.images[i], &cfg.augmentation, cfg.seed, epoch, i, need_b))
                .collect();
            let labels: Vec<usize> = idx.iter().map(|&i| dataset.labels[i]).collect();
            let view_a: Vec<ImageTensor> = views.iter().map(|v| v.0.clone()).collect();
            let clean = images_to_batch::<T>(&view_a)?;
            let (loss, ok) = match recipe {
                Recipe::Standard => standard_step(&mut model, &clean, &labels)?,
                Recipe::Acl => {
                    let attack_seed = derive_seed(cfg.seed, &[stream::ATTACK, epoch as u64, step as u64]);
                    let adversarial = if cfg.attack.radius == 0.0 {
                        clean.clone()
                    } else if instancewise {
                        let view_b: Vec<ImageTensor> =
                            views.into_iter().map(|v| v.1.unwrap_or(v.0)).collect();
                        let b = images_to_batch::<T>(&view_b)?;
                        attack::instancewise(&model, &clean, &b, &cfg.attack, cfg.infonce(), attack_seed, false)?
                            .adversarial
                    } else {
                        attack::supervised(&model, &clean, &labels, &cfg.attack, attack_seed, false)?.adversarial
                    };
                    let batch = AclBatch {
                        clean,
                        adversarial,
                        labels,
                    };
                    combined_step(&mut model, &batch, cfg)?
                }
            };
            if !loss.is_finite() {
                return Err(Error::Degenerate(format!(
                    "non-finite loss at epoch {epoch}, step {step}: {loss:?}"
                )));
            }
            observer(&StepReport {
                epoch,
                step,
                loss,
                grad_norms: model.grad_norms(),
            });
            model.sgd_step(lr, momentum)?;
            sum.contrastive += loss.contrastive;
            sum.adversarial += loss.adversarial;
            sum.total += loss.total;
            correct += ok;
        }
        let steps = batches.len();
        history.epochs.push(EpochRecord {
            epoch,
            loss: LossBreakdown {
                contrastive: sum.contrastive / steps as f64,
                adversarial: sum.adversarial / steps as f64,
                total: sum.total / steps as f64,
            },
            accuracy: correct as f64 / dataset.len() as f64,
            steps,
        });
    }
    Ok((model, history))
}
