//! L∞ adversarial examples: FGSM, PGD and the instance-wise contrastive
//! attack.
//!
//! All three share one loop, [`signed_gradient_attack`], which walks
//! `x ← Π(x ± α·sign ∇ℓ(x))` for a caller-supplied objective `ℓ`. The
//! projection `Π` clamps into the δ-ball around the starting point and then
//! into the pixel range `[0, 1]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{info_nce, DenominatorMode, Reduction, Tape, Tensor};
use crate::autodiff::loss::cross_entropy_rows;
use crate::error::{Error, Result};
use crate::image::{batch_to_images, images_to_batch, ImageTensor};
use crate::model::ModelBundle;
use crate::rng::{stream, stream_rng};
use crate::scalar::Scalar;

/// Norm of the perturbation ball. Only `Linf` is implemented.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L0,
    L1,
    L2,
    #[default]
    Linf,
}

/// Loss the attack ascends.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackObjective {
    /// Cross-entropy of the classifier against the true label.
    #[default]
    SupervisedCe,
    /// Batch InfoNCE of the perturbed view against the other, clean view.
    InstanceInfoNce,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    #[serde(default)]
    pub norm: Norm,
    /// Ball radius δ in pixel units.
    pub radius: f64,
    /// Per-iteration step α.
    pub step_size: f64,
    pub iterations: usize,
    #[serde(default)]
    pub random_init: bool,
    #[serde(default)]
    pub objective: AttackObjective,
    #[serde(default)]
    pub targeted: bool,
    #[serde(default)]
    pub target_class: Option<usize>,
}

impl AttackConfig {
    /// δ = 8/255, α = 2/255, seven steps from a random start, instance-wise.
    pub fn train_default() -> Self {
        Self {
            norm: Norm::Linf,
            radius: 8.0 / 255.0,
            step_size: 2.0 / 255.0,
            iterations: 7,
            random_init: true,
            objective: AttackObjective::InstanceInfoNce,
            targeted: false,
            target_class: None,
        }
    }

    /// δ = 8/255, α = 2/255, twenty supervised steps from a random start.
    pub fn eval_default() -> Self {
        Self {
            iterations: 20,
            objective: AttackObjective::SupervisedCe,
            ..Self::train_default()
        }
    }

    /// The single full-radius step without random start.
    pub fn fgsm(radius: f64) -> Self {
        Self {
            radius,
            step_size: radius,
            iterations: 1,
            random_init: false,
            objective: AttackObjective::SupervisedCe,
            ..Self::train_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.norm != Norm::Linf {
            return Err(Error::NotImplemented(format!(
                "{:?} attacks; only the L-infinity ball is supported",
                self.norm
            )));
        }
        if !(self.radius >= 0.0 && self.radius <= 1.0) {
            return Err(Error::Config(format!("attack radius must lie in [0, 1], got {}", self.radius)));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!("attack step size must be positive, got {}", self.step_size)));
        }
        if self.iterations == 0 {
            return Err(Error::Config("attack needs at least one iteration".into()));
        }
        if self.targeted && self.target_class.is_none() {
            return Err(Error::Config("targeted attack requires target_class".into()));
        }
        if self.targeted && self.objective == AttackObjective::InstanceInfoNce {
            return Err(Error::Config("the instance-wise objective has no target class".into()));
        }
        Ok(())
    }
}

/// InfoNCE settings used by the instance-wise objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoNceSettings {
    pub temperature: f64,
    pub mode: DenominatorMode,
}

impl Default for InfoNceSettings {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            mode: DenominatorMode::Standard,
        }
    }
}

/// One attacked image with the objective before and after.
#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialPair {
    pub clean: ImageTensor,
    pub adversarial: ImageTensor,
    pub loss_before: f64,
    pub loss_after: f64,
}

impl AdversarialPair {
    pub fn linf_distance(&self) -> f64 {
        if self.clean.dims() != self.adversarial.dims() {
            return f64::INFINITY;
        }
        f64::from(self.clean.max_abs_diff(&self.adversarial))
    }

    /// `‖x̂ − x‖∞ ≤ δ + 1e-6` and `x̂ ∈ [0, 1]`.
    pub fn within_ball(&self, radius: f64) -> bool {
        self.linf_distance() <= radius + 1e-6 && self.adversarial.in_unit_range()
    }
}

/// Batch-level attack result; losses are per sample.
#[derive(Clone, Debug)]
pub struct AttackOutcome<T> {
    pub adversarial: Tensor<T>,
    pub loss_before: Vec<f64>,
    pub loss_after: Vec<f64>,
}

/// Clamp `candidate` into `[anchor − δ, anchor + δ]`, then into `[0, 1]`.
pub fn project_linf(candidate: &ImageTensor, anchor: &ImageTensor, radius: f32) -> Result<ImageTensor> {
    if candidate.dims() != anchor.dims() {
        let (a, b) = (candidate.dims(), anchor.dims());
        return Err(Error::dim("linf projection", &[a.0, a.1], &[b.0, b.1]));
    }
    let mut out = candidate.clone();
    project_slice(out.data_mut(), anchor.data(), radius);
    Ok(out)
}

fn project_slice<T: Scalar>(candidate: &mut [T], anchor: &[T], radius: T) {
    for (c, &a) in candidate.iter_mut().zip(anchor) {
        *c = c.max(a - radius).min(a + radius).max(T::zero()).min(T::one());
    }
}

/// Objective evaluation: per-sample losses and, when asked, `∇ₓ` of their sum.
pub type Evaluation<T> = (Vec<f64>, Option<Tensor<T>>);

/// Projected signed-gradient ascent from `x0`.
///
/// `objective(x, want_grad)` returns per-sample losses at `x` and the
/// gradient of a loss whose sign matches the ascent direction. `observer`
/// sees the iterate after the random start (step 0) and after every step.
/// A zero radius returns `x0` unchanged without evaluating gradients.
pub fn signed_gradient_attack<T, F, O>(
    x0: &Tensor<T>,
    cfg: &AttackConfig,
    seed: u64,
    mut objective: F,
    mut observer: O,
) -> Result<AttackOutcome<T>>
where
    T: Scalar,
    F: FnMut(&Tensor<T>, bool) -> Result<Evaluation<T>>,
    O: FnMut(usize, &Tensor<T>),
{
    cfg.validate()?;
    attack_loop(x0, cfg, seed, true, &mut objective, &mut observer)
}

pub(crate) fn attack_loop<T, F, O>(
    x0: &Tensor<T>,
    cfg: &AttackConfig,
    seed: u64,
    record: bool,
    objective: &mut F,
    observer: &mut O,
) -> Result<AttackOutcome<T>>
where
    T: Scalar,
    F: FnMut(&Tensor<T>, bool) -> Result<Evaluation<T>>,
    O: FnMut(usize, &Tensor<T>),
{
    let loss_at = |objective: &mut F, x: &Tensor<T>| -> Result<Vec<f64>> {
        if record {
            Ok(objective(x, false)?.0)
        } else {
            Ok(Vec::new())
        }
    };
    if cfg.radius == 0.0 {
        let before = loss_at(objective, x0)?;
        observer(0, x0);
        return Ok(AttackOutcome {
            adversarial: x0.clone(),
            loss_after: before.clone(),
            loss_before: before,
        });
    }
    let radius = T::from_f64_lossy(cfg.radius);
    let alpha = T::from_f64_lossy(cfg.step_size);
    let ascend = !cfg.targeted;
    let mut x = x0.clone();
    let mut before = None;
    if cfg.random_init {
        let mut rng = stream_rng(seed, &[stream::ATTACK]);
        for v in x.data_mut() {
            *v += T::from_f64_lossy(rng.random_range(-cfg.radius..=cfg.radius));
        }
        project_slice(x.data_mut(), x0.data(), radius);
    }
    observer(0, &x);
    for step in 0..cfg.iterations {
        let (losses, grad) = objective(&x, true)?;
        let grad = grad.ok_or_else(|| Error::Contract("attack objective returned no gradient".into()))?;
        if grad.shape() != x.shape() {
            return Err(Error::dim("attack gradient", grad.shape(), x.shape()));
        }
        if step == 0 && !cfg.random_init {
            before = Some(losses);
        }
        for (v, &g) in x.data_mut().iter_mut().zip(grad.data()) {
            if g > T::zero() {
                *v = if ascend { *v + alpha } else { *v - alpha };
            } else if g < T::zero() {
                *v = if ascend { *v - alpha } else { *v + alpha };
            }
        }
        project_slice(x.data_mut(), x0.data(), radius);
        observer(step + 1, &x);
    }
    let loss_before = match before {
        Some(l) if record => l,
        _ => loss_at(objective, x0)?,
    };
    let loss_after = loss_at(objective, &x)?;
    Ok(AttackOutcome {
        adversarial: x,
        loss_before,
        loss_after,
    })
}

/// Per-sample cross-entropy of `model` at `x` and, optionally, `∇ₓ` of the sum.
pub(crate) fn cross_entropy_objective<T: Scalar>(
    model: &ModelBundle<T>,
    x: &Tensor<T>,
    labels: &[usize],
    want_grad: bool,
) -> Result<Evaluation<T>> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let xv = tape.leaf(x.clone().with_requires_grad(want_grad));
    let f = model.encode_on(&mut tape, &bound, xv)?;
    let logits = model.classify_on(&mut tape, &bound, f)?;
    let classes = model.architecture.num_classes;
    let (losses, _) = cross_entropy_rows(tape.value(logits).data(), classes, labels)?;
    let losses = losses.iter().map(|v| v.as_f64()).collect();
    if !want_grad {
        return Ok((losses, None));
    }
    let loss = tape.softmax_cross_entropy(logits, labels, Reduction::Sum)?;
    let mut grads = tape.backward(loss)?;
    Ok((losses, grads.take(xv)))
}

fn attack_labels(cfg: &AttackConfig, labels: &[usize], batch: usize) -> Result<Vec<usize>> {
    if labels.len() != batch {
        return Err(Error::dim("attack labels", &[batch], &[labels.len()]));
    }
    Ok(match (cfg.targeted, cfg.target_class) {
        (true, Some(t)) => vec![t; batch],
        _ => labels.to_vec(),
    })
}

/// Supervised PGD on an `[N, 3, H, W]` batch.
pub fn pgd_batch<T: Scalar>(
    model: &ModelBundle<T>,
    x: &Tensor<T>,
    labels: &[usize],
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AttackOutcome<T>> {
    supervised(model, x, labels, cfg, seed, true)
}

pub(crate) fn supervised<T: Scalar>(
    model: &ModelBundle<T>,
    x: &Tensor<T>,
    labels: &[usize],
    cfg: &AttackConfig,
    seed: u64,
    record: bool,
) -> Result<AttackOutcome<T>> {
    cfg.validate()?;
    if cfg.objective != AttackObjective::SupervisedCe {
        return Err(Error::Config("pgd needs the supervised-ce objective".into()));
    }
    let batch = x.shape().first().copied().unwrap_or(0);
    let targets = attack_labels(cfg, labels, batch)?;
    attack_loop(
        x,
        cfg,
        seed,
        record,
        &mut |x: &Tensor<T>, g| cross_entropy_objective(model, x, &targets, g),
        &mut |_, _: &Tensor<T>| {},
    )
}

/// Instance-wise attack on tensor batches: perturbs `view_a` to raise the
/// InfoNCE loss with `view_b`'s latents as anchors and the perturbed
/// latents as positives.
pub fn instancewise_batch<T: Scalar>(
    model: &ModelBundle<T>,
    view_a: &Tensor<T>,
    view_b: &Tensor<T>,
    cfg: &AttackConfig,
    infonce: InfoNceSettings,
    seed: u64,
) -> Result<AttackOutcome<T>> {
    instancewise(model, view_a, view_b, cfg, infonce, seed, true)
}

pub(crate) fn instancewise<T: Scalar>(
    model: &ModelBundle<T>,
    view_a: &Tensor<T>,
    view_b: &Tensor<T>,
    cfg: &AttackConfig,
    infonce: InfoNceSettings,
    seed: u64,
    record: bool,
) -> Result<AttackOutcome<T>> {
    cfg.validate()?;
    if cfg.objective != AttackObjective::InstanceInfoNce {
        return Err(Error::Config("instance-wise attack needs the instance-infonce objective".into()));
    }
    if view_a.shape() != view_b.shape() {
        return Err(Error::dim("instance-wise views", view_a.shape(), view_b.shape()));
    }
    let batch = view_a.shape().first().copied().unwrap_or(0);
    if batch < 2 {
        return Err(Error::NoNegatives(batch));
    }
    let anchors = model.project(&model.encode(view_b)?)?;
    let mut objective = |x: &Tensor<T>, want_grad: bool| -> Result<Evaluation<T>> {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        let xv = tape.leaf(x.clone().with_requires_grad(want_grad));
        let f = model.encode_on(&mut tape, &bound, xv)?;
        let z = model.project_on(&mut tape, &bound, f)?;
        let losses = info_nce(&anchors, tape.value(z), infonce.temperature, infonce.mode)?.per_anchor;
        if !want_grad {
            return Ok((losses, None));
        }
        let zb = tape.constant(anchors.clone());
        let loss = tape.info_nce(zb, z, infonce.temperature, infonce.mode)?;
        let mut grads = tape.backward(loss)?;
        Ok((losses, grads.take(xv)))
    };
    attack_loop(view_a, cfg, seed, record, &mut objective, &mut |_, _: &Tensor<T>| {})
}

fn to_pairs<T: Scalar>(clean: &[ImageTensor], out: AttackOutcome<T>) -> Result<Vec<AdversarialPair>> {
    let adversarial = batch_to_images(&out.adversarial)?;
    Ok(clean
        .iter()
        .zip(adversarial)
        .zip(out.loss_before.into_iter().zip(out.loss_after))
        .map(|((c, a), (before, after))| AdversarialPair {
            clean: c.clone(),
            adversarial: a,
            loss_before: before,
            loss_after: after,
        })
        .collect())
}

/// One signed-gradient step of full radius: `x̂ = clip(x + δ·sign ∇ₓ CE)`.
pub fn fgsm<T: Scalar>(
    model: &ModelBundle<T>,
    images: &[ImageTensor],
    labels: &[usize],
    radius: f64,
) -> Result<Vec<AdversarialPair>> {
    if radius == 0.0 {
        // step size must be positive, so the zero ball is handled here
        let x = images_to_batch::<T>(images)?;
        let (losses, _) = cross_entropy_objective(model, &x, labels, false)?;
        return Ok(images
            .iter()
            .zip(losses)
            .map(|(c, l)| AdversarialPair {
                clean: c.clone(),
                adversarial: c.clone(),
                loss_before: l,
                loss_after: l,
            })
            .collect());
    }
    pgd(model, images, labels, &AttackConfig::fgsm(radius), 0)
}

/// Supervised PGD; `seed` drives the random start.
pub fn pgd<T: Scalar>(
    model: &ModelBundle<T>,
    images: &[ImageTensor],
    labels: &[usize],
    cfg: &AttackConfig,
    seed: u64,
) -> Result<Vec<AdversarialPair>> {
    let x = images_to_batch::<T>(images)?;
    let out = pgd_batch(model, &x, labels, cfg, seed)?;
    to_pairs(images, out)
}

/// Perturbs `view_a` to maximize the batch InfoNCE loss against `view_b`.
pub fn instancewise_attack<T: Scalar>(
    model: &ModelBundle<T>,
    view_a: &[ImageTensor],
    view_b: &[ImageTensor],
    cfg: &AttackConfig,
    infonce: InfoNceSettings,
    seed: u64,
) -> Result<Vec<AdversarialPair>> {
    if view_a.len() != view_b.len() {
        return Err(Error::dim("instance-wise views", &[view_a.len()], &[view_b.len()]));
    }
    if view_a.len() < 2 {
        return Err(Error::NoNegatives(view_a.len()));
    }
    let a = images_to_batch::<T>(view_a)?;
    let b = images_to_batch::<T>(view_b)?;
    let out = instancewise_batch(model, &a, &b, cfg, infonce, seed)?;
    to_pairs(view_a, out)
}
