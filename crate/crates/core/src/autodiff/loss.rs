//! Loss kernels: softmax cross-entropy, cosine similarity and the batch
//! InfoNCE objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use super::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Mean,
    Sum,
}

/// Which latents enter the InfoNCE denominator for an anchor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenominatorMode {
    /// Positive plus every other-instance latent from both batches.
    #[default]
    Standard,
    /// Other-instance latents only; the positive appears in the numerator alone.
    AsWritten,
}

/// Per-row `-log softmax(logits)[label]` and the softmax probabilities.
pub(crate) fn cross_entropy_rows<T: Scalar>(
    logits: &[T],
    classes: usize,
    labels: &[usize],
) -> Result<(Vec<T>, Vec<T>)> {
    let mut losses = Vec::with_capacity(labels.len());
    let mut probs = vec![T::zero(); logits.len()];
    for (row, (&label, out)) in labels
        .iter()
        .zip(probs.chunks_exact_mut(classes))
        .enumerate()
    {
        if label >= classes {
            return Err(Error::Index {
                what: "class label",
                index: label,
                len: classes,
            });
        }
        let z = &logits[row * classes..(row + 1) * classes];
        let max = z.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let denom: f64 = z.iter().map(|v| (v.as_f64() - max).exp()).sum();
        let lse = max + denom.ln();
        for (p, v) in out.iter_mut().zip(z) {
            *p = T::from_f64_lossy((v.as_f64() - max).exp() / denom);
        }
        losses.push(T::from_f64_lossy(lse - z[label].as_f64()));
    }
    Ok((losses, probs))
}

pub(crate) fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Cosine similarity `uᵀv / (‖u‖‖v‖)`, clamped to `[-1, 1]`.
pub fn cosine_similarity<T: Scalar>(u: &[T], v: &[T]) -> Result<T> {
    if u.len() != v.len() {
        return Err(Error::dim("cosine similarity", &[u.len()], &[v.len()]));
    }
    let u: Vec<f64> = u.iter().map(|x| x.as_f64()).collect();
    let v: Vec<f64> = v.iter().map(|x| x.as_f64()).collect();
    let (nu, nv) = (dot(&u, &u).sqrt(), dot(&v, &v).sqrt());
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Degenerate(
            "cosine similarity of a zero vector".into(),
        ));
    }
    Ok(T::from_f64_lossy((dot(&u, &v) / (nu * nv)).clamp(-1.0, 1.0)))
}

/// Gradient of the cosine similarity with respect to both arguments.
pub(crate) fn cosine_backward<T: Scalar>(u: &[T], v: &[T], upstream: f64) -> (Vec<T>, Vec<T>) {
    let u: Vec<f64> = u.iter().map(|x| x.as_f64()).collect();
    let v: Vec<f64> = v.iter().map(|x| x.as_f64()).collect();
    let (uu, vv) = (dot(&u, &u), dot(&v, &v));
    let (nu, nv) = (uu.sqrt(), vv.sqrt());
    let sim = dot(&u, &v) / (nu * nv);
    let du = u
        .iter()
        .zip(&v)
        .map(|(a, b)| T::from_f64_lossy(upstream * (b / (nu * nv) - sim * a / uu)))
        .collect();
    let dv = u
        .iter()
        .zip(&v)
        .map(|(a, b)| T::from_f64_lossy(upstream * (a / (nu * nv) - sim * b / vv)))
        .collect();
    (du, dv)
}

/// Batch InfoNCE value: the mean and each anchor's term.
#[derive(Clone, Debug, PartialEq)]
pub struct InfoNceValue {
    pub mean: f64,
    pub per_anchor: Vec<f64>,
}

/// Batch InfoNCE of `[M, D]` latents without building a tape.
pub fn info_nce<T: Scalar>(
    clean: &Tensor<T>,
    adv: &Tensor<T>,
    temperature: f64,
    mode: DenominatorMode,
) -> Result<InfoNceValue> {
    let (m, dim) = latent_dims(clean.shape(), adv.shape())?;
    let st = info_nce_forward(clean.data(), adv.data(), m, dim, temperature, mode)?;
    Ok(InfoNceValue {
        mean: st.loss,
        per_anchor: st.anchor_losses,
    })
}

pub(crate) fn latent_dims(clean: &[usize], adv: &[usize]) -> Result<(usize, usize)> {
    match clean {
        &[m, dim] if clean == adv => Ok((m, dim)),
        _ => Err(Error::dim("info_nce latents", clean, adv)),
    }
}

/// Saved state of an InfoNCE evaluation.
#[derive(Clone, Debug)]
pub(crate) struct InfoNceState {
    pub m: usize,
    pub dim: usize,
    pub tau: f64,
    /// Unit-normalized rows: clean latents then adversarial latents.
    pub units: Vec<f64>,
    pub norms: Vec<f64>,
    /// `dL/ds_ik` for anchor `i` against all `2M` latents.
    pub dsim: Vec<f64>,
    /// Loss of each anchor; `loss` is their mean.
    pub anchor_losses: Vec<f64>,
    pub loss: f64,
}

/// Batch InfoNCE loss with clean latents as anchors and their adversarial
/// counterparts as positives.
pub(crate) fn info_nce_forward<T: Scalar>(
    clean: &[T],
    adv: &[T],
    m: usize,
    dim: usize,
    tau: f64,
    mode: DenominatorMode,
) -> Result<InfoNceState> {
    if m < 2 {
        return Err(Error::NoNegatives(m));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let total = 2 * m;
    let mut units = Vec::with_capacity(total * dim);
    units.extend(clean.iter().map(|v| v.as_f64()));
    units.extend(adv.iter().map(|v| v.as_f64()));
    let mut norms = Vec::with_capacity(total);
    for (k, row) in units.chunks_exact_mut(dim).enumerate() {
        let norm = dot(row, row).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Degenerate(format!(
                "latent {k} has norm {norm}; cosine similarity is undefined"
            )));
        }
        row.iter_mut().for_each(|v| *v /= norm);
        norms.push(norm);
    }

    let mut dsim = vec![0.0; m * total];
    let mut anchor_losses = Vec::with_capacity(m);
    let mut sims = vec![0.0; total];
    for i in 0..m {
        let pos = m + i;
        let anchor = &units[i * dim..(i + 1) * dim];
        for (k, s) in sims.iter_mut().enumerate() {
            *s = dot(anchor, &units[k * dim..(k + 1) * dim]) / tau;
        }
        let in_denominator =
            |k: usize| k != i && (mode == DenominatorMode::Standard || k != pos);
        let max = (0..total)
            .filter(|&k| in_denominator(k))
            .fold(f64::NEG_INFINITY, |a, k| a.max(sims[k]));
        let z: f64 = (0..total)
            .filter(|&k| in_denominator(k))
            .map(|k| (sims[k] - max).exp())
            .sum();
        anchor_losses.push(max + z.ln() - sims[pos]);
        let row = &mut dsim[i * total..(i + 1) * total];
        for k in (0..total).filter(|&k| in_denominator(k)) {
            row[k] = (sims[k] - max).exp() / z / m as f64;
        }
        row[pos] -= 1.0 / m as f64;
    }
    Ok(InfoNceState {
        m,
        dim,
        tau,
        units,
        norms,
        dsim,
        loss: anchor_losses.iter().sum::<f64>() / m as f64,
        anchor_losses,
    })
}

/// Gradients with respect to the clean and adversarial latents.
pub(crate) fn info_nce_backward<T: Scalar>(st: &InfoNceState, upstream: f64) -> (Vec<T>, Vec<T>) {
    let (m, dim) = (st.m, st.dim);
    let total = 2 * m;
    let mut dunit = vec![0.0; total * dim];
    for i in 0..m {
        for k in 0..total {
            let g = st.dsim[i * total + k] / st.tau;
            if g == 0.0 {
                continue;
            }
            for d in 0..dim {
                dunit[i * dim + d] += g * st.units[k * dim + d];
                dunit[k * dim + d] += g * st.units[i * dim + d];
            }
        }
    }
    let mut grads = Vec::with_capacity(total * dim);
    for k in 0..total {
        let u = &st.units[k * dim..(k + 1) * dim];
        let du = &dunit[k * dim..(k + 1) * dim];
        let proj = dot(u, du);
        grads.extend(
            u.iter()
                .zip(du)
                .map(|(uv, dv)| T::from_f64_lossy(upstream * (dv - uv * proj) / st.norms[k])),
        );
    }
    let adv = grads.split_off(m * dim);
    (grads, adv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        let (l, _) = cross_entropy_rows(&[0.3f32; 4], 4, &[2]).unwrap();
        assert!((l[0] - 4f32.ln()).abs() < 1e-6);
    }

    #[test]
    fn saturated_correct_logit_gives_zero_loss() {
        let (l, _) = cross_entropy_rows(&[0.0f32, 1000.0, 0.0], 3, &[1]).unwrap();
        assert!(l[0].abs() < 1e-6);
        assert!(l[0].is_finite());
    }

    #[test]
    fn label_out_of_range() {
        assert!(matches!(
            cross_entropy_rows(&[0.0f64; 3], 3, &[3]),
            Err(Error::Index { index: 3, len: 3, .. })
        ));
    }

    #[test]
    fn cosine_basics() {
        assert_eq!(cosine_similarity(&[1.0f64, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let u = [0.3f64, -2.0, 5.5];
        assert!((cosine_similarity(&u, &u).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            cosine_similarity(&[0.0f32, 0.0], &[1.0, 0.0]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn identical_latents_standard_mode_is_ln3() {
        let z = [0.5f64, -1.0, 2.0];
        let clean: Vec<f64> = z.iter().chain(&z).copied().collect();
        let st = info_nce_forward(&clean, &clean, 2, 3, 0.5, DenominatorMode::Standard).unwrap();
        assert!((st.loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_instance_has_no_negatives() {
        let z = [1.0f32, 2.0];
        assert!(matches!(
            info_nce_forward(&z, &z, 1, 2, 0.5, DenominatorMode::Standard),
            Err(Error::NoNegatives(1))
        ));
    }
}
