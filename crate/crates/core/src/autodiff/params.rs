use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;

/// Weights, bias and their optimizer slots for one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub weight_grad: Tensor<T>,
    pub bias_grad: Tensor<T>,
    pub weight_velocity: Tensor<T>,
    pub bias_velocity: Tensor<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Self {
        let zeros = |t: &Tensor<T>| Tensor::zeros(t.shape().to_vec());
        Self {
            weight_grad: zeros(&weight),
            bias_grad: zeros(&bias),
            weight_velocity: zeros(&weight),
            bias_velocity: zeros(&bias),
            weight,
            bias,
        }
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Tape handles of a bound layer.
#[derive(Clone, Copy, Debug)]
pub struct BoundLayer {
    pub weight: Var,
    pub bias: Var,
}

/// Ordered, named collection of layers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet<T> {
    layers: IndexMap<String, Layer<T>>,
}

/// Tape handles for a whole [`ParameterSet`], in the same order.
#[derive(Clone, Debug, Default)]
pub struct BoundParams {
    layers: IndexMap<String, BoundLayer>,
}

impl BoundParams {
    pub fn layer(&self, name: &str) -> Result<BoundLayer> {
        self.layers
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("layer {name} is not bound")))
    }
}

impl<T: Scalar> ParameterSet<T> {
    pub fn new() -> Self {
        Self {
            layers: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, layer: Layer<T>) {
        self.layers.insert(name.into(), layer);
    }

    pub fn get(&self, name: &str) -> Option<&Layer<T>> {
        self.layers.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Layer<T>> {
        self.layers.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Layer<T>)> {
        self.layers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Layer<T>)> {
        self.layers.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.layers.values().map(Layer::num_params).sum()
    }

    /// Records every weight and bias as a tape leaf.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> BoundParams {
        let layers = self
            .layers
            .iter()
            .map(|(name, l)| {
                let weight = tape.leaf(l.weight.clone().with_requires_grad(requires_grad));
                let bias = tape.leaf(l.bias.clone().with_requires_grad(requires_grad));
                (name.clone(), BoundLayer { weight, bias })
            })
            .collect();
        BoundParams { layers }
    }

    /// Copies gradients for the bound leaves into the gradient slots. Layers
    /// that were never bound, or received no gradient, get zeros.
    pub fn store_grads(&mut self, bound: &BoundParams, grads: &Gradients<T>) -> Result<()> {
        for (name, layer) in self.layers.iter_mut() {
            let fetch = |v: Option<Var>, like: &Tensor<T>| -> Result<Tensor<T>> {
                match v.and_then(|v| grads.get(v)) {
                    Some(g) if g.shape() == like.shape() => Ok(g.clone()),
                    Some(g) => Err(Error::dim("gradient slot", like.shape(), g.shape())),
                    None => Ok(Tensor::zeros(like.shape().to_vec())),
                }
            };
            let b = bound.layers.get(name);
            layer.weight_grad = fetch(b.map(|b| b.weight), &layer.weight)?;
            layer.bias_grad = fetch(b.map(|b| b.bias), &layer.bias)?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for layer in self.layers.values_mut() {
            layer.weight_grad.data_mut().fill(T::zero());
            layer.bias_grad.data_mut().fill(T::zero());
        }
    }

    /// Euclidean norm over all gradient slots.
    pub fn grad_norm(&self) -> f64 {
        self.layers
            .values()
            .map(|l| l.weight_grad.l2_norm().powi(2) + l.bias_grad.l2_norm().powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Heavy-ball momentum update from the stored gradients:
    /// `v <- momentum·v + g`, `p <- p - lr·v`.
    pub fn sgd_step(&mut self, lr: T, momentum: T) -> Result<()> {
        validate_sgd(lr, momentum)?;
        for layer in self.layers.values_mut() {
            momentum_update(&mut layer.weight, &mut layer.weight_velocity, &layer.weight_grad, lr, momentum);
            momentum_update(&mut layer.bias, &mut layer.bias_velocity, &layer.bias_grad, lr, momentum);
        }
        Ok(())
    }
}

pub(crate) fn validate_sgd<T: Scalar>(lr: T, momentum: T) -> Result<()> {
    if !(lr >= T::zero()) || !lr.is_finite() {
        return Err(Error::Config(format!(
            "learning rate must be finite and non-negative, got {lr}"
        )));
    }
    if !(momentum >= T::zero() && momentum < T::one()) {
        return Err(Error::Config(format!("momentum must lie in [0, 1), got {momentum}")));
    }
    Ok(())
}

fn momentum_update<T: Scalar>(
    param: &mut Tensor<T>,
    velocity: &mut Tensor<T>,
    grad: &Tensor<T>,
    lr: T,
    momentum: T,
) {
    for ((p, v), g) in param
        .data_mut()
        .iter_mut()
        .zip(velocity.data_mut())
        .zip(grad.data())
    {
        *v = momentum * *v + *g;
        *p -= lr * *v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: Vec<f64>, g: Vec<f64>) -> ParameterSet<f64> {
        let mut set = ParameterSet::new();
        let mut layer = Layer::new(
            Tensor::vector(w.clone()),
            Tensor::vector(vec![0.0]),
        );
        layer.weight_grad = Tensor::vector(g);
        set.insert("l", layer);
        set
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let mut set = single(vec![1.0, -2.0], vec![0.5, 3.0]);
        let before = set.get("l").unwrap().weight.clone();
        set.sgd_step(0.0, 0.9).unwrap();
        assert_eq!(set.get("l").unwrap().weight, before);
    }

    #[test]
    fn plain_step_without_momentum() {
        let mut set = single(vec![1.0, -2.0], vec![0.5, 3.0]);
        set.sgd_step(0.1, 0.0).unwrap();
        assert_eq!(set.get("l").unwrap().weight.data(), &[1.0 - 0.1 * 0.5, -2.0 - 0.1 * 3.0]);
    }

    #[test]
    fn two_momentum_steps_follow_velocity_recursion() {
        // v1 = g1, p1 = p0 - lr g1; v2 = mu g1 + g2, p2 = p1 - lr (mu g1 + g2)
        let (p0, g1, g2, lr, mu) = (2.0, 0.4, -1.0, 0.05, 0.9);
        let mut set = single(vec![p0], vec![g1]);
        set.sgd_step(lr, mu).unwrap();
        set.get_mut("l").unwrap().weight_grad = Tensor::vector(vec![g2]);
        set.sgd_step(lr, mu).unwrap();
        let expected = p0 - lr * g1 - lr * (mu * g1 + g2);
        let got = set.get("l").unwrap().weight.data()[0];
        assert!((got - expected).abs() < 1e-14, "{got} vs {expected}");
        assert!((set.get("l").unwrap().weight_velocity.data()[0] - (mu * g1 + g2)).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let mut set = single(vec![1.0], vec![1.0]);
        assert!(matches!(set.sgd_step(-0.1, 0.0), Err(Error::Config(_))));
        assert!(matches!(set.sgd_step(0.1, 1.0), Err(Error::Config(_))));
        assert!(matches!(set.sgd_step(f64::NAN, 0.0), Err(Error::Config(_))));
    }
}
