//! Minimal reverse-mode differentiable tensor engine.
//!
//! A [`Tape`] records layer applications and losses in execution order.
//! Inputs enter as leaves; a leaf built from a tensor with
//! `requires_grad` set receives a gradient when [`Tape::backward`] replays
//! the tape in reverse. Gradients with respect to images are available the
//! same way as gradients with respect to weights, which is what the
//! attacks rely on.
//!
//! ```
//! use aclkit::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::vector(vec![1.0, -2.0, 3.0]).with_requires_grad(true));
//! let y = tape.relu(x);
//! let loss = tape.sum(y);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[1.0, 0.0, 1.0]);
//! ```

mod conv;
pub(crate) mod loss;
mod params;
mod tape;
mod tensor;

pub use conv::{output_extent, Conv2dSpec};
pub use loss::{cosine_similarity, info_nce, DenominatorMode, InfoNceValue, Reduction};
pub use params::{BoundLayer, BoundParams, Layer, ParameterSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;


#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn run_dense(w: Tensor<f64>, b: Tensor<f64>, x: Tensor<f64>) -> Tensor<f64> {
        let mut tape = Tape::new();
        let (w, b, x) = (tape.leaf(w), tape.leaf(b), tape.leaf(x));
        let y = tape.dense(x, w, b).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn dense_identity_and_zero_weights() {
        let eye = Tensor::new([3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let y = run_dense(eye, Tensor::zeros([3]), Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert_eq!(y.data(), &[1.0, 2.0, 3.0]);

        let y = run_dense(
            Tensor::zeros([1, 4]),
            Tensor::vector(vec![5.0]),
            Tensor::vector(vec![9.0, -1.0, 0.5, 2.0]),
        );
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn dense_shape_error_names_both_shapes() {
        let mut tape = Tape::<f32>::new();
        let w = tape.leaf(Tensor::zeros([2, 3]));
        let b = tape.leaf(Tensor::zeros([2]));
        let x = tape.leaf(Tensor::zeros([4]));
        match tape.dense(x, w, b) {
            Err(Error::Dimension { left, right, .. }) => {
                assert_eq!(left, vec![4]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn identity_kernel_conv_reproduces_input() {
        let x = Tensor::new([1, 1, 4, 5], (0..20).map(|v| v as f32 * 0.1).collect()).unwrap();
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let w = tape.leaf(Tensor::full([1, 1, 1, 1], 1.0));
        let b = tape.leaf(Tensor::zeros([1]));
        let y = tape.conv2d(xv, w, b, Conv2dSpec::new(1, 0)).unwrap();
        assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn ones_kernel_on_constant_image() {
        let v = 0.7f64;
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full([1, 1, 6, 6], v));
        let w = tape.leaf(Tensor::full([1, 1, 3, 3], 1.0));
        let b = tape.leaf(Tensor::zeros([1]));
        let y = tape.conv2d(x, w, b, Conv2dSpec::new(1, 0)).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 4, 4]);
        assert!(tape.value(y).data().iter().all(|o| (o - 9.0 * v).abs() < 1e-12));
    }

    #[test]
    fn conv_configuration_errors() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros([1, 1, 3, 3]));
        let w = tape.leaf(Tensor::zeros([1, 1, 5, 5]));
        let b = tape.leaf(Tensor::zeros([1]));
        assert!(matches!(tape.conv2d(x, w, b, Conv2dSpec::new(0, 1)), Err(Error::Config(_))));
        assert!(matches!(tape.conv2d(x, w, b, Conv2dSpec::new(1, 0)), Err(Error::Config(_))));
    }

    #[test]
    fn relu_values_and_zero_subgradient() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::vector(vec![-1.0, 0.0, 2.0]).with_requires_grad(true));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn all_negative_relu_has_zero_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::vector(vec![-3.0, -0.1, -7.0]).with_requires_grad(true));
        let y = tape.relu(x);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros([2, 3]).with_requires_grad(true));
        let loss = tape.sum(x);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap(), &Tensor::full([2, 3], 1.0));
    }

    #[test]
    fn zero_scaled_loss_has_zero_gradients() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::vector(vec![0.3, -1.2, 2.0]).with_requires_grad(true));
        let w = tape.leaf(Tensor::new([2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0]).unwrap().with_requires_grad(true));
        let b = tape.leaf(Tensor::zeros([2]).with_requires_grad(true));
        let y = tape.dense(x, w, b).unwrap();
        let l = tape.softmax_cross_entropy(y, &[1], Reduction::Mean).unwrap();
        let z = tape.scale(l, 0.0);
        let g = tape.backward(z).unwrap();
        for v in [x, w, b] {
            assert!(g.get(v).unwrap().data().iter().all(|&e| e == 0.0));
        }
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros([3]).with_requires_grad(true));
        let y = tape.relu(x);
        assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn uniform_logits_cross_entropy() {
        let mut tape = Tape::<f32>::new();
        let z = tape.leaf(Tensor::vector(vec![0.0; 4]));
        let l = tape.softmax_cross_entropy(z, &[0], Reduction::Mean).unwrap();
        assert!((tape.value(l).data()[0] - 1.386_294_4).abs() < 1e-6);
    }

    #[test]
    fn gradients_reach_every_requires_grad_leaf() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]).with_requires_grad(true));
        let unused = tape.leaf(Tensor::vector(vec![5.0]).with_requires_grad(true));
        let frozen = tape.leaf(Tensor::vector(vec![3.0, 4.0]));
        let s = tape.add(a, frozen).unwrap();
        let l = tape.sum(s);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.count(), 2);
        assert_eq!(g.get(unused).unwrap().data(), &[0.0]);
        assert!(g.get(frozen).is_none());
    }
}
