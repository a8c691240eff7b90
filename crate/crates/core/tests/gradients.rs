//! Central finite differences against reverse-mode gradients, on `f64`.

use aclkit::autodiff::{Conv2dSpec, DenominatorMode, Reduction, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-3;
const SEEDS: u64 = 20;

type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Var;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn loss_value(build: &Build, inputs: &[Tensor<f64>]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    tape.value(loss).item().unwrap()
}

/// Compares every input coordinate (or a strided subset for large inputs).
fn check(build: &Build, inputs: Vec<Tensor<f64>>, what: &str) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_requires_grad(true)))
        .collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();

    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).unwrap();
        let step = (input.len() / 60).max(1);
        for i in (0..input.len()).step_by(step) {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= H;
            let numeric = (loss_value(build, &plus) - loss_value(build, &minus)) / (2.0 * H);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            assert!(
                rel < TOL,
                "{what}: input {k} coord {i}: analytic {a} numeric {numeric} (rel {rel:.2e})"
            );
        }
    }
}

fn seeds() -> impl Iterator<Item = ChaCha8Rng> {
    (0..SEEDS).map(ChaCha8Rng::seed_from_u64)
}

#[test]
fn dense_then_cross_entropy() {
    for mut rng in seeds() {
        let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
        let build = move |t: &mut Tape<f64>, v: &[Var]| {
            let y = t.dense(v[0], v[1], v[2]).unwrap();
            t.softmax_cross_entropy(y, &labels, Reduction::Mean).unwrap()
        };
        let inputs = vec![
            random(&mut rng, &[4, 5], 1.0),
            random(&mut rng, &[3, 5], 1.0),
            random(&mut rng, &[3], 0.5),
        ];
        check(&build, inputs, "dense+ce");
    }
}

#[test]
fn cross_entropy_sum_reduction_on_vector_logits() {
    for mut rng in seeds() {
        let label = rng.random_range(0..5);
        let build = move |t: &mut Tape<f64>, v: &[Var]| {
            t.softmax_cross_entropy(v[0], &[label], Reduction::Sum).unwrap()
        };
        check(&build, vec![random(&mut rng, &[5], 3.0)], "ce");
    }
}

#[test]
fn conv_relu_pool_dense() {
    for mut rng in seeds() {
        let stride = 1 + (rng.random_range(0..2usize));
        let pad = rng.random_range(0..2usize);
        let labels: Vec<usize> = (0..2).map(|_| rng.random_range(0..3)).collect();
        let build = move |t: &mut Tape<f64>, v: &[Var]| {
            let c = t.conv2d(v[0], v[1], v[2], Conv2dSpec::new(stride, pad)).unwrap();
            let r = t.relu(c);
            let p = t.global_avg_pool(r).unwrap();
            let y = t.dense(p, v[3], v[4]).unwrap();
            t.softmax_cross_entropy(y, &labels, Reduction::Mean).unwrap()
        };
        let inputs = vec![
            random(&mut rng, &[2, 2, 6, 5], 1.0),
            random(&mut rng, &[4, 2, 3, 3], 0.5),
            random(&mut rng, &[4], 0.2),
            random(&mut rng, &[3, 4], 1.0),
            random(&mut rng, &[3], 0.2),
        ];
        check(&build, inputs, "conv stack");
    }
}

#[test]
fn cosine_similarity_both_arguments() {
    for mut rng in seeds() {
        let build = |t: &mut Tape<f64>, v: &[Var]| t.cosine_similarity(v[0], v[1]).unwrap();
        let inputs = vec![random(&mut rng, &[6], 1.0), random(&mut rng, &[6], 1.0)];
        check(&build, inputs, "cosine");
    }
}

#[test]
fn info_nce_both_denominator_modes() {
    for mode in [DenominatorMode::Standard, DenominatorMode::AsWritten] {
        for mut rng in seeds() {
            let tau = rng.random_range(0.2..1.0);
            let build = move |t: &mut Tape<f64>, v: &[Var]| t.info_nce(v[0], v[1], tau, mode).unwrap();
            let inputs = vec![random(&mut rng, &[4, 3], 1.0), random(&mut rng, &[4, 3], 1.0)];
            check(&build, inputs, "info_nce");
        }
    }
}

#[test]
fn info_nce_through_projector() {
    for mut rng in seeds() {
        let build = |t: &mut Tape<f64>, v: &[Var]| {
            let a = t.dense(v[0], v[2], v[3]).unwrap();
            let a = t.relu(a);
            let b = t.dense(v[1], v[2], v[3]).unwrap();
            let b = t.relu(b);
            let l = t.info_nce(a, b, 0.5, DenominatorMode::Standard).unwrap();
            t.scale(l, 2.0)
        };
        let inputs = vec![
            random(&mut rng, &[3, 4], 1.0),
            random(&mut rng, &[3, 4], 1.0),
            random(&mut rng, &[5, 4], 1.0),
            // positive bias keeps rows away from the all-zero degenerate case
            Tensor::vector((0..5).map(|_| rng.random_range(0.5..1.0)).collect()),
        ];
        check(&build, inputs, "projected info_nce");
    }
}

#[test]
fn add_sum_and_affine_combine_branches() {
    for mut rng in seeds() {
        let build = |t: &mut Tape<f64>, v: &[Var]| {
            let a = t.softmax_cross_entropy(v[0], &[1, 0], Reduction::Mean).unwrap();
            let b = t.cosine_similarity(v[1], v[2]).unwrap();
            let s = t.add(a, b).unwrap();
            let r = t.relu(v[1]);
            let q = t.sum(r);
            let q = t.scale(q, 0.3);
            let r = t.affine(r, -1.7, 0.4);
            let q2 = t.sum(r);
            let q = t.add(q, q2).unwrap();
            t.add(s, q).unwrap()
        };
        let inputs = vec![
            random(&mut rng, &[2, 3], 1.0),
            random(&mut rng, &[4], 1.0),
            random(&mut rng, &[4], 1.0),
        ];
        check(&build, inputs, "add/sum");
    }
}

fn dense_value(w: &[f64], x: &[f64]) -> Vec<f64> {
    let mut tape = Tape::new();
    let w = tape.constant(Tensor::new([2, 3], w.to_vec()).unwrap());
    let b = tape.constant(Tensor::zeros([2]));
    let x = tape.constant(Tensor::vector(x.to_vec()));
    let y = tape.dense(x, w, b).unwrap();
    tape.value(y).data().to_vec()
}

proptest! {
    #[test]
    fn dense_without_bias_is_linear(
        w in prop::collection::vec(-2.0f64..2.0, 6),
        x in prop::collection::vec(-2.0f64..2.0, 3),
        y in prop::collection::vec(-2.0f64..2.0, 3),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let mixed: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let lhs = dense_value(&w, &mixed);
        let (fx, fy) = (dense_value(&w, &x), dense_value(&w, &y));
        for i in 0..2 {
            prop_assert!((lhs[i] - (a * fx[i] + b * fy[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn backward_is_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[2, 1, 5, 5], 1.0).cast::<f32>();
        let w = random(&mut rng, &[3, 1, 3, 3], 1.0).cast::<f32>();
        let run = || {
            let mut tape = Tape::<f32>::new();
            let xv = tape.leaf(x.clone().with_requires_grad(true));
            let wv = tape.leaf(w.clone().with_requires_grad(true));
            let bv = tape.leaf(Tensor::zeros([3]).with_requires_grad(true));
            let c = tape.conv2d(xv, wv, bv, Conv2dSpec::new(1, 1)).unwrap();
            let r = tape.relu(c);
            let s = tape.sum(r);
            let g = tape.backward(s).unwrap();
            (g.get(xv).unwrap().clone(), g.get(wv).unwrap().clone())
        };
        prop_assert_eq!(run(), run());
    }
}
