//! Encoder, classifier head and projector head.
//!
//! The encoder maps an image batch to feature vectors; the classifier maps
//! features to class logits and the projector maps the same features to the
//! latent space used by the contrastive objective. The three parameter sets
//! are disjoint so each can be inspected and optimized on its own.

mod checkpoint;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    output_extent, BoundParams, Gradients, Conv2dSpec, Layer, ParameterSet, Tape, Tensor, Var,
};
use crate::error::{Error, Result};
use crate::image::{images_to_batch, ImageTensor, CHANNELS};
use crate::rng::{stream, stream_rng};
use crate::scalar::Scalar;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, FORMAT_VERSION, MAGIC};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayerSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Layer sizes of a [`ModelBundle`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_height: usize,
    pub input_width: usize,
    pub conv_layers: Vec<ConvLayerSpec>,
    pub num_classes: usize,
    pub projector_hidden: usize,
    pub projection_dim: usize,
}

pub const ENCODER: &str = "encoder";
pub const CLASSIFIER: &str = "classifier";
pub const PROJECTOR: &str = "projector";

const FC: &str = "fc";
const PROJ_HIDDEN: &str = "proj1";
const PROJ_OUT: &str = "proj2";

fn conv_name(i: usize) -> String {
    format!("conv{}", i + 1)
}

/// Expected shape of one layer, used for initialization and checkpoint validation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct LayerShape {
    pub set: &'static str,
    pub name: String,
    pub weight: Vec<usize>,
    pub bias: Vec<usize>,
}

impl Architecture {
    /// conv(3→16, s1) → conv(16→32, s2) → conv(32→64, s2) → conv(64→128, s2),
    /// 3×3 kernels with padding 1, each followed by ReLU, then global average
    /// pooling. Classifier 128→N; projector 128→64→ReLU→32.
    pub fn desk(num_classes: usize, input_height: usize, input_width: usize) -> Self {
        let conv = |out_channels, stride| ConvLayerSpec {
            out_channels,
            kernel: 3,
            stride,
            padding: 1,
        };
        Self {
            input_height,
            input_width,
            conv_layers: vec![conv(16, 1), conv(32, 2), conv(64, 2), conv(128, 2)],
            num_classes,
            projector_hidden: 64,
            projection_dim: 32,
        }
    }

    pub fn with_projection_dim(mut self, dim: usize) -> Self {
        self.projection_dim = dim;
        self
    }

    pub fn feature_dim(&self) -> usize {
        self.conv_layers.last().map_or(CHANNELS, |c| c.out_channels)
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [CHANNELS, self.input_height, self.input_width]
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if self.projector_hidden == 0 || self.projection_dim == 0 {
            return Err(Error::Config("projector sizes must be positive".into()));
        }
        if self.conv_layers.is_empty() {
            return Err(Error::Config("encoder needs at least one convolution".into()));
        }
        let (mut h, mut w) = (self.input_height, self.input_width);
        for c in &self.conv_layers {
            if c.out_channels == 0 {
                return Err(Error::Config("convolution with zero output channels".into()));
            }
            h = output_extent(h, c.kernel, c.stride, c.padding)?;
            w = output_extent(w, c.kernel, c.stride, c.padding)?;
        }
        Ok(())
    }

    pub(crate) fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut shapes = Vec::new();
        let mut in_c = CHANNELS;
        for (i, c) in self.conv_layers.iter().enumerate() {
            shapes.push(LayerShape {
                set: ENCODER,
                name: conv_name(i),
                weight: vec![c.out_channels, in_c, c.kernel, c.kernel],
                bias: vec![c.out_channels],
            });
            in_c = c.out_channels;
        }
        let f = self.feature_dim();
        shapes.push(LayerShape {
            set: CLASSIFIER,
            name: FC.into(),
            weight: vec![self.num_classes, f],
            bias: vec![self.num_classes],
        });
        shapes.push(LayerShape {
            set: PROJECTOR,
            name: PROJ_HIDDEN.into(),
            weight: vec![self.projector_hidden, f],
            bias: vec![self.projector_hidden],
        });
        shapes.push(LayerShape {
            set: PROJECTOR,
            name: PROJ_OUT.into(),
            weight: vec![self.projection_dim, self.projector_hidden],
            bias: vec![self.projection_dim],
        });
        shapes
    }
}

/// Encoder θ, classifier ψ and projector π parameters plus their architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle<T> {
    pub architecture: Architecture,
    pub seed: u64,
    pub encoder: ParameterSet<T>,
    pub classifier: ParameterSet<T>,
    pub projector: ParameterSet<T>,
}

/// Tape handles of a bound bundle.
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub encoder: BoundParams,
    pub classifier: BoundParams,
    pub projector: BoundParams,
}

impl<T: Scalar> ModelBundle<T> {
    /// Kaiming-uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
    pub fn init(architecture: Architecture, seed: u64) -> Result<Self> {
        architecture.validate()?;
        let mut rng = stream_rng(seed, &[stream::INIT]);
        Ok(Self::from_shapes(architecture, seed, |shape| {
            let fan_in: usize = shape.weight[1..].iter().product();
            let bound = (6.0 / fan_in as f64).sqrt();
            let n: usize = shape.weight.iter().product();
            let w = (0..n)
                .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
                .collect();
            (w, vec![T::zero(); shape.bias[0]])
        }))
    }

    /// All weights and biases zero.
    pub fn zeros(architecture: Architecture) -> Result<Self> {
        architecture.validate()?;
        Ok(Self::from_shapes(architecture, 0, |shape| {
            (
                vec![T::zero(); shape.weight.iter().product()],
                vec![T::zero(); shape.bias[0]],
            )
        }))
    }

    fn from_shapes(
        architecture: Architecture,
        seed: u64,
        mut fill: impl FnMut(&LayerShape) -> (Vec<T>, Vec<T>),
    ) -> Self {
        let layers = architecture
            .layer_shapes()
            .iter()
            .map(|shape| {
                let (w, b) = fill(shape);
                Layer::new(
                    Tensor::new(shape.weight.clone(), w).expect("shape product"),
                    Tensor::new(shape.bias.clone(), b).expect("shape product"),
                )
            })
            .collect();
        Self::assemble(architecture, seed, layers)
    }

    /// Distributes layers, given in [`Architecture::layer_shapes`] order, over
    /// the three parameter sets.
    pub(crate) fn assemble(architecture: Architecture, seed: u64, layers: Vec<Layer<T>>) -> Self {
        let mut sets = [ParameterSet::new(), ParameterSet::new(), ParameterSet::new()];
        for (shape, layer) in architecture.layer_shapes().into_iter().zip(layers) {
            let idx = match shape.set {
                ENCODER => 0,
                CLASSIFIER => 1,
                _ => 2,
            };
            sets[idx].insert(shape.name, layer);
        }
        let [encoder, classifier, projector] = sets;
        Self {
            architecture,
            seed,
            encoder,
            classifier,
            projector,
        }
    }

    pub fn sets(&self) -> [(&'static str, &ParameterSet<T>); 3] {
        [
            (ENCODER, &self.encoder),
            (CLASSIFIER, &self.classifier),
            (PROJECTOR, &self.projector),
        ]
    }

    pub fn sets_mut(&mut self) -> [(&'static str, &mut ParameterSet<T>); 3] {
        [
            (ENCODER, &mut self.encoder),
            (CLASSIFIER, &mut self.classifier),
            (PROJECTOR, &mut self.projector),
        ]
    }

    /// Copies the gradients of a bound bundle into every gradient slot.
    pub fn store_grads(&mut self, bound: &BoundModel, grads: &Gradients<T>) -> Result<()> {
        self.encoder.store_grads(&bound.encoder, grads)?;
        self.classifier.store_grads(&bound.classifier, grads)?;
        self.projector.store_grads(&bound.projector, grads)
    }

    /// Gradient norms of the encoder, classifier and projector.
    pub fn grad_norms(&self) -> [f64; 3] {
        self.sets().map(|(_, s)| s.grad_norm())
    }

    /// One momentum SGD step on all three parameter sets.
    pub fn sgd_step(&mut self, lr: T, momentum: T) -> Result<()> {
        for (_, set) in self.sets_mut() {
            set.sgd_step(lr, momentum)?;
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.sets().iter().map(|(_, s)| s.num_params()).sum()
    }

    /// Converts every parameter and optimizer slot to another precision.
    pub fn cast<U: Scalar>(&self) -> ModelBundle<U> {
        let cast_set = |set: &ParameterSet<T>| {
            let mut out = ParameterSet::new();
            for (name, l) in set.iter() {
                out.insert(
                    name,
                    Layer {
                        weight: l.weight.cast(),
                        bias: l.bias.cast(),
                        weight_grad: l.weight_grad.cast(),
                        bias_grad: l.bias_grad.cast(),
                        weight_velocity: l.weight_velocity.cast(),
                        bias_velocity: l.bias_velocity.cast(),
                    },
                );
            }
            out
        };
        ModelBundle {
            architecture: self.architecture.clone(),
            seed: self.seed,
            encoder: cast_set(&self.encoder),
            classifier: cast_set(&self.classifier),
            projector: cast_set(&self.projector),
        }
    }

    /// Records every parameter on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> BoundModel {
        BoundModel {
            encoder: self.encoder.bind(tape, requires_grad),
            classifier: self.classifier.bind(tape, requires_grad),
            projector: self.projector.bind(tape, requires_grad),
        }
    }

    /// Features `f(x)` for an `[N, 3, H, W]` batch of pixels in `[0, 1]`.
    pub fn encode_on(&self, tape: &mut Tape<T>, bound: &BoundModel, x: Var) -> Result<Var> {
        let shape = tape.value(x).shape();
        let expected = self.architecture.input_shape();
        if shape.len() != 4 || shape[1..] != expected {
            return Err(Error::dim("encoder input", shape, &expected));
        }
        // pixels in [0, 1] enter the first convolution centered to [-1, 1]
        let mut h = tape.affine(x, T::from_f64_lossy(2.0), -T::one());
        for (i, spec) in self.architecture.conv_layers.iter().enumerate() {
            let layer = bound.encoder.layer(&conv_name(i))?;
            h = tape.conv2d(h, layer.weight, layer.bias, Conv2dSpec::new(spec.stride, spec.padding))?;
            h = tape.relu(h);
        }
        tape.global_avg_pool(h)
    }

    /// Logits `g(features)`.
    pub fn classify_on(&self, tape: &mut Tape<T>, bound: &BoundModel, features: Var) -> Result<Var> {
        self.check_features(tape, features)?;
        let fc = bound.classifier.layer(FC)?;
        tape.dense(features, fc.weight, fc.bias)
    }

    /// Latents `h(features)`; not normalized.
    pub fn project_on(&self, tape: &mut Tape<T>, bound: &BoundModel, features: Var) -> Result<Var> {
        self.check_features(tape, features)?;
        let l1 = bound.projector.layer(PROJ_HIDDEN)?;
        let l2 = bound.projector.layer(PROJ_OUT)?;
        let hidden = tape.dense(features, l1.weight, l1.bias)?;
        let hidden = tape.relu(hidden);
        tape.dense(hidden, l2.weight, l2.bias)
    }

    fn check_features(&self, tape: &Tape<T>, features: Var) -> Result<()> {
        let shape = tape.value(features).shape();
        let dim = self.architecture.feature_dim();
        if shape.last() != Some(&dim) || shape.len() > 2 {
            return Err(Error::dim("feature vector", shape, &[dim]));
        }
        Ok(())
    }

    pub fn encode(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let f = self.encode_on(&mut tape, &bound, xv)?;
        Ok(tape.value(f).clone())
    }

    pub fn classify(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let f = tape.constant(features.clone());
        let y = self.classify_on(&mut tape, &bound, f)?;
        Ok(tape.value(y).clone())
    }

    pub fn project(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let f = tape.constant(features.clone());
        let z = self.project_on(&mut tape, &bound, f)?;
        Ok(tape.value(z).clone())
    }

    /// `g(f(x))` for an image batch tensor.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.classify(&self.encode(x)?)
    }

    /// Arg-max class per image, evaluated in chunks of `chunk` images.
    pub fn predict(&self, images: &[ImageTensor], chunk: usize) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(images.len());
        for part in images.chunks(chunk.max(1)) {
            let logits = self.logits(&images_to_batch(part)?)?;
            out.extend(argmax_rows(&logits));
        }
        Ok(out)
    }
}

/// Index of the largest entry of each row; the first wins on ties.
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let k = *logits.shape().last().unwrap_or(&1);
    logits
        .data()
        .chunks_exact(k.max(1))
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> Architecture {
        Architecture::desk(3, 16, 16)
    }

    #[test]
    fn zero_bundle_gives_zero_features() {
        let bundle = ModelBundle::<f32>::zeros(arch()).unwrap();
        let f = bundle.encode(&Tensor::zeros([2, 3, 16, 16])).unwrap();
        assert_eq!(f.shape(), &[2, 128]);
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn classifier_bias_passes_through_zero_features() {
        let mut bundle = ModelBundle::<f32>::zeros(arch()).unwrap();
        bundle.classifier.get_mut(FC).unwrap().bias = Tensor::vector(vec![0.1, 0.2, 0.3]);
        let logits = bundle.classify(&Tensor::zeros([1, 128])).unwrap();
        assert_eq!(logits.data(), &[0.1, 0.2, 0.3]);
        assert_eq!(argmax_rows(&logits), vec![2]);
    }

    #[test]
    fn zero_projector_yields_degenerate_cosine() {
        let mut bundle = ModelBundle::<f64>::init(arch(), 4).unwrap();
        bundle.projector = ModelBundle::<f64>::zeros(arch()).unwrap().projector;
        let z = bundle.project(&Tensor::full([128], 0.5)).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(matches!(
            crate::autodiff::cosine_similarity(z.data(), z.data()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn projection_dim_is_honoured() {
        for dim in [16, 32, 128] {
            let bundle = ModelBundle::<f32>::init(arch().with_projection_dim(dim), 1).unwrap();
            let z = bundle.project(&Tensor::full([2, 128], 0.1)).unwrap();
            assert_eq!(z.shape(), &[2, dim]);
        }
    }

    #[test]
    fn heads_are_disjoint_and_sized() {
        let bundle = ModelBundle::<f32>::init(Architecture::desk(4, 32, 32), 9).unwrap();
        assert_eq!(bundle.encoder.len(), 4);
        assert_eq!(bundle.classifier.get(FC).unwrap().weight.shape(), &[4, 128]);
        assert_eq!(bundle.projector.get(PROJ_OUT).unwrap().weight.shape(), &[32, 64]);
        let names: Vec<_> = bundle.sets().iter().flat_map(|(_, s)| s.iter().map(|(n, _)| n.to_string()).collect::<Vec<_>>()).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(names.len(), dedup.len());
    }

    #[test]
    fn input_shape_is_checked() {
        let bundle = ModelBundle::<f32>::init(arch(), 1).unwrap();
        assert!(matches!(bundle.encode(&Tensor::zeros([1, 3, 8, 16])), Err(Error::Dimension { .. })));
        assert!(matches!(bundle.classify(&Tensor::zeros([1, 10])), Err(Error::Dimension { .. })));
        assert!(matches!(bundle.project(&Tensor::zeros([1, 10])), Err(Error::Dimension { .. })));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = ModelBundle::<f32>::init(arch(), 5).unwrap();
        let b = ModelBundle::<f32>::init(arch(), 5).unwrap();
        let c = ModelBundle::<f32>::init(arch(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
