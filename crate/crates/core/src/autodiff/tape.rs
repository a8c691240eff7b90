use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::conv::{self, Conv2dSpec, ConvGeometry};
use super::loss::{self, DenominatorMode, InfoNceState, Reduction};
use super::tensor::Tensor;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geometry: ConvGeometry,
        cols: Vec<T>,
    },
    Relu {
        x: Var,
    },
    GlobalAvgPool {
        x: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
        reduction: Reduction,
    },
    Cosine {
        u: Var,
        v: Var,
    },
    InfoNce {
        clean: Var,
        adv: Var,
        state: Box<InfoNceState>,
    },
    Sum {
        x: Var,
    },
    Scale {
        x: Var,
        factor: T,
    },
    Add {
        a: Var,
        b: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Single-use record of a forward computation.
///
/// Operations append nodes in execution order; [`Tape::backward`] consumes
/// the tape and replays it in reverse.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_any(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Records an input. Gradients are produced for it iff
    /// `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs = tensor.requires_grad();
        self.push(tensor, Op::Leaf, needs)
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.push(tensor.with_requires_grad(false), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// `y = x·Wᵀ + b` for `x: [N, in]` (or a single vector `[in]`),
    /// `W: [out, in]`, `b: [out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        let &[out, inp] = ws else {
            return Err(Error::dim("dense weight", ws, &[]));
        };
        let (rows, out_shape) = match *xs {
            [n] if n == inp => (1, vec![out]),
            [m, n] if n == inp => (m, vec![m, out]),
            _ => return Err(Error::dim("dense", xs, ws)),
        };
        if bs != [out] {
            return Err(Error::dim("dense bias", ws, bs));
        }
        let mut y = Vec::with_capacity(rows * out);
        for _ in 0..rows {
            y.extend_from_slice(self.value(b).data());
        }
        T::gemm(
            rows,
            inp,
            out,
            T::one(),
            self.value(x).data(),
            (inp as isize, 1),
            self.value(w).data(),
            (1, inp as isize),
            T::one(),
            &mut y,
            (out as isize, 1),
        );
        let needs = self.grad_any(&[x, w, b]);
        Ok(self.push(Tensor::new(out_shape, y)?, Op::Dense { x, w, b }, needs))
    }

    /// 2-D cross-correlation of `x: [N, C, H, W]` with `w: [O, C, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, spec: Conv2dSpec) -> Result<Var> {
        let geometry = ConvGeometry::resolve(
            self.value(x).shape(),
            self.value(w).shape(),
            self.value(b).shape(),
            spec,
        )?;
        let keep_cols = self.grad_any(&[w, b]);
        let (y, cols) = conv::forward(
            &geometry,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            keep_cols,
        );
        let cols = if keep_cols { cols } else { Vec::new() };
        let needs = self.grad_any(&[x, w, b]);
        let value = Tensor::new(geometry.output_shape(), y)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                geometry,
                cols,
            },
            needs,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let needs = self.grad_any(&[x]);
        self.push(value.with_requires_grad(false), Op::Relu { x }, needs)
    }

    /// Spatial mean: `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x).shape();
        let &[n, c, h, w] = xs else {
            return Err(Error::dim("global average pool (expects NCHW)", xs, &[]));
        };
        let hw = h * w;
        let y = self
            .value(x)
            .data()
            .chunks_exact(hw)
            .map(|plane| T::from_f64_lossy(plane.iter().map(|v| v.as_f64()).sum::<f64>() / hw as f64))
            .collect();
        let needs = self.grad_any(&[x]);
        Ok(self.push(Tensor::new([n, c], y)?, Op::GlobalAvgPool { x }, needs))
    }

    /// Softmax cross-entropy of `logits: [N, K]` (or `[K]`) against labels.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        reduction: Reduction,
    ) -> Result<Var> {
        let shape = self.value(logits).shape();
        let (rows, classes) = match *shape {
            [k] => (1, k),
            [n, k] => (n, k),
            _ => return Err(Error::dim("cross entropy logits", shape, &[])),
        };
        if labels.len() != rows {
            return Err(Error::dim("cross entropy labels", shape, &[labels.len()]));
        }
        let (losses, probs) = loss::cross_entropy_rows(self.value(logits).data(), classes, labels)?;
        let total: f64 = losses.iter().map(|v| v.as_f64()).sum();
        let value = match reduction {
            Reduction::Sum => total,
            Reduction::Mean => total / rows as f64,
        };
        let needs = self.grad_any(&[logits]);
        Ok(self.push(
            Tensor::scalar(T::from_f64_lossy(value)),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
                reduction,
            },
            needs,
        ))
    }

    /// Cosine similarity of two vectors of equal length.
    pub fn cosine_similarity(&mut self, u: Var, v: Var) -> Result<Var> {
        let (us, vs) = (self.value(u).shape(), self.value(v).shape());
        if us.len() != 1 || us != vs {
            return Err(Error::dim("cosine similarity", us, vs));
        }
        let sim = loss::cosine_similarity(self.value(u).data(), self.value(v).data())?;
        let needs = self.grad_any(&[u, v]);
        Ok(self.push(Tensor::scalar(sim), Op::Cosine { u, v }, needs))
    }

    /// Mean InfoNCE over anchors `clean[i]` with positives `adv[i]`.
    pub fn info_nce(
        &mut self,
        clean: Var,
        adv: Var,
        temperature: f64,
        mode: DenominatorMode,
    ) -> Result<Var> {
        let (m, dim) = loss::latent_dims(self.value(clean).shape(), self.value(adv).shape())?;
        let state = loss::info_nce_forward(
            self.value(clean).data(),
            self.value(adv).data(),
            m,
            dim,
            temperature,
            mode,
        )?;
        let needs = self.grad_any(&[clean, adv]);
        Ok(self.push(
            Tensor::scalar(T::from_f64_lossy(state.loss)),
            Op::InfoNce {
                clean,
                adv,
                state: Box::new(state),
            },
            needs,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.value(x).data().iter().map(|v| v.as_f64()).sum();
        let needs = self.grad_any(&[x]);
        self.push(Tensor::scalar(T::from_f64_lossy(total)), Op::Sum { x }, needs)
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let value = self.value(x).map(|v| v * factor).with_requires_grad(false);
        let needs = self.grad_any(&[x]);
        self.push(value, Op::Scale { x, factor }, needs)
    }

    /// Elementwise `x·factor + shift`.
    pub fn affine(&mut self, x: Var, factor: T, shift: T) -> Var {
        let value = self.value(x).map(|v| v * factor + shift).with_requires_grad(false);
        let needs = self.grad_any(&[x]);
        self.push(value, Op::Scale { x, factor }, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a), self.value(b));
        if sa.shape() != sb.shape() {
            return Err(Error::dim("add", sa.shape(), sb.shape()));
        }
        let data = sa.data().iter().zip(sb.data()).map(|(x, y)| *x + *y).collect();
        let value = Tensor::new(sa.shape().to_vec(), data)?;
        let needs = self.grad_any(&[a, b]);
        Ok(self.push(value, Op::Add { a, b }, needs))
    }

    /// Reverse pass from a scalar `loss`, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        let Tape { mut nodes } = self;
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            if matches!(nodes[idx].op, Op::Leaf) || !nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let op = std::mem::replace(&mut nodes[idx].op, Op::Leaf);
            let needs = |v: Var| nodes[v.0].needs_grad;
            let mut contributions: Vec<(Var, Vec<T>)> = Vec::with_capacity(3);
            match op {
                Op::Leaf => {}
                Op::Dense { x, w, b } => {
                    let (xv, wv) = (&nodes[x.0].value, &nodes[w.0].value);
                    let (out, inp) = (wv.shape()[0], wv.shape()[1]);
                    let rows = xv.len() / inp;
                    if needs(x) {
                        let mut dx = vec![T::zero(); rows * inp];
                        T::gemm(
                            rows,
                            out,
                            inp,
                            T::one(),
                            &g,
                            (out as isize, 1),
                            wv.data(),
                            (inp as isize, 1),
                            T::zero(),
                            &mut dx,
                            (inp as isize, 1),
                        );
                        contributions.push((x, dx));
                    }
                    if needs(w) {
                        contributions.push((w, dense_weight_grad(&g, xv.data(), rows, out, inp)));
                    }
                    if needs(b) {
                        let db = (0..out)
                            .map(|o| {
                                T::from_f64_lossy((0..rows).map(|r| g[r * out + o].as_f64()).sum())
                            })
                            .collect();
                        contributions.push((b, db));
                    }
                }
                Op::Conv2d {
                    x,
                    w,
                    b,
                    geometry,
                    cols,
                } => {
                    let grads =
                        conv::backward(&geometry, &cols, nodes[w.0].value.data(), &g, needs(x));
                    if let Some(dx) = grads.input {
                        contributions.push((x, dx));
                    }
                    if needs(w) {
                        contributions.push((w, grads.weight));
                    }
                    if needs(b) {
                        contributions.push((b, grads.bias));
                    }
                }
                Op::Relu { x } => {
                    let dx = nodes[x.0]
                        .value
                        .data()
                        .iter()
                        .zip(&g)
                        .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                        .collect();
                    contributions.push((x, dx));
                }
                Op::GlobalAvgPool { x } => {
                    let shape = nodes[x.0].value.shape();
                    let hw = shape[2] * shape[3];
                    let inv = T::from_f64_lossy(1.0 / hw as f64);
                    let dx = g
                        .iter()
                        .flat_map(|&gv| std::iter::repeat_n(gv * inv, hw))
                        .collect();
                    contributions.push((x, dx));
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    mut probs,
                    reduction,
                } => {
                    let classes = probs.len() / labels.len();
                    let factor = match reduction {
                        Reduction::Sum => g[0],
                        Reduction::Mean => g[0] / T::from_f64_lossy(labels.len() as f64),
                    };
                    for (row, &label) in probs.chunks_exact_mut(classes).zip(&labels) {
                        row[label] -= T::one();
                        row.iter_mut().for_each(|p| *p *= factor);
                    }
                    contributions.push((logits, probs));
                }
                Op::Cosine { u, v } => {
                    let (du, dv) = loss::cosine_backward(
                        nodes[u.0].value.data(),
                        nodes[v.0].value.data(),
                        g[0].as_f64(),
                    );
                    contributions.push((u, du));
                    contributions.push((v, dv));
                }
                Op::InfoNce { clean, adv, state } => {
                    let (dc, da) = loss::info_nce_backward(&state, g[0].as_f64());
                    contributions.push((clean, dc));
                    contributions.push((adv, da));
                }
                Op::Sum { x } => {
                    contributions.push((x, vec![g[0]; nodes[x.0].value.len()]));
                }
                Op::Scale { x, factor } => {
                    contributions.push((x, g.iter().map(|&v| v * factor).collect()));
                }
                Op::Add { a, b } => {
                    contributions.push((b, g.clone()));
                    contributions.push((a, g));
                }
            }
            for (target, contribution) in contributions {
                if !nodes[target.0].needs_grad {
                    continue;
                }
                match &mut grads[target.0] {
                    Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += *c),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }

        let mut out = Vec::with_capacity(nodes.len());
        for (node, grad) in nodes.iter().zip(grads) {
            let is_input = matches!(node.op, Op::Leaf) && node.value.requires_grad();
            out.push(if is_input {
                let data = grad.unwrap_or_else(|| vec![T::zero(); node.value.len()]);
                Some(Tensor::new(node.value.shape().to_vec(), data)?)
            } else {
                None
            });
        }
        Ok(Gradients { grads: out })
    }
}

/// `dW = dYᵀ · X`, reduced over rows in blocks with 64-bit accumulation.
fn dense_weight_grad<T: Scalar>(g: &[T], x: &[T], rows: usize, out: usize, inp: usize) -> Vec<T> {
    const BLOCK: usize = 4096;
    if rows <= BLOCK {
        let mut dw = vec![T::zero(); out * inp];
        T::gemm(
            out,
            rows,
            inp,
            T::one(),
            g,
            (1, out as isize),
            x,
            (inp as isize, 1),
            T::zero(),
            &mut dw,
            (inp as isize, 1),
        );
        return dw;
    }
    let mut acc = vec![0.0f64; out * inp];
    let mut part = vec![T::zero(); out * inp];
    for start in (0..rows).step_by(BLOCK) {
        let len = BLOCK.min(rows - start);
        T::gemm(
            out,
            len,
            inp,
            T::one(),
            &g[start * out..],
            (1, out as isize),
            &x[start * inp..],
            (inp as isize, 1),
            T::zero(),
            &mut part,
            (inp as isize, 1),
        );
        acc.iter_mut().zip(&part).for_each(|(a, p)| *a += p.as_f64());
    }
    acc.into_iter().map(T::from_f64_lossy).collect()
}

/// Gradients of every `requires_grad` leaf of a consumed tape.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Number of leaves that received a gradient slot.
    pub fn count(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }
}
