//! im2col based 2-D cross-correlation kernels.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Stride and zero padding of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dSpec {
    pub const fn new(stride: usize, padding: usize) -> Self {
        Self { stride, padding }
    }
}

/// Fully resolved geometry of one convolution call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// Output extent along one axis: `floor((in + 2·pad − k)/stride) + 1`.
pub fn output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Config("convolution stride must be positive".into()));
    }
    let padded = input + 2 * pad;
    if kernel == 0 || kernel > padded {
        return Err(Error::Config(format!(
            "kernel extent {kernel} exceeds padded input extent {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

impl ConvGeometry {
    pub fn resolve(x: &[usize], w: &[usize], b: &[usize], spec: Conv2dSpec) -> Result<Self> {
        let (&[batch, in_c, in_h, in_w], &[out_c, w_c, k_h, k_w]) = (x, w) else {
            return Err(Error::dim("conv2d (expects NCHW input, OCKK kernel)", x, w));
        };
        if w_c != in_c {
            return Err(Error::dim("conv2d channels", x, w));
        }
        if b != [out_c] {
            return Err(Error::dim("conv2d bias", w, b));
        }
        let out_h = output_extent(in_h, k_h, spec.stride, spec.padding)?;
        let out_w = output_extent(in_w, k_w, spec.stride, spec.padding)?;
        Ok(Self {
            batch,
            in_c,
            in_h,
            in_w,
            out_c,
            k_h,
            k_w,
            stride: spec.stride,
            pad: spec.padding,
            out_h,
            out_w,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.in_c * self.k_h * self.k_w
    }

    pub fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn in_len(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_c, self.out_h, self.out_w]
    }

    /// Source coordinate of output `o` tapped at kernel offset `k`, if inside
    /// the unpadded image.
    #[inline]
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

impl ConvGeometry {
    /// Output columns `[lo, hi)` whose tap at kernel offset `kj` lands inside
    /// the image row.
    #[inline]
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        // ox*stride + kj - pad in [0, in_w)
        let lo = self.pad.saturating_sub(kj).div_ceil(self.stride);
        let hi = if self.in_w + self.pad > kj {
            ((self.in_w + self.pad - kj - 1) / self.stride + 1).min(self.out_w)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

/// Unfolds one image `[C, H, W]` into `[C·kh·kw, out_h·out_w]`.
pub(crate) fn im2col<T: Scalar>(g: &ConvGeometry, image: &[T], cols: &mut [T]) {
    let p = g.out_pixels();
    for c in 0..g.in_c {
        let plane = &image[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.k_h {
            for kj in 0..g.k_w {
                let row = (c * g.k_h + ki) * g.k_w + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = g.valid_cols(kj);
                for oy in 0..g.out_h {
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    let Some(sy) = g.source(oy, ki, g.in_h) else {
                        line.fill(T::zero());
                        continue;
                    };
                    line[..lo].fill(T::zero());
                    line[hi..].fill(T::zero());
                    if lo == hi {
                        continue;
                    }
                    let src_row = &plane[sy * g.in_w..(sy + 1) * g.in_w];
                    let first = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        line[lo..hi].copy_from_slice(&src_row[first..first + (hi - lo)]);
                    } else {
                        for (v, sx) in line[lo..hi].iter_mut().zip((first..).step_by(g.stride)) {
                            *v = src_row[sx];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
pub(crate) fn col2im<T: Scalar>(g: &ConvGeometry, cols: &[T], image: &mut [T]) {
    let p = g.out_pixels();
    for c in 0..g.in_c {
        let plane = &mut image[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.k_h {
            for kj in 0..g.k_w {
                let row = (c * g.k_h + ki) * g.k_w + kj;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = g.valid_cols(kj);
                if lo == hi {
                    continue;
                }
                for oy in 0..g.out_h {
                    let Some(sy) = g.source(oy, ki, g.in_h) else {
                        continue;
                    };
                    let dst_row = &mut plane[sy * g.in_w..(sy + 1) * g.in_w];
                    let line = &src[oy * g.out_w + lo..oy * g.out_w + hi];
                    let first = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        for (d, v) in dst_row[first..first + (hi - lo)].iter_mut().zip(line) {
                            *d += *v;
                        }
                    } else {
                        for (v, sx) in line.iter().zip((first..).step_by(g.stride)) {
                            dst_row[sx] += *v;
                        }
                    }
                }
            }
        }
    }
}

/// Forward pass. Returns the output and, when `keep_cols` is set, the
/// unfolded columns of every image (needed for the weight gradient).
pub(crate) fn forward<T: Scalar>(
    g: &ConvGeometry,
    x: &[T],
    weight: &[T],
    bias: &[T],
    keep_cols: bool,
) -> (Vec<T>, Vec<T>) {
    let (ck, p) = (g.patch_len(), g.out_pixels());
    let mut cols = vec![T::zero(); if keep_cols { g.batch * ck * p } else { ck * p }];
    let mut out = vec![T::zero(); g.batch * g.out_c * p];
    for n in 0..g.batch {
        let image = &x[n * g.in_len()..(n + 1) * g.in_len()];
        let col = if keep_cols {
            &mut cols[n * ck * p..(n + 1) * ck * p]
        } else {
            &mut cols[..]
        };
        im2col(g, image, col);
        let y = &mut out[n * g.out_c * p..(n + 1) * g.out_c * p];
        for (o, row) in y.chunks_exact_mut(p).enumerate() {
            row.fill(bias[o]);
        }
        T::gemm(
            g.out_c,
            ck,
            p,
            T::one(),
            weight,
            (ck as isize, 1),
            col,
            (p as isize, 1),
            T::one(),
            y,
            (p as isize, 1),
        );
    }
    (out, cols)
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Backward pass from the output gradient `dy`. Weight and bias gradients are
/// reduced over the batch in 64-bit and skipped when `cols` is empty.
pub(crate) fn backward<T: Scalar>(
    g: &ConvGeometry,
    cols: &[T],
    weight: &[T],
    dy: &[T],
    want_input: bool,
) -> ConvGrads<T> {
    let (ck, p) = (g.patch_len(), g.out_pixels());
    let want_params = !cols.is_empty();
    let mut dw_acc = vec![0.0f64; g.out_c * ck];
    let mut db_acc = vec![0.0f64; g.out_c];
    let mut dw_part = vec![T::zero(); g.out_c * ck];
    let mut dcol = vec![T::zero(); if want_input { ck * p } else { 0 }];
    let mut dx = want_input.then(|| vec![T::zero(); g.batch * g.in_len()]);

    for n in 0..g.batch {
        let dyn_ = &dy[n * g.out_c * p..(n + 1) * g.out_c * p];
        if want_params {
            accumulate_param_grads(g, &cols[n * ck * p..(n + 1) * ck * p], dyn_, &mut dw_part, &mut dw_acc, &mut db_acc);
        }
        if let Some(dx) = dx.as_mut() {
            // dcols = Wᵀ · dY_n
            T::gemm(
                ck,
                g.out_c,
                p,
                T::one(),
                weight,
                (1, ck as isize),
                dyn_,
                (p as isize, 1),
                T::zero(),
                &mut dcol,
                (p as isize, 1),
            );
            col2im(g, &dcol, &mut dx[n * g.in_len()..(n + 1) * g.in_len()]);
        }
    }
    ConvGrads {
        input: dx,
        weight: dw_acc.into_iter().map(T::from_f64_lossy).collect(),
        bias: db_acc.into_iter().map(T::from_f64_lossy).collect(),
    }
}

fn accumulate_param_grads<T: Scalar>(
    g: &ConvGeometry,
    col: &[T],
    dy: &[T],
    dw_part: &mut [T],
    dw_acc: &mut [f64],
    db_acc: &mut [f64],
) {
    let (ck, p) = (g.patch_len(), g.out_pixels());
    // dW_n = dY_n · colsᵀ
    T::gemm(
        g.out_c,
        p,
        ck,
        T::one(),
        dy,
        (p as isize, 1),
        col,
        (1, p as isize),
        T::zero(),
        dw_part,
        (ck as isize, 1),
    );
    for (acc, v) in dw_acc.iter_mut().zip(dw_part.iter()) {
        *acc += v.as_f64();
    }
    for (o, row) in dy.chunks_exact(p).enumerate() {
        db_acc[o] += row.iter().map(|v| v.as_f64()).sum::<f64>();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_extent_formula() {
        assert_eq!(output_extent(32, 3, 1, 1).unwrap(), 32);
        assert_eq!(output_extent(32, 3, 2, 1).unwrap(), 16);
        assert_eq!(output_extent(16, 3, 2, 1).unwrap(), 8);
        assert_eq!(output_extent(5, 3, 1, 0).unwrap(), 3);
        assert_eq!(output_extent(7, 3, 3, 0).unwrap(), 2);
    }

    #[test]
    fn rejects_zero_stride_and_oversized_kernel() {
        assert!(matches!(output_extent(8, 3, 0, 0), Err(Error::Config(_))));
        assert!(matches!(output_extent(2, 5, 1, 1), Err(Error::Config(_))));
        assert!(output_extent(2, 4, 1, 1).is_ok());
    }

    #[test]
    fn im2col_matches_naive_gather() {
        for (h, w, k, stride, pad) in [(5, 4, 3, 2, 1), (6, 7, 3, 1, 1), (7, 5, 2, 3, 0), (4, 4, 5, 1, 2), (8, 8, 3, 2, 0)] {
            let g = ConvGeometry::resolve(&[1, 2, h, w], &[1, 2, k, k], &[1], Conv2dSpec::new(stride, pad)).unwrap();
            let x: Vec<f64> = (0..g.in_len()).map(|i| i as f64 + 1.0).collect();
            let mut cols = vec![f64::NAN; g.patch_len() * g.out_pixels()];
            im2col(&g, &x, &mut cols);
            for c in 0..2 {
                for ki in 0..k {
                    for kj in 0..k {
                        for oy in 0..g.out_h {
                            for ox in 0..g.out_w {
                                let sy = (oy * stride + ki) as isize - pad as isize;
                                let sx = (ox * stride + kj) as isize - pad as isize;
                                let want = if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                    x[c * h * w + sy as usize * w + sx as usize]
                                } else {
                                    0.0
                                };
                                let row = (c * k + ki) * k + kj;
                                assert_eq!(cols[row * g.out_pixels() + oy * g.out_w + ox], want);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let g = ConvGeometry::resolve(&[1, 2, 5, 4], &[1, 2, 3, 3], &[1], Conv2dSpec::new(2, 1))
            .unwrap();
        let x: Vec<f64> = (0..g.in_len()).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
        let c: Vec<f64> = (0..g.patch_len() * g.out_pixels())
            .map(|i| ((i * 5 % 13) as f64) * 0.25)
            .collect();
        let mut cols = vec![0.0; c.len()];
        im2col(&g, &x, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&g, &c, &mut back);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }
}
