//! RGB images with channel values in `[0, 1]`.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHANNELS: usize = 3;

/// Rec. 601 luma of an RGB triple.
#[inline]
pub fn luma([r, g, b]: [f32; 3]) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// `height × width × 3` image stored interleaved (HWC), `f32` per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * CHANNELS {
            return Err(Error::dim("image", &[height, width, CHANNELS], &[data.len()]));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let data = std::iter::repeat_n(rgb, height * width).flatten().collect();
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * CHANNELS;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Pixel with coordinates clamped to the image.
    #[inline]
    pub fn pixel_clamped(&self, y: isize, x: isize) -> [f32; 3] {
        let y = y.clamp(0, self.height as isize - 1) as usize;
        let x = x.clamp(0, self.width as isize - 1) as usize;
        self.pixel(y, x)
    }

    /// Bilinear sample at fractional coordinates, clamping at the edges.
    pub fn sample_bilinear(&self, y: f32, x: f32) -> [f32; 3] {
        let y = y.clamp(0.0, (self.height - 1) as f32);
        let x = x.clamp(0.0, (self.width - 1) as f32);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(self.height - 1), (x0 + 1).min(self.width - 1));
        let (fy, fx) = (y - y0 as f32, x - x0 as f32);
        let (a, b, c, d) = (self.pixel(y0, x0), self.pixel(y0, x1), self.pixel(y1, x0), self.pixel(y1, x1));
        let mut out = [0.0; 3];
        for ch in 0..3 {
            let top = a[ch] + (b[ch] - a[ch]) * fx;
            let bottom = c[ch] + (d[ch] - c[ch]) * fx;
            out[ch] = top + (bottom - top) * fy;
        }
        out
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamp01(mut self) -> Self {
        // NaN maps to 0 so downstream range checks stay meaningful
        for v in &mut self.data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        self
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    /// Root-mean-square per-channel difference.
    pub fn rms_diff(&self, other: &ImageTensor) -> f64 {
        let sq: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum();
        (sq / self.data.len().max(1) as f64).sqrt()
    }

    pub fn mean_abs_diff(&self, other: &ImageTensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / self.data.len().max(1) as f64
    }

    pub fn max_abs_diff(&self, other: &ImageTensor) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// Packs same-sized images into an `[N, 3, H, W]` tensor.
pub fn images_to_batch<T: Scalar>(images: &[ImageTensor]) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Contract("empty image batch".into()))?;
    let (h, w) = first.dims();
    let plane = h * w;
    let mut data = vec![T::zero(); images.len() * CHANNELS * plane];
    for (n, img) in images.iter().enumerate() {
        if img.dims() != (h, w) {
            return Err(Error::dim("image batch", &[h, w], &[img.height, img.width]));
        }
        let dst = &mut data[n * CHANNELS * plane..(n + 1) * CHANNELS * plane];
        for (p, px) in img.data.chunks_exact(CHANNELS).enumerate() {
            for c in 0..CHANNELS {
                dst[c * plane + p] = T::from_f64_lossy(px[c] as f64);
            }
        }
    }
    Tensor::new([images.len(), CHANNELS, h, w], data)
}

/// Inverse of [`images_to_batch`].
pub fn batch_to_images<T: Scalar>(batch: &Tensor<T>) -> Result<Vec<ImageTensor>> {
    let &[n, c, h, w] = batch.shape() else {
        return Err(Error::dim("image batch", batch.shape(), &[]));
    };
    if c != CHANNELS {
        return Err(Error::dim("image batch channels", batch.shape(), &[CHANNELS]));
    }
    let plane = h * w;
    Ok(batch
        .data()
        .chunks_exact(CHANNELS * plane)
        .take(n)
        .map(|src| {
            let mut data = vec![0.0f32; CHANNELS * plane];
            for p in 0..plane {
                for ch in 0..CHANNELS {
                    data[p * CHANNELS + ch] = src[ch * plane + p].as_f64() as f32;
                }
            }
            ImageTensor {
                height: h,
                width: w,
                data,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_round_trip() {
        let a = ImageTensor::from_fn(2, 3, |y, x| [y as f32 * 0.1, x as f32 * 0.2, 0.5]);
        let b = ImageTensor::filled(2, 3, [0.9, 0.1, 0.3]);
        let t = images_to_batch::<f32>(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(t.shape(), &[2, 3, 2, 3]);
        // channel 1 of first image, pixel (0, 2)
        assert_eq!(t.data()[6 + 2], 0.4);
        assert_eq!(batch_to_images(&t).unwrap(), vec![a, b]);
    }

    #[test]
    fn bilinear_hits_grid_points_exactly() {
        let a = ImageTensor::from_fn(4, 4, |y, x| [(y * 4 + x) as f32 / 16.0, 0.0, 1.0]);
        assert_eq!(a.sample_bilinear(2.0, 3.0), a.pixel(2, 3));
        let mid = a.sample_bilinear(0.5, 0.5)[0];
        assert!((mid - (0.0 + 1.0 + 4.0 + 5.0) / 64.0).abs() < 1e-6);
    }
}
