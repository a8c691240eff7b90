use rand::Rng;

use super::filters::{self, hsv_to_rgb, rgb_to_hsv, Planes};
use crate::error::{Error, Result};
use crate::image::{ImageTensor, CHANNELS};
use crate::rng::StreamRng;

/// `(x − mean)·factor + mean` with per-channel means; a factor of 1 or a
/// constant image is a fixed point.
pub fn adjust_contrast(x: &ImageTensor, factor: f32) -> ImageTensor {
    let (h, w) = x.dims();
    let n = (h * w).max(1) as f64;
    let mut means = [0.0f64; CHANNELS];
    for px in x.data().chunks_exact(CHANNELS) {
        for (m, &v) in means.iter_mut().zip(px) {
            *m += f64::from(v);
        }
    }
    let means = means.map(|m| (m / n) as f32);
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let m = means[i % CHANNELS];
            if v == m {
                v
            } else {
                (v - m) * factor + m
            }
        })
        .collect();
    ImageTensor::new(h, w, data)
        .expect("same shape")
        .clamp01()
}

pub(super) fn saturate(x: &ImageTensor, scale: f32, shift: f32) -> Vec<f32> {
    x.data()
        .chunks_exact(CHANNELS)
        .flat_map(|px| {
            let [h, s, v] = rgb_to_hsv([px[0], px[1], px[2]]);
            hsv_to_rgb([h, (s * scale + shift).clamp(0.0, 1.0), v])
        })
        .collect()
}

/// Area downsample by `factor`, then nearest-neighbour upsample.
pub(super) fn pixelate(x: &ImageTensor, factor: f32) -> Vec<f32> {
    let (h, w) = x.dims();
    let (nh, nw) = (
        ((h as f32 * factor) as usize).clamp(1, h),
        ((w as f32 * factor) as usize).clamp(1, w),
    );
    let small = filters::resize_area(Planes { data: x.data(), h, w, c: CHANNELS }, nh, nw);
    let mut out = Vec::with_capacity(h * w * CHANNELS);
    for y in 0..h {
        let sy = (y * nh) / h;
        for xx in 0..w {
            let sx = (xx * nw) / w;
            out.extend_from_slice(&small[(sy * nw + sx) * CHANNELS..(sy * nw + sx + 1) * CHANNELS]);
        }
    }
    out
}

/// Smooth random displacement field with RMS length `alpha` pixels,
/// sampled bilinearly with edge clamping.
pub(super) fn elastic(x: &ImageTensor, alpha: f32, sigma: f32, rng: &mut StreamRng) -> Vec<f32> {
    let (h, w) = x.dims();
    let field = |rng: &mut StreamRng| {
        let raw: Vec<f32> = (0..h * w).map(|_| rng.random_range(-1.0f32..=1.0)).collect();
        let mut smooth = filters::gaussian_blur(Planes { data: &raw, h, w, c: 1 }, sigma.max(0.5));
        let rms = (smooth.iter().map(|v| v * v).sum::<f32>() / (h * w) as f32).sqrt();
        if rms > 0.0 {
            smooth.iter_mut().for_each(|v| *v *= alpha / rms);
        }
        smooth
    };
    let (dy, dx) = (field(rng), field(rng));
    let src = Planes { data: x.data(), h, w, c: CHANNELS };
    let mut out = vec![0.0; x.data().len()];
    for y in 0..h {
        for xx in 0..w {
            let p = y * w + xx;
            src.sample(y as f32 + dy[p], xx as f32 + dx[p], &mut out[p * CHANNELS..(p + 1) * CHANNELS]);
        }
    }
    out
}

const LUMA_QUANT: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, 12, 12, 14, 19, 26, 58, 60, 55, 14, 13, 16, 24, 40, 57, 69, 56, 14, 17, 22, 29,
    51, 87, 80, 62, 18, 22, 37, 56, 68, 109, 103, 77, 24, 35, 55, 64, 81, 104, 113, 92, 49, 64, 78, 87, 103, 121,
    120, 101, 72, 92, 95, 98, 112, 100, 103, 99,
];

const CHROMA_QUANT: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Quantization table scaled to `quality` with the usual IJG rule.
fn scaled_table(base: &[u16; 64], quality: u32) -> [f32; 64] {
    let scale = if quality < 50 { 5000 / quality } else { 200 - 2 * quality };
    base.map(|q| ((u32::from(q) * scale + 50) / 100).clamp(1, 255) as f32)
}

struct Dct {
    // basis[u][x] = c(u)/2 · cos((2x+1)uπ/16)
    basis: [[f32; 8]; 8],
}

impl Dct {
    fn new() -> Self {
        let mut basis = [[0.0f32; 8]; 8];
        for (u, row) in basis.iter_mut().enumerate() {
            let cu = if u == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
            for (x, b) in row.iter_mut().enumerate() {
                *b = (cu / 2.0
                    * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos())
                    as f32;
            }
        }
        Self { basis }
    }

    fn forward(&self, block: &[f32; 64]) -> [f32; 64] {
        let mut tmp = [0.0f32; 64];
        for y in 0..8 {
            for u in 0..8 {
                tmp[y * 8 + u] = (0..8).map(|x| self.basis[u][x] * block[y * 8 + x]).sum();
            }
        }
        let mut out = [0.0f32; 64];
        for v in 0..8 {
            for u in 0..8 {
                out[v * 8 + u] = (0..8).map(|y| self.basis[v][y] * tmp[y * 8 + u]).sum();
            }
        }
        out
    }

    fn inverse(&self, coeffs: &[f32; 64]) -> [f32; 64] {
        let mut tmp = [0.0f32; 64];
        for v in 0..8 {
            for x in 0..8 {
                tmp[v * 8 + x] = (0..8).map(|u| self.basis[u][x] * coeffs[v * 8 + u]).sum();
            }
        }
        let mut out = [0.0f32; 64];
        for y in 0..8 {
            for x in 0..8 {
                out[y * 8 + x] = (0..8).map(|v| self.basis[v][y] * tmp[v * 8 + x]).sum();
            }
        }
        out
    }
}

/// Quantizes one plane (values on the 0..255 scale) in place, 8×8 blocks,
/// edge blocks padded by replication. `ph, pw` are multiples of 8.
fn quantize_plane(plane: &mut [f32], ph: usize, pw: usize, table: &[f32; 64], dct: &Dct) {
    for by in (0..ph).step_by(8) {
        for bx in (0..pw).step_by(8) {
            let mut block = [0.0f32; 64];
            for y in 0..8 {
                for x in 0..8 {
                    block[y * 8 + x] = plane[(by + y) * pw + bx + x] - 128.0;
                }
            }
            let mut coeffs = dct.forward(&block);
            for (c, q) in coeffs.iter_mut().zip(table) {
                *c = (*c / q).round() * q;
            }
            let back = dct.inverse(&coeffs);
            for y in 0..8 {
                for x in 0..8 {
                    plane[(by + y) * pw + bx + x] = back[y * 8 + x] + 128.0;
                }
            }
        }
    }
}

/// Baseline JPEG round trip without entropy coding: 8-bit RGB → YCbCr,
/// 4:2:0 chroma subsampling, 8×8 DCT, quantization by the standard tables
/// scaled to `quality` (1..=100), then the inverse path back to 8-bit RGB.
pub fn jpeg_roundtrip(x: &ImageTensor, quality: u32) -> Result<ImageTensor> {
    if !(1..=100).contains(&quality) {
        return Err(Error::Config(format!("jpeg quality must be in 1..=100, got {quality}")));
    }
    let (h, w) = x.dims();
    let dct = Dct::new();
    // luma padded to 16 so the subsampled chroma planes are multiples of 8
    let (ph, pw) = (h.div_ceil(16) * 16, w.div_ceil(16) * 16);
    let (ch_h, ch_w) = (ph / 2, pw / 2);
    let mut luma = vec![0.0f32; ph * pw];
    let mut cb_full = vec![0.0f32; ph * pw];
    let mut cr_full = vec![0.0f32; ph * pw];
    for y in 0..ph {
        for xx in 0..pw {
            let [r, g, b] = x
                .pixel(y.min(h - 1), xx.min(w - 1))
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round());
            let i = y * pw + xx;
            luma[i] = 0.299 * r + 0.587 * g + 0.114 * b;
            cb_full[i] = -0.168_736 * r - 0.331_264 * g + 0.5 * b + 128.0;
            cr_full[i] = 0.5 * r - 0.418_688 * g - 0.081_312 * b + 128.0;
        }
    }
    let subsample = |full: &[f32]| -> Vec<f32> {
        (0..ch_h * ch_w)
            .map(|i| {
                let (y, xx) = (2 * (i / ch_w), 2 * (i % ch_w));
                (full[y * pw + xx] + full[y * pw + xx + 1] + full[(y + 1) * pw + xx] + full[(y + 1) * pw + xx + 1])
                    / 4.0
            })
            .collect()
    };
    let (mut cb, mut cr) = (subsample(&cb_full), subsample(&cr_full));
    let (lt, ct) = (scaled_table(&LUMA_QUANT, quality), scaled_table(&CHROMA_QUANT, quality));
    quantize_plane(&mut luma, ph, pw, &lt, &dct);
    quantize_plane(&mut cb, ch_h, ch_w, &ct, &dct);
    quantize_plane(&mut cr, ch_h, ch_w, &ct, &dct);

    let mut data = Vec::with_capacity(h * w * CHANNELS);
    for y in 0..h {
        for xx in 0..w {
            let yv = luma[y * pw + xx];
            let c = (y / 2) * ch_w + xx / 2;
            let (cbv, crv) = (cb[c] - 128.0, cr[c] - 128.0);
            let rgb = [
                yv + 1.402 * crv,
                yv - 0.344_136 * cbv - 0.714_136 * crv,
                yv + 1.772 * cbv,
            ];
            data.extend(rgb.map(|v| v.round().clamp(0.0, 255.0) / 255.0));
        }
    }
    ImageTensor::new(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dct_round_trips() {
        let dct = Dct::new();
        let block: [f32; 64] = std::array::from_fn(|i| ((i * 37) % 255) as f32 - 128.0);
        let back = dct.inverse(&dct.forward(&block));
        for (a, b) in block.iter().zip(&back) {
            assert!((a - b).abs() < 1e-3);
        }
        // DC of a constant block is 8 × value
        let flat = dct.forward(&[10.0; 64]);
        assert!((flat[0] - 80.0).abs() < 1e-4);
        assert!(flat[1..].iter().all(|c| c.abs() < 1e-4));
    }

    #[test]
    fn quality_scaling_follows_ijg_rule() {
        assert_eq!(scaled_table(&LUMA_QUANT, 50)[0], 16.0);
        assert_eq!(scaled_table(&LUMA_QUANT, 100)[0], 1.0);
        assert_eq!(scaled_table(&LUMA_QUANT, 25)[0], 32.0);
        assert_eq!(scaled_table(&CHROMA_QUANT, 1)[63], 255.0);
    }

    #[test]
    fn flat_gray_survives_and_bad_quality_rejected() {
        let img = ImageTensor::filled(20, 13, [0.5, 0.5, 0.5]);
        let out = jpeg_roundtrip(&img, 40).unwrap();
        assert!(out.max_abs_diff(&img) <= 1.5 / 255.0);
        assert!(matches!(jpeg_roundtrip(&img, 0), Err(Error::Config(_))));
        assert!(matches!(jpeg_roundtrip(&img, 101), Err(Error::Config(_))));
    }
}
