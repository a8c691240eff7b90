use rand::Rng;

use super::filters::{self, Planes};
use crate::image::{ImageTensor, CHANNELS};
use crate::rng::StreamRng;

fn planes(x: &ImageTensor) -> Planes<'_> {
    Planes {
        data: x.data(),
        h: x.height(),
        w: x.width(),
        c: CHANNELS,
    }
}

pub(super) fn gaussian(x: &ImageTensor, sigma: f32) -> Vec<f32> {
    filters::gaussian_blur(planes(x), sigma)
}

/// Anti-aliased disk kernel: each tap weighted by its approximate coverage
/// `clamp(r + 0.5 − distance, 0, 1)`.
pub(super) fn defocus(x: &ImageTensor, radius: f32) -> Vec<f32> {
    let half = (radius + 0.5).ceil() as usize;
    let side = 2 * half + 1;
    let mut kernel: Vec<f32> = (0..side * side)
        .map(|i| {
            let dy = (i / side) as f32 - half as f32;
            let dx = (i % side) as f32 - half as f32;
            (radius + 0.5 - (dy * dy + dx * dx).sqrt()).clamp(0.0, 1.0)
        })
        .collect();
    let total: f32 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    filters::convolve2d(planes(x), &kernel, half)
}

/// Gaussian blur, then `iterations` sweeps of local pixel swaps within
/// `max_delta`, then a second blur.
pub(super) fn glass(
    x: &ImageTensor,
    sigma: f32,
    max_delta: f32,
    iterations: u32,
    rng: &mut StreamRng,
) -> Vec<f32> {
    let (h, w) = x.dims();
    let mut data = filters::gaussian_blur(planes(x), sigma);
    let delta = (max_delta.round() as usize).max(1).min((h.min(w) - 1) / 2);
    let d = delta as i64;
    for _ in 0..iterations {
        for y in (delta..h - delta).rev() {
            for xx in (delta..w - delta).rev() {
                let ny = (y as i64 + rng.random_range(-d..=d)) as usize;
                let nx = (xx as i64 + rng.random_range(-d..=d)) as usize;
                for ch in 0..CHANNELS {
                    data.swap((y * w + xx) * CHANNELS + ch, (ny * w + nx) * CHANNELS + ch);
                }
            }
        }
    }
    filters::gaussian_blur(Planes { data: &data, h, w, c: CHANNELS }, sigma)
}

/// Motion blur along a random direction within 45° of horizontal.
pub(super) fn motion(x: &ImageTensor, sigma: f32, rng: &mut StreamRng) -> Vec<f32> {
    let angle = rng.random_range(-std::f32::consts::FRAC_PI_4..=std::f32::consts::FRAC_PI_4);
    filters::motion_blur(planes(x), sigma, angle)
}

/// Mean of `steps` centred zooms with factors spaced linearly in
/// `[1, max_zoom]`.
pub(super) fn zoom(x: &ImageTensor, max_zoom: f32, steps: u32) -> Vec<f32> {
    let (h, w) = x.dims();
    let src = planes(x);
    let (cy, cx) = ((h - 1) as f32 / 2.0, (w - 1) as f32 / 2.0);
    let mut acc = vec![0.0f32; x.data().len()];
    let mut px = [0.0f32; CHANNELS];
    let steps = steps.max(1);
    for s in 0..steps {
        let z = if steps == 1 {
            max_zoom
        } else {
            1.0 + (max_zoom - 1.0) * s as f32 / (steps - 1) as f32
        };
        for y in 0..h {
            for xx in 0..w {
                src.sample(cy + (y as f32 - cy) / z, cx + (xx as f32 - cx) / z, &mut px);
                let o = &mut acc[(y * w + xx) * CHANNELS..(y * w + xx + 1) * CHANNELS];
                for (a, v) in o.iter_mut().zip(&px) {
                    *a += v;
                }
            }
        }
    }
    acc.iter_mut().for_each(|a| *a /= steps as f32);
    acc
}
