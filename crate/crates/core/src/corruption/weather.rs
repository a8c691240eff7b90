use rand::Rng;
use rand_distr::StandardNormal;

use super::filters::{self, hsv_to_rgb, rgb_to_hsv, Planes};
use super::plasma::{diamond_square, normalize, plasma_side, Heightmap};
use crate::error::Result;
use crate::image::{luma, ImageTensor, CHANNELS};
use crate::rng::StreamRng;

fn plasma_for(x: &ImageTensor, roughness: f32, rng: &mut StreamRng) -> Result<Heightmap> {
    let (h, w) = x.dims();
    diamond_square(plasma_side(h.max(w)), roughness, rng.random())
}

/// Adds a fractal haze, then rescales so the brightest input stays in range.
pub(super) fn fog(x: &ImageTensor, strength: f32, roughness: f32, rng: &mut StreamRng) -> Result<Vec<f32>> {
    let field = plasma_for(x, roughness, rng)?;
    let max = x.data().iter().cloned().fold(0.0f32, f32::max);
    let w = x.width();
    Ok(x.data()
        .chunks_exact(CHANNELS)
        .enumerate()
        .flat_map(|(p, px)| {
            let haze = strength * field.at(p / w, p % w);
            px.iter().map(move |&v| (v + haze) * max / (max + strength)).collect::<Vec<_>>()
        })
        .collect())
}

/// Procedural ice crystals: ridges of two plasma fields at different
/// frequencies, tinted pale blue and blended over the image.
pub(super) fn frost(
    x: &ImageTensor,
    image_weight: f32,
    frost_weight: f32,
    roughness: f32,
    rng: &mut StreamRng,
) -> Result<Vec<f32>> {
    let coarse = plasma_for(x, roughness, rng)?;
    let fine = plasma_for(x, roughness, rng)?;
    let w = x.width();
    let ridge = |f: f32, p: i32| (1.0 - (2.0 * f - 1.0).abs()).powi(p);
    const TINT: [f32; 3] = [0.86, 0.92, 1.0];
    Ok(x.data()
        .chunks_exact(CHANNELS)
        .enumerate()
        .flat_map(|(p, px)| {
            let (y, xx) = (p / w, p % w);
            let f2 = fine.at((2 * y) % fine.size, (2 * xx) % fine.size);
            let crystal = 0.6 * ridge(coarse.at(y, xx), 6) + 0.4 * ridge(f2, 3);
            let ice = 0.3 + 0.7 * crystal;
            (0..CHANNELS)
                .map(move |ch| image_weight * px[ch] + frost_weight * ice * TINT[ch])
                .collect::<Vec<_>>()
        })
        .collect())
}

pub(super) fn brightness(x: &ImageTensor, shift: f32) -> Vec<f32> {
    x.data()
        .chunks_exact(CHANNELS)
        .flat_map(|px| {
            let [h, s, v] = rgb_to_hsv([px[0], px[1], px[2]]);
            hsv_to_rgb([h, s, (v + shift).clamp(0.0, 1.0)])
        })
        .collect()
}

/// `[mean, std, zoom, threshold, blur_sigma, blend]`: a thresholded
/// Gaussian layer, magnified by `zoom`, streaked by motion blur, then
/// composited over a whitened image together with its 180° rotation.
pub(super) fn snow(x: &ImageTensor, p: [f32; 6], rng: &mut StreamRng) -> Vec<f32> {
    let [mean, std, zoom, threshold, blur_sigma, blend] = p;
    let (h, w) = x.dims();
    let (lh, lw) = (
        ((h as f32 / zoom).ceil() as usize).max(1),
        ((w as f32 / zoom).ceil() as usize).max(1),
    );
    let layer: Vec<f32> = (0..lh * lw)
        .map(|_| {
            let z: f32 = rng.sample(StandardNormal);
            mean + std * z
        })
        .collect();
    let mut layer = filters::resize_bilinear(Planes { data: &layer, h: lh, w: lw, c: 1 }, h, w);
    layer.iter_mut().for_each(|v| {
        if *v < threshold {
            *v = 0.0;
        }
    });
    let angle = rng.random_range(-135.0f32..=-45.0).to_radians();
    let flakes: Vec<f32> = filters::motion_blur(Planes { data: &layer, h, w, c: 1 }, blur_sigma, angle)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    let n = h * w;
    x.data()
        .chunks_exact(CHANNELS)
        .enumerate()
        .flat_map(|(p, px)| {
            let lift = luma([px[0], px[1], px[2]]) * 1.5 + 0.5;
            let snow = flakes[p] + flakes[n - 1 - p];
            px.iter()
                .map(move |&v| blend * v + (1.0 - blend) * v.max(lift) + snow)
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Droplets where a smoothed plasma field exceeds `threshold`; covered
/// pixels are blurred and tinted with strength `opacity`.
pub(super) fn spatter(
    x: &ImageTensor,
    threshold: f32,
    opacity: f32,
    roughness: f32,
    scale: f32,
    rng: &mut StreamRng,
) -> Result<Vec<f32>> {
    let (h, w) = x.dims();
    let field = plasma_for(x, roughness, rng)?;
    let crop: Vec<f32> = (0..h * w).map(|p| field.at(p / w, p % w)).collect();
    let mut smooth = filters::gaussian_blur(Planes { data: &crop, h, w, c: 1 }, scale.max(0.5));
    normalize(&mut smooth);
    let blurred = filters::gaussian_blur(
        Planes {
            data: x.data(),
            h,
            w,
            c: CHANNELS,
        },
        1.5 * scale.max(0.5),
    );
    const TINT: [f32; 3] = [0.55, 0.6, 0.7];
    Ok(x.data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let m = opacity * ((smooth[i / CHANNELS] - threshold) / 0.06).clamp(0.0, 1.0);
            let drop = 0.5 * blurred[i] + 0.5 * TINT[i % CHANNELS];
            v * (1.0 - m) + m * drop
        })
        .collect())
}
