use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{luma, ImageTensor, CHANNELS};
use crate::rng::{stream, stream_rng, StreamRng};

/// Random view family: resized crop, horizontal flip, color jitter and
/// grayscale, applied in that order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationSpec {
    /// Range of the crop's area as a fraction of the image, within `(0, 1]`.
    pub crop_fraction: (f32, f32),
    pub flip_probability: f32,
    /// Brightness, contrast and saturation factors are drawn from
    /// `[1 − s, 1 + s]`.
    pub color_strength: f32,
    pub grayscale_probability: f32,
    pub seed: u64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            crop_fraction: (0.5, 1.0),
            flip_probability: 0.5,
            color_strength: 0.4,
            grayscale_probability: 0.2,
            seed: 0,
        }
    }
}

impl AugmentationSpec {
    /// The identity family: full crop, no flip, no color change.
    pub fn identity() -> Self {
        Self {
            crop_fraction: (1.0, 1.0),
            flip_probability: 0.0,
            color_strength: 0.0,
            grayscale_probability: 0.0,
            seed: 0,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_fraction;
        let prob = |p: f32| (0.0..=1.0).contains(&p);
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!(
                "crop fraction range must satisfy 0 < lo <= hi <= 1, got ({lo}, {hi})"
            )));
        }
        if !prob(self.flip_probability) || !prob(self.grayscale_probability) {
            return Err(Error::Config("augmentation probabilities must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.color_strength) {
            return Err(Error::Config(format!(
                "color strength must lie in [0, 1], got {}",
                self.color_strength
            )));
        }
        Ok(())
    }
}

/// Two independent draws `(T(x), T̃(x))` from the family, same shape as `x`.
pub fn augment_pair(x: &ImageTensor, spec: &AugmentationSpec) -> Result<(ImageTensor, ImageTensor)> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, &[stream::AUGMENT]);
    let a = augment_view(x, spec, &mut rng);
    let b = augment_view(x, spec, &mut rng);
    Ok((a, b))
}

/// One draw from the family using the caller's stream. Every call consumes
/// the same number of random values.
pub fn augment_view(x: &ImageTensor, spec: &AugmentationSpec, rng: &mut StreamRng) -> ImageTensor {
    let (h, w) = x.dims();
    let (lo, hi) = spec.crop_fraction;
    let area = if lo < hi { rng.random_range(lo..=hi) } else { lo };
    let (oy, ox): (f32, f32) = (rng.random(), rng.random());
    let flip = rng.random::<f32>() < spec.flip_probability;
    let s = spec.color_strength;
    let jitter: [f32; 3] = std::array::from_fn(|_| 1.0 + s * rng.random_range(-1.0f32..=1.0));
    let gray = rng.random::<f32>() < spec.grayscale_probability;

    let mut out = if area >= 1.0 || h == 0 || w == 0 {
        x.clone()
    } else {
        let side = area.sqrt();
        let (ch, cw) = (side * h as f32, side * w as f32);
        let (y0, x0) = (oy * (h as f32 - ch), ox * (w as f32 - cw));
        ImageTensor::from_fn(h, w, |y, xx| {
            x.sample_bilinear(
                y0 + (y as f32 + 0.5) * ch / h as f32 - 0.5,
                x0 + (xx as f32 + 0.5) * cw / w as f32 - 0.5,
            )
        })
    };
    if flip {
        let src = out.clone();
        out = ImageTensor::from_fn(h, w, |y, xx| src.pixel(y, w - 1 - xx));
    }
    if s > 0.0 {
        out = color_jitter(out, jitter);
    }
    if gray {
        for px in out.data_mut().chunks_exact_mut(CHANNELS) {
            let g = luma([px[0], px[1], px[2]]);
            px.fill(g);
        }
    }
    out
}

fn color_jitter(x: ImageTensor, [brightness, contrast, saturation]: [f32; 3]) -> ImageTensor {
    let mut x = x.map(|v| v * brightness).clamp01();
    let pixels = (x.data().len() / CHANNELS).max(1) as f32;
    let mean = x
        .data()
        .chunks_exact(CHANNELS)
        .map(|p| luma([p[0], p[1], p[2]]))
        .sum::<f32>()
        / pixels;
    x = x.map(|v| (v - mean) * contrast + mean).clamp01();
    for px in x.data_mut().chunks_exact_mut(CHANNELS) {
        let g = luma([px[0], px[1], px[2]]);
        for v in px.iter_mut() {
            *v = (g + (*v - g) * saturation).clamp(0.0, 1.0);
        }
    }
    x
}
