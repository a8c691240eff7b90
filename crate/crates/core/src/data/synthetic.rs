//! Procedural shape classification data.
//!
//! Each image shows one filled shape over a noisy two-color gradient. The
//! class is the shape; position, size, rotation and colors are random. It
//! serves as the small, learnable stand-in dataset for the training and
//! robustness experiments.

use rand::Rng;
use rand_distr::StandardNormal;

use super::Dataset;
use crate::error::{Error, Result};
use crate::image::{luma, ImageTensor};
use crate::rng::{stream, stream_rng, StreamRng};

pub const SHAPE_NAMES: [&str; 8] = [
    "circle", "square", "triangle", "cross", "ring", "diamond", "star", "bars",
];

const SUPERSAMPLE: usize = 3;
const NOISE_STD: f32 = 0.03;

/// Whether normalized point `(x, y)` (shape radius 1, y down) is inside.
fn inside(class: usize, x: f32, y: f32) -> bool {
    let r = (x * x + y * y).sqrt();
    match class {
        0 => r <= 1.0,
        1 => x.abs().max(y.abs()) <= 0.8,
        2 => {
            // apex up, base at y = 0.7
            y <= 0.7 && y >= -1.0 + 1.9 * x.abs()
        }
        3 => (x.abs() <= 0.3 && y.abs() <= 1.0) || (y.abs() <= 0.3 && x.abs() <= 1.0),
        4 => (0.55..=1.0).contains(&r),
        5 => x.abs() + y.abs() <= 1.0,
        6 => {
            let theta = y.atan2(x);
            r <= 0.45 + 0.55 * (2.5 * theta).cos().abs().powi(3)
        }
        _ => x.abs() <= 0.9 && ((y - 0.45).abs() <= 0.22 || (y + 0.45).abs() <= 0.22),
    }
}

fn random_color(rng: &mut StreamRng) -> [f32; 3] {
    std::array::from_fn(|_| rng.random())
}

fn render(class: usize, size: usize, rng: &mut StreamRng) -> ImageTensor {
    let s = size as f32;
    let radius = rng.random_range(0.22..0.36) * s;
    let cy = rng.random_range(radius..s - radius);
    let cx = rng.random_range(radius..s - radius);
    let angle = rng.random_range(-0.3f32..0.3);
    // a muted background with a gentle two-color gradient
    let bg0 = random_color(rng).map(|c| 0.5 + 0.6 * (c - 0.5));
    let bg1: [f32; 3] = std::array::from_fn(|c| (bg0[c] + rng.random_range(-0.15f32..0.15)).clamp(0.0, 1.0));
    let direction = rng.random_range(0.0..std::f32::consts::TAU);
    let bg_luma = (luma(bg0) + luma(bg1)) / 2.0;
    // foreground must stand out from the background brightness
    let mut fg = random_color(rng);
    for _ in 0..64 {
        if (luma(fg) - bg_luma).abs() >= 0.3 {
            break;
        }
        fg = random_color(rng);
    }
    let (sin, cos) = angle.sin_cos();
    let (dsin, dcos) = direction.sin_cos();
    let mut img = ImageTensor::from_fn(size, size, |y, x| {
        let mut covered = 0usize;
        for sy in 0..SUPERSAMPLE {
            for sx in 0..SUPERSAMPLE {
                let py = y as f32 + (sy as f32 + 0.5) / SUPERSAMPLE as f32 - cy;
                let px = x as f32 + (sx as f32 + 0.5) / SUPERSAMPLE as f32 - cx;
                let (u, v) = ((cos * px + sin * py) / radius, (-sin * px + cos * py) / radius);
                covered += usize::from(inside(class, u, v));
            }
        }
        let t = ((x as f32 / s - 0.5) * dcos + (y as f32 / s - 0.5) * dsin + 0.5).clamp(0.0, 1.0);
        let alpha = covered as f32 / (SUPERSAMPLE * SUPERSAMPLE) as f32;
        std::array::from_fn(|c| {
            let bg = bg0[c] + (bg1[c] - bg0[c]) * t;
            bg + (fg[c] - bg) * alpha
        })
    });
    for v in img.data_mut() {
        let z: f32 = rng.sample(StandardNormal);
        *v += NOISE_STD * z;
    }
    img.clamp01()
}

/// `classes × per_class` images of side `size`, classes interleaved
/// (image `i` has label `i mod classes`). Deterministic in `seed`.
pub fn gen_synthetic(classes: usize, per_class: usize, size: usize, seed: u64) -> Result<Dataset> {
    if !(2..=SHAPE_NAMES.len()).contains(&classes) {
        return Err(Error::Config(format!("synthetic data supports 2..=8 classes, got {classes}")));
    }
    if size < 16 {
        return Err(Error::Config(format!("synthetic image size must be at least 16, got {size}")));
    }
    let n = classes * per_class;
    let images = (0..n)
        .map(|i| render(i % classes, size, &mut stream_rng(seed, &[stream::SYNTHETIC, i as u64])))
        .collect();
    Ok(Dataset {
        images,
        labels: (0..n).map(|i| i % classes).collect(),
        class_names: SHAPE_NAMES[..classes].iter().map(|s| s.to_string()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_are_distinct_on_a_grid() {
        let grid: Vec<Vec<bool>> = (0..8)
            .map(|c| {
                (0..41 * 41)
                    .map(|i| inside(c, (i % 41) as f32 / 20.0 - 1.0, (i / 41) as f32 / 20.0 - 1.0))
                    .collect()
            })
            .collect();
        for a in 0..8 {
            assert!(grid[a].iter().any(|&b| b), "{} empty", SHAPE_NAMES[a]);
            for b in a + 1..8 {
                let diff = grid[a].iter().zip(&grid[b]).filter(|(p, q)| p != q).count();
                assert!(diff > 100, "{} vs {}: {diff}", SHAPE_NAMES[a], SHAPE_NAMES[b]);
            }
        }
    }

    #[test]
    fn rejects_unsupported_parameters() {
        assert!(matches!(gen_synthetic(1, 2, 32, 0), Err(Error::Config(_))));
        assert!(matches!(gen_synthetic(9, 2, 32, 0), Err(Error::Config(_))));
        assert!(matches!(gen_synthetic(4, 2, 15, 0), Err(Error::Config(_))));
    }
}
