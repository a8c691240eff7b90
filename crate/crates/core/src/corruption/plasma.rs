//! Diamond-square fractal height maps.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng, StreamRng};

/// Square height map of side `size`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Heightmap {
    pub size: usize,
    pub data: Vec<f32>,
}

impl Heightmap {
    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.size + x]
    }
}

/// Fractal plasma field of side `size = 2^k + 1`, normalized to `[0, 1]`.
///
/// The four corners are uniform draws. Every diamond and square step
/// averages its neighbours and adds a uniform displacement in
/// `[-a, a]` where `a = roughness^level`, so small roughness leaves little
/// more than the interpolation of the corners.
pub fn diamond_square(size: usize, roughness: f32, seed: u64) -> Result<Heightmap> {
    if size < 3 || !(size - 1).is_power_of_two() {
        return Err(Error::Config(format!("diamond-square size must be 2^k + 1 with k >= 1, got {size}")));
    }
    if !(roughness > 0.0 && roughness <= 1.0) {
        return Err(Error::Config(format!("diamond-square roughness must be in (0, 1], got {roughness}")));
    }
    let mut rng = stream_rng(seed, &[stream::CORRUPTION, 0xD5]);
    let mut data = raw_field(size, roughness, &mut rng);
    normalize(&mut data);
    Ok(Heightmap { size, data })
}

/// Smallest valid diamond-square side covering `extent` pixels.
pub fn plasma_side(extent: usize) -> usize {
    extent.saturating_sub(1).max(2).next_power_of_two() + 1
}

pub(crate) fn raw_field(size: usize, roughness: f32, rng: &mut StreamRng) -> Vec<f32> {
    let mut f = vec![0.0f32; size * size];
    let idx = |y: usize, x: usize| y * size + x;
    let last = size - 1;
    for (y, x) in [(0, 0), (0, last), (last, 0), (last, last)] {
        f[idx(y, x)] = rng.random::<f32>();
    }
    let mut step = last;
    let mut amplitude = 1.0f32;
    while step > 1 {
        let half = step / 2;
        amplitude *= roughness;
        // diamond: centres of squares
        for y in (half..size).step_by(step) {
            for x in (half..size).step_by(step) {
                let avg = (f[idx(y - half, x - half)]
                    + f[idx(y - half, x + half)]
                    + f[idx(y + half, x - half)]
                    + f[idx(y + half, x + half)])
                    / 4.0;
                f[idx(y, x)] = avg + amplitude * rng.random_range(-1.0f32..=1.0);
            }
        }
        // square: edge midpoints, averaging the in-bounds neighbours
        for y in (0..size).step_by(half) {
            let x_start = if (y / half).is_multiple_of(2) { half } else { 0 };
            for x in (x_start..size).step_by(step) {
                let mut sum = 0.0;
                let mut n = 0.0;
                if y >= half {
                    sum += f[idx(y - half, x)];
                    n += 1.0;
                }
                if y + half < size {
                    sum += f[idx(y + half, x)];
                    n += 1.0;
                }
                if x >= half {
                    sum += f[idx(y, x - half)];
                    n += 1.0;
                }
                if x + half < size {
                    sum += f[idx(y, x + half)];
                    n += 1.0;
                }
                f[idx(y, x)] = sum / n + amplitude * rng.random_range(-1.0f32..=1.0);
            }
        }
        step = half;
    }
    f
}

/// Affine rescale to `[0, 1]`; a constant field becomes all zeros.
pub(crate) fn normalize(data: &mut [f32]) {
    let (lo, hi) = data
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    for v in data.iter_mut() {
        *v = if span > 0.0 { ((*v - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
    }
}
