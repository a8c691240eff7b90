use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::image::ImageTensor;
use crate::rng::StreamRng;

// The additive kinds draw one standard variate per value regardless of
// severity, so the deviation from the clean image grows monotonically with
// the severity's scale for a fixed seed.

pub(super) fn gaussian(x: &ImageTensor, sigma: f32, rng: &mut StreamRng) -> Vec<f32> {
    x.data()
        .iter()
        .map(|&v| {
            let z: f32 = rng.sample(StandardNormal);
            v + sigma * z
        })
        .collect()
}

pub(super) fn speckle(x: &ImageTensor, sigma: f32, rng: &mut StreamRng) -> Vec<f32> {
    x.data()
        .iter()
        .map(|&v| {
            let z: f32 = rng.sample(StandardNormal);
            v + v * sigma * z
        })
        .collect()
}

/// Poisson photon counts at `photons` expected photons per unit intensity.
pub(super) fn shot(x: &ImageTensor, photons: f32, rng: &mut StreamRng) -> Vec<f32> {
    x.data()
        .iter()
        .map(|&v| {
            let lambda = f64::from(v.max(0.0) * photons);
            if lambda <= 0.0 {
                return 0.0;
            }
            let count: f64 = Poisson::new(lambda).expect("positive rate").sample(rng);
            count as f32 / photons
        })
        .collect()
}

/// Salt-and-pepper: each value independently replaced by 0 or 1 with
/// probability `amount`.
pub(super) fn impulse(x: &ImageTensor, amount: f32, rng: &mut StreamRng) -> Vec<f32> {
    x.data()
        .iter()
        .map(|&v| {
            let hit: f32 = rng.random();
            let salt: bool = rng.random();
            if hit < amount {
                if salt {
                    1.0
                } else {
                    0.0
                }
            } else {
                v
            }
        })
        .collect()
}
