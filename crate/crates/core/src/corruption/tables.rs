//! Numeric severity schedules.
//!
//! Values are stated for a 32-pixel reference side. Spatial quantities
//! (blur widths, displacement lengths) are multiplied by `min(H, W) / 32`
//! when applied; intensities, factors and quality levels are used as is.

use serde::Serialize;

use super::CorruptionKind;

/// Side length the spatial entries of the tables refer to.
pub const REFERENCE_SIDE: f32 = 32.0;

/// Full parameterization of one `(kind, severity)` cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorruptionParams {
    GaussianNoise { sigma: f32 },
    ShotNoise { photons: f32 },
    ImpulseNoise { amount: f32 },
    SpeckleNoise { sigma: f32 },
    DefocusBlur { radius: f32 },
    GlassBlur { sigma: f32, max_delta: f32, iterations: u32 },
    MotionBlur { sigma: f32 },
    ZoomBlur { max_zoom: f32, steps: u32 },
    GaussianBlur { sigma: f32 },
    Snow { mean: f32, std: f32, zoom: f32, threshold: f32, blur_sigma: f32, blend: f32 },
    Frost { image_weight: f32, frost_weight: f32, roughness: f32 },
    Fog { strength: f32, roughness: f32 },
    Brightness { shift: f32 },
    Spatter { threshold: f32, opacity: f32, roughness: f32 },
    Contrast { factor: f32 },
    ElasticTransform { alpha: f32, sigma: f32 },
    Pixelate { factor: f32 },
    JpegCompression { quality: u32 },
    Saturate { scale: f32, shift: f32 },
}

/// Severity table entry. `severity` must already be validated to `1..=5`.
pub(crate) fn params(kind: CorruptionKind, severity: u8) -> CorruptionParams {
    use CorruptionKind as K;
    use CorruptionParams as P;
    let i = usize::from(severity - 1);
    let pick = |t: [f32; 5]| t[i];
    match kind {
        K::GaussianNoise => P::GaussianNoise { sigma: pick([0.04, 0.06, 0.08, 0.09, 0.10]) },
        K::ShotNoise => P::ShotNoise { photons: pick([500.0, 250.0, 100.0, 75.0, 50.0]) },
        K::ImpulseNoise => P::ImpulseNoise { amount: pick([0.01, 0.02, 0.03, 0.05, 0.07]) },
        K::SpeckleNoise => P::SpeckleNoise { sigma: pick([0.06, 0.10, 0.12, 0.16, 0.20]) },
        K::DefocusBlur => P::DefocusBlur { radius: pick([0.6, 0.9, 1.2, 1.6, 2.0]) },
        K::GlassBlur => P::GlassBlur {
            sigma: pick([0.4, 0.45, 0.5, 0.55, 0.6]),
            max_delta: pick([1.0, 1.0, 1.0, 1.0, 2.0]),
            iterations: [1, 2, 3, 4, 4][i],
        },
        K::MotionBlur => P::MotionBlur { sigma: pick([1.0, 1.5, 2.0, 2.5, 3.0]) },
        K::ZoomBlur => P::ZoomBlur {
            max_zoom: pick([1.06, 1.11, 1.16, 1.21, 1.26]),
            steps: 7,
        },
        K::GaussianBlur => P::GaussianBlur { sigma: pick([0.4, 0.6, 0.7, 0.8, 1.0]) },
        K::Snow => {
            let [mean, std, zoom, threshold, blur_sigma, blend] = [
                [0.10, 0.20, 1.00, 0.60, 2.0, 0.95],
                [0.10, 0.20, 1.00, 0.50, 2.5, 0.90],
                [0.15, 0.30, 1.75, 0.55, 2.5, 0.90],
                [0.25, 0.30, 2.25, 0.60, 3.0, 0.85],
                [0.30, 0.30, 1.25, 0.65, 4.0, 0.80],
            ][i];
            P::Snow { mean, std, zoom, threshold, blur_sigma, blend }
        }
        K::Frost => {
            let [image_weight, frost_weight] =
                [[1.0, 0.2], [1.0, 0.3], [0.9, 0.4], [0.85, 0.4], [0.75, 0.45]][i];
            P::Frost { image_weight, frost_weight, roughness: 0.65 }
        }
        K::Fog => {
            let [strength, decay] = [[0.2, 3.0], [0.5, 3.0], [0.75, 2.5], [1.0, 2.0], [1.5, 1.75]][i];
            P::Fog { strength, roughness: 1.0 / decay }
        }
        K::Brightness => P::Brightness { shift: pick([0.05, 0.10, 0.15, 0.20, 0.30]) },
        K::Spatter => {
            let [threshold, opacity] =
                [[0.68, 0.4], [0.64, 0.5], [0.60, 0.6], [0.56, 0.7], [0.52, 0.8]][i];
            P::Spatter { threshold, opacity, roughness: 0.6 }
        }
        K::Contrast => P::Contrast { factor: pick([0.75, 0.5, 0.4, 0.3, 0.15]) },
        K::ElasticTransform => P::ElasticTransform {
            alpha: pick([0.4, 0.7, 1.0, 1.3, 1.6]),
            sigma: 3.0,
        },
        K::Pixelate => P::Pixelate { factor: pick([0.95, 0.9, 0.85, 0.75, 0.65]) },
        K::JpegCompression => P::JpegCompression { quality: [80, 65, 58, 50, 40][i] },
        K::Saturate => {
            let [scale, shift] = [[1.5, 0.0], [2.0, 0.0], [3.0, 0.05], [5.0, 0.1], [8.0, 0.2]][i];
            P::Saturate { scale, shift }
        }
    }
}
