//! Nineteen common image corruptions at five severities, and the random
//! augmentation family used to build contrastive views.
//!
//! Every function here is pure in `(image, spec)`: randomness comes from a
//! stream derived from the spec's seed, so repeated calls, other threads
//! and other processes all produce the same bits.
//!
//! ```
//! use aclkit::corruption::{apply_corruption, CorruptionKind, CorruptionSpec};
//! use aclkit::image::ImageTensor;
//!
//! let img = ImageTensor::from_fn(32, 32, |y, x| [y as f32 / 31.0, x as f32 / 31.0, 0.5]);
//! let spec = CorruptionSpec::new(CorruptionKind::Fog, 3, 7).unwrap();
//! let foggy = apply_corruption(&img, &spec).unwrap();
//! assert_eq!(foggy.dims(), (32, 32));
//! assert!(foggy.in_unit_range());
//! ```

mod augment;
mod blur;
mod digital;
mod filters;
mod noise;
mod plasma;
mod tables;
mod weather;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::rng::{derive_seed, stream, stream_rng};

pub use augment::{augment_pair, augment_view, AugmentationSpec};
pub use digital::{adjust_contrast, jpeg_roundtrip};
pub use plasma::{diamond_square, plasma_side, Heightmap};
pub use tables::{CorruptionParams, REFERENCE_SIDE};

/// Smallest side accepted by the blur family and the elastic transform.
pub const MIN_SPATIAL_SIDE: usize = 8;

pub const SEVERITIES: std::ops::RangeInclusive<u8> = 1..=5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    SpeckleNoise,
    DefocusBlur,
    GlassBlur,
    MotionBlur,
    ZoomBlur,
    GaussianBlur,
    Snow,
    Frost,
    Fog,
    Brightness,
    Spatter,
    Contrast,
    ElasticTransform,
    Pixelate,
    JpegCompression,
    Saturate,
}

/// Coarse family a corruption belongs to, used for report grouping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionGroup {
    Noise,
    Blur,
    Weather,
    Digital,
}

impl CorruptionGroup {
    pub fn label(self) -> &'static str {
        match self {
            Self::Noise => "Noise",
            Self::Blur => "Blur",
            Self::Weather => "Weather",
            Self::Digital => "Digital",
        }
    }
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 19] = [
        Self::GaussianNoise,
        Self::ShotNoise,
        Self::ImpulseNoise,
        Self::SpeckleNoise,
        Self::DefocusBlur,
        Self::GlassBlur,
        Self::MotionBlur,
        Self::ZoomBlur,
        Self::GaussianBlur,
        Self::Snow,
        Self::Frost,
        Self::Fog,
        Self::Brightness,
        Self::Spatter,
        Self::Contrast,
        Self::ElasticTransform,
        Self::Pixelate,
        Self::JpegCompression,
        Self::Saturate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::GaussianNoise => "gaussian_noise",
            Self::ShotNoise => "shot_noise",
            Self::ImpulseNoise => "impulse_noise",
            Self::SpeckleNoise => "speckle_noise",
            Self::DefocusBlur => "defocus_blur",
            Self::GlassBlur => "glass_blur",
            Self::MotionBlur => "motion_blur",
            Self::ZoomBlur => "zoom_blur",
            Self::GaussianBlur => "gaussian_blur",
            Self::Snow => "snow",
            Self::Frost => "frost",
            Self::Fog => "fog",
            Self::Brightness => "brightness",
            Self::Spatter => "spatter",
            Self::Contrast => "contrast",
            Self::ElasticTransform => "elastic_transform",
            Self::Pixelate => "pixelate",
            Self::JpegCompression => "jpeg_compression",
            Self::Saturate => "saturate",
        }
    }

    /// Position in [`CorruptionKind::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn group(self) -> CorruptionGroup {
        use CorruptionKind::*;
        match self {
            GaussianNoise | ShotNoise | ImpulseNoise | SpeckleNoise => CorruptionGroup::Noise,
            DefocusBlur | GlassBlur | MotionBlur | ZoomBlur | GaussianBlur => CorruptionGroup::Blur,
            Snow | Frost | Fog | Brightness | Spatter => CorruptionGroup::Weather,
            Contrast | ElasticTransform | Pixelate | JpegCompression | Saturate => {
                CorruptionGroup::Digital
            }
        }
    }

    /// Whether the kind resamples neighbourhoods and so needs
    /// [`MIN_SPATIAL_SIDE`] pixels per side.
    pub fn is_spatial(self) -> bool {
        self.group() == CorruptionGroup::Blur || self == Self::ElasticTransform
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown corruption kind {s:?}")))
    }
}

fn check_severity(severity: u8) -> Result<u8> {
    if SEVERITIES.contains(&severity) {
        Ok(severity)
    } else {
        Err(Error::Config(format!("severity must be in 1..=5, got {severity}")))
    }
}

/// A corruption kind at a validated severity, with the seed of its random
/// stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct CorruptionSpec {
    kind: CorruptionKind,
    severity: u8,
    seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    kind: CorruptionKind,
    severity: u8,
    #[serde(default)]
    seed: u64,
}

impl TryFrom<RawSpec> for CorruptionSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        Self::new(raw.kind, raw.severity, raw.seed)
    }
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8, seed: u64) -> Result<Self> {
        Ok(Self {
            kind,
            severity: check_severity(severity)?,
            seed,
        })
    }

    pub fn kind(&self) -> CorruptionKind {
        self.kind
    }

    pub fn severity(&self) -> u8 {
        self.severity
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn params(&self) -> CorruptionParams {
        tables::params(self.kind, self.severity)
    }
}

/// Parameters used for `kind` at `severity`, stated at the reference side.
pub fn severity_params(kind: CorruptionKind, severity: u8) -> Result<CorruptionParams> {
    Ok(tables::params(kind, check_severity(severity)?))
}

/// All severity tables as pretty-printed JSON, keyed by kind name.
pub fn severity_tables_json() -> String {
    #[derive(Serialize)]
    struct Dump {
        reference_side: f32,
        spatial_scaling: &'static str,
        tables: BTreeMap<&'static str, Vec<CorruptionParams>>,
    }
    let tables = CorruptionKind::ALL
        .iter()
        .map(|&k| (k.name(), SEVERITIES.map(|s| tables::params(k, s)).collect()))
        .collect();
    let dump = Dump {
        reference_side: REFERENCE_SIDE,
        spatial_scaling: "blur widths, displacements and droplet scales are multiplied by min(height, width) / reference_side",
        tables,
    };
    serde_json::to_string_pretty(&dump).expect("severity tables serialize")
}

/// Applies one corruption. Output has the input's shape and lies in `[0, 1]`.
pub fn apply_corruption(x: &ImageTensor, spec: &CorruptionSpec) -> Result<ImageTensor> {
    let (h, w) = x.dims();
    if spec.kind.is_spatial() && h.min(w) < MIN_SPATIAL_SIDE {
        return Err(Error::InputTooSmall {
            kind: spec.kind.name(),
            height: h,
            width: w,
            min: MIN_SPATIAL_SIDE,
        });
    }
    if h == 0 || w == 0 {
        return Ok(x.clone());
    }
    let scale = h.min(w) as f32 / REFERENCE_SIDE;
    let mut rng = stream_rng(spec.seed, &[stream::CORRUPTION, spec.kind.index() as u64]);
    use CorruptionParams as P;
    let data = match spec.params() {
        P::GaussianNoise { sigma } => noise::gaussian(x, sigma, &mut rng),
        P::ShotNoise { photons } => noise::shot(x, photons, &mut rng),
        P::ImpulseNoise { amount } => noise::impulse(x, amount, &mut rng),
        P::SpeckleNoise { sigma } => noise::speckle(x, sigma, &mut rng),
        P::DefocusBlur { radius } => blur::defocus(x, radius * scale),
        P::GlassBlur {
            sigma,
            max_delta,
            iterations,
        } => blur::glass(x, sigma * scale, max_delta * scale, iterations, &mut rng),
        P::MotionBlur { sigma } => blur::motion(x, sigma * scale, &mut rng),
        P::ZoomBlur { max_zoom, steps } => blur::zoom(x, max_zoom, steps),
        P::GaussianBlur { sigma } => blur::gaussian(x, sigma * scale),
        P::Snow {
            mean,
            std,
            zoom,
            threshold,
            blur_sigma,
            blend,
        } => weather::snow(x, [mean, std, zoom, threshold, blur_sigma * scale, blend], &mut rng),
        P::Frost {
            image_weight,
            frost_weight,
            roughness,
        } => weather::frost(x, image_weight, frost_weight, roughness, &mut rng)?,
        P::Fog {
            strength,
            roughness,
        } => weather::fog(x, strength, roughness, &mut rng)?,
        P::Brightness { shift } => weather::brightness(x, shift),
        P::Spatter {
            threshold,
            opacity,
            roughness,
        } => weather::spatter(x, threshold, opacity, roughness, scale, &mut rng)?,
        P::Contrast { factor } => digital::adjust_contrast(x, factor).into_data(),
        P::ElasticTransform { alpha, sigma } => {
            digital::elastic(x, alpha * scale, sigma * scale, &mut rng)
        }
        P::Pixelate { factor } => digital::pixelate(x, factor),
        P::JpegCompression { quality } => digital::jpeg_roundtrip(x, quality)?.into_data(),
        P::Saturate { scale: s, shift } => digital::saturate(x, s, shift),
    };
    Ok(ImageTensor::new(h, w, data)?.clamp01())
}

/// Corrupts every image with `kind` at `severity`, image `i` using seed
/// `derive_seed(base_seed, [i])`. Runs on the rayon pool; the result does
/// not depend on the number of threads.
pub fn corrupt_dataset(
    images: &[ImageTensor],
    kind: CorruptionKind,
    severity: u8,
    base_seed: u64,
) -> Result<Vec<ImageTensor>> {
    if images.is_empty() {
        return Err(Error::Contract("cannot corrupt an empty image list".into()));
    }
    let spec = CorruptionSpec::new(kind, severity, 0)?;
    images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            apply_corruption(img, &spec.with_seed(image_seed(base_seed, i))).map_err(|e| {
                Error::AtIndex {
                    index: i,
                    source: Box::new(e),
                }
            })
        })
        .collect()
}

/// Seed used for image `index` by [`corrupt_dataset`].
pub fn image_seed(base_seed: u64, index: usize) -> u64 {
    derive_seed(base_seed, &[index as u64])
}
