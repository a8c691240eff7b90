//! Labeled image datasets on disk and the procedural shapes generator.

mod manifest;
mod synthetic;

use std::path::{Path, PathBuf};

use crate::error::{DataError, Error, Result};
use crate::image::ImageTensor;

pub use manifest::{DatasetManifest, MANIFEST_FILE};
pub use synthetic::{gen_synthetic, SHAPE_NAMES};

/// Images with labels, all of one shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<ImageTensor>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// `(height, width)` of the first image, `(0, 0)` when empty.
    pub fn dims(&self) -> (usize, usize) {
        self.images.first().map_or((0, 0), ImageTensor::dims)
    }

    /// Images and labels at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }

    /// Same labels with replaced images.
    pub fn with_images(&self, images: Vec<ImageTensor>) -> Result<Dataset> {
        if images.len() != self.len() {
            return Err(Error::dim("dataset images", &[self.len()], &[images.len()]));
        }
        Ok(Dataset {
            images,
            labels: self.labels.clone(),
            class_names: self.class_names.clone(),
        })
    }
}

/// Reads an 8-bit RGB PNG or binary PPM into `[0, 1]` values (`byte / 255`).
pub fn read_image(path: &Path) -> Result<ImageTensor> {
    if !path.is_file() {
        return Err(DataError::MissingFile(path.to_path_buf()).into());
    }
    let decoded = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| DataError::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = decoded.dimensions();
    let data = decoded.into_raw().into_iter().map(|b| f32::from(b) / 255.0).collect();
    ImageTensor::new(h as usize, w as usize, data)
}

/// Writes an image as 8-bit RGB PNG, rounding each value to the nearest byte.
pub fn write_png(path: &Path, img: &ImageTensor) -> Result<()> {
    let bytes: Vec<u8> = img.data().iter().map(|&v| to_byte(v)).collect();
    image::save_buffer(path, &bytes, img.width() as u32, img.height() as u32, image::ColorType::Rgb8)
        .map_err(|e| DataError::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    Ok(())
}

#[inline]
pub fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Loads every manifest entry relative to `root`, preserving order.
pub fn load_dataset(root: &Path, manifest: &DatasetManifest) -> Result<Dataset> {
    let mut images = Vec::with_capacity(manifest.len());
    for (rel, _) in &manifest.entries {
        let path = root.join(rel);
        let img = read_image(&path)?;
        if img.dims() != (manifest.height, manifest.width) {
            return Err(DataError::Shape {
                path,
                expected_h: manifest.height,
                expected_w: manifest.width,
                actual_h: img.height(),
                actual_w: img.width(),
            }
            .into());
        }
        images.push(img);
    }
    Ok(Dataset {
        images,
        labels: manifest.entries.iter().map(|&(_, l)| l).collect(),
        class_names: manifest.class_names.clone(),
    })
}

/// Loads `dir/manifest.csv` and the images it lists.
pub fn load_dataset_dir(dir: &Path) -> Result<Dataset> {
    let manifest = DatasetManifest::load(&dir.join(MANIFEST_FILE))?;
    load_dataset(dir, &manifest)
}

/// Writes PNGs under `dir/images/` plus `dir/manifest.csv`.
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<DatasetManifest> {
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let (height, width) = dataset.dims();
    let mut entries = Vec::with_capacity(dataset.len());
    for (i, (img, &label)) in dataset.images.iter().zip(&dataset.labels).enumerate() {
        let rel = PathBuf::from("images").join(format!("{i:05}.png"));
        write_png(&dir.join(&rel), img)?;
        entries.push((rel, label));
    }
    let manifest = DatasetManifest {
        entries,
        class_names: dataset.class_names.clone(),
        height,
        width,
    };
    manifest.save(&dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
