use std::path::Path;

use aclkit::data::{
    gen_synthetic, load_dataset, load_dataset_dir, read_image, save_dataset, to_byte, DatasetManifest,
};
use aclkit::error::DataError;
use aclkit::Error;

fn write_ppm(path: &Path, h: usize, w: usize, bytes: &[u8]) {
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(bytes);
    std::fs::write(path, out).unwrap();
}

#[test]
fn ppm_and_png_decode_to_bytes_over_255() {
    let dir = tempfile::tempdir().unwrap();
    let bytes: Vec<u8> = (0..4 * 3 * 3).map(|i| (i * 7 % 256) as u8).collect();
    write_ppm(&dir.path().join("a.ppm"), 4, 3, &bytes);
    image::save_buffer(dir.path().join("b.png"), &bytes, 3, 4, image::ColorType::Rgb8).unwrap();
    for name in ["a.ppm", "b.png"] {
        let img = read_image(&dir.path().join(name)).unwrap();
        assert_eq!(img.dims(), (4, 3));
        let want: Vec<f32> = bytes.iter().map(|&b| b as f32 / 255.0).collect();
        assert_eq!(img.data(), want.as_slice(), "{name}");
    }
}

#[test]
fn two_line_manifest_loads_in_order() {
    let dir = tempfile::tempdir().unwrap();
    write_ppm(&dir.path().join("x.ppm"), 2, 2, &[10; 12]);
    write_ppm(&dir.path().join("y.ppm"), 2, 2, &[200; 12]);
    let manifest = DatasetManifest::parse("# classes: cat,dog\n# shape: 2x2\npath,label\ny.ppm,1\nx.ppm,0\n").unwrap();
    let data = load_dataset(dir.path(), &manifest).unwrap();
    assert_eq!(data.len(), 2);
    assert_eq!(data.labels, [1, 0]);
    assert_eq!(data.images[0].data()[0], 200.0 / 255.0);
    assert_eq!(data.images[1].data()[0], 10.0 / 255.0);
}

#[test]
fn load_errors_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    write_ppm(&dir.path().join("x.ppm"), 2, 3, &[10; 18]);
    let missing = DatasetManifest::parse("# classes: a\n# shape: 2x3\npath,label\nx.ppm,0\ngone.png,0\n").unwrap();
    match load_dataset(dir.path(), &missing) {
        Err(Error::Data(DataError::MissingFile(p))) => assert!(p.ends_with("gone.png")),
        other => panic!("unexpected {other:?}"),
    }
    let wrong_shape = DatasetManifest::parse("# classes: a\n# shape: 3x3\npath,label\nx.ppm,0\n").unwrap();
    match load_dataset(dir.path(), &wrong_shape) {
        Err(Error::Data(DataError::Shape { expected_h: 3, expected_w: 3, actual_h: 2, actual_w: 3, .. })) => {}
        other => panic!("unexpected {other:?}"),
    }
    std::fs::write(dir.path().join("junk.png"), b"not an image").unwrap();
    let junk = DatasetManifest::parse("# classes: a\n# shape: 2x3\npath,label\njunk.png,0\n").unwrap();
    assert!(matches!(load_dataset(dir.path(), &junk), Err(Error::Data(DataError::Decode { .. }))));
}

#[test]
fn synthetic_generation_is_deterministic_and_balanced() {
    let a = gen_synthetic(4, 6, 24, 3).unwrap();
    let b = gen_synthetic(4, 6, 24, 3).unwrap();
    let c = gen_synthetic(4, 6, 24, 4).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.images, c.images);
    assert_eq!(a.len(), 24);
    for class in 0..4 {
        assert_eq!(a.labels.iter().filter(|&&l| l == class).count(), 6);
    }
    assert_eq!(a.class_names, ["circle", "square", "triangle", "cross"]);
    assert!(a.images.iter().all(|i| i.dims() == (24, 24) && i.in_unit_range()));
}

#[test]
fn saved_dataset_reloads_at_byte_precision() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_synthetic(3, 2, 16, 8).unwrap();
    let manifest = save_dataset(dir.path(), &data).unwrap();
    assert_eq!(manifest.len(), 6);
    let back = load_dataset_dir(dir.path()).unwrap();
    assert_eq!(back.labels, data.labels);
    assert_eq!(back.class_names, data.class_names);
    for (x, y) in data.images.iter().zip(&back.images) {
        let quantized: Vec<f32> = x.data().iter().map(|&v| to_byte(v) as f32 / 255.0).collect();
        assert_eq!(y.data(), quantized.as_slice());
    }
}
