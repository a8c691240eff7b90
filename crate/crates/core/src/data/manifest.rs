use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{DataError, Error, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";

/// List of `(relative path, label)` pairs with the class table and the
/// image shape every entry must decode to.
///
/// On disk this is a CSV file with a `path,label` header. Comment lines
/// before it carry the metadata:
///
/// ```text
/// # classes: circle,square,triangle,cross
/// # shape: 32x32
/// path,label
/// images/00000.png,0
/// ```
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<(PathBuf, usize)>,
    pub class_names: Vec<String>,
    pub height: usize,
    pub width: usize,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut class_names = None;
        let mut shape = None;
        for (i, line) in text.lines().enumerate() {
            let Some(comment) = line.trim_start().strip_prefix('#') else {
                continue;
            };
            let err = |message: String| DataError::Manifest { line: i + 1, message };
            if let Some((key, value)) = comment.split_once(':') {
                match key.trim() {
                    "classes" => {
                        let names: Vec<String> = value.split(',').map(|s| s.trim().to_string()).collect();
                        if names.iter().any(String::is_empty) {
                            return Err(err("empty class name".into()).into());
                        }
                        class_names = Some(names);
                    }
                    "shape" => {
                        let parsed = value
                            .trim()
                            .split_once('x')
                            .and_then(|(h, w)| Some((h.trim().parse().ok()?, w.trim().parse().ok()?)));
                        shape = Some(parsed.ok_or_else(|| err(format!("bad shape {:?}", value.trim())))?);
                    }
                    _ => {}
                }
            }
        }
        let class_names = class_names.ok_or(DataError::Manifest {
            line: 0,
            message: "missing '# classes:' header".into(),
        })?;
        let (height, width) = shape.ok_or(DataError::Manifest {
            line: 0,
            message: "missing '# shape: HxW' header".into(),
        })?;

        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| csv_error(&e, 1))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["path", "label"] {
            return Err(DataError::Manifest {
                line: 1,
                message: format!("expected header 'path,label', found {:?}", headers.iter().collect::<Vec<_>>()),
            }
            .into());
        }
        let mut entries = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| csv_error(&e, 0))?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            let (Some(path), Some(label)) = (record.get(0), record.get(1)) else {
                return Err(DataError::Manifest { line, message: "expected two fields".into() }.into());
            };
            let label: usize = label.parse().map_err(|_| DataError::Manifest {
                line,
                message: format!("label {label:?} is not a non-negative integer"),
            })?;
            if label >= class_names.len() {
                return Err(DataError::LabelOverflow {
                    line,
                    label,
                    classes: class_names.len(),
                }
                .into());
            }
            entries.push((PathBuf::from(path), label));
        }
        Ok(Self {
            entries,
            class_names,
            height,
            width,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_csv(&self) -> String {
        let mut out = Vec::new();
        writeln!(out, "# classes: {}", self.class_names.join(",")).unwrap();
        writeln!(out, "# shape: {}x{}", self.height, self.width).unwrap();
        let mut writer = csv::Writer::from_writer(&mut out);
        writer.write_record(["path", "label"]).unwrap();
        for (path, label) in &self.entries {
            writer
                .write_record([path.to_string_lossy().as_ref(), &label.to_string()])
                .unwrap();
        }
        drop(writer);
        String::from_utf8(out).expect("manifest is utf-8")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn csv_error(e: &csv::Error, fallback_line: usize) -> Error {
    let line = e.position().map_or(fallback_line, |p| p.line() as usize);
    DataError::Manifest {
        line,
        message: e.to_string(),
    }
    .into()
}
