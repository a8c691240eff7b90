//! Binary checkpoint format.
//!
//! ```text
//! "CRBT"  u16 version
//! architecture: u32 input_h, u32 input_w, u32 n_conv,
//!               n_conv × (u32 out_channels, u32 kernel, u32 stride, u32 padding),
//!               u32 classes, u32 projector_hidden, u32 projection_dim, u64 seed
//! u32 count, count × parameter record
//! u32 count, count × optimizer-state record (momentum velocities)
//! record: u16 name_len, name (utf-8), u8 rank, rank × u32 dim, f32 payload
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::autodiff::{Layer, Tensor};
use crate::error::{CheckpointError, Error, Result};

use super::{Architecture, ConvLayerSpec, ModelBundle};

pub const MAGIC: &[u8; 4] = b"CRBT";
pub const FORMAT_VERSION: u16 = 1;

/// Upper bound on any single architecture field; rejects garbage before it
/// can drive allocations.
const MAX_DIM: u32 = 1 << 16;

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_record(buf: &mut Vec<u8>, name: &str, tensor: &Tensor<f32>) {
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(tensor.rank() as u8);
    for &d in tensor.shape() {
        put_u32(buf, d);
    }
    for v in tensor.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Parameter and optimizer-state tensors in file order.
fn records(bundle: &ModelBundle<f32>) -> (Vec<(String, &Tensor<f32>)>, Vec<(String, &Tensor<f32>)>) {
    let mut params = Vec::new();
    let mut state = Vec::new();
    for (set_name, set) in bundle.sets() {
        for (name, layer) in set.iter() {
            params.push((format!("{set_name}.{name}.weight"), &layer.weight));
            params.push((format!("{set_name}.{name}.bias"), &layer.bias));
            state.push((format!("{set_name}.{name}.weight.velocity"), &layer.weight_velocity));
            state.push((format!("{set_name}.{name}.bias.velocity"), &layer.bias_velocity));
        }
    }
    (params, state)
}

pub fn write_checkpoint(bundle: &ModelBundle<f32>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(64 + 8 * bundle.num_params());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let a = &bundle.architecture;
    put_u32(&mut buf, a.input_height);
    put_u32(&mut buf, a.input_width);
    put_u32(&mut buf, a.conv_layers.len());
    for c in &a.conv_layers {
        for v in [c.out_channels, c.kernel, c.stride, c.padding] {
            put_u32(&mut buf, v);
        }
    }
    put_u32(&mut buf, a.num_classes);
    put_u32(&mut buf, a.projector_hidden);
    put_u32(&mut buf, a.projection_dim);
    buf.extend_from_slice(&bundle.seed.to_le_bytes());

    let (params, state) = records(bundle);
    for group in [params, state] {
        put_u32(&mut buf, group.len());
        for (name, t) in group {
            put_record(&mut buf, &name, t);
        }
    }
    buf
}

pub fn save_checkpoint(bundle: &ModelBundle<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_checkpoint(bundle)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelBundle<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(read_checkpoint(&bytes)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated(what));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn dim(&mut self, what: &'static str) -> Result<usize, CheckpointError> {
        let v = self.u32(what)?;
        if v > MAX_DIM {
            return Err(CheckpointError::Format(format!("{what} = {v} is implausible")));
        }
        Ok(v as usize)
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    /// Reads one record, insisting on the expected name and shape before
    /// touching the payload.
    fn record(&mut self, name: &str, shape: &[usize]) -> Result<Tensor<f32>, CheckpointError> {
        let len = self.u16("record name length")? as usize;
        let found = self.take(len, "record name")?;
        if found != name.as_bytes() {
            return Err(CheckpointError::Format(format!(
                "expected record {name}, found {}",
                String::from_utf8_lossy(found)
            )));
        }
        let rank = self.u8("record rank")? as usize;
        if rank != shape.len() {
            return Err(CheckpointError::Format(format!(
                "{name}: rank {rank}, expected {}",
                shape.len()
            )));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(self.u32("record dims")? as usize);
        }
        if dims != shape {
            return Err(CheckpointError::Format(format!(
                "{name}: shape {dims:?}, expected {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        let payload = self.take(4 * n, "record payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(Tensor::new(shape.to_vec(), data).expect("validated shape"))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<ModelBundle<f32>, CheckpointError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = cur.take(4, "magic")?.try_into().unwrap();
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = cur.u16("format version")?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let input_height = cur.dim("input height")?;
    let input_width = cur.dim("input width")?;
    let n_conv = cur.dim("convolution count")?;
    let mut conv_layers = Vec::with_capacity(n_conv.min(64));
    for _ in 0..n_conv {
        conv_layers.push(ConvLayerSpec {
            out_channels: cur.dim("conv channels")?,
            kernel: cur.dim("conv kernel")?,
            stride: cur.dim("conv stride")?,
            padding: cur.dim("conv padding")?,
        });
    }
    let architecture = Architecture {
        input_height,
        input_width,
        conv_layers,
        num_classes: cur.dim("class count")?,
        projector_hidden: cur.dim("projector width")?,
        projection_dim: cur.dim("projection dim")?,
    };
    architecture
        .validate()
        .map_err(|e| CheckpointError::Format(format!("architecture: {e}")))?;
    let seed = cur.u64("seed")?;

    let shapes = architecture.layer_shapes();
    let mut loaded: Vec<(usize, Layer<f32>)> = Vec::with_capacity(shapes.len());
    let count = cur.u32("parameter count")? as usize;
    if count != 2 * shapes.len() {
        return Err(CheckpointError::Format(format!(
            "{count} parameter records, expected {}",
            2 * shapes.len()
        )));
    }
    for (i, s) in shapes.iter().enumerate() {
        let w = cur.record(&format!("{}.{}.weight", s.set, s.name), &s.weight)?;
        let b = cur.record(&format!("{}.{}.bias", s.set, s.name), &s.bias)?;
        loaded.push((i, Layer::new(w, b)));
    }
    let count = cur.u32("optimizer state count")? as usize;
    if count != 2 * shapes.len() {
        return Err(CheckpointError::Format(format!(
            "{count} optimizer records, expected {}",
            2 * shapes.len()
        )));
    }
    for (s, (_, layer)) in shapes.iter().zip(loaded.iter_mut()) {
        layer.weight_velocity = cur.record(&format!("{}.{}.weight.velocity", s.set, s.name), &s.weight)?;
        layer.bias_velocity = cur.record(&format!("{}.{}.bias.velocity", s.set, s.name), &s.bias)?;
    }
    if cur.pos != bytes.len() {
        return Err(CheckpointError::Format(format!(
            "{} trailing bytes",
            bytes.len() - cur.pos
        )));
    }

    Ok(ModelBundle::assemble(
        architecture,
        seed,
        loaded.into_iter().map(|(_, l)| l).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle() -> ModelBundle<f32> {
        let mut b = ModelBundle::<f32>::init(Architecture::desk(3, 16, 16), 42).unwrap();
        // non-trivial optimizer state
        for (_, set) in b.sets_mut() {
            for (_, l) in set.iter_mut() {
                l.weight_velocity = l.weight.map(|v| v * 0.5 + 0.01);
            }
        }
        b
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let b = bundle();
        let bytes = write_checkpoint(&b);
        let back = read_checkpoint(&bytes).unwrap();
        assert_eq!(write_checkpoint(&back), bytes);
        for ((_, s1), (_, s2)) in b.sets().iter().zip(back.sets().iter()) {
            for ((n1, l1), (n2, l2)) in s1.iter().zip(s2.iter()) {
                assert_eq!(n1, n2);
                assert_eq!(l1.weight, l2.weight);
                assert_eq!(l1.bias, l2.bias);
                assert_eq!(l1.weight_velocity, l2.weight_velocity);
                assert_eq!(l1.bias_velocity, l2.bias_velocity);
            }
        }
        assert_eq!(back.architecture, b.architecture);
        assert_eq!(back.seed, 42);
    }

    #[test]
    fn empty_file_is_truncated() {
        assert!(matches!(read_checkpoint(&[]), Err(CheckpointError::Truncated(_))));
    }

    #[test]
    fn distinct_header_errors() {
        let bytes = write_checkpoint(&bundle());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&bad), Err(CheckpointError::BadMagic(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(read_checkpoint(&bad), Err(CheckpointError::Version { found: 9, .. })));
        assert!(matches!(
            read_checkpoint(&bytes[..bytes.len() - 3]),
            Err(CheckpointError::Truncated(_))
        ));
    }

    #[test]
    fn shape_determining_header_corruption_is_reported() {
        let bytes = write_checkpoint(&bundle());
        // 14..18 conv count; per conv (at 18 + 16i) channels and kernel;
        // 82..94 classes, projector width, projection dim
        let mut shape_fields = vec![14..18, 82..94];
        for i in 0..4 {
            shape_fields.push(18 + 16 * i..26 + 16 * i);
        }
        for pos in shape_fields.into_iter().flatten() {
            for flip in [0x01u8, 0x80, 0xFF] {
                let mut bad = bytes.clone();
                bad[pos] ^= flip;
                match read_checkpoint(&bad) {
                    Err(CheckpointError::Format(_)) | Err(CheckpointError::Truncated(_)) => {}
                    other => panic!("byte {pos} flip {flip:#x}: {:?}", other.map(|b| b.architecture)),
                }
            }
        }
    }

    #[test]
    fn arbitrary_header_corruption_never_panics() {
        let bytes = write_checkpoint(&bundle());
        for pos in 0..102 {
            for flip in [0x01u8, 0x10, 0x80, 0xFF] {
                let mut bad = bytes.clone();
                bad[pos] ^= flip;
                let _ = read_checkpoint(&bad);
            }
        }
    }

    #[test]
    fn corrupted_record_dims_are_format_errors() {
        let b = bundle();
        let bytes = write_checkpoint(&b);
        let header_len = 4 + 2 + 4 * 3 + 16 * 3 + 4 * 3 + 8;
        // count, name length, "encoder.conv1.weight", rank, first dim
        let first_dim = header_len + 4 + 2 + "encoder.conv1.weight".len() + 1;
        let mut bad = bytes.clone();
        bad[first_dim] = 0xEE;
        assert!(matches!(read_checkpoint(&bad), Err(CheckpointError::Format(_))));
    }
}
