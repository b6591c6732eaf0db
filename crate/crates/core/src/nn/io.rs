//! Versioned binary model files.
//!
//! Layout: magic string, format version, architecture preset name, class
//! count, input shape, layer descriptors, then one little-endian f64
//! parameter array (weights then bias per parameterized layer, in layer
//! order). Files round-trip bit-exactly.

use super::{Layer, NetworkModel, NnError};
use crate::tensor::Tensor;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const MODEL_MAGIC: &[u8; 8] = b"RCTMODL\x01";
const FORMAT_VERSION: u16 = 1;

const TAG_CONV2D: u8 = 1;
const TAG_RELU: u8 = 2;
const TAG_MAXPOOL: u8 = 3;
const TAG_FLATTEN: u8 = 4;
const TAG_DENSE: u8 = 5;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path} is not a model file (bad magic)")]
    BadMagic { path: String },
    #[error("unsupported model format version {0}")]
    BadVersion(u16),
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Model(#[from] NnError),
}

fn write_u16<W: Write>(w: &mut W, v: u16) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u16<R: Read>(r: &mut R) -> io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Serializes a model with its architecture name.
pub fn save_model(path: &Path, model: &NetworkModel, arch_name: &str) -> Result<(), ModelIoError> {
    let ctx = |source| ModelIoError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(ctx)?);
    let inner = |w: &mut BufWriter<File>| -> io::Result<()> {
        w.write_all(MODEL_MAGIC)?;
        write_u16(w, FORMAT_VERSION)?;
        write_u16(w, arch_name.len() as u16)?;
        w.write_all(arch_name.as_bytes())?;
        write_u32(w, model.num_classes() as u32)?;
        write_u16(w, model.input_shape().len() as u16)?;
        for &d in model.input_shape() {
            write_u32(w, d as u32)?;
        }
        write_u32(w, model.layers().len() as u32)?;
        for layer in model.layers() {
            match layer {
                Layer::Conv2d {
                    weights, stride, ..
                } => {
                    w.write_all(&[TAG_CONV2D])?;
                    write_u32(w, weights.shape()[0] as u32)?;
                    write_u32(w, weights.shape()[1] as u32)?;
                    write_u32(w, weights.shape()[2] as u32)?;
                    write_u32(w, *stride as u32)?;
                }
                Layer::Relu => w.write_all(&[TAG_RELU])?,
                Layer::MaxPool2d { window } => {
                    w.write_all(&[TAG_MAXPOOL])?;
                    write_u32(w, *window as u32)?;
                }
                Layer::Flatten => w.write_all(&[TAG_FLATTEN])?,
                Layer::Dense { weights, .. } => {
                    w.write_all(&[TAG_DENSE])?;
                    write_u32(w, weights.shape()[0] as u32)?;
                    write_u32(w, weights.shape()[1] as u32)?;
                }
            }
        }
        for layer in model.layers() {
            let (weights, bias) = match layer {
                Layer::Conv2d { weights, bias, .. } | Layer::Dense { weights, bias } => {
                    (weights, bias)
                }
                _ => continue,
            };
            for &v in weights.data().iter().chain(bias.data()) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    };
    inner(&mut w).map_err(ctx)
}

/// Loads a model, returning it with the stored architecture name.
pub fn load_model(path: &Path) -> Result<(NetworkModel, String), ModelIoError> {
    let ctx = |source| ModelIoError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut r = BufReader::new(File::open(path).map_err(ctx)?);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(ctx)?;
    if &magic != MODEL_MAGIC {
        return Err(ModelIoError::BadMagic {
            path: path.display().to_string(),
        });
    }
    let version = read_u16(&mut r).map_err(ctx)?;
    if version != FORMAT_VERSION {
        return Err(ModelIoError::BadVersion(version));
    }
    let name_len = read_u16(&mut r).map_err(ctx)? as usize;
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name).map_err(ctx)?;
    let arch_name = String::from_utf8(name)
        .map_err(|_| ModelIoError::Corrupt("architecture name is not utf-8".into()))?;
    let num_classes = read_u32(&mut r).map_err(ctx)? as usize;
    let ndim = read_u16(&mut r).map_err(ctx)? as usize;
    let mut input_shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        input_shape.push(read_u32(&mut r).map_err(ctx)? as usize);
    }
    let layer_count = read_u32(&mut r).map_err(ctx)? as usize;

    enum Desc {
        Conv2d {
            out_ch: usize,
            in_ch: usize,
            k: usize,
            stride: usize,
        },
        Relu,
        MaxPool2d(usize),
        Flatten,
        Dense {
            in_dim: usize,
            out_dim: usize,
        },
    }
    let mut descs = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag).map_err(ctx)?;
        descs.push(match tag[0] {
            TAG_CONV2D => Desc::Conv2d {
                out_ch: read_u32(&mut r).map_err(ctx)? as usize,
                in_ch: read_u32(&mut r).map_err(ctx)? as usize,
                k: read_u32(&mut r).map_err(ctx)? as usize,
                stride: read_u32(&mut r).map_err(ctx)? as usize,
            },
            TAG_RELU => Desc::Relu,
            TAG_MAXPOOL => Desc::MaxPool2d(read_u32(&mut r).map_err(ctx)? as usize),
            TAG_FLATTEN => Desc::Flatten,
            TAG_DENSE => Desc::Dense {
                in_dim: read_u32(&mut r).map_err(ctx)? as usize,
                out_dim: read_u32(&mut r).map_err(ctx)? as usize,
            },
            other => return Err(ModelIoError::Corrupt(format!("unknown layer tag {other}"))),
        });
    }

    let mut read_tensor = |shape: Vec<usize>| -> Result<Tensor, ModelIoError> {
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut b = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut b).map_err(ctx)?;
            data.push(f64::from_le_bytes(b));
        }
        Tensor::new(shape, data).map_err(|e| ModelIoError::Corrupt(e.to_string()))
    };

    let mut layers = Vec::with_capacity(layer_count);
    for desc in &descs {
        layers.push(match desc {
            Desc::Conv2d {
                out_ch,
                in_ch,
                k,
                stride,
            } => Layer::Conv2d {
                weights: read_tensor(vec![*out_ch, *in_ch, *k, *k])?,
                bias: read_tensor(vec![*out_ch])?,
                stride: *stride,
            },
            Desc::Relu => Layer::Relu,
            Desc::MaxPool2d(window) => Layer::MaxPool2d { window: *window },
            Desc::Flatten => Layer::Flatten,
            Desc::Dense { in_dim, out_dim } => Layer::Dense {
                weights: read_tensor(vec![*in_dim, *out_dim])?,
                bias: read_tensor(vec![*out_dim])?,
            },
        });
    }

    let model = NetworkModel::new(layers, num_classes, input_shape)?;
    Ok((model, arch_name))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ArchPreset;
    use crate::rng::Prng;

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let mut rng = Prng::new(3);
        let model = ArchPreset::Mlp.build(&mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&path, &model, "mlp").unwrap();
        let (loaded, name) = load_model(&path).unwrap();
        assert_eq!(name, "mlp");
        assert_eq!(loaded.layers().len(), model.layers().len());
        for (a, b) in model.layers().iter().zip(loaded.layers()) {
            match (a, b) {
                (
                    Layer::Dense { weights: w1, bias: b1 },
                    Layer::Dense { weights: w2, bias: b2 },
                ) => {
                    assert_eq!(w1.data(), w2.data());
                    assert_eq!(b1.data(), b2.data());
                }
                (Layer::Flatten, Layer::Flatten) | (Layer::Relu, Layer::Relu) => {}
                other => panic!("layer kind changed in round trip: {other:?}"),
            }
        }
    }

    #[test]
    fn rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.bin");
        std::fs::write(&path, b"NOTMODEL plus trailing junk").unwrap();
        assert!(matches!(
            load_model(&path),
            Err(ModelIoError::BadMagic { .. })
        ));
    }

    #[test]
    fn rejects_truncated_file() {
        let mut rng = Prng::new(3);
        let model = ArchPreset::Mlp.build(&mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&path, &model, "mlp").unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_model(&path), Err(ModelIoError::Io { .. })));
    }
}
