//! Fixed-size binary records: a label prefix followed by a dense tensor.
//! The CIFAR binary batches are the motivating case (one label byte, then
//! 3x32x32 `u8` pixels in channel-major order).

use std::path::PathBuf;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{read_bytes, Dataset, Preprocessing};
use crate::error::{Error, Result};
use crate::kernels::ImageShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawDtype {
    U8,
    F32,
    F64,
}

impl RawDtype {
    fn size(self) -> usize {
        match self {
            RawDtype::U8 => 1,
            RawDtype::F32 => 4,
            RawDtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endian {
    #[default]
    Little,
    Big,
}

/// Record layout of a raw tensor file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSpec {
    pub shape: ImageShape,
    pub dtype: RawDtype,
    #[serde(default)]
    pub endian: Endian,
    /// Bytes before each tensor; the last one is the class id (CIFAR-100
    /// stores a coarse and a fine label, so 2 selects the fine one).
    #[serde(default = "one")]
    pub label_bytes: usize,
    /// Values are divided by this (255 maps `u8` pixels into `[0, 1]`).
    #[serde(default = "one_f64")]
    pub divisor: f64,
    /// Defaults to `max label + 1`.
    #[serde(default)]
    pub num_classes: Option<usize>,
}

fn one() -> usize {
    1
}

fn one_f64() -> f64 {
    1.0
}

fn decode(chunk: &[u8], dtype: RawDtype, endian: Endian) -> f64 {
    match (dtype, endian) {
        (RawDtype::U8, _) => chunk[0] as f64,
        (RawDtype::F32, Endian::Little) => f32::from_le_bytes(chunk.try_into().unwrap()) as f64,
        (RawDtype::F32, Endian::Big) => f32::from_be_bytes(chunk.try_into().unwrap()) as f64,
        (RawDtype::F64, Endian::Little) => f64::from_le_bytes(chunk.try_into().unwrap()),
        (RawDtype::F64, Endian::Big) => f64::from_be_bytes(chunk.try_into().unwrap()),
    }
}

/// Loads and concatenates one or more raw record files.
pub fn load_raw(paths: &[PathBuf], spec: &RawSpec, gzipped: bool) -> Result<Dataset> {
    if spec.label_bytes == 0 {
        return Err(Error::InvalidArgument("raw records need at least one label byte".into()));
    }
    if !(spec.divisor > 0.0) {
        return Err(Error::InvalidArgument(format!("divisor must be > 0, got {}", spec.divisor)));
    }
    let d = spec.shape.len();
    let record = spec.label_bytes + d * spec.dtype.size();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let bytes = read_bytes(path, gzipped)?;
        if bytes.len() % record != 0 {
            let whole = bytes.len() / record * record;
            return Err(Error::Format {
                path: path.display().to_string(),
                offset: whole as u64,
                msg: format!(
                    "{} bytes do not form whole {record}-byte records",
                    bytes.len() - whole
                ),
            });
        }
        for (r, rec) in bytes.chunks_exact(record).enumerate() {
            labels.push(rec[spec.label_bytes - 1] as usize);
            let body = &rec[spec.label_bytes..];
            for (k, chunk) in body.chunks_exact(spec.dtype.size()).enumerate() {
                let v = decode(chunk, spec.dtype, spec.endian) / spec.divisor;
                if !v.is_finite() {
                    return Err(Error::Format {
                        path: path.display().to_string(),
                        offset: (r * record + spec.label_bytes + k * spec.dtype.size()) as u64,
                        msg: "non-finite value".into(),
                    });
                }
                values.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("raw input holds no records".into()));
    }
    let seen = labels.iter().max().map_or(0, |m| m + 1);
    let num_classes = spec.num_classes.unwrap_or(seen);
    if seen > num_classes {
        return Err(Error::InvalidArgument(format!(
            "label {} exceeds declared num_classes {num_classes}",
            seen - 1
        )));
    }
    let features =
        Array2::from_shape_vec((labels.len(), d), values).expect("record count checked");
    Dataset::new(
        features,
        labels,
        num_classes,
        Some(spec.shape),
        Preprocessing::PixelScale {
            divisor: spec.divisor,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(dtype: RawDtype, endian: Endian) -> RawSpec {
        RawSpec {
            shape: ImageShape { channels: 3, height: 1, width: 2 },
            dtype,
            endian,
            label_bytes: 1,
            divisor: 1.0,
            num_classes: Some(10),
        }
    }

    #[test]
    fn cifar_style_u8_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("batch.bin");
        std::fs::write(&p, [7u8, 0, 51, 102, 153, 204, 255, 2, 1, 2, 3, 4, 5, 6]).unwrap();
        let mut s = spec(RawDtype::U8, Endian::Little);
        s.divisor = 255.0;
        let ds = load_raw(&[p.clone(), p], &s, false).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.labels, vec![7, 2, 7, 2]);
        assert_eq!(ds.features[[0, 5]], 1.0);
        assert_eq!(ds.features[[0, 1]], 0.2);
        assert_eq!(ds.num_classes, 10);
    }

    #[test]
    fn float_dtypes_and_endianness() {
        let dir = tempfile::tempdir().unwrap();
        let vals = [0.5f64, -1.25, 3.0, 1e-3, 7.0, -0.0];
        for endian in [Endian::Little, Endian::Big] {
            let mut bytes = vec![1u8];
            for v in vals {
                bytes.extend(match endian {
                    Endian::Little => v.to_le_bytes(),
                    Endian::Big => v.to_be_bytes(),
                });
            }
            let p = dir.path().join("f64.bin");
            std::fs::write(&p, &bytes).unwrap();
            let ds = load_raw(&[p], &spec(RawDtype::F64, endian), false).unwrap();
            assert_eq!(ds.features.row(0).to_vec(), vals.to_vec());

            let mut bytes = vec![0u8];
            for v in vals {
                let v = v as f32;
                bytes.extend(match endian {
                    Endian::Little => v.to_le_bytes(),
                    Endian::Big => v.to_be_bytes(),
                });
            }
            let p = dir.path().join("f32.bin");
            std::fs::write(&p, &bytes).unwrap();
            let ds = load_raw(&[p], &spec(RawDtype::F32, endian), false).unwrap();
            assert_eq!(ds.features[[0, 3]], 1e-3f32 as f64);
        }
    }

    #[test]
    fn partial_record_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("short.bin");
        std::fs::write(&p, [1u8, 2, 3, 4, 5, 6, 7, 8, 9]).unwrap();
        match load_raw(&[p], &spec(RawDtype::U8, Endian::Little), false) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 7),
            other => panic!("{other:?}"),
        }
    }
}
