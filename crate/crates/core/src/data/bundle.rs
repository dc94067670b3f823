//! On-disk bundle for a distilled set.
//!
//! A bundle is a directory holding
//!
//! * `features.bin`: 16-byte header (`b"DKIP"`, then `version`, `m`, `D` as
//!   little-endian `u32`) followed by `m * D` little-endian `f64` in row-major order;
//! * `bundle.json`: labels, pixel mask, image shape and run metadata;
//! * `class_<c>.pgm` / `.ppm`: per-class image grids, for image data only.
//!
//! Bundles are assembled in a sibling temporary directory and renamed into
//! place, so a crash never leaves a half-written bundle behind.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{ImageShape, KernelSpec};
use crate::kip::DistilledSet;

pub const BUNDLE_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"DKIP";
const FEATURES: &str = "features.bin";
const DOCUMENT: &str = "bundle.json";

/// Everything needed to interpret and reproduce a distillation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub kernel: KernelSpec,
    /// Base ridge `lambda`; the effective ridge is `lambda * tr(K_ss) / m`.
    pub lambda: f64,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    /// Noise multiplier; 0 for non-private runs.
    pub sigma: f64,
    pub steps: u64,
    pub sampling_rate: f64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub final_loss: f64,
    /// Free-form provenance (dataset, optimizer, preprocessing, ...).
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct Document {
    version: u32,
    num_classes: usize,
    shape: Option<ImageShape>,
    labels: Vec<usize>,
    /// Frozen coordinate indices per point.
    mask: Option<Vec<Vec<usize>>>,
    meta: BundleMeta,
}

fn features_bytes(points: &Array2<f64>) -> Result<Vec<u8>> {
    let (m, d) = points.dim();
    let (m32, d32) = match (u32::try_from(m), u32::try_from(d)) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return Err(Error::InvalidArgument(format!("distilled set {m}x{d} is too large"))),
    };
    let mut out = Vec::with_capacity(16 + 8 * m * d);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
    out.extend_from_slice(&m32.to_le_bytes());
    out.extend_from_slice(&d32.to_le_bytes());
    for v in points.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `ds` and `meta` to `dir`, replacing any existing bundle there.
pub fn export_bundle(ds: &DistilledSet, meta: &BundleMeta, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let name = dir
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("bad bundle path {}", dir.display())))?
        .to_string_lossy()
        .into_owned();
    let parent = match dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
    let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::create_dir(&tmp).map_err(|e| Error::io(&tmp, e))?;

    let result = (|| {
        write_file(&tmp.join(FEATURES), &features_bytes(&ds.points)?)?;
        let doc = Document {
            version: BUNDLE_VERSION,
            num_classes: ds.num_classes,
            shape: ds.shape,
            labels: (0..ds.len()).map(|i| ds.class_of(i)).collect(),
            mask: ds.mask.as_ref().map(|mk| {
                mk.rows()
                    .into_iter()
                    .map(|r| r.iter().enumerate().filter(|(_, f)| **f).map(|(j, _)| j).collect())
                    .collect()
            }),
            meta: meta.clone(),
        };
        let mut json = serde_json::to_vec_pretty(&doc)?;
        json.push(b'\n');
        write_file(&tmp.join(DOCUMENT), &json)?;
        if ds.shape.is_some_and(|s| s.channels == 1 || s.channels == 3) {
            write_class_grids(ds, &tmp)?;
        }
        Ok(())
    })();
    if let Err(e) = result {
        let _ = fs::remove_dir_all(&tmp);
        return Err(e);
    }
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))
}

fn read_features(path: &Path) -> Result<Array2<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::Version {
            path: path.to_path_buf(),
            msg: "missing DKIP magic".into(),
        });
    }
    let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().unwrap());
    let version = word(4);
    if version != BUNDLE_VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            msg: format!("version {version}, expected {BUNDLE_VERSION}"),
        });
    }
    let (m, d) = (word(8) as usize, word(12) as usize);
    let expected = 16 + 8 * m * d;
    if bytes.len() != expected {
        return Err(Error::Format {
            path: path.display().to_string(),
            offset: bytes.len().min(expected) as u64,
            msg: format!("{} bytes for a {m}x{d} payload, expected {expected}", bytes.len()),
        });
    }
    let values = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Array2::from_shape_vec((m, d), values).expect("length checked"))
}

/// Reads a bundle written by [`export_bundle`].
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<(DistilledSet, BundleMeta)> {
    let dir = dir.as_ref();
    let points = read_features(&dir.join(FEATURES))?;
    let doc_path = dir.join(DOCUMENT);
    let text = fs::read(&doc_path).map_err(|e| Error::io(&doc_path, e))?;
    let doc: Document = serde_json::from_slice(&text)?;
    if doc.version != BUNDLE_VERSION {
        return Err(Error::Version {
            path: doc_path,
            msg: format!("document version {}", doc.version),
        });
    }
    let (m, d) = points.dim();
    let bad = |msg: String| Error::Format {
        path: doc_path.display().to_string(),
        offset: 0,
        msg,
    };
    if doc.labels.len() != m {
        return Err(bad(format!("{} labels for {m} points", doc.labels.len())));
    }
    let mut labels = Array2::zeros((m, doc.num_classes));
    for (i, &c) in doc.labels.iter().enumerate() {
        if c >= doc.num_classes {
            return Err(bad(format!("label {c} outside 0..{}", doc.num_classes)));
        }
        labels[[i, c]] = 1.0;
    }
    let mask = match doc.mask {
        None => None,
        Some(rows) => {
            if rows.len() != m {
                return Err(bad(format!("mask has {} rows for {m} points", rows.len())));
            }
            let mut mk = Array2::from_elem((m, d), false);
            for (i, row) in rows.iter().enumerate() {
                for &j in row {
                    if j >= d {
                        return Err(bad(format!("mask index {j} outside 0..{d}")));
                    }
                    mk[[i, j]] = true;
                }
            }
            Some(mk)
        }
    };
    let ds = DistilledSet::new(points, labels, mask, doc.shape)?;
    Ok((ds, doc.meta))
}

/// Binary PGM (1 channel) or PPM (3 channels, planar input) image.
pub fn encode_pnm(pixels: &[u8], width: usize, height: usize, channels: usize) -> Result<Vec<u8>> {
    let tag = match channels {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::InvalidArgument(format!("cannot encode {c}-channel images"))),
    };
    if pixels.len() != width * height * channels {
        return Err(Error::Shape(format!(
            "{} pixels for a {width}x{height}x{channels} image",
            pixels.len()
        )));
    }
    let mut out = format!("{tag}\n{width} {height}\n255\n").into_bytes();
    let plane = width * height;
    for p in 0..plane {
        for c in 0..channels {
            out.push(pixels[c * plane + p]);
        }
    }
    Ok(out)
}

/// Min-max maps one image to `0..=255`; constant images become black.
fn to_bytes(img: &[f64]) -> Vec<u8> {
    let lo = img.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = img.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    img.iter()
        .map(|v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}

/// Writes one grid image per class into `dir`, each distilled image
/// normalized separately. Returns the written paths.
pub fn write_class_grids(ds: &DistilledSet, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let shape = ds
        .shape
        .ok_or_else(|| Error::InvalidArgument("distilled set has no image shape".into()))?;
    let (c, h, w) = (shape.channels, shape.height, shape.width);
    let ext = match c {
        1 => "pgm",
        3 => "ppm",
        _ => return Err(Error::InvalidArgument(format!("cannot render {c}-channel images"))),
    };
    let mut written = Vec::new();
    for class in 0..ds.num_classes {
        let members: Vec<usize> = (0..ds.len()).filter(|&i| ds.class_of(i) == class).collect();
        if members.is_empty() {
            continue;
        }
        let cols = (members.len() as f64).sqrt().ceil() as usize;
        let rows = members.len().div_ceil(cols);
        let (gw, gh) = (cols * w, rows * h);
        let mut grid = vec![0u8; c * gw * gh];
        for (k, &i) in members.iter().enumerate() {
            let img = to_bytes(ds.points.row(i).as_slice().expect("row-major points"));
            let (ox, oy) = ((k % cols) * w, (k / cols) * h);
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        grid[ch * gw * gh + (oy + y) * gw + ox + x] = img[ch * h * w + y * w + x];
                    }
                }
            }
        }
        let path = dir.join(format!("class_{class}.{ext}"));
        write_file(&path, &encode_pnm(&grid, gw, gh, c)?)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kip::init_distilled;

    fn meta() -> BundleMeta {
        let mut extra = BTreeMap::new();
        extra.insert("dataset".into(), serde_json::json!("blobs"));
        BundleMeta {
            kernel: KernelSpec::Scatter { scales: 2, orientations: 8 },
            lambda: 1e-6,
            epsilon: Some(10.0),
            delta: Some(1e-5),
            sigma: 0.7234567891234567,
            steps: 150,
            sampling_rate: 0.01,
            clip_norm: Some(1e-2),
            seed: 42,
            final_loss: 0.1 + 0.2,
            extra,
        }
    }

    fn distilled(corrupt: f64) -> DistilledSet {
        let mut ds = init_distilled(6, 28 * 28, 3, 2, 5, corrupt).unwrap();
        ds.shape = Some(ImageShape { channels: 1, height: 28, width: 28 });
        ds
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("bundle");
        for corrupt in [0.0, 0.1] {
            let ds = distilled(corrupt);
            export_bundle(&ds, &meta(), &out).unwrap();
            let (back, m) = load_bundle(&out).unwrap();
            assert_eq!(m, meta());
            assert_eq!(back.labels, ds.labels);
            assert_eq!(back.mask, ds.mask);
            assert_eq!(back.shape, ds.shape);
            for (a, b) in back.points.iter().zip(ds.points.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        assert!(out.join("class_0.pgm").exists());
        // No temporary directory is left next to the bundle.
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn header_layout() {
        let dir = tempfile::tempdir().unwrap();
        export_bundle(&distilled(0.0), &meta(), dir.path().join("b")).unwrap();
        let bytes = fs::read(dir.path().join("b").join(FEATURES)).unwrap();
        assert_eq!(&bytes[..4], b"DKIP");
        assert_eq!(bytes[4..16], [1, 0, 0, 0, 6, 0, 0, 0, 16, 3, 0, 0]);
        assert_eq!(bytes.len(), 16 + 8 * 6 * 784);
    }

    #[test]
    fn corrupted_magic_is_a_version_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("b");
        export_bundle(&distilled(0.0), &meta(), &out).unwrap();
        let f = out.join(FEATURES);
        let mut bytes = fs::read(&f).unwrap();
        bytes[0] = b'X';
        fs::write(&f, &bytes).unwrap();
        assert!(matches!(load_bundle(&out), Err(Error::Version { .. })));

        bytes[0] = b'D';
        bytes[4] = 9;
        fs::write(&f, &bytes).unwrap();
        assert!(matches!(load_bundle(&out), Err(Error::Version { .. })));

        bytes[4] = 1;
        bytes.pop();
        fs::write(&f, &bytes).unwrap();
        assert!(matches!(load_bundle(&out), Err(Error::Format { .. })));
    }

    #[test]
    fn pgm_header_and_normalization() {
        let bytes = encode_pnm(&vec![0; 28 * 28], 28, 28, 1).unwrap();
        assert!(bytes.starts_with(b"P5\n28 28\n255\n"));
        assert_eq!(bytes.len(), 13 + 784);
        assert_eq!(to_bytes(&[-1.0, 0.0, 1.0]), vec![0, 128, 255]);
        assert_eq!(to_bytes(&[3.0, 3.0]), vec![0, 0]);

        // Planar RGB input is interleaved on output.
        let ppm = encode_pnm(&[1, 2, 10, 20, 100, 200], 2, 1, 3).unwrap();
        assert!(ppm.starts_with(b"P6\n2 1\n255\n"));
        assert_eq!(&ppm[11..], &[1, 10, 100, 2, 20, 200]);
    }

    #[test]
    fn class_grids_have_expected_size() {
        let dir = tempfile::tempdir().unwrap();
        let ds = distilled(0.0);
        let paths = write_class_grids(&ds, dir.path()).unwrap();
        assert_eq!(paths.len(), 3);
        // Two images per class: a 2x1 grid.
        let bytes = fs::read(&paths[0]).unwrap();
        assert!(bytes.starts_with(b"P5\n56 28\n255\n"));
    }
}
