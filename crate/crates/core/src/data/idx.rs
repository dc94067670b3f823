//! IDX image/label files (the MNIST distribution format).

use std::path::Path;

use ndarray::Array2;

use super::{read_bytes, Dataset, Preprocessing};
use crate::error::{Error, Result};
use crate::kernels::ImageShape;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(path, offset, "header ends early"))
}

fn format_err(path: &Path, offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        offset: offset as u64,
        msg: msg.into(),
    }
}

fn check_payload(bytes: &[u8], header: usize, expected: usize, path: &Path) -> Result<()> {
    let actual = bytes.len() - header.min(bytes.len());
    if actual < expected {
        return Err(format_err(
            path,
            bytes.len(),
            format!("truncated payload: {actual} of {expected} bytes"),
        ));
    }
    if actual > expected {
        return Err(format_err(
            path,
            header + expected,
            format!("{} trailing bytes after payload", actual - expected),
        ));
    }
    Ok(())
}

/// Loads an IDX image file and its label file. Pixels are scaled to `[0, 1]`
/// and the class count is `max label + 1`.
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    gzipped: bool,
) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let img = read_bytes(ip, gzipped)?;
    let magic = be_u32(&img, 0, ip)?;
    if magic != IMAGE_MAGIC {
        return Err(format_err(ip, 0, format!("bad image magic {magic:#010x}")));
    }
    let n = be_u32(&img, 4, ip)? as usize;
    let h = be_u32(&img, 8, ip)? as usize;
    let w = be_u32(&img, 12, ip)? as usize;
    check_payload(&img, 16, n * h * w, ip)?;

    let lab = read_bytes(lp, gzipped)?;
    let magic = be_u32(&lab, 0, lp)?;
    if magic != LABEL_MAGIC {
        return Err(format_err(lp, 0, format!("bad label magic {magic:#010x}")));
    }
    let nl = be_u32(&lab, 4, lp)? as usize;
    check_payload(&lab, 8, nl, lp)?;
    if nl != n {
        return Err(format_err(lp, 4, format!("{nl} labels for {n} images")));
    }
    if n == 0 {
        return Err(format_err(ip, 4, "file holds no images"));
    }

    let features = Array2::from_shape_vec(
        (n, h * w),
        img[16..].iter().map(|&b| b as f64 / 255.0).collect(),
    )
    .expect("payload length checked");
    let labels: Vec<usize> = lab[8..].iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(
        features,
        labels,
        num_classes,
        Some(ImageShape {
            channels: 1,
            height: h,
            width: w,
        }),
        Preprocessing::PixelScale { divisor: 255.0 },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, bytes: &[u8], gz: bool) -> std::path::PathBuf {
        let p = dir.join(name);
        let f = std::fs::File::create(&p).unwrap();
        if gz {
            let mut e = flate2::write::GzEncoder::new(f, flate2::Compression::default());
            e.write_all(bytes).unwrap();
            e.finish().unwrap();
        } else {
            let mut f = f;
            f.write_all(bytes).unwrap();
        }
        p
    }

    fn images(n: u32, h: u32, w: u32, pixels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [IMAGE_MAGIC, n, h, w] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend_from_slice(pixels);
        v
    }

    fn labels(ls: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        v.extend_from_slice(&(ls.len() as u32).to_be_bytes());
        v.extend_from_slice(ls);
        v
    }

    #[test]
    fn hand_built_fixture_scales_pixels() {
        let dir = tempfile::tempdir().unwrap();
        for gz in [false, true] {
            let pixels: Vec<u8> = (0..8).map(|k| k * 30).collect();
            let ip = write(dir.path(), "img", &images(2, 2, 2, &pixels), gz);
            let lp = write(dir.path(), "lab", &labels(&[3, 1]), gz);
            let ds = load_idx(&ip, &lp, gz).unwrap();
            assert_eq!(ds.len(), 2);
            assert_eq!(ds.dim(), 4);
            assert_eq!(ds.shape, Some(ImageShape { channels: 1, height: 2, width: 2 }));
            assert_eq!(ds.labels, vec![3, 1]);
            assert_eq!(ds.num_classes, 4);
            for (k, v) in ds.features.iter().enumerate() {
                assert_eq!(*v, (k * 30) as f64 / 255.0);
            }
        }
    }

    #[test]
    fn malformed_files_are_rejected_with_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let lp = write(dir.path(), "lab", &labels(&[0, 1]), false);

        let mut bad = images(2, 2, 2, &[0; 8]);
        bad[3] = 0x04;
        let ip = write(dir.path(), "bad_magic", &bad, false);
        match load_idx(&ip, &lp, false) {
            Err(Error::Format { offset, msg, .. }) => {
                assert_eq!(offset, 0);
                assert!(msg.contains("magic"));
            }
            other => panic!("{other:?}"),
        }

        let ip = write(dir.path(), "short", &images(2, 2, 2, &[0; 7]), false);
        assert!(matches!(load_idx(&ip, &lp, false), Err(Error::Format { offset: 23, .. })));

        let ip = write(dir.path(), "long", &images(2, 2, 2, &[0; 9]), false);
        assert!(matches!(load_idx(&ip, &lp, false), Err(Error::Format { offset: 24, .. })));

        let ip = write(dir.path(), "ok", &images(2, 2, 2, &[0; 8]), false);
        let lp3 = write(dir.path(), "lab3", &labels(&[0, 1, 1]), false);
        assert!(matches!(load_idx(&ip, &lp3, false), Err(Error::Format { .. })));

        assert!(matches!(
            load_idx(dir.path().join("missing"), &lp, false),
            Err(Error::Io { .. })
        ));
    }
}
