//! Dataset ingestion, synthetic data and distilled-set export.

mod blobs;
mod bundle;
mod csv;
mod idx;
mod raw;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

pub use self::blobs::synth_blobs;
pub use self::bundle::{
    encode_pnm, export_bundle, load_bundle, write_class_grids, BundleMeta, BUNDLE_VERSION,
};
pub use self::csv::{load_csv, ColumnKind, TabularTransform};
pub use self::idx::load_idx;
pub use self::raw::{load_raw, Endian, RawDtype, RawSpec};

use crate::error::{Error, Result};
use crate::kernels::ImageShape;

/// How raw values were mapped to features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Preprocessing {
    None,
    /// Pixels divided by `divisor` into `[0, 1]`.
    PixelScale { divisor: f64 },
    Tabular(TabularTransform),
}

/// In-memory labeled data, immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// `None` for flat (tabular) data.
    pub shape: Option<ImageShape>,
    pub preprocessing: Preprocessing,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        shape: Option<ImageShape>,
        preprocessing: Preprocessing,
    ) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::InvalidArgument("dataset is empty".into()));
        }
        if labels.len() != n {
            return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&c| c >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside 0..{num_classes}"
            )));
        }
        if let Some(sh) = shape {
            if sh.len() != features.ncols() {
                return Err(Error::Shape(format!(
                    "image shape {sh:?} for {} features",
                    features.ncols()
                )));
            }
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("features contain non-finite values".into()));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            shape,
            preprocessing,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// `n x num_classes` one-hot label matrix.
    pub fn one_hot(&self) -> Array2<f64> {
        let mut y = Array2::zeros((self.len(), self.num_classes));
        for (i, &c) in self.labels.iter().enumerate() {
            y[[i, c]] = 1.0;
        }
        y
    }

    /// Rows `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidArgument(format!("index {bad} out of range {}", self.len())));
        }
        Dataset::new(
            self.features.select(Axis(0), indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.num_classes,
            self.shape,
            self.preprocessing.clone(),
        )
    }

    /// The first `n` rows (all of them when `n >= len`).
    pub fn head(&self, n: usize) -> Result<Self> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &c in &self.labels {
            counts[c] += 1;
        }
        counts
    }
}

/// Reads a file, transparently gunzipping when asked.
pub(crate) fn read_bytes(path: &std::path::Path, gzipped: bool) -> Result<Vec<u8>> {
    use std::io::Read;
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    if gzipped {
        flate2::read::GzDecoder::new(file)
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
    } else {
        std::io::BufReader::new(file)
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn dataset_validation_and_helpers() {
        let ds = Dataset::new(array![[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]], vec![1, 0, 1], 2, None, Preprocessing::None).unwrap();
        assert_eq!(ds.one_hot(), array![[0.0, 1.0], [1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(ds.class_counts(), vec![1, 2]);
        let sub = ds.subset(&[2, 0]).unwrap();
        assert_eq!(sub.features, array![[4.0, 5.0], [0.0, 1.0]]);
        assert_eq!(sub.labels, vec![1, 1]);
        assert_eq!(ds.head(10).unwrap(), ds);
        assert!(ds.subset(&[3]).is_err());
        assert!(Dataset::new(array![[0.0]], vec![2], 2, None, Preprocessing::None).is_err());
        assert!(Dataset::new(array![[f64::NAN]], vec![0], 1, None, Preprocessing::None).is_err());
        assert!(Dataset::new(Array2::zeros((0, 2)), vec![], 1, None, Preprocessing::None).is_err());
    }
}
