//! Tabular CSV ingestion: z-scored numeric columns, one-hot categoricals.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Dataset, Preprocessing};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Encoder {
    Numeric { column: String, mean: f64, scale: f64 },
    Categorical { column: String, categories: Vec<String> },
}

/// Encoding fitted on training rows; applied unchanged to any later file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularTransform {
    label_column: String,
    classes: Vec<String>,
    encoders: Vec<Encoder>,
}

struct Table {
    path: String,
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let name = path.display().to_string();
        let mut rdr = ::csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| csv_err(&name, e))?;
        let headers = rdr
            .headers()
            .map_err(|e| csv_err(&name, e))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_err(&name, e))?;
            rows.push(rec.iter().map(|c| c.trim().to_string()).collect());
        }
        Ok(Self {
            path: name,
            headers,
            rows,
        })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| Error::Format {
            path: self.path.clone(),
            offset: 0,
            msg: format!("missing column {name:?}"),
        })
    }
}

fn csv_err(path: &str, e: ::csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.line());
    Error::Format {
        path: path.to_string(),
        offset,
        msg: e.to_string(),
    }
}

fn parse_number(table: &Table, row: usize, col: usize) -> Result<f64> {
    let cell = &table.rows[row][col];
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Format {
            path: table.path.clone(),
            offset: row as u64 + 1,
            msg: format!("column {:?}: cannot parse {cell:?} as a number", table.headers[col]),
        })
}

impl TabularTransform {
    pub fn width(&self) -> usize {
        self.encoders
            .iter()
            .map(|e| match e {
                Encoder::Numeric { .. } => 1,
                Encoder::Categorical { categories, .. } => categories.len(),
            })
            .sum()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    fn fit(table: &Table, label_column: &str, schema: &[(String, ColumnKind)]) -> Result<Self> {
        let lc = table.column(label_column)?;
        let classes: Vec<String> = table
            .rows
            .iter()
            .map(|r| r[lc].clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if classes.len() < 2 {
            return Err(Error::Format {
                path: table.path.clone(),
                offset: 0,
                msg: format!("label column {label_column:?} has fewer than two classes"),
            });
        }
        let n = table.rows.len() as f64;
        let mut encoders = Vec::with_capacity(schema.len());
        for (name, kind) in schema {
            let c = table.column(name)?;
            encoders.push(match kind {
                ColumnKind::Numeric => {
                    let vals = (0..table.rows.len())
                        .map(|r| parse_number(table, r, c))
                        .collect::<Result<Vec<_>>>()?;
                    let mean = vals.iter().sum::<f64>() / n;
                    let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                    Encoder::Numeric {
                        column: name.clone(),
                        mean,
                        scale: if sd > 1e-12 { sd } else { 1.0 },
                    }
                }
                ColumnKind::Categorical => Encoder::Categorical {
                    column: name.clone(),
                    categories: table
                        .rows
                        .iter()
                        .map(|r| r[c].clone())
                        .collect::<BTreeSet<_>>()
                        .into_iter()
                        .collect(),
                },
            });
        }
        Ok(Self {
            label_column: label_column.to_string(),
            classes,
            encoders,
        })
    }

    fn apply(&self, table: &Table) -> Result<Dataset> {
        let lc = table.column(&self.label_column)?;
        let cols = self
            .encoders
            .iter()
            .map(|e| match e {
                Encoder::Numeric { column, .. } | Encoder::Categorical { column, .. } => {
                    table.column(column)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let n = table.rows.len();
        let mut features = Array2::zeros((n, self.width()));
        let mut labels = Vec::with_capacity(n);
        for r in 0..n {
            let lab = &table.rows[r][lc];
            let id = self.classes.iter().position(|c| c == lab).ok_or_else(|| Error::Format {
                path: table.path.clone(),
                offset: r as u64 + 1,
                msg: format!("label {lab:?} was not seen when fitting"),
            })?;
            labels.push(id);
            let mut k = 0;
            for (enc, &c) in self.encoders.iter().zip(&cols) {
                match enc {
                    Encoder::Numeric { mean, scale, .. } => {
                        features[[r, k]] = (parse_number(table, r, c)? - mean) / scale;
                        k += 1;
                    }
                    Encoder::Categorical { categories, .. } => {
                        // Unseen categories encode as all zeros.
                        if let Some(j) = categories.iter().position(|v| *v == table.rows[r][c]) {
                            features[[r, k + j]] = 1.0;
                        }
                        k += categories.len();
                    }
                }
            }
        }
        Dataset::new(
            features,
            labels,
            self.classes.len(),
            None,
            Preprocessing::Tabular(self.clone()),
        )
    }

    /// Encodes another file (e.g. a test split) without refitting.
    pub fn load(&self, path: impl AsRef<Path>) -> Result<Dataset> {
        self.apply(&Table::read(path.as_ref())?)
    }
}

/// Loads a CSV with a header row, fitting the encoding on this file.
/// Columns not named in `schema` (other than the label) are ignored.
pub fn load_csv(
    path: impl AsRef<Path>,
    label_column: &str,
    schema: &[(String, ColumnKind)],
) -> Result<Dataset> {
    let table = Table::read(path.as_ref())?;
    if table.rows.is_empty() {
        return Err(Error::Format {
            path: table.path.clone(),
            offset: 1,
            msg: "no data rows".into(),
        });
    }
    TabularTransform::fit(&table, label_column, schema)?.apply(&table)
}
