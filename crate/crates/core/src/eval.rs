//! KRR classification of held-out data with a distilled support set.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernels::KernelConfig;
use crate::kip::{effective_lambda, DistilledSet};
use crate::linalg::SpdSolver;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `None` for classes absent from the test set.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<usize>>,
    /// Unweighted mean of per-class F1 over classes present in the test set.
    pub macro_f1: f64,
    pub lambda_eff: f64,
    pub n_test: usize,
}

/// KRR regression scores `k_ts (K_ss + lambda_eff I)^{-1} Y_s` for rows that
/// are already embedded with `kernel.embed_rows`. Also returns `lambda_eff`.
pub fn krr_scores_embedded(
    ds: &DistilledSet,
    test_embedded: ArrayView2<'_, f64>,
    kernel: &KernelConfig,
    lambda_base: f64,
) -> Result<(Array2<f64>, f64)> {
    kernel.validate()?;
    if !(lambda_base >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda_base}")));
    }
    let emb_s = kernel.embed_rows(ds.points.view())?;
    if test_embedded.ncols() != emb_s.ncols() {
        return Err(Error::Shape(format!(
            "test embedding has {} columns, support embedding {}",
            test_embedded.ncols(),
            emb_s.ncols()
        )));
    }
    let k_ss = kernel.gram_embedded(emb_s.view(), emb_s.view(), true)?;
    let lambda_eff = effective_lambda(&k_ss, lambda_base, ds.len());
    let alpha = SpdSolver::factor(k_ss.entries.view(), lambda_eff)?.solve(ds.labels.view());
    let k_ts = kernel.gram_embedded(test_embedded, emb_s.view(), false)?.entries;
    let scores = k_ts.dot(&alpha);
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("KRR scores are not finite".into()));
    }
    Ok((scores, lambda_eff))
}

/// Row-wise argmax; ties go to the lowest class id.
pub fn argmax_rows(scores: ArrayView2<'_, f64>) -> Vec<usize> {
    scores
        .rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (c, v) in r.iter().enumerate() {
                if *v > r[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Predicted class of every row of `x_test`.
pub fn krr_predict(
    ds: &DistilledSet,
    x_test: ArrayView2<'_, f64>,
    kernel: &KernelConfig,
    lambda_base: f64,
) -> Result<Vec<usize>> {
    let emb = kernel.embed_rows(x_test)?;
    let (scores, _) = krr_scores_embedded(ds, emb.view(), kernel, lambda_base)?;
    Ok(argmax_rows(scores.view()))
}

/// Builds a report from predictions.
pub fn report(
    predictions: &[usize],
    labels: &[usize],
    num_classes: usize,
    lambda_eff: f64,
) -> Result<EvalReport> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &t) in predictions.iter().zip(labels) {
        if p >= num_classes || t >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "class id outside 0..{num_classes}"
            )));
        }
        confusion[t][p] += 1;
    }
    let n = labels.len();
    let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let total: usize = row.iter().sum();
            (total > 0).then(|| row[c] as f64 / total as f64)
        })
        .collect();
    let mut f1 = Vec::new();
    for c in 0..num_classes {
        let actual: usize = confusion[c].iter().sum();
        if actual == 0 {
            continue;
        }
        let predicted: usize = confusion.iter().map(|r| r[c]).sum();
        let tp = confusion[c][c] as f64;
        f1.push(if tp == 0.0 {
            0.0
        } else {
            2.0 * tp / (actual + predicted) as f64
        });
    }
    Ok(EvalReport {
        accuracy: correct as f64 / n as f64,
        per_class_accuracy,
        confusion,
        macro_f1: f1.iter().sum::<f64>() / f1.len() as f64,
        lambda_eff,
        n_test: n,
    })
}

/// Evaluates against test rows that are already embedded.
pub fn evaluate_embedded(
    ds: &DistilledSet,
    test_embedded: ArrayView2<'_, f64>,
    labels: &[usize],
    kernel: &KernelConfig,
    lambda_base: f64,
) -> Result<EvalReport> {
    if test_embedded.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} test rows for {} labels",
            test_embedded.nrows(),
            labels.len()
        )));
    }
    let (scores, lambda_eff) = krr_scores_embedded(ds, test_embedded, kernel, lambda_base)?;
    report(&argmax_rows(scores.view()), labels, ds.num_classes, lambda_eff)
}

pub fn evaluate(
    ds: &DistilledSet,
    test: &Dataset,
    kernel: &KernelConfig,
    lambda_base: f64,
) -> Result<EvalReport> {
    if test.num_classes > ds.num_classes {
        return Err(Error::Shape(format!(
            "test set has {} classes, distilled set {}",
            test.num_classes, ds.num_classes
        )));
    }
    let emb = kernel.embed_rows(test.features.view())?;
    evaluate_embedded(ds, emb.view(), &test.labels, kernel, lambda_base)
}
