//! Kernel inducing points: the distilled set, the KRR loss and its
//! per-target gradients with respect to the distilled points.
//!
//! With `A = (K_ss + lambda I)^{-1}`, `alpha = A Y_s` and residual
//! `r_l = y_l - alpha^T k_l`, the loss of target `l` is `|r_l|^2`. Writing
//! `w_l = alpha r_l` and `beta_l = A k_l`, its gradient with respect to
//! support point `i` is
//!
//! ```text
//! -2 w_li grad1 k(x_i, t_l) + 2 sum_j (beta_li w_lj + w_li beta_lj) grad1 k(x_i, x_j)
//! ```
//!
//! For the scattering kernel `grad1 k(x_i, y) = J_i^T phi(y)`, so the whole
//! expression collapses into one reverse pass per `(l, i)` pair.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{GramMatrix, ImageShape, KernelConfig, Linearized, ScatterKernel};
use crate::linalg::SpdSolver;
use crate::scatternet::{AdjointMaps, Workspace};

/// The learnable synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DistilledSet {
    /// `m x D` learnable points.
    pub points: Array2<f64>,
    /// `m x num_classes` one-hot labels, fixed.
    pub labels: Array2<f64>,
    /// `true` marks a frozen coordinate.
    pub mask: Option<Array2<bool>>,
    pub shape: Option<ImageShape>,
    pub num_classes: usize,
}

impl DistilledSet {
    pub fn new(
        points: Array2<f64>,
        labels: Array2<f64>,
        mask: Option<Array2<bool>>,
        shape: Option<ImageShape>,
    ) -> Result<Self> {
        let (m, d) = points.dim();
        if m == 0 || d == 0 {
            return Err(Error::Shape("distilled set must be non-empty".into()));
        }
        if labels.nrows() != m {
            return Err(Error::Shape(format!("{} labels for {m} points", labels.nrows())));
        }
        for (i, row) in labels.axis_iter(Axis(0)).enumerate() {
            let ones = row.iter().filter(|v| **v == 1.0).count();
            let zeros = row.iter().filter(|v| **v == 0.0).count();
            if ones != 1 || ones + zeros != row.len() {
                return Err(Error::InvalidArgument(format!("label row {i} is not one-hot")));
            }
        }
        if let Some(mk) = &mask {
            if mk.dim() != (m, d) {
                return Err(Error::Shape(format!("mask {:?} for points {:?}", mk.dim(), (m, d))));
            }
        }
        if let Some(sh) = shape {
            if sh.len() != d {
                return Err(Error::Shape(format!("image shape {sh:?} for dimension {d}")));
            }
        }
        let num_classes = labels.ncols();
        Ok(Self {
            points,
            labels,
            mask,
            shape,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// Class index of support point `i`.
    pub fn class_of(&self, i: usize) -> usize {
        self.labels
            .row(i)
            .iter()
            .position(|v| *v == 1.0)
            .expect("labels are one-hot")
    }

    pub fn frozen_count(&self) -> usize {
        self.mask
            .as_ref()
            .map_or(0, |m| m.iter().filter(|v| **v).count())
    }

    /// Zeroes the frozen coordinates of a flattened `m * D` vector.
    pub fn apply_mask(&self, flat: &mut [f64]) {
        if let Some(mask) = &self.mask {
            for (g, frozen) in flat.iter_mut().zip(mask.iter()) {
                if *frozen {
                    *g = 0.0;
                }
            }
        }
    }
}

/// Random support set: i.i.d. standard normal points, labels in balanced
/// blocks, and optionally `floor(corrupt_fraction * D)` frozen coordinates per point.
pub fn init_distilled(
    m: usize,
    d: usize,
    num_classes: usize,
    imgs_per_class: usize,
    seed: u64,
    corrupt_fraction: f64,
) -> Result<DistilledSet> {
    if num_classes == 0 || imgs_per_class == 0 || d == 0 {
        return Err(Error::InvalidArgument(
            "need at least one class, one image per class and one feature".into(),
        ));
    }
    if !m.is_multiple_of(num_classes) || m != imgs_per_class * num_classes {
        return Err(Error::InvalidArgument(format!(
            "m = {m} must equal imgs_per_class ({imgs_per_class}) * classes ({num_classes})"
        )));
    }
    if !(0.0..1.0).contains(&corrupt_fraction) {
        return Err(Error::InvalidArgument(format!(
            "corrupt_fraction must lie in [0, 1), got {corrupt_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Array2::zeros((m, d));
    for v in points.iter_mut() {
        *v = StandardNormal.sample(&mut rng);
    }
    let mut labels = Array2::zeros((m, num_classes));
    for i in 0..m {
        labels[[i, i / imgs_per_class]] = 1.0;
    }
    let frozen = (corrupt_fraction * d as f64).floor() as usize;
    let mask = if frozen > 0 {
        let mut mask = Array2::from_elem((m, d), false);
        for i in 0..m {
            for j in index::sample(&mut rng, d, frozen) {
                mask[[i, j]] = true;
                points[[i, j]] = StandardNormal.sample(&mut rng);
            }
        }
        Some(mask)
    } else {
        None
    };
    Ok(DistilledSet {
        points,
        labels,
        mask,
        shape: None,
        num_classes,
    })
}

/// A subsample of the target data, optionally with cached kernel embeddings.
#[derive(Debug, Clone)]
pub struct TargetBatch {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub indices: Vec<usize>,
    /// Rows of `KernelConfig::embed_rows(x)`, when precomputed.
    pub embedded: Option<Array2<f64>>,
}

impl TargetBatch {
    pub fn new(x: Array2<f64>, y: Array2<f64>, indices: Vec<usize>) -> Result<Self> {
        if x.nrows() != y.nrows() || x.nrows() != indices.len() {
            return Err(Error::Shape(format!(
                "batch with {} inputs, {} labels, {} indices",
                x.nrows(),
                y.nrows(),
                indices.len()
            )));
        }
        Ok(Self {
            x,
            y,
            indices,
            embedded: None,
        })
    }

    /// Gathers rows `indices` of `x`, `y` and, when given, cached embeddings.
    pub fn gather(
        x: ArrayView2<'_, f64>,
        y: ArrayView2<'_, f64>,
        embedded: Option<ArrayView2<'_, f64>>,
        indices: &[usize],
    ) -> Result<Self> {
        let n = x.nrows();
        if y.nrows() != n || embedded.is_some_and(|e| e.nrows() != n) {
            return Err(Error::Shape("inputs, labels and embeddings differ in length".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidArgument(format!("index {bad} out of range {n}")));
        }
        Ok(Self {
            x: x.select(Axis(0), indices),
            y: y.select(Axis(0), indices),
            indices: indices.to_vec(),
            embedded: embedded.map(|e| e.select(Axis(0), indices)),
        })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    /// `|r_l|` for every target in the batch.
    pub residual_norms: Vec<f64>,
    pub lambda_eff: f64,
}

/// `(lambda_base / m) * trace(K_ss)`.
pub fn effective_lambda(k_ss: &GramMatrix, lambda_base: f64, m: usize) -> f64 {
    lambda_base / m as f64 * k_ss.trace()
}

fn check_compatible(ds: &DistilledSet, batch: &TargetBatch, kernel: &KernelConfig) -> Result<()> {
    kernel.validate()?;
    if batch.is_empty() {
        return Err(Error::InvalidArgument("target batch is empty".into()));
    }
    if batch.x.ncols() != ds.dim() {
        return Err(Error::Shape(format!(
            "targets have {} features, distilled points {}",
            batch.x.ncols(),
            ds.dim()
        )));
    }
    if batch.y.ncols() != ds.num_classes {
        return Err(Error::Shape(format!(
            "targets have {} label columns, distilled set {} classes",
            batch.y.ncols(),
            ds.num_classes
        )));
    }
    if let Some(e) = &batch.embedded {
        if e.dim() != (batch.len(), kernel.embedding_len(ds.dim())) {
            return Err(Error::Shape("cached target embeddings have the wrong shape".into()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
enum Ridge {
    /// `lambda_base`, scaled by the mean diagonal of `K_ss`.
    Relative(f64),
    /// `lambda_eff` used as is.
    Fixed(f64),
}

/// Quantities shared by the loss and all gradient computations of one step.
struct Step<'k> {
    lins: Vec<Linearized<'k>>,
    emb_s: Array2<f64>,
    emb_t: Array2<f64>,
    /// `(K_ss + lambda I)^{-1} k_l` as rows, `B x m`.
    beta: Array2<f64>,
    /// `alpha r_l` as rows, `B x m`.
    w: Array2<f64>,
    residuals: Array2<f64>,
    lambda_eff: f64,
}

fn prepare<'k>(
    ds: &DistilledSet,
    batch: &TargetBatch,
    kernel: &'k KernelConfig,
    ridge: Ridge,
    linearize: bool,
) -> Result<Step<'k>> {
    check_compatible(ds, batch, kernel)?;
    let (Ridge::Relative(lam) | Ridge::Fixed(lam)) = ridge;
    if !(lam >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lam}")));
    }
    let m = ds.len();
    let (lins, emb_s) = if linearize {
        let lins = (0..m)
            .into_par_iter()
            .map(|i| kernel.linearize(ds.points.row(i).as_slice().expect("standard layout")))
            .collect::<Result<Vec<_>>>()?;
        let e = lins[0].embedding().len();
        let mut emb = Array2::zeros((m, e));
        for (i, lin) in lins.iter().enumerate() {
            emb.row_mut(i).assign(&Array1::from(lin.embedding().to_vec()));
        }
        (lins, emb)
    } else {
        (Vec::new(), kernel.embed_rows(ds.points.view())?)
    };
    let emb_t = match &batch.embedded {
        Some(e) => e.clone(),
        None => kernel.embed_rows(batch.x.view())?,
    };
    let k_ss = kernel.gram_embedded(emb_s.view(), emb_s.view(), true)?;
    let k_ts = kernel.gram_embedded(emb_t.view(), emb_s.view(), false)?.entries;
    let lambda_eff = match ridge {
        Ridge::Relative(base) => effective_lambda(&k_ss, base, m),
        Ridge::Fixed(lam) => lam,
    };
    let solver = SpdSolver::factor(k_ss.entries.view(), lambda_eff)?;
    let alpha = solver.solve(ds.labels.view());
    let residuals = &batch.y - &k_ts.dot(&alpha);
    let w = residuals.dot(&alpha.t());
    let beta = solver.solve(k_ts.t()).reversed_axes();
    Ok(Step {
        lins,
        emb_s,
        emb_t,
        beta,
        w,
        residuals,
        lambda_eff,
    })
}

/// Sum over the batch of squared KRR residuals.
pub fn krr_loss(
    ds: &DistilledSet,
    batch: &TargetBatch,
    kernel: &KernelConfig,
    lambda_base: f64,
) -> Result<LossReport> {
    let step = prepare(ds, batch, kernel, Ridge::Relative(lambda_base), false)?;
    Ok(report(&step))
}

/// [`krr_loss`] with the ridge `lambda_eff` given directly instead of
/// derived from the trace of `K_ss`.
pub fn krr_loss_fixed_ridge(
    ds: &DistilledSet,
    batch: &TargetBatch,
    kernel: &KernelConfig,
    lambda_eff: f64,
) -> Result<LossReport> {
    let step = prepare(ds, batch, kernel, Ridge::Fixed(lambda_eff), false)?;
    Ok(report(&step))
}

fn report(step: &Step<'_>) -> LossReport {
    let residual_norms: Vec<f64> = step
        .residuals
        .axis_iter(Axis(0))
        .map(|r| r.dot(&r).sqrt())
        .collect();
    LossReport {
        loss: residual_norms.iter().map(|r| r * r).sum(),
        residual_norms,
        lambda_eff: step.lambda_eff,
    }
}

/// Gradient of each target's squared residual with respect to the flattened
/// support set, `B x (m D)`, with frozen coordinates zeroed.
pub fn per_sample_gradients(
    ds: &DistilledSet,
    batch: &TargetBatch,
    kernel: &KernelConfig,
    lambda_base: f64,
) -> Result<Array2<f64>> {
    Ok(per_sample_gradients_with_loss(ds, batch, kernel, lambda_base)?.0)
}

/// [`per_sample_gradients`] together with the batch loss evaluated at the same point.
pub fn per_sample_gradients_with_loss(
    ds: &DistilledSet,
    batch: &TargetBatch,
    kernel: &KernelConfig,
    lambda_base: f64,
) -> Result<(Array2<f64>, LossReport)> {
    let step = prepare(ds, batch, kernel, Ridge::Relative(lambda_base), true)?;
    let mut grads = if kernel.is_feature_linear() {
        feature_rows(ds, &step)?
    } else {
        generic_rows(ds, &step)?
    };
    if ds.mask.is_some() {
        for mut row in grads.axis_iter_mut(Axis(0)) {
            ds.apply_mask(row.as_slice_mut().expect("standard layout"));
        }
    }
    Ok((grads, report(&step)))
}

/// Gradient of the summed batch loss, `m D`, with frozen coordinates zeroed.
///
/// Equal to the column sum of [`per_sample_gradients`] but much cheaper for
/// the scattering kernel, since the reverse pass is linear in its cotangent.
pub fn loss_gradient(
    ds: &DistilledSet,
    batch: &TargetBatch,
    kernel: &KernelConfig,
    lambda_base: f64,
) -> Result<(Vec<f64>, LossReport)> {
    let step = prepare(ds, batch, kernel, Ridge::Relative(lambda_base), true)?;
    let mut grad = if kernel.is_feature_linear() {
        feature_sum(ds, &step)?
    } else {
        generic_rows(ds, &step)?.sum_axis(Axis(0)).to_vec()
    };
    ds.apply_mask(&mut grad);
    Ok((grad, report(&step)))
}

fn generic_rows(ds: &DistilledSet, step: &Step<'_>) -> Result<Array2<f64>> {
    let (m, d) = (ds.len(), ds.dim());
    let b = step.w.nrows();
    let blocks = (0..m)
        .into_par_iter()
        .map(|i| -> Result<Array2<f64>> {
            let lin = &step.lins[i];
            let mut h = Array2::zeros((m, d));
            for j in 0..m {
                let hj = h.row_mut(j).into_slice().expect("standard layout");
                lin.add_grad(step.emb_s.row(j).as_slice().expect("standard layout"), 1.0, hj)?;
            }
            let mut block = step.w.dot(&h) * step.beta.column(i).insert_axis(Axis(1));
            block.scaled_add(1.0, &(step.beta.dot(&h) * step.w.column(i).insert_axis(Axis(1))));
            block *= 2.0;
            for l in 0..b {
                let coef = -2.0 * step.w[[l, i]];
                let row = block.row_mut(l).into_slice().expect("standard layout");
                lin.add_grad(step.emb_t.row(l).as_slice().expect("standard layout"), coef, row)?;
            }
            Ok(block)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Array2::zeros((b, m * d));
    for (i, block) in blocks.into_iter().enumerate() {
        out.slice_mut(s![.., i * d..(i + 1) * d]).assign(&block);
    }
    Ok(out)
}

fn scatter_parts<'k>(step: &Step<'k>) -> &'k ScatterKernel {
    match &step.lins[0] {
        Linearized::Scatter { kernel, .. } => kernel,
        Linearized::Point { .. } => unreachable!("feature path requires a scattering kernel"),
    }
}

fn feature_rows(ds: &DistilledSet, step: &Step<'_>) -> Result<Array2<f64>> {
    let (m, d) = (ds.len(), ds.dim());
    let sk = scatter_parts(step);
    let channels = sk.shape.channels;
    let u = step.w.dot(&step.emb_s);
    let v = step.beta.dot(&step.emb_s);
    let rows = (0..step.w.nrows())
        .into_par_iter()
        .map_init(
            || Workspace::new(&sk.bank),
            |ws, l| -> Result<Vec<f64>> {
                let target = (&v.row(l) - &step.emb_t.row(l)).to_vec();
                let p = AdjointMaps::new_with(&sk.bank, &target, channels, ws)?;
                let q = AdjointMaps::new_with(
                    &sk.bank,
                    u.row(l).as_slice().expect("standard layout"),
                    channels,
                    ws,
                )?;
                let mut row = vec![0.0; m * d];
                for (i, lin) in step.lins.iter().enumerate() {
                    let tape = lin.tape().expect("scattering linearization");
                    let terms = [(2.0 * step.w[[l, i]], &p), (2.0 * step.beta[[l, i]], &q)];
                    tape.vjp_combination(&terms, &mut row[i * d..(i + 1) * d], ws);
                }
                Ok(row)
            },
        )
        .collect::<Result<Vec<_>>>()?;
    let mut out = Array2::zeros((rows.len(), m * d));
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(rows) {
        dst.assign(&Array1::from(src));
    }
    Ok(out)
}

fn feature_sum(ds: &DistilledSet, step: &Step<'_>) -> Result<Vec<f64>> {
    let (m, d) = (ds.len(), ds.dim());
    let sk = scatter_parts(step);
    let channels = sk.shape.channels;
    // Cotangent of support i summed over targets:
    // 2 sum_l [w_li (v_l - phi_l) + beta_li u_l] with u = W Phi_s, v = Beta Phi_s.
    let u = step.w.dot(&step.emb_s);
    let v = step.beta.dot(&step.emb_s);
    let cot = 2.0 * (step.w.t().dot(&(&v - &step.emb_t)) + step.beta.t().dot(&u));
    let blocks = (0..m)
        .into_par_iter()
        .map_init(
            || Workspace::new(&sk.bank),
            |ws, i| -> Result<Vec<f64>> {
                let maps = AdjointMaps::new_with(
                    &sk.bank,
                    cot.row(i).as_slice().expect("standard layout"),
                    channels,
                    ws,
                )?;
                let mut g = vec![0.0; d];
                let tape = step.lins[i].tape().expect("scattering linearization");
                tape.vjp_combination(&[(1.0, &maps)], &mut g, ws);
                Ok(g)
            },
        )
        .collect::<Result<Vec<_>>>()?;
    Ok(blocks.concat())
}

/// KRR predictions `k_ts alpha` for a batch, `B x num_classes`.
pub fn predict_batch(
    ds: &DistilledSet,
    batch: &TargetBatch,
    kernel: &KernelConfig,
    lambda_base: f64,
) -> Result<Array2<f64>> {
    let step = prepare(ds, batch, kernel, Ridge::Relative(lambda_base), false)?;
    Ok(&batch.y - &step.residuals)
}
