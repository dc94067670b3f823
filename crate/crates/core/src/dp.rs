//! DP-SGD mechanics: Poisson subsampling, per-sample clipping, Gaussian
//! noising and the optimizer step on the distilled set.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kip::DistilledSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipConfig {
    clip_norm: f64,
}

impl ClipConfig {
    pub fn new(clip_norm: f64) -> Result<Self> {
        if !(clip_norm > 0.0) || !clip_norm.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "clip norm must be positive and finite, got {clip_norm}"
            )));
        }
        Ok(Self { clip_norm })
    }

    pub fn clip_norm(&self) -> f64 {
        self.clip_norm
    }
}

/// Sampling schedule of a run: rate `q = B / n`, the data-independent
/// divisor `B_nominal = ceil(q n)`, and `T = epochs * ceil(n / B)` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub q: f64,
    pub nominal_batch: usize,
    pub steps: usize,
}

impl Schedule {
    pub fn new(n: usize, batch_size: usize, epochs: usize) -> Result<Self> {
        if n == 0 || batch_size == 0 || epochs == 0 {
            return Err(Error::InvalidArgument(format!(
                "need n, batch size and epochs >= 1 (got {n}, {batch_size}, {epochs})"
            )));
        }
        let b = batch_size.min(n);
        let q = b as f64 / n as f64;
        Ok(Self {
            q,
            nominal_batch: (q * n as f64).ceil() as usize,
            steps: epochs * n.div_ceil(b),
        })
    }
}

/// Includes each of `0..n` independently with probability `q`.
pub fn poisson_sample<R: Rng + ?Sized>(n: usize, q: f64, rng: &mut R) -> Vec<usize> {
    if q >= 1.0 {
        return (0..n).collect();
    }
    (0..n).filter(|_| rng.random::<f64>() < q).collect()
}

/// Rescales every row to L2 norm at most `c`; returns the pre-clip norms.
/// Rows already within the bound are left untouched.
pub fn clip_rows_in_place(g: &mut Array2<f64>, clip: ClipConfig) -> Vec<f64> {
    let c = clip.clip_norm;
    g.axis_iter_mut(Axis(0))
        .map(|mut row| {
            let norm = row.dot(&row).sqrt();
            if norm > c {
                let scale = c / norm;
                row.mapv_inplace(|v| v * scale);
                // Rounding can leave the norm a hair above c.
                let after = row.dot(&row).sqrt();
                if after > c {
                    let fix = c / after;
                    row.mapv_inplace(|v| v * fix);
                }
            }
            norm
        })
        .collect()
}

/// `g_l / max(1, |g_l| / C)` for every row.
pub fn clip_rows(g: ArrayView2<'_, f64>, clip: ClipConfig) -> Array2<f64> {
    let mut out = g.to_owned();
    clip_rows_in_place(&mut out, clip);
    out
}

/// A privatized (or explicitly non-private) gradient sum. The optimizer only
/// accepts this type, so raw per-sample gradients cannot reach an update.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyGradient(Vec<f64>);

impl NoisyGradient {
    /// Wraps an un-noised gradient for the non-private baseline.
    pub fn non_private(sum: Vec<f64>) -> Self {
        Self(sum)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Column sum of the clipped rows plus `N(0, (sigma C)^2)` per coordinate.
pub fn noisy_sum<R: Rng + ?Sized>(
    g_clipped: ArrayView2<'_, f64>,
    sigma: f64,
    clip: ClipConfig,
    rng: &mut R,
) -> Result<NoisyGradient> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
    }
    let mut sum = g_clipped.sum_axis(Axis(0)).to_vec();
    if sigma > 0.0 {
        let std = sigma * clip.clip_norm;
        for v in sum.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += std * z;
        }
    }
    Ok(NoisyGradient(sum))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd {
        learning_rate: f64,
    },
    Adam {
        learning_rate: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Optimizer {
    pub fn adam(learning_rate: f64) -> Self {
        Optimizer::Adam {
            learning_rate,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        match self {
            Optimizer::Sgd { learning_rate } | Optimizer::Adam { learning_rate, .. } => {
                *learning_rate
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Optimizer::Sgd { learning_rate } => learning_rate >= 0.0,
            Optimizer::Adam {
                learning_rate,
                beta1,
                beta2,
                eps,
            } => {
                learning_rate >= 0.0
                    && (0.0..1.0).contains(&beta1)
                    && (0.0..1.0).contains(&beta2)
                    && eps > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid optimizer settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub optimizer: Optimizer,
    first: Option<Array2<f64>>,
    second: Option<Array2<f64>>,
    step: u64,
}

impl OptimizerState {
    /// Fresh state for an `m x D` distilled set.
    pub fn new(optimizer: Optimizer, m: usize, d: usize) -> Result<Self> {
        optimizer.validate()?;
        let (first, second) = match optimizer {
            Optimizer::Sgd { .. } => (None, None),
            Optimizer::Adam { .. } => (Some(Array2::zeros((m, d))), Some(Array2::zeros((m, d)))),
        };
        Ok(Self {
            optimizer,
            first,
            second,
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}

/// One optimizer step with gradient `g_tilde / nominal_batch`. Frozen
/// coordinates (and their moments) are never touched.
pub fn apply_update(
    state: &mut OptimizerState,
    ds: &mut DistilledSet,
    g_tilde: &NoisyGradient,
    nominal_batch: usize,
) -> Result<()> {
    let (m, d) = ds.points.dim();
    if g_tilde.len() != m * d {
        return Err(Error::Shape(format!(
            "gradient of length {} for a {m}x{d} distilled set",
            g_tilde.len()
        )));
    }
    if nominal_batch == 0 {
        return Err(Error::InvalidArgument("nominal batch size must be >= 1".into()));
    }
    if let Some(f) = &state.first {
        if f.dim() != (m, d) {
            return Err(Error::Shape("optimizer moments do not match the distilled set".into()));
        }
    }
    let inv_b = 1.0 / nominal_batch as f64;
    state.step += 1;
    let mask = ds.mask.as_ref().map(|mk| mk.as_slice().expect("standard layout"));
    let frozen = |idx: usize| mask.is_some_and(|mk| mk[idx]);
    let points = ds.points.as_slice_mut().expect("standard layout");
    match state.optimizer {
        Optimizer::Sgd { learning_rate } => {
            for (idx, (x, g)) in points.iter_mut().zip(g_tilde.as_slice()).enumerate() {
                if !frozen(idx) {
                    *x -= learning_rate * g * inv_b;
                }
            }
        }
        Optimizer::Adam {
            learning_rate,
            beta1,
            beta2,
            eps,
        } => {
            let t = state.step as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            let first = state.first.as_mut().expect("adam state").as_slice_mut().expect("standard layout");
            let second = state.second.as_mut().expect("adam state").as_slice_mut().expect("standard layout");
            for idx in 0..m * d {
                if frozen(idx) {
                    continue;
                }
                let g = g_tilde.as_slice()[idx] * inv_b;
                first[idx] = beta1 * first[idx] + (1.0 - beta1) * g;
                second[idx] = beta2 * second[idx] + (1.0 - beta2) * g * g;
                let mh = first[idx] / c1;
                let vh = second[idx] / c2;
                points[idx] -= learning_rate * mh / (vh.sqrt() + eps);
            }
        }
    }
    Ok(())
}
