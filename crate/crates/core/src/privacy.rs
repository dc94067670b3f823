//! Rényi-DP accounting for the Poisson-subsampled Gaussian mechanism.
//!
//! Per-step RDP at integer order `alpha` uses the binomial expansion
//!
//! ```text
//! eps(alpha) = log( sum_k C(alpha,k) (1-q)^(alpha-k) q^k exp(k(k-1) / (2 sigma^2)) ) / (alpha - 1)
//! ```
//!
//! which composes additively over steps and converts to `(eps, delta)` by
//! minimizing `eps(alpha) + log(1/delta) / (alpha - 1)` over the order grid.

use crate::error::{Error, Result};

/// Bound on `|phi(x) - phi(x')|` for unit-norm feature maps.
pub const FEATURE_MAP_SENSITIVITY: f64 = 2.0;

/// Relative width at which sigma calibration stops.
const CALIBRATION_TOL: f64 = 1e-7;
const CALIBRATION_MAX_STEPS: usize = 200;

/// Default order grid `2..=256`.
pub fn default_orders() -> Vec<u32> {
    (2..=256).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {epsilon}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
        }
        Ok(Self { epsilon, delta })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccountantConfig {
    pub q: f64,
    pub sigma: f64,
    pub steps: u64,
    pub orders: Vec<u32>,
}

impl AccountantConfig {
    pub fn new(q: f64, sigma: f64, steps: u64) -> Result<Self> {
        let cfg = Self {
            q,
            sigma,
            steps,
            orders: default_orders(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(Error::InvalidArgument(format!("q must lie in (0, 1], got {}", self.q)));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if self.steps == 0 {
            return Err(Error::InvalidArgument("at least one step is required".into()));
        }
        if self.orders.is_empty() || self.orders.iter().any(|&a| a < 2) {
            return Err(Error::InvalidArgument("orders must be a nonempty list of integers >= 2".into()));
        }
        Ok(())
    }

    /// The composed curve over all `steps`.
    pub fn curve(&self) -> Result<RdpCurve> {
        self.validate()?;
        let per_step = RdpCurve {
            points: self
                .orders
                .iter()
                .map(|&a| (a as f64, subsampled_gaussian_rdp(a, self.q, self.sigma)))
                .collect(),
        };
        Ok(compose(&per_step, self.steps))
    }

    pub fn epsilon(&self, delta: f64) -> Result<DpGuarantee> {
        rdp_to_dp(&self.curve()?, delta)
    }
}

/// `(alpha, eps_RDP(alpha))` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct RdpCurve {
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpGuarantee {
    pub epsilon: f64,
    /// Order at which the conversion is tightest.
    pub order: f64,
}

/// RDP of the Gaussian mechanism with unit sensitivity: `alpha / (2 sigma^2)`.
pub fn gaussian_rdp(alpha: u32, sigma: f64) -> f64 {
    alpha as f64 / (2.0 * sigma * sigma)
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Per-step RDP of the Poisson-subsampled Gaussian at integer order `alpha`.
pub fn subsampled_gaussian_rdp(alpha: u32, q: f64, sigma: f64) -> f64 {
    debug_assert!(alpha >= 2);
    if q >= 1.0 {
        return gaussian_rdp(alpha, sigma);
    }
    let a = alpha as f64;
    let (lq, l1q) = (q.ln(), (-q).ln_1p());
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut log_binom = 0.0;
    let mut acc = f64::NEG_INFINITY;
    for k in 0..=alpha {
        let kf = k as f64;
        if k > 0 {
            log_binom += ((a - kf + 1.0) / kf).ln();
        }
        let term = log_binom + (a - kf) * l1q + kf * lq + kf * (kf - 1.0) * inv;
        acc = log_add(acc, term);
    }
    (acc / (a - 1.0)).max(0.0)
}

/// Composition over `t` steps: every order's RDP is multiplied by `t`.
pub fn compose(curve: &RdpCurve, t: u64) -> RdpCurve {
    RdpCurve {
        points: curve.points.iter().map(|&(a, e)| (a, e * t as f64)).collect(),
    }
}

/// `min_alpha eps_RDP(alpha) + log(1/delta) / (alpha - 1)`.
pub fn rdp_to_dp(curve: &RdpCurve, delta: f64) -> Result<DpGuarantee> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
    }
    let log_inv = -delta.ln();
    curve
        .points
        .iter()
        .map(|&(a, e)| DpGuarantee {
            epsilon: e + log_inv / (a - 1.0),
            order: a,
        })
        .min_by(|x, y| x.epsilon.total_cmp(&y.epsilon))
        .ok_or_else(|| Error::InvalidArgument("empty RDP curve".into()))
}

/// `(eps, delta)` spent by `steps` Poisson-subsampled Gaussian steps.
pub fn account(q: f64, sigma: f64, steps: u64, delta: f64) -> Result<DpGuarantee> {
    AccountantConfig::new(q, sigma, steps)?.epsilon(delta)
}

/// Smallest noise multiplier (to relative precision 1e-7) whose accounted
/// epsilon does not exceed the target.
pub fn calibrate_sigma(target: PrivacyParams, q: f64, steps: u64) -> Result<f64> {
    let eps_at = |s: f64| account(q, s, steps, target.delta).map(|g| g.epsilon);
    let mut lo = 1e-2;
    let mut hi = 1.0;
    let mut iters = 0;
    while eps_at(hi)? > target.epsilon {
        lo = hi;
        hi *= 2.0;
        iters += 1;
        if iters > 60 {
            return Err(Error::Calibration { lo, hi });
        }
    }
    while eps_at(lo)? <= target.epsilon {
        hi = lo;
        lo /= 2.0;
        iters += 1;
        if lo < 1e-6 || iters > 120 {
            // Any sigma in this range is private enough; return the bracket top.
            return Ok(hi);
        }
    }
    for _ in 0..CALIBRATION_MAX_STEPS {
        if hi / lo - 1.0 <= CALIBRATION_TOL {
            return Ok(hi);
        }
        let mid = (lo * hi).sqrt();
        if eps_at(mid)? <= target.epsilon {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Err(Error::Calibration { lo, hi })
}

/// Signal-to-noise ratio of a privatized unit-norm feature map, `1 / (2 sigma)`.
pub fn feature_map_snr(sigma: f64) -> f64 {
    1.0 / (FEATURE_MAP_SENSITIVITY * sigma)
}
