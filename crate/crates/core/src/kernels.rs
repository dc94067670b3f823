//! Kernel evaluation and input gradients.
//!
//! Three kernels are supported: the infinite-width fully-connected ReLU NTK
//! (closed-form arc-cosine recursion), the linear kernel on scattering
//! features, and a Gaussian RBF. Every kernel exposes `k(x, y)` and the
//! gradient with respect to its first argument.

use std::borrow::Cow;
use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scatternet::{
    feature_len, scatter_features_with, AdjointMaps, FilterBank, ScatterTape, Workspace,
};

/// Inputs whose normalized squared norm falls below this are rejected by the NTK.
const MIN_VARIANCE: f64 = 1e-30;
/// `u` is kept this far from +-1 when differentiating `kappa0`.
const GRAD_CLAMP: f64 = 1e-7;

fn unit_interval(op: &'static str, u: f64) -> Result<f64> {
    if !(u.abs() <= 1.0 + 1e-9) {
        return Err(Error::Domain {
            op,
            value: u,
            lo: -1.0,
            hi: 1.0,
        });
    }
    Ok(u.clamp(-1.0, 1.0))
}

/// Arc-cosine kernel of degree 0: `(pi - arccos u) / pi`.
pub fn kappa0(u: f64) -> Result<f64> {
    let u = unit_interval("kappa0", u)?;
    Ok((PI - u.acos()) / PI)
}

/// Arc-cosine kernel of degree 1: `(u (pi - arccos u) + sqrt(1 - u^2)) / pi`.
pub fn kappa1(u: f64) -> Result<f64> {
    let u = unit_interval("kappa1", u)?;
    Ok((u * (PI - u.acos()) + (1.0 - u * u).max(0.0).sqrt()) / PI)
}

fn kappa0_slope(u: f64) -> f64 {
    let u = u.clamp(-1.0 + GRAD_CLAMP, 1.0 - GRAD_CLAMP);
    1.0 / (PI * (1.0 - u * u).sqrt())
}

fn ntk_variances(x: &[f64], x2: &[f64]) -> Result<(f64, f64, f64)> {
    if x.len() != x2.len() || x.is_empty() {
        return Err(Error::Shape(format!(
            "NTK inputs of length {} and {}",
            x.len(),
            x2.len()
        )));
    }
    let d = x.len() as f64;
    let a = x.iter().map(|v| v * v).sum::<f64>() / d;
    let b = x2.iter().map(|v| v * v).sum::<f64>() / d;
    if !(a > MIN_VARIANCE) || !(b > MIN_VARIANCE) {
        return Err(Error::Degenerate(format!(
            "NTK input variance {:e} / {:e} is not positive",
            a, b
        )));
    }
    let c = x.iter().zip(x2).map(|(p, q)| p * q).sum::<f64>() / d;
    Ok((a, b, c))
}

/// Infinite-width fully-connected ReLU NTK with `depth` hidden layers.
///
/// `Sigma^0 = x.x2 / D`, and for each layer
/// `Sigma^h = sqrt(Sigma(x,x) Sigma(x2,x2)) kappa1(u)`,
/// `Theta^h = Sigma^h + Theta^{h-1} kappa0(u)`, with `u` the normalized
/// previous covariance. The diagonal covariances are preserved by every layer.
pub fn fc_ntk(x: &[f64], x2: &[f64], depth: usize) -> Result<f64> {
    if depth == 0 {
        return Err(Error::InvalidArgument("NTK depth must be >= 1".into()));
    }
    let (a, b, mut cov) = ntk_variances(x, x2)?;
    let scale = (a * b).sqrt();
    let mut theta = cov;
    for _ in 0..depth {
        let u = cov / scale;
        let k0 = kappa0(u)?;
        cov = scale * kappa1(u)?;
        theta = cov + theta * k0;
    }
    Ok(theta)
}

/// Gradient of [`fc_ntk`] with respect to its first argument.
pub fn fc_ntk_grad(x: &[f64], x2: &[f64], depth: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x.len()];
    fc_ntk_grad_into(x, x2, depth, 1.0, &mut out)?;
    Ok(out)
}

/// `out += scale * d fc_ntk(x, x2) / dx`.
fn fc_ntk_grad_into(x: &[f64], x2: &[f64], depth: usize, scale_out: f64, out: &mut [f64]) -> Result<()> {
    if depth == 0 {
        return Err(Error::InvalidArgument("NTK depth must be >= 1".into()));
    }
    let (a, b, mut cov) = ntk_variances(x, x2)?;
    let d = x.len() as f64;
    let scale = (a * b).sqrt();
    // Every gradient below is a combination of x and x2, so track the two coefficients.
    let ds = (b / (scale * d), 0.0);
    let mut dcov = (0.0, 1.0 / d);
    let mut theta = cov;
    let mut dtheta = dcov;
    for _ in 0..depth {
        let u = cov / scale;
        let du = (
            dcov.0 / scale - cov * ds.0 / (scale * scale),
            dcov.1 / scale - cov * ds.1 / (scale * scale),
        );
        let k0 = kappa0(u)?;
        let k1 = kappa1(u)?;
        let slope = kappa0_slope(u);
        let new_cov = scale * k1;
        let new_dcov = (ds.0 * k1 + scale * k0 * du.0, ds.1 * k1 + scale * k0 * du.1);
        let new_theta = new_cov + theta * k0;
        let new_dtheta = (
            new_dcov.0 + dtheta.0 * k0 + theta * slope * du.0,
            new_dcov.1 + dtheta.1 * k0 + theta * slope * du.1,
        );
        cov = new_cov;
        dcov = new_dcov;
        theta = new_theta;
        dtheta = new_dtheta;
    }
    for ((o, p), q) in out.iter_mut().zip(x).zip(x2) {
        *o += scale_out * (dtheta.0 * p + dtheta.1 * q);
    }
    Ok(())
}

/// Gaussian kernel `exp(-|x - y|^2 / (2 h^2))`.
pub fn rbf(x: &[f64], y: &[f64], bandwidth: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
    (-d2 / (2.0 * bandwidth * bandwidth)).exp()
}

fn rbf_grad_into(x: &[f64], y: &[f64], bandwidth: f64, scale: f64, out: &mut [f64]) {
    let k = rbf(x, y, bandwidth);
    let f = -scale * k / (bandwidth * bandwidth);
    for ((o, p), q) in out.iter_mut().zip(x).zip(y) {
        *o += f * (p - q);
    }
}

/// Spatial layout of image-valued samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Linear kernel on scattering features, `k(x, y) = <phi(x), phi(y)>`.
#[derive(Debug, Clone)]
pub struct ScatterKernel {
    pub bank: Arc<FilterBank>,
    pub shape: ImageShape,
}

impl ScatterKernel {
    pub fn new(bank: Arc<FilterBank>, shape: ImageShape) -> Result<Self> {
        if bank.height() != shape.height || bank.width() != shape.width || shape.channels == 0 {
            return Err(Error::Shape(format!(
                "image shape {:?} is inconsistent with a {}x{} filter bank",
                shape,
                bank.height(),
                bank.width()
            )));
        }
        Ok(Self { bank, shape })
    }

    pub fn feature_len(&self) -> usize {
        feature_len(&self.bank, self.shape.channels)
    }
}

#[derive(Debug, Clone)]
pub enum KernelConfig {
    FcNtk { depth: usize },
    ScatterFeature(ScatterKernel),
    Rbf { bandwidth: f64 },
}

/// Serializable description of a [`KernelConfig`]; the filter bank of the
/// scattering kernel is rebuilt from `scales` and `orientations`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    FcNtk {
        depth: usize,
    },
    #[serde(rename = "scatternet")]
    Scatter {
        #[serde(rename = "J", default = "default_scales")]
        scales: usize,
        #[serde(rename = "L", default = "default_orientations")]
        orientations: usize,
    },
    Rbf {
        bandwidth: f64,
    },
}

fn default_scales() -> usize {
    2
}

fn default_orientations() -> usize {
    8
}

impl KernelSpec {
    /// Builds the kernel for inputs of the given image shape. Only the
    /// scattering kernel needs one.
    pub fn build(&self, shape: Option<ImageShape>) -> Result<KernelConfig> {
        let k = match *self {
            KernelSpec::FcNtk { depth } => KernelConfig::FcNtk { depth },
            KernelSpec::Rbf { bandwidth } => KernelConfig::Rbf { bandwidth },
            KernelSpec::Scatter {
                scales,
                orientations,
            } => {
                let shape = shape.ok_or_else(|| {
                    Error::InvalidArgument("the scatter kernel needs image-shaped data".into())
                })?;
                let bank = crate::scatternet::build_filter_bank(
                    shape.height,
                    shape.width,
                    scales,
                    orientations,
                )?;
                KernelConfig::ScatterFeature(ScatterKernel::new(Arc::new(bank), shape)?)
            }
        };
        k.validate()?;
        Ok(k)
    }
}

/// Dense kernel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub entries: Array2<f64>,
    /// Built from a single point set, hence exactly symmetric.
    pub symmetric: bool,
}

impl GramMatrix {
    pub fn trace(&self) -> f64 {
        self.entries.diag().sum()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.entries.dim()
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            KernelConfig::FcNtk { depth } if *depth == 0 => {
                Err(Error::InvalidArgument("NTK depth must be >= 1".into()))
            }
            KernelConfig::Rbf { bandwidth } if !(*bandwidth > 0.0) => Err(
                Error::InvalidArgument(format!("RBF bandwidth must be > 0, got {bandwidth}")),
            ),
            _ => Ok(()),
        }
    }

    /// Length of the representation produced by [`KernelConfig::embed_rows`]
    /// for inputs of dimension `input_dim`.
    pub fn embedding_len(&self, input_dim: usize) -> usize {
        match self {
            KernelConfig::ScatterFeature(sk) => sk.feature_len(),
            _ => input_dim,
        }
    }

    /// True when `k(x, y)` is linear in the embedding of `y`.
    pub fn is_feature_linear(&self) -> bool {
        matches!(self, KernelConfig::ScatterFeature(_))
    }

    fn check_input_dim(&self, d: usize) -> Result<()> {
        if let KernelConfig::ScatterFeature(sk) = self {
            if d != sk.shape.len() {
                return Err(Error::Shape(format!(
                    "input of dimension {d} does not match image shape {:?}",
                    sk.shape
                )));
            }
        }
        Ok(())
    }

    /// Maps raw rows to the representation the kernel is evaluated on:
    /// scattering features for the feature kernel, the rows themselves otherwise.
    pub fn embed_rows(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input_dim(x.ncols())?;
        match self {
            KernelConfig::ScatterFeature(sk) => {
                let flen = sk.feature_len();
                let rows: Vec<Vec<f64>> = (0..x.nrows())
                    .into_par_iter()
                    .map_init(
                        || Workspace::new(&sk.bank),
                        |ws, r| {
                            let row = x.row(r);
                            let flat: Cow<[f64]> = match row.as_slice() {
                                Some(s) => Cow::Borrowed(s),
                                None => Cow::Owned(row.to_vec()),
                            };
                            scatter_features_with(&sk.bank, &flat, sk.shape.channels, ws)
                        },
                    )
                    .collect::<Result<_>>()?;
                let mut out = Array2::zeros((x.nrows(), flen));
                for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(rows) {
                    dst.assign(&ndarray::ArrayView1::from(&src[..]));
                }
                Ok(out)
            }
            _ => Ok(x.to_owned()),
        }
    }

    /// Kernel value between two embedded points.
    pub fn eval_embedded(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::Shape(format!(
                "kernel arguments of length {} and {}",
                a.len(),
                b.len()
            )));
        }
        match self {
            KernelConfig::FcNtk { depth } => fc_ntk(a, b, *depth),
            KernelConfig::Rbf { bandwidth } => Ok(rbf(a, b, *bandwidth)),
            KernelConfig::ScatterFeature(_) => Ok(a.iter().zip(b).map(|(p, q)| p * q).sum()),
        }
    }

    /// Kernel value between two raw points.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let xs = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| Error::Shape(e.to_string()))?;
        let ys = ArrayView2::from_shape((1, y.len()), y)
            .map_err(|e| Error::Shape(e.to_string()))?;
        let ex = self.embed_rows(xs)?;
        let ey = self.embed_rows(ys)?;
        self.eval_embedded(ex.row(0).as_slice().unwrap(), ey.row(0).as_slice().unwrap())
    }

    /// Gram matrix between embedded row sets. With `symmetric`, `a` and `b`
    /// must be the same set; only the upper triangle is evaluated.
    pub fn gram_embedded(
        &self,
        a: ArrayView2<'_, f64>,
        b: ArrayView2<'_, f64>,
        symmetric: bool,
    ) -> Result<GramMatrix> {
        if a.ncols() != b.ncols() {
            return Err(Error::Shape(format!(
                "column counts differ: {} vs {}",
                a.ncols(),
                b.ncols()
            )));
        }
        let (n, m) = (a.nrows(), b.nrows());
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let ai = a.row(i);
                let ai = ai.as_slice().map(Cow::Borrowed).unwrap_or_else(|| Cow::Owned(ai.to_vec()));
                let start = if symmetric { i } else { 0 };
                (start..m)
                    .map(|j| {
                        let bj = b.row(j);
                        match bj.as_slice() {
                            Some(s) => self.eval_embedded(&ai, s),
                            None => self.eval_embedded(&ai, &bj.to_vec()),
                        }
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        let mut entries = Array2::zeros((n, m));
        for (i, row) in rows.into_iter().enumerate() {
            let start = if symmetric { i } else { 0 };
            for (off, v) in row.into_iter().enumerate() {
                let j = start + off;
                entries[[i, j]] = v;
                if symmetric {
                    entries[[j, i]] = v;
                }
            }
        }
        Ok(GramMatrix { entries, symmetric })
    }

    /// Linearizes the kernel's first argument at `x` for repeated gradient queries.
    pub fn linearize<'a>(&'a self, x: &[f64]) -> Result<Linearized<'a>> {
        self.check_input_dim(x.len())?;
        match self {
            KernelConfig::ScatterFeature(sk) => Ok(Linearized::Scatter {
                kernel: sk,
                tape: ScatterTape::new(&sk.bank, x, sk.shape.channels)?,
            }),
            _ => Ok(Linearized::Point {
                kernel: self,
                x: x.to_vec(),
            }),
        }
    }
}

/// A point at which gradients `d k(x, .) / dx` are taken.
pub enum Linearized<'a> {
    Point { kernel: &'a KernelConfig, x: Vec<f64> },
    Scatter { kernel: &'a ScatterKernel, tape: ScatterTape<'a> },
}

impl Linearized<'_> {
    /// Embedding of the linearization point.
    pub fn embedding(&self) -> &[f64] {
        match self {
            Linearized::Point { x, .. } => x,
            Linearized::Scatter { tape, .. } => tape.features(),
        }
    }

    /// The scattering tape, for kernels linear in the feature map.
    pub fn tape(&self) -> Option<&ScatterTape<'_>> {
        match self {
            Linearized::Scatter { tape, .. } => Some(tape),
            Linearized::Point { .. } => None,
        }
    }

    /// `out += scale * d k(x, y) / dx` where `y` is given by its embedding.
    pub fn add_grad(&self, other: &[f64], scale: f64, out: &mut [f64]) -> Result<()> {
        match self {
            Linearized::Point { kernel, x } => match kernel {
                KernelConfig::FcNtk { depth } => fc_ntk_grad_into(x, other, *depth, scale, out),
                KernelConfig::Rbf { bandwidth } => {
                    rbf_grad_into(x, other, *bandwidth, scale, out);
                    Ok(())
                }
                KernelConfig::ScatterFeature(_) => unreachable!("scatter kernels linearize to a tape"),
            },
            Linearized::Scatter { kernel, tape } => {
                let mut ws = Workspace::new(&kernel.bank);
                let maps = AdjointMaps::new_with(&kernel.bank, other, kernel.shape.channels, &mut ws)?;
                tape.vjp_combination(&[(scale, &maps)], out, &mut ws);
                Ok(())
            }
        }
    }
}

/// Gram matrix `k(X_i, X2_j)`; symmetric and exactly mirrored when `x` and `x2` coincide.
pub fn kernel_matrix(
    x: ArrayView2<'_, f64>,
    x2: ArrayView2<'_, f64>,
    config: &KernelConfig,
) -> Result<GramMatrix> {
    config.validate()?;
    if x.ncols() != x2.ncols() {
        return Err(Error::Shape(format!(
            "column counts differ: {} vs {}",
            x.ncols(),
            x2.ncols()
        )));
    }
    let same = x == x2;
    let ex = config.embed_rows(x)?;
    if same {
        config.gram_embedded(ex.view(), ex.view(), true)
    } else {
        let ex2 = config.embed_rows(x2)?;
        config.gram_embedded(ex.view(), ex2.view(), false)
    }
}

/// `(<phi(x), f>, cotangent * d<phi(x), f>/dx)` for the scattering map `phi`.
pub fn feature_kernel_and_vjp(
    x: ArrayView3<'_, f64>,
    x2_features: &[f64],
    bank: &FilterBank,
    cotangent: f64,
) -> Result<(f64, Array3<f64>)> {
    let (c, h, w) = x.dim();
    if h != bank.height() || w != bank.width() {
        return Err(Error::Shape(format!(
            "image {h}x{w} does not match filter bank {}x{}",
            bank.height(),
            bank.width()
        )));
    }
    if x2_features.len() != feature_len(bank, c) {
        return Err(Error::Shape(format!(
            "feature vector of length {} does not match {} scattering features",
            x2_features.len(),
            feature_len(bank, c)
        )));
    }
    let flat: Vec<f64> = x.iter().cloned().collect();
    let tape = ScatterTape::new(bank, &flat, c)?;
    let value = tape.features().iter().zip(x2_features).map(|(p, q)| p * q).sum();
    let mut grad = vec![0.0; flat.len()];
    if cotangent != 0.0 {
        let mut ws = Workspace::new(bank);
        let maps = AdjointMaps::new_with(bank, x2_features, c, &mut ws)?;
        tape.vjp_combination(&[(cotangent, &maps)], &mut grad, &mut ws);
    }
    Ok((
        value,
        Array3::from_shape_vec((c, h, w), grad).expect("gradient length matches image"),
    ))
}
