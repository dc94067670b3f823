//! Forward scattering transform and its vector-Jacobian product.
//!
//! Per input channel the output is, in order: `A x`, then `A |x * psi_l|` for
//! every first-order filter `l = (j1, theta1)`, then `A ||x * psi_l| * psi_m|`
//! for every `m = (j2, theta2)` with `j2 > j1`. `A` is convolution with the
//! low-pass followed by subsampling every `2^J` pixels from index 0. All
//! convolutions are circular and computed at full resolution.

use ndarray::{Array3, ArrayView3};
use rustfft::num_complex::Complex64;

use super::filters::FilterBank;
use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
/// Below this modulus the phase (and hence the modulus subgradient) is taken as 0.
const MODULUS_FLOOR: f64 = 1e-20;

/// Scattering coefficients of one image: `(channels * K, H / 2^J, W / 2^J)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterOutput {
    pub features: Array3<f64>,
}

impl ScatterOutput {
    pub fn shape(&self) -> (usize, usize, usize) {
        self.features.dim()
    }
}

/// Scratch buffers for one thread of scattering work.
pub struct Workspace {
    a: Vec<Complex64>,
    b: Vec<Complex64>,
    acc: Vec<Complex64>,
    acc2: Vec<Complex64>,
    scratch: Vec<Complex64>,
    small_a: Vec<Complex64>,
    small_b: Vec<Complex64>,
    small_scratch: Vec<Complex64>,
    gmap: Vec<f64>,
    gm1: Vec<f64>,
}

impl Workspace {
    pub fn new(bank: &FilterBank) -> Self {
        let n = bank.fft.len();
        let ns = bank.fft_small.len();
        Self {
            a: vec![ZERO; n],
            b: vec![ZERO; n],
            acc: vec![ZERO; n],
            acc2: vec![ZERO; n],
            scratch: bank.fft.scratch(),
            small_a: vec![ZERO; ns],
            small_b: vec![ZERO; ns],
            small_scratch: bank.fft_small.scratch(),
            gmap: vec![0.0; n],
            gm1: vec![0.0; bank.band_pass_count() * n],
        }
    }
}

fn check_image(bank: &FilterBank, len: usize, channels: usize) -> Result<()> {
    let expect = channels * bank.height * bank.width;
    if channels == 0 || len != expect {
        return Err(Error::Shape(format!(
            "image of {len} values does not match {channels}x{}x{}",
            bank.height, bank.width
        )));
    }
    Ok(())
}

/// Number of scattering features produced for a `channels`-channel image.
pub fn feature_len(bank: &FilterBank, channels: usize) -> usize {
    channels * bank.coefficients_per_channel() * bank.output_height() * bank.output_width()
}

/// Applies `A` to a spectrum (transposed layout) and writes the subsampled
/// real block (row-major) into `out`.
fn average(bank: &FilterBank, spec: &[Complex64], out: &mut [f64], ws: &mut Workspace) {
    let h = bank.height;
    let (hs, ws_) = (bank.output_height(), bank.output_width());
    let s = bank.stride();
    for kw in 0..ws_ {
        for kh in 0..hs {
            let mut acc = ZERO;
            for qw in 0..s {
                let row = (kw + qw * ws_) * h;
                for qh in 0..s {
                    let idx = row + kh + qh * hs;
                    acc += spec[idx] * bank.phi[idx];
                }
            }
            ws.small_a[kw * hs + kh] = acc;
        }
    }
    bank.fft_small
        .inverse(&mut ws.small_a, &mut ws.small_b, &mut ws.small_scratch);
    let norm = 1.0 / (s * s) as f64;
    for (o, v) in out.iter_mut().zip(&ws.small_b) {
        *o = v.re * norm;
    }
    debug_assert_eq!(out.len(), hs * ws_);
}

/// Adjoint of [`average`]: maps a real `h/2^J x w/2^J` block to an `h x w` real map.
fn average_adjoint(bank: &FilterBank, block: &[f64], out: &mut [f64], ws: &mut Workspace) {
    let (h, w) = (bank.height, bank.width);
    let (hs, wsm) = (bank.output_height(), bank.output_width());
    for (a, v) in ws.small_a.iter_mut().zip(block) {
        *a = Complex64::new(*v, 0.0);
    }
    bank.fft_small
        .forward(&mut ws.small_a, &mut ws.small_b, &mut ws.small_scratch);
    for kw in 0..w {
        let src_row = (kw % wsm) * hs;
        for kh in 0..h {
            let idx = kw * h + kh;
            ws.a[idx] = ws.small_b[src_row + kh % hs] * bank.phi[idx];
        }
    }
    bank.fft.inverse(&mut ws.a, &mut ws.b, &mut ws.scratch);
    for (o, v) in out.iter_mut().zip(&ws.b) {
        *o = v.re;
    }
}

/// Modulus of the spatial signal in `ws.b`; writes `|u|` into `ws.a` (as complex)
/// and the unit phase into `phase` when given.
fn modulus(ws: &mut Workspace, phase: Option<&mut [Complex64]>) {
    match phase {
        Some(ph) => {
            for ((u, a), p) in ws.b.iter().zip(ws.a.iter_mut()).zip(ph.iter_mut()) {
                let m = u.norm();
                *p = if m < MODULUS_FLOOR { ZERO } else { u / m };
                *a = Complex64::new(m, 0.0);
            }
        }
        None => {
            for (u, a) in ws.b.iter().zip(ws.a.iter_mut()) {
                *a = Complex64::new(u.norm(), 0.0);
            }
        }
    }
}

fn forward_channel(
    bank: &FilterBank,
    x: &[f64],
    out: &mut [f64],
    mut phases: Option<&mut [Complex64]>,
    ws: &mut Workspace,
) {
    let n = bank.fft.len();
    let block = bank.output_height() * bank.output_width();
    let (jmax, l) = (bank.scales, bank.orientations);
    let n1 = jmax * l;

    for (a, v) in ws.a.iter_mut().zip(x) {
        *a = Complex64::new(*v, 0.0);
    }
    let mut xf = vec![ZERO; n];
    bank.fft.forward(&mut ws.a, &mut xf, &mut ws.scratch);
    average(bank, &xf, &mut out[..block], ws);

    // Spectra of first-order moduli that feed the second order.
    let mut m1f: Vec<Vec<Complex64>> = Vec::with_capacity((jmax - 1) * l);
    for lam in 0..n1 {
        let filt = &bank.psi[lam];
        for ((a, xv), f) in ws.a.iter_mut().zip(&xf).zip(filt) {
            *a = xv * f;
        }
        bank.fft.inverse(&mut ws.a, &mut ws.b, &mut ws.scratch);
        modulus(
            ws,
            phases.as_deref_mut().map(|p| &mut p[lam * n..(lam + 1) * n]),
        );
        let mut mf = vec![ZERO; n];
        bank.fft.forward(&mut ws.a, &mut mf, &mut ws.scratch);
        average(bank, &mf, &mut out[(1 + lam) * block..(2 + lam) * block], ws);
        if lam / l + 1 < jmax {
            m1f.push(mf);
        }
    }

    let mut k = 1 + n1;
    for (lam1, mf) in m1f.iter().enumerate() {
        let j1 = lam1 / l;
        for j2 in j1 + 1..jmax {
            for t2 in 0..l {
                let filt = &bank.psi[j2 * l + t2];
                for ((a, m), f) in ws.a.iter_mut().zip(mf).zip(filt) {
                    *a = m * f;
                }
                bank.fft.inverse(&mut ws.a, &mut ws.b, &mut ws.scratch);
                let slot = k - 1;
                modulus(
                    ws,
                    phases
                        .as_deref_mut()
                        .map(|p| &mut p[slot * n..(slot + 1) * n]),
                );
                bank.fft.forward(&mut ws.a, &mut ws.b, &mut ws.scratch);
                let spec = std::mem::take(&mut ws.b);
                average(bank, &spec, &mut out[k * block..(k + 1) * block], ws);
                ws.b = spec;
                k += 1;
            }
        }
    }
    debug_assert_eq!(k, bank.coefficients_per_channel());
}

/// Reverse pass for one channel. `gmap(k, buf)` fills `buf` with the spatial
/// adjoint-averaged cotangent of coefficient block `k`; the input gradient is
/// added into `out`.
fn backward_channel<F>(
    bank: &FilterBank,
    phases: &[Complex64],
    gmap: &F,
    out: &mut [f64],
    ws: &mut Workspace,
) where
    F: Fn(usize, &mut [f64]),
{
    let n = bank.fft.len();
    let (jmax, l) = (bank.scales, bank.orientations);
    let n1 = jmax * l;

    let mut gm1 = std::mem::take(&mut ws.gm1);
    let mut g = std::mem::take(&mut ws.gmap);
    for lam in 0..n1 {
        gmap(1 + lam, &mut gm1[lam * n..(lam + 1) * n]);
    }

    let mut k = 1 + n1;
    for lam1 in 0..(jmax - 1) * l {
        let j1 = lam1 / l;
        ws.acc2.iter_mut().for_each(|v| *v = ZERO);
        for j2 in j1 + 1..jmax {
            for t2 in 0..l {
                gmap(k, &mut g);
                let ph = &phases[(k - 1) * n..k * n];
                for ((a, gv), p) in ws.a.iter_mut().zip(&g).zip(ph) {
                    *a = p * *gv;
                }
                bank.fft.forward(&mut ws.a, &mut ws.b, &mut ws.scratch);
                let filt = &bank.psi[j2 * l + t2];
                for ((acc, s), f) in ws.acc2.iter_mut().zip(&ws.b).zip(filt) {
                    *acc += f.conj() * s;
                }
                k += 1;
            }
        }
        bank.fft.inverse(&mut ws.acc2, &mut ws.b, &mut ws.scratch);
        for (gm, u) in gm1[lam1 * n..(lam1 + 1) * n].iter_mut().zip(&ws.b) {
            *gm += u.re;
        }
    }

    ws.acc.iter_mut().for_each(|v| *v = ZERO);
    for lam in 0..n1 {
        let ph = &phases[lam * n..(lam + 1) * n];
        for ((a, gv), p) in ws.a.iter_mut().zip(&gm1[lam * n..(lam + 1) * n]).zip(ph) {
            *a = p * *gv;
        }
        bank.fft.forward(&mut ws.a, &mut ws.b, &mut ws.scratch);
        for ((acc, s), f) in ws.acc.iter_mut().zip(&ws.b).zip(&bank.psi[lam]) {
            *acc += f.conj() * s;
        }
    }
    bank.fft.inverse(&mut ws.acc, &mut ws.b, &mut ws.scratch);
    gmap(0, &mut g);
    for ((o, u), g0) in out.iter_mut().zip(&ws.b).zip(&g) {
        *o += u.re + g0;
    }
    ws.gm1 = gm1;
    ws.gmap = g;
}

/// Scattering features of a flat `channels x H x W` image.
pub fn scatter_features(bank: &FilterBank, image: &[f64], channels: usize) -> Result<Vec<f64>> {
    let mut ws = Workspace::new(bank);
    scatter_features_with(bank, image, channels, &mut ws)
}

pub fn scatter_features_with(
    bank: &FilterBank,
    image: &[f64],
    channels: usize,
    ws: &mut Workspace,
) -> Result<Vec<f64>> {
    check_image(bank, image.len(), channels)?;
    let n = bank.fft.len();
    let per = bank.coefficients_per_channel() * bank.output_height() * bank.output_width();
    let mut out = vec![0.0; channels * per];
    for c in 0..channels {
        forward_channel(
            bank,
            &image[c * n..(c + 1) * n],
            &mut out[c * per..(c + 1) * per],
            None,
            ws,
        );
    }
    Ok(out)
}

/// Scattering transform of a `(Cin, H, W)` image.
pub fn scatter_forward(image: ArrayView3<'_, f64>, bank: &FilterBank) -> Result<ScatterOutput> {
    let (c, h, w) = image.dim();
    if h != bank.height || w != bank.width {
        return Err(Error::Shape(format!(
            "image {h}x{w} does not match filter bank {}x{}",
            bank.height, bank.width
        )));
    }
    let flat: Vec<f64> = image.iter().cloned().collect();
    let feats = scatter_features(bank, &flat, c)?;
    let shape = (
        c * bank.coefficients_per_channel(),
        bank.output_height(),
        bank.output_width(),
    );
    Ok(ScatterOutput {
        features: Array3::from_shape_vec(shape, feats).expect("feature length matches shape"),
    })
}

/// Adjoint-averaged cotangent maps `A^T c` for every coefficient block,
/// `(channels * K) x H x W`, reusable across many reverse passes.
#[derive(Debug, Clone)]
pub struct AdjointMaps {
    data: Vec<f64>,
    map_len: usize,
}

impl AdjointMaps {
    pub fn new(bank: &FilterBank, cotangent: &[f64], channels: usize) -> Result<Self> {
        let mut ws = Workspace::new(bank);
        Self::new_with(bank, cotangent, channels, &mut ws)
    }

    pub fn new_with(
        bank: &FilterBank,
        cotangent: &[f64],
        channels: usize,
        ws: &mut Workspace,
    ) -> Result<Self> {
        if cotangent.len() != feature_len(bank, channels) {
            return Err(Error::Shape(format!(
                "cotangent of length {} does not match {} scattering features",
                cotangent.len(),
                feature_len(bank, channels)
            )));
        }
        let n = bank.fft.len();
        let block = bank.output_height() * bank.output_width();
        let blocks = cotangent.len() / block;
        let mut data = vec![0.0; blocks * n];
        for (b, chunk) in cotangent.chunks(block).enumerate() {
            average_adjoint(bank, chunk, &mut data[b * n..(b + 1) * n], ws);
        }
        Ok(Self { data, map_len: n })
    }

    fn map(&self, block: usize) -> &[f64] {
        &self.data[block * self.map_len..(block + 1) * self.map_len]
    }
}

/// Linearization of the scattering map at one image: its features plus the
/// modulus phases needed by the reverse pass.
pub struct ScatterTape<'a> {
    bank: &'a FilterBank,
    channels: usize,
    features: Vec<f64>,
    phases: Vec<Complex64>,
}

impl<'a> ScatterTape<'a> {
    pub fn new(bank: &'a FilterBank, image: &[f64], channels: usize) -> Result<Self> {
        let mut ws = Workspace::new(bank);
        Self::new_with(bank, image, channels, &mut ws)
    }

    pub fn new_with(
        bank: &'a FilterBank,
        image: &[f64],
        channels: usize,
        ws: &mut Workspace,
    ) -> Result<Self> {
        check_image(bank, image.len(), channels)?;
        let n = bank.fft.len();
        let k = bank.coefficients_per_channel();
        let per = k * bank.output_height() * bank.output_width();
        let mut features = vec![0.0; channels * per];
        let mut phases = vec![ZERO; channels * (k - 1) * n];
        for c in 0..channels {
            forward_channel(
                bank,
                &image[c * n..(c + 1) * n],
                &mut features[c * per..(c + 1) * per],
                Some(&mut phases[c * (k - 1) * n..(c + 1) * (k - 1) * n]),
                ws,
            );
        }
        Ok(Self {
            bank,
            channels,
            features,
            phases,
        })
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn into_features(self) -> Vec<f64> {
        self.features
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.bank.fft.len()
    }

    /// `J^T cotangent` for a flat feature-shaped cotangent.
    pub fn vjp(&self, cotangent: &[f64]) -> Result<Vec<f64>> {
        let mut ws = Workspace::new(self.bank);
        let maps = AdjointMaps::new_with(self.bank, cotangent, self.channels, &mut ws)?;
        let mut out = vec![0.0; self.image_len()];
        self.vjp_combination(&[(1.0, &maps)], &mut out, &mut ws);
        Ok(out)
    }

    /// Adds `J^T (sum_i coef_i c_i)` into `out`, where each `c_i` is given by its
    /// precomputed adjoint maps.
    pub fn vjp_combination(
        &self,
        terms: &[(f64, &AdjointMaps)],
        out: &mut [f64],
        ws: &mut Workspace,
    ) {
        debug_assert_eq!(out.len(), self.image_len());
        let n = self.bank.fft.len();
        let k = self.bank.coefficients_per_channel();
        for c in 0..self.channels {
            let gmap = |block: usize, buf: &mut [f64]| {
                let b = c * k + block;
                let (c0, m0) = terms[0];
                for (o, v) in buf.iter_mut().zip(m0.map(b)) {
                    *o = c0 * v;
                }
                for (coef, maps) in &terms[1..] {
                    for (o, v) in buf.iter_mut().zip(maps.map(b)) {
                        *o += coef * v;
                    }
                }
            };
            backward_channel(
                self.bank,
                &self.phases[c * (k - 1) * n..(c + 1) * (k - 1) * n],
                &gmap,
                &mut out[c * n..(c + 1) * n],
                ws,
            );
        }
    }
}

/// Vector-Jacobian product of the scattering transform at `image`.
pub fn scatter_vjp(
    image: ArrayView3<'_, f64>,
    bank: &FilterBank,
    cotangent: ArrayView3<'_, f64>,
) -> Result<Array3<f64>> {
    let (c, h, w) = image.dim();
    if h != bank.height || w != bank.width {
        return Err(Error::Shape(format!(
            "image {h}x{w} does not match filter bank {}x{}",
            bank.height, bank.width
        )));
    }
    let expect = (
        c * bank.coefficients_per_channel(),
        bank.output_height(),
        bank.output_width(),
    );
    if cotangent.dim() != expect {
        return Err(Error::Shape(format!(
            "cotangent shape {:?} does not match scattering output {:?}",
            cotangent.dim(),
            expect
        )));
    }
    let flat: Vec<f64> = image.iter().cloned().collect();
    let cot: Vec<f64> = cotangent.iter().cloned().collect();
    let tape = ScatterTape::new(bank, &flat, c)?;
    let grad = tape.vjp(&cot)?;
    Ok(Array3::from_shape_vec((c, h, w), grad).expect("gradient length matches image"))
}
