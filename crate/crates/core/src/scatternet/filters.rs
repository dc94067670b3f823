//! Morlet filter bank for the 2-D scattering transform.

use std::f64::consts::PI;
use std::fmt;

use rustfft::num_complex::Complex64;

use super::fft::Fft2;
use crate::error::{Error, Result};

/// Spatial standard deviation of the finest band-pass envelope.
const SIGMA_PSI: f64 = 0.5;
/// Spatial standard deviation of the low-pass at scale `2^J` is `SIGMA_PHI * 2^J`.
const SIGMA_PHI: f64 = 0.8;
/// Center frequency of the finest wavelet.
const XI_0: f64 = 3.0 * PI / 4.0;
/// Aspect ratio of the wavelet envelope.
const SLANT: f64 = 0.5;
/// Number of periodic images summed on each side when sampling filters on the torus.
const PERIOD_TILES: i64 = 2;

/// Precomputed scattering filters, stored in the frequency domain.
///
/// Band-pass filters are indexed by `j * L + theta`. Immutable after
/// construction and safe to share between threads.
pub struct FilterBank {
    pub(crate) height: usize,
    pub(crate) width: usize,
    pub(crate) scales: usize,
    pub(crate) orientations: usize,
    pub(crate) psi: Vec<Vec<Complex64>>,
    pub(crate) phi: Vec<f64>,
    pub(crate) fft: Fft2,
    pub(crate) fft_small: Fft2,
}

impl fmt::Debug for FilterBank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FilterBank")
            .field("height", &self.height)
            .field("width", &self.width)
            .field("scales", &self.scales)
            .field("orientations", &self.orientations)
            .finish_non_exhaustive()
    }
}

/// Builds the Morlet bank for `h x w` images with `j` scales and `l` orientations.
pub fn build_filter_bank(h: usize, w: usize, j: usize, l: usize) -> Result<FilterBank> {
    if j < 1 || l < 1 {
        return Err(Error::InvalidArgument(format!(
            "scattering needs J >= 1 and L >= 1, got J={j}, L={l}"
        )));
    }
    let stride = 1usize << j;
    if h == 0 || w == 0 || !h.is_multiple_of(stride) || !w.is_multiple_of(stride) {
        return Err(Error::Shape(format!(
            "image {h}x{w} is not divisible by 2^J = {stride}"
        )));
    }

    let fft = Fft2::new(h, w);
    let mut scratch = fft.scratch();
    let to_freq = |spatial: Vec<Complex64>, scratch: &mut Vec<Complex64>| {
        let mut buf = spatial;
        let mut out = vec![Complex64::new(0.0, 0.0); h * w];
        fft.forward(&mut buf, &mut out, scratch);
        out
    };

    let mut psi = Vec::with_capacity(j * l);
    for scale in 0..j {
        let dil = (1usize << scale) as f64;
        for theta in 0..l {
            let angle = theta as f64 * PI / l as f64;
            let spatial = morlet(h, w, SIGMA_PSI * dil, angle, XI_0 / dil, SLANT);
            let mut freq = to_freq(spatial, &mut scratch);
            freq[0] = Complex64::new(0.0, 0.0);
            let peak = freq.iter().map(|v| v.norm()).fold(0.0, f64::max);
            for v in freq.iter_mut() {
                *v /= peak;
            }
            psi.push(freq);
        }
    }

    let gauss = periodized_gaussian(h, w, SIGMA_PHI * stride as f64);
    let total: f64 = gauss.iter().sum();
    let spatial = gauss
        .iter()
        .map(|g| Complex64::new(g / total, 0.0))
        .collect();
    let spec = to_freq(spatial, &mut scratch);
    let dc = spec[0].re;
    let phi: Vec<f64> = spec.iter().map(|v| (v.re / dc).min(1.0)).collect();

    // Rescale the band-pass filters so that the Littlewood-Paley sum peaks at 1.
    let band = band_energy(&psi, h, w);
    let mut gain = f64::INFINITY;
    for (b, p) in band.iter().zip(&phi) {
        if *b > 1e-14 {
            gain = gain.min((1.0 - p * p) / b);
        }
    }
    let amp = (gain * (1.0 - 1e-9)).sqrt();
    for filt in psi.iter_mut() {
        for v in filt.iter_mut() {
            *v *= amp;
        }
    }

    Ok(FilterBank {
        height: h,
        width: w,
        scales: j,
        orientations: l,
        psi,
        phi,
        fft,
        fft_small: Fft2::new(h / stride, w / stride),
    })
}

impl FilterBank {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn scales(&self) -> usize {
        self.scales
    }

    pub fn orientations(&self) -> usize {
        self.orientations
    }

    /// Subsampling factor of the averaging operator, `2^J`.
    pub fn stride(&self) -> usize {
        1 << self.scales
    }

    pub fn band_pass_count(&self) -> usize {
        self.psi.len()
    }

    /// Number of scattering channels per input channel, `1 + J L + L^2 J (J - 1) / 2`.
    pub fn coefficients_per_channel(&self) -> usize {
        let (j, l) = (self.scales, self.orientations);
        1 + j * l + l * l * j * (j - 1) / 2
    }

    pub fn output_height(&self) -> usize {
        self.height / self.stride()
    }

    pub fn output_width(&self) -> usize {
        self.width / self.stride()
    }

    /// Band-pass filter `(j, theta)` in transposed frequency layout.
    pub fn band_pass(&self, j: usize, theta: usize) -> &[Complex64] {
        &self.psi[j * self.orientations + theta]
    }

    /// Low-pass filter in transposed frequency layout (real-valued).
    pub fn low_pass(&self) -> &[f64] {
        &self.phi
    }

    /// `|phi(w)|^2 + sum (|psi(w)|^2 + |psi(-w)|^2) / 2` at every frequency.
    pub fn littlewood_paley(&self) -> Vec<f64> {
        band_energy(&self.psi, self.height, self.width)
            .iter()
            .zip(&self.phi)
            .map(|(b, p)| b + p * p)
            .collect()
    }
}

/// Symmetrized band-pass energy at every frequency (transposed layout).
fn band_energy(psi: &[Vec<Complex64>], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for filt in psi {
        for kw in 0..w {
            for kh in 0..h {
                let neg = ((w - kw) % w) * h + (h - kh) % h;
                let idx = kw * h + kh;
                out[idx] += 0.5 * (filt[idx].norm_sqr() + filt[neg].norm_sqr());
            }
        }
    }
    out
}

/// Zero-mean Morlet wavelet sampled on the `h x w` torus (row-major spatial layout).
fn morlet(h: usize, w: usize, sigma: f64, theta: f64, xi: f64, slant: f64) -> Vec<Complex64> {
    let (s, c) = theta.sin_cos();
    // Quadratic form R diag(1, slant^2) R^T / (2 sigma^2).
    let inv = 1.0 / (2.0 * sigma * sigma);
    let a = (c * c + slant * slant * s * s) * inv;
    let b = (c * s - slant * slant * c * s) * inv;
    let d = (s * s + slant * slant * c * c) * inv;

    let mut gabor = vec![Complex64::new(0.0, 0.0); h * w];
    let mut envelope = vec![0.0; h * w];
    for r in 0..h {
        for col in 0..w {
            let mut g = Complex64::new(0.0, 0.0);
            let mut e = 0.0;
            for tr in -PERIOD_TILES..=PERIOD_TILES {
                for tc in -PERIOD_TILES..=PERIOD_TILES {
                    let x = (tr * h as i64 + r as i64) as f64;
                    let y = (tc * w as i64 + col as i64) as f64;
                    let env = (-(a * x * x + 2.0 * b * x * y + d * y * y)).exp();
                    g += Complex64::from_polar(env, xi * (x * c + y * s));
                    e += env;
                }
            }
            gabor[r * w + col] = g;
            envelope[r * w + col] = e;
        }
    }
    let kappa: Complex64 = gabor.iter().sum::<Complex64>() / envelope.iter().sum::<f64>();
    gabor
        .iter()
        .zip(&envelope)
        .map(|(g, e)| g - kappa * e)
        .collect()
}

fn periodized_gaussian(h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for col in 0..w {
            let mut acc = 0.0;
            for tr in -PERIOD_TILES..=PERIOD_TILES {
                for tc in -PERIOD_TILES..=PERIOD_TILES {
                    let x = (tr * h as i64 + r as i64) as f64;
                    let y = (tc * w as i64 + col as i64) as f64;
                    acc += (-(x * x + y * y) * inv).exp();
                }
            }
            out[r * w + col] = acc;
        }
    }
    out
}
