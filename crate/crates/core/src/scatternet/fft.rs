//! Planned 2-D FFTs on small images.
//!
//! Frequency-domain arrays are kept in *transposed* layout: for an `h x w`
//! image the spectrum is stored as `w x h`, entry `(kw, kh)` at `kw * h + kh`.
//! This saves one transpose per transform and every filter in the bank uses
//! the same convention.

use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub(crate) struct Fft2 {
    h: usize,
    w: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    scratch_len: usize,
}

impl fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fft2({}x{})", self.h, self.w)
    }
}

impl Fft2 {
    pub(crate) fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        let row_fwd = planner.plan_fft_forward(w);
        let col_fwd = planner.plan_fft_forward(h);
        let row_inv = planner.plan_fft_inverse(w);
        let col_inv = planner.plan_fft_inverse(h);
        let scratch_len = [&row_fwd, &col_fwd, &row_inv, &col_inv]
            .iter()
            .map(|p| p.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        Self {
            h,
            w,
            row_fwd,
            col_fwd,
            row_inv,
            col_inv,
            scratch_len,
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.h * self.w
    }

    pub(crate) fn scratch(&self) -> Vec<Complex64> {
        vec![Complex64::new(0.0, 0.0); self.scratch_len.max(1)]
    }

    /// Spatial (row-major, `h x w`) in `buf` -> spectrum (transposed) in `out`.
    /// `buf` is clobbered.
    pub(crate) fn forward(
        &self,
        buf: &mut [Complex64],
        out: &mut [Complex64],
        scratch: &mut [Complex64],
    ) {
        debug_assert_eq!(buf.len(), self.len());
        self.row_fwd.process_with_scratch(buf, scratch);
        transpose(buf, out, self.h, self.w);
        self.col_fwd.process_with_scratch(out, scratch);
    }

    /// Spectrum (transposed) in `buf` -> spatial (row-major) in `out`,
    /// including the `1/(h w)` normalization. `buf` is clobbered.
    pub(crate) fn inverse(
        &self,
        buf: &mut [Complex64],
        out: &mut [Complex64],
        scratch: &mut [Complex64],
    ) {
        debug_assert_eq!(buf.len(), self.len());
        self.col_inv.process_with_scratch(buf, scratch);
        transpose(buf, out, self.w, self.h);
        self.row_inv.process_with_scratch(out, scratch);
        let norm = 1.0 / self.len() as f64;
        for v in out.iter_mut() {
            *v *= norm;
        }
    }
}

/// `src` is `rows x cols` row-major; `dst` receives `cols x rows`.
fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    for r in 0..rows {
        let row = &src[r * cols..(r + 1) * cols];
        for (c, v) in row.iter().enumerate() {
            dst[c * rows + r] = *v;
        }
    }
}
