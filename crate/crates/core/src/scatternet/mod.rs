//! Wavelet scattering features `A |W2| W1 x||` and their reverse-mode derivative.

mod fft;
mod filters;
mod transform;

pub use filters::{build_filter_bank, FilterBank};
pub use transform::{
    feature_len, scatter_features, scatter_features_with, scatter_forward, scatter_vjp,
    AdjointMaps, ScatterOutput, ScatterTape, Workspace,
};
