//! Orchestration for private dataset distillation: configuration, the
//! training loop, evaluation of saved bundles and clip-norm sweeps.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod run;
pub mod sweep;

use std::path::Path;

use dpkip_core::data::load_bundle;
use dpkip_core::eval::{evaluate, EvalReport};

pub use config::RunConfig;
pub use error::CliError;
pub use run::{run_distill, RunReport};
pub use sweep::run_sweep;

/// Evaluates a saved bundle on the test data named in `cfg`. The kernel is
/// the bundle's own unless `cfg.eval.kernel` overrides it.
pub fn evaluate_bundle(bundle: &Path, cfg: &RunConfig) -> Result<EvalReport, CliError> {
    let (ds, meta) = load_bundle(bundle)?;
    let test_cfg = cfg.eval.test.as_ref().ok_or_else(|| CliError::Config {
        field: "eval.test".into(),
        msg: "no test data configured".into(),
    })?;
    // CSV test rows must be encoded with the training transform.
    let fitted = match &cfg.dataset {
        config::DatasetConfig::Csv { .. } => Some(run::load_dataset(&cfg.dataset, None)?.preprocessing),
        _ => None,
    };
    let test = run::load_dataset(test_cfg, fitted.as_ref())?;
    let spec = cfg.eval.kernel.as_ref().unwrap_or(&meta.kernel);
    let kernel = spec.build(ds.shape)?;
    Ok(evaluate(&ds, &test, &kernel, meta.lambda)?)
}
