//! Clip-norm (and optionally epsilon) grids over otherwise identical runs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{PrivacyConfig, RunConfig};
use crate::error::{io_err, CliError};
use crate::run::{run_prepared, Prepared};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub clip_norm: f64,
    pub sigma: f64,
    pub steps: u64,
    pub seeds: usize,
    pub accuracy_mean: Option<f64>,
    pub accuracy_std: Option<f64>,
}

/// Configs for every grid point, epsilon-major. An empty `epsilons` keeps
/// the privacy setting of `base`.
pub fn grid_configs(
    base: &RunConfig,
    clip_grid: &[f64],
    epsilons: &[f64],
) -> Result<Vec<RunConfig>, CliError> {
    if clip_grid.is_empty() {
        return Err(CliError::Config {
            field: "--clip-grid".into(),
            msg: "grid is empty".into(),
        });
    }
    let privacy: Vec<PrivacyConfig> = if epsilons.is_empty() {
        vec![base.privacy]
    } else {
        let delta = match base.privacy {
            PrivacyConfig::Epsilon { delta, .. } => delta,
            PrivacyConfig::Sigma { delta: Some(d), .. } => d,
            _ => {
                return Err(CliError::Config {
                    field: "privacy".into(),
                    msg: "an epsilon grid needs a delta in the base config".into(),
                })
            }
        };
        epsilons
            .iter()
            .map(|&epsilon| PrivacyConfig::Epsilon { epsilon, delta })
            .collect()
    };
    let mut out = Vec::new();
    for p in privacy {
        for &c in clip_grid {
            let mut cfg = base.clone();
            cfg.privacy = p;
            cfg.clip_norm = c;
            let tag = match p {
                PrivacyConfig::Epsilon { epsilon, .. } => format!("eps-{epsilon}"),
                PrivacyConfig::Sigma { sigma, .. } => format!("sigma-{sigma}"),
                PrivacyConfig::None {} => "nonprivate".into(),
            };
            cfg.output_dir = base.output_dir.join(format!("{tag}_clip-{c:e}"));
            cfg.validate()?;
            out.push(cfg);
        }
    }
    Ok(out)
}

/// Runs every grid point on data loaded once and writes `sweep.csv` to the
/// base output directory.
pub fn run_sweep(
    base: &RunConfig,
    clip_grid: &[f64],
    epsilons: &[f64],
) -> Result<Vec<SweepRow>, CliError> {
    let configs = grid_configs(base, clip_grid, epsilons)?;
    let prep = Prepared::load(base)?;
    let mut rows = Vec::with_capacity(configs.len());
    for cfg in &configs {
        let report = run_prepared(&prep, cfg)?;
        let first = &report.runs[0];
        rows.push(SweepRow {
            epsilon: first.epsilon,
            delta: first.delta,
            clip_norm: cfg.clip_norm,
            sigma: first.sigma,
            steps: first.steps,
            seeds: report.runs.len(),
            accuracy_mean: report.accuracy_mean,
            accuracy_std: report.accuracy_std,
        });
    }
    write_table(&base.output_dir.join("sweep.csv"), &rows)?;
    Ok(rows)
}

fn write_table(path: &Path, rows: &[SweepRow]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let wrap = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    for r in rows {
        w.serialize(r).map_err(wrap)?;
    }
    w.flush().map_err(io_err(path))
}
