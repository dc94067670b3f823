//! The distillation loop and everything it writes to disk.
//!
//! Output layout for a run with seeds `s0, s1, ..`:
//!
//! ```text
//! <output_dir>/report.json
//! <output_dir>/seed-<s>/bundle/      distilled set (see dpkip_core::data)
//! <output_dir>/seed-<s>/loss_log.csv iteration, batch size, mean loss, median pre-clip norm
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dpkip_core::data::{
    export_bundle, load_csv, load_idx, load_raw, synth_blobs, BundleMeta, Dataset, Preprocessing,
};
use dpkip_core::dp::{
    apply_update, clip_rows_in_place, noisy_sum, poisson_sample, ClipConfig, NoisyGradient,
    OptimizerState, Schedule,
};
use dpkip_core::eval::{evaluate_embedded, EvalReport};
use dpkip_core::kernels::KernelConfig;
use dpkip_core::kip::{
    init_distilled, loss_gradient, per_sample_gradients_with_loss, DistilledSet, TargetBatch,
};
use dpkip_core::privacy::{account, calibrate_sigma, PrivacyParams};
use log::info;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetConfig, PrivacyConfig, RunConfig};
use crate::error::{io_err, CliError};

/// Loads a dataset. CSV test files are encoded with `fitted`, the
/// transform fitted on the training file, when one is given.
pub fn load_dataset(cfg: &DatasetConfig, fitted: Option<&Preprocessing>) -> Result<Dataset, CliError> {
    let (ds, limit) = match cfg {
        DatasetConfig::Idx {
            images,
            labels,
            gzipped,
            limit,
        } => (load_idx(images, labels, *gzipped)?, *limit),
        DatasetConfig::Csv {
            path,
            label_column,
            schema,
            limit,
        } => {
            let ds = match fitted {
                Some(Preprocessing::Tabular(t)) => t.load(path)?,
                _ => {
                    let schema: Vec<_> = schema.iter().map(|c| (c.name.clone(), c.kind)).collect();
                    load_csv(path, label_column, &schema)?
                }
            };
            (ds, *limit)
        }
        DatasetConfig::Raw {
            paths,
            spec,
            gzipped,
            limit,
        } => (load_raw(paths, spec, *gzipped)?, *limit),
        DatasetConfig::Blobs {
            n,
            num_classes,
            dim,
            separation,
            seed,
        } => (synth_blobs(*n, *num_classes, *dim, *separation, *seed)?, None),
    };
    match limit {
        Some(k) if k < ds.len() => Ok(ds.head(k)?),
        _ => Ok(ds),
    }
}

/// Data and kernels shared by all seeds of a run.
pub struct Prepared {
    pub train: Dataset,
    pub train_y: Array2<f64>,
    /// Cached `embed_rows` of the training data for feature kernels.
    pub train_embedded: Option<Array2<f64>>,
    pub kernel: KernelConfig,
    pub eval_kernel: KernelConfig,
    pub test: Option<Dataset>,
    pub test_embedded: Option<Array2<f64>>,
}

impl Prepared {
    pub fn load(cfg: &RunConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        let t0 = Instant::now();
        let train = load_dataset(&cfg.dataset, None)?;
        let kernel = cfg.kernel.build(train.shape)?;
        let train_embedded = if kernel.is_feature_linear() {
            Some(kernel.embed_rows(train.features.view())?)
        } else {
            None
        };
        let eval_kernel = match &cfg.eval.kernel {
            Some(spec) => spec.build(train.shape)?,
            None => kernel.clone(),
        };
        let test = match &cfg.eval.test {
            Some(t) => Some(load_dataset(t, Some(&train.preprocessing))?),
            None => None,
        };
        if let Some(t) = &test {
            if t.dim() != train.dim() || t.num_classes > train.num_classes {
                return Err(CliError::Config {
                    field: "eval.test".into(),
                    msg: format!(
                        "test data has dimension {} and {} classes, training data {} and {}",
                        t.dim(),
                        t.num_classes,
                        train.dim(),
                        train.num_classes
                    ),
                });
            }
        }
        let test_embedded = match &test {
            Some(t) => Some(eval_kernel.embed_rows(t.features.view())?),
            None => None,
        };
        info!(
            "loaded {} training rows ({} features, {} classes){} in {:.1}s",
            train.len(),
            train.dim(),
            train.num_classes,
            test.as_ref().map_or(String::new(), |t| format!(", {} test rows", t.len())),
            t0.elapsed().as_secs_f64()
        );
        Ok(Self {
            train_y: train.one_hot(),
            train,
            train_embedded,
            kernel,
            eval_kernel,
            test,
            test_embedded,
        })
    }

    pub fn evaluate(&self, ds: &DistilledSet, lambda_base: f64) -> Result<Option<EvalReport>, CliError> {
        match (&self.test, &self.test_embedded) {
            (Some(t), Some(e)) => Ok(Some(evaluate_embedded(
                ds,
                e.view(),
                &t.labels,
                &self.eval_kernel,
                lambda_base,
            )?)),
            _ => Ok(None),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub batch_size: usize,
    /// Mean squared residual over the batch; `None` for an empty batch.
    pub loss: Option<f64>,
    /// Median per-target gradient norm before clipping; private runs only.
    pub grad_norm_median: Option<f64>,
}

/// Privacy parameters resolved for a concrete schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub sigma: f64,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub q: f64,
    pub steps: u64,
    pub nominal_batch: usize,
}

pub fn resolve_privacy(cfg: &RunConfig, n: usize) -> Result<Resolved, CliError> {
    let sched = Schedule::new(n, cfg.batch_size, cfg.epochs)?;
    let steps = sched.steps as u64;
    let (sigma, epsilon, delta) = match cfg.privacy {
        PrivacyConfig::Epsilon { epsilon, delta } => {
            let sigma = calibrate_sigma(PrivacyParams::new(epsilon, delta)?, sched.q, steps)?;
            let spent = account(sched.q, sigma, steps, delta)?.epsilon;
            (sigma, Some(spent), Some(delta))
        }
        PrivacyConfig::Sigma { sigma, delta } => {
            let spent = match delta {
                Some(d) => Some(account(sched.q, sigma, steps, d)?.epsilon),
                None => None,
            };
            (sigma, spent, delta)
        }
        PrivacyConfig::None {} => (0.0, None, None),
    };
    Ok(Resolved {
        sigma,
        epsilon,
        delta,
        q: sched.q,
        steps,
        nominal_batch: sched.nominal_batch,
    })
}

pub struct SeedRun {
    pub seed: u64,
    pub distilled: DistilledSet,
    pub meta: BundleMeta,
    pub log: Vec<LogRow>,
    pub eval: Option<EvalReport>,
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[k] } else { 0.5 * (v[k - 1] + v[k]) })
}

/// One full distillation with `seed`: initialization, `T` DP-SGD steps and evaluation.
pub fn distill_seed(prep: &Prepared, cfg: &RunConfig, seed: u64) -> Result<SeedRun, CliError> {
    let train = &prep.train;
    let res = resolve_privacy(cfg, train.len())?;
    let private = !matches!(cfg.privacy, PrivacyConfig::None {});
    let clip = ClipConfig::new(cfg.clip_norm)?;

    let m = cfg.imgs_per_class * train.num_classes;
    let mut ds = init_distilled(
        m,
        train.dim(),
        train.num_classes,
        cfg.imgs_per_class,
        seed,
        cfg.corrupt_fraction,
    )?;
    ds.shape = train.shape;
    let mut state = OptimizerState::new(cfg.optimizer(), m, train.dim())?;
    // Sampling and noise use a stream separate from initialization.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);

    info!(
        "seed {seed}: m = {m}, T = {}, q = {:.5}, sigma = {:.6}{}",
        res.steps,
        res.q,
        res.sigma,
        res.epsilon.map_or(String::new(), |e| format!(", epsilon = {e:.4}"))
    );
    let t0 = Instant::now();
    let report_every = (res.steps as usize / 20).max(1);
    let mut log = Vec::with_capacity(res.steps as usize);
    for it in 0..res.steps as usize {
        let idx = poisson_sample(train.len(), res.q, &mut rng);
        let batch = TargetBatch::gather(
            train.features.view(),
            prep.train_y.view(),
            prep.train_embedded.as_ref().map(|e| e.view()),
            &idx,
        )?;
        let (update, loss, norm_median) = if batch.is_empty() {
            if private {
                let empty = Array2::zeros((0, m * train.dim()));
                (Some(noisy_sum(empty.view(), res.sigma, clip, &mut rng)?), None, None)
            } else {
                (None, None, None)
            }
        } else if private {
            let (mut g, rep) = per_sample_gradients_with_loss(&ds, &batch, &prep.kernel, cfg.lambda_base)?;
            let mut norms = clip_rows_in_place(&mut g, clip);
            let noisy = noisy_sum(g.view(), res.sigma, clip, &mut rng)?;
            (Some(noisy), Some(rep.loss / batch.len() as f64), median(&mut norms))
        } else {
            let (g, rep) = loss_gradient(&ds, &batch, &prep.kernel, cfg.lambda_base)?;
            (
                Some(NoisyGradient::non_private(g)),
                Some(rep.loss / batch.len() as f64),
                None,
            )
        };
        if let Some(loss) = loss {
            if !loss.is_finite() {
                return Err(dpkip_core::Error::Degenerate(format!(
                    "loss became {loss} at iteration {it}"
                ))
                .into());
            }
        }
        if let Some(g) = &update {
            apply_update(&mut state, &mut ds, g, res.nominal_batch)?;
        }
        log.push(LogRow {
            iteration: it,
            batch_size: batch.len(),
            loss,
            grad_norm_median: norm_median,
        });
        if (it + 1) % report_every == 0 {
            info!(
                "seed {seed}: step {}/{} loss {} ({:.1}s)",
                it + 1,
                res.steps,
                loss.map_or("-".to_string(), |l| format!("{l:.5}")),
                t0.elapsed().as_secs_f64()
            );
        }
    }
    if ds.points.iter().any(|v| !v.is_finite()) {
        return Err(dpkip_core::Error::Degenerate("distilled points are not finite".into()).into());
    }
    let final_loss = log.iter().rev().find_map(|r| r.loss).unwrap_or(f64::NAN);
    let eval = prep.evaluate(&ds, cfg.lambda_base)?;
    if let Some(r) = &eval {
        info!("seed {seed}: test accuracy {:.4}", r.accuracy);
    }
    let meta = bundle_meta(cfg, &res, seed, final_loss, private)?;
    Ok(SeedRun {
        seed,
        distilled: ds,
        meta,
        log,
        eval,
    })
}

fn bundle_meta(
    cfg: &RunConfig,
    res: &Resolved,
    seed: u64,
    final_loss: f64,
    private: bool,
) -> Result<BundleMeta, CliError> {
    let mut extra = BTreeMap::new();
    extra.insert("dataset".into(), json(&cfg.dataset));
    extra.insert("privacy".into(), json(&cfg.privacy));
    extra.insert("optimizer".into(), json(&cfg.optimizer()));
    extra.insert("epochs".into(), cfg.epochs.into());
    extra.insert("batch_size".into(), cfg.batch_size.into());
    extra.insert("nominal_batch".into(), res.nominal_batch.into());
    extra.insert("imgs_per_class".into(), cfg.imgs_per_class.into());
    extra.insert("corrupt_fraction".into(), cfg.corrupt_fraction.into());
    Ok(BundleMeta {
        kernel: cfg.kernel.clone(),
        lambda: cfg.lambda_base,
        epsilon: res.epsilon,
        delta: res.delta,
        sigma: res.sigma,
        steps: res.steps,
        sampling_rate: res.q,
        clip_norm: private.then_some(cfg.clip_norm),
        seed,
        final_loss,
        extra,
    })
}

fn json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config types serialize")
}

fn write_log(path: &Path, log: &[LogRow]) -> Result<(), CliError> {
    let wrap = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    w.write_record(["iteration", "batch_size", "loss", "grad_norm_median"])
        .map_err(wrap)?;
    let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:e}"));
    for r in log {
        w.write_record([
            r.iteration.to_string(),
            r.batch_size.to_string(),
            fmt(r.loss),
            fmt(r.grad_norm_median),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub bundle: PathBuf,
    pub sigma: f64,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub steps: u64,
    pub sampling_rate: f64,
    pub initial_loss: Option<f64>,
    pub final_loss: f64,
    pub eval: Option<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub runs: Vec<SeedSummary>,
    pub accuracy_mean: Option<f64>,
    /// Sample standard deviation; 0 for a single seed.
    pub accuracy_std: Option<f64>,
    pub elapsed_seconds: f64,
}

pub fn mean_std(v: &[f64]) -> Option<(f64, f64)> {
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var.sqrt()))
}

/// Runs every seed with already-prepared data and writes bundles, logs and `report.json`.
pub fn run_prepared(prep: &Prepared, cfg: &RunConfig) -> Result<RunReport, CliError> {
    let t0 = Instant::now();
    std::fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    let mut runs = Vec::new();
    for k in 0..cfg.eval.seeds as u64 {
        let seed = cfg.seed.wrapping_add(k);
        let run = distill_seed(prep, cfg, seed)?;
        let dir = cfg.output_dir.join(format!("seed-{seed}"));
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let bundle = dir.join("bundle");
        export_bundle(&run.distilled, &run.meta, &bundle)?;
        write_log(&dir.join("loss_log.csv"), &run.log)?;
        runs.push(SeedSummary {
            seed,
            bundle,
            sigma: run.meta.sigma,
            epsilon: run.meta.epsilon,
            delta: run.meta.delta,
            steps: run.meta.steps,
            sampling_rate: run.meta.sampling_rate,
            initial_loss: run.log.iter().find_map(|r| r.loss),
            final_loss: run.meta.final_loss,
            eval: run.eval,
        });
    }
    let accs: Vec<f64> = runs.iter().filter_map(|r| r.eval.as_ref().map(|e| e.accuracy)).collect();
    let stats = mean_std(&accs);
    let report = RunReport {
        runs,
        accuracy_mean: stats.map(|s| s.0),
        accuracy_std: stats.map(|s| s.1),
        elapsed_seconds: t0.elapsed().as_secs_f64(),
    };
    let path = cfg.output_dir.join("report.json");
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(report)
}

/// Loads the data named in `cfg` and runs it.
pub fn run_distill(cfg: &RunConfig) -> Result<RunReport, CliError> {
    let prep = Prepared::load(cfg)?;
    run_prepared(&prep, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_handles_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }

    #[test]
    fn mean_std_uses_sample_deviation() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
        assert_eq!(mean_std(&[0.5]), Some((0.5, 0.0)));
    }
}
