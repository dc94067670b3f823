//! Private KIP assembled from the public building blocks, end to end.

use dpkip_core::data::{synth_blobs, Dataset};
use dpkip_core::dp::{
    apply_update, clip_rows_in_place, noisy_sum, poisson_sample, ClipConfig, Optimizer,
    OptimizerState, Schedule,
};
use dpkip_core::eval::evaluate;
use dpkip_core::kernels::KernelConfig;
use dpkip_core::kip::{init_distilled, krr_loss, per_sample_gradients, DistilledSet, TargetBatch};
use dpkip_core::privacy::{account, calibrate_sigma, PrivacyParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Trace {
    distilled: DistilledSet,
    losses: Vec<f64>,
}

fn distill(train: &Dataset, kernel: &KernelConfig, sigma: f64, sched: &Schedule, seed: u64) -> Trace {
    let y = train.one_hot();
    let mut ds = init_distilled(train.num_classes, train.dim(), train.num_classes, 1, seed, 0.2).unwrap();
    let clip = ClipConfig::new(0.05).unwrap();
    let mut opt = OptimizerState::new(Optimizer::adam(0.05), ds.len(), ds.dim()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let full = TargetBatch::new(train.features.clone(), y.clone(), (0..train.len()).collect()).unwrap();
    let mut losses = vec![krr_loss(&ds, &full, kernel, 1e-3).unwrap().loss];
    for _ in 0..sched.steps {
        let idx = poisson_sample(train.len(), sched.q, &mut rng);
        let batch = TargetBatch::gather(train.features.view(), y.view(), None, &idx).unwrap();
        let mut g = per_sample_gradients(&ds, &batch, kernel, 1e-3).unwrap();
        clip_rows_in_place(&mut g, clip);
        let noisy = noisy_sum(g.view(), sigma, clip, &mut rng).unwrap();
        apply_update(&mut opt, &mut ds, &noisy, sched.nominal_batch).unwrap();
    }
    losses.push(krr_loss(&ds, &full, kernel, 1e-3).unwrap().loss);
    Trace { distilled: ds, losses }
}

#[test]
fn private_rbf_distillation_learns_separated_blobs() {
    let train = synth_blobs(400, 2, 6, 8.0, 11).unwrap();
    let test = synth_blobs(400, 2, 6, 8.0, 12).unwrap();
    let kernel = KernelConfig::Rbf { bandwidth: 4.0 };
    let sched = Schedule::new(train.len(), 40, 10).unwrap();
    let target = PrivacyParams::new(5.0, 1e-5).unwrap();
    let sigma = calibrate_sigma(target, sched.q, sched.steps as u64).unwrap();
    assert!(account(sched.q, sigma, sched.steps as u64, 1e-5).unwrap().epsilon <= 5.0);

    let start = init_distilled(2, 6, 2, 1, 3, 0.2).unwrap();
    let run = distill(&train, &kernel, sigma, &sched, 3);
    assert!(run.losses[1] < run.losses[0], "loss {:?}", run.losses);

    let mask = run.distilled.mask.as_ref().unwrap();
    for ((now, was), frozen) in run.distilled.points.iter().zip(start.points.iter()).zip(mask.iter()) {
        if *frozen {
            assert_eq!(now.to_bits(), was.to_bits());
        }
    }
    let report = evaluate(&run.distilled, &test, &kernel, 1e-3).unwrap();
    assert!(report.accuracy >= 0.95, "accuracy {}", report.accuracy);
}

#[test]
fn same_seed_same_trajectory() {
    let train = synth_blobs(120, 3, 5, 5.0, 2).unwrap();
    let kernel = KernelConfig::FcNtk { depth: 2 };
    let sched = Schedule::new(train.len(), 30, 3).unwrap();
    let a = distill(&train, &kernel, 1.1, &sched, 7);
    let b = distill(&train, &kernel, 1.1, &sched, 7);
    let c = distill(&train, &kernel, 1.1, &sched, 8);
    assert_eq!(a.distilled, b.distilled);
    assert_eq!(a.losses, b.losses);
    assert_ne!(a.distilled, c.distilled);
}
