//! Independent oracles: finite differences, a naive reference network,
//! exhaustive k-means and hand-derived recurrences.

use grad_queue::analysis::{self, BatchCompositionCase, SparseSignalSpec};
use grad_queue::cluster::{self, FeatureMatrix};
use grad_queue::nn::{self, LineDetectorModel, PARAM_COUNT};
use grad_queue::optim::{OptimizerConfig, SgdmState};
use rand::{Rng, SeedableRng};

mod common;
use common::{exhaustive_optimum, fd_grad, reference_loss, relative};
use rand_chacha::ChaCha8Rng;

#[test]
fn finite_difference_gradients() {
    let mut worst = 0.0f64;
    for seed in 0..5u64 {
        let model = LineDetectorModel::init(seed);
        for batch in 0..3u64 {
            let data = nn::generate_lines(8, 8, 3, 2, 0.1, 100 * seed + batch).unwrap();
            let psg = nn::per_sample_grads(&model, &data.samples).unwrap();
            for (sample, g) in data.samples.iter().zip(&psg.grads) {
                let fd = fd_grad(model.params(), sample, 1e-5);
                for (a, b) in g.iter().zip(&fd) {
                    worst = worst.max(relative(*a, *b));
                }
            }
        }
    }
    assert!(worst < 1e-5, "worst {worst}");
}

#[test]
fn reference_network_matches_forward() {
    for seed in 0..3u64 {
        let model = LineDetectorModel::init(seed);
        let data = nn::generate_lines(7, 9, 4, 4, 0.2, seed).unwrap();
        let psg = nn::per_sample_grads(&model, &data.samples).unwrap();
        for (s, loss) in data.samples.iter().zip(&psg.losses) {
            assert!(relative(reference_loss(model.params(), s), *loss) < 1e-12);
        }
    }
}

#[test]
fn mean_of_per_sample_grads_is_batch_grad() {
    for seed in 0..4u64 {
        let model = LineDetectorModel::init(seed + 10);
        let data = nn::generate_lines(8, 8, 9, 3, 0.1, seed).unwrap();
        let mean = nn::per_sample_grads(&model, &data.samples)
            .unwrap()
            .mean_grad();
        let (loss, batch) = nn::batch_loss_and_grad(&model, &data.samples).unwrap();
        assert_eq!(mean.len(), PARAM_COUNT);
        for (a, b) in mean.iter().zip(&batch) {
            assert!(relative(*a, *b) < 1e-12, "{a} vs {b}");
        }
        assert!(relative(loss, nn::mean_loss(&model, &data.samples).unwrap()) < 1e-12);
    }
}

#[test]
fn plain_sgd_loss_decreases_early() {
    for seed in 0..3u64 {
        let data = nn::generate_lines(8, 8, 20, 20, 0.0, seed).unwrap();
        let mut model = LineDetectorModel::init(seed);
        let mut prev = nn::mean_loss(&model, &data.samples).unwrap();
        for _ in 0..50 {
            let (_, g) = nn::batch_loss_and_grad(&model, &data.samples).unwrap();
            for (p, gi) in model.params_mut().iter_mut().zip(&g) {
                *p -= 1e-3 * gi;
            }
            let loss = nn::mean_loss(&model, &data.samples).unwrap();
            assert!(loss <= prev + 1e-15, "seed {seed}: {loss} > {prev}");
            prev = loss;
        }
    }
}

#[test]
fn kmeans_matches_exhaustive_on_small_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for inst in 0..40u64 {
        let n = rng.random_range(3..=8);
        let k = rng.random_range(1..=3usize.min(n));
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)])
            .collect();
        let fm = FeatureMatrix::new(pts.clone()).unwrap();
        let got = cluster::kmeans_restarts(&fm, k, inst, 100, 10)
            .unwrap()
            .objective(&fm);
        let opt = exhaustive_optimum(&pts, k);
        assert!(
            got <= opt + 1e-9 * opt.max(1.0),
            "instance {inst}: {got} vs {opt}"
        );
    }
}

#[test]
fn sgdm_hand_recurrence() {
    // m1 = -1, m2 = -1.9, m3 = 3.29 on (-1, -1, 5), theta accumulates -alpha * m
    let cfg = OptimizerConfig {
        learning_rate: 0.5,
        boost_enabled: false,
        ..Default::default()
    };
    let mut s = SgdmState::new(vec![1.0], 3).unwrap();
    let mut theta = 1.0;
    let mut m = 0.0;
    for g in [-1.0, -1.0, 5.0] {
        m = 0.9 * m + g;
        theta -= 0.5 * m;
        s.step(&[g], &cfg).unwrap();
    }
    assert!((s.momentum[0] - 3.29).abs() < 1e-12);
    assert!((s.params[0] - theta).abs() < 1e-12);
}

#[test]
fn momentum_trajectory_matches_naive_loop() {
    let spec = SparseSignalSpec::new(7.0, -0.5, 4).unwrap();
    let traj = analysis::simulate_momentum(&spec, 0.8, 40);
    let mut m = 0.0;
    for t in 1..=40 {
        let g = if t % 4 == 0 { 7.0 } else { -0.5 };
        m = 0.8 * m + g;
        assert!(relative(m, traj[t - 1]) < 1e-14);
    }
}

#[test]
fn zeta_worked_case() {
    let case = BatchCompositionCase::new(95, 5, 1.0, -0.04).unwrap();
    let z = analysis::zeta(&case).unwrap();
    // larger root of 5 z^2 - 100 z + 95 * (-0.04) = 0
    let naive = (100.0 + (100.0f64 * 100.0 + 4.0 * 5.0 * 3.8).sqrt()) / 10.0;
    assert!(relative(z, naive) < 1e-12);
    assert!((z - 20.0379).abs() < 1e-4);
}
