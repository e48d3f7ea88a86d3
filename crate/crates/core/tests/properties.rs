use grad_queue::cluster::{self, FeatureMatrix};
use grad_queue::optim::{OptimizerConfig, SgdmState};
use grad_queue::queue::{self, BoostConfig, GradQueue, QueueLengthController, QueueStats};
use proptest::prelude::*;

fn two_pass(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let d = samples[0].len();
    let mean: Vec<f64> = (0..d)
        .map(|j| samples.iter().map(|s| s[j]).sum::<f64>() / n)
        .collect();
    let std = (0..d)
        .map(|j| {
            (samples
                .iter()
                .map(|s| (s[j] - mean[j]).powi(2))
                .sum::<f64>()
                / n)
                .sqrt()
        })
        .collect();
    (mean, std)
}

fn queue_of(entries: &[Vec<f64>]) -> GradQueue {
    let mut q = GradQueue::new(entries.len()).unwrap();
    for e in entries {
        q.push(e).unwrap();
    }
    q
}

fn entries(d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-100.0..100.0f64, d), 3..8)
}

proptest! {
    #[test]
    fn boost_stays_within_clamp(es in entries(4), g in prop::collection::vec(-100.0..100.0f64, 4), rho in 1.0..10.0f64) {
        let cfg = BoostConfig::with_rho(rho).unwrap();
        let b = queue_of(&es).boost(&g, &cfg).unwrap();
        for (gi, bi) in g.iter().zip(&b) {
            prop_assert!(bi.abs() <= rho * gi.abs() * (1.0 + 1e-12));
            prop_assert!(bi.abs() >= gi.abs() / rho * (1.0 - 1e-12));
        }
    }

    #[test]
    fn boost_preserves_sign(es in entries(3), g in prop::collection::vec(-100.0..100.0f64, 3), rho in 1.0..10.0f64) {
        let cfg = BoostConfig::with_rho(rho).unwrap();
        let b = queue_of(&es).boost(&g, &cfg).unwrap();
        for (gi, bi) in g.iter().zip(&b) {
            prop_assert!(gi * bi >= 0.0);
            prop_assert_eq!(*gi == 0.0, *bi == 0.0);
        }
    }

    #[test]
    fn boost_is_scale_equivariant(es in entries(3), g in prop::collection::vec(-100.0..100.0f64, 3), c in 0.01..100.0f64) {
        let cfg = BoostConfig::with_rho(3.0).unwrap();
        let (_, std) = two_pass(&es);
        prop_assume!(std.iter().all(|&s| s > 1e-6));
        // keep clear of the clamp knees, where rounding can flip a branch
        let stats = QueueStats::from_samples(es.iter().map(|e| e.as_slice())).unwrap();
        for (i, gi) in g.iter().enumerate() {
            let z = (gi - stats.mean[i]).abs() / stats.std[i];
            prop_assume!([1.0 / 3.0, 1.0, 3.0].iter().all(|k| (z - k).abs() > 1e-6));
        }
        let scaled: Vec<Vec<f64>> = es.iter().map(|e| e.iter().map(|v| c * v).collect()).collect();
        let a = queue_of(&es).boost(&g, &cfg).unwrap();
        let sg: Vec<f64> = g.iter().map(|v| c * v).collect();
        let b = queue_of(&scaled).boost(&sg, &cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((c * x - y).abs() <= 1e-9 * y.abs().max(1e-300));
        }
    }

    #[test]
    fn stats_match_two_pass(es in entries(5)) {
        let stats = QueueStats::from_samples(es.iter().map(|e| e.as_slice())).unwrap();
        let (mean, std) = two_pass(&es);
        for j in 0..5 {
            prop_assert!((stats.mean[j] - mean[j]).abs() <= 1e-12 * mean[j].abs().max(1.0));
            prop_assert!((stats.std[j] - std[j]).abs() <= 1e-12 * std[j].abs().max(1.0));
        }
        prop_assert_eq!(stats.sample_count, es.len());
    }

    #[test]
    fn stats_ignore_queue_order(es in entries(3), g in prop::collection::vec(-100.0..100.0f64, 3)) {
        let mut rev = es.clone();
        rev.reverse();
        let a = queue_of(&es).stats().unwrap();
        let b = queue_of(&rev).stats().unwrap();
        for j in 0..3 {
            prop_assert!((a.mean[j] - b.mean[j]).abs() <= 1e-12 * a.mean[j].abs().max(1.0));
            prop_assert!((a.std[j] - b.std[j]).abs() <= 1e-12 * a.std[j].abs().max(1.0));
        }
        let cfg = BoostConfig::default();
        let ba = queue::delta_rho(&g, &a, &cfg).unwrap();
        let bb = queue::delta_rho(&g, &b, &cfg).unwrap();
        for (x, y) in ba.iter().zip(&bb) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }

    #[test]
    fn plain_momentum_is_linear(a in prop::collection::vec(-10.0..10.0f64, 1..30), b in prop::collection::vec(-10.0..10.0f64, 1..30)) {
        let n = a.len().min(b.len());
        let cfg = OptimizerConfig { boost_enabled: false, ..Default::default() };
        let run = |s: &dyn Fn(usize) -> f64| {
            let mut st = SgdmState::new(vec![0.0], 3).unwrap();
            for t in 0..n {
                st.step(&[s(t)], &cfg).unwrap();
            }
            (st.momentum[0], st.params[0])
        };
        let (ma, pa) = run(&|t| a[t]);
        let (mb, pb) = run(&|t| b[t]);
        let (mab, pab) = run(&|t| a[t] + b[t]);
        prop_assert!((ma + mb - mab).abs() <= 1e-9 * (ma.abs() + mb.abs()).max(1.0));
        prop_assert!((pa + pb - pab).abs() <= 1e-9 * (pa.abs() + pb.abs()).max(1.0));
    }

    #[test]
    fn kmeans_conserves_population(pts in prop::collection::vec(prop::collection::vec(-10.0..10.0f64, 2), 1..40), k in 1usize..6, seed in any::<u64>()) {
        prop_assume!(k <= pts.len());
        let fm = FeatureMatrix::new(pts.clone()).unwrap();
        let a = cluster::kmeans(&fm, k, seed, 50).unwrap();
        prop_assert_eq!(a.populations().iter().sum::<usize>(), pts.len());
        prop_assert!(a.populations().iter().all(|&p| p > 0));
        prop_assert!(a.objective_trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-12));
    }

    #[test]
    fn controller_stays_in_bounds(losses in prop::collection::vec(0.0..10.0f64, 1..60), window in 1usize..4, min in 1usize..4, extra in 0usize..4) {
        prop_assume!(window <= min + extra);
        let mut c = QueueLengthController::new(window, min, min + extra).unwrap();
        for l in losses {
            c.record(l);
            prop_assert!((min..=min + extra).contains(&c.effective_length()));
        }
    }

    #[test]
    fn choose_k_is_positive(b in 0usize..1000, opt in 0usize..100) {
        prop_assert!(cluster::choose_k(b, opt) >= 1);
    }
}
