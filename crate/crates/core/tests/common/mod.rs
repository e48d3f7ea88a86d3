#![allow(dead_code)]
//! Oracles shared by the integration and acceptance targets.

use grad_queue::nn::Sample;

pub fn relative(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Loss of one sample computed from the raw parameter vector, written
/// independently of the library's forward pass.
pub fn reference_loss(params: &[f64], sample: &Sample) -> f64 {
    let [h, w] = [sample.image.shape()[0], sample.image.shape()[1]];
    let px = sample.image.values();
    let mut feats = [0.0; 2];
    for (f, feat) in feats.iter_mut().enumerate() {
        let off = 10 * f;
        let mut best = f64::NEG_INFINITY;
        for r in 0..h - 2 {
            for c in 0..w - 2 {
                let mut s = params[off + 9];
                for i in 0..3 {
                    for j in 0..3 {
                        s += params[off + 3 * i + j] * px[(r + i) * w + c + j];
                    }
                }
                best = best.max(s);
            }
        }
        *feat = best;
    }
    let z = params[20] * feats[0] + params[21] * feats[1] + params[22];
    let y = sample.target();
    let p = 1.0 / (1.0 + (-z).exp());
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Central difference of the reference loss.
pub fn fd_grad(params: &[f64], sample: &Sample, h: f64) -> Vec<f64> {
    (0..params.len())
        .map(|i| {
            let mut a = params.to_vec();
            let mut b = params.to_vec();
            a[i] += h;
            b[i] -= h;
            (reference_loss(&a, sample) - reference_loss(&b, sample)) / (2.0 * h)
        })
        .collect()
}

/// Smallest within-cluster sum of squares over every labelling that uses
/// all `k` labels.
pub fn exhaustive_optimum(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let d = points[0].len();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let mut used = vec![false; k];
        labels.iter().for_each(|&l| used[l] = true);
        if used.iter().all(|&u| u) {
            let mut sse = 0.0;
            for c in 0..k {
                let members: Vec<&Vec<f64>> = points
                    .iter()
                    .zip(&labels)
                    .filter(|(_, &l)| l == c)
                    .map(|(p, _)| p)
                    .collect();
                let mean: Vec<f64> = (0..d)
                    .map(|j| members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64)
                    .collect();
                sse += members
                    .iter()
                    .map(|p| {
                        p.iter()
                            .zip(&mean)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                    })
                    .sum::<f64>();
            }
            best = best.min(sse);
        }
        let mut i = 0;
        while i < n {
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
        if i == n {
            return best;
        }
    }
}
