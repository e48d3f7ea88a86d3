//! Intra-batch clustering and population-weighted boosted aggregation.
//!
//! Samples are grouped by k-means on their feature vectors. Each cluster's
//! mean gradient is boosted on its own, and the boosted means are recombined
//! weighted by cluster population:
//!
//! ```text
//! g* = (1/B) * sum_j population_j * boost(mean_j)
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::queue::{delta_rho, BoostConfig, QueueStats};

/// One feature vector per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyBatch)?;
        let dim = first.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Objective after every assignment pass, starting from the seeding.
    pub objective_trace: Vec<f64>,
}

impl ClusterAssignment {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn populations(&self) -> Vec<usize> {
        let mut pops = vec![0; self.k()];
        for &l in &self.labels {
            pops[l] += 1;
        }
        pops
    }

    /// Sum of squared distances from each sample to its centroid.
    pub fn objective(&self, features: &FeatureMatrix) -> f64 {
        features
            .rows()
            .iter()
            .zip(&self.labels)
            .map(|(x, &l)| sq_dist(x, &self.centroids[l]))
            .sum()
    }

    /// Single-cluster assignment, useful when clustering is disabled.
    pub fn single(features: &FeatureMatrix) -> Self {
        let mut mean = vec![0.0; features.dim()];
        for row in features.rows() {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        let n = features.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        let mut out = Self {
            labels: vec![0; features.len()],
            centroids: vec![mean],
            objective_trace: vec![],
        };
        out.objective_trace.push(out.objective(features));
        out
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

fn kmeans_plus_plus(rows: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![rows[first].clone()];
    let mut d2: Vec<f64> = rows.iter().map(|x| sq_dist(x, &rows[first])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc >= target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave target just above the final partial sum
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            // every point coincides with a centroid: take an unused index
            let unused: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            unused[rng.random_range(0..unused.len())]
        };
        chosen[pick] = true;
        centroids.push(rows[pick].clone());
        for (d, x) in d2.iter_mut().zip(rows) {
            *d = d.min(sq_dist(x, &rows[pick]));
        }
    }
    centroids
}

/// Move each sample to a strictly closer centroid, if any.
fn reassign(rows: &[Vec<f64>], centroids: &[Vec<f64>], labels: &mut [usize]) {
    for (x, label) in rows.iter().zip(labels.iter_mut()) {
        let mut best = *label;
        let mut best_d = sq_dist(x, &centroids[best]);
        for (j, c) in centroids.iter().enumerate() {
            let d = sq_dist(x, c);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        *label = best;
    }
}

/// Reseed every empty centroid on the sample farthest from its own centroid,
/// taken from a cluster that can spare it.
fn repair_empty(rows: &[Vec<f64>], centroids: &mut [Vec<f64>], labels: &mut [usize]) {
    let k = centroids.len();
    for _ in 0..=rows.len() {
        let mut pops = vec![0usize; k];
        for &l in labels.iter() {
            pops[l] += 1;
        }
        let empties: Vec<usize> = (0..k).filter(|&j| pops[j] == 0).collect();
        if empties.is_empty() {
            return;
        }
        for e in empties {
            let mut far = None;
            let mut far_d = -1.0;
            for (i, x) in rows.iter().enumerate() {
                if pops[labels[i]] > 1 {
                    let d = sq_dist(x, &centroids[labels[i]]);
                    if d > far_d {
                        far_d = d;
                        far = Some(i);
                    }
                }
            }
            let i = far.expect("k <= B leaves a cluster with a spare sample");
            pops[labels[i]] -= 1;
            pops[e] += 1;
            labels[i] = e;
            centroids[e] = rows[i].clone();
        }
        reassign(rows, centroids, labels);
    }
}

fn update_centroids(rows: &[Vec<f64>], labels: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = rows[0].len();
    let mut sums = vec![vec![0.0; dim]; centroids.len()];
    let mut counts = vec![0usize; centroids.len()];
    for (x, &l) in rows.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(x) {
            *s += v;
        }
    }
    for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
        if n > 0 {
            *c = s.into_iter().map(|v| v / n as f64).collect();
        }
    }
}

fn objective(rows: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    rows.iter()
        .zip(labels)
        .map(|(x, &l)| sq_dist(x, &centroids[l]))
        .sum()
}

/// Lloyd's algorithm from deterministic k-means++ seeding.
///
/// Stops when a pass leaves every label unchanged or after `max_iters`
/// centroid updates. No cluster is left empty.
pub fn kmeans(
    features: &FeatureMatrix,
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<ClusterAssignment> {
    let n = features.len();
    if k == 0 || k > n {
        return Err(Error::InvalidClusterCount { k, samples: n });
    }
    let rows = features.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(rows, k, &mut rng);
    let mut labels: Vec<usize> = rows.iter().map(|x| nearest(x, &centroids)).collect();
    repair_empty(rows, &mut centroids, &mut labels);
    let mut trace = vec![objective(rows, &labels, &centroids)];

    for _ in 0..max_iters {
        update_centroids(rows, &labels, &mut centroids);
        let mut next = labels.clone();
        reassign(rows, &centroids, &mut next);
        repair_empty(rows, &mut centroids, &mut next);
        trace.push(objective(rows, &next, &centroids));
        let stable = next == labels;
        labels = next;
        if stable {
            break;
        }
    }

    Ok(ClusterAssignment {
        labels,
        centroids,
        objective_trace: trace,
    })
}

/// Best of `n_init` seeded runs by final objective; the first run wins ties.
pub fn kmeans_restarts(
    features: &FeatureMatrix,
    k: usize,
    seed: u64,
    max_iters: usize,
    n_init: usize,
) -> Result<ClusterAssignment> {
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, ClusterAssignment)> = None;
    for _ in 0..n_init.max(1) {
        let run = kmeans(features, k, seeds.random(), max_iters)?;
        let obj = run.objective(features);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, run));
        }
    }
    Ok(best.expect("at least one run").1)
}

/// Number of clusters for a batch: its size in multiples of the optimal batch.
pub fn choose_k(batch_size: usize, optimal_batch: usize) -> usize {
    if optimal_batch == 0 {
        return 1;
    }
    ((batch_size as f64 / optimal_batch as f64).round() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAggregate {
    pub cluster_mean_grad: Vec<f64>,
    pub population: usize,
    pub boosted: Vec<f64>,
}

/// Per-cluster mean gradients, each passed through `boost`.
pub fn cluster_aggregates<F>(
    grads: &[Vec<f64>],
    assignment: &ClusterAssignment,
    mut boost: F,
) -> Result<Vec<ClusterAggregate>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let first = grads.first().ok_or(Error::EmptyBatch)?;
    let d = first.len();
    if assignment.labels.len() != grads.len() {
        return Err(Error::DimensionMismatch {
            expected: grads.len(),
            found: assignment.labels.len(),
        });
    }
    let k = assignment.k();
    let mut sums = vec![vec![0.0; d]; k];
    let mut pops = vec![0usize; k];
    for (g, &l) in grads.iter().zip(&assignment.labels) {
        if g.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: g.len(),
            });
        }
        if l >= k {
            return Err(Error::InvalidClusterCount {
                k: l + 1,
                samples: grads.len(),
            });
        }
        pops[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(g) {
            *s += v;
        }
    }
    sums.into_iter()
        .zip(pops)
        .filter(|(_, pop)| *pop > 0)
        .map(|(sum, population)| {
            let mean: Vec<f64> = sum.into_iter().map(|s| s / population as f64).collect();
            let boosted = boost(&mean)?;
            Ok(ClusterAggregate {
                cluster_mean_grad: mean,
                population,
                boosted,
            })
        })
        .collect()
}

/// `(1/B) * sum_j population_j * boosted_j`.
pub fn combine(aggregates: &[ClusterAggregate]) -> Vec<f64> {
    let total: usize = aggregates.iter().map(|a| a.population).sum();
    let d = aggregates.first().map_or(0, |a| a.boosted.len());
    let mut out = vec![0.0; d];
    for a in aggregates {
        let w = a.population as f64;
        for (o, b) in out.iter_mut().zip(&a.boosted) {
            *o += w * b;
        }
    }
    out.iter_mut().for_each(|o| *o /= total as f64);
    out
}

/// Population-weighted mean of boosted cluster means.
pub fn aggregate(
    grads: &[Vec<f64>],
    assignment: &ClusterAssignment,
    stats: &QueueStats,
    cfg: &BoostConfig,
) -> Result<Vec<f64>> {
    let aggs = cluster_aggregates(grads, assignment, |m| delta_rho(m, stats, cfg))?;
    Ok(combine(&aggs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn features(rows: &[&[f64]]) -> FeatureMatrix {
        FeatureMatrix::new(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn separated_groups() {
        let f = features(&[
            &[0.0, 0.0],
            &[0.2, 0.0],
            &[0.0, 0.2],
            &[10.0, 10.0],
            &[10.4, 10.0],
        ]);
        let a = kmeans(&f, 2, 7, 100).unwrap();
        assert_eq!(a.labels[0], a.labels[1]);
        assert_eq!(a.labels[0], a.labels[2]);
        assert_eq!(a.labels[3], a.labels[4]);
        assert_ne!(a.labels[0], a.labels[3]);
        let small = &a.centroids[a.labels[0]];
        let big = &a.centroids[a.labels[3]];
        assert!((small[0] - 0.2 / 3.0).abs() < 1e-12 && (small[1] - 0.2 / 3.0).abs() < 1e-12);
        assert!((big[0] - 10.2).abs() < 1e-12 && (big[1] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn single_cluster_is_global_mean() {
        let f = features(&[&[1.0], &[2.0], &[6.0]]);
        let a = kmeans(&f, 1, 0, 10).unwrap();
        assert_eq!(a.labels, vec![0, 0, 0]);
        assert!((a.centroids[0][0] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn one_cluster_per_point() {
        let f = features(&[&[1.0], &[2.0], &[6.0], &[-3.0]]);
        let a = kmeans(&f, 4, 3, 10).unwrap();
        assert_eq!(a.objective(&f), 0.0);
        assert_eq!(a.populations(), vec![1, 1, 1, 1]);
    }

    #[test]
    fn duplicated_points_keep_clusters_nonempty() {
        let f = features(&[&[1.0], &[1.0], &[1.0], &[1.0]]);
        let a = kmeans(&f, 3, 11, 10).unwrap();
        assert!(a.populations().iter().all(|&p| p > 0));
    }

    #[test]
    fn invalid_k() {
        let f = features(&[&[1.0], &[2.0]]);
        assert!(matches!(
            kmeans(&f, 0, 0, 10),
            Err(Error::InvalidClusterCount { .. })
        ));
        assert!(matches!(
            kmeans(&f, 3, 0, 10),
            Err(Error::InvalidClusterCount { .. })
        ));
    }

    #[test]
    fn choose_k_rounds_ratio() {
        assert_eq!(choose_k(512, 128), 4);
        assert_eq!(choose_k(64, 128), 1);
        assert_eq!(choose_k(128, 128), 1);
        assert_eq!(choose_k(300, 128), 2);
        assert_eq!(choose_k(0, 128), 1);
    }

    #[test]
    fn aggregate_worked_scalar_case() {
        // clusters {-1,-1,-1} and {9} against mu=0, sigma=1, rho=3:
        // z=1 keeps -1, z=9 clamps to 3 -> 27; (3*(-1) + 27) / 4 = 6
        let grads = vec![vec![-1.0], vec![-1.0], vec![-1.0], vec![9.0]];
        let assignment = ClusterAssignment {
            labels: vec![0, 0, 0, 1],
            centroids: vec![vec![0.0], vec![1.0]],
            objective_trace: vec![],
        };
        let stats = QueueStats {
            mean: vec![0.0],
            std: vec![1.0],
            sample_count: 3,
        };
        let g = aggregate(&grads, &assignment, &stats, &BoostConfig::default()).unwrap();
        assert_eq!(g, vec![6.0]);
    }

    #[test]
    fn aggregate_single_cluster_boosts_batch_mean() {
        let grads = vec![vec![1.0, -2.0], vec![3.0, 0.0]];
        let f = features(&[&[0.0], &[1.0]]);
        let assignment = ClusterAssignment::single(&f);
        let stats = QueueStats {
            mean: vec![0.0, 0.0],
            std: vec![0.5, 2.0],
            sample_count: 3,
        };
        let cfg = BoostConfig::default();
        let g = aggregate(&grads, &assignment, &stats, &cfg).unwrap();
        assert_eq!(g, delta_rho(&[2.0, -1.0], &stats, &cfg).unwrap());
    }

    #[test]
    fn aggregate_rejects_empty() {
        let assignment = ClusterAssignment {
            labels: vec![],
            centroids: vec![vec![0.0]],
            objective_trace: vec![],
        };
        let stats = QueueStats {
            mean: vec![0.0],
            std: vec![1.0],
            sample_count: 1,
        };
        assert_eq!(
            aggregate(&[], &assignment, &stats, &BoostConfig::default()),
            Err(Error::EmptyBatch)
        );
    }
}
