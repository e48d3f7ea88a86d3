//! Clustered aggregation of per-sample gradients: each cluster mean is
//! boosted on its own and weighted by population.
//!
//! `cargo run --example cluster_aggregation`

use grad_queue::cluster::{self, FeatureMatrix};
use grad_queue::queue::{BoostConfig, GradQueue};

fn main() -> grad_queue::Result<()> {
    // 9 samples that agree, 1 that disagrees
    let mut features = vec![vec![0.0, 0.0]; 9];
    features.push(vec![5.0, 5.0]);
    let mut grads = vec![vec![-1.0]; 9];
    grads.push(vec![9.0]);

    let features = FeatureMatrix::new(features)?;
    let k = cluster::choose_k(10, 5);
    let assignment = cluster::kmeans(&features, k, 7, 20)?;
    println!(
        "k = {k}, labels {:?}, populations {:?}",
        assignment.labels,
        assignment.populations()
    );

    let mut queue = GradQueue::new(4)?;
    for g in [[-0.8], [-1.2], [-0.9], [-1.1]] {
        queue.push(&g)?;
    }
    let cfg = BoostConfig::with_rho(3.0)?;
    let aggs = cluster::cluster_aggregates(&grads, &assignment, |m| queue.boost(m, &cfg))?;
    for a in &aggs {
        println!(
            "cluster of {:>2}: mean {:?} boosted {:?}",
            a.population, a.cluster_mean_grad, a.boosted
        );
    }
    let plain: f64 = grads.iter().map(|g| g[0]).sum::<f64>() / grads.len() as f64;
    println!("plain batch mean {plain}");
    println!("clustered boost  {:?}", cluster::combine(&aggs));
    Ok(())
}
