//! Boosting a gradient against the statistics of a short queue.
//!
//! `cargo run --example boost_operator`

use grad_queue::queue::{BoostConfig, GradQueue};

fn main() -> grad_queue::Result<()> {
    let cfg = BoostConfig::with_rho(3.0)?;
    let mut queue = GradQueue::new(4)?;

    // two coordinates: the first is steady, the second occasionally spikes
    let history = [[1.0, 0.1], [1.1, -0.1], [0.9, 0.1], [1.0, -0.1]];
    for g in &history {
        println!("push {g:?} (warm: {})", queue.is_warm());
        queue.push(g)?;
    }

    let stats = queue.stats()?;
    println!("mean {:?}", stats.mean);
    println!("std  {:?}", stats.std);

    for g in [[1.0, 0.1], [1.05, 2.0], [3.0, 0.0]] {
        let b = queue.boost(&g, &cfg)?;
        let scale: Vec<f64> = g
            .iter()
            .zip(&b)
            .map(|(g, b)| if *g == 0.0 { 1.0 } else { b / g })
            .collect();
        println!("g {g:?} -> {b:?}  scale {scale:.3?}");
    }
    Ok(())
}
