//! Adam and boosted Adam on a stream where one coordinate only rarely
//! carries signal.
//!
//! `cargo run --example gq_adam`

use grad_queue::optim::{AdamState, OptimizerConfig};

fn main() -> grad_queue::Result<()> {
    let plain_cfg = OptimizerConfig {
        learning_rate: 0.01,
        boost_enabled: false,
        ..Default::default()
    };
    let gq_cfg = OptimizerConfig {
        boost_enabled: true,
        ..plain_cfg
    };
    let mut plain = AdamState::new(vec![0.0, 0.0], 5)?;
    let mut gq = plain.clone();

    for t in 1..=60 {
        let g = [0.5, if t % 10 == 0 { 4.0 } else { -0.2 }];
        plain.step(&g, &plain_cfg)?;
        gq.step(&g, &gq_cfg)?;
        if t % 10 == 0 {
            println!(
                "t {t:>2}  adam {:>8.4?}  gq-adam {:>8.4?}",
                plain.params, gq.params
            );
        }
    }
    Ok(())
}
