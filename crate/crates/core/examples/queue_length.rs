//! The loss-driven queue-length controller on synthetic loss feeds.
//!
//! `cargo run --example queue_length`

use grad_queue::experiment;
use grad_queue::queue::QueueLengthController;

fn main() -> grad_queue::Result<()> {
    let feeds = [
        ("staged", experiment::staged_losses(16)),
        (
            "decreasing",
            (0..16).map(|t| 1.0 / (1.0 + t as f64)).collect(),
        ),
        ("flat", vec![0.5; 16]),
    ];
    for (name, losses) in feeds {
        let mut ctrl = QueueLengthController::new(2, 3, 5)?;
        let lens: Vec<usize> = losses
            .iter()
            .map(|&l| {
                ctrl.record(l);
                ctrl.effective_length()
            })
            .collect();
        println!("{name:<10} {lens:?}");
    }
    Ok(())
}
