//! Paired SGDM / GQ-SGDM training of the two-filter line detector on a
//! batch of mostly horizontal lines.
//!
//! `cargo run --release --example line_detection -- [seed]`

use grad_queue::experiment::{self, ExperimentConfig};
use grad_queue::nn::{self, LineDetectorModel};

fn main() -> grad_queue::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let cfg = ExperimentConfig {
        seed,
        ..ExperimentConfig::default()
    };

    let data = nn::generate_lines(
        cfg.height,
        cfg.width,
        cfg.p,
        cfg.q,
        cfg.noise,
        cfg.seeds().dataset,
    )?;
    println!("dataset {:?} (horizontal, vertical)", data.counts());
    let init = LineDetectorModel::init(cfg.seeds().init);
    println!("initial alignment {:?}", nn::template_alignment(&init));

    let trace = experiment::train_lines(&cfg)?;
    println!("batch {}, clusters {}", trace.batch_size, trace.clusters);
    println!(
        "{:>5} {:>10} {:>10} {:>9} {:>9}",
        "step", "loss", "loss gq", "f2", "f2 gq"
    );
    let last = trace.rows.len() - 1;
    for r in trace
        .rows
        .iter()
        .enumerate()
        .filter(|(i, _)| i % 30 == 0 || *i == last)
        .map(|(_, r)| r)
    {
        println!(
            "{:>5} {:>10.5} {:>10.5} {:>9.4} {:>9.4}",
            r.step, r.loss_sgdm, r.loss_gq, r.align_sgdm[1], r.align_gq[1]
        );
    }
    Ok(())
}
