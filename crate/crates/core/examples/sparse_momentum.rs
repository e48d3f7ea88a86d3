//! Plain and boosted momentum on a periodic sparse signal: `u` at every step
//! except every `N`-th, which carries `C`.
//!
//! `cargo run --example sparse_momentum -- 5`  (the `|C/u|` ratio)

use grad_queue::analysis::{self, LemmaParams, SparseSignalSpec};

fn main() -> grad_queue::Result<()> {
    let ratio: f64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(5.0);
    let spec = SparseSignalSpec::new(ratio, -1.0, 9)?;
    let params = LemmaParams {
        beta: 0.9,
        rho: 3.0,
        l: 3,
        k: 1,
    };

    let plain = analysis::simulate_momentum(&spec, params.beta, 5 * spec.n);
    let boosted = analysis::simulate_gq_momentum(&spec, &params, 5 * spec.n)?;

    println!("|C/u| = {ratio}");
    println!(
        "plain threshold   {:.4}",
        analysis::threshold_plain(spec.n, params.beta)
    );
    println!(
        "boosted threshold {:.4}",
        analysis::threshold_boosted(spec.n, &params)?
    );
    println!("{:>4} {:>6} {:>10} {:>10}", "t", "g", "plain", "boosted");
    for t in 1..=plain.len() {
        let mark = if t % spec.n == 0 { "  <- kN" } else { "" };
        println!(
            "{t:>4} {:>6} {:>10.4} {:>10.4}{mark}",
            spec.at(t),
            plain[t - 1],
            boosted[t - 1]
        );
    }

    let rows = analysis::sign_sweep(spec.n, &params, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 5)?;
    println!("\nratio  plain follows C  boosted follows C");
    for r in rows {
        println!(
            "{:>5}  {:>15}  {:>17}",
            r.ratio, r.plain_follows_c, r.boosted_follows_c
        );
    }
    Ok(())
}
