//! Closed-form momentum values against direct simulation.
//!
//! `cargo run --example lemma_oracles`

use grad_queue::experiment::{self, CheckStatus, ClosedForms};

fn main() {
    let rows = experiment::lemma_rows(0, &ClosedForms::default());
    for lemma in ["lemma1", "lemma2", "lemma3", "lemma3-queue"] {
        for r in rows
            .iter()
            .filter(|r| r.lemma == lemma && (r.k == 3 || lemma == "lemma2"))
            .take(6)
        {
            let closed = r
                .closed
                .map(|v| format!("{v:.6}"))
                .unwrap_or_else(|| "-".into());
            let simulated = r
                .simulated
                .map(|v| format!("{v:.6}"))
                .unwrap_or_else(|| "-".into());
            println!(
                "{:<13} beta {:<4} N {:<2} L {:<2} rho {:<3} closed {closed:>14} simulated {simulated:>14} {:?} {}",
                r.lemma, r.beta, r.n, r.l, r.rho, r.status, r.note
            );
        }
    }
    let fails = rows
        .iter()
        .filter(|r| r.status == CheckStatus::Fail)
        .count();
    println!("{} cells, {fails} failures", rows.len());
}
