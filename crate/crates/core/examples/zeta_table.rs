//! Batch composition cases and the boost factor that restores the sparse mean.
//!
//! `cargo run --example zeta_table`

use grad_queue::analysis::{self, BatchCompositionCase};

fn main() -> grad_queue::Result<()> {
    println!(
        "{:>4} {:>3} {:>3} {:>7} {:>9} {:>5} {:>10}",
        "B", "p", "q", "E(g^p)", "E(g^b)", "case", "zeta"
    );
    for eq_p in [-0.04, -0.05, -0.2, -1.0, 0.5] {
        let case = BatchCompositionCase::new(95, 5, 1.0, eq_p)?;
        let err = analysis::batch_error_case(&case);
        let zeta = analysis::zeta(&case)
            .map(|z| format!("{z:.4}"))
            .unwrap_or_else(|e| e.to_string());
        println!(
            "{:>4} {:>3} {:>3} {:>7} {:>9.4} {:>5} {:>10}",
            case.b,
            case.p,
            case.q,
            eq_p,
            err.batch_mean,
            err.case.label(),
            zeta
        );
    }

    let case = BatchCompositionCase::new(95, 5, 1.0, -0.04)?;
    let z = analysis::zeta(&case)?;
    println!(
        "boosted batch mean at zeta = {}",
        case.boosted_batch_mean(z)
    );
    Ok(())
}
