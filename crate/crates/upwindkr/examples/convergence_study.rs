//! Runs a full convergence study end to end and prints the per-level table
//! with the fitted rates. Takes a test-case id as an optional argument.
//!
//! Run with `cargo run --release --example convergence_study [tc0..tc6]`.

use upwindkr::harness::{run_study, test_case, ExperimentConfig, TEST_CASE_IDS};

fn main() {
    let id = std::env::args().nth(1).unwrap_or_else(|| "tc4".to_string());
    let Some(tc) = test_case(&id) else {
        eprintln!("unknown test case {id:?}; available: {TEST_CASE_IDS:?}");
        std::process::exit(2);
    };
    println!("{id}: {}", tc.summary);

    let cfg = ExperimentConfig::for_test_case(&id);
    let report = run_study(&cfg).expect("study");

    println!("\n level      h        delta       r        t       dr         dr*r        w1          l1");
    for row in &report.rows {
        println!(
            " {:4}  {:.6}  {:.6}  {:.5}  {:.4}  {:.6}  {:.3e}  {:.3e}  {:.3e}",
            row.level, row.h, row.delta, row.r, row.time, row.dr, row.dr * row.r, row.w1, row.l1
        );
    }
    println!("\nfitted rates at the final time:");
    println!(
        "  weak (dr*r vs h):                    {:+.4} +- {:.4}",
        report.weak_rate_h.slope, report.weak_rate_h.half_width
    );
    println!(
        "  weak (dr*r vs sqrt(h)+sqrt(delta)):  {:+.4} +- {:.4}",
        report.weak_rate_scale.slope, report.weak_rate_scale.half_width
    );
    println!(
        "  strong (l1 vs h):                    {:+.4} +- {:.4}",
        report.strong_rate_h.slope, report.strong_rate_h.half_width
    );

    let mut diags = report.diagnostics.clone();
    diags.sort_by_key(|d| d.level);
    println!("\nper-level diagnostics:");
    for d in &diags {
        println!(
            "  level {}: steps={:4}  drift={:.1e}  min={:+.1e}  lambda={:.4}  stability margin={:+.3e}",
            d.level, d.steps, d.mass_drift_max, d.min_value, d.stability.lambda, d.stability.margin
        );
    }
}
