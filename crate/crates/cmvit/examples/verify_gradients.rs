//! Runs the 64-bit gradient-verification suite: finite-difference checks for
//! every layer and a sampled-coordinate check for each full model.
//!
//! ```bash
//! cargo run --example verify_gradients
//! ```

use cmvit::verify::run_verification;

fn main() {
    let checks = run_verification(17).unwrap();
    let mut failures = 0;
    for c in &checks {
        println!(
            "{} {:<28} max_rel_err = {:.3e} (tol {:.0e})",
            if c.passed() { "ok  " } else { "FAIL" },
            c.name,
            c.max_rel_err,
            c.tolerance
        );
        failures += usize::from(!c.passed());
    }
    assert_eq!(failures, 0, "{failures} checks failed");
    println!("all {} checks passed", checks.len());
}
