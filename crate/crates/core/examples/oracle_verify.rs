//! Closed-form posteriors, marginals and scores against dense Gaussian
//! references over random instances.
//!
//! ```bash
//! cargo run --release --example oracle_verify -- 200
//! ```

use plda2x::oracle::{verify, VerifyConfig};

fn main() -> plda2x::Result<()> {
    let instances = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(100);
    let rep = verify(&VerifyConfig::sweep(instances, 1))?;
    println!("{instances} random instances");
    for (name, dev, tol) in rep.checks() {
        println!("{name:<26} {dev:.2e}  (threshold {tol:.0e})");
    }
    println!(
        "{}",
        if rep.passed() {
            "all within thresholds"
        } else {
            "THRESHOLD EXCEEDED"
        }
    );
    Ok(())
}
