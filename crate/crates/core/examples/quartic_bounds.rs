//! Nested bootstrap bounds on m2 for the symmetric quartic (1,0) model.
//!
//! `cargo run --release --example quartic_bounds -- 1.0`

use fuzzy_bootstrap::dirac::{EnsembleSpec, Signature};
use fuzzy_bootstrap::coeff::Q;
use fuzzy_bootstrap::scan::{interval_for_spec, ScanOptions};

fn main() -> fuzzy_bootstrap::Result<()> {
    let t2: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let spec = EnsembleSpec::quartic(Signature::TYPE_10, Q::from_integer(1.into()), Q::from_integer(1.into()))?;
    let opts = ScanOptions { depth: 40, ..ScanOptions::default() };
    println!("t2 = {t2}, t4 = 1");
    println!("{:>6} {:>14} {:>14} {:>10}", "Λ", "lo", "hi", "width");
    for lambda in [2, 3, 4, 5, 6, 8] {
        let i = interval_for_spec(&spec, &[("t2".into(), t2)], "m2", (0.0, 2.0), lambda, &opts)?;
        println!("{lambda:>6} {:>14.9} {:>14.9} {:>10.2e}", i.lo, i.hi, i.width());
    }
    Ok(())
}
