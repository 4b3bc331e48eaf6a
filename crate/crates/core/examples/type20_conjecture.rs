//! Quartic type (2,0): bootstrap band for d2 against the conjectured closed form.
//!
//! `cargo run --release --example type20_conjecture`

use fuzzy_bootstrap::coeff::Q;
use fuzzy_bootstrap::dirac::{conjectured_m2, EnsembleSpec, Signature};
use fuzzy_bootstrap::scan::{interval_for_spec, ScanOptions};

fn main() -> fuzzy_bootstrap::Result<()> {
    let spec = EnsembleSpec::quartic(Signature::TYPE_20, Q::from_integer(1.into()), Q::from_integer(1.into()))?;
    let opts = ScanOptions::default();
    for (t2, t4) in [(1.0, 1.0), (0.5, 1.0), (-0.5, 1.0)] {
        let c = vec![("t2".to_string(), t2), ("t4".to_string(), t4)];
        let conj = conjectured_m2(t2, t4)?;
        for lambda in [2, 4] {
            let i = interval_for_spec(&spec, &c, "m2", (0.0, 2.0), lambda, &opts)?;
            // d2 = 4 N Tr A² + ... ⇒ d2 = 8 m2 at large N with A, B identically distributed
            println!(
                "t2 = {t2:>4}, Λ = {lambda}: m2 ∈ [{:.6}, {:.6}], 8·m2 ∈ [{:.5}, {:.5}], 4·m2 ∈ [{:.5}, {:.5}], conjecture {conj:.5}",
                i.lo,
                i.hi,
                8.0 * i.lo,
                8.0 * i.hi,
                4.0 * i.lo,
                4.0 * i.hi
            );
        }
    }
    Ok(())
}
