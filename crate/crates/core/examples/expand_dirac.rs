//! Multitrace expansion of Tr Dᵏ for every supported signature.
//!
//! `cargo run --example expand_dirac -- 4`

use fuzzy_bootstrap::dirac::{expand_dirac_power, GammaBasis, Signature};

fn main() -> fuzzy_bootstrap::Result<()> {
    let k: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    for sig in [Signature::TYPE_10, Signature::TYPE_01, Signature::TYPE_20, Signature::TYPE_11, Signature::TYPE_02] {
        GammaBasis::new(sig)?.verify()?;
        let poly = expand_dirac_power(sig, k)?;
        println!("({},{})  Tr D^{k} = {poly}", sig.p, sig.q);
        println!("        {} terms\n", poly.len());
    }
    Ok(())
}
