//! Trace words: cyclic canonical forms, adjoints and symmetry reduction.

use fuzzy_bootstrap::dirac::Signature;
use fuzzy_bootstrap::words::{canonical_cyclic, canonical_moment, enumerate_moments, Alphabet, Reduced, SymmetryGroup};

fn main() -> fuzzy_bootstrap::Result<()> {
    let a = Alphabet::new(2);
    for s in ["BAAB", "ABAB", "AABAB", "BBA"] {
        let w = a.parse(s)?;
        println!(
            "{s:<6} cyclic {:<6} moment {}",
            a.render(canonical_cyclic(&w).word()),
            a.render(canonical_moment(&w).word())
        );
    }

    let group = SymmetryGroup::new(Signature::TYPE_20.natural_symmetries());
    for len in 1..=4 {
        let all = enumerate_moments(2, len);
        let this: Vec<_> = all.iter().filter(|w| w.len() == len).collect();
        let zero = this.iter().filter(|w| matches!(group.reduce(w), Reduced::Zero)).count();
        println!("length {len}: {} moments, {zero} vanish by symmetry", this.len());
    }
    Ok(())
}
