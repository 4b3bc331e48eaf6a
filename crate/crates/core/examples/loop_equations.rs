//! Schwinger-Dyson relations for the cubic, quartic and type (2,0) models.

use fuzzy_bootstrap::coeff::Q;
use fuzzy_bootstrap::dirac::{EnsembleSpec, Signature};
use fuzzy_bootstrap::loops::{generate_sde, LoopModel};
use fuzzy_bootstrap::words::{Alphabet, Letter, Word};

fn show(title: &str, spec: &EnsembleSpec, words: &[Word], prune: bool) -> fuzzy_bootstrap::Result<()> {
    println!("{title}");
    let model = LoopModel::from_spec(spec)?;
    let a = Alphabet::new(spec.alphabet_size());
    for w in words {
        let rel = generate_sde(&model, w, Letter(0), prune)?;
        println!("  W = {:<8} {rel}", a.render(w));
    }
    println!();
    Ok(())
}

fn main() -> fuzzy_bootstrap::Result<()> {
    let h = |l| Word::power(Letter(0), l);
    let ls: Vec<Word> = (0..=4).map(h).collect();

    show("cubic (1,0), symbolic g", &EnsembleSpec::cubic(Q::from_integer(0.into())), &ls, false)?;

    for sig in [Signature::TYPE_10, Signature::TYPE_01] {
        let spec = EnsembleSpec::quartic(sig, Q::from_integer(1.into()), Q::from_integer(1.into()))?;
        show(&format!("quartic ({},{})", sig.p, sig.q), &spec, &ls, true)?;
    }

    let spec = EnsembleSpec::quartic(Signature::TYPE_20, Q::from_integer(1.into()), Q::from_integer(1.into()))?;
    let a = Alphabet::new(2);
    let words: Vec<Word> = ["A", "AAA", "ABB", "AAAAA"].iter().map(|s| a.parse(s)).collect::<Result<_, _>>()?;
    show("quartic (2,0), symmetric sector", &spec, &words, true)
}
