//! Metropolis estimates for the quartic (1,0) model compared with the
//! bootstrap band at level 6.
//!
//! `cargo run --release --example monte_carlo -- 10 4000`

use fuzzy_bootstrap::coeff::Q;
use fuzzy_bootstrap::dirac::{EnsembleSpec, Signature};
use fuzzy_bootstrap::mc::{estimate_moments, pool_estimates, run_chains, ChainConfig, McModel};
use fuzzy_bootstrap::scan::{interval_for_spec, ScanOptions};
use fuzzy_bootstrap::words::{Letter, Word};

fn main() -> fuzzy_bootstrap::Result<()> {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<usize>().ok());
    let n = args.next().flatten().unwrap_or(10);
    let steps = args.next().flatten().unwrap_or(4000);

    let spec = EnsembleSpec::quartic(Signature::TYPE_10, Q::from_integer(1.into()), Q::from_integer(1.into()))?;
    let model = McModel::from_spec(&spec)?;
    let cfg = ChainConfig::new(n, steps, steps / 5, 2024);
    let chains = run_chains(&model, &cfg, 4)?;
    let words: Vec<Word> = [2, 4].iter().map(|&k| Word::power(Letter(0), k)).collect();
    let per: Vec<_> = chains.iter().map(|c| estimate_moments(c, &words)).collect::<Result<_, _>>()?;
    let pooled = pool_estimates(&per)?;
    for (c, ch) in chains.iter().enumerate() {
        println!("chain {c}: acceptance {:.2}, step {:.3}", ch.acceptance, ch.step_size);
    }
    for e in &pooled {
        println!("N = {n}: m{} = {:.5} ± {:.5}", e.word.len(), e.mean, e.stderr);
    }

    let band = interval_for_spec(&spec, &[("t2".into(), 1.0)], "m2", (0.0, 1.0), 6, &ScanOptions::default())?;
    println!("bootstrap Λ = 6: m2 in [{:.7}, {:.7}]", band.lo, band.hi);
    Ok(())
}
