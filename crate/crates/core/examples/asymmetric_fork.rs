//! Type (0,1) without imposed symmetry: the level-0 relation forces m1·m2 = 0,
//! so no asymmetric solution survives.

use fuzzy_bootstrap::coeff::Q;
use fuzzy_bootstrap::dirac::{EnsembleSpec, Signature};
use fuzzy_bootstrap::loops::{generate_sde, LoopModel};
use fuzzy_bootstrap::scan::{region_scan, Axis, RegionConfig, ScanOptions};
use fuzzy_bootstrap::words::{Alphabet, Letter, Word};

fn main() -> fuzzy_bootstrap::Result<()> {
    let spec = EnsembleSpec::quartic(Signature::TYPE_01, Q::from_integer((-1).into()), Q::from_integer(1.into()))?
        .with_symmetries(Vec::new());
    let model = LoopModel::from_spec(&spec)?;
    let rel = generate_sde(&model, &Word::power(Letter(0), 0), Letter(0), false)?;
    println!("ℓ = 0: {rel}");
    println!("       {}", rel.residual_poly().render(Alphabet::new(1)));

    let cfg = RegionConfig {
        c1: Axis::fixed("t2", -1.0),
        c2: None,
        v1: Axis::new("m1", -0.6, 0.6, 61)?,
        v2: Some(Axis::new("m2", 0.0, 1.2, 61)?),
        lambda: 4,
        opts: ScanOptions { impose_symmetry: false, ..ScanOptions::default() },
    };
    let mask = region_scan(&spec, &cfg)?;
    let asym = mask.points.iter().filter(|p| p.feasible && p.v1.abs() > 1e-6 && p.v2.unwrap_or(0.0) > 1e-3).count();
    println!("feasible points {}, asymmetric feasible points {asym}", mask.count_feasible());
    Ok(())
}
