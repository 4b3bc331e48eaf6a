//! (g, m1) feasibility map of the cubic model at two levels, as CSV.
//!
//! `cargo run --release --example cubic_region -- out/`

use std::path::PathBuf;

use fuzzy_bootstrap::coeff::Q;
use fuzzy_bootstrap::dirac::EnsembleSpec;
use fuzzy_bootstrap::scan::{export_region, region_scan, Axis, RegionConfig, ScanOptions};

fn main() -> fuzzy_bootstrap::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out".into()));
    let spec = EnsembleSpec::cubic(Q::from_integer(0.into()));
    let opts = ScanOptions { impose_symmetry: false, ..ScanOptions::default() };
    for lambda in [3, 6] {
        let cfg = RegionConfig {
            c1: Axis::new("g", -0.3, 0.3, 61)?,
            c2: None,
            v1: Axis::new("m1", -0.8, 0.8, 81)?,
            v2: None,
            lambda,
            opts: opts.clone(),
        };
        let mask = region_scan(&spec, &cfg)?;
        let path = out.join(format!("cubic_region_L{lambda}.csv"));
        export_region(&mask, &path)?;
        println!("Λ = {lambda}: {} feasible of {} -> {}", mask.count_feasible(), mask.points.len(), path.display());
    }
    Ok(())
}
