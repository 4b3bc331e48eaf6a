//! One-cut to two-cut transition of the fermionic (0,1) quartic model as the
//! fermion mass grows. Writes `phase.csv` and a density per mass.
//!
//! `cargo run --release --example equilibrium_phases -- out/`

use std::path::PathBuf;

use fuzzy_bootstrap::equilibrium::{
    export_density, minimize_density, phase_rows, support_structure, EnergySpec, SolverOptions, CUT_THRESHOLD,
    PHASE_HEADER,
};
use fuzzy_bootstrap::output::write_csv;

fn main() -> fuzzy_bootstrap::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out".into()));
    let opts = SolverOptions::default();
    let mut points = Vec::new();
    for m in [0.0, 0.5, 1.0, 1.5, 2.0] {
        let spec = EnergySpec::fermionic(-3.99, 1.0, m, 1.0, 4.0, 512);
        let eq = minimize_density(&spec, None, &opts)?;
        let cuts = support_structure(&eq.density, CUT_THRESHOLD)?;
        let shown: Vec<String> = cuts.iter().map(|(a, b)| format!("[{a:.3}, {b:.3}]")).collect();
        println!("m = {m:.1}: {} cut(s) {}", cuts.len(), shown.join(" "));
        export_density(&out.join(format!("density_m{m:.1}.csv")), &eq.density)?;
        points.push(fuzzy_bootstrap::equilibrium::PhasePoint {
            g2: -3.99,
            g4: 1.0,
            mass: m,
            cuts: cuts.len(),
            m2: fuzzy_bootstrap::equilibrium::moments_from_density(&eq.density, 2),
            energy: eq.energy,
        });
    }
    write_csv(&out.join("phase.csv"), PHASE_HEADER, &phase_rows(&points))?;
    Ok(())
}
