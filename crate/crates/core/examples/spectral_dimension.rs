//! Heat-kernel spectral dimension and variance of equilibrium densities.

use fuzzy_bootstrap::equilibrium::{minimize_density, spectral_estimators, EnergySpec, GridDensity, SolverOptions};

fn main() -> fuzzy_bootstrap::Result<()> {
    let t: Vec<f64> = (0..=10).map(|i| 10f64.powf(-2.0 + 0.5 * i as f64)).collect();

    let point = GridDensity::point_mass(&EnergySpec::gaussian_validation(128), 0.0);
    let c = spectral_estimators(&point, 0.7, &t)?;
    println!("point spectrum, m = 0.7 (d_s = 2 t m²):");
    for (t, ds) in c.t.iter().zip(&c.ds).step_by(2) {
        println!("  t = {t:<9.3e} d_s = {ds:.6}  2tm² = {:.6}", 2.0 * t * 0.49);
    }

    let opts = SolverOptions::default();
    for m in [0.0, 2.0] {
        let eq = minimize_density(&EnergySpec::fermionic(-3.99, 1.0, m, 1.0, 4.0, 256), None, &opts)?;
        let c = spectral_estimators(&eq.density, m, &t)?;
        println!("fermionic m = {m}:");
        for i in (0..t.len()).step_by(2) {
            println!("  t = {:<9.3e} K = {:<10.4e} d_s = {:<8.4} v_s = {:.4}", c.t[i], c.k[i], c.ds[i], c.vs[i]);
        }
    }
    Ok(())
}
