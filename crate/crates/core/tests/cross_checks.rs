use std::collections::BTreeMap;

use fuzzy_bootstrap::coeff::q;
use fuzzy_bootstrap::dirac::{EnsembleSpec, Signature};
use fuzzy_bootstrap::equilibrium::{minimize_density, residual_pv, support_structure, EnergySpec, SolverOptions, CUT_THRESHOLD};
use fuzzy_bootstrap::loops::LoopModel;
use fuzzy_bootstrap::mc::{estimate_moments, pool_estimates, run_chains, scalar_oracle, ChainConfig, McModel};
use fuzzy_bootstrap::words::{Letter, Word};

#[test]
fn semicircle_pointwise() {
    let eq = minimize_density(&EnergySpec::gaussian_validation(512), None, &SolverOptions::default()).unwrap();
    let d = &eq.density;
    let worst = d
        .x
        .iter()
        .zip(&d.rho)
        .map(|(x, r)| (r - (4.0 - x * x).max(0.0).sqrt() / (2.0 * std::f64::consts::PI)).abs())
        .fold(0.0, f64::max);
    assert!(worst < 0.03, "sup error {worst}");
    let cuts = support_structure(d, CUT_THRESHOLD).unwrap();
    assert_eq!(cuts.len(), 1);
    assert!((cuts[0].1 - 2.0).abs() < 0.05 && (cuts[0].0 + 2.0).abs() < 0.05, "{cuts:?}");
    assert!(residual_pv(&eq.spec, d).unwrap().relative() < 1e-3);
}

#[test]
fn mc_matches_scalar_quadrature_at_n_one() {
    let spec = EnsembleSpec::quartic(Signature::TYPE_10, q(1), q(1)).unwrap();
    let oracle = scalar_oracle(&spec, 2).unwrap();
    let model = McModel::from_spec(&spec).unwrap();
    let cfg = ChainConfig::new(1, 40_000, 2_000, 3);
    let per: Vec<_> =
        run_chains(&model, &cfg, 4).unwrap().iter().map(|c| estimate_moments(c, &[Word::power(Letter(0), 2)]).unwrap()).collect();
    let e = pool_estimates(&per).unwrap().remove(0);
    assert!((e.mean - oracle).abs() < 4.0 * e.stderr + 1e-3, "{} ± {} vs {oracle}", e.mean, e.stderr);
}

#[test]
fn gaussian_wick_moments_at_finite_n() {
    // E[Tr H⁴]/N = 2 + 1/N² for S = (N/2) Tr H²
    let model = McModel::from_polynomial(LoopModel::gaussian().action(), &BTreeMap::new()).unwrap();
    let n = 6;
    let cfg = ChainConfig::new(n, 4000, 500, 8);
    let per: Vec<_> = run_chains(&model, &cfg, 3)
        .unwrap()
        .iter()
        .map(|c| estimate_moments(c, &[Word::power(Letter(0), 2), Word::power(Letter(0), 4)]).unwrap())
        .collect();
    let est = pool_estimates(&per).unwrap();
    let want = [1.0, 2.0 + 1.0 / (n * n) as f64];
    for (e, w) in est.iter().zip(want) {
        assert!((e.mean - w).abs() < 4.0 * e.stderr, "{} ± {} vs {w}", e.mean, e.stderr);
    }
}
