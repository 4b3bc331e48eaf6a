use fuzzy_bootstrap::coeff::{q, qr};
use fuzzy_bootstrap::dirac::{dirac_moment, EnsembleSpec, Signature};
use fuzzy_bootstrap::loops::{relation_residual, Closure};
use fuzzy_bootstrap::scan::{feasible_point, interval_for_spec, Bootstrap, ScanOptions};
use fuzzy_bootstrap::words::{Letter, Word};
use proptest::prelude::*;

fn h(k: usize) -> Word {
    Word::power(Letter(0), k)
}

/// One-cut large-N solution of the symmetric quartic (1,0) model. With odd
/// moments zero the action is N²(2 t2 m2 + 2 m4 + 6 m2²), a single-trace
/// model with V(x) = (μ/2) x² + (g/4) x⁴, μ = 4 t2 + 24 m2, g = 8, solved
/// self-consistently: μR + 3gR² = 1, m2 = R(4 − μR)/3.
fn one_cut_m2(t2: f64) -> f64 {
    let m2_of = |m: f64| {
        let mu = 4.0 * t2 + 24.0 * m;
        let g = 8.0;
        let r = (-mu + (mu * mu + 12.0 * g).sqrt()) / (6.0 * g);
        r * (4.0 - mu * r) / 3.0
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if m2_of(mid) > mid {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn quartic_bands_shrink_around_one_cut_solution() {
    let spec = EnsembleSpec::quartic(Signature::TYPE_10, q(1), q(1)).unwrap();
    let opts = ScanOptions { depth: 40, ..ScanOptions::default() };
    for t2 in [1.0, 0.5] {
        let exact = one_cut_m2(t2);
        let mut prev = (f64::NEG_INFINITY, f64::INFINITY);
        for lambda in [2, 3, 4, 6] {
            let i = interval_for_spec(&spec, &[("t2".into(), t2)], "m2", (0.0, 2.0), lambda, &opts).unwrap();
            assert!(!i.empty);
            assert!(i.lo <= exact + 1e-9 && exact <= i.hi + 1e-9, "t2={t2} Λ={lambda}: {exact} ∉ [{}, {}]", i.lo, i.hi);
            assert!(i.lo >= prev.0 - 1e-9 && i.hi <= prev.1 + 1e-9, "Λ={lambda} not nested");
            prev = (i.lo, i.hi);
        }
        assert!(prev.1 - prev.0 < 1e-4, "Λ=6 width {}", prev.1 - prev.0);
    }
}

#[test]
fn cubic_gaussian_point_is_feasible_and_isolated() {
    let spec = EnsembleSpec::cubic(q(0));
    let opts = ScanOptions { impose_symmetry: false, ..ScanOptions::default() };
    let ok = feasible_point(&spec, &[("g".into(), 0.0)], &[(h(1), 0.0)], 6, &opts).unwrap();
    assert!(ok.feasible());
    let table = ok.table.unwrap();
    assert_eq!(table.m(6).unwrap(), 5.0);
    let off = feasible_point(&spec, &[("g".into(), 0.0)], &[(h(1), 0.2)], 6, &opts).unwrap();
    assert!(!off.feasible());
}

#[test]
fn cubic_small_coupling_has_a_band() {
    let spec = EnsembleSpec::cubic(qr(1, 20));
    let opts = ScanOptions { impose_symmetry: false, ..ScanOptions::default() };
    let i = interval_for_spec(&spec, &[("g".into(), 0.05)], "m1", (-1.0, 1.0), 4, &opts).unwrap();
    assert!(!i.empty);
    // first-order perturbation theory: m1 ≈ −2g (from 0 = 2 m1 + g(2 m2 + 2 m1²), m2 ≈ 1)
    assert!(i.contains(-0.1) || (i.lo - -0.1f64).abs() < 0.02 || (i.hi - -0.1f64).abs() < 0.02, "[{}, {}]", i.lo, i.hi);
}

#[test]
fn dirac_moment_of_gaussian_type_10() {
    // d2 = lim E[Tr D²]/N² = 2 m2 + 2 m1² for type (1,0)
    let spec = EnsembleSpec::cubic(q(0));
    let boot = Bootstrap::for_spec(&spec, 2, &ScanOptions { impose_symmetry: false, ..ScanOptions::default() }).unwrap();
    let t = boot.check(&[(h(1), 0.0)]).unwrap().table.unwrap();
    assert_eq!(dirac_moment(Signature::TYPE_10, 2, &t).unwrap(), 2.0);
    assert_eq!(dirac_moment(Signature::TYPE_10, 4, &t).unwrap(), 2.0 * 2.0 + 6.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn closures_solve_their_relations(t2 in -1.0f64..1.0, m1 in -0.3f64..0.3, m2 in 0.05f64..1.0) {
        let t2q = fuzzy_bootstrap::coeff::q_from_f64((t2 * 64.0).round() / 64.0).unwrap();
        let spec = EnsembleSpec::quartic(Signature::TYPE_10, t2q, q(1)).unwrap();
        let cl = Closure::from_spec(&spec, 8, false).unwrap();
        let t = fuzzy_bootstrap::loops::evaluate_moments(&cl, &[(h(1), m1), (h(2), m2)]).unwrap();
        for rel in cl.relations() {
            let r = relation_residual(rel, &t).unwrap();
            let scale = 1.0 + t.iter().map(|(_, v)| v.abs()).fold(0.0, f64::max);
            prop_assert!(r <= 1e-9 * scale * scale, "{} residual {}", rel, r);
        }
    }

    #[test]
    fn raising_the_level_never_adds_points(t2 in -1.0f64..1.0, m2 in 0.0f64..0.6) {
        let spec = EnsembleSpec::quartic(Signature::TYPE_10, q(1), q(1)).unwrap();
        let opts = ScanOptions::default();
        let c = [("t2".to_string(), t2)];
        let lo = feasible_point(&spec, &c, &[(h(2), m2)], 3, &opts).unwrap().feasible();
        let hi = feasible_point(&spec, &c, &[(h(2), m2)], 5, &opts).unwrap().feasible();
        prop_assert!(lo || !hi);
    }
}
