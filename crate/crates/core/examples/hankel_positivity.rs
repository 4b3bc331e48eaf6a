//! Hamburger positivity on moment sequences, exact and floating.

use fuzzy_bootstrap::coeff::Q;
use fuzzy_bootstrap::positivity::{carleman_indicator, exact_leading_minors, hankel_exact, hankel_from_sequence, psd_check};

fn main() -> fuzzy_bootstrap::Result<()> {
    let gauss: Vec<i64> = vec![1, 0, 1, 0, 3, 0, 15];
    let q: Vec<Q> = gauss.iter().map(|&k| Q::from_integer(k.into())).collect();
    let minors = exact_leading_minors(&hankel_exact(&q)?);
    let shown: Vec<String> = minors.iter().map(|m| m.to_string()).collect();
    println!("gaussian 1,0,1,0,3,0,15: leading minors {}", shown.join(", "));

    // A two-point measure at ±1 is on the boundary; perturbing m4 breaks it.
    for m4 in [1.0, 0.99, 1.01] {
        let h = hankel_from_sequence(&[1.0, 0.0, 1.0, 0.0, m4])?;
        let r = psd_check(&h, 1e-10)?;
        println!("m = (1,0,1,0,{m4}): min eigenvalue {:+.3e}, feasible {}", r.min_eigenvalue, r.feasible);
    }

    let even: Vec<f64> = (0..12).map(|k| (1..=k).map(|i| (2 * i - 1) as f64).product()).collect();
    println!("Carleman partial sum over 12 gaussian moments: {:.4}", carleman_indicator(&even)?);
    Ok(())
}
