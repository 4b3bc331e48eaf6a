//! Search space and recipes: which moments the loop equations leave free.

use fuzzy_bootstrap::coeff::Q;
use fuzzy_bootstrap::dirac::{EnsembleSpec, Signature};
use fuzzy_bootstrap::loops::{build_closure, evaluate_moments, moment_name, LoopModel};
use fuzzy_bootstrap::words::{Letter, Word};

fn report(name: &str, spec: &EnsembleSpec, degree: usize, symmetric: bool) -> fuzzy_bootstrap::Result<()> {
    let model = LoopModel::from_spec(spec)?;
    let c = build_closure(&model, &spec.parameters, degree, symmetric)?;
    let a = c.alphabet();
    let vars: Vec<String> = c.search_variables().iter().map(|w| moment_name(w, a)).collect();
    println!("{name}: degree {degree}, search space [{}]", vars.join(", "));
    for r in c.recipes().iter().take(6) {
        println!("    {}", r.render(a));
    }
    for k in c.constraints() {
        println!("    constraint {}", k.render(a));
    }
    Ok(())
}

fn main() -> fuzzy_bootstrap::Result<()> {
    let one = Q::from_integer(1.into());
    report("cubic g=1/10", &EnsembleSpec::cubic(Q::new(1.into(), 10.into())), 8, false)?;
    report("quartic (1,0)", &EnsembleSpec::quartic(Signature::TYPE_10, one.clone(), one.clone())?, 8, true)?;
    report("quartic (0,1) no symmetry", &EnsembleSpec::quartic(Signature::TYPE_01, -one.clone(), one.clone())?, 4, false)?;
    report("quartic (2,0)", &EnsembleSpec::quartic(Signature::TYPE_20, one.clone(), one)?, 6, true)?;

    // Gaussian point: Catalan numbers drop out of the cubic recipes.
    let spec = EnsembleSpec::cubic(Q::from_integer(0.into()));
    let c = build_closure(&LoopModel::from_spec(&spec)?, &spec.parameters, 10, false)?;
    let t = evaluate_moments(&c, &[(Word::power(Letter(0), 1), 0.0)])?;
    let cat: Vec<f64> = (1..=5).map(|k| t.m(2 * k)).collect::<Result<_, _>>()?;
    println!("\ng = 0, m1 = 0: even moments {cat:?}");
    Ok(())
}
