//! Fuzzy Dirac operators and their multitrace expansions.
//!
//! A Dirac operator of signature `(p,q)` is written as
//! `D = Σ_i γ_i ⊗ X_i`, where `X_i` is the anticommutator `{H_i, ·}` for the
//! `p` Hermitian gammas and the commutator `[K_i, ·]` with `K_i = i H_i` for
//! the `q` anti-Hermitian ones. On `M_N`, left and right multiplications
//! commute and `Tr(M ↦ X M Y) = Tr X · Tr Y`, so every word in `D` reduces to
//! a product of at most two matrix traces times a gamma trace. That turns
//! `Tr Dᵏ` into an exact multitrace polynomial.

use std::cmp::Reverse;
use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::coeff::{fmt_q, q, to_f64, Coeff, Q};
use crate::error::{Error, Result};
use crate::loops::MomentTable;
use crate::words::{
    apply_symmetry, canonical_cyclic, canonical_moment, Alphabet, CyclicWord, Letter,
    SymmetryAction, Word,
};

type Cz = Complex<i64>;

/// Clifford signature `(p, q)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub p: u32,
    pub q: u32,
}

impl Signature {
    pub const TYPE_10: Signature = Signature { p: 1, q: 0 };
    pub const TYPE_01: Signature = Signature { p: 0, q: 1 };
    pub const TYPE_20: Signature = Signature { p: 2, q: 0 };
    pub const TYPE_11: Signature = Signature { p: 1, q: 1 };
    pub const TYPE_02: Signature = Signature { p: 0, q: 2 };

    pub fn new(p: u32, q: u32) -> Result<Self> {
        let sig = Signature { p, q };
        sig.check()?;
        Ok(sig)
    }

    pub fn check(&self) -> Result<()> {
        match (self.p, self.q) {
            (1, 0) | (0, 1) | (2, 0) | (1, 1) | (0, 2) => Ok(()),
            (p, q) => Err(Error::UnsupportedSignature { p, q }),
        }
    }

    /// Number of independent Hermitian matrices parametrizing `D`.
    pub fn alphabet_size(&self) -> usize {
        (self.p + self.q) as usize
    }

    /// Sign flips of each matrix, plus `A <-> B` when both gammas have the
    /// same type.
    pub fn natural_symmetries(&self) -> Vec<SymmetryAction> {
        let n = self.alphabet_size();
        let mut out: Vec<_> = (0..n).map(|i| SymmetryAction::flip(Letter(i as u8), n)).collect();
        if n == 2 && (self.p == 2 || self.q == 2) {
            out.push(SymmetryAction::swap(Letter(0), Letter(1), n));
        }
        out
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.p, self.q)
    }
}

impl std::str::FromStr for Signature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().trim_start_matches('(').trim_end_matches(')');
        let (p, q) = t
            .split_once(',')
            .ok_or_else(|| Error::invalid(format!("signature `{s}` is not of the form p,q")))?;
        let parse = |x: &str| {
            x.trim()
                .parse::<u32>()
                .map_err(|_| Error::invalid(format!("signature `{s}` is not of the form p,q")))
        };
        Signature::new(parse(p)?, parse(q)?)
    }
}

/// Small dense complex matrix with Gaussian-integer entries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GammaMatrix {
    dim: usize,
    entries: Vec<Cz>,
}

impl GammaMatrix {
    fn from_rows(rows: &[&[Cz]]) -> Self {
        GammaMatrix { dim: rows.len(), entries: rows.iter().flat_map(|r| r.iter().copied()).collect() }
    }

    fn identity(dim: usize) -> Self {
        let mut entries = vec![Cz::zero(); dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = Cz::one();
        }
        GammaMatrix { dim, entries }
    }

    fn at(&self, i: usize, j: usize) -> Cz {
        self.entries[i * self.dim + j]
    }

    fn mul(&self, other: &GammaMatrix) -> GammaMatrix {
        let n = self.dim;
        let mut entries = vec![Cz::zero(); n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.at(i, k);
                if a.is_zero() {
                    continue;
                }
                for j in 0..n {
                    entries[i * n + j] += a * other.at(k, j);
                }
            }
        }
        GammaMatrix { dim: n, entries }
    }

    fn scale(&self, c: Cz) -> GammaMatrix {
        GammaMatrix { dim: self.dim, entries: self.entries.iter().map(|&x| x * c).collect() }
    }

    fn add(&self, other: &GammaMatrix) -> GammaMatrix {
        GammaMatrix {
            dim: self.dim,
            entries: self.entries.iter().zip(&other.entries).map(|(a, b)| a + b).collect(),
        }
    }

    fn trace(&self) -> Cz {
        (0..self.dim).map(|i| self.at(i, i)).sum()
    }

    fn adjoint(&self) -> GammaMatrix {
        let n = self.dim;
        let mut entries = vec![Cz::zero(); n * n];
        for i in 0..n {
            for j in 0..n {
                entries[j * n + i] = self.at(i, j).conj();
            }
        }
        GammaMatrix { dim: n, entries }
    }
}

/// Gamma matrices of the irreducible Clifford module for a signature.
#[derive(Clone, Debug)]
pub struct GammaBasis {
    pub signature: Signature,
    pub gammas: Vec<GammaMatrix>,
    /// `+1` for Hermitian gammas (paired with `{H,·}`), `-1` for
    /// anti-Hermitian ones (paired with `[iH,·]`).
    pub hermiticity: Vec<i8>,
}

impl GammaBasis {
    pub fn new(signature: Signature) -> Result<Self> {
        signature.check()?;
        let o = Cz::zero();
        let l = Cz::one();
        let i = Cz::i();
        let sigma3 = GammaMatrix::from_rows(&[&[l, o], &[o, -l]]);
        let sigma1 = GammaMatrix::from_rows(&[&[o, l], &[l, o]]);
        let (gammas, hermiticity) = match (signature.p, signature.q) {
            (1, 0) => (vec![GammaMatrix::identity(1)], vec![1]),
            (0, 1) => (vec![GammaMatrix::from_rows(&[&[i]])], vec![-1]),
            (2, 0) => (vec![sigma3, sigma1], vec![1, 1]),
            (1, 1) => (vec![sigma3, sigma1.scale(i)], vec![1, -1]),
            (0, 2) => (vec![sigma3.scale(i), sigma1.scale(i)], vec![-1, -1]),
            _ => unreachable!("checked above"),
        };
        Ok(GammaBasis { signature, gammas, hermiticity })
    }

    pub fn module_dim(&self) -> usize {
        self.gammas[0].dim
    }

    /// Checks `γ_i² = e_i·1`, `γ_i* = e_i·γ_i` and pairwise anticommutation.
    pub fn verify(&self) -> Result<()> {
        let id = GammaMatrix::identity(self.module_dim());
        for (a, (g, &e)) in self.gammas.iter().zip(&self.hermiticity).enumerate() {
            if g.mul(g) != id.scale(Cz::new(e as i64, 0)) {
                return Err(Error::invalid(format!("gamma {a} does not square to {e}")));
            }
            if g.adjoint() != g.scale(Cz::new(e as i64, 0)) {
                return Err(Error::invalid(format!("gamma {a} has the wrong hermiticity")));
            }
            for h in &self.gammas[a + 1..] {
                if !g.mul(h).add(&h.mul(g)).entries.iter().all(|x| x.is_zero()) {
                    return Err(Error::invalid("gammas do not anticommute"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Side {
    Left,
    Right,
}

/// One summand `c · γ ⊗ L_H` or `c · γ ⊗ R_H` of the Dirac operator.
#[derive(Clone, Copy, Debug)]
struct DiracTerm {
    coef: Cz,
    side: Side,
    letter: Letter,
    gamma: usize,
}

fn dirac_terms(basis: &GammaBasis) -> Vec<DiracTerm> {
    let mut out = Vec::new();
    for (g, &e) in basis.hermiticity.iter().enumerate() {
        let letter = Letter(g as u8);
        // {H,·} = L_H + R_H ;  [iH,·] = i L_H - i R_H
        let (cl, cr) = if e == 1 { (Cz::one(), Cz::one()) } else { (Cz::i(), -Cz::i()) };
        out.push(DiracTerm { coef: cl, side: Side::Left, letter, gamma: g });
        out.push(DiracTerm { coef: cr, side: Side::Right, letter, gamma: g });
    }
    out
}

/// `coefficient · N^n_power · Π Tr(factor)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceMonomial {
    pub coefficient: Coeff,
    pub n_power: u32,
    /// Non-empty cyclic words, sorted.
    pub factors: Vec<CyclicWord>,
}

impl TraceMonomial {
    /// Total number of letters across all factors.
    pub fn degree(&self) -> usize {
        self.factors.iter().map(|f| f.len()).sum()
    }

    /// Large-N order: a monomial with `E[Tr X] ~ N` scales as
    /// `N^(n_power + #factors)`.
    pub fn large_n_power(&self) -> i64 {
        self.n_power as i64 + self.factors.len() as i64
    }
}

type MonoKey = (Reverse<u32>, Vec<CyclicWord>);

/// Sum of trace monomials with merged like terms and no zero coefficients.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct MultiTracePolynomial {
    alphabet_size: usize,
    terms: BTreeMap<MonoKey, Coeff>,
}

impl MultiTracePolynomial {
    pub fn zero(alphabet_size: usize) -> Self {
        MultiTracePolynomial { alphabet_size, terms: BTreeMap::new() }
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn alphabet(&self) -> Alphabet {
        Alphabet::new(self.alphabet_size)
    }

    /// Add `c · N^n_power · Π Tr(w)`; empty words are absorbed as factors of N.
    pub fn add_term(&mut self, c: Coeff, n_power: u32, words: &[Word]) {
        if c.is_zero() {
            return;
        }
        let mut n = n_power;
        let mut factors = Vec::new();
        for w in words {
            if w.is_empty() {
                n += 1;
            } else {
                factors.push(canonical_cyclic(w));
            }
        }
        factors.sort();
        let key = (Reverse(n), factors);
        let entry = self.terms.entry(key.clone()).or_default();
        *entry = entry.add(&c);
        if entry.is_zero() {
            self.terms.remove(&key);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = TraceMonomial> + '_ {
        self.terms.iter().map(|((Reverse(n), f), c)| TraceMonomial {
            coefficient: c.clone(),
            n_power: *n,
            factors: f.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Coefficient of `N^n_power · Π Tr(words)` (zero if absent).
    pub fn coefficient(&self, n_power: u32, words: &[Word]) -> Coeff {
        let mut probe = MultiTracePolynomial::zero(self.alphabet_size);
        probe.add_term(Coeff::constant(Q::one()), n_power, words);
        match probe.terms.keys().next() {
            Some(key) => self.terms.get(key).cloned().unwrap_or_default(),
            None => Coeff::zero(),
        }
    }

    pub fn add(&self, other: &MultiTracePolynomial) -> MultiTracePolynomial {
        let mut out = self.clone();
        out.alphabet_size = self.alphabet_size.max(other.alphabet_size);
        for ((Reverse(n), f), c) in &other.terms {
            let words: Vec<Word> = f.iter().map(|w| w.word().clone()).collect();
            out.add_term(c.clone(), *n, &words);
        }
        out
    }

    pub fn scale(&self, c: &Coeff) -> Result<MultiTracePolynomial> {
        let mut out = MultiTracePolynomial::zero(self.alphabet_size);
        for (key, v) in &self.terms {
            let prod = match (v.as_constant(), c.as_constant()) {
                (Some(a), _) => c.scale(&a),
                (_, Some(b)) => v.scale(&b),
                _ => return Err(Error::invalid("coupling products are not affine in the parameters")),
            };
            if !prod.is_zero() {
                out.terms.insert(key.clone(), prod);
            }
        }
        Ok(out)
    }

    /// Substitute parameter values, leaving purely numeric coefficients.
    pub fn substitute(&self, values: &BTreeMap<String, Q>) -> Result<MultiTracePolynomial> {
        let mut out = MultiTracePolynomial::zero(self.alphabet_size);
        for (key, v) in &self.terms {
            let c = v.eval(values)?;
            if !c.is_zero() {
                out.terms.insert(key.clone(), Coeff::constant(c));
            }
        }
        Ok(out)
    }

    /// Image under a letter symmetry (with the induced sign on each monomial).
    pub fn transformed(&self, s: &SymmetryAction) -> MultiTracePolynomial {
        let mut out = MultiTracePolynomial::zero(self.alphabet_size);
        for ((Reverse(n), f), c) in &self.terms {
            let mut sign = 1i64;
            let words: Vec<Word> = f
                .iter()
                .map(|w| {
                    let (img, s) = apply_symmetry(w.word(), s);
                    sign *= s as i64;
                    img
                })
                .collect();
            out.add_term(c.scale(&q(sign)), *n, &words);
        }
        out
    }

    pub fn is_invariant_under(&self, s: &SymmetryAction) -> bool {
        self.transformed(s) == *self
    }

    /// Largest monomial degree in letters.
    pub fn degree(&self) -> usize {
        self.terms().map(|t| t.degree()).max().unwrap_or(0)
    }
}

impl fmt::Display for MultiTracePolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        let alphabet = self.alphabet();
        for (i, t) in self.terms().enumerate() {
            let (neg, coef) = match t.coefficient.as_constant() {
                Some(c) if c.is_negative() => (true, fmt_q(&(-c))),
                Some(c) => (false, fmt_q(&c)),
                None if t.coefficient.parts().count() == 1 => {
                    let (_, c) = t.coefficient.parts().next().expect("one part");
                    let neg = c.is_negative();
                    let shown = if neg { t.coefficient.scale(&-Q::one()) } else { t.coefficient.clone() };
                    (neg, shown.to_string())
                }
                None => (false, format!("({})", t.coefficient)),
            };
            if i == 0 {
                if neg {
                    f.write_str("-")?;
                }
            } else {
                f.write_str(if neg { " - " } else { " + " })?;
            }
            let mut parts = Vec::new();
            if coef != "1" {
                parts.push(coef);
            }
            match t.n_power {
                0 => {}
                1 => parts.push("N".to_string()),
                n => parts.push(format!("N^{n}")),
            }
            let mut k = 0;
            while k < t.factors.len() {
                let mut j = k;
                while j < t.factors.len() && t.factors[j] == t.factors[k] {
                    j += 1;
                }
                let tr = format!("Tr({})", alphabet.render_powers(t.factors[k].word()));
                parts.push(if j - k > 1 { format!("({tr})^{}", j - k) } else { tr });
                k = j;
            }
            if parts.is_empty() {
                parts.push("1".to_string());
            }
            f.write_str(&parts.join("*"))?;
        }
        Ok(())
    }
}

/// Exact expansion of `Tr(Dᵏ)` for a fuzzy Dirac operator of signature `sig`.
pub fn expand_dirac_power(sig: Signature, k: usize) -> Result<MultiTracePolynomial> {
    if k == 0 {
        return Err(Error::invalid("Tr D^k needs k >= 1"));
    }
    let basis = GammaBasis::new(sig)?;
    let terms = dirac_terms(&basis);
    let dim = basis.module_dim();
    let mut poly = MultiTracePolynomial::zero(sig.alphabet_size());

    // Depth-first over sequences of Dirac terms, carrying the gamma product.
    struct Frame {
        coef: Cz,
        gamma: GammaMatrix,
        left: Vec<Letter>,
        right: Vec<Letter>,
    }
    let mut stack = vec![(
        0usize,
        Frame { coef: Cz::one(), gamma: GammaMatrix::identity(dim), left: vec![], right: vec![] },
    )];
    while let Some((depth, frame)) = stack.pop() {
        if depth == k {
            let value = frame.coef * frame.gamma.trace();
            if value.is_zero() {
                continue;
            }
            debug_assert_eq!(value.im, 0, "Tr D^k must be real");
            // right multiplications compose in reverse order
            let mut right = frame.right.clone();
            right.reverse();
            poly.add_term(
                Coeff::constant(q(value.re)),
                0,
                &[Word::from(frame.left.clone()), Word::from(right)],
            );
            continue;
        }
        for t in &terms {
            let mut left = frame.left.clone();
            let mut right = frame.right.clone();
            match t.side {
                Side::Left => left.push(t.letter),
                Side::Right => right.push(t.letter),
            }
            stack.push((
                depth + 1,
                Frame {
                    coef: frame.coef * t.coef,
                    gamma: frame.gamma.mul(&basis.gammas[t.gamma]),
                    left,
                    right,
                },
            ));
        }
    }
    Ok(poly)
}

/// Mass term, trace regulator and repulsion strength of a fermionic ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FermionicBlock {
    pub mass: f64,
    #[serde(default = "default_regulator")]
    pub trace_regulator: f64,
    #[serde(default = "default_beta")]
    pub repulsion_strength: f64,
}

fn default_regulator() -> f64 {
    1.0
}

fn default_beta() -> f64 {
    2.0
}

/// Dirac ensemble `exp(-Σ_k t_k Tr Dᵏ)`, optionally coupled to fermions.
#[derive(Clone, Debug)]
pub struct EnsembleSpec {
    pub signature: Signature,
    /// `k -> t_k`, affine in the named parameters.
    pub couplings: BTreeMap<u32, Coeff>,
    /// Values for the parameters appearing in the couplings.
    pub parameters: BTreeMap<String, Q>,
    pub symmetries: Vec<SymmetryAction>,
    pub fermionic: Option<FermionicBlock>,
}

impl EnsembleSpec {
    pub fn new(signature: Signature) -> Result<Self> {
        signature.check()?;
        Ok(EnsembleSpec {
            signature,
            couplings: BTreeMap::new(),
            parameters: BTreeMap::new(),
            symmetries: Vec::new(),
            fermionic: None,
        })
    }

    pub fn with_coupling(mut self, k: u32, t: Coeff) -> Self {
        self.couplings.insert(k, t);
        self
    }

    pub fn with_parameter(mut self, name: &str, value: Q) -> Self {
        self.parameters.insert(name.to_string(), value);
        self
    }

    pub fn with_symmetries(mut self, symmetries: Vec<SymmetryAction>) -> Self {
        self.symmetries = symmetries;
        self
    }

    /// Cubic (1,0) model `exp(-¼ Tr D² - (g/6) Tr D³)`.
    pub fn cubic(g: Q) -> Self {
        EnsembleSpec::new(Signature::TYPE_10)
            .expect("supported")
            .with_coupling(2, Coeff::constant(Q::new(1.into(), 4.into())))
            .with_coupling(3, Coeff::param("g", Q::new(1.into(), 6.into())))
            .with_parameter("g", g)
    }

    /// Quartic model `exp(-t2 Tr D² - t4 Tr D⁴)` with the natural symmetries.
    pub fn quartic(signature: Signature, t2: Q, t4: Q) -> Result<Self> {
        Ok(EnsembleSpec::new(signature)?
            .with_coupling(2, Coeff::param("t2", Q::one()))
            .with_coupling(4, Coeff::param("t4", Q::one()))
            .with_parameter("t2", t2)
            .with_parameter("t4", t4)
            .with_symmetries(signature.natural_symmetries()))
    }

    pub fn alphabet_size(&self) -> usize {
        self.signature.alphabet_size()
    }

    /// Numeric couplings after parameter substitution.
    pub fn numeric_couplings(&self) -> Result<BTreeMap<u32, Q>> {
        self.couplings.iter().map(|(&k, c)| Ok((k, c.eval(&self.parameters)?))).collect()
    }

    /// Checks the invariants that do not need an expansion.
    pub fn validate(&self) -> Result<()> {
        self.signature.check()?;
        if self.couplings.is_empty() {
            return Err(Error::invalid("ensemble has no couplings"));
        }
        if self.couplings.contains_key(&0) {
            return Err(Error::invalid("coupling power must be >= 1"));
        }
        for s in &self.symmetries {
            if s.alphabet_size() != self.alphabet_size() {
                return Err(Error::invalid("symmetry acts on a different alphabet"));
            }
        }
        if let Some(fer) = &self.fermionic {
            if !(fer.mass.is_finite() && fer.trace_regulator.is_finite() && fer.repulsion_strength.is_finite()) {
                return Err(Error::invalid("fermionic block must be finite"));
            }
            if fer.trace_regulator < 0.0 {
                return Err(Error::invalid("trace regulator must be nonnegative"));
            }
        }
        Ok(())
    }

    /// Whether the top coupling is positive (needed for a convergent integral).
    pub fn is_convergent(&self) -> Result<bool> {
        let numeric = self.numeric_couplings()?;
        Ok(numeric
            .iter()
            .rev()
            .find(|(_, t)| !t.is_zero())
            .is_some_and(|(&k, t)| k % 2 == 0 && t.is_positive()))
    }
}

/// `S = Σ_k t_k Tr Dᵏ`, symbolic in the spec's parameters. Declared
/// symmetries are checked against the result.
pub fn build_action(spec: &EnsembleSpec) -> Result<MultiTracePolynomial> {
    spec.validate()?;
    let mut action = MultiTracePolynomial::zero(spec.alphabet_size());
    for (&k, t) in &spec.couplings {
        let term = expand_dirac_power(spec.signature, k as usize)?.scale(t)?;
        action = action.add(&term);
    }
    for s in &spec.symmetries {
        if !action.is_invariant_under(s) {
            return Err(Error::invalid(format!(
                "declared symmetry {s:?} is not a symmetry of the {} action",
                spec.signature
            )));
        }
    }
    Ok(action)
}

/// Large-N Dirac moment `d_ℓ = lim E[Tr Dℓ] / N²`, by factorization of the
/// expansion of `Tr Dℓ` over the given matrix moments.
pub fn dirac_moment(sig: Signature, l: usize, table: &MomentTable) -> Result<f64> {
    let poly = expand_dirac_power(sig, l)?;
    let alphabet = poly.alphabet();
    let mut total = 0.0;
    for t in poly.terms() {
        if t.large_n_power() < 2 {
            continue;
        }
        let c = t.coefficient.as_constant().expect("expansions are numeric");
        let mut value = to_f64(&c);
        for factor in &t.factors {
            let key = canonical_moment(factor.word());
            value *= table
                .get(&key)
                .ok_or_else(|| Error::MissingMoment(alphabet.render(key.word())))?;
        }
        total += value;
    }
    Ok(total)
}

/// Conjectured large-N second Dirac moment of the quartic type (2,0) model,
/// `(√(t2² + 8 t4) − t2) / (8 t4)`.
pub fn conjectured_m2(t2: f64, t4: f64) -> Result<f64> {
    if !(t4 > 0.0) {
        return Err(Error::invalid("conjectured second moment needs t4 > 0"));
    }
    let disc = t2 * t2 + 8.0 * t4;
    Ok((disc.sqrt() - t2) / (8.0 * t4))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::qr;
    use crate::words::Alphabet;

    fn h(k: usize) -> Word {
        Word::power(Letter(0), k)
    }

    fn ab(s: &str) -> Word {
        Alphabet::new(2).parse(s).unwrap()
    }

    fn c(n: i64) -> Coeff {
        Coeff::constant(q(n))
    }

    fn binomial(n: usize, k: usize) -> i64 {
        (0..k).fold(1i64, |acc, i| acc * (n - i) as i64 / (i + 1) as i64)
    }

    #[test]
    fn gamma_bases_are_valid() {
        for sig in [
            Signature::TYPE_10,
            Signature::TYPE_01,
            Signature::TYPE_20,
            Signature::TYPE_11,
            Signature::TYPE_02,
        ] {
            GammaBasis::new(sig).unwrap().verify().unwrap();
        }
        assert!(matches!(
            GammaBasis::new(Signature { p: 3, q: 0 }),
            Err(Error::UnsupportedSignature { p: 3, q: 0 })
        ));
    }

    #[test]
    fn type_10_low_powers() {
        let d2 = expand_dirac_power(Signature::TYPE_10, 2).unwrap();
        assert_eq!(d2.to_string(), "2*N*Tr(H^2) + 2*(Tr(H))^2");
        let d1 = expand_dirac_power(Signature::TYPE_10, 1).unwrap();
        assert_eq!(d1.to_string(), "2*N*Tr(H)");
        let d01 = expand_dirac_power(Signature::TYPE_01, 1).unwrap();
        assert!(d01.is_empty());
    }

    #[test]
    fn single_matrix_matches_binomial_form() {
        // Tr (H⊗1 ± 1⊗Hᵀ)^k = Σ_j C(k,j) (±1)^(k-j) Tr H^j Tr H^(k-j)
        for (sig, eps) in [(Signature::TYPE_10, 1i64), (Signature::TYPE_01, -1i64)] {
            for k in 1..=6 {
                let got = expand_dirac_power(sig, k).unwrap();
                let mut want = MultiTracePolynomial::zero(1);
                for j in 0..=k {
                    let sign = if (k - j) % 2 == 0 { 1 } else { eps };
                    want.add_term(c(binomial(k, j) * sign), 0, &[h(j), h(k - j)]);
                }
                // (0,1) carries an overall (i·i)^k = (-1)^k from K = iH, γ = i
                let overall = if eps == -1 && k % 2 == 1 { -1 } else { 1 };
                assert_eq!(got, want.scale(&c(overall)).unwrap(), "{sig} k={k}");
            }
        }
    }

    #[test]
    fn type_20_quadratic() {
        let d2 = expand_dirac_power(Signature::TYPE_20, 2).unwrap();
        assert_eq!(
            d2.to_string(),
            "4*N*Tr(A^2) + 4*N*Tr(B^2) + 4*(Tr(A))^2 + 4*(Tr(B))^2"
        );
    }

    #[test]
    fn type_20_quartic_has_twelve_printed_terms() {
        let d4 = expand_dirac_power(Signature::TYPE_20, 4).unwrap();
        let mut want = MultiTracePolynomial::zero(2);
        want.add_term(c(4), 1, &[ab("AAAA")]);
        want.add_term(c(4), 1, &[ab("BBBB")]);
        want.add_term(c(16), 1, &[ab("AABB")]);
        want.add_term(c(-8), 1, &[ab("ABAB")]);
        want.add_term(c(16), 0, &[ab("A"), ab("AAA")]);
        want.add_term(c(16), 0, &[ab("A"), ab("BBA")]);
        want.add_term(c(16), 0, &[ab("B"), ab("BBB")]);
        want.add_term(c(16), 0, &[ab("B"), ab("AAB")]);
        want.add_term(c(16), 0, &[ab("AB"), ab("AB")]);
        want.add_term(c(12), 0, &[ab("AA"), ab("AA")]);
        want.add_term(c(12), 0, &[ab("BB"), ab("BB")]);
        want.add_term(c(8), 0, &[ab("AA"), ab("BB")]);
        assert_eq!(want.len(), 12);
        assert_eq!(d4, want);
    }

    #[test]
    fn expansions_respect_natural_symmetries() {
        for sig in [
            Signature::TYPE_10,
            Signature::TYPE_01,
            Signature::TYPE_20,
            Signature::TYPE_11,
            Signature::TYPE_02,
        ] {
            for k in 1..=6 {
                let p = expand_dirac_power(sig, k).unwrap();
                for s in sig.natural_symmetries() {
                    if k % 2 == 0 {
                        assert!(p.is_invariant_under(&s), "{sig} k={k} {s:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn type_11_is_not_swap_symmetric() {
        let d2 = expand_dirac_power(Signature::TYPE_11, 2).unwrap();
        assert_eq!(d2.coefficient(0, &[ab("A"), ab("A")]), c(4));
        assert_eq!(d2.coefficient(0, &[ab("B"), ab("B")]), c(-4));
    }

    #[test]
    fn actions() {
        let quartic = EnsembleSpec::new(Signature::TYPE_10)
            .unwrap()
            .with_coupling(2, Coeff::param("g", q(1)))
            .with_coupling(4, c(1));
        let s = build_action(&quartic).unwrap();
        assert_eq!(
            s.to_string(),
            "2*g*N*Tr(H^2) + 2*N*Tr(H^4) + 2*g*(Tr(H))^2 + 8*Tr(H)*Tr(H^3) + 6*(Tr(H^2))^2"
        );

        let cubic = build_action(&EnsembleSpec::cubic(q(0))).unwrap();
        let mut want = MultiTracePolynomial::zero(1);
        want.add_term(c(1).scale(&qr(1, 2)), 1, &[h(2)]);
        want.add_term(c(1).scale(&qr(1, 2)), 0, &[h(1), h(1)]);
        want.add_term(Coeff::param("g", qr(1, 3)), 1, &[h(3)]);
        want.add_term(Coeff::param("g", q(1)), 0, &[h(2), h(1)]);
        assert_eq!(cubic, want);

        let q01 = EnsembleSpec::new(Signature::TYPE_01)
            .unwrap()
            .with_coupling(2, Coeff::param("g", q(1)))
            .with_coupling(4, c(1));
        let s01 = build_action(&q01).unwrap();
        assert_eq!(s01.coefficient(0, &[h(1), h(1)]), Coeff::param("g", q(-2)));
        assert_eq!(s01.coefficient(0, &[h(1), h(3)]), c(-8));
        assert_eq!(s01.coefficient(0, &[h(2), h(2)]), c(6));
    }

    #[test]
    fn action_is_linear_in_couplings() {
        let a = EnsembleSpec::new(Signature::TYPE_20).unwrap().with_coupling(2, c(3));
        let b = EnsembleSpec::new(Signature::TYPE_20).unwrap().with_coupling(4, c(-2));
        let both = EnsembleSpec::new(Signature::TYPE_20).unwrap().with_coupling(2, c(3)).with_coupling(4, c(-2));
        assert_eq!(
            build_action(&both).unwrap(),
            build_action(&a).unwrap().add(&build_action(&b).unwrap())
        );
    }

    #[test]
    fn undeclared_symmetry_is_rejected() {
        let spec = build_action(&EnsembleSpec::cubic(q(1)).with_symmetries(vec![SymmetryAction::flip(Letter(0), 1)]));
        assert!(spec.is_err());
    }

    #[test]
    fn dirac_moments() {
        let one = |pairs: &[(usize, f64)]| {
            MomentTable::from_pairs(1, pairs.iter().map(|&(k, v)| (h(k), v)))
        };
        let d2 = dirac_moment(Signature::TYPE_10, 2, &one(&[(1, 0.0), (2, 1.0)])).unwrap();
        assert!((d2 - 2.0).abs() < 1e-15);
        let c0 = 0.7;
        let d2 = dirac_moment(Signature::TYPE_01, 2, &one(&[(1, c0), (2, c0 * c0)])).unwrap();
        assert!(d2.abs() < 1e-15);
        let m2 = 0.3;
        let table = MomentTable::from_pairs(
            2,
            [(ab("A"), 0.0), (ab("B"), 0.0), (ab("AA"), m2), (ab("BB"), m2)],
        );
        let d2 = dirac_moment(Signature::TYPE_20, 2, &table).unwrap();
        assert!((d2 - 8.0 * m2).abs() < 1e-15);
        assert!(matches!(
            dirac_moment(Signature::TYPE_10, 2, &one(&[(2, 1.0)])),
            Err(Error::MissingMoment(_))
        ));
    }

    #[test]
    fn conjecture_values() {
        assert!((conjectured_m2(1.0, 1.0).unwrap() - 0.25).abs() < 1e-15);
        assert!((conjectured_m2(0.0, 1.0).unwrap() - 8f64.sqrt() / 8.0).abs() < 1e-15);
        let t2 = 1e4;
        assert!(((conjectured_m2(t2, 1.0).unwrap() * 2.0 * t2) - 1.0).abs() < 1e-6);
        assert!(conjectured_m2(1.0, 0.0).is_err());
    }

    #[test]
    fn signature_parsing() {
        assert_eq!("2,0".parse::<Signature>().unwrap(), Signature::TYPE_20);
        assert_eq!("(0,1)".parse::<Signature>().unwrap(), Signature::TYPE_01);
        assert!("3,1".parse::<Signature>().is_err());
    }
}
