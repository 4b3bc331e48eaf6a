//! Large-N loop equations and their closure over a finite search space.
//!
//! For an action `S` and a word `W`, invariance of the matrix integral under
//! `H_i -> H_i + ε W` gives, after factorization at leading order,
//!
//! `Σ_{W = U i V} m_U m_V = Σ (terms of Tr(W · ∂_i S)) / N²`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_traits::{One, Signed, Zero};

use crate::coeff::{fmt_q, q, qr, to_f64, Coeff, Q};
use crate::dirac::{build_action, EnsembleSpec, MultiTracePolynomial};
use crate::error::{Error, Result};
use crate::words::{
    canonical_moment, enumerate_moments, enumerate_words, Alphabet, CyclicWord, Letter, Reduced,
    SymmetryAction, SymmetryGroup, Word,
};

/// Normalized moments `m_W`, keyed by the class of `W` up to rotation and
/// reversal. `m_ε = 1` implicitly.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MomentTable {
    alphabet_size: usize,
    values: BTreeMap<CyclicWord, f64>,
}

impl MomentTable {
    pub fn new(alphabet_size: usize) -> Self {
        MomentTable { alphabet_size, values: BTreeMap::new() }
    }

    pub fn from_pairs(alphabet_size: usize, pairs: impl IntoIterator<Item = (Word, f64)>) -> Self {
        let mut t = MomentTable::new(alphabet_size);
        for (w, v) in pairs {
            t.insert(&w, v);
        }
        t
    }

    /// One-matrix table from `m_0, m_1, ..., m_n` (`m_0` is ignored).
    pub fn from_sequence(m: &[f64]) -> Self {
        MomentTable::from_pairs(1, m.iter().enumerate().skip(1).map(|(k, &v)| (Word::power(Letter(0), k), v)))
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn insert(&mut self, w: &Word, value: f64) {
        if !w.is_empty() {
            self.values.insert(canonical_moment(w), value);
        }
    }

    pub fn get(&self, w: &CyclicWord) -> Option<f64> {
        self.get_word(w.word())
    }

    pub fn get_word(&self, w: &Word) -> Option<f64> {
        if w.is_empty() {
            return Some(1.0);
        }
        self.values.get(&canonical_moment(w)).copied()
    }

    pub fn value(&self, w: &Word) -> Result<f64> {
        self.get_word(w)
            .ok_or_else(|| Error::MissingMoment(Alphabet::new(self.alphabet_size.max(1)).render(w)))
    }

    /// One-matrix moment `m_k`.
    pub fn m(&self, k: usize) -> Result<f64> {
        self.value(&Word::power(Letter(0), k))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CyclicWord, f64)> {
        self.values.iter().map(|(k, &v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_degree(&self) -> usize {
        self.values.keys().map(|k| k.len()).max().unwrap_or(0)
    }
}

/// Polynomial in the moments. Keys are sorted multisets of non-empty moment
/// indices; the empty key is the constant term.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MomentPoly {
    terms: BTreeMap<Vec<CyclicWord>, Coeff>,
}

impl MomentPoly {
    pub fn zero() -> Self {
        MomentPoly::default()
    }

    pub fn add_term(&mut self, c: Coeff, factors: &[Word]) {
        if c.is_zero() {
            return;
        }
        let mut key: Vec<CyclicWord> =
            factors.iter().filter(|w| !w.is_empty()).map(canonical_moment).collect();
        key.sort();
        let entry = self.terms.entry(key.clone()).or_default();
        *entry = entry.add(&c);
        if entry.is_zero() {
            self.terms.remove(&key);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[CyclicWord], &Coeff)> {
        self.terms.iter().map(|(k, v)| (k.as_slice(), v))
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, factors: &[Word]) -> Coeff {
        let mut probe = MomentPoly::zero();
        probe.add_term(Coeff::constant(Q::one()), factors);
        let key = probe.terms.into_keys().next().unwrap_or_default();
        self.terms.get(&key).cloned().unwrap_or_default()
    }

    pub fn sub(&self, other: &MomentPoly) -> MomentPoly {
        let mut out = self.clone();
        for (k, v) in &other.terms {
            let words: Vec<Word> = k.iter().map(|w| w.word().clone()).collect();
            out.add_term(v.scale(&-Q::one()), &words);
        }
        out
    }

    /// Largest single-moment degree.
    pub fn moment_degree(&self) -> usize {
        self.terms.keys().flat_map(|k| k.iter().map(|w| w.len())).max().unwrap_or(0)
    }

    /// Largest total degree of a term.
    pub fn degree(&self) -> usize {
        self.terms.keys().map(|k| k.iter().map(|w| w.len()).sum()).max().unwrap_or(0)
    }

    pub fn substitute(&self, params: &BTreeMap<String, Q>) -> Result<MomentPoly> {
        let mut out = MomentPoly::zero();
        for (k, v) in &self.terms {
            let c = v.eval(params)?;
            if !c.is_zero() {
                out.terms.insert(k.clone(), Coeff::constant(c));
            }
        }
        Ok(out)
    }

    fn to_qpoly(&self) -> Result<QPoly> {
        self.terms
            .iter()
            .map(|(k, v)| {
                v.as_constant().map(|c| (k.clone(), c)).ok_or_else(|| {
                    Error::invalid(format!("coefficient `{v}` still depends on parameters"))
                })
            })
            .collect()
    }

    fn from_qpoly(p: &QPoly) -> MomentPoly {
        MomentPoly { terms: p.iter().map(|(k, v)| (k.clone(), Coeff::constant(v.clone()))).collect() }
    }

    /// Evaluate with numeric coefficients.
    pub fn evaluate(&self, table: &MomentTable) -> Result<f64> {
        let mut total = 0.0;
        for (k, v) in &self.terms {
            let c = v
                .as_constant()
                .ok_or_else(|| Error::invalid(format!("coefficient `{v}` still depends on parameters")))?;
            let mut x = to_f64(&c);
            for w in k {
                x *= table.value(w.word())?;
            }
            total += x;
        }
        Ok(total)
    }

    /// Canonical text form, e.g. `2*m_1 + g*(2*m_2 + 2*m_1^2)`.
    pub fn render(&self, alphabet: Alphabet) -> String {
        // group by parameter: constant part first
        let mut groups: BTreeMap<Option<&str>, Vec<(&Q, &Vec<CyclicWord>)>> = BTreeMap::new();
        for (k, v) in &self.terms {
            for (name, c) in v.parts() {
                groups.entry(name).or_default().push((c, k));
            }
        }
        let mut pieces: Vec<String> = Vec::new();
        for (name, mut terms) in groups {
            terms.sort_by(|a, b| {
                let key = |k: &Vec<CyclicWord>| {
                    (k.len(), std::cmp::Reverse(k.iter().map(|w| w.len()).sum::<usize>()))
                };
                key(a.1).cmp(&key(b.1)).then_with(|| a.1.cmp(b.1))
            });
            let body = |terms: &[(&Q, &Vec<CyclicWord>)], prefix: Option<&str>| {
                let mut s = String::new();
                for (i, (c, k)) in terms.iter().enumerate() {
                    let neg = c.is_negative();
                    if i == 0 {
                        if neg {
                            s.push('-');
                        }
                    } else {
                        s.push_str(if neg { " - " } else { " + " });
                    }
                    let mut parts = Vec::new();
                    let a = c.abs();
                    if !a.is_one() || (k.is_empty() && prefix.is_none()) {
                        parts.push(fmt_q(&a));
                    }
                    if let Some(p) = prefix {
                        parts.push(p.to_string());
                    }
                    parts.extend(render_moments(k, alphabet));
                    s.push_str(&parts.join("*"));
                }
                s
            };
            match name {
                None => pieces.push(body(&terms, None)),
                Some(p) if terms.len() == 1 => pieces.push(body(&terms, Some(p))),
                Some(p) => pieces.push(format!("{p}*({})", body(&terms, None))),
            }
        }
        if pieces.is_empty() {
            return "0".to_string();
        }
        let mut out = String::new();
        for (i, p) in pieces.iter().enumerate() {
            if i == 0 {
                out.push_str(p);
            } else if let Some(rest) = p.strip_prefix('-') {
                out.push_str(" - ");
                out.push_str(rest);
            } else {
                out.push_str(" + ");
                out.push_str(p);
            }
        }
        out
    }
}

/// Name of a moment: `m_k` for one matrix, `m[ABAB]` otherwise.
pub fn moment_name(w: &CyclicWord, alphabet: Alphabet) -> String {
    if alphabet.size() == 1 {
        format!("m_{}", w.len())
    } else {
        format!("m[{}]", alphabet.render(w.word()))
    }
}

fn render_moments(k: &[CyclicWord], alphabet: Alphabet) -> Vec<String> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < k.len() {
        let mut j = i;
        while j < k.len() && k[j] == k[i] {
            j += 1;
        }
        let name = moment_name(&k[i], alphabet);
        out.push(if j - i > 1 { format!("{name}^{}", j - i) } else { name });
        i = j;
    }
    out
}

/// One loop equation `lhs = rhs`, generated from word `word` and letter `letter`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MomentRelation {
    pub word: Word,
    pub letter: Letter,
    pub lhs: MomentPoly,
    pub rhs: MomentPoly,
    alphabet_size: usize,
}

impl MomentRelation {
    /// Highest total degree across both sides.
    pub fn degree(&self) -> usize {
        self.lhs.degree().max(self.rhs.degree())
    }

    /// `lhs - rhs`.
    pub fn residual_poly(&self) -> MomentPoly {
        self.lhs.sub(&self.rhs)
    }

    pub fn substitute(&self, params: &BTreeMap<String, Q>) -> Result<MomentRelation> {
        Ok(MomentRelation {
            lhs: self.lhs.substitute(params)?,
            rhs: self.rhs.substitute(params)?,
            ..self.clone()
        })
    }

    pub fn is_trivial(&self) -> bool {
        self.residual_poly().is_zero()
    }
}

impl fmt::Display for MomentRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = Alphabet::new(self.alphabet_size);
        write!(f, "{} = {}", self.lhs.render(a), self.rhs.render(a))
    }
}

/// `|lhs - rhs|` under a table. The relation must have numeric coefficients.
pub fn relation_residual(rel: &MomentRelation, table: &MomentTable) -> Result<f64> {
    Ok(rel.residual_poly().evaluate(table)?.abs())
}

/// One term of a cyclic gradient: `coefficient · N^n_power · Π Tr(others) · word`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GradientTerm {
    pub coefficient: Coeff,
    pub n_power: u32,
    pub others: Vec<CyclicWord>,
    pub word: Word,
}

/// Matrix derivative `∂S/∂(H_i)_{ba}` as a sum of words with multitrace
/// prefactors.
pub fn cyclic_gradient(poly: &MultiTracePolynomial, letter: Letter) -> Vec<GradientTerm> {
    let mut merged: BTreeMap<(u32, Vec<CyclicWord>, Word), Coeff> = BTreeMap::new();
    for t in poly.terms() {
        for (j, f) in t.factors.iter().enumerate() {
            let letters = f.word().letters();
            for (pos, &l) in letters.iter().enumerate() {
                if l != letter {
                    continue;
                }
                let mut rest: Vec<Letter> = letters[pos + 1..].to_vec();
                rest.extend_from_slice(&letters[..pos]);
                let mut others = t.factors.clone();
                others.remove(j);
                let key = (t.n_power, others, Word::from(rest));
                let e = merged.entry(key.clone()).or_default();
                *e = e.add(&t.coefficient);
                if e.is_zero() {
                    merged.remove(&key);
                }
            }
        }
    }
    merged
        .into_iter()
        .map(|((n_power, others, word), coefficient)| GradientTerm { coefficient, n_power, others, word })
        .collect()
}

/// An action together with the symmetry group used for pruning.
#[derive(Clone, Debug)]
pub struct LoopModel {
    action: MultiTracePolynomial,
    group: SymmetryGroup,
}

impl LoopModel {
    pub fn new(action: MultiTracePolynomial, symmetries: Vec<SymmetryAction>) -> Result<Self> {
        for s in &symmetries {
            if !action.is_invariant_under(s) {
                return Err(Error::invalid(format!("{s:?} is not a symmetry of the action")));
            }
        }
        Ok(LoopModel { action, group: SymmetryGroup::new(symmetries) })
    }

    pub fn from_spec(spec: &EnsembleSpec) -> Result<Self> {
        Ok(LoopModel { action: build_action(spec)?, group: SymmetryGroup::new(spec.symmetries.clone()) })
    }

    /// Single-trace Gaussian `S = (N/2) Tr H²`, symmetric under `H -> -H`.
    pub fn gaussian() -> Self {
        let mut action = MultiTracePolynomial::zero(1);
        action.add_term(Coeff::constant(qr(1, 2)), 1, &[Word::power(Letter(0), 2)]);
        LoopModel::new(action, vec![SymmetryAction::flip(Letter(0), 1)]).expect("H -> -H is a symmetry")
    }

    pub fn action(&self) -> &MultiTracePolynomial {
        &self.action
    }

    pub fn group(&self) -> &SymmetryGroup {
        &self.group
    }

    pub fn alphabet_size(&self) -> usize {
        self.action.alphabet_size()
    }

    pub fn substitute(&self, params: &BTreeMap<String, Q>) -> Result<LoopModel> {
        Ok(LoopModel { action: self.action.substitute(params)?, group: self.group.clone() })
    }
}

/// Multiply `c · Π m(factors)` into `poly`, reducing by the group if asked.
fn push_reduced(poly: &mut MomentPoly, c: Coeff, factors: &[Word], group: Option<&SymmetryGroup>) {
    let Some(group) = group else {
        poly.add_term(c, factors);
        return;
    };
    let mut sign = 1i64;
    let mut reps = Vec::with_capacity(factors.len());
    for w in factors {
        if w.is_empty() {
            continue;
        }
        match group.reduce(&canonical_moment(w)) {
            Reduced::Zero => return,
            Reduced::Image { rep, sign: s } => {
                sign *= s as i64;
                reps.push(rep.into_word());
            }
        }
    }
    poly.add_term(c.scale(&q(sign)), &reps);
}

/// Loop equation for word `w` and letter `letter`. With `prune`, moments are
/// replaced by their orbit representatives and symmetry-forced zeros dropped.
pub fn generate_sde(model: &LoopModel, w: &Word, letter: Letter, prune: bool) -> Result<MomentRelation> {
    let alphabet_size = model.alphabet_size();
    if letter.index() >= alphabet_size || w.max_letter().is_some_and(|l| l.index() >= alphabet_size) {
        return Err(Error::invalid("word or letter outside the model alphabet"));
    }
    let group = (prune && !model.group.is_trivial()).then_some(&model.group);

    for t in model.action.terms() {
        if t.large_n_power() != 2 {
            let mut single = MultiTracePolynomial::zero(alphabet_size);
            let words: Vec<Word> = t.factors.iter().map(|f| f.word().clone()).collect();
            single.add_term(t.coefficient.clone(), t.n_power, &words);
            return Err(Error::Scaling { term: single.to_string(), power: t.large_n_power() });
        }
    }

    let mut lhs = MomentPoly::zero();
    let letters = w.letters();
    for (k, &l) in letters.iter().enumerate() {
        if l == letter {
            let u = Word::from(letters[..k].to_vec());
            let v = Word::from(letters[k + 1..].to_vec());
            push_reduced(&mut lhs, Coeff::constant(Q::one()), &[u, v], group);
        }
    }

    let mut rhs = MomentPoly::zero();
    for g in cyclic_gradient(&model.action, letter) {
        let mut factors: Vec<Word> = g.others.iter().map(|f| f.word().clone()).collect();
        factors.push(w.concat(&g.word));
        push_reduced(&mut rhs, g.coefficient, &factors, group);
    }
    Ok(MomentRelation { word: w.clone(), letter, lhs, rhs, alphabet_size })
}

type QPoly = BTreeMap<Vec<CyclicWord>, Q>;

fn qpoly_add_scaled(target: &mut QPoly, other: &QPoly, factor: &Q) {
    for (k, v) in other {
        let e = target.entry(k.clone()).or_insert_with(Q::zero);
        *e += v * factor;
        if e.is_zero() {
            target.remove(k);
        }
    }
}

fn qpoly_mul(a: &QPoly, b: &QPoly) -> QPoly {
    let mut out = QPoly::new();
    for (ka, va) in a {
        for (kb, vb) in b {
            let mut k = ka.clone();
            k.extend(kb.iter().cloned());
            k.sort();
            let e = out.entry(k.clone()).or_insert_with(Q::zero);
            *e += va * vb;
            if e.is_zero() {
                out.remove(&k);
            }
        }
    }
    out
}

fn qpoly_moment_degree(p: &QPoly) -> usize {
    p.keys().flat_map(|k| k.iter().map(|w| w.len())).max().unwrap_or(0)
}

/// Rewrite in terms of search variables only.
fn normal_form(p: &QPoly, nf: &BTreeMap<CyclicWord, QPoly>) -> QPoly {
    let mut out = QPoly::new();
    for (k, c) in p {
        let mut prod = BTreeMap::from([(Vec::new(), c.clone())]);
        for w in k {
            prod = qpoly_mul(&prod, &nf[w]);
        }
        qpoly_add_scaled(&mut out, &prod, &Q::one());
    }
    out
}

/// Whether every term containing a top-degree moment is that moment alone.
fn linear_at_top(p: &QPoly) -> bool {
    let d = qpoly_moment_degree(p);
    p.keys().all(|k| !k.iter().any(|w| w.len() == d) || k.len() == 1)
}

/// Polynomial compiled to indices into a value vector.
#[derive(Clone, Debug)]
struct Compiled {
    terms: Vec<(f64, Vec<usize>)>,
}

impl Compiled {
    fn new(p: &QPoly, index: &BTreeMap<CyclicWord, usize>) -> Self {
        Compiled {
            terms: p
                .iter()
                .map(|(k, v)| (to_f64(v), k.iter().map(|w| index[w]).collect()))
                .collect(),
        }
    }

    fn eval(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|(c, idx)| idx.iter().fold(*c, |acc, &i| acc * values[i])).sum()
    }

    /// Sum of absolute term values, used as the scale of a residual.
    fn scale(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|(c, idx)| idx.iter().fold(*c, |acc, &i| acc * values[i]).abs()).sum()
    }
}

/// A moment with its solved form in terms of earlier moments.
#[derive(Clone, Debug)]
pub struct Recipe {
    pub moment: CyclicWord,
    pub degree: usize,
    expr: QPoly,
}

impl Recipe {
    pub fn render(&self, alphabet: Alphabet) -> String {
        format!("{} = {}", moment_name(&self.moment, alphabet), MomentPoly::from_qpoly(&self.expr).render(alphabet))
    }
}

#[derive(Clone, Debug)]
enum Step {
    Free(usize),
    Solve(usize, Compiled),
}

/// Polynomial identity among already-determined moments that the closure
/// could not use for elimination.
#[derive(Clone, Debug)]
pub struct Constraint {
    pub degree: usize,
    expr: QPoly,
}

impl Constraint {
    pub fn render(&self, alphabet: Alphabet) -> String {
        format!("0 = {}", MomentPoly::from_qpoly(&self.expr).render(alphabet))
    }
}

/// Recursive solution of the loop equations up to `max_degree`, with numeric
/// couplings.
#[derive(Clone, Debug)]
pub struct Closure {
    alphabet_size: usize,
    max_degree: usize,
    search_variables: Vec<CyclicWord>,
    extra_variables: Vec<CyclicWord>,
    recipes: Vec<Recipe>,
    forced_zero: BTreeSet<CyclicWord>,
    constraints: Vec<Constraint>,
    relations: Vec<MomentRelation>,
    group: Option<SymmetryGroup>,
    index: BTreeMap<CyclicWord, usize>,
    order: Vec<CyclicWord>,
    steps: Vec<Step>,
    compiled_constraints: Vec<Compiled>,
}

impl Closure {
    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn alphabet(&self) -> Alphabet {
        Alphabet::new(self.alphabet_size)
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    /// Free moments, in evaluation order.
    pub fn search_variables(&self) -> &[CyclicWord] {
        &self.search_variables
    }

    /// Search variables that appear only because the relations at their
    /// degree are underdetermined.
    pub fn extra_variables(&self) -> &[CyclicWord] {
        &self.extra_variables
    }

    pub fn recipes(&self) -> &[Recipe] {
        &self.recipes
    }

    pub fn forced_zero(&self) -> &BTreeSet<CyclicWord> {
        &self.forced_zero
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    /// The numeric relations the closure was built from.
    pub fn relations(&self) -> &[MomentRelation] {
        &self.relations
    }

    pub fn recipe(&self, w: &Word) -> Option<&Recipe> {
        let key = canonical_moment(w);
        self.recipes.iter().find(|r| r.moment == key)
    }

    /// Orbit representative of `m_w` with its sign, or `None` for a forced zero.
    pub fn representative(&self, w: &Word) -> Option<(CyclicWord, f64)> {
        self.reduce(w)
    }

    fn reduce(&self, w: &Word) -> Option<(CyclicWord, f64)> {
        let key = canonical_moment(w);
        match &self.group {
            None => Some((key, 1.0)),
            Some(g) => match g.reduce(&key) {
                Reduced::Zero => None,
                Reduced::Image { rep, sign } => Some((rep, sign as f64)),
            },
        }
    }
}

/// Degree-by-degree elimination. Moments of each degree that the linear
/// relations of that degree do not fix become search variables.
pub fn build_closure(
    model: &LoopModel,
    params: &BTreeMap<String, Q>,
    max_degree: usize,
    impose_symmetry: bool,
) -> Result<Closure> {
    let numeric = model.substitute(params)?;
    let alphabet_size = numeric.alphabet_size();
    let alphabet = Alphabet::new(alphabet_size);
    let prune = impose_symmetry && !numeric.group.is_trivial();
    let group = prune.then(|| numeric.group.clone());
    let action_degree = numeric.action.degree();

    // moment columns by degree
    let mut forced_zero = BTreeSet::new();
    let mut reps_by_degree: Vec<Vec<CyclicWord>> = vec![Vec::new(); max_degree + 1];
    for m in enumerate_moments(alphabet_size, max_degree) {
        if m.is_empty() {
            continue;
        }
        match &group {
            Some(g) => match g.reduce(&m) {
                Reduced::Zero => {
                    forced_zero.insert(m);
                }
                Reduced::Image { rep, .. } if rep == m => reps_by_degree[m.len()].push(m),
                Reduced::Image { .. } => {}
            },
            None => reps_by_degree[m.len()].push(m),
        }
    }

    // relation pool
    let mut pool: Vec<Vec<(MomentRelation, QPoly)>> = vec![Vec::new(); max_degree + 1];
    let mut relations = Vec::new();
    for w in enumerate_words(alphabet_size, max_degree.saturating_sub(1)) {
        for i in 0..alphabet_size {
            let rel = generate_sde(&numeric, &w, Letter(i as u8), prune)?;
            let poly = rel.residual_poly();
            if poly.is_zero() {
                continue;
            }
            let d = poly.moment_degree();
            if d > max_degree {
                continue;
            }
            let qp = poly.to_qpoly()?;
            relations.push(rel.clone());
            pool[d].push((rel, qp));
        }
    }

    // Relations recovered from redundant higher-degree equations, in normal
    // form; each pass feeds them back in at their own degree.
    let mut derived: Vec<QPoly> = Vec::new();
    let mut passes = 0;
    let (recipes, search_variables, extra_variables, constraints, order) = loop {
        passes += 1;
        let mut recipes = Vec::new();
        let mut search_variables = Vec::new();
        let mut extra_variables = Vec::new();
        let mut constraints = Vec::new();
        let mut order: Vec<(CyclicWord, Option<QPoly>)> = Vec::new();
        let mut nf: BTreeMap<CyclicWord, QPoly> = BTreeMap::new();
        let mut leftovers: Vec<(usize, QPoly)> = Vec::new();

        for d in 1..=max_degree {
            let mut cols = reps_by_degree[d].clone();
            cols.sort_by(|a, b| b.cmp(a));
            let col_of: BTreeMap<&CyclicWord, usize> = cols.iter().enumerate().map(|(i, c)| (c, i)).collect();

            let mut rows: Vec<(Vec<Q>, QPoly)> = Vec::new();
            let level = pool[d].iter().map(|(_, qp)| qp).chain(derived.iter().filter(|p| qpoly_moment_degree(p) == d));
            for qp in level {
                let mut lin = vec![Q::zero(); cols.len()];
                let mut rest = QPoly::new();
                let mut nonlinear = false;
                for (k, v) in qp {
                    let top = k.iter().filter(|w| w.len() == d).count();
                    if top == 1 && k.len() == 1 {
                        lin[col_of[&k[0]]] += v;
                    } else {
                        if top > 0 {
                            nonlinear = true;
                        }
                        rest.insert(k.clone(), v.clone());
                    }
                }
                if nonlinear {
                    leftovers.push((d, qp.clone()));
                } else {
                    rows.push((lin, rest));
                }
            }

            // Gauss-Jordan with the largest moments first
            let mut pivots: Vec<(usize, usize)> = Vec::new();
            let mut r0 = 0;
            for c in 0..cols.len() {
                let Some(p) = (r0..rows.len()).find(|&r| !rows[r].0[c].is_zero()) else { continue };
                rows.swap(r0, p);
                let inv = Q::one() / rows[r0].0[c].clone();
                let (lin, rest) = &mut rows[r0];
                for x in lin.iter_mut() {
                    *x *= &inv;
                }
                for v in rest.values_mut() {
                    *v *= &inv;
                }
                let (plin, prest) = rows[r0].clone();
                for (r, row) in rows.iter_mut().enumerate() {
                    if r == r0 || row.0[c].is_zero() {
                        continue;
                    }
                    let f = -row.0[c].clone();
                    for (x, y) in row.0.iter_mut().zip(&plin) {
                        *x += &f * y;
                    }
                    qpoly_add_scaled(&mut row.1, &prest, &f);
                }
                pivots.push((r0, c));
                r0 += 1;
            }

            let pivot_cols: BTreeSet<usize> = pivots.iter().map(|&(_, c)| c).collect();
            // free columns first (ascending), then solved ones
            for c in (0..cols.len()).rev() {
                if !pivot_cols.contains(&c) {
                    search_variables.push(cols[c].clone());
                    if d + 1 >= action_degree {
                        extra_variables.push(cols[c].clone());
                    }
                    nf.insert(cols[c].clone(), BTreeMap::from([(vec![cols[c].clone()], Q::one())]));
                    order.push((cols[c].clone(), None));
                }
            }
            for &(r, c) in pivots.iter().rev() {
                let (lin, rest) = &rows[r];
                let mut expr = QPoly::new();
                qpoly_add_scaled(&mut expr, rest, &-Q::one());
                for (j, a) in lin.iter().enumerate() {
                    if j != c && !a.is_zero() {
                        expr.insert(vec![cols[j].clone()], -a.clone());
                    }
                }
                nf.insert(cols[c].clone(), normal_form(&expr, &nf));
                recipes.push(Recipe { moment: cols[c].clone(), degree: d, expr: expr.clone() });
                order.push((cols[c].clone(), Some(expr)));
            }
            for (_, rest) in rows.into_iter().skip(r0) {
                if !rest.is_empty() {
                    leftovers.push((d, rest));
                }
            }
        }

        let mut fresh = Vec::new();
        for (d, expr) in leftovers {
            let reduced = normal_form(&expr, &nf);
            if reduced.is_empty() {
                continue;
            }
            if reduced.keys().all(|k| k.is_empty()) {
                let rel = MomentPoly::from_qpoly(&expr).render(alphabet);
                return Err(Error::Inconsistent { degree: d, relation: format!("0 = {rel}") });
            }
            if linear_at_top(&reduced) && passes <= max_degree * 8 {
                fresh.push(reduced);
            } else {
                constraints.push(Constraint { degree: d, expr });
            }
        }
        if fresh.is_empty() {
            break (recipes, search_variables, extra_variables, constraints, order);
        }
        log::debug!("closure pass {passes}: {} derived relations", fresh.len());
        derived.extend(fresh);
    };

    if !extra_variables.is_empty() {
        let names: Vec<String> = extra_variables.iter().map(|w| moment_name(w, alphabet)).collect();
        log::warn!("loop equations leave {} undetermined; treating as extra search variables", names.join(", "));
    }

    let index: BTreeMap<CyclicWord, usize> =
        order.iter().enumerate().map(|(i, (w, _))| (w.clone(), i)).collect();
    let steps = order
        .iter()
        .enumerate()
        .map(|(i, (_, e))| match e {
            None => Step::Free(i),
            Some(e) => Step::Solve(i, Compiled::new(e, &index)),
        })
        .collect();
    let compiled_constraints = constraints.iter().map(|c| Compiled::new(&c.expr, &index)).collect();

    Ok(Closure {
        alphabet_size,
        max_degree,
        search_variables,
        extra_variables,
        recipes,
        forced_zero,
        constraints,
        relations,
        group,
        index,
        order: order.into_iter().map(|(w, _)| w).collect(),
        steps,
        compiled_constraints,
    })
}

impl Closure {
    /// Closure for an ensemble spec at its stored parameter values.
    pub fn from_spec(spec: &EnsembleSpec, max_degree: usize, impose_symmetry: bool) -> Result<Closure> {
        build_closure(&LoopModel::from_spec(spec)?, &spec.parameters, max_degree, impose_symmetry)
    }
}

/// Relative tolerance for constraint and pinned-moment consistency.
pub const CONSISTENCY_TOL: f64 = 1e-9;

/// Evaluate every moment up to the closure degree. The assignment must cover
/// the search variables; assigned moments that the closure solves or forces
/// to zero are checked for consistency.
pub fn evaluate_moments(closure: &Closure, assignment: &[(Word, f64)]) -> Result<MomentTable> {
    let alphabet = closure.alphabet();
    let mut values = vec![f64::NAN; closure.index.len()];
    let mut pinned = Vec::new();
    for (w, v) in assignment {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("assigned value for {}", alphabet.render(w))));
        }
        match closure.reduce(w) {
            None => pinned.push((None, w, *v)),
            Some((rep, sign)) => match closure.index.get(&rep) {
                Some(&i) => pinned.push((Some((i, sign)), w, *v)),
                None => {
                    return Err(Error::invalid(format!(
                        "moment {} is beyond closure degree {}",
                        alphabet.render(w),
                        closure.max_degree
                    )))
                }
            },
        }
    }
    for (slot, _, v) in &pinned {
        if let Some((i, sign)) = slot {
            if matches!(closure.steps[*i], Step::Free(_)) {
                values[*i] = v * sign;
            }
        }
    }
    for step in &closure.steps {
        match step {
            Step::Free(i) => {
                if values[*i].is_nan() {
                    return Err(Error::MissingMoment(moment_name(&closure.order[*i], alphabet)));
                }
            }
            Step::Solve(i, expr) => {
                let v = expr.eval(&values);
                if !v.is_finite() {
                    return Err(Error::NonFinite(moment_name(&closure.order[*i], alphabet)));
                }
                values[*i] = v;
            }
        }
    }
    for (slot, w, v) in &pinned {
        let expected = match slot {
            None => 0.0,
            Some((i, sign)) => values[*i] * sign,
        };
        if (expected - v).abs() > CONSISTENCY_TOL * v.abs().max(1.0) {
            return Err(Error::Inconsistent {
                degree: w.len(),
                relation: format!("{} = {expected} but assigned {v}", alphabet.render(w)),
            });
        }
    }
    for (c, compiled) in closure.constraints.iter().zip(&closure.compiled_constraints) {
        let r = compiled.eval(&values);
        if !(r.abs() <= CONSISTENCY_TOL * compiled.scale(&values).max(1.0)) {
            return Err(Error::Inconsistent { degree: c.degree, relation: format!("{} (residual {r:e})", c.render(alphabet)) });
        }
    }

    let mut table = MomentTable::new(closure.alphabet_size);
    for m in enumerate_moments(closure.alphabet_size, closure.max_degree) {
        if m.is_empty() {
            continue;
        }
        let v = match closure.reduce(m.word()) {
            None => 0.0,
            Some((rep, sign)) => values[closure.index[&rep]] * sign,
        };
        table.insert(m.word(), v);
    }
    Ok(table)
}
