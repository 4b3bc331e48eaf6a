//! Finite-N Metropolis sampling of Dirac ensembles.
//!
//! Bosonic ensembles are sampled in matrix space with single-entry Hermitian
//! proposals. Fermionic ensembles are sampled in eigenvalue space, where the
//! Vandermonde factor enters the weight as `-Σ_{i≠j} log|λ_i − λ_j|`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::coeff::{to_f64, Q};
use crate::dirac::{build_action, EnsembleSpec, FermionicBlock, MultiTracePolynomial};
use crate::error::{Error, Result};
use crate::loops::moment_name;
use crate::output::{fmt_g, write_csv};
use crate::words::{canonical_cyclic, Alphabet, CyclicWord, Word};

type C = Complex64;

/// Relative tolerance for the Hermiticity check of `action_value`.
const HERMITIAN_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
struct NumTerm {
    coeff: f64,
    n_power: i32,
    factors: Vec<Word>,
}

/// Numeric action ready for sampling.
#[derive(Clone, Debug)]
pub struct McModel {
    alphabet_size: usize,
    terms: Vec<NumTerm>,
    max_len: usize,
    fermionic: Option<FermionicBlock>,
}

impl McModel {
    /// From a multitrace action; parameters must all be bound by `params`.
    pub fn from_polynomial(
        poly: &MultiTracePolynomial,
        params: &std::collections::BTreeMap<String, Q>,
    ) -> Result<Self> {
        let poly = poly.substitute(params)?;
        let mut terms = Vec::new();
        for t in poly.terms() {
            let c = t
                .coefficient
                .as_constant()
                .ok_or_else(|| Error::invalid(format!("unbound parameter in coefficient {}", t.coefficient)))?;
            terms.push(NumTerm {
                coeff: to_f64(&c),
                n_power: t.n_power as i32,
                factors: t.factors.iter().map(|f| f.word().clone()).collect(),
            });
        }
        let max_len = terms.iter().flat_map(|t| t.factors.iter().map(Word::len)).max().unwrap_or(0);
        Ok(McModel { alphabet_size: poly.alphabet_size(), terms, max_len, fermionic: None })
    }

    pub fn from_spec(spec: &EnsembleSpec) -> Result<Self> {
        let mut model = McModel::from_polynomial(&build_action(spec)?, &spec.parameters)?;
        if let Some(f) = &spec.fermionic {
            if model.alphabet_size != 1 {
                return Err(Error::invalid("fermionic block needs a single-matrix signature"));
            }
            model.fermionic = Some(f.clone());
        }
        Ok(model)
    }

    pub fn with_fermionic(mut self, block: FermionicBlock) -> Result<Self> {
        if self.alphabet_size != 1 {
            return Err(Error::invalid("fermionic block needs a single-matrix signature"));
        }
        self.fermionic = Some(block);
        Ok(self)
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn fermionic(&self) -> Option<&FermionicBlock> {
        self.fermionic.as_ref()
    }

    /// Polynomial part from the power sums `p[k] = Tr Hᵏ` (single matrix).
    fn poly_from_power_sums(&self, n: usize, p: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let mut v = t.coeff * (n as f64).powi(t.n_power);
                for f in &t.factors {
                    v *= p[f.len()];
                }
                v
            })
            .sum()
    }

    fn poly_from_matrices(&self, ms: &[DMatrix<C>]) -> f64 {
        let n = ms[0].nrows();
        if self.alphabet_size == 1 {
            return self.poly_from_power_sums(n, &power_sums(&ms[0], self.max_len));
        }
        let mut cache: std::collections::HashMap<&Word, f64> = std::collections::HashMap::new();
        let mut total = 0.0;
        for t in &self.terms {
            let mut v = t.coeff * (n as f64).powi(t.n_power);
            for f in &t.factors {
                v *= *cache.entry(f).or_insert_with(|| word_trace(ms, f).re);
            }
            total += v;
        }
        total
    }

    /// Fermionic terms on a spectrum; `+inf` when a log argument vanishes.
    fn fermionic_value(&self, eig: &[f64]) -> f64 {
        let Some(f) = &self.fermionic else { return 0.0 };
        let m2 = f.mass * f.mass;
        let mut logs = 0.0;
        for (i, &a) in eig.iter().enumerate() {
            for &b in &eig[i + 1..] {
                logs += (m2 + (a - b) * (a - b)).ln();
            }
        }
        let p1: f64 = eig.iter().sum();
        let v = -(f.repulsion_strength / 4.0) * 2.0 * logs + f.trace_regulator * p1 * p1;
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }

    /// Action restricted to a spectrum (single matrix only).
    pub fn spectral_action(&self, eig: &[f64]) -> Result<f64> {
        if self.alphabet_size != 1 {
            return Err(Error::invalid("spectral action needs a single-matrix model"));
        }
        let p = power_sums_eig(eig, self.max_len);
        Ok(self.poly_from_power_sums(eig.len(), &p) + self.fermionic_value(eig))
    }

    /// Exact action of Hermitian matrices. Fermionic models also add the
    /// pair-log and trace-regulator terms; configurations hitting `log 0`
    /// evaluate to `+inf`.
    pub fn action(&self, matrices: &[DMatrix<C>]) -> Result<f64> {
        if matrices.len() != self.alphabet_size {
            return Err(Error::invalid(format!(
                "expected {} matrices, got {}",
                self.alphabet_size,
                matrices.len()
            )));
        }
        let n = matrices[0].nrows();
        for m in matrices {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::invalid("matrices must be square and of equal size"));
            }
            let scale = m.norm().max(1.0);
            if (m - m.adjoint()).norm() > HERMITIAN_TOL * scale {
                return Err(Error::invalid("matrix is not Hermitian"));
            }
        }
        let mut s = self.poly_from_matrices(matrices);
        if self.fermionic.is_some() {
            let eig = matrices[0].clone().symmetric_eigenvalues();
            s += self.fermionic_value(eig.as_slice());
        }
        Ok(s)
    }

    /// `S(h)` at `N = 1` as polynomial coefficients in `h`.
    fn scalar_polynomial(&self) -> Result<Vec<f64>> {
        if self.alphabet_size != 1 {
            return Err(Error::invalid("scalar reduction needs a single-matrix model"));
        }
        let mut c = vec![0.0; self.max_len.max(2) + 1];
        for t in &self.terms {
            let deg: usize = t.factors.iter().map(Word::len).sum();
            c[deg] += t.coeff;
        }
        if let Some(f) = &self.fermionic {
            c[2] += f.trace_regulator;
        }
        Ok(c)
    }
}

/// Action of `spec` on the given matrices.
pub fn action_value(spec: &EnsembleSpec, matrices: &[DMatrix<C>]) -> Result<f64> {
    McModel::from_spec(spec)?.action(matrices)
}

fn word_trace(ms: &[DMatrix<C>], w: &Word) -> C {
    let letters = w.letters();
    let Some((first, rest)) = letters.split_first() else {
        return C::new(ms[0].nrows() as f64, 0.0);
    };
    let mut acc = ms[first.index()].clone();
    for l in rest {
        acc = &acc * &ms[l.index()];
    }
    acc.trace()
}

/// `[N, Tr H, …, Tr H^k]`.
fn power_sums(h: &DMatrix<C>, k: usize) -> Vec<f64> {
    let mut out = vec![h.nrows() as f64];
    let mut p = h.clone();
    for i in 1..=k {
        if i > 1 {
            p = &p * h;
        }
        out.push(p.trace().re);
    }
    out
}

fn power_sums_eig(eig: &[f64], k: usize) -> Vec<f64> {
    (0..=k).map(|i| eig.iter().map(|x| x.powi(i as i32)).sum()).collect()
}

/// Sampler settings. `steps` counts sweeps including the burn-in.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainConfig {
    pub n: usize,
    pub steps: usize,
    pub burn_in: usize,
    pub step_size: f64,
    pub seed: u64,
    pub thinning: usize,
}

impl ChainConfig {
    pub fn new(n: usize, steps: usize, burn_in: usize, seed: u64) -> Self {
        ChainConfig { n, steps, burn_in, step_size: 1.0 / (n as f64).sqrt(), seed, thinning: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::invalid("N must be at least 1"));
        }
        if self.steps <= self.burn_in {
            return Err(Error::invalid(format!(
                "steps ({}) must exceed burn_in ({}): no measurements",
                self.steps, self.burn_in
            )));
        }
        if self.thinning == 0 {
            return Err(Error::invalid("thinning must be positive"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid("step size must be positive"));
        }
        Ok(())
    }
}

/// One recorded configuration.
#[derive(Clone, Debug)]
pub enum Snapshot {
    Matrices(Vec<DMatrix<C>>),
    Eigenvalues(DVector<f64>),
}

#[derive(Clone, Debug)]
pub struct Chain {
    pub n: usize,
    pub snapshots: Vec<Snapshot>,
    /// Acceptance rate after burn-in.
    pub acceptance: f64,
    /// Step size after adaptation.
    pub step_size: f64,
}

impl Chain {
    /// `Re Tr W / N` along the chain.
    pub fn series(&self, w: &Word) -> Result<Vec<f64>> {
        let n = self.n as f64;
        self.snapshots
            .iter()
            .map(|s| match s {
                Snapshot::Matrices(ms) => {
                    if w.max_letter().is_some_and(|l| l.index() >= ms.len()) {
                        return Err(Error::invalid("word uses a letter outside the model"));
                    }
                    Ok(word_trace(ms, w).re / n)
                }
                Snapshot::Eigenvalues(e) => {
                    if w.max_letter().is_some_and(|l| l.index() > 0) {
                        return Err(Error::invalid("eigenvalue chains only carry one matrix"));
                    }
                    Ok(e.iter().map(|x| x.powi(w.len() as i32)).sum::<f64>() / n)
                }
            })
            .collect()
    }
}

/// Adapts the step size towards acceptance 0.5 ± 0.1.
struct Adapter {
    window: usize,
    accepted: usize,
}

impl Adapter {
    const WINDOW: usize = 100;

    fn record(&mut self, ok: bool, step: &mut f64) {
        self.window += 1;
        self.accepted += ok as usize;
        if self.window == Self::WINDOW {
            let rate = self.accepted as f64 / Self::WINDOW as f64;
            if rate > 0.6 {
                *step *= 1.15;
            } else if rate < 0.4 {
                *step /= 1.15;
            }
            self.window = 0;
            self.accepted = 0;
        }
    }
}

fn metropolis_accept(rng: &mut ChaCha8Rng, delta: f64) -> bool {
    if delta.is_nan() || delta == f64::INFINITY {
        return false;
    }
    delta <= 0.0 || rng.gen::<f64>() < (-delta).exp()
}

/// Runs one chain. Chains sharing a seed but differing in `stream` are
/// independent and reproducible.
pub fn metropolis_sample(model: &McModel, cfg: &ChainConfig, stream: u64) -> Result<Chain> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    if model.fermionic.is_some() {
        eigenvalue_chain(model, cfg, &mut rng)
    } else if model.alphabet_size == 1 {
        single_matrix_chain(model, cfg, &mut rng)
    } else {
        multi_matrix_chain(model, cfg, &mut rng)
    }
}

/// Independent chains on streams `0..chains`, run in parallel.
pub fn run_chains(model: &McModel, cfg: &ChainConfig, chains: usize) -> Result<Vec<Chain>> {
    (0..chains as u64).into_par_iter().map(|s| metropolis_sample(model, cfg, s)).collect()
}

/// Hermitian single-entry proposal: `(i, j, δ)` adds `δ` at `(i, j)` and
/// `conj δ` at `(j, i)`; real on the diagonal.
fn propose_entry(rng: &mut ChaCha8Rng, n: usize, step: f64) -> (usize, usize, C) {
    let i = rng.gen_range(0..n);
    let j = rng.gen_range(0..n);
    let (i, j) = (i.min(j), i.max(j));
    let a: f64 = rng.sample(StandardNormal);
    if i == j {
        (i, i, C::new(step * a, 0.0))
    } else {
        let b: f64 = rng.sample(StandardNormal);
        (i, j, C::new(a, b) * (step / std::f64::consts::SQRT_2))
    }
}

fn apply_entry(h: &mut DMatrix<C>, i: usize, j: usize, d: C) {
    if i == j {
        h[(i, i)] += d;
    } else {
        h[(i, j)] += d;
        h[(j, i)] += d.conj();
    }
}

type Block = [[C; 2]; 2];

fn block_mul(a: &Block, b: &Block) -> Block {
    let mut c = [[C::new(0.0, 0.0); 2]; 2];
    for r in 0..2 {
        for s in 0..2 {
            c[r][s] = a[r][0] * b[0][s] + a[r][1] * b[1][s];
        }
    }
    c
}

/// `Tr (H + E)^k − Tr H^k` for `k = 1..=kmax`, where `E = P B Pᵀ` is
/// supported on rows/columns `i, j`. Each trace word in `H` and `E` reduces
/// to a product of the 2×2 blocks `P^T H^a P` and `B`.
fn power_sum_deltas(h: &DMatrix<C>, i: usize, j: usize, d: C, kmax: usize) -> Vec<f64> {
    let n = h.nrows();
    let zero = C::new(0.0, 0.0);
    let b: Block = if i == j { [[d, zero], [zero, zero]] } else { [[zero, d], [d.conj(), zero]] };
    // rows i and j of H^a
    let mut ri = vec![zero; n];
    let mut rj = vec![zero; n];
    ri[i] = C::new(1.0, 0.0);
    rj[j] = C::new(1.0, 0.0);
    let mut blocks: Vec<Block> = Vec::with_capacity(kmax);
    for a in 0..kmax {
        if a > 0 {
            ri = row_times(&ri, h);
            rj = row_times(&rj, h);
        }
        let cb: Block = [[ri[i], ri[j]], [rj[i], rj[j]]];
        blocks.push(block_mul(&cb, &b));
    }
    let mut out = vec![0.0; kmax + 1];
    for (k, slot) in out.iter_mut().enumerate().skip(1) {
        let mut total = zero;
        for mask in 1u32..(1 << k) {
            // the word ends with E after rotating; gaps count H's before each E
            let top = 31 - mask.leading_zeros() as usize;
            let mut gap = k - 1 - top;
            let mut prod: Option<Block> = None;
            for pos in 0..k {
                if mask >> pos & 1 == 1 {
                    let f = blocks[gap];
                    prod = Some(match prod {
                        None => f,
                        Some(p) => block_mul(&p, &f),
                    });
                    gap = 0;
                } else {
                    gap += 1;
                }
            }
            let p = prod.expect("mask is nonzero");
            total += p[0][0] + p[1][1];
        }
        *slot = total.re;
    }
    out
}

fn row_times(r: &[C], h: &DMatrix<C>) -> Vec<C> {
    let n = h.nrows();
    (0..n)
        .map(|c| {
            let mut s = C::new(0.0, 0.0);
            for (k, &x) in r.iter().enumerate() {
                if x.re != 0.0 || x.im != 0.0 {
                    s += x * h[(k, c)];
                }
            }
            s
        })
        .collect()
}

/// Proposals per sweep: one per independent real entry pair of a matrix.
fn sweep_len(n: usize) -> usize {
    n * (n + 1) / 2
}

fn single_matrix_chain(model: &McModel, cfg: &ChainConfig, rng: &mut ChaCha8Rng) -> Result<Chain> {
    let n = cfg.n;
    let kmax = model.max_len;
    let mut h = DMatrix::<C>::zeros(n, n);
    let mut p = power_sums(&h, kmax);
    let mut s = model.poly_from_power_sums(n, &p);
    let mut step = cfg.step_size;
    let mut adapter = Adapter { window: 0, accepted: 0 };
    let (mut tried, mut accepted) = (0usize, 0usize);
    let mut snapshots = Vec::new();
    for sweep in 0..cfg.steps {
        let burning = sweep < cfg.burn_in;
        for _ in 0..sweep_len(n) {
            let (i, j, d) = propose_entry(rng, n, step);
            let dp = power_sum_deltas(&h, i, j, d, kmax);
            let p_new: Vec<f64> = p.iter().zip(&dp).map(|(a, b)| a + b).collect();
            let s_new = model.poly_from_power_sums(n, &p_new);
            let ok = metropolis_accept(rng, s_new - s);
            if ok {
                apply_entry(&mut h, i, j, d);
                p = p_new;
                s = s_new;
            }
            if burning {
                adapter.record(ok, &mut step);
            } else {
                tried += 1;
                accepted += ok as usize;
            }
        }
        // drop accumulated rounding from the incremental updates
        p = power_sums(&h, kmax);
        s = model.poly_from_power_sums(n, &p);
        if !burning && (sweep - cfg.burn_in).is_multiple_of(cfg.thinning) {
            snapshots.push(Snapshot::Matrices(vec![h.clone()]));
        }
    }
    Ok(Chain { n, snapshots, acceptance: accepted as f64 / tried.max(1) as f64, step_size: step })
}

fn multi_matrix_chain(model: &McModel, cfg: &ChainConfig, rng: &mut ChaCha8Rng) -> Result<Chain> {
    let n = cfg.n;
    let letters = model.alphabet_size;
    let mut ms = vec![DMatrix::<C>::zeros(n, n); letters];
    let mut s = model.poly_from_matrices(&ms);
    let mut step = cfg.step_size;
    let mut adapter = Adapter { window: 0, accepted: 0 };
    let (mut tried, mut accepted) = (0usize, 0usize);
    let mut snapshots = Vec::new();
    for sweep in 0..cfg.steps {
        let burning = sweep < cfg.burn_in;
        for _ in 0..sweep_len(n) * letters {
            let l = rng.gen_range(0..letters);
            let (i, j, d) = propose_entry(rng, n, step);
            apply_entry(&mut ms[l], i, j, d);
            let s_new = model.poly_from_matrices(&ms);
            let ok = metropolis_accept(rng, s_new - s);
            if ok {
                s = s_new;
            } else {
                apply_entry(&mut ms[l], i, j, -d);
            }
            if burning {
                adapter.record(ok, &mut step);
            } else {
                tried += 1;
                accepted += ok as usize;
            }
        }
        if !burning && (sweep - cfg.burn_in).is_multiple_of(cfg.thinning) {
            snapshots.push(Snapshot::Matrices(ms.clone()));
        }
    }
    Ok(Chain { n, snapshots, acceptance: accepted as f64 / tried.max(1) as f64, step_size: step })
}

fn eigenvalue_chain(model: &McModel, cfg: &ChainConfig, rng: &mut ChaCha8Rng) -> Result<Chain> {
    let n = cfg.n;
    let f = model.fermionic.clone().expect("fermionic model");
    let m2 = f.mass * f.mass;
    let beta = f.repulsion_strength;
    let kmax = model.max_len.max(1);
    // distinct starting spectrum so the Vandermonde term is finite
    let mut eig: Vec<f64> = (0..n).map(|i| (i as f64 - (n as f64 - 1.0) / 2.0) * 0.1).collect();
    let mut p = power_sums_eig(&eig, kmax);
    let pair = |a: f64, b: f64| -> f64 {
        let u2 = (a - b) * (a - b);
        -(beta / 2.0) * (m2 + u2).ln() - u2.ln()
    };
    let one_body = |p: &[f64]| model.poly_from_power_sums(n, p) + f.trace_regulator * p[1] * p[1];
    let mut step = cfg.step_size;
    let mut adapter = Adapter { window: 0, accepted: 0 };
    let (mut tried, mut accepted) = (0usize, 0usize);
    let mut snapshots = Vec::new();
    for sweep in 0..cfg.steps {
        let burning = sweep < cfg.burn_in;
        for _ in 0..n {
            let i = rng.gen_range(0..n);
            let z: f64 = rng.sample(StandardNormal);
            let (old, new) = (eig[i], eig[i] + step * z);
            let mut delta = 0.0;
            for (j, &x) in eig.iter().enumerate() {
                if j != i {
                    delta += pair(new, x) - pair(old, x);
                }
            }
            let p_new: Vec<f64> =
                p.iter().enumerate().map(|(k, v)| v - old.powi(k as i32) + new.powi(k as i32)).collect();
            delta += one_body(&p_new) - one_body(&p);
            let ok = metropolis_accept(rng, delta);
            if ok {
                eig[i] = new;
                p = p_new;
            }
            if burning {
                adapter.record(ok, &mut step);
            } else {
                tried += 1;
                accepted += ok as usize;
            }
        }
        p = power_sums_eig(&eig, kmax);
        if !burning && (sweep - cfg.burn_in).is_multiple_of(cfg.thinning) {
            snapshots.push(Snapshot::Eigenvalues(DVector::from_vec(eig.clone())));
        }
    }
    Ok(Chain { n, snapshots, acceptance: accepted as f64 / tried.max(1) as f64, step_size: step })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentEstimate {
    pub word: CyclicWord,
    pub mean: f64,
    pub stderr: f64,
    pub n_batches: usize,
}

/// Mean and batch-means error of a series (at least 20 batches when the
/// series allows it).
pub fn batch_means(x: &[f64]) -> Result<(f64, f64, usize)> {
    let n = x.len();
    if n < 2 {
        return Err(Error::invalid(format!("{n} measurements: need at least 2 batches")));
    }
    let batches = n.min(20.max((n as f64).sqrt() as usize));
    let len = n / batches;
    let means: Vec<f64> =
        (0..batches).map(|b| x[b * len..(b + 1) * len].iter().sum::<f64>() / len as f64).collect();
    let mean = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    Ok((mean, (var / batches as f64).sqrt(), batches))
}

/// Batch-means estimates of `Tr W / N`. The empty word is exactly 1.
pub fn estimate_moments(chain: &Chain, words: &[Word]) -> Result<Vec<MomentEstimate>> {
    if chain.snapshots.is_empty() {
        return Err(Error::invalid("empty chain"));
    }
    words
        .iter()
        .map(|w| {
            let word = canonical_cyclic(w);
            if w.is_empty() {
                let (_, _, nb) = batch_means(&vec![1.0; chain.snapshots.len()])?;
                return Ok(MomentEstimate { word, mean: 1.0, stderr: 0.0, n_batches: nb });
            }
            let (mean, stderr, n_batches) = batch_means(&chain.series(w)?)?;
            Ok(MomentEstimate { word, mean, stderr, n_batches })
        })
        .collect()
}

/// Combines per-chain estimates of the same words.
pub fn pool_estimates(per_chain: &[Vec<MomentEstimate>]) -> Result<Vec<MomentEstimate>> {
    let first = per_chain.first().ok_or_else(|| Error::invalid("no chains to pool"))?;
    let k = per_chain.len() as f64;
    Ok((0..first.len())
        .map(|i| {
            let mean = per_chain.iter().map(|c| c[i].mean).sum::<f64>() / k;
            let var = per_chain.iter().map(|c| c[i].stderr.powi(2)).sum::<f64>() / (k * k);
            MomentEstimate {
                word: first[i].word.clone(),
                mean,
                stderr: var.sqrt(),
                n_batches: per_chain.iter().map(|c| c[i].n_batches).sum(),
            }
        })
        .collect())
}

pub const MC_HEADER: &str = "word,mean,stderr,N,steps,seed";

pub fn estimate_rows(estimates: &[MomentEstimate], alphabet: Alphabet, cfg: &ChainConfig) -> Vec<String> {
    estimates
        .iter()
        .map(|e| {
            format!(
                "{},{},{},{},{},{}",
                moment_name(&e.word, alphabet),
                fmt_g(e.mean),
                fmt_g(e.stderr),
                cfg.n,
                cfg.steps,
                cfg.seed
            )
        })
        .collect()
}

pub fn export_estimates(
    path: &Path,
    estimates: &[MomentEstimate],
    alphabet: Alphabet,
    cfg: &ChainConfig,
) -> Result<()> {
    write_csv(path, MC_HEADER, &estimate_rows(estimates, alphabet, cfg))
}

/// `∫ hᵏ e^{−S(h)} dh / ∫ e^{−S(h)} dh` for the `N = 1` reduction.
pub fn scalar_oracle(spec: &EnsembleSpec, k: u32) -> Result<f64> {
    scalar_oracle_model(&McModel::from_spec(spec)?, k)
}

pub fn scalar_oracle_model(model: &McModel, k: u32) -> Result<f64> {
    let c = model.scalar_polynomial()?;
    let deg = c.iter().rposition(|x| *x != 0.0).unwrap_or(0);
    if deg == 0 || deg % 2 == 1 || c[deg] <= 0.0 {
        return Err(Error::invalid("N = 1 integrand diverges: top coefficient must be even and positive"));
    }
    let s = |h: f64| c.iter().rev().fold(0.0, |acc, a| acc * h + a);
    // smallest symmetric window outside which the weight is below e^{-60}
    // of its peak, integrated piecewise so the peak is always resolved
    let min_on = |r: f64| (0..=2000).map(|i| s(-r + r * i as f64 / 1000.0)).fold(f64::INFINITY, f64::min);
    let mut r = 1e-3;
    while s(r) - min_on(r) < 60.0 || s(-r) - min_on(r) < 60.0 {
        r *= 1.25;
    }
    let smin = min_on(r);
    let w = |h: f64| (-(s(h) - smin)).exp();
    let pieces = 64;
    let integrate = |f: &dyn Fn(f64) -> f64| -> f64 {
        (0..pieces)
            .map(|i| {
                let a = -r + 2.0 * r * i as f64 / pieces as f64;
                let b = a + 2.0 * r / pieces as f64;
                quadrature::double_exponential::integrate(f, a, b, 1e-14).integral
            })
            .sum()
    };
    let z = integrate(&w);
    let num = integrate(&|h: f64| h.powi(k as i32) * w(h));
    let m = num / z;
    if !m.is_finite() {
        return Err(Error::NonFinite(format!("scalar moment {k}")));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::q;
    use crate::dirac::Signature;
    use crate::loops::LoopModel;
    use crate::words::Letter;
    use approx::assert_relative_eq;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn h(k: usize) -> Word {
        Word::power(Letter(0), k)
    }

    fn gaussian() -> McModel {
        McModel::from_polynomial(LoopModel::gaussian().action(), &Default::default()).unwrap()
    }

    fn random_hermitian(n: usize, seed: u64) -> DMatrix<C> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::<C>::from_fn(n, n, |_, _| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        (&a + a.adjoint()) * C::new(0.5, 0.0)
    }

    #[test]
    fn scalar_actions() {
        // N = 1: Tr D² = 4h², Tr D⁴ = 16h⁴
        let spec = EnsembleSpec::quartic(Signature::TYPE_10, q(3), q(1)).unwrap();
        let x = 0.7;
        let m = DMatrix::from_element(1, 1, C::new(x, 0.0));
        assert_relative_eq!(action_value(&spec, &[m]).unwrap(), 12.0 * x * x + 16.0 * x.powi(4), epsilon = 1e-12);

        let cubic = EnsembleSpec::cubic(q(2));
        let m = DMatrix::from_element(1, 1, C::new(x, 0.0));
        assert_relative_eq!(
            action_value(&cubic, &[m]).unwrap(),
            x * x + 2.0 * 4.0 / 3.0 * x.powi(3),
            epsilon = 1e-12
        );
    }

    #[test]
    fn zero_matrix_has_zero_action() {
        for sig in [Signature::TYPE_10, Signature::TYPE_20, Signature::TYPE_11] {
            let spec = EnsembleSpec::quartic(sig, q(1), q(1)).unwrap();
            let zero = vec![DMatrix::<C>::zeros(3, 3); sig.alphabet_size()];
            assert_eq!(action_value(&spec, &zero).unwrap(), 0.0);
        }
    }

    #[test]
    fn rejects_non_hermitian() {
        let spec = EnsembleSpec::quartic(Signature::TYPE_10, q(1), q(1)).unwrap();
        let mut m = DMatrix::<C>::zeros(2, 2);
        m[(0, 1)] = C::new(1.0, 0.0);
        assert!(action_value(&spec, &[m]).is_err());
    }

    #[test]
    fn action_matches_dirac_operator() {
        // Tr D⁴ for type (1,0) with D = H⊗1 + 1⊗Hᵀ, built explicitly
        let n = 3;
        let hm = random_hermitian(n, 5);
        let id = DMatrix::<C>::identity(n, n);
        let d = hm.kronecker(&id) + id.kronecker(&hm.transpose());
        let d2 = &d * &d;
        let direct = 0.5 * d2.trace().re + 0.25 * (&d2 * &d2).trace().re;
        let spec = EnsembleSpec::quartic(Signature::TYPE_10, crate::coeff::qr(1, 2), crate::coeff::qr(1, 4)).unwrap();
        assert_relative_eq!(action_value(&spec, &[hm]).unwrap(), direct, max_relative = 1e-10);
    }

    #[test]
    fn fermionic_coincident_eigenvalues() {
        let block = FermionicBlock { mass: 0.0, trace_regulator: 1.0, repulsion_strength: 2.0 };
        let model = gaussian().with_fermionic(block.clone()).unwrap();
        assert_eq!(model.spectral_action(&[0.5, 0.5]).unwrap(), f64::INFINITY);
        let massive = gaussian().with_fermionic(FermionicBlock { mass: 1.0, ..block }).unwrap();
        assert!(massive.spectral_action(&[0.5, 0.5]).unwrap().is_finite());
    }

    #[test]
    fn incremental_power_sums() {
        let n = 5;
        let hm = random_hermitian(n, 9);
        for (i, j, d) in [(1, 3, C::new(0.3, -0.7)), (2, 2, C::new(-0.4, 0.0)), (0, 4, C::new(1.1, 0.2))] {
            let before = power_sums(&hm, 6);
            let mut after_m = hm.clone();
            apply_entry(&mut after_m, i, j, d);
            let after = power_sums(&after_m, 6);
            let delta = power_sum_deltas(&hm, i, j, d, 6);
            for k in 1..=6 {
                assert_relative_eq!(before[k] + delta[k], after[k], max_relative = 1e-10, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn empty_measurement_set() {
        let cfg = ChainConfig::new(4, 100, 100, 1);
        assert!(metropolis_sample(&gaussian(), &cfg, 0).is_err());
    }

    #[test]
    fn deterministic_stream() {
        let cfg = ChainConfig::new(4, 60, 20, 42);
        let a = metropolis_sample(&gaussian(), &cfg, 3).unwrap().series(&h(2)).unwrap();
        let b = metropolis_sample(&gaussian(), &cfg, 3).unwrap().series(&h(2)).unwrap();
        let c = metropolis_sample(&gaussian(), &cfg, 4).unwrap().series(&h(2)).unwrap();
        assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert_ne!(a, c);
    }

    #[test]
    fn gaussian_wick() {
        let cfg = ChainConfig { burn_in: 200, steps: 2200, ..ChainConfig::new(8, 0, 0, 7) };
        let chain = metropolis_sample(&gaussian(), &cfg, 0).unwrap();
        let est = estimate_moments(&chain, &[Word::empty(), h(2), h(4)]).unwrap();
        assert_eq!((est[0].mean, est[0].stderr), (1.0, 0.0));
        assert!(est[1].n_batches >= 20);
        assert!((est[1].mean - 1.0).abs() < 3.0 * est[1].stderr + 1e-3, "{:?}", est[1]);
        // E[Tr H⁴]/N = 2 + 1/N² for the GUE
        assert!((est[2].mean - (2.0 + 1.0 / 64.0)).abs() < 4.0 * est[2].stderr + 1e-3, "{:?}", est[2]);
        assert!((0.35..0.65).contains(&chain.acceptance), "{}", chain.acceptance);
    }

    #[test]
    fn two_matrix_chain_runs() {
        let spec = EnsembleSpec::quartic(Signature::TYPE_20, q(1), q(1)).unwrap();
        let model = McModel::from_spec(&spec).unwrap();
        let cfg = ChainConfig { burn_in: 50, steps: 250, ..ChainConfig::new(3, 0, 0, 1) };
        let chain = metropolis_sample(&model, &cfg, 0).unwrap();
        let ab = Alphabet::new(2);
        let est = estimate_moments(&chain, &[ab.parse("AA").unwrap(), ab.parse("BB").unwrap(), ab.parse("A").unwrap()])
            .unwrap();
        // A <-> B swap symmetry
        assert!((est[0].mean - est[1].mean).abs() < 4.0 * (est[0].stderr + est[1].stderr) + 1e-3);
        assert!(est[2].mean.abs() < 4.0 * est[2].stderr + 1e-3);
    }

    #[test]
    fn scalar_oracle_anchors() {
        let gauss = gaussian().with_fermionic(FermionicBlock {
            mass: 1.0,
            trace_regulator: 1.5,
            repulsion_strength: 2.0,
        });
        // (1/2 + 3/2) h² = 2h²  ->  m2 = 1/4
        assert_relative_eq!(scalar_oracle_model(&gauss.unwrap(), 2).unwrap(), 0.25, epsilon = 1e-10);

        let spec = EnsembleSpec::quartic(Signature::TYPE_10, q(0), q(1)).unwrap();
        let gamma = |x: f64| statrs::function::gamma::gamma(x);
        assert_relative_eq!(scalar_oracle(&spec, 2).unwrap(), gamma(0.75) / (4.0 * gamma(0.25)), epsilon = 1e-10);
        assert!(scalar_oracle(&spec, 3).unwrap().abs() < 1e-12);

        let divergent = EnsembleSpec::cubic(q(1));
        assert!(scalar_oracle(&divergent, 2).is_err());
    }

    #[test]
    fn n1_sampler_matches_oracle() {
        let spec = EnsembleSpec::quartic(Signature::TYPE_10, q(1), q(1)).unwrap();
        let model = McModel::from_spec(&spec).unwrap();
        let cfg = ChainConfig { burn_in: 2000, steps: 200_000, ..ChainConfig::new(1, 0, 0, 11) };
        let chain = metropolis_sample(&model, &cfg, 0).unwrap();
        let est = estimate_moments(&chain, &[h(2), h(4)]).unwrap();
        for (e, k) in est.iter().zip([2, 4]) {
            let exact = scalar_oracle(&spec, k).unwrap();
            assert!((e.mean - exact).abs() < 3.0 * e.stderr, "k={k}: {e:?} vs {exact}");
        }
    }

    #[test]
    fn n1_histogram_chi_square() {
        // S(h) = 4h² + 16h⁴; compare binned occupation with the exact weights
        let spec = EnsembleSpec::quartic(Signature::TYPE_10, q(1), q(1)).unwrap();
        let model = McModel::from_spec(&spec).unwrap();
        let cfg = ChainConfig { burn_in: 1000, steps: 201_000, thinning: 20, ..ChainConfig::new(1, 0, 0, 5) };
        let chain = metropolis_sample(&model, &cfg, 0).unwrap();
        let xs = chain.series(&h(1)).unwrap();
        let edges = [-f64::INFINITY, -0.4, -0.25, -0.12, 0.0, 0.12, 0.25, 0.4, f64::INFINITY];
        let s = |x: f64| 4.0 * x * x + 16.0 * x.powi(4);
        let integ = |a: f64, b: f64| {
            let (a, b) = (a.max(-3.0), b.min(3.0));
            quadrature::double_exponential::integrate(|x| (-s(x)).exp(), a, b, 1e-12).integral
        };
        let z = integ(-3.0, 3.0);
        let mut chi2 = 0.0;
        for w in edges.windows(2) {
            let expected = integ(w[0], w[1]) / z * xs.len() as f64;
            let seen = xs.iter().filter(|&&x| x >= w[0] && x < w[1]).count() as f64;
            chi2 += (seen - expected).powi(2) / expected;
        }
        // 7 degrees of freedom; 99.9% quantile is 24.3
        assert!(chi2 < 24.3, "chi2 = {chi2}");
    }

    #[test]
    fn fermionic_chain_is_symmetric() {
        let spec = EnsembleSpec::quartic(Signature::TYPE_01, q(1), q(1)).unwrap();
        let mut spec = spec;
        spec.fermionic = Some(FermionicBlock { mass: 1.0, trace_regulator: 1.0, repulsion_strength: 2.0 });
        let model = McModel::from_spec(&spec).unwrap();
        let cfg = ChainConfig { burn_in: 500, steps: 5500, ..ChainConfig::new(6, 0, 0, 3) };
        let chain = metropolis_sample(&model, &cfg, 0).unwrap();
        let est = estimate_moments(&chain, &[h(1), h(2)]).unwrap();
        assert!(est[0].mean.abs() < 4.0 * est[0].stderr + 1e-3, "{:?}", est[0]);
        assert!(est[1].mean > 0.0);
    }

    #[test]
    fn batch_means_needs_two() {
        assert!(batch_means(&[1.0]).is_err());
        let (m, se, b) = batch_means(&[2.0; 400]).unwrap();
        assert_eq!((m, se, b), (2.0, 0.0, 20));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn massive_fermionic_action_is_finite(eig in proptest::collection::vec(-3.0f64..3.0, 1..6), mass in 0.01f64..3.0) {
            let mut eig = eig;
            let first = eig[0];
            eig.push(first);
            let model = gaussian()
                .with_fermionic(FermionicBlock { mass, trace_regulator: 1.0, repulsion_strength: 2.0 })
                .unwrap();
            prop_assert!(model.spectral_action(&eig).unwrap().is_finite());
        }

        #[test]
        fn conjugation_invariance(seed in 0u64..1000) {
            // the action only depends on traces, so unitary conjugation leaves it unchanged
            let spec = EnsembleSpec::quartic(Signature::TYPE_11, q(1), q(1)).unwrap();
            let a = random_hermitian(3, seed);
            let b = random_hermitian(3, seed + 7);
            let u = random_hermitian(3, seed + 13).symmetric_eigen().eigenvectors;
            let conj = |m: &DMatrix<C>| &u * m * u.adjoint();
            let s0 = action_value(&spec, &[a.clone(), b.clone()]).unwrap();
            let s1 = action_value(&spec, &[conj(&a), conj(&b)]).unwrap();
            prop_assert!((s0 - s1).abs() <= 1e-9 * (1.0 + s0.abs()));
        }
    }
}
