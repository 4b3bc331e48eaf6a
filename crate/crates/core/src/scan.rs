//! Feasibility of coupling/moment points, moment bounds and region scans.

use std::collections::BTreeMap;
use std::path::Path;

use argmin::core::{CostFunction, Executor, Gradient, State};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::coeff::{q_from_f64, Q};
use crate::dirac::EnsembleSpec;
use crate::error::{Error, Result};
use crate::loops::{build_closure, evaluate_moments, Closure, LoopModel, MomentTable};
use crate::output::{fmt_g, write_csv};
use crate::positivity::{build_moment_matrix_on, psd_check, PsdReport, DEFAULT_TOL};
use crate::words::{enumerate_words, Alphabet, CyclicWord, Letter, Word};

/// Knobs shared by all scans.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanOptions {
    pub impose_symmetry: bool,
    pub tol: f64,
    /// Bisection steps per interval endpoint.
    pub depth: u32,
    /// Coarse grid size for interval searches.
    pub grid: usize,
    /// Use only the first `n` basis words (graded-lexicographic prefix).
    pub basis_size: Option<usize>,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions { impose_symmetry: true, tol: DEFAULT_TOL, depth: 20, grid: 201, basis_size: None }
    }
}

/// Outcome at one point of the search space.
#[derive(Clone, Debug)]
pub struct PointReport {
    /// Report at the requested level; `feasible` also requires every lower level.
    pub psd: PsdReport,
    /// `false` when the loop equations have no solution at this point.
    pub closure_ok: bool,
    /// Lowest level `Λ'` whose moment matrix fails.
    pub failed_level: Option<usize>,
    /// Values chosen for search variables that were not assigned.
    pub completed: Vec<(Word, f64)>,
    pub table: Option<MomentTable>,
}

impl PointReport {
    pub fn feasible(&self) -> bool {
        self.psd.feasible
    }

    /// Smallest eigenvalue relative to `max(1, ‖M‖)`; `-inf` without a closure.
    pub fn score(&self) -> f64 {
        if !self.closure_ok || self.psd.min_eigenvalue.is_nan() {
            return f64::NEG_INFINITY;
        }
        self.psd.min_eigenvalue / self.psd.spectral_norm.max(1.0)
    }

    fn closure_failure(tol: f64) -> Self {
        PointReport {
            psd: PsdReport { min_eigenvalue: f64::NAN, ..PsdReport::infeasible(tol) },
            closure_ok: false,
            failed_level: None,
            completed: Vec::new(),
            table: None,
        }
    }
}

/// Replace parameter values of a spec by `couplings`.
pub fn with_couplings(spec: &EnsembleSpec, couplings: &[(String, f64)]) -> Result<EnsembleSpec> {
    let mut out = spec.clone();
    for (name, v) in couplings {
        if !out.couplings.values().any(|c| c.params().any(|p| p == name)) {
            return Err(Error::invalid(format!("`{name}` is not a parameter of the model")));
        }
        out.parameters.insert(name.clone(), q_from_f64(*v)?);
    }
    Ok(out)
}

/// Parse a moment name: `m2` (power of the first letter), `m[AABB]`, or a bare word.
pub fn parse_moment(s: &str, alphabet_size: usize) -> Result<Word> {
    let t = s.trim();
    if let Some(inner) = t.strip_prefix("m[").and_then(|r| r.strip_suffix(']')) {
        return Alphabet::new(alphabet_size).parse(inner);
    }
    if let Some(k) = t.strip_prefix('m').map(|r| r.trim_start_matches('_')) {
        if let Ok(k) = k.parse::<usize>() {
            return Ok(Word::power(Letter(0), k));
        }
    }
    Alphabet::new(alphabet_size).parse(t)
}

/// Moments of free semicircular letters with the given variances: the sum
/// over non-crossing pairings that pair equal letters.
pub fn free_semicircle_moment(w: &Word, variance: &[f64]) -> f64 {
    fn rec(l: &[Letter], var: &[f64]) -> f64 {
        if l.is_empty() {
            return 1.0;
        }
        if l.len() % 2 == 1 {
            return 0.0;
        }
        let mut total = 0.0;
        for j in (1..l.len()).step_by(2) {
            if l[j] == l[0] {
                total += var[l[0].index()] * rec(&l[1..j], var) * rec(&l[j + 1..], var);
            }
        }
        total
    }
    rec(w.letters(), variance)
}

/// Closure for one coupling point, ready for repeated feasibility checks.
pub struct Bootstrap {
    closure: std::result::Result<Closure, Error>,
    lambda: usize,
    opts: ScanOptions,
    basis: Vec<Word>,
    level_sizes: Vec<usize>,
}

impl Bootstrap {
    pub fn new(model: &LoopModel, params: &BTreeMap<String, Q>, lambda: usize, opts: &ScanOptions) -> Result<Self> {
        if lambda == 0 {
            return Err(Error::invalid("lambda must be >= 1"));
        }
        let closure = match build_closure(model, params, 2 * lambda, opts.impose_symmetry) {
            Ok(c) => Ok(c),
            Err(e @ Error::Inconsistent { .. }) => Err(e),
            Err(e) => return Err(e),
        };
        let n = model.alphabet_size();
        let mut basis = enumerate_words(n, lambda);
        let mut level_sizes: Vec<usize> = (0..=lambda).map(|l| (0..=l).map(|k| n.pow(k as u32)).sum()).collect();
        if let Some(k) = opts.basis_size {
            if k == 0 {
                return Err(Error::invalid("basis size must be >= 1"));
            }
            basis.truncate(k);
            for s in &mut level_sizes {
                *s = (*s).min(basis.len());
            }
            level_sizes.dedup();
        }
        Ok(Bootstrap { closure, lambda, opts: opts.clone(), basis, level_sizes })
    }

    pub fn for_spec(spec: &EnsembleSpec, lambda: usize, opts: &ScanOptions) -> Result<Self> {
        Bootstrap::new(&LoopModel::from_spec(spec)?, &spec.parameters, lambda, opts)
    }

    pub fn closure(&self) -> Option<&Closure> {
        self.closure.as_ref().ok()
    }

    pub fn closure_error(&self) -> Option<&Error> {
        self.closure.as_ref().err()
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    /// Normalized smallest eigenvalue of the full matrix, or `None` when the
    /// closure rejects the assignment.
    fn score(&self, closure: &Closure, assignment: &[(Word, f64)]) -> Option<f64> {
        let table = evaluate_moments(closure, assignment).ok()?;
        let m = build_moment_matrix_on(&table, self.basis.clone()).ok()?;
        let r = psd_check(&m, self.opts.tol).ok()?;
        Some(r.min_eigenvalue / r.spectral_norm.max(1.0))
    }

    /// Closure, moment matrix and PSD test at every level up to `Λ`. Search
    /// variables missing from `assignment` are chosen to maximize the
    /// smallest eigenvalue.
    pub fn check(&self, assignment: &[(Word, f64)]) -> Result<PointReport> {
        let closure = match &self.closure {
            Ok(c) => c,
            Err(_) => return Ok(PointReport::closure_failure(self.opts.tol)),
        };
        let assigned: Vec<CyclicWord> = assignment
            .iter()
            .filter_map(|(w, _)| closure.representative(w).map(|(rep, _)| rep))
            .collect();
        let missing: Vec<CyclicWord> =
            closure.search_variables().iter().filter(|v| !assigned.contains(v)).cloned().collect();

        let mut full = assignment.to_vec();
        let mut completed = Vec::new();
        if !missing.is_empty() {
            let x = self.complete(closure, assignment, &missing);
            for (w, v) in missing.iter().zip(x) {
                full.push((w.word().clone(), v));
                completed.push((w.word().clone(), v));
            }
        }

        let table = match evaluate_moments(closure, &full) {
            Ok(t) => t,
            Err(Error::Inconsistent { .. }) => return Ok(PointReport::closure_failure(self.opts.tol)),
            Err(Error::NonFinite(_)) => {
                return Ok(PointReport { completed, ..PointReport::closure_failure(self.opts.tol) })
            }
            Err(e) => return Err(e),
        };
        let m = build_moment_matrix_on(&table, self.basis.clone())?;
        let mut failed_level = None;
        let mut top = None;
        for (level, &k) in self.level_sizes.iter().enumerate() {
            let r = psd_check(&m.leading(k), self.opts.tol)?;
            if !r.feasible && failed_level.is_none() {
                failed_level = Some(level);
            }
            top = Some(r);
        }
        let mut psd = top.expect("at least one level");
        psd.feasible = failed_level.is_none();
        Ok(PointReport { psd, closure_ok: true, failed_level, completed, table: Some(table) })
    }

    /// Whether the largest leading block untouched by the free variables is
    /// already infeasible, so that no completion can help.
    fn fixed_block_fails<F: Fn(&[f64]) -> Option<DMatrix<f64>>>(&self, matrix: &F, x: &[f64]) -> bool {
        let Some((base, dirs)) = linearize(matrix, x) else { return false };
        let fixed = self
            .level_sizes
            .iter()
            .copied()
            .take_while(|&k| dirs.iter().all(|d| d.view((0, 0), (k, k)).iter().all(|v| *v == 0.0)))
            .last();
        match fixed {
            Some(k) => {
                let block = crate::positivity::MomentMatrix {
                    basis: self.basis[..k].to_vec(),
                    entries: base.view((0, 0), (k, k)).into_owned(),
                };
                psd_check(&block, self.opts.tol).is_ok_and(|r| !r.feasible)
            }
            None => false,
        }
    }

    /// Maximize the normalized smallest eigenvalue over the missing variables.
    fn complete(&self, closure: &Closure, assignment: &[(Word, f64)], missing: &[CyclicWord]) -> Vec<f64> {
        let alphabet = closure.alphabet_size();
        // variances from assigned squares, shared across symmetric letters
        let mut variance = vec![1.0; alphabet];
        for (l, var) in variance.iter_mut().enumerate() {
            let Some((rep, sign)) = closure.representative(&Word::power(Letter(l as u8), 2)) else { continue };
            let given = assignment.iter().find(|(w, _)| closure.representative(w).is_some_and(|(r, _)| r == rep));
            if let Some((w, v)) = given {
                let s = closure.representative(w).map_or(1.0, |(_, s)| s);
                if sign * s * v > 0.0 {
                    *var = sign * s * v;
                }
            }
        }
        let semicircle: Vec<f64> = missing.iter().map(|w| free_semicircle_moment(w.word(), &variance)).collect();
        let starts = [semicircle, vec![0.0; missing.len()]];

        let matrix = |x: &[f64]| -> Option<DMatrix<f64>> {
            let mut full = assignment.to_vec();
            full.extend(missing.iter().map(|w| w.word().clone()).zip(x.iter().copied()));
            let table = evaluate_moments(closure, &full).ok()?;
            let m = build_moment_matrix_on(&table, self.basis.clone()).ok()?;
            m.entries.iter().all(|v| v.is_finite()).then_some(m.entries)
        };
        let score = |x: &[f64]| -> f64 {
            let mut full = assignment.to_vec();
            full.extend(missing.iter().map(|w| w.word().clone()).zip(x.iter().copied()));
            self.score(closure, &full).unwrap_or(f64::NEG_INFINITY)
        };
        if self.fixed_block_fails(&matrix, &starts[0]) {
            return starts[0].clone();
        }
        let mut best = (f64::NEG_INFINITY, starts[0].clone());
        for x0 in &starts {
            let x = maximize_min_eigenvalue(&matrix, x0);
            let s = score(&x);
            if s > best.0 {
                best = (s, x);
            }
            if best.0 >= 0.0 {
                break;
            }
        }
        best.1
    }
}

/// Soft minimum `-(1/β) log Σ exp(-β λ_i)` of the eigenvalues of the affine
/// model `base + Σ (x_j - c_j) dirs_j`, negated for minimization.
struct SoftMinEigen<'a> {
    base: &'a DMatrix<f64>,
    dirs: &'a [DMatrix<f64>],
    center: &'a [f64],
    beta: f64,
}

impl SoftMinEigen<'_> {
    fn eval(&self, x: &[f64]) -> Option<(SymmetricEigen<f64, nalgebra::Dyn>, Vec<f64>, f64)> {
        let mut m = self.base.clone();
        for ((d, xj), cj) in self.dirs.iter().zip(x).zip(self.center) {
            m += d * (xj - cj);
        }
        let eig = eigen(m)?;
        let min = eig.eigenvalues.min();
        let e: Vec<f64> = eig.eigenvalues.iter().map(|l| (-self.beta * (l - min)).exp()).collect();
        let total: f64 = e.iter().sum();
        let cost = -min + total.ln() / self.beta;
        Some((eig, e.into_iter().map(|v| v / total).collect(), cost))
    }
}

/// Symmetric eigendecomposition; `None` for non-finite input or no convergence.
fn eigen(m: DMatrix<f64>) -> Option<SymmetricEigen<f64, nalgebra::Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    SymmetricEigen::try_new(m, f64::EPSILON, 10_000)
}

impl CostFunction for SoftMinEigen<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.eval(x).map_or(f64::INFINITY, |e| e.2))
    }
}

impl Gradient for SoftMinEigen<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, x: &Vec<f64>) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        let Some((eig, w, _)) = self.eval(x) else {
            return Err(argmin::core::Error::msg("non-finite moment matrix"));
        };
        Ok(self
            .dirs
            .iter()
            .map(|d| {
                -(0..w.len())
                    .filter(|&i| w[i] > 1e-16)
                    .map(|i| {
                        let v = eig.eigenvectors.column(i);
                        w[i] * v.dot(&(d * v))
                    })
                    .sum::<f64>()
            })
            .collect())
    }
}

/// Matrix and its central-difference derivatives at `x`.
fn linearize<F: Fn(&[f64]) -> Option<DMatrix<f64>>>(matrix: &F, x: &[f64]) -> Option<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
    let base = matrix(x)?;
    let mut dirs = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let h = 1e-5 * x[j].abs().max(1.0);
        let mut up = x.to_vec();
        up[j] += h;
        let mut down = x.to_vec();
        down[j] -= h;
        dirs.push((matrix(&up)? - matrix(&down)?) / (2.0 * h));
    }
    Some((base, dirs))
}

/// Raise the smallest eigenvalue of `matrix(x)` by L-BFGS on a soft minimum
/// with increasing sharpness, re-linearizing between stages.
fn maximize_min_eigenvalue<F: Fn(&[f64]) -> Option<DMatrix<f64>>>(matrix: &F, x0: &[f64]) -> Vec<f64> {
    let min_eig = |x: &[f64]| matrix(x).and_then(eigen).map_or(f64::NEG_INFINITY, |e| e.eigenvalues.min());
    let mut x = x0.to_vec();
    let mut current = min_eig(&x);
    for sharpness in [30.0, 300.0, 3e3, 3e4, 3e5] {
        let Some((base, dirs)) = linearize(matrix, &x) else { break };
        let scale = base.norm().max(1.0);
        let problem = SoftMinEigen { base: &base, dirs: &dirs, center: &x, beta: sharpness / scale };
        let Ok(solver) = LBFGS::new(MoreThuenteLineSearch::new(), 7)
            .with_tolerance_grad(1e-13)
            .and_then(|s| s.with_tolerance_cost(1e-15))
        else {
            break;
        };
        let Ok(res) = Executor::new(problem, solver).configure(|s| s.param(x.clone()).max_iters(200)).run() else {
            continue;
        };
        if let Some(p) = res.state().get_best_param() {
            let value = min_eig(p);
            if value > current {
                current = value;
                x = p.clone();
            }
        }
        if current > 0.0 {
            break;
        }
    }
    x
}

/// `evaluate_moments` then moment matrix then PSD test, at one point.
pub fn feasible_point(
    spec: &EnsembleSpec,
    couplings: &[(String, f64)],
    assignment: &[(Word, f64)],
    lambda: usize,
    opts: &ScanOptions,
) -> Result<PointReport> {
    Bootstrap::for_spec(&with_couplings(spec, couplings)?, lambda, opts)?.check(assignment)
}

/// Two-sided bound on one search variable at fixed couplings.
#[derive(Clone, Debug, PartialEq)]
pub struct FeasibleInterval {
    pub couplings: Vec<(String, f64)>,
    pub variable: String,
    pub lo: f64,
    pub hi: f64,
    pub lambda: usize,
    pub empty: bool,
}

impl FeasibleInterval {
    pub fn width(&self) -> f64 {
        if self.empty {
            0.0
        } else {
            self.hi - self.lo
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        !self.empty && self.lo <= x && x <= self.hi
    }

    pub fn csv_row(&self) -> String {
        let c = self.couplings.first().map_or(f64::NAN, |c| c.1);
        if self.empty {
            format!("{},nan,nan,{},1", fmt_g(c), self.lambda)
        } else {
            format!("{},{},{},{},0", fmt_g(c), fmt_g(self.lo), fmt_g(self.hi), self.lambda)
        }
    }
}

pub const INTERVAL_HEADER: &str = "coupling,lo,hi,lambda,empty";

/// Coarse grid over `bracket`, then bisection of each boundary. Endpoints are
/// reported on the infeasible side of the final bracket, so the interval
/// contains every feasible point found.
pub fn feasible_interval(
    boot: &Bootstrap,
    variable: &Word,
    bracket: (f64, f64),
    fixed: &[(Word, f64)],
) -> Result<(f64, f64, bool)> {
    let (a, b) = bracket;
    if !(a < b) {
        return Err(Error::invalid("interval bracket needs lo < hi"));
    }
    let n = boot.opts.grid.max(2);
    let probe = |x: f64| -> Result<(bool, f64)> {
        let mut assignment = fixed.to_vec();
        assignment.push((variable.clone(), x));
        let r = boot.check(&assignment)?;
        Ok((r.feasible(), r.score()))
    };
    let at = |x: f64| -> Result<bool> { Ok(probe(x)?.0) };
    let xs: Vec<f64> = (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect();
    let probes: Vec<(bool, f64)> = xs.par_iter().map(|&x| probe(x)).collect::<Result<_>>()?;

    // (feasible point, infeasible left neighbour, infeasible right neighbour)
    let (lo_seed, hi_seed) = match (probes.iter().position(|p| p.0), probes.iter().rposition(|p| p.0)) {
        (Some(first), Some(last)) => (
            (xs[first], first.checked_sub(1).map(|i| xs[i])),
            (xs[last], xs.get(last + 1).copied()),
        ),
        _ => {
            // the feasible set can be narrower than the grid spacing: climb the
            // smallest eigenvalue around the best grid point
            let best = (0..n)
                .max_by(|&i, &j| probes[i].1.total_cmp(&probes[j].1))
                .expect("non-empty grid");
            let left = best.checked_sub(1).map(|i| xs[i]);
            let right = xs.get(best + 1).copied();
            let (l, r) = (left.unwrap_or(xs[best]), right.unwrap_or(xs[best]));
            match golden_max(&probe, l, r)? {
                Some(x) => ((x, left.filter(|&v| v < x)), (x, right.filter(|&v| v > x))),
                None => return Ok((f64::NAN, f64::NAN, true)),
            }
        }
    };

    let refine = |mut good: f64, mut bad: f64| -> Result<f64> {
        for _ in 0..boot.opts.depth {
            let mid = 0.5 * (good + bad);
            if at(mid)? {
                good = mid;
            } else {
                bad = mid;
            }
        }
        Ok(bad)
    };
    let lo = match lo_seed.1 {
        None => a,
        Some(bad) => refine(lo_seed.0, bad)?,
    };
    let hi = match hi_seed.1 {
        None => b,
        Some(bad) => refine(hi_seed.0, bad)?,
    };
    Ok((lo, hi, false))
}

/// Golden-section search for a feasible point in `[l, r]`, maximizing the
/// score. Returns the first feasible point met.
fn golden_max(probe: &impl Fn(f64) -> Result<(bool, f64)>, mut l: f64, mut r: f64) -> Result<Option<f64>> {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = r - INV_PHI * (r - l);
    let mut x2 = l + INV_PHI * (r - l);
    let (mut f1, mut f2) = (probe(x1)?, probe(x2)?);
    for _ in 0..80 {
        for (x, f) in [(x1, f1), (x2, f2)] {
            if f.0 {
                return Ok(Some(x));
            }
        }
        if f1.1 >= f2.1 {
            r = x2;
            x2 = x1;
            f2 = f1;
            x1 = r - INV_PHI * (r - l);
            f1 = probe(x1)?;
        } else {
            l = x1;
            x1 = x2;
            f1 = f2;
            x2 = l + INV_PHI * (r - l);
            f2 = probe(x2)?;
        }
        if r - l <= 1e-15 * (1.0 + l.abs()) {
            break;
        }
    }
    Ok([(x1, f1), (x2, f2)].into_iter().find(|(_, f)| f.0).map(|(x, _)| x))
}

/// `feasible_interval` for a spec at given couplings.
pub fn interval_for_spec(
    spec: &EnsembleSpec,
    couplings: &[(String, f64)],
    variable: &str,
    bracket: (f64, f64),
    lambda: usize,
    opts: &ScanOptions,
) -> Result<FeasibleInterval> {
    let spec = with_couplings(spec, couplings)?;
    let boot = Bootstrap::for_spec(&spec, lambda, opts)?;
    let word = parse_moment(variable, spec.alphabet_size())?;
    let (lo, hi, empty) = feasible_interval(&boot, &word, bracket, &[])?;
    Ok(FeasibleInterval { couplings: couplings.to_vec(), variable: variable.to_string(), lo, hi, lambda, empty })
}

/// Uniform grid axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl Axis {
    pub fn new(name: &str, lo: f64, hi: f64, steps: usize) -> Result<Self> {
        let axis = Axis { name: name.to_string(), lo, hi, steps };
        axis.validate()?;
        Ok(axis)
    }

    pub fn fixed(name: &str, value: f64) -> Self {
        Axis { name: name.to_string(), lo: value, hi: value, steps: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid(format!("axis `{}` needs steps >= 1", self.name)));
        }
        if !(self.lo.is_finite() && self.hi.is_finite()) {
            return Err(Error::invalid(format!("axis `{}` bounds must be finite", self.name)));
        }
        if self.steps > 1 && !(self.lo < self.hi) {
            return Err(Error::invalid(format!("axis `{}` needs lo < hi", self.name)));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        if self.steps == 1 {
            return vec![self.lo];
        }
        (0..self.steps).map(|i| self.lo + (self.hi - self.lo) * i as f64 / (self.steps - 1) as f64).collect()
    }
}

/// Grid for a region scan: one or two coupling axes and one or two
/// search-variable axes.
#[derive(Clone, Debug)]
pub struct RegionConfig {
    pub c1: Axis,
    pub c2: Option<Axis>,
    pub v1: Axis,
    pub v2: Option<Axis>,
    pub lambda: usize,
    pub opts: ScanOptions,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionPoint {
    pub c1: f64,
    pub c2: Option<f64>,
    pub v1: f64,
    pub v2: Option<f64>,
    pub feasible: bool,
    pub min_eig: f64,
    pub closure_ok: bool,
}

/// Feasibility over a grid; points are stored in row-major order
/// `(c1, c2, v1, v2)`.
#[derive(Clone, Debug)]
pub struct RegionMask {
    pub shape: [usize; 4],
    pub points: Vec<RegionPoint>,
    pub has_v2: bool,
}

impl RegionMask {
    pub fn index(&self, ic1: usize, ic2: usize, iv1: usize, iv2: usize) -> usize {
        let [_, n2, n3, n4] = self.shape;
        ((ic1 * n2 + ic2) * n3 + iv1) * n4 + iv2
    }

    pub fn feasible(&self, ic1: usize, ic2: usize, iv1: usize, iv2: usize) -> bool {
        self.points[self.index(ic1, ic2, iv1, iv2)].feasible
    }

    pub fn count_feasible(&self) -> usize {
        self.points.iter().filter(|p| p.feasible).count()
    }

    pub fn header(&self) -> &'static str {
        if self.has_v2 {
            "c1,c2,v1,v2,feasible,min_eig,closure_ok"
        } else {
            "c1,c2,v1,feasible,min_eig,closure_ok"
        }
    }

    pub fn csv_rows(&self) -> Vec<String> {
        let opt = |x: Option<f64>| x.map(fmt_g).unwrap_or_default();
        self.points
            .iter()
            .map(|p| {
                let mut cols = vec![fmt_g(p.c1), opt(p.c2), fmt_g(p.v1)];
                if self.has_v2 {
                    cols.push(opt(p.v2));
                }
                cols.push((p.feasible as u8).to_string());
                cols.push(fmt_g(p.min_eig));
                cols.push((p.closure_ok as u8).to_string());
                cols.join(",")
            })
            .collect()
    }
}

/// Evaluate feasibility on the full grid. Closures are built once per
/// coupling point; grid points run in parallel and are collected in order.
pub fn region_scan(spec: &EnsembleSpec, config: &RegionConfig) -> Result<RegionMask> {
    config.c1.validate()?;
    config.v1.validate()?;
    for a in [&config.c2, &config.v2].into_iter().flatten() {
        a.validate()?;
    }
    let model = LoopModel::from_spec(spec)?;
    let n = spec.alphabet_size();
    let w1 = parse_moment(&config.v1.name, n)?;
    let w2 = config.v2.as_ref().map(|a| parse_moment(&a.name, n)).transpose()?;

    let c1 = config.c1.values();
    let c2: Vec<Option<f64>> = match &config.c2 {
        Some(a) => a.values().into_iter().map(Some).collect(),
        None => vec![None],
    };
    let v1 = config.v1.values();
    let v2: Vec<Option<f64>> = match &config.v2 {
        Some(a) => a.values().into_iter().map(Some).collect(),
        None => vec![None],
    };

    let coupling_points: Vec<(f64, Option<f64>)> =
        c1.iter().flat_map(|&a| c2.iter().map(move |&b| (a, b))).collect();
    let boots: Vec<Bootstrap> = coupling_points
        .par_iter()
        .map(|&(a, b)| {
            let mut couplings = vec![(config.c1.name.clone(), a)];
            if let (Some(axis), Some(b)) = (&config.c2, b) {
                couplings.push((axis.name.clone(), b));
            }
            let s = with_couplings(spec, &couplings)?;
            Bootstrap::new(&model, &s.parameters, config.lambda, &config.opts)
        })
        .collect::<Result<_>>()?;

    let shape = [c1.len(), c2.len(), v1.len(), v2.len()];
    let total = shape.iter().product::<usize>();
    let points: Vec<RegionPoint> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let iv2 = idx % shape[3];
            let iv1 = (idx / shape[3]) % shape[2];
            let ic = idx / (shape[3] * shape[2]);
            let (a, b) = coupling_points[ic];
            let mut assignment = vec![(w1.clone(), v1[iv1])];
            if let (Some(w), Some(x)) = (&w2, v2[iv2]) {
                assignment.push((w.clone(), x));
            }
            let r = boots[ic].check(&assignment)?;
            Ok(RegionPoint {
                c1: a,
                c2: b,
                v1: v1[iv1],
                v2: v2[iv2],
                feasible: r.feasible(),
                min_eig: r.psd.min_eigenvalue,
                closure_ok: r.closure_ok,
            })
        })
        .collect::<Result<_>>()?;
    Ok(RegionMask { shape, points, has_v2: config.v2.is_some() })
}

pub fn export_region(mask: &RegionMask, path: &Path) -> Result<()> {
    write_csv(path, mask.header(), &mask.csv_rows())
}

pub fn export_intervals(intervals: &[FeasibleInterval], path: &Path) -> Result<()> {
    let rows: Vec<String> = intervals.iter().map(|i| i.csv_row()).collect();
    write_csv(path, INTERVAL_HEADER, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::q;
    use crate::dirac::Signature;

    fn h(k: usize) -> Word {
        Word::power(Letter(0), k)
    }

    fn quartic() -> EnsembleSpec {
        EnsembleSpec::quartic(Signature::TYPE_10, q(1), q(1)).unwrap()
    }

    #[test]
    fn quartic_points() {
        let opts = ScanOptions::default();
        let ok = feasible_point(&quartic(), &[], &[(h(2), 0.1)], 2, &opts).unwrap();
        assert!(ok.feasible());
        let bad = feasible_point(&quartic(), &[], &[(h(2), 0.2)], 2, &opts).unwrap();
        assert!(!bad.feasible());
        assert_eq!(bad.failed_level, Some(2));
        assert!(bad.closure_ok);
    }

    #[test]
    fn catalan_point() {
        let r = feasible_point(&EnsembleSpec::cubic(q(0)), &[], &[(h(1), 0.0)], 3, &ScanOptions::default()).unwrap();
        assert!(r.feasible() && r.closure_ok);
        let r = feasible_point(&EnsembleSpec::cubic(q(0)), &[], &[(h(1), 0.2)], 3, &ScanOptions::default()).unwrap();
        assert!(!r.feasible() && !r.closure_ok);
    }

    #[test]
    fn quartic_level_two_bound() {
        let i = interval_for_spec(&quartic(), &[], "m2", (0.0, 1.0), 2, &ScanOptions::default()).unwrap();
        assert!(!i.empty);
        assert_eq!(i.lo, 0.0);
        // root of 32 m^2 + 4 m - 1
        assert!((i.hi - 0.125).abs() < 1e-5, "{}", i.hi);
        assert_eq!(i.csv_row().split(',').count(), 5);
    }

    #[test]
    fn empty_interval() {
        let i = interval_for_spec(&quartic(), &[], "m2", (0.5, 1.0), 2, &ScanOptions::default()).unwrap();
        assert!(i.empty);
        assert!(i.csv_row().ends_with(",1"));
    }

    #[test]
    fn nesting_in_lambda() {
        let opts = ScanOptions { grid: 41, ..ScanOptions::default() };
        let i4 = interval_for_spec(&quartic(), &[], "m2", (0.0, 0.5), 4, &opts).unwrap();
        let i8 = interval_for_spec(&quartic(), &[], "m2", (0.0, 0.5), 8, &opts).unwrap();
        assert!(i8.width() <= i4.width());
        assert!(i8.lo >= i4.lo - 1e-12 && i8.hi <= i4.hi + 1e-12);
    }

    #[test]
    fn region_mask_shapes_and_parity() {
        let spec = quartic();
        let cfg = RegionConfig {
            c1: Axis::fixed("t2", 1.0),
            c2: None,
            v1: Axis::new("m1", -0.3, 0.3, 7).unwrap(),
            v2: Some(Axis::new("m2", 0.0, 0.12, 7).unwrap()),
            lambda: 3,
            opts: ScanOptions { impose_symmetry: false, ..ScanOptions::default() },
        };
        let mask = region_scan(&spec, &cfg).unwrap();
        assert_eq!(mask.points.len(), 49);
        for i in 0..7 {
            for j in 0..7 {
                assert_eq!(mask.feasible(0, 0, i, j), mask.feasible(0, 0, 6 - i, j), "({i},{j})");
            }
        }
        assert!(mask.count_feasible() > 0);
        let rows = mask.csv_rows();
        assert_eq!(rows.len(), 49);
        assert_eq!(mask.header(), "c1,c2,v1,v2,feasible,min_eig,closure_ok");
    }

    #[test]
    fn single_infeasible_point_grid() {
        let cfg = RegionConfig {
            c1: Axis::fixed("t2", 1.0),
            c2: None,
            v1: Axis::fixed("m2", 0.9),
            v2: None,
            lambda: 2,
            opts: ScanOptions::default(),
        };
        let mask = region_scan(&quartic(), &cfg).unwrap();
        assert_eq!(mask.points.len(), 1);
        assert_eq!(mask.count_feasible(), 0);
    }

    #[test]
    fn free_semicircle() {
        let a = Alphabet::new(2);
        let w = |s: &str| a.parse(s).unwrap();
        assert_eq!(free_semicircle_moment(&w("AAAA"), &[1.0, 1.0]), 2.0);
        assert_eq!(free_semicircle_moment(&w("AABB"), &[1.0, 1.0]), 1.0);
        assert_eq!(free_semicircle_moment(&w("ABAB"), &[1.0, 1.0]), 0.0);
        assert_eq!(free_semicircle_moment(&w("AAAAAA"), &[2.0, 1.0]), 40.0);
    }

    #[test]
    fn moment_names() {
        assert_eq!(parse_moment("m2", 1).unwrap(), h(2));
        assert_eq!(parse_moment("m_4", 1).unwrap(), h(4));
        assert_eq!(parse_moment("m[ABAB]", 2).unwrap(), Alphabet::new(2).parse("ABAB").unwrap());
        assert_eq!(parse_moment("HH", 1).unwrap(), h(2));
        assert!(parse_moment("m[C]", 2).is_err());
    }

    #[test]
    fn unknown_coupling_is_rejected() {
        assert!(with_couplings(&quartic(), &[("g".into(), 1.0)]).is_err());
    }
}
