//! Large-N eigenvalue densities of difference-kernel ensembles by direct
//! minimization of the discretized energy
//! `E[ρ] = Σ_ij K(x_i, x_j) ρ_i ρ_j Δ² + Σ_i V(x_i) ρ_i Δ`
//! over nonnegative unit-mass cell densities.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::output::{fmt_g, write_csv};

/// Pair kernel and one-body potential of an equilibrium problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergySpec {
    #[serde(default)]
    pub g2: f64,
    #[serde(default)]
    pub g4: f64,
    #[serde(default)]
    pub mass: f64,
    /// Coefficient `a` of the `(a/2) x y` trace regulator.
    #[serde(default)]
    pub regulator: f64,
    /// Include the fermionic `-½ log(m² + (x−y)²)` pair term.
    #[serde(default = "yes")]
    pub fermionic: bool,
    /// Include the Vandermonde `-log|x−y|` pair term.
    #[serde(default = "yes")]
    pub vandermonde: bool,
    /// One-body potential as polynomial coefficients `V(x) = Σ c_k x^k`.
    #[serde(default)]
    pub potential: Vec<f64>,
    pub half_width: f64,
    pub n: usize,
}

fn yes() -> bool {
    true
}

impl EnergySpec {
    /// Fermionic ensemble kernel with the given couplings.
    pub fn fermionic(g2: f64, g4: f64, mass: f64, regulator: f64, half_width: f64, n: usize) -> Self {
        EnergySpec {
            g2,
            g4,
            mass,
            regulator,
            fermionic: true,
            vandermonde: true,
            potential: Vec::new(),
            half_width,
            n,
        }
    }

    /// Log gas in `V(x) = x²/2`; its minimizer is the semicircle on `[-2, 2]`.
    pub fn gaussian_validation(n: usize) -> Self {
        EnergySpec {
            g2: 0.0,
            g4: 0.0,
            mass: 0.0,
            regulator: 0.0,
            fermionic: false,
            vandermonde: true,
            potential: vec![0.0, 0.0, 0.5],
            half_width: 3.0,
            n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 64 {
            return Err(Error::invalid(format!("grid size {} < 64", self.n)));
        }
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(Error::invalid("half width must be positive"));
        }
        let finite = [self.g2, self.g4, self.mass, self.regulator].iter().all(|x| x.is_finite())
            && self.potential.iter().all(|x| x.is_finite());
        if !finite {
            return Err(Error::invalid("kernel parameters must be finite"));
        }
        Ok(())
    }

    pub fn delta(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    /// Cell centres `-L + (i + ½) Δ`.
    pub fn nodes(&self) -> Vec<f64> {
        let d = self.delta();
        (0..self.n).map(|i| -self.half_width + (i as f64 + 0.5) * d).collect()
    }

    fn potential_at(&self, x: f64) -> f64 {
        self.potential.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    fn potential_derivative(&self, x: f64) -> f64 {
        self.potential.iter().enumerate().skip(1).rev().fold(0.0, |acc, (k, c)| acc * x + k as f64 * c)
    }

    /// Weight of the singular `-log|x−y|` part: Vandermonde, plus the
    /// fermionic term when it degenerates at `m = 0`.
    fn log_weight(&self) -> f64 {
        let mut w = 0.0;
        if self.vandermonde {
            w += 1.0;
        }
        if self.fermionic && self.mass == 0.0 {
            w += 1.0;
        }
        w
    }

    fn massive(&self) -> bool {
        self.fermionic && self.mass != 0.0
    }

    /// Smooth part of the kernel at separation `u` (everything but the regulator and the log singularity).
    fn smooth(&self, u: f64) -> f64 {
        let u2 = u * u;
        let mut k = 2.0 * self.g4 * u2 * u2 + 2.0 * self.g2 * u2;
        if self.massive() {
            k -= 0.5 * (self.mass * self.mass + u2).ln();
        }
        k
    }

    /// `∂_x` of the smooth part at `u = x − y`.
    fn smooth_derivative(&self, u: f64) -> f64 {
        let u2 = u * u;
        let mut d = 8.0 * self.g4 * u2 * u + 4.0 * self.g2 * u;
        if self.massive() {
            d -= u / (self.mass * self.mass + u2);
        }
        d
    }

    /// Difference part of the kernel matrix, `K_ij − (a/2) x_i x_j`, as a
    /// function of `|i − j|`. The logarithms are averaged over cell pairs,
    /// which is exact for piecewise-constant densities.
    fn difference_profile(&self) -> Vec<f64> {
        let d = self.delta();
        let lw = self.log_weight();
        let mut prof: Vec<f64> = (0..self.n)
            .map(|k| {
                let mut v = -lw * cell_pair_log(k, d);
                if k > 0 {
                    v += self.smooth(k as f64 * d);
                }
                v
            })
            .collect();
        if self.massive() {
            prof[0] -= 0.5 * cell_average_log(self.mass, d);
        }
        prof
    }

    fn kernel_matrix(&self) -> DMatrix<f64> {
        let prof = self.difference_profile();
        let x = self.nodes();
        let n = self.n;
        let a = self.regulator;
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| (0..n).map(|j| prof[i.abs_diff(j)] + 0.5 * a * (x[i] * x[j])).collect())
            .collect();
        DMatrix::from_fn(n, n, |i, j| rows[i][j])
    }
}

/// `(1/Δ²)∫∫ log|x − y|` over two cells `k` apart.
fn cell_pair_log(k: usize, d: f64) -> f64 {
    if k < 50 {
        // second difference of F(u) = u² log|u| / 2 − 3u²/4
        let f = |u: f64| if u == 0.0 { 0.0 } else { 0.5 * u * u * u.abs().ln() - 0.75 * u * u };
        let u = k as f64 * d;
        (f(u + d) - 2.0 * f(u) + f(u - d)) / (d * d)
    } else {
        // log(kΔ) + E log(1 + s/kΔ) for triangular s, to O(k⁻⁸)
        let k2 = (k * k) as f64;
        (k as f64 * d).ln() - 1.0 / (12.0 * k2) - 1.0 / (60.0 * k2 * k2) - 1.0 / (168.0 * k2 * k2 * k2)
    }
}

/// `(1/Δ²)∫∫_{cell²} log(m² + (x−y)²)`.
fn cell_average_log(m: f64, d: f64) -> f64 {
    let f = |u: f64| 2.0 * (d - u) * (m * m + u * u).ln() / (d * d);
    quadrature::double_exponential::integrate(f, 0.0, d, 1e-14).integral
}

/// Density on the cell centres of `[-L, L]`, unit mass.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity {
    pub x: Vec<f64>,
    pub rho: Vec<f64>,
    pub delta: f64,
}

impl GridDensity {
    pub fn uniform(spec: &EnergySpec) -> Self {
        let d = spec.delta();
        let rho = vec![1.0 / (spec.n as f64 * d); spec.n];
        GridDensity { x: spec.nodes(), rho, delta: d }
    }

    /// All mass on the node closest to `x0`.
    pub fn point_mass(spec: &EnergySpec, x0: f64) -> Self {
        let mut g = GridDensity { x: spec.nodes(), rho: vec![0.0; spec.n], delta: spec.delta() };
        let i = g.x.iter().enumerate().min_by(|a, b| (a.1 - x0).abs().total_cmp(&(b.1 - x0).abs())).unwrap().0;
        g.rho[i] = 1.0 / g.delta;
        g
    }

    fn from_weights(spec: &EnergySpec, w: &[f64]) -> Self {
        let d = spec.delta();
        let total: f64 = w.iter().sum();
        GridDensity { x: spec.nodes(), rho: w.iter().map(|v| v / total / d).collect(), delta: d }
    }

    fn weights(&self) -> Vec<f64> {
        self.rho.iter().map(|r| r * self.delta).collect()
    }

    pub fn mass(&self) -> f64 {
        self.rho.iter().sum::<f64>() * self.delta
    }

    pub fn max(&self) -> f64 {
        self.rho.iter().copied().fold(0.0, f64::max)
    }

    /// Resample onto another grid by linear interpolation, renormalized.
    fn resampled(&self, spec: &EnergySpec) -> Vec<f64> {
        let xs = spec.nodes();
        let w: Vec<f64> = xs
            .iter()
            .map(|&x| {
                let t = (x - self.x[0]) / self.delta;
                if t < 0.0 || t > (self.x.len() - 1) as f64 {
                    return 0.0;
                }
                let i = (t.floor() as usize).min(self.x.len() - 2);
                let f = t - i as f64;
                (1.0 - f) * self.rho[i] + f * self.rho[i + 1]
            })
            .collect();
        let s: f64 = w.iter().sum();
        if s > 0.0 {
            w.iter().map(|v| v / s).collect()
        } else {
            vec![1.0 / spec.n as f64; spec.n]
        }
    }

    pub fn csv_rows(&self) -> Vec<String> {
        self.x.iter().zip(&self.rho).map(|(x, r)| format!("{},{}", fmt_g(*x), fmt_g(*r))).collect()
    }
}

/// Euclidean projection onto `{w ≥ 0, Σ w = 1}`.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Solver limits.
#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub restarts: usize,
    pub max_expansions: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { max_iters: 20_000, tol: 1e-8, restarts: 4, max_expansions: 8 }
    }
}

/// Result of `minimize_density`.
#[derive(Clone, Debug)]
pub struct Equilibrium {
    pub density: GridDensity,
    pub energy: f64,
    /// Sup-norm of `w − P(w − ∇E)`.
    pub residual: f64,
    /// Energies of accepted iterates of the winning run.
    pub history: Vec<f64>,
    /// Spec actually solved (after any domain expansion).
    pub spec: EnergySpec,
}

struct Problem {
    k: DMatrix<f64>,
    v: DVector<f64>,
}

impl Problem {
    fn new(spec: &EnergySpec) -> Self {
        let v = DVector::from_iterator(spec.n, spec.nodes().into_iter().map(|x| spec.potential_at(x)));
        Problem { k: spec.kernel_matrix(), v }
    }

    fn energy(&self, w: &DVector<f64>) -> f64 {
        w.dot(&(&self.k * w)) + self.v.dot(w)
    }

    fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.k * w * 2.0 + &self.v
    }

    fn pg_residual(&self, w: &DVector<f64>) -> f64 {
        let g = self.gradient(w);
        let p = project_simplex((w - &g).as_slice());
        w.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Projected gradient with Barzilai-Borwein steps and Armijo backtracking.
    fn descend(&self, w0: Vec<f64>, opts: &SolverOptions) -> (DVector<f64>, Vec<f64>) {
        let mut w = DVector::from_vec(project_simplex(&w0));
        let mut g = self.gradient(&w);
        let mut e = self.energy(&w);
        let mut history = vec![e];
        let row_max = self.k.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
        let mut alpha = 1.0 / (2.0 * row_max).max(1e-12);
        for _ in 0..opts.max_iters {
            let mut step = alpha;
            let mut accepted = None;
            for _ in 0..60 {
                let trial = DVector::from_vec(project_simplex((&w - &g * step).as_slice()));
                let et = self.energy(&trial);
                if et <= e + 1e-4 * g.dot(&(&trial - &w)) {
                    accepted = Some((trial, et));
                    break;
                }
                step *= 0.5;
            }
            let Some((next, en)) = accepted else { break };
            let gn = self.gradient(&next);
            let s = &next - &w;
            let y = &gn - &g;
            let sy = s.dot(&y);
            alpha = if sy > 0.0 { (s.dot(&s) / sy).clamp(1e-12, 1e12) } else { step * 2.0 };
            w = next;
            g = gn;
            e = en;
            history.push(e);
            let p = project_simplex((&w - &g).as_slice());
            let r = w.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if r < opts.tol || s.amax() == 0.0 {
                break;
            }
        }
        (w, history)
    }

    /// Primal active-set iteration on the KKT system of the current face.
    /// Newton steps are taken only while they lower the energy.
    fn polish(&self, w: &DVector<f64>, tol: f64) -> DVector<f64> {
        let n = w.len();
        let wmax = w.amax();
        let mut active: Vec<bool> = w.iter().map(|&x| x > 1e-12 * wmax).collect();
        let mut cur = w.map(|x| if x > 1e-12 * wmax { x } else { 0.0 });
        cur /= cur.sum();
        for _ in 0..200 {
            let idx: Vec<usize> = (0..n).filter(|&i| active[i]).collect();
            let m = idx.len();
            let mut a = DMatrix::<f64>::zeros(m + 1, m + 1);
            let mut rhs = DVector::<f64>::zeros(m + 1);
            for (r, &i) in idx.iter().enumerate() {
                for (c, &j) in idx.iter().enumerate() {
                    a[(r, c)] = 2.0 * self.k[(i, j)];
                }
                a[(r, m)] = -1.0;
                a[(m, r)] = 1.0;
                rhs[r] = -self.v[i];
            }
            rhs[m] = 1.0;
            let Some(sol) = a.lu().solve(&rhs) else { break };
            let mut tau: f64 = 1.0;
            let mut blocking = None;
            for (r, &i) in idx.iter().enumerate() {
                let p = sol[r] - cur[i];
                if p < 0.0 && -cur[i] / p < tau {
                    tau = -cur[i] / p;
                    blocking = Some(i);
                }
            }
            let mut next = cur.clone();
            for (r, &i) in idx.iter().enumerate() {
                next[i] = (cur[i] + tau * (sol[r] - cur[i])).max(0.0);
            }
            if self.energy(&next) > self.energy(&cur) + 1e-14 * self.energy(&cur).abs().max(1.0) {
                break;
            }
            cur = next;
            if let Some(b) = blocking {
                active[b] = false;
                cur[b] = 0.0;
                continue;
            }
            let g = self.gradient(&cur);
            let mu = sol[m];
            let worst = (0..n).filter(|&i| !active[i]).min_by(|&i, &j| g[i].total_cmp(&g[j]));
            match worst {
                Some(i) if g[i] - mu < -tol => active[i] = true,
                _ => break,
            }
        }
        cur
    }
}

fn bump(spec: &EnergySpec, centres: &[f64], width: f64) -> Vec<f64> {
    spec.nodes()
        .iter()
        .map(|x| centres.iter().map(|c| (-(x - c).powi(2) / (2.0 * width * width)).exp()).sum::<f64>() + 1e-12)
        .collect()
}

fn solve_fixed(spec: &EnergySpec, init: Option<&GridDensity>, opts: &SolverOptions) -> Result<Equilibrium> {
    let problem = Problem::new(spec);
    let l = spec.half_width;
    let mut starts: Vec<Vec<f64>> = Vec::new();
    if let Some(g) = init {
        starts.push(g.resampled(spec));
    }
    starts.push(vec![1.0 / spec.n as f64; spec.n]);
    starts.push(bump(spec, &[0.0], l / 4.0));
    starts.push(bump(spec, &[-l / 3.0, l / 3.0], l / 8.0));
    starts.push(bump(spec, &[0.0], l / 12.0));
    starts.truncate(opts.restarts.max(1));

    let mut best: Option<Equilibrium> = None;
    for w0 in starts {
        let (w, mut history) = problem.descend(w0, opts);
        let polished = problem.polish(&w, opts.tol);
        let (ep, ew) = (problem.energy(&polished), problem.energy(&w));
        let w = if ep <= ew + 1e-12 * ew.abs().max(1.0) { polished } else { w };
        let energy = problem.energy(&w);
        if history.last().is_none_or(|&e| energy < e) {
            history.push(energy);
        }
        let residual = problem.pg_residual(&w);
        let cand = Equilibrium {
            density: GridDensity::from_weights(spec, w.as_slice()),
            energy,
            residual,
            history,
            spec: spec.clone(),
        };
        log::debug!("restart: energy {energy:.12} residual {residual:.3e}");
        if best.as_ref().is_none_or(|b| {
            cand.energy < b.energy - 1e-12 * b.energy.abs().max(1.0)
                || (cand.energy <= b.energy + 1e-12 * b.energy.abs().max(1.0) && cand.residual < b.residual)
        }) {
            best = Some(cand);
        }
    }
    Ok(best.expect("at least one start"))
}

/// Minimizes the energy, expanding the domain by 1.5 while mass touches the
/// boundary. Fails if no restart reaches the residual tolerance.
pub fn minimize_density(spec: &EnergySpec, init: Option<&GridDensity>, opts: &SolverOptions) -> Result<Equilibrium> {
    spec.validate()?;
    let mut spec = spec.clone();
    let mut init = init.cloned();
    for _ in 0..=opts.max_expansions {
        let eq = solve_fixed(&spec, init.as_ref(), opts)?;
        let rho = &eq.density.rho;
        let edge = rho[0].max(rho[rho.len() - 1]);
        if edge > 1e-6 * eq.density.max() {
            log::debug!("density reaches the boundary at L = {}; expanding", spec.half_width);
            init = Some(eq.density);
            spec.half_width *= 1.5;
            continue;
        }
        if eq.residual >= opts.tol {
            return Err(Error::NoConvergence { restarts: opts.restarts, residual: eq.residual });
        }
        return Ok(eq);
    }
    Err(Error::Numerical(format!("support does not fit in [-{0}, {0}]", spec.half_width)))
}

/// Principal-value stationarity defect on the support interior.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PvResidual {
    /// `max_i |PV Σ_j ρ_j Δ/(x_j − x_i) + ∂_x ∫ K_smooth ρ + V'/2|`.
    pub residual: f64,
    /// `max_i |PV Σ_j ρ_j Δ/(x_j − x_i)|` over the same nodes.
    pub pv_scale: f64,
    pub nodes: usize,
    /// No node lies `EDGE_LAYER` cells inside the support; every support
    /// node was used instead.
    pub degenerate: bool,
}

impl PvResidual {
    pub fn relative(&self) -> f64 {
        self.residual / self.pv_scale.max(f64::MIN_POSITIVE)
    }
}

/// Support cells on each side of a node that must also carry mass for the
/// node to count as interior in `residual_pv`.
pub const EDGE_LAYER: usize = 4;

/// Saddle-point residual of `ρ` over support nodes (`ρ_i > 10⁻⁴ max ρ`) at
/// least `EDGE_LAYER` cells inside the support. The PV integral uses the trapezoid rule on
/// symmetric pairs `x_i ± kΔ`, with `Δ ρ'(x_i)` as the centre term.
pub fn residual_pv(spec: &EnergySpec, rho: &GridDensity) -> Result<PvResidual> {
    let rmax = rho.max();
    if rmax <= 0.0 {
        return Err(Error::invalid("density vanishes"));
    }
    let n = rho.x.len();
    let on = |i: usize| rho.rho[i] > 1e-4 * rmax;
    // the pointwise rule cannot resolve a square-root edge a few cells away
    let interior: Vec<usize> = (EDGE_LAYER..n.saturating_sub(EDGE_LAYER))
        .filter(|&i| (i - EDGE_LAYER..=i + EDGE_LAYER).all(on))
        .collect();
    let (nodes, degenerate) = if interior.is_empty() { ((0..n).filter(|&i| on(i)).collect(), true) } else { (interior, false) };

    let lw = spec.log_weight();
    let w = rho.weights();
    let first: f64 = rho.x.iter().zip(&w).map(|(x, w)| x * w).sum();
    let at = |i: usize| if i < n { rho.rho[i] } else { 0.0 };
    let mut out = PvResidual { residual: 0.0, pv_scale: 0.0, nodes: nodes.len(), degenerate };
    for i in nodes {
        let xi = rho.x[i];
        let mut pv = 0.0;
        let mut smooth = 0.0;
        for (j, &xj) in rho.x.iter().enumerate() {
            if j != i {
                pv += w[j] / (xj - xi);
                smooth += spec.smooth_derivative(xi - xj) * w[j];
            }
        }
        // trapezoid centre term Δ·ρ'(x_i) of the symmetric-pair sum
        pv += 0.5 * (at(i + 1) - at(i.wrapping_sub(1)));
        let pv = lw * pv;
        let total = pv + smooth + 0.5 * spec.regulator * first + 0.5 * spec.potential_derivative(xi);
        out.residual = out.residual.max(total.abs());
        out.pv_scale = out.pv_scale.max(pv.abs());
    }
    Ok(out)
}

/// Maximal runs of nodes with `ρ ≥ threshold · max ρ`, merging runs split by
/// a single node. Intervals span the outer cell edges.
pub fn support_structure(rho: &GridDensity, threshold: f64) -> Result<Vec<(f64, f64)>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid("threshold must lie in (0, 1)"));
    }
    let rmax = rho.max();
    if rmax <= 0.0 {
        return Err(Error::invalid("density vanishes"));
    }
    let on: Vec<bool> = rho.rho.iter().map(|&r| r >= threshold * rmax).collect();
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < on.len() {
        if on[i] {
            let start = i;
            while i < on.len() && on[i] {
                i += 1;
            }
            match runs.last_mut() {
                Some(last) if start == last.1 + 2 => last.1 = i - 1,
                _ => runs.push((start, i - 1)),
            }
        } else {
            i += 1;
        }
    }
    let h = rho.delta / 2.0;
    Ok(runs.into_iter().map(|(a, b)| (rho.x[a] - h, rho.x[b] + h)).collect())
}

pub fn moments_from_density(rho: &GridDensity, k: u32) -> f64 {
    rho.x.iter().zip(&rho.rho).map(|(x, r)| x.powi(k as i32) * r * rho.delta).sum()
}

/// Heat-kernel observables of the Dirac spectrum `±√(m² + (x_i − x_j)²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralCurves {
    pub t: Vec<f64>,
    pub k: Vec<f64>,
    pub ds: Vec<f64>,
    pub vs: Vec<f64>,
    /// First `t` at which `K` underflows to zero, if any.
    pub underflow: Option<f64>,
}

impl SpectralCurves {
    pub fn csv_rows(&self) -> Vec<String> {
        (0..self.t.len())
            .map(|i| format!("{},{},{},{}", fmt_g(self.t[i]), fmt_g(self.k[i]), fmt_g(self.ds[i]), fmt_g(self.vs[i])))
            .collect()
    }
}

/// `K(t) = Σ ρ_i ρ_j Δ² e^{−t s_ij}` with `s = (x_i − x_j)² + m²`,
/// `d_s = 2t⟨s⟩` and `v_s = 2t² Var(s)` under the normalized weights.
pub fn spectral_estimators(rho: &GridDensity, mass: f64, t: &[f64]) -> Result<SpectralCurves> {
    if t.is_empty() || t[0] <= 0.0 || t.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("t grid must be positive and increasing"));
    }
    let w: Vec<(f64, f64)> =
        rho.x.iter().zip(&rho.rho).filter(|(_, r)| **r > 0.0).map(|(x, r)| (*x, r * rho.delta)).collect();
    if w.is_empty() {
        return Err(Error::invalid("density vanishes"));
    }
    // pair weights grouped by squared separation
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(w.len() * w.len());
    for &(xi, wi) in &w {
        for &(xj, wj) in &w {
            pairs.push(((xi - xj).powi(2), wi * wj));
        }
    }
    let m2 = mass * mass;
    let rows: Vec<(f64, f64, f64, f64)> = t
        .par_iter()
        .map(|&t| {
            // u² = 0 pairs exist, so the largest exponent is 0
            let (mut z, mut s1, mut s2) = (0.0, 0.0, 0.0);
            for &(u2, pw) in &pairs {
                let e = pw * (-t * u2).exp();
                z += e;
                s1 += e * u2;
                s2 += e * u2 * u2;
            }
            let mean = s1 / z;
            let var = (s2 / z - mean * mean).max(0.0);
            let k = z * (-t * m2).exp();
            (k, 2.0 * t * (mean + m2), 2.0 * t * t * var, z.ln() - t * m2)
        })
        .collect();
    let underflow = t.iter().zip(&rows).find(|(_, r)| r.0 == 0.0).map(|(t, _)| *t);
    Ok(SpectralCurves {
        t: t.to_vec(),
        k: rows.iter().map(|r| r.0).collect(),
        ds: rows.iter().map(|r| r.1).collect(),
        vs: rows.iter().map(|r| r.2).collect(),
        underflow,
    })
}

/// One phase-sweep point.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePoint {
    pub g2: f64,
    pub g4: f64,
    pub mass: f64,
    pub cuts: usize,
    pub m2: f64,
    pub energy: f64,
}

pub const DENSITY_HEADER: &str = "x,rho";
pub const CURVES_HEADER: &str = "t,K,ds,vs";
pub const PHASE_HEADER: &str = "g2,g4,m,cuts,m2,energy";

/// Support threshold used to count cuts.
pub const CUT_THRESHOLD: f64 = 1e-3;

/// Solves each `(g2, g4, m)` in parallel on a common template.
pub fn phase_sweep(template: &EnergySpec, points: &[(f64, f64, f64)], opts: &SolverOptions) -> Result<Vec<PhasePoint>> {
    points
        .par_iter()
        .map(|&(g2, g4, mass)| {
            let spec = EnergySpec { g2, g4, mass, ..template.clone() };
            let eq = minimize_density(&spec, None, opts)?;
            Ok(PhasePoint {
                g2,
                g4,
                mass,
                cuts: support_structure(&eq.density, CUT_THRESHOLD)?.len(),
                m2: moments_from_density(&eq.density, 2),
                energy: eq.energy,
            })
        })
        .collect()
}

pub fn phase_rows(points: &[PhasePoint]) -> Vec<String> {
    points
        .iter()
        .map(|p| {
            format!("{},{},{},{},{},{}", fmt_g(p.g2), fmt_g(p.g4), fmt_g(p.mass), p.cuts, fmt_g(p.m2), fmt_g(p.energy))
        })
        .collect()
}

pub fn export_density(path: &Path, rho: &GridDensity) -> Result<()> {
    write_csv(path, DENSITY_HEADER, &rho.csv_rows())
}

pub fn export_curves(path: &Path, curves: &SpectralCurves) -> Result<()> {
    write_csv(path, CURVES_HEADER, &curves.csv_rows())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn semicircle(n: usize) -> Equilibrium {
        minimize_density(&EnergySpec::gaussian_validation(n), None, &SolverOptions::default()).unwrap()
    }

    #[test]
    fn projection() {
        let p = project_simplex(&[0.5, 0.5, 0.5]);
        for x in &p {
            assert_relative_eq!(*x, 1.0 / 3.0, epsilon = 1e-15);
        }
        assert_eq!(project_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
    }

    #[test]
    fn self_cell_average() {
        let d = 0.1;
        assert_relative_eq!(cell_average_log(0.0, d), 2.0 * (d.ln() - 1.5), epsilon = 1e-9);
        assert_relative_eq!(cell_average_log(5.0, d), (25.0f64).ln(), epsilon = 1e-3);
        assert_relative_eq!(cell_pair_log(0, d), d.ln() - 1.5, epsilon = 1e-14);
        for k in [1usize, 3, 49, 50, 200] {
            let u = k as f64 * d;
            let tri = |s: f64| (d - s.abs()) / (d * d) * (u + s).abs().ln();
            let direct = quadrature::double_exponential::integrate(tri, -d, 0.0, 1e-14).integral
                + quadrature::double_exponential::integrate(tri, 0.0, d, 1e-14).integral;
            assert_relative_eq!(cell_pair_log(k, d), direct, epsilon = 1e-11);
        }
    }

    #[test]
    fn semicircle_validation() {
        let eq = semicircle(256);
        let rho = &eq.density;
        assert_relative_eq!(rho.mass(), 1.0, epsilon = 1e-12);
        assert!((moments_from_density(rho, 2) - 1.0).abs() < 1e-2, "{}", moments_from_density(rho, 2));
        assert!(moments_from_density(rho, 1).abs() < 1e-10);
        assert!(moments_from_density(rho, 3).abs() < 1e-10);
        assert_relative_eq!(moments_from_density(rho, 0), 1.0, epsilon = 1e-12);
        let cuts = support_structure(rho, 1e-3).unwrap();
        assert_eq!(cuts.len(), 1);
        assert!((cuts[0].0 + 2.0).abs() < 0.1 && (cuts[0].1 - 2.0).abs() < 0.1, "{cuts:?}");
        // the density matches √(4−x²)/2π away from the edges
        for (x, r) in rho.x.iter().zip(&rho.rho) {
            if x.abs() < 1.5 {
                assert!((r - (4.0 - x * x).sqrt() / (2.0 * std::f64::consts::PI)).abs() < 2e-2, "{x} {r}");
            }
        }
    }

    #[test]
    fn energy_is_monotone() {
        let eq = semicircle(128);
        for w in eq.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-15 * w[0].abs(), "{w:?}");
        }
    }

    #[test]
    fn pv_residual_small_at_stationarity() {
        let eq = semicircle(256);
        let r = residual_pv(&eq.spec, &eq.density).unwrap();
        assert!(r.relative() < 1e-3 && !r.degenerate, "{r:?}");
        let flat = GridDensity::uniform(&EnergySpec::fermionic(-1.0, 1.0, 1.0, 0.0, 2.0, 128));
        let spec = EnergySpec::fermionic(-1.0, 1.0, 1.0, 0.0, 2.0, 128);
        let r = residual_pv(&spec, &flat).unwrap();
        assert!(r.residual > 1e-1, "{r:?}");
    }

    #[test]
    fn point_mass_residual_is_finite() {
        let spec = EnergySpec::gaussian_validation(64);
        let delta = GridDensity::point_mass(&spec, 0.3);
        let projected = GridDensity::from_weights(&spec, &project_simplex(&delta.weights()));
        let r = residual_pv(&spec, &projected).unwrap();
        assert!(r.residual.is_finite() && r.residual > 0.0);
        assert!(r.degenerate);
    }

    #[test]
    fn support_merging() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let mk = |rho: Vec<f64>| GridDensity { x: x.clone(), rho, delta: 1.0 };
        let one_gap = mk(vec![0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(support_structure(&one_gap, 0.5).unwrap(), vec![(0.5, 5.5), (7.5, 8.5)]);
        assert!(support_structure(&mk(vec![0.0; 10]), 0.5).is_err());
        let bump = mk((0..10).map(|i| (-((i as f64 - 4.5) / 2.0).powi(2)).exp()).collect());
        let top = support_structure(&bump, 0.99).unwrap();
        assert_eq!(top.len(), 1);
        assert!(top[0].1 - top[0].0 <= 2.0);
    }

    #[test]
    fn spectral_delta() {
        let spec = EnergySpec::gaussian_validation(64);
        let rho = GridDensity::point_mass(&spec, 0.0);
        let c = spectral_estimators(&rho, 1.0, &[0.5, 1.0, 2.0]).unwrap();
        for (t, ds) in c.t.iter().zip(&c.ds) {
            assert_relative_eq!(*ds, 2.0 * t, epsilon = 1e-12);
        }
        assert!(c.vs.iter().all(|&v| v.abs() < 1e-12));
        assert!(spectral_estimators(&rho, 1.0, &[1.0, 0.5]).is_err());
    }

    #[test]
    fn spectral_massless_semicircle() {
        let eq = semicircle(512);
        let ts: Vec<f64> = (0..=30).map(|i| 10f64.powf(-2.0 + 5.0 * i as f64 / 30.0)).collect();
        let c = spectral_estimators(&eq.density, 0.0, &ts).unwrap();
        let last = *c.ds.last().unwrap();
        assert!((last - 1.0).abs() < 0.05, "d_s(1e3) = {last}");
        assert!(c.vs.iter().all(|&v| v >= -1e-8));
        assert!(c.k.windows(2).all(|w| w[1] < w[0]));
        assert_relative_eq!(c.k[0], 1.0, epsilon = 0.1);
    }

    #[test]
    fn symmetric_spec_gives_symmetric_density() {
        let spec = EnergySpec::fermionic(-1.0, 1.0, 1.0, 1.0, 2.0, 128);
        let eq = minimize_density(&spec, None, &SolverOptions::default()).unwrap();
        assert!(moments_from_density(&eq.density, 1).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = EnergySpec::gaussian_validation(32);
        assert!(s.validate().is_err());
        s.n = 64;
        s.half_width = 0.0;
        assert!(s.validate().is_err());
        let json = r#"{"g2": 1.0, "n": 64, "half_width": 2.0, "bogus": 1}"#;
        assert!(serde_json::from_str::<EnergySpec>(json).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn kernel_is_symmetric(g2 in -4.0f64..4.0, g4 in 0.0f64..2.0, m in 0.0f64..3.0, a in 0.0f64..2.0) {
            let spec = EnergySpec::fermionic(g2, g4, m, a, 2.0, 64);
            let k = spec.kernel_matrix();
            prop_assert_eq!(k.clone(), k.transpose());
        }

        #[test]
        fn projection_lands_on_simplex(v in proptest::collection::vec(-3.0f64..3.0, 1..40)) {
            let p = project_simplex(&v);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn spectral_variance_nonnegative(ws in proptest::collection::vec(0.0f64..1.0, 8), m in 0.0f64..2.0, t in 0.01f64..100.0) {
            let x: Vec<f64> = (0..8).map(|i| i as f64 * 0.3 - 1.0).collect();
            let total: f64 = ws.iter().sum::<f64>() + 1e-9;
            let rho = GridDensity { x, rho: ws.iter().map(|w| (w + 1e-9 / 8.0) / total / 0.3).collect(), delta: 0.3 };
            let c = spectral_estimators(&rho, m, &[t]).unwrap();
            prop_assert!(c.vs[0] >= -1e-8);
        }
    }
}
