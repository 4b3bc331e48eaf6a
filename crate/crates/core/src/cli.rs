//! Command-line front end: JSON configuration, subcommands and CSV output.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::coeff::{parse_rational, q_from_f64, Coeff, Q};
use crate::dirac::{expand_dirac_power, EnsembleSpec, FermionicBlock, GammaBasis, Signature};
use crate::equilibrium::{
    export_curves, export_density, minimize_density, moments_from_density, phase_rows, phase_sweep, residual_pv,
    spectral_estimators, support_structure, EnergySpec, GridDensity, SolverOptions, CUT_THRESHOLD, PHASE_HEADER,
};
use crate::error::{Error, Result};
use crate::loops::{build_closure, evaluate_moments, generate_sde, moment_name, LoopModel};
use crate::mc::{estimate_moments, export_estimates, pool_estimates, run_chains, ChainConfig, McModel, MC_HEADER};
use crate::output::{fmt_g, write_csv, write_rows};
use crate::positivity::{build_moment_matrix, exact_leading_minors, hankel_exact, psd_check};
use crate::scan::{
    export_intervals, export_region, interval_for_spec, parse_moment, region_scan, Axis, RegionConfig, ScanOptions,
    INTERVAL_HEADER,
};
use crate::words::{Alphabet, Letter, Word};

#[derive(Debug, Parser)]
#[command(name = "fuzzy-bootstrap", version, about = "Bootstrap bounds for random Dirac ensembles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Model JSON (signature, couplings, parameters, symmetry flag, fermionic block).
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Run configuration JSON.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Positivity level Λ (words of length ≤ Λ).
    #[arg(long, global = true)]
    pub lambda: Option<usize>,
    /// PSD tolerance.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for CSV files.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (RAYON_NUM_THREADS also works).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the multitrace expansion of Tr D^k.
    Expand {
        /// Signature as `p,q`.
        #[arg(long)]
        sig: String,
        #[arg(long)]
        k: usize,
    },
    /// Print loop equations.
    Sde {
        /// Word `H^l` (first letter to the l) with respect to the first letter.
        #[arg(long)]
        l: Option<usize>,
        /// Explicit word, e.g. `AAB`.
        #[arg(long)]
        word: Option<String>,
        /// Letter to vary, e.g. `B`.
        #[arg(long)]
        letter: Option<String>,
    },
    /// Print search variables and recipes of the loop-equation closure.
    Closure,
    /// Feasible interval of one moment.
    Interval {
        #[arg(long)]
        var: String,
        /// Search bracket `lo hi`.
        #[arg(long, num_args = 2, allow_negative_numbers = true)]
        bracket: Option<Vec<f64>>,
    },
    /// Feasibility mask over a coupling/moment grid.
    Region,
    /// Metropolis moment estimates.
    Mc,
    /// Equilibrium density (and optional phase sweep).
    Eqm,
    /// Heat-kernel curves of a density.
    Spectral {
        /// `x,rho` CSV; solved from the configuration when absent.
        #[arg(long)]
        density: Option<PathBuf>,
        #[arg(long)]
        mass: Option<f64>,
    },
    /// Run the invariant suite.
    Check,
}

/// Number given either as JSON number or as an exact string like `"1/4"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Number {
    Float(f64),
    Text(String),
}

impl Number {
    fn to_q(&self) -> Result<Q> {
        match self {
            Number::Float(x) => q_from_f64(*x),
            Number::Text(s) => parse_rational(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// `"p,q"`.
    pub signature: String,
    /// Power `k` to coupling `t_k`, affine in the parameters (`"g/6"`, `"t2"`).
    pub couplings: BTreeMap<String, String>,
    #[serde(default)]
    pub parameters: BTreeMap<String, Number>,
    /// Impose the natural symmetries of the signature.
    #[serde(default = "yes")]
    pub symmetric: bool,
    #[serde(default)]
    pub fermionic: Option<FermionicBlock>,
}

fn yes() -> bool {
    true
}

impl ModelConfig {
    /// Build the ensemble; `pointer` prefixes error locations.
    pub fn to_spec(&self, pointer: &str) -> Result<EnsembleSpec> {
        let at = |field: &str, e: Error| Error::invalid(format!("{pointer}/{field}: {e}"));
        let sig: Signature = self.signature.parse().map_err(|e| at("signature", e))?;
        let mut spec = EnsembleSpec::new(sig).map_err(|e| at("signature", e))?;
        for (k, c) in &self.couplings {
            let key = format!("couplings/{k}");
            let power: u32 = k
                .parse()
                .map_err(|_| at(&key, Error::invalid(format!("`{k}` is not a power of D"))))?;
            spec = spec.with_coupling(power, Coeff::parse(c).map_err(|e| at(&key, e))?);
        }
        for (name, v) in &self.parameters {
            spec = spec.with_parameter(name, v.to_q().map_err(|e| at(&format!("parameters/{name}"), e))?);
        }
        if self.symmetric {
            spec = spec.with_symmetries(sig.natural_symmetries());
        }
        spec.fermionic = self.fermionic.clone();
        spec.validate().map_err(|e| at("couplings", e))?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    #[serde(default)]
    pub lambda: Option<usize>,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub grid: Option<usize>,
    #[serde(default)]
    pub depth: Option<u32>,
    #[serde(default)]
    pub symmetric: Option<bool>,
    #[serde(default)]
    pub variable: Option<String>,
    #[serde(default)]
    pub bracket: Option<(f64, f64)>,
    /// Repeat the interval over a coupling axis.
    #[serde(default)]
    pub sweep: Option<AxisConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisConfig {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    #[serde(default = "one")]
    pub steps: usize,
}

fn one() -> usize {
    1
}

impl AxisConfig {
    fn axis(&self) -> Result<Axis> {
        Axis::new(&self.name, self.lo, self.hi, self.steps)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionCfg {
    pub c1: AxisConfig,
    #[serde(default)]
    pub c2: Option<AxisConfig>,
    pub v1: AxisConfig,
    #[serde(default)]
    pub v2: Option<AxisConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub n: usize,
    pub steps: usize,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default = "one")]
    pub thinning: usize,
    #[serde(default)]
    pub step_size: Option<f64>,
    #[serde(default = "one")]
    pub chains: usize,
    #[serde(default = "default_words")]
    pub words: Vec<String>,
}

fn default_words() -> Vec<String> {
    vec!["m2".into()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for TGrid {
    fn default() -> Self {
        TGrid { lo: 1e-2, hi: 1e3, points: 51 }
    }
}

impl TGrid {
    fn values(&self) -> Result<Vec<f64>> {
        if !(self.lo > 0.0 && self.hi > self.lo && self.points >= 2) {
            return Err(Error::invalid("/equilibrium/t: need 0 < lo < hi and points >= 2"));
        }
        let (a, b) = (self.lo.ln(), self.hi.ln());
        Ok((0..self.points).map(|i| (a + (b - a) * i as f64 / (self.points - 1) as f64).exp()).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EqConfig {
    pub energy: EnergySpec,
    #[serde(default)]
    pub t: TGrid,
    /// `(g2, g4, m)` points for a phase sweep.
    #[serde(default)]
    pub sweep: Vec<(f64, f64, f64)>,
    #[serde(default)]
    pub restarts: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub scan: Option<ScanConfig>,
    #[serde(default)]
    pub region: Option<RegionCfg>,
    #[serde(default)]
    pub mc: Option<McConfig>,
    #[serde(default)]
    pub equilibrium: Option<EqConfig>,
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(key),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

/// Parse JSON into `T`, reporting failures with the JSON pointer.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str, source: &Path) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        Error::invalid(format!("{}: at {}: {}", source.display(), pointer_of(e.path()), e.inner()))
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("{}: cannot read: {e}", path.display())))?;
    parse_json(&text, path)
}

/// Everything a subcommand needs after flags and files are merged.
struct Context {
    cli_model: Option<(PathBuf, ModelConfig)>,
    config: RunConfig,
    config_path: Option<PathBuf>,
    lambda: Option<usize>,
    tol: Option<f64>,
    seed: u64,
    out: Option<PathBuf>,
}

impl Context {
    fn spec(&self) -> Result<EnsembleSpec> {
        if let Some((path, m)) = &self.cli_model {
            return m.to_spec("").map_err(|e| Error::invalid(format!("{}: {e}", path.display())));
        }
        match (&self.config.model, &self.config_path) {
            (Some(m), Some(p)) => m.to_spec("/model").map_err(|e| Error::invalid(format!("{}: {e}", p.display()))),
            _ => Err(Error::invalid("no model: pass --model or a config with a `model` block")),
        }
    }

    fn scan(&self) -> ScanConfig {
        self.config.scan.clone().unwrap_or_default()
    }

    fn lambda(&self) -> Result<usize> {
        self.lambda
            .or(self.scan().lambda)
            .ok_or_else(|| Error::invalid("no level: pass --lambda or set /scan/lambda"))
    }

    fn scan_options(&self) -> ScanOptions {
        let s = self.scan();
        let d = ScanOptions::default();
        ScanOptions {
            impose_symmetry: s.symmetric.unwrap_or(d.impose_symmetry),
            tol: self.tol.or(s.tol).unwrap_or(d.tol),
            depth: s.depth.unwrap_or(d.depth),
            grid: s.grid.unwrap_or(d.grid),
            basis_size: None,
        }
    }

    fn out_dir(&self) -> PathBuf {
        self.out.clone().or_else(|| self.config.out.clone()).unwrap_or_else(|| PathBuf::from("out"))
    }

    fn out_file(&self, name: &str) -> PathBuf {
        self.out_dir().join(name)
    }
}

/// Parse arguments, run, and return the process exit code. Errors go to `err`.
pub fn run_from<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    if let Some(t) = cli.threads {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    if let Some(t) = cli.tol {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::invalid("--tol must be a nonnegative number"));
        }
    }
    let config: RunConfig = match &cli.config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    let cli_model = match &cli.model {
        Some(p) => Some((p.clone(), read_json::<ModelConfig>(p)?)),
        None => None,
    };
    let ctx = Context {
        cli_model,
        seed: cli.seed.or(config.seed).unwrap_or(0),
        config,
        config_path: cli.config.clone(),
        lambda: cli.lambda,
        tol: cli.tol,
        out: cli.out.clone(),
    };
    match &cli.command {
        Command::Expand { sig, k } => cmd_expand(sig, *k, out),
        Command::Sde { l, word, letter } => cmd_sde(&ctx, *l, word.as_deref(), letter.as_deref(), out),
        Command::Closure => cmd_closure(&ctx, out),
        Command::Interval { var, bracket } => cmd_interval(&ctx, var, bracket.as_deref(), out),
        Command::Region => cmd_region(&ctx, out),
        Command::Mc => cmd_mc(&ctx, out),
        Command::Eqm => cmd_eqm(&ctx, out),
        Command::Spectral { density, mass } => cmd_spectral(&ctx, density.as_deref(), *mass, out),
        Command::Check => cmd_check(out),
    }
}

fn cmd_expand(sig: &str, k: usize, out: &mut dyn Write) -> Result<()> {
    let sig: Signature = sig.parse()?;
    writeln!(out, "{}", expand_dirac_power(sig, k)?)?;
    Ok(())
}

fn cmd_sde(ctx: &Context, l: Option<usize>, word: Option<&str>, letter: Option<&str>, out: &mut dyn Write) -> Result<()> {
    let spec = ctx.spec()?;
    let model = LoopModel::from_spec(&spec)?;
    let alphabet = Alphabet::new(spec.alphabet_size());
    let letter = match letter {
        Some(s) => {
            let w = alphabet.parse(s)?;
            match w.letters() {
                [one] => *one,
                _ => return Err(Error::invalid(format!("--letter `{s}` must be a single letter"))),
            }
        }
        None => Letter(0),
    };
    let words: Vec<Word> = match (l, word) {
        (_, Some(w)) => vec![alphabet.parse(w)?],
        (Some(l), None) => vec![Word::power(Letter(0), l)],
        (None, None) => (0..=6).map(|l| Word::power(Letter(0), l)).collect(),
    };
    for w in words {
        let rel = generate_sde(&model, &w, letter, !spec.symmetries.is_empty())?;
        writeln!(out, "{rel}")?;
    }
    Ok(())
}

fn cmd_closure(ctx: &Context, out: &mut dyn Write) -> Result<()> {
    let spec = ctx.spec()?;
    let lambda = ctx.lambda()?;
    let opts = ctx.scan_options();
    let model = LoopModel::from_spec(&spec)?;
    let closure = build_closure(&model, &spec.parameters, 2 * lambda, opts.impose_symmetry)?;
    let a = closure.alphabet();
    let names = |ws: &[crate::words::CyclicWord]| ws.iter().map(|w| moment_name(w, a)).collect::<Vec<_>>().join(", ");
    writeln!(out, "search variables: {}", names(closure.search_variables()))?;
    if !closure.extra_variables().is_empty() {
        writeln!(out, "unconstrained beyond the closure: {}", names(closure.extra_variables()))?;
    }
    if !closure.forced_zero().is_empty() {
        let z: Vec<_> = closure.forced_zero().iter().cloned().collect();
        writeln!(out, "zero by symmetry: {}", names(&z))?;
    }
    for r in closure.recipes() {
        writeln!(out, "{}", r.render(a))?;
    }
    for c in closure.constraints() {
        writeln!(out, "{}", c.render(a))?;
    }
    Ok(())
}

fn default_bracket(word: &Word) -> (f64, f64) {
    if word.len().is_multiple_of(2) {
        (0.0, 4.0)
    } else {
        (-2.0, 2.0)
    }
}

fn cmd_interval(ctx: &Context, var: &str, bracket: Option<&[f64]>, out: &mut dyn Write) -> Result<()> {
    let spec = ctx.spec()?;
    let lambda = ctx.lambda()?;
    let opts = ctx.scan_options();
    let word = parse_moment(var, spec.alphabet_size())?;
    let bracket = match bracket {
        Some([a, b]) => (*a, *b),
        _ => ctx.scan().bracket.unwrap_or_else(|| default_bracket(&word)),
    };
    if !(bracket.0 < bracket.1) {
        return Err(Error::invalid("bracket needs lo < hi"));
    }
    let points: Vec<Vec<(String, f64)>> = match &ctx.scan().sweep {
        Some(axis) => axis.axis()?.values().into_iter().map(|v| vec![(axis.name.clone(), v)]).collect(),
        None => vec![spec
            .parameters
            .iter()
            .take(1)
            .map(|(k, v)| (k.clone(), crate::coeff::to_f64(v)))
            .collect()],
    };
    use rayon::prelude::*;
    let intervals: Vec<_> = points
        .par_iter()
        .map(|c| interval_for_spec(&spec, c, var, bracket, lambda, &opts))
        .collect::<Result<_>>()?;
    let rows: Vec<String> = intervals.iter().map(|i| i.csv_row()).collect();
    write_rows(out, INTERVAL_HEADER, &rows)?;
    if ctx.out.is_some() || ctx.config.out.is_some() {
        export_intervals(&intervals, &ctx.out_file("interval.csv"))?;
    }
    Ok(())
}

fn cmd_region(ctx: &Context, out: &mut dyn Write) -> Result<()> {
    let spec = ctx.spec()?;
    let cfg = ctx.config.region.as_ref().ok_or_else(|| Error::invalid("config has no /region block"))?;
    let region = RegionConfig {
        c1: cfg.c1.axis()?,
        c2: cfg.c2.as_ref().map(AxisConfig::axis).transpose()?,
        v1: cfg.v1.axis()?,
        v2: cfg.v2.as_ref().map(AxisConfig::axis).transpose()?,
        lambda: ctx.lambda()?,
        opts: ctx.scan_options(),
    };
    let mask = region_scan(&spec, &region)?;
    let path = ctx.out_file("region.csv");
    export_region(&mask, &path)?;
    writeln!(out, "{} of {} points feasible; wrote {}", mask.count_feasible(), mask.points.len(), path.display())?;
    Ok(())
}

fn cmd_mc(ctx: &Context, out: &mut dyn Write) -> Result<()> {
    let spec = ctx.spec()?;
    let mc = ctx.config.mc.clone().ok_or_else(|| Error::invalid("config has no /mc block"))?;
    let mut cfg = ChainConfig::new(mc.n, mc.steps, mc.burn_in, ctx.seed);
    cfg.thinning = mc.thinning;
    if let Some(s) = mc.step_size {
        cfg.step_size = s;
    }
    cfg.validate().map_err(|e| Error::invalid(format!("/mc: {e}")))?;
    let words: Vec<Word> =
        mc.words.iter().map(|w| parse_moment(w, spec.alphabet_size())).collect::<Result<_>>()?;
    let model = McModel::from_spec(&spec)?;
    let chains = run_chains(&model, &cfg, mc.chains.max(1))?;
    let per_chain: Vec<_> = chains.iter().map(|c| estimate_moments(c, &words)).collect::<Result<_>>()?;
    let pooled = pool_estimates(&per_chain)?;
    let alphabet = Alphabet::new(spec.alphabet_size());
    write_rows(out, MC_HEADER, &crate::mc::estimate_rows(&pooled, alphabet, &cfg))?;
    export_estimates(&ctx.out_file("mc.csv"), &pooled, alphabet, &cfg)?;
    Ok(())
}

fn eq_config(ctx: &Context) -> Result<EqConfig> {
    ctx.config.equilibrium.clone().ok_or_else(|| Error::invalid("config has no /equilibrium block"))
}

fn solver_options(eq: &EqConfig) -> SolverOptions {
    let mut o = SolverOptions::default();
    if let Some(r) = eq.restarts {
        o.restarts = r;
    }
    o
}

fn cmd_eqm(ctx: &Context, out: &mut dyn Write) -> Result<()> {
    let eq = eq_config(ctx)?;
    eq.energy.validate().map_err(|e| Error::invalid(format!("/equilibrium/energy: {e}")))?;
    let opts = solver_options(&eq);
    let sol = minimize_density(&eq.energy, None, &opts)?;
    let cuts = support_structure(&sol.density, CUT_THRESHOLD)?;
    let pv = residual_pv(&sol.spec, &sol.density)?;
    export_density(&ctx.out_file("density.csv"), &sol.density)?;
    let curves = spectral_estimators(&sol.density, eq.energy.mass, &eq.t.values()?)?;
    export_curves(&ctx.out_file("curves.csv"), &curves)?;
    writeln!(out, "energy {}", fmt_g(sol.energy))?;
    writeln!(out, "half_width {}", fmt_g(sol.spec.half_width))?;
    writeln!(out, "m2 {}", fmt_g(moments_from_density(&sol.density, 2)))?;
    let c: Vec<String> = cuts.iter().map(|(a, b)| format!("[{}, {}]", fmt_g(*a), fmt_g(*b))).collect();
    writeln!(out, "cuts {} {}", cuts.len(), c.join(" "))?;
    writeln!(out, "projected_gradient {}", fmt_g(sol.residual))?;
    writeln!(out, "pv_residual {} (relative {})", fmt_g(pv.residual), fmt_g(pv.relative()))?;
    if let Some(t) = curves.underflow {
        writeln!(out, "heat kernel underflows from t = {}", fmt_g(t))?;
    }
    if !eq.sweep.is_empty() {
        let pts = phase_sweep(&eq.energy, &eq.sweep, &opts)?;
        write_csv(&ctx.out_file("phase.csv"), PHASE_HEADER, &phase_rows(&pts))?;
        writeln!(out, "phase sweep: {} points", pts.len())?;
    }
    Ok(())
}

fn read_density(path: &Path) -> Result<GridDensity> {
    let text = std::fs::read_to_string(path)?;
    let mut x = Vec::new();
    let mut rho = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let bad = || Error::invalid(format!("{}:{}: expected `x,rho`", path.display(), i + 1));
        let (a, b) = line.split_once(',').ok_or_else(bad)?;
        x.push(a.trim().parse::<f64>().map_err(|_| bad())?);
        rho.push(b.trim().parse::<f64>().map_err(|_| bad())?);
    }
    if x.len() < 2 {
        return Err(Error::invalid(format!("{}: need at least two nodes", path.display())));
    }
    let delta = x[1] - x[0];
    if !(delta > 0.0) || x.windows(2).any(|w| ((w[1] - w[0]) - delta).abs() > 1e-6 * delta) {
        return Err(Error::invalid(format!("{}: nodes must be uniform and increasing", path.display())));
    }
    Ok(GridDensity { x, rho, delta })
}

fn cmd_spectral(ctx: &Context, density: Option<&Path>, mass: Option<f64>, out: &mut dyn Write) -> Result<()> {
    let eq = ctx.config.equilibrium.clone();
    let t = eq.as_ref().map(|e| e.t.clone()).unwrap_or_default();
    let (rho, default_mass) = match density {
        Some(p) => (read_density(p)?, 0.0),
        None => {
            let eq = eq_config(ctx)?;
            (minimize_density(&eq.energy, None, &solver_options(&eq))?.density, eq.energy.mass)
        }
    };
    let curves = spectral_estimators(&rho, mass.unwrap_or(default_mass), &t.values()?)?;
    write_rows(out, crate::equilibrium::CURVES_HEADER, &curves.csv_rows())?;
    if ctx.out.is_some() || ctx.config.out.is_some() {
        export_curves(&ctx.out_file("curves.csv"), &curves)?;
    }
    Ok(())
}

fn cmd_check(out: &mut dyn Write) -> Result<()> {
    let mut failures = 0;
    let mut report = |name: &str, r: Result<bool>| -> Result<()> {
        match r {
            Ok(true) => writeln!(out, "PASS {name}")?,
            Ok(false) => {
                failures += 1;
                writeln!(out, "FAIL {name}")?;
            }
            Err(e) => {
                failures += 1;
                writeln!(out, "FAIL {name}: {e}")?;
            }
        }
        Ok(())
    };

    report("clifford relations", (|| {
        for s in [Signature::TYPE_10, Signature::TYPE_01, Signature::TYPE_20, Signature::TYPE_11, Signature::TYPE_02] {
            GammaBasis::new(s)?.verify()?;
        }
        Ok(true)
    })())?;

    report("gaussian hankel minors", (|| {
        let m: Vec<Q> = [1, 0, 1, 0, 3, 0, 15].iter().map(|&k| Q::from_integer(k.into())).collect();
        let minors = exact_leading_minors(&hankel_exact(&m)?);
        Ok(minors == [1, 1, 2, 12].iter().map(|&k| Q::from_integer(k.into())).collect::<Vec<_>>())
    })())?;

    report("catalan closure", (|| {
        let spec = EnsembleSpec::cubic(Q::from_integer(0.into()));
        let model = LoopModel::from_spec(&spec)?;
        let closure = build_closure(&model, &spec.parameters, 12, false)?;
        let t = evaluate_moments(&closure, &[(Word::power(Letter(0), 1), 0.0)])?;
        let ok = [(2, 1.0), (4, 2.0), (6, 5.0), (8, 14.0)].iter().all(|&(k, c)| t.m(k).is_ok_and(|v| v == c));
        let psd = psd_check(&build_moment_matrix(&t, 1, 6)?, crate::positivity::DEFAULT_TOL)?;
        Ok(ok && psd.feasible)
    })())?;

    report("semicircle equilibrium", (|| {
        let eq = minimize_density(&EnergySpec::gaussian_validation(256), None, &SolverOptions::default())?;
        let pv = residual_pv(&eq.spec, &eq.density)?;
        Ok((moments_from_density(&eq.density, 2) - 1.0).abs() < 1e-2 && pv.relative() < 1e-3)
    })())?;

    report("gaussian monte carlo", (|| {
        let model = McModel::from_polynomial(LoopModel::gaussian().action(), &BTreeMap::new())?;
        let cfg = ChainConfig::new(6, 1200, 200, 1);
        let chain = crate::mc::metropolis_sample(&model, &cfg, 0)?;
        let e = &estimate_moments(&chain, &[Word::power(Letter(0), 2)])?[0];
        Ok((e.mean - 1.0).abs() < 4.0 * e.stderr + 1e-3)
    })())?;

    if failures > 0 {
        return Err(Error::Numerical(format!("{failures} invariant check(s) failed")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let mut full = vec!["fuzzy-bootstrap"];
        full.extend_from_slice(args);
        let code = run_from(full, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn expand_type_20() {
        let (code, out, _) = run_args(&["expand", "--sig", "2,0", "--k", "2"]);
        assert_eq!(code, 0);
        assert_eq!(out.trim().matches(" + ").count() + 1, 4, "{out}");
    }

    #[test]
    fn unknown_key_names_pointer() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        std::fs::write(&p, r#"{"mc": {"n": 4, "steps": 10, "bogus": 1}}"#).unwrap();
        let (code, _, err) = run_args(&["mc", "--config", p.to_str().unwrap()]);
        assert_eq!(code, 2);
        assert!(err.contains("/mc") && err.contains("bogus"), "{err}");
    }

    #[test]
    fn bad_signature_is_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        std::fs::write(&p, r#"{"signature": "3,1", "couplings": {"2": "1"}}"#).unwrap();
        let (code, _, err) = run_args(&["closure", "--model", p.to_str().unwrap(), "--lambda", "2"]);
        assert_eq!(code, 2);
        assert!(err.contains("/signature"), "{err}");
    }

    #[test]
    fn help_for_every_subcommand() {
        for sub in ["expand", "sde", "closure", "interval", "region", "mc", "eqm", "spectral", "check"] {
            let (code, out, _) = run_args(&[sub, "--help"]);
            assert_eq!(code, 0, "{sub}");
            assert!(out.contains("Usage"), "{sub}");
        }
    }
}
