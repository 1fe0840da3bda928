//! Batch runs over the `cmc-tubes` library.
//!
//! A [`RunConfig`] fully describes a run. [`run`] turns it into an
//! [`Artifact`]: CSV (with a header row) for sweeps, JSON for single results.
//! JSON artifacts embed the config that produced them, so any result can be
//! replayed with `cmc-tubes --config result.json`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use cmc_tubes::fit::loglog_slope;
use cmc_tubes::jacobi::{estimate_inverse_norm, solve_geodesic_jacobi, solve_l0, solve_tilde, NormKind, ResonanceInfo};
use cmc_tubes::measure::{
    first_variation, frame_split, limit_measures, tube_quadrature, Euclidean, GammaSpec, QuadratureRes, TestVectorField,
};
use cmc_tubes::modes::{decompose, NormalSection};
use cmc_tubes::solver::{fixed_point_solve, gap_intervals, SolverConfig};
use cmc_tubes::spectral::{Periodic1, Periodic2};
use cmc_tubes::spectrum::{
    assemble_jacobi, compare_to_formula, degenerate_radii, flat_torus_spectrum, flat_torus_symbol, geodesic_index, AssemblyConfig, IndexComparison,
    SpectrumReport,
};
use cmc_tubes::tube::{geodesic_jacobi_apply, mean_curvature_oracle, TubeConfiguration};
use cmc_tubes::{ExactModel, FermiPoint, ModelMetric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Environment variable holding the worker count. Nothing else is read from
/// the environment.
pub const WORKERS_ENV: &str = "CMC_TUBES_WORKERS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    ConfigParse(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Model(#[from] cmc_tubes::Error),
    #[error("{failed} invariant check(s) failed")]
    CheckFailed { failed: usize },
}

impl CliError {
    /// Name printed on stderr.
    pub fn name(&self) -> &'static str {
        match self {
            CliError::ConfigParse(_) => "ConfigParse",
            CliError::Io(_) => "Io",
            CliError::Model(e) => e.name(),
            CliError::CheckFailed { .. } => "CheckFailed",
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Gaps,
    Solve,
    Sweep,
    Index,
    Bifurcation,
    Limits,
    Check,
}

impl Command {
    pub fn format(self) -> Format {
        match self {
            Command::Solve => Format::Json,
            Command::Index => Format::Json,
            _ => Format::Csv,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Everything a run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    /// Builtin model name or path to a model file.
    pub model: String,
    /// Dimension and geodesic length for `gaps`; the other commands read
    /// them from the model.
    pub n: usize,
    pub lambda: f64,
    pub k_min: usize,
    pub k_max: usize,
    pub rho: Option<f64>,
    pub rho_min: f64,
    pub rho_max: f64,
    pub samples: usize,
    pub tol: f64,
    pub delta_res: f64,
    pub delta_j: f64,
    pub delta_null: f64,
    pub c1: f64,
    pub c0: f64,
    pub ns: usize,
    pub nt: usize,
    /// Quadrature nodes along Γ.
    pub m_gamma: usize,
    pub seed: u64,
    pub trials: usize,
    pub output: Option<PathBuf>,
    pub format: Format,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        let s = SolverConfig::default();
        RunConfig {
            command,
            model: "curved_toy".into(),
            n: 2,
            lambda: 2.0 * PI,
            k_min: 3,
            k_max: 8,
            rho: None,
            rho_min: 0.05,
            rho_max: 0.2,
            samples: 1,
            tol: s.tol,
            delta_res: s.delta_res,
            delta_j: s.delta_j,
            delta_null: 1e-7,
            c1: 0.0,
            c0: s.c0,
            ns: s.ns,
            nt: s.nt,
            m_gamma: 64,
            seed: 1,
            trials: 16,
            output: None,
            format: command.format(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::ConfigParse(m));
        for (name, v) in [("tol", self.tol), ("delta_res", self.delta_res), ("delta_j", self.delta_j), ("delta_null", self.delta_null), ("c0", self.c0)] {
            if !(v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.c1 >= 0.0) {
            return bad(format!("c1 must be nonnegative, got {}", self.c1));
        }
        for (name, v) in [("ns", self.ns), ("nt", self.nt), ("m_gamma", self.m_gamma)] {
            if v < 16 || !v.is_power_of_two() {
                return bad(format!("{name} must be a power of two >= 16, got {v}"));
            }
        }
        if self.k_min < 2 || self.k_min > self.k_max {
            return bad(format!("k range {}..={} is empty or starts below 2", self.k_min, self.k_max));
        }
        if !(self.rho_min > 0.0 && self.rho_min < self.rho_max) || self.samples == 0 {
            return bad(format!("rho range ({}, {}) with {} samples is empty", self.rho_min, self.rho_max, self.samples));
        }
        if let Some(r) = self.rho {
            if !(r > 0.0) {
                return bad(format!("rho must be positive, got {r}"));
            }
        }
        if self.n < 2 || !(self.lambda > 0.0) {
            return bad("n must be at least 2 and Lambda positive".into());
        }
        if self.format != self.command.format() {
            return bad(format!("{:?} writes {:?}", self.command, self.command.format()));
        }
        Ok(())
    }

    /// Reads a config file: either a bare `RunConfig` or a JSON artifact
    /// with a `config` field.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        #[derive(Deserialize)]
        struct Wrapped {
            config: RunConfig,
        }
        serde_json::from_str::<RunConfig>(&text)
            .or_else(|_| serde_json::from_str::<Wrapped>(&text).map(|w| w.config))
            .map_err(|e| CliError::ConfigParse(format!("{}: {e}", path.display())))
    }

    fn solver(&self) -> SolverConfig {
        SolverConfig { ns: self.ns, nt: self.nt, tol: self.tol, max_iter: 50, delta_res: self.delta_res, delta_j: self.delta_j, c0: self.c0 }
    }

    fn assembly(&self, rho: f64, lambda: f64) -> AssemblyConfig {
        AssemblyConfig { delta_null: self.delta_null, ..AssemblyConfig::for_rho(rho, lambda) }
    }
}

/// Resolves a model name: an existing file is parsed, otherwise a builtin is looked up.
pub fn load_model(spec: &str) -> Result<ModelMetric> {
    let p = Path::new(spec);
    if p.is_file() {
        let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{spec}: {e}")))?;
        return Ok(ModelMetric::parse(&text)?);
    }
    ModelMetric::builtin(spec).ok_or_else(|| CliError::ConfigParse(format!("unknown model {spec:?} (not a file, not a builtin)")))
}

/// Output of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub format: Format,
    pub body: String,
}

/// Sets the global worker pool from [`WORKERS_ENV`], if present.
pub fn init_workers() -> Result<()> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v.parse().map_err(|_| CliError::ConfigParse(format!("{WORKERS_ENV} must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(CliError::ConfigParse(format!("{WORKERS_ENV} must be positive")));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cfg: &RunConfig) -> Result<Artifact> {
    cfg.validate()?;
    let body = match cfg.command {
        Command::Gaps => gaps(cfg)?,
        Command::Solve => solve(cfg)?,
        Command::Sweep => sweep(cfg)?,
        Command::Index => index(cfg)?,
        Command::Bifurcation => bifurcation(cfg)?,
        Command::Limits => limits(cfg)?,
        Command::Check => return check(cfg),
    };
    Ok(Artifact { format: cfg.format, body })
}

/// Writes the artifact to `cfg.output`, or returns it for stdout.
pub fn emit(cfg: &RunConfig, art: &Artifact) -> Result<Option<String>> {
    match &cfg.output {
        Some(p) => {
            std::fs::write(p, &art.body).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            Ok(None)
        }
        None => Ok(Some(art.body.clone())),
    }
}

fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Io(e.to_string()))
}

fn json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn gaps(cfg: &RunConfig) -> Result<String> {
    let ivs = gap_intervals(cfg.n, cfg.lambda, cfg.k_min, cfg.k_max, cfg.c1)?;
    csv_table(
        &["k", "rho_lo", "rho_hi", "midpoint"],
        ivs.iter().map(|iv| vec![iv.k.to_string(), iv.rho_lo.to_string(), iv.rho_hi.to_string(), iv.midpoint().to_string()]),
    )
}

#[derive(Serialize)]
struct SolveSummary {
    rho: f64,
    converged: bool,
    iterations: usize,
    residual_sup: f64,
    /// Recomputed by the mean-curvature oracle on a doubled grid.
    oracle_residual_sup: f64,
    contraction_factor: f64,
    e_norm: f64,
    w_sup: f64,
    phi_sup: f64,
    l0_inverse_estimate: f64,
    resonance: ResonanceInfo,
    history: Vec<f64>,
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    config: &'a RunConfig,
    result: SolveSummary,
}

fn solve(cfg: &RunConfig) -> Result<String> {
    let model = load_model(&cfg.model)?;
    let rho = cfg.rho.ok_or_else(|| CliError::ConfigParse("solve needs --rho".into()))?;
    let s = fixed_point_solve(&model, rho, &cfg.solver())?;
    let h = mean_curvature_oracle(&model, &s.tube, 4 * cfg.ns, 4 * cfg.nt)?;
    let n = model.n() as f64;
    let oracle = h.iter().map(|v| (n * rho * v - (n - 1.0)).abs()).fold(0.0, f64::max);
    let est = estimate_inverse_norm(rho, model.n(), model.lambda_len(), NormKind::L0Sup, cfg.seed, cfg.trials)?;
    let result = SolveSummary {
        rho,
        converged: s.converged,
        iterations: s.iterations,
        residual_sup: s.residual_sup,
        oracle_residual_sup: oracle,
        contraction_factor: s.contraction_factor,
        e_norm: s.e_norm,
        w_sup: s.tube.w.sup_norm(),
        phi_sup: s.tube.phi.sup_norm(),
        l0_inverse_estimate: est,
        resonance: s.resonance,
        history: s.history,
    };
    json(&SolveOutput { config: cfg, result })
}

/// Radii inside each window: `samples` evenly spaced interior points.
fn window_radii(cfg: &RunConfig, model: &ModelMetric) -> Result<Vec<(usize, f64)>> {
    let ivs = gap_intervals(model.n(), model.lambda_len(), cfg.k_min, cfg.k_max, cfg.c1)?;
    Ok(ivs
        .iter()
        .flat_map(|iv| (0..cfg.samples).map(move |i| (iv.k, iv.rho_lo + (iv.rho_hi - iv.rho_lo) * (i as f64 + 0.5) / cfg.samples as f64)))
        .collect())
}

fn sweep(cfg: &RunConfig) -> Result<String> {
    let model = load_model(&cfg.model)?;
    let solver = cfg.solver();
    let rows: Vec<Result<Vec<String>>> = window_radii(cfg, &model)?
        .par_iter()
        .map(|&(k, rho)| {
            let s = fixed_point_solve(&model, rho, &solver)?;
            Ok(vec![
                k.to_string(),
                rho.to_string(),
                s.converged.to_string(),
                s.iterations.to_string(),
                s.residual_sup.to_string(),
                s.contraction_factor.to_string(),
                (s.tube.w.sup_norm() + s.tube.phi.sup_norm()).to_string(),
                s.e_norm.to_string(),
            ])
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    csv_table(&["k", "rho", "converged", "iterations", "residual_sup", "contraction_factor", "w_phi_sup", "e_norm"], rows)
}

#[derive(Serialize)]
struct IndexOutput<'a> {
    config: &'a RunConfig,
    spectrum: SpectrumReport,
    comparison: Option<IndexComparison>,
}

fn window_of(rho: f64, model: &ModelMetric) -> usize {
    let scale = ((model.n() - 1) as f64).sqrt() * model.lambda_len() / (2.0 * PI);
    (scale / rho).floor() as usize
}

fn index(cfg: &RunConfig) -> Result<String> {
    let model = load_model(&cfg.model)?;
    let lambda = model.lambda_len();
    let rho = match cfg.rho {
        Some(r) => r,
        None => gap_intervals(model.n(), lambda, cfg.k_min, cfg.k_min, cfg.c1)?
            .first()
            .map(|iv| iv.midpoint())
            .ok_or_else(|| CliError::ConfigParse(format!("window I_{} is closed for c1 = {}", cfg.k_min, cfg.c1)))?,
    };
    let leaf = fixed_point_solve(&model, rho, &cfg.solver())?;
    let spectrum = assemble_jacobi(&model, &leaf, &cfg.assembly(rho, lambda))?.spectrum()?;
    let comparison = compare_to_formula(&model, window_of(rho, &model), &spectrum).ok();
    json(&IndexOutput { config: cfg, spectrum, comparison })
}

fn bifurcation(cfg: &RunConfig) -> Result<String> {
    let model = load_model(&cfg.model)?;
    let n = model.n();
    let assemble = n == 2 && model.exact_model() == ExactModel::FlatTorus;
    let radii = degenerate_radii(n, cfg.k_max);
    let rows: Vec<Result<Vec<String>>> = radii
        .par_iter()
        .enumerate()
        .map(|(i, &r)| {
            let k = i + 1;
            let (nullity, zero) = if assemble {
                let s = flat_torus_spectrum(r, model.lambda_len(), &cfg.assembly(r, model.lambda_len()))?;
                let z = s.eigenvalues.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
                (s.nullity.to_string(), z.to_string())
            } else {
                (String::new(), String::new())
            };
            Ok(vec![k.to_string(), r.to_string(), flat_torus_symbol(k, 0, r, n).to_string(), nullity, zero])
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    csv_table(&["k", "rho_k", "symbol", "nullity", "min_abs_eigenvalue"], rows)
}

fn limits(cfg: &RunConfig) -> Result<String> {
    let model = load_model(&cfg.model)?;
    let gamma = GammaSpec::axis_of(&model);
    let res = QuadratureRes { nu: cfg.m_gamma, ..QuadratureRes::default() };
    let one = |_: &[f64]| 1.0;
    let lim = limit_measures(&model, &gamma, &one, cfg.m_gamma);
    let rhos: Vec<f64> = if cfg.samples == 1 {
        vec![cfg.rho_max]
    } else {
        let ratio = (cfg.rho_min / cfg.rho_max).powf(1.0 / (cfg.samples - 1) as f64);
        (0..cfg.samples).map(|i| cfg.rho_max * ratio.powi(i as i32)).collect()
    };
    let field = TestVectorField::plane_wave(vec![0.3; model.n() + 1], vec![1.0; model.n() + 1], 0.4);
    let rows = rhos
        .iter()
        .map(|&rho| {
            let q = tube_quadrature(&model, &gamma, rho, &res)?;
            let t = q.measures(&one);
            let fv = first_variation(&model, &q, &field) * rho.powi(1 - model.n() as i32);
            Ok(vec![
                rho.to_string(),
                t.area_scaled.to_string(),
                t.vol_scaled.to_string(),
                t.mu_scaled.to_string(),
                lim.area_scaled.to_string(),
                lim.vol_scaled.to_string(),
                lim.mu_scaled.to_string(),
                fv.to_string(),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    csv_table(&["rho", "area_scaled", "vol_scaled", "mu_scaled", "area_limit", "vol_limit", "mu_limit", "first_variation_scaled"], rows)
}

struct CheckRow {
    name: &'static str,
    value: f64,
    tolerance: f64,
    passed: bool,
}

fn row(name: &'static str, value: f64, tolerance: f64) -> CheckRow {
    CheckRow { name, value, tolerance, passed: value.is_finite() && value <= tolerance }
}

fn check(cfg: &RunConfig) -> Result<Artifact> {
    let model = load_model(&cfg.model)?;
    let lam = model.lambda_len();
    let mut rows = Vec::new();

    let mut id: f64 = 0.0;
    for x0 in [0.0, 1.0, 2.5] {
        let g = model.metric_at(&FermiPoint::new(x0, vec![0.0; model.n()]))?;
        let d = model.n() + 1;
        for i in 0..d {
            for j in 0..d {
                id = id.max((g[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
    }
    rows.push(row("metric_identity_on_gamma", id, 1e-14));

    let flat = ModelMetric::flat_torus(2, lam);
    let mut hflat: f64 = 0.0;
    for rho in [0.1, 0.2, 0.3] {
        let h = mean_curvature_oracle(&flat, &TubeConfiguration::round(rho, lam, 4, 4), 64, 64)?;
        hflat = hflat.max(h.iter().map(|v| (2.0 * rho * v - 1.0).abs()).fold(0.0, f64::max));
    }
    rows.push(row("flat_tube_mean_curvature", hflat, 1e-8));

    let ivs = gap_intervals(2, 2.0 * PI, 2, 20, 0.0)?;
    let gap = ivs.iter().map(|iv| (iv.rho_lo - 1.0 / (iv.k as f64 + 1.0)).abs().max((iv.rho_hi - 1.0 / iv.k as f64).abs())).fold(0.0, f64::max);
    rows.push(row("gap_endpoints", gap, 1e-15));

    let w = Periodic2::from_fn(lam, 5, 5, |x, t| 0.3 + (x + 2.0 * t).cos() - 0.5 * t.sin() * (3.0 * x).cos());
    rows.push(row("mode_round_trip", decompose(&w).reassemble().sub(&w).sup_norm(), 1e-12));

    let rho = 0.183;
    let f = Periodic1::from_fn(lam, 8, |x| 0.2 + x.cos() - 0.7 * (4.0 * x).sin());
    let v = solve_l0(&f, rho, 2, cfg.delta_res)?;
    rows.push(row("l0_substitution", v.derivative(2).scaled(rho * rho).add(&v).sub(&f).sup_norm(), 1e-10));
    let ft = Periodic2::from_fn(lam, 4, 4, |x, t| (2.0 * t + x).cos() - 0.3 * (3.0 * t).sin());
    let wt = solve_tilde(&ft, rho)?;
    rows.push(row("tilde_substitution", wt.derivative(2, 0).scaled(rho * rho).add(&wt.derivative(0, 2)).add(&wt).sub(&ft).sup_norm(), 1e-10));

    if model.n() == 2 && !model.is_flat() {
        let psi = NormalSection { phi: vec![Periodic1::from_fn(lam, 24, |x| x.cos() - 0.2), Periodic1::from_fn(lam, 24, |x| (3.0 * x).sin())] };
        let phi = solve_geodesic_jacobi(&psi, &model, cfg.delta_j)?;
        rows.push(row("geodesic_substitution", geodesic_jacobi_apply(&model, &phi, 128).sub(&psi).sup_norm(), 1e-10));

        let rs = [0.02, 0.04, 0.08];
        let sups = rs
            .iter()
            .map(|&r| Ok(cmc_tubes::tube::mean_curvature_residual(&model, &TubeConfiguration::round(r, lam, 6, 6))?.sup))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row("residual_order_minus_2", (loglog_slope(&rs, &sups) - 2.0).abs(), 0.1));

        let iv = gap_intervals(2, lam, 5, 5, cfg.c1)?[0];
        let leaf = fixed_point_solve(&model, iv.midpoint(), &cfg.solver())?;
        rows.push(row("leaf_residual", leaf.residual_sup, cfg.tol));
        let spec = assemble_jacobi(&model, &leaf, &cfg.assembly(iv.midpoint(), lam))?.spectrum()?;
        let cmp = compare_to_formula(&model, 5, &spec)?;
        rows.push(row("index_formula_mismatch", (cmp.index as f64 - cmp.expected as f64).abs(), 0.0));
        rows.push(row("geodesic_nullity", geodesic_index(&model, 64).nullity as f64, 0.0));
    }

    let s = flat_torus_spectrum(0.23, lam, &AssemblyConfig::for_rho(0.23, lam))?;
    let lowest = s.eigenvalues[0];
    rows.push(row("flat_spectrum_lowest", (lowest + 1.0).abs(), 1e-10));

    let e3 = Euclidean { dim: 3 };
    let q = tube_quadrature(&e3, &GammaSpec::point(), 0.3, &QuadratureRes::default())?;
    let x = TestVectorField::plane_wave(vec![0.3, 0.5, -0.2], vec![1.0, 0.7, 0.4], 0.4);
    rows.push(row("sphere_first_variation", first_variation(&e3, &q, &x).abs(), 1e-8));
    if model.n() == 2 {
        let fs = frame_split(&model, &GammaSpec::axis_of(&model), &x, &[0.7]);
        rows.push(row("frame_split", (fs.divergence - fs.tangential - fs.normal).abs(), 1e-10));
    }

    let failed = rows.iter().filter(|r| !r.passed).count();
    let body = csv_table(
        &["check", "value", "tolerance", "passed"],
        rows.iter().map(|r| vec![r.name.to_string(), r.value.to_string(), r.tolerance.to_string(), r.passed.to_string()]),
    )?;
    let art = Artifact { format: Format::Csv, body };
    if failed > 0 {
        // the table is still useful when something fails
        if let Some(text) = emit(cfg, &art)? {
            print!("{text}");
        }
        return Err(CliError::CheckFailed { failed });
    }
    Ok(art)
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
