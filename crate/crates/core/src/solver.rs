//! The fixed-point construction of CMC leaves.
//!
//! Unknowns `Ξ = (w₀, Φ, w̃)` describe the tube `T_ρ(w₀ + w̃, Φ)`. Writing the
//! residual as `F(Ξ) = −𝓛Ξ + G(Ξ)`, with `𝓛` the block-diagonal model
//! operator (`(L)₀` on `w₀`, `ρ𝔍` on the linear modes, `L̃` on `w̃`), the map
//! `𝔑(Ξ) = 𝓛⁻¹G(Ξ) = Ξ + 𝓛⁻¹F(Ξ)` is iterated to its fixed point.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jacobi::{solve_l0, solve_tilde, GeodesicJacobi, ResonanceInfo};
use crate::model::ModelMetric;
use crate::modes::{decompose, NormalSection};
use crate::spectral::{Periodic1, Periodic2};
use crate::tube::{residual_grid, TubeConfiguration};

/// An admissible radius window `I_k = (ρ'_k, ρ''_k)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapInterval {
    pub k: usize,
    pub rho_lo: f64,
    pub rho_hi: f64,
    pub c1: f64,
}

impl GapInterval {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.rho_lo + self.rho_hi)
    }

    pub fn contains(&self, rho: f64) -> bool {
        rho > self.rho_lo && rho < self.rho_hi
    }
}

/// Windows `√(n−1)Λ/2π · (1/(k+1) + c₁k^{−9/4}, 1/k − c₁k^{−9/4})` for
/// `k_min ≤ k ≤ k_max`, largest radii first; closed windows are omitted.
pub fn gap_intervals(n: usize, lambda: f64, k_min: usize, k_max: usize, c1: f64) -> Result<Vec<GapInterval>> {
    if k_min < 2 {
        return Err(Error::InvalidInput(format!("k_min must be at least 2, got {k_min}")));
    }
    if n < 2 || !(lambda > 0.0) || c1 < 0.0 {
        return Err(Error::InvalidInput("gap intervals need n >= 2, Lambda > 0, c1 >= 0".into()));
    }
    let scale = ((n - 1) as f64).sqrt() * lambda / (2.0 * PI);
    Ok((k_min..=k_max)
        .filter_map(|k| {
            let kf = k as f64;
            let margin = c1 * kf.powf(-2.25);
            let lo = scale * (1.0 / (kf + 1.0) + margin);
            let hi = scale * (1.0 / kf - margin);
            (lo < hi).then_some(GapInterval { k, rho_lo: lo, rho_hi: hi, c1 })
        })
        .collect())
}

/// Discretization and tolerances of the fixed-point solver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Coefficient grid along Γ (power of two ≥ 16).
    pub ns: usize,
    /// Coefficient grid along the fibre (power of two ≥ 16).
    pub nt: usize,
    /// Target sup-residual of `nρH − (n − 1)`.
    pub tol: f64,
    pub max_iter: usize,
    pub delta_res: f64,
    pub delta_j: f64,
    /// Ball radius constant: iterates must satisfy `‖Ξ‖_E ≤ c₀ρ²`.
    pub c0: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { ns: 64, nt: 32, tol: 1e-9, max_iter: 50, delta_res: 1e-6, delta_j: 1e-8, c0: 50.0 }
    }
}

impl SolverConfig {
    /// Coefficient bands `(M_x, M_θ)`, excluding the Nyquist modes.
    pub fn bands(&self) -> (usize, usize) {
        (self.ns / 2 - 1, self.nt / 2 - 1)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("ns", self.ns), ("nt", self.nt)] {
            if v < 16 || !v.is_power_of_two() {
                return Err(Error::InvalidInput(format!("{name} must be a power of two >= 16, got {v}")));
            }
        }
        for (name, v) in [("tol", self.tol), ("delta_res", self.delta_res), ("delta_j", self.delta_j), ("c0", self.c0)] {
            if !(v > 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// The unknowns `Ξ = (w₀, Φ, w̃)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Unknowns {
    pub w0: Periodic1,
    pub phi: NormalSection,
    pub w_tilde: Periodic2,
}

impl Unknowns {
    pub fn zero(lambda: f64, mx: usize, mt: usize) -> Self {
        Unknowns { w0: Periodic1::zero(lambda, mx), phi: NormalSection::zero(2, lambda, mx), w_tilde: Periodic2::zero(lambda, mx, mt) }
    }

    pub fn tube(&self, rho: f64) -> TubeConfiguration {
        let (mx, mt) = self.w_tilde.modes();
        let w = Periodic2::from_periodic1(&self.w0, mt).add(&self.w_tilde).with_modes(mx, mt);
        TubeConfiguration { rho, w, phi: self.phi.clone() }
    }

    pub fn add(&self, o: &Self) -> Self {
        Unknowns { w0: self.w0.add(&o.w0), phi: self.phi.add(&o.phi), w_tilde: self.w_tilde.add(&o.w_tilde) }
    }

    pub fn sub(&self, o: &Self) -> Self {
        Unknowns { w0: self.w0.sub(&o.w0), phi: self.phi.sub(&o.phi), w_tilde: self.w_tilde.sub(&o.w_tilde) }
    }

    /// `(1 − cos(√(n−1)Λ/ρ))‖w₀‖ + ‖Φ‖ + ‖w̃‖` with graded spectral norms,
    /// fibre-function frequencies measured in `s = x₀/ρ`.
    pub fn e_norm(&self, rho: f64, small_divisor: f64) -> f64 {
        small_divisor * self.w0.graded_norm(rho) + self.phi.graded_norm(1.0) + self.w_tilde.graded_norm(rho)
    }

    /// `‖w‖_∞ + ‖Φ‖_∞`.
    pub fn sup_norm(&self) -> f64 {
        let (mx, mt) = self.w_tilde.modes();
        let w = Periodic2::from_periodic1(&self.w0, mt).add(&self.w_tilde).with_modes(mx, mt);
        w.sup_norm() + self.phi.sup_norm()
    }
}

/// Evaluates the residual of `Ξ` and the three block corrections.
struct Sweep<'a> {
    model: &'a ModelMetric,
    rho: f64,
    cfg: SolverConfig,
    geo: Option<GeodesicJacobi>,
    info: ResonanceInfo,
}

struct SweepOut {
    delta: Unknowns,
}

impl<'a> Sweep<'a> {
    fn new(model: &'a ModelMetric, rho: f64, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        if model.n() != 2 {
            return Err(Error::InvalidInput("the solver is implemented for n = 2".into()));
        }
        let info = ResonanceInfo::new(rho, model.n(), model.lambda_len());
        if info.small_divisor <= cfg.delta_res {
            return Err(Error::Resonant { rho, small_divisor: info.small_divisor, threshold: cfg.delta_res });
        }
        Ok(Sweep { model, rho, cfg, geo: None, info })
    }

    fn residual(&self, xi: &Unknowns) -> Result<(Vec<f64>, f64)> {
        let (nx, nt) = (2 * self.cfg.ns, 2 * self.cfg.nt);
        let vals = residual_grid(self.model, &xi.tube(self.rho), nx, nt)?;
        let sup = vals.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        Ok((vals, sup))
    }

    fn run(&mut self, xi: &Unknowns) -> Result<SweepOut> {
        let (vals, _) = self.residual(xi)?;
        self.correct(&vals)
    }

    fn correct(&mut self, vals: &[f64]) -> Result<SweepOut> {
        let (mx, mt) = self.cfg.bands();
        let lambda = self.model.lambda_len();
        let (nx, nt) = (2 * self.cfg.ns, 2 * self.cfg.nt);
        let f = Periodic2::from_grid(lambda, nx, nt, vals, mx, mt)?;
        let split = decompose(&f);
        let d0 = solve_l0(&split.w0, self.rho, 2, self.cfg.delta_res)?;
        let dt = solve_tilde(&split.w_tilde, self.rho)?;
        let psi = split.w_hat.scaled(1.0 / self.rho).with_modes(mx);
        let dphi = if psi.mean_square() == 0.0 {
            NormalSection::zero(2, lambda, mx)
        } else {
            if self.geo.is_none() {
                self.geo = Some(GeodesicJacobi::new(self.model, mx, self.cfg.delta_j)?);
            }
            self.geo.as_ref().expect("just built").solve(&psi)?
        };
        Ok(SweepOut { delta: Unknowns { w0: d0, phi: dphi, w_tilde: dt } })
    }

    fn ball_check(&self, xi: &Unknowns) -> Result<()> {
        let norm = xi.e_norm(self.rho, self.info.small_divisor);
        let radius = self.cfg.c0 * self.rho * self.rho;
        if !(norm <= radius) {
            return Err(Error::BallEscape { norm, radius });
        }
        Ok(())
    }
}

/// One application of `𝔑`: `Ξ ↦ Ξ + 𝓛⁻¹F(Ξ)`.
pub fn apply_n(model: &ModelMetric, rho: f64, xi: &Unknowns, cfg: &SolverConfig) -> Result<Unknowns> {
    let mut sw = Sweep::new(model, rho, *cfg)?;
    sw.ball_check(xi)?;
    let out = sw.run(xi)?;
    let next = xi.add(&out.delta);
    sw.ball_check(&next)?;
    Ok(next)
}

/// A solved leaf.
#[derive(Clone, Debug)]
pub struct SolveResult {
    pub rho: f64,
    pub unknowns: Unknowns,
    pub tube: TubeConfiguration,
    /// `‖nρH − (n−1)‖_∞` on the evaluation grid at the returned iterate.
    pub residual_sup: f64,
    /// Number of residual evaluations.
    pub iterations: usize,
    /// Largest ratio of successive update norms.
    pub contraction_factor: f64,
    /// `‖Ξ‖_E` of the solution.
    pub e_norm: f64,
    pub converged: bool,
    pub resonance: ResonanceInfo,
    /// Sup-residual after each evaluation.
    pub history: Vec<f64>,
}

/// Iterates `𝔑` from `Ξ = 0` until the sup-residual is at most `cfg.tol`.
pub fn fixed_point_solve(model: &ModelMetric, rho: f64, cfg: &SolverConfig) -> Result<SolveResult> {
    let (mx, mt) = cfg.bands();
    let mut sw = Sweep::new(model, rho, *cfg)?;
    let mut xi = Unknowns::zero(model.lambda_len(), mx, mt);
    let mut history = Vec::new();
    let mut contraction: f64 = 0.0;
    let mut prev_step: Option<f64> = None;
    let floor = 1e-13 * rho * rho;
    for it in 1..=cfg.max_iter {
        let (vals, residual_sup) = sw.residual(&xi)?;
        history.push(residual_sup);
        if residual_sup <= cfg.tol {
            let tube = xi.tube(rho);
            return Ok(SolveResult {
                rho,
                e_norm: xi.e_norm(rho, sw.info.small_divisor),
                unknowns: xi,
                tube,
                residual_sup,
                iterations: it,
                contraction_factor: contraction,
                converged: true,
                resonance: sw.info,
                history,
            });
        }
        let out = sw.correct(&vals)?;
        let step = out.delta.e_norm(rho, sw.info.small_divisor);
        if let Some(p) = prev_step {
            if p > floor {
                contraction = contraction.max(step / p);
            }
        }
        prev_step = Some(step);
        xi = xi.add(&out.delta);
        sw.ball_check(&xi)?;
    }
    Err(Error::NoConvergence { iterations: cfg.max_iter, residual: history.last().copied().unwrap_or(f64::NAN) })
}

/// Outcome of a foliation check over sampled radii.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoliationReport {
    pub rhos: Vec<f64>,
    /// `min ∂_ρ⟨ρ(1+w)Υ + Φ, Υ⟩` over the grid and sample pairs.
    pub min_radial_derivative: f64,
    /// Smallest radial gap between consecutive leaves.
    pub min_gap: f64,
    /// `max (‖∂_ρw‖_∞ + ‖∂_ρΦ‖_∞)/ρ` over sample pairs.
    pub derivative_ratio: f64,
}

/// Solves at `samples` radii inside `interval` and certifies that consecutive
/// leaves are radially nested.
pub fn foliation_check(model: &ModelMetric, interval: &GapInterval, samples: usize, cfg: &SolverConfig) -> Result<FoliationReport> {
    if samples < 3 {
        return Err(Error::InvalidInput("foliation check needs at least 3 samples".into()));
    }
    let width = interval.rho_hi - interval.rho_lo;
    let rhos: Vec<f64> = (0..samples).map(|i| interval.rho_lo + width * (i as f64 + 0.5) / samples as f64).collect();
    let leaves = rhos.iter().map(|&r| fixed_point_solve(model, r, cfg)).collect::<Result<Vec<_>>>()?;
    let (nx, nt) = (2 * cfg.ns, 2 * cfg.nt);
    let radial = |s: &SolveResult| -> Vec<f64> {
        let w = s.tube.w.to_grid(nx, nt);
        let p0 = s.tube.phi.phi[0].samples(nx);
        let p1 = s.tube.phi.phi[1].samples(nx);
        let mut out = Vec::with_capacity(nx * nt);
        for i in 0..nx {
            for j in 0..nt {
                let th = 2.0 * PI * j as f64 / nt as f64;
                out.push(s.rho * (1.0 + w[i * nt + j]) + p0[i] * th.cos() + p1[i] * th.sin());
            }
        }
        out
    };
    let radii: Vec<Vec<f64>> = leaves.iter().map(radial).collect();
    let mut min_der = f64::INFINITY;
    let mut min_gap = f64::INFINITY;
    let mut ratio: f64 = 0.0;
    for i in 0..samples - 1 {
        let dr = rhos[i + 1] - rhos[i];
        let (a, b) = (&radii[i], &radii[i + 1]);
        let gap = a.iter().zip(b).map(|(x, y)| y - x).fold(f64::INFINITY, f64::min);
        if !(gap > 0.0) {
            return Err(Error::FoliationViolation { rho_a: rhos[i], rho_b: rhos[i + 1], detail: format!("leaves intersect (min radial gap {gap:.3e})") });
        }
        min_gap = min_gap.min(gap);
        min_der = min_der.min(gap / dr);
        let dw = leaves[i + 1].tube.w.sub(&leaves[i].tube.w).sup_norm() / dr;
        let dphi = leaves[i + 1].tube.phi.sub(&leaves[i].tube.phi).sup_norm() / dr;
        ratio = ratio.max((dw + dphi) / (0.5 * (rhos[i] + rhos[i + 1])));
    }
    Ok(FoliationReport { rhos, min_radial_derivative: min_der, min_gap, derivative_ratio: ratio })
}

/// Result of calibrating the margin constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub c1: f64,
    /// Largest contraction factor seen at the window endpoints for `c1`.
    pub worst_contraction: f64,
    /// Largest `c₁` keeping every window in range open.
    pub c1_max: f64,
}

/// Smallest `c₁` (to `bisections` steps) for which the solver converges with
/// contraction factor below one at both endpoints of every `I_k`,
/// `k_min ≤ k ≤ k_max`.
pub fn calibrate_c1(model: &ModelMetric, k_min: usize, k_max: usize, cfg: &SolverConfig, bisections: usize) -> Result<Calibration> {
    use rayon::prelude::*;
    let n = model.n();
    let lambda = model.lambda_len();
    let c1_max = (k_min..=k_max)
        .map(|k| {
            let kf = k as f64;
            kf.powf(2.25) / (2.0 * kf * (kf + 1.0))
        })
        .fold(f64::INFINITY, f64::min)
        * 0.999;
    let worst = |c1: f64| -> Option<f64> {
        let ivs = gap_intervals(n, lambda, k_min, k_max, c1).ok()?;
        if ivs.len() != k_max - k_min + 1 {
            return None;
        }
        let rhos: Vec<f64> = ivs.iter().flat_map(|iv| [iv.rho_lo, iv.rho_hi]).collect();
        let res: Vec<Option<f64>> = rhos
            .par_iter()
            .map(|&r| match fixed_point_solve(model, r, cfg) {
                Ok(s) if s.contraction_factor < 1.0 => Some(s.contraction_factor),
                _ => None,
            })
            .collect();
        res.into_iter().try_fold(0.0_f64, |a, v| v.map(|c| a.max(c)))
    };
    let top = worst(c1_max).ok_or_else(|| Error::NoConvergence { iterations: cfg.max_iter, residual: f64::NAN })?;
    let (mut lo, mut hi, mut best) = (0.0, c1_max, top);
    for _ in 0..bisections {
        let mid = 0.5 * (lo + hi);
        match worst(mid) {
            Some(c) => {
                hi = mid;
                best = c;
            }
            None => lo = mid,
        }
    }
    Ok(Calibration { c1: hi, worst_contraction: best, c1_max })
}
