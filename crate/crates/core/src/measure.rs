//! Scaled area, volume and `μ` measures of shrinking tubes, the first
//! variation of `A − nH·V`, and the minimality detector for the core.
//!
//! A submanifold `Γ^ℓ` sits in a chart of dimension `n + 1`. Tubes
//! `{γ(u) + ρ Σ y_i E_i(u) : y ∈ S^{n−ℓ}}` are integrated by product rules
//! (trapezoid along Γ, [`SphereRule`] on the fibre, Gauss–Legendre in the
//! radial direction for enclosed volume). As `ρ → 0`,
//!
//! * `ρ^{ℓ−n} ∫ f dA → ω_{n−ℓ} ∫_Γ f dL`,
//! * `ρ^{ℓ−n−1} ∫ f dV → ω_{n−ℓ}/(n+1−ℓ) ∫_Γ f dL`,
//! * `ρ^{ℓ−n} ∫ f dμ → ω_{n−ℓ}/(n+1−ℓ) ∫_Γ f dL`, with `dμ = dA − nH dV`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CurvatureAt, FourierSeries, MetricJet, ModelMetric};
use crate::quadrature::{gauss_legendre_on, sphere_area, SphereRule};
use crate::scalar::{Dual, Scalar};
use crate::tube::{point_geometry, TubeConfiguration, TubeSamples};

/// A Riemannian metric on a coordinate chart.
pub trait AmbientMetric: Sync {
    fn dim(&self) -> usize;
    fn metric_jet(&self, x: &[f64]) -> MetricJet<f64>;
    /// `true` when the metric is the Euclidean one in these coordinates.
    fn is_flat(&self) -> bool;
}

/// Euclidean `ℝ^d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Euclidean {
    pub dim: usize,
}

impl AmbientMetric for Euclidean {
    fn dim(&self) -> usize {
        self.dim
    }

    fn metric_jet(&self, _x: &[f64]) -> MetricJet<f64> {
        let d = self.dim;
        let mut g = vec![0.0; d * d];
        for a in 0..d {
            g[a * d + a] = 1.0;
        }
        MetricJet { dim: d, g, dg: vec![0.0; d * d * d] }
    }

    fn is_flat(&self) -> bool {
        true
    }
}

impl AmbientMetric for ModelMetric {
    fn dim(&self) -> usize {
        self.n() + 1
    }

    fn metric_jet(&self, x: &[f64]) -> MetricJet<f64> {
        self.curvature_at(x[0]).jet::<f64>(&x[1..])
    }

    fn is_flat(&self) -> bool {
        ModelMetric::is_flat(self)
    }
}

/// A closed curve in a Euclidean chart, with an explicit smooth normal frame.
#[derive(Clone, Debug, PartialEq)]
pub enum ClosedCurve {
    /// Circle of radius `radius` about `center` in the coordinate plane `(i, j)`.
    Circle { center: Vec<f64>, plane: (usize, usize), radius: f64 },
    /// `x₀ ↦ (x₀, φ₁(x₀), …, φ_n(x₀))`, periodic in `x₀` with period `lambda`.
    Graph { lambda: f64, offsets: Vec<FourierSeries> },
}

/// The core submanifold `Γ`.
#[derive(Clone, Debug, PartialEq)]
pub enum GammaSpec {
    /// `{x' = 0}`, the first `ℓ = periods.len()` chart coordinates periodic.
    /// `ℓ = 0` is a single point (tubes are round spheres).
    Axis { periods: Vec<f64> },
    Curve(ClosedCurve),
}

impl GammaSpec {
    /// The Fermi axis of a model (`ℓ = 1`).
    pub fn axis_of(model: &ModelMetric) -> Self {
        GammaSpec::Axis { periods: vec![model.lambda_len()] }
    }

    pub fn point() -> Self {
        GammaSpec::Axis { periods: Vec::new() }
    }

    pub fn ell(&self) -> usize {
        match self {
            GammaSpec::Axis { periods } => periods.len(),
            GammaSpec::Curve(_) => 1,
        }
    }

    fn parameter_periods(&self) -> Vec<f64> {
        match self {
            GammaSpec::Axis { periods } => periods.clone(),
            GammaSpec::Curve(ClosedCurve::Circle { .. }) => vec![2.0 * PI],
            GammaSpec::Curve(ClosedCurve::Graph { lambda, .. }) => vec![*lambda],
        }
    }

    /// Position, parameter derivatives and an orthonormal normal frame with
    /// its parameter derivatives, at parameter `u`.
    fn frame(&self, dim: usize, u: &[f64]) -> Frame {
        match self {
            GammaSpec::Axis { periods } => {
                let ell = periods.len();
                let mut pos = vec![0.0; dim];
                pos[..ell].copy_from_slice(u);
                let dpos = (0..ell)
                    .map(|j| {
                        let mut e = vec![0.0; dim];
                        e[j] = 1.0;
                        e
                    })
                    .collect();
                let normals = (ell..dim)
                    .map(|i| {
                        let mut e = vec![0.0; dim];
                        e[i] = 1.0;
                        e
                    })
                    .collect();
                Frame { pos, dpos, normals, dnormals: vec![vec![vec![0.0; dim]; dim - ell]; ell] }
            }
            GammaSpec::Curve(ClosedCurve::Circle { center, plane, radius }) => {
                let (i, j) = *plane;
                let (s, c) = u[0].sin_cos();
                let mut pos = center.clone();
                pos[i] += radius * c;
                pos[j] += radius * s;
                let mut dpos = vec![0.0; dim];
                dpos[i] = -radius * s;
                dpos[j] = radius * c;
                let mut radial = vec![0.0; dim];
                radial[i] = c;
                radial[j] = s;
                let mut dradial = vec![0.0; dim];
                dradial[i] = -s;
                dradial[j] = c;
                let mut normals = vec![radial];
                let mut dn = vec![dradial];
                for k in (0..dim).filter(|&k| k != i && k != j) {
                    let mut e = vec![0.0; dim];
                    e[k] = 1.0;
                    normals.push(e);
                    dn.push(vec![0.0; dim]);
                }
                Frame { pos, dpos: vec![dpos], normals, dnormals: vec![dn] }
            }
            GammaSpec::Curve(ClosedCurve::Graph { lambda, offsets }) => {
                let kappa = 2.0 * PI / lambda;
                let x = u[0];
                // (value, first, second) derivatives of each coordinate
                let mut p = vec![Dual::new(x, 1.0)];
                let mut t = vec![Dual::new(1.0, 0.0)];
                for s in offsets {
                    let (v, d1, d2) = series_jet(s, x, kappa);
                    p.push(Dual::new(v, d1));
                    t.push(Dual::new(d1, d2));
                }
                let len = dot_d(&t, &t).sqrt();
                let tu: Vec<Dual> = t.iter().map(|v| *v / len).collect();
                let mut normals: Vec<Vec<Dual>> = Vec::new();
                for a in 1..dim {
                    let mut v: Vec<Dual> = (0..dim).map(|b| Dual::cst(if a == b { 1.0 } else { 0.0 })).collect();
                    for q in std::iter::once(&tu).chain(normals.iter()) {
                        let c = dot_d(&v, q);
                        for (vb, qb) in v.iter_mut().zip(q) {
                            *vb = *vb - c * *qb;
                        }
                    }
                    let l = dot_d(&v, &v).sqrt();
                    normals.push(v.iter().map(|x| *x / l).collect());
                }
                Frame {
                    pos: p.iter().map(|v| v.re).collect(),
                    dpos: vec![p.iter().map(|v| v.eps).collect()],
                    normals: normals.iter().map(|v| v.iter().map(|x| x.re).collect()).collect(),
                    dnormals: vec![normals.iter().map(|v| v.iter().map(|x| x.eps).collect()).collect()],
                }
            }
        }
    }
}

fn series_jet(s: &FourierSeries, x: f64, kappa: f64) -> (f64, f64, f64) {
    let mut out = (0.0, 0.0, 0.0);
    for (h, &(c, sn)) in s.terms.iter().enumerate() {
        let a = kappa * h as f64;
        let (si, co) = (a * x).sin_cos();
        out.0 += c * co + sn * si;
        out.1 += a * (-c * si + sn * co);
        out.2 += -a * a * (c * co + sn * si);
    }
    out
}

fn dot_d(a: &[Dual], b: &[Dual]) -> Dual {
    a.iter().zip(b).fold(Dual::cst(0.0), |acc, (x, y)| acc + *x * *y)
}

struct Frame {
    pos: Vec<f64>,
    /// `∂_{u_j} γ`
    dpos: Vec<Vec<f64>>,
    normals: Vec<Vec<f64>>,
    /// `dnormals[j][i] = ∂_{u_j} E_i`
    dnormals: Vec<Vec<Vec<f64>>>,
}

/// Resolution of the product rules.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureRes {
    /// Points per period along Γ.
    pub nu: usize,
    pub n_circle: usize,
    pub n_lat: usize,
    pub n_radial: usize,
}

impl Default for QuadratureRes {
    fn default() -> Self {
        QuadratureRes { nu: 64, n_circle: 32, n_lat: 16, n_radial: 16 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceSample {
    pub x: Vec<f64>,
    /// Outward `g`-unit normal (contravariant).
    pub normal: Vec<f64>,
    pub da: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VolumeSample {
    pub x: Vec<f64>,
    pub dv: f64,
}

/// Quadrature for a closed hypersurface and the domain it bounds around Γ.
#[derive(Clone, Debug)]
pub struct SurfaceQuadrature {
    pub dim: usize,
    pub ell: usize,
    pub rho: f64,
    /// `n·H`: exact for round tubes in a flat chart and for solved leaves,
    /// the leading value `(n − ℓ)/ρ` otherwise.
    pub nh: f64,
    pub surface: Vec<SurfaceSample>,
    pub volume: Vec<VolumeSample>,
}

/// `(ρ^{ℓ−n}∫f dA, ρ^{ℓ−n−1}∫f dV, ρ^{ℓ−n}∫f dμ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureTriple {
    pub area_scaled: f64,
    pub vol_scaled: f64,
    pub mu_scaled: f64,
}

fn det_sqrt(m: &DMatrix<f64>) -> Result<f64> {
    let d = m.determinant();
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::QuadratureFailure(format!("degenerate Gram determinant {d:e}")));
    }
    Ok(d.sqrt())
}

fn gmat(jet: &MetricJet<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(jet.dim, jet.dim, &jet.g)
}

/// Orthonormal basis of `y^⊥ ⊂ ℝ^k` from a Householder reflection.
fn sphere_tangents(y: &[f64]) -> Vec<Vec<f64>> {
    let k = y.len();
    let sign = if y[0] >= 0.0 { 1.0 } else { -1.0 };
    let mut v = y.to_vec();
    v[0] += sign;
    let vv: f64 = v.iter().map(|a| a * a).sum();
    (1..k)
        .map(|c| (0..k).map(|r| (if r == c { 1.0 } else { 0.0 }) - 2.0 * v[r] * v[c] / vv).collect())
        .collect()
}

fn parameter_grid(periods: &[f64], nu: usize) -> Vec<(Vec<f64>, f64)> {
    let mut out = vec![(Vec::new(), 1.0)];
    for &p in periods {
        let h = p / nu as f64;
        out = out
            .into_iter()
            .flat_map(|(u, w)| {
                (0..nu).map(move |i| {
                    let mut u2 = u.clone();
                    u2.push(h * i as f64);
                    (u2, w * h)
                })
            })
            .collect();
    }
    out
}

fn combine(base: &[f64], e: &[Vec<f64>], coef: &[f64], s: f64) -> Vec<f64> {
    let mut x = base.to_vec();
    for (c, ei) in coef.iter().zip(e) {
        for (xa, ea) in x.iter_mut().zip(ei) {
            *xa += s * c * ea;
        }
    }
    x
}

/// Round tube of radius `rho` about Γ with the enclosed region.
pub fn tube_quadrature(metric: &dyn AmbientMetric, gamma: &GammaSpec, rho: f64, res: &QuadratureRes) -> Result<SurfaceQuadrature> {
    let dim = metric.dim();
    let ell = gamma.ell();
    if ell + 2 > dim {
        return Err(Error::InvalidInput(format!("need n − ℓ ≥ 1, got chart dimension {dim} and ℓ = {ell}")));
    }
    if matches!(gamma, GammaSpec::Curve(_)) && !metric.is_flat() {
        return Err(Error::InvalidInput("curves other than the axis need a flat chart".into()));
    }
    match gamma {
        GammaSpec::Curve(ClosedCurve::Circle { center, plane, .. }) if center.len() != dim || plane.0 >= dim || plane.1 >= dim || plane.0 == plane.1 => {
            return Err(Error::InvalidInput("circle does not fit the chart".into()));
        }
        GammaSpec::Curve(ClosedCurve::Graph { offsets, .. }) if offsets.len() + 1 != dim => {
            return Err(Error::InvalidInput("graph needs one offset per normal coordinate".into()));
        }
        _ => {}
    }
    if !(rho > 0.0) {
        return Err(Error::InvalidInput(format!("rho must be positive, got {rho}")));
    }
    let n = dim - 1;
    let k = dim - ell;
    let sphere = SphereRule::new(k - 1, res.n_circle, res.n_lat);
    let (rs, rw) = gauss_legendre_on(res.n_radial, 0.0, rho);
    let params = parameter_grid(&gamma.parameter_periods(), res.nu);
    let chunks: Vec<Result<(Vec<SurfaceSample>, Vec<VolumeSample>)>> = params
        .par_iter()
        .map(|(u, wu)| {
            let fr = gamma.frame(dim, u);
            let mut surf = Vec::with_capacity(sphere.len());
            let mut vol = Vec::with_capacity(sphere.len() * rs.len());
            for (y, wy) in sphere.points.iter().zip(&sphere.weights) {
                let radial = combine(&vec![0.0; dim], &fr.normals, y, 1.0);
                let fib: Vec<Vec<f64>> = sphere_tangents(y).iter().map(|t| combine(&vec![0.0; dim], &fr.normals, t, 1.0)).collect();
                let columns = |s: f64| -> Vec<Vec<f64>> {
                    let mut cols: Vec<Vec<f64>> = (0..ell).map(|j| combine(&fr.dpos[j], &fr.dnormals[j], y, s)).collect();
                    cols.extend(fib.iter().map(|f| f.iter().map(|v| v * s).collect::<Vec<f64>>()));
                    cols
                };
                // surface
                let x = combine(&fr.pos, &fr.normals, y, rho);
                let jet = metric.metric_jet(&x);
                let g = gmat(&jet);
                let tang = columns(rho);
                let tm = DMatrix::from_fn(dim, n, |r, c| tang[c][r]);
                let first = tm.transpose() * &g * &tm;
                let da = det_sqrt(&first)?;
                let v = DVector::from_column_slice(&radial);
                let proj = first.clone().cholesky().ok_or_else(|| Error::QuadratureFailure("first fundamental form not positive".into()))?.solve(&(tm.transpose() * &g * &v));
                let nv = &v - &tm * proj;
                let nn = (nv.transpose() * &g * &nv)[(0, 0)].sqrt();
                surf.push(SurfaceSample { x, normal: (nv / nn).iter().copied().collect(), da: da * wu * wy });
                // enclosed volume
                for (s, ws) in rs.iter().zip(&rw) {
                    let x = combine(&fr.pos, &fr.normals, y, *s);
                    let jet = metric.metric_jet(&x);
                    let g = gmat(&jet);
                    let mut cols = columns(*s);
                    cols.insert(ell, radial.clone());
                    let jm = DMatrix::from_fn(dim, dim, |r, c| cols[c][r]);
                    let dv = det_sqrt(&g)? * jm.determinant().abs();
                    vol.push(VolumeSample { x, dv: dv * ws * wu * wy });
                }
            }
            Ok((surf, vol))
        })
        .collect();
    let mut surface = Vec::new();
    let mut volume = Vec::new();
    for c in chunks {
        let (s, v) = c?;
        surface.extend(s);
        volume.extend(v);
    }
    Ok(SurfaceQuadrature { dim, ell, rho, nh: (n - ell) as f64 / rho, surface, volume })
}

/// Quadrature for a solved leaf `T_ρ(w, Φ)` (`n = 2`, `ℓ = 1`).
///
/// Rejects leaves with `‖w‖_∞ + ‖Φ‖_∞ > c_small·ρ²`.
pub fn leaf_quadrature(model: &ModelMetric, tube: &TubeConfiguration, nx: usize, nt: usize, n_radial: usize, c_small: f64) -> Result<SurfaceQuadrature> {
    tube.validate(model)?;
    let rho = tube.rho;
    let size = tube.w.sup_norm() + tube.phi.sup_norm();
    if size > c_small * rho * rho {
        return Err(Error::InvalidInput(format!("leaf perturbation {size:.3e} exceeds {c_small}·ρ² = {:.3e}", c_small * rho * rho)));
    }
    let smp = TubeSamples::new(tube, nx, nt);
    let wq = tube.lambda() / nx as f64 * 2.0 * PI / nt as f64;
    let (ts, tw) = gauss_legendre_on(n_radial, 0.0, 1.0);
    let rows: Vec<Result<(Vec<SurfaceSample>, Vec<VolumeSample>)>> = (0..nx)
        .into_par_iter()
        .map(|i| {
            let cv: CurvatureAt = model.curvature_at(smp.xs[i]);
            let mut surf = Vec::with_capacity(nt);
            let mut vol = Vec::with_capacity(nt * ts.len());
            for j in 0..nt {
                let loc = smp.local(i, j);
                let pg = point_geometry(&cv, rho, &loc);
                let det = pg.first[0] * pg.first[2] - pg.first[1] * pg.first[1];
                if !(det > 0.0) {
                    return Err(Error::QuadratureFailure(format!("degenerate leaf metric at ({}, {})", smp.xs[i], smp.thetas[j])));
                }
                surf.push(SurfaceSample { x: pg.position.to_vec(), normal: pg.normal.iter().map(|v| -v).collect(), da: det.sqrt() * wq });
                let r = [pg.position[1], pg.position[2]];
                let rt = [pg.tangents[1][1], pg.tangents[1][2]];
                let cross = (r[0] * rt[1] - r[1] * rt[0]).abs();
                for (t, w) in ts.iter().zip(&tw) {
                    let xp = [t * r[0], t * r[1]];
                    let jet = cv.jet::<f64>(&xp);
                    let dv = det_sqrt(&gmat(&jet))? * t * cross;
                    vol.push(VolumeSample { x: vec![smp.xs[i], xp[0], xp[1]], dv: dv * w * wq });
                }
            }
            Ok((surf, vol))
        })
        .collect();
    let mut surface = Vec::new();
    let mut volume = Vec::new();
    for r in rows {
        let (s, v) = r?;
        surface.extend(s);
        volume.extend(v);
    }
    Ok(SurfaceQuadrature { dim: 3, ell: 1, rho, nh: (model.n() - 1) as f64 / rho, surface, volume })
}

impl SurfaceQuadrature {
    fn n(&self) -> usize {
        self.dim - 1
    }

    pub fn area_integral(&self, f: &(dyn Fn(&[f64]) -> f64 + Sync)) -> f64 {
        self.surface.par_iter().map(|s| f(&s.x) * s.da).sum()
    }

    pub fn volume_integral(&self, f: &(dyn Fn(&[f64]) -> f64 + Sync)) -> f64 {
        self.volume.par_iter().map(|s| f(&s.x) * s.dv).sum()
    }

    pub fn measures(&self, f: &(dyn Fn(&[f64]) -> f64 + Sync)) -> MeasureTriple {
        let e = self.ell as i32 - self.n() as i32;
        let a = self.area_integral(f) * self.rho.powi(e);
        let v = self.volume_integral(f) * self.rho.powi(e - 1);
        MeasureTriple { area_scaled: a, vol_scaled: v, mu_scaled: a - self.nh * self.rho * v }
    }
}

/// Scaled measures of the round tube of radius `rho` about Γ.
pub fn scaled_measures(metric: &dyn AmbientMetric, gamma: &GammaSpec, rho: f64, f: &(dyn Fn(&[f64]) -> f64 + Sync), res: &QuadratureRes) -> Result<MeasureTriple> {
    Ok(tube_quadrature(metric, gamma, rho, res)?.measures(f))
}

/// `∫_Γ f dL` by the trapezoid rule.
pub fn gamma_integral(metric: &dyn AmbientMetric, gamma: &GammaSpec, f: &(dyn Fn(&[f64]) -> f64 + Sync), nu: usize) -> f64 {
    let dim = metric.dim();
    let ell = gamma.ell();
    parameter_grid(&gamma.parameter_periods(), nu)
        .par_iter()
        .map(|(u, w)| {
            let fr = gamma.frame(dim, u);
            let g = gmat(&metric.metric_jet(&fr.pos));
            let tm = DMatrix::from_fn(dim, ell, |r, c| fr.dpos[c][r]);
            let first = tm.transpose() * &g * &tm;
            f(&fr.pos) * first.determinant().max(0.0).sqrt() * w
        })
        .sum()
}

/// The `ρ → 0` limits `(ω∫f dL, ω/(n+1−ℓ)∫f dL, ω/(n+1−ℓ)∫f dL)`, `ω = ω_{n−ℓ}`.
pub fn limit_measures(metric: &dyn AmbientMetric, gamma: &GammaSpec, f: &(dyn Fn(&[f64]) -> f64 + Sync), nu: usize) -> MeasureTriple {
    let n = metric.dim() - 1;
    let ell = gamma.ell();
    let om = sphere_area(n - ell);
    let i = gamma_integral(metric, gamma, f, nu);
    let c = (n + 1 - ell) as f64;
    MeasureTriple { area_scaled: om * i, vol_scaled: om / c * i, mu_scaled: om / c * i }
}

/// One term `v · cos(⟨k, x⟩ + phase) · Π x_i^{e_i}` of a test vector field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldMode {
    pub v: Vec<f64>,
    pub k: Vec<f64>,
    pub phase: f64,
    pub exps: Vec<u32>,
}

/// A smooth vector field on the chart with analytic derivatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestVectorField {
    pub dim: usize,
    pub modes: Vec<FieldMode>,
}

impl TestVectorField {
    pub fn constant(v: Vec<f64>) -> Self {
        let d = v.len();
        TestVectorField { dim: d, modes: vec![FieldMode { v, k: vec![0.0; d], phase: 0.0, exps: vec![0; d] }] }
    }

    /// `X^a = Σ_b m[a][b] x_b`.
    pub fn linear(m: &[Vec<f64>]) -> Self {
        let d = m.len();
        let mut modes = Vec::new();
        for b in 0..d {
            let v: Vec<f64> = (0..d).map(|a| m[a][b]).collect();
            if v.iter().any(|c| *c != 0.0) {
                let mut exps = vec![0; d];
                exps[b] = 1;
                modes.push(FieldMode { v, k: vec![0.0; d], phase: 0.0, exps });
            }
        }
        TestVectorField { dim: d, modes }
    }

    pub fn plane_wave(v: Vec<f64>, k: Vec<f64>, phase: f64) -> Self {
        let d = v.len();
        TestVectorField { dim: d, modes: vec![FieldMode { v, k, phase, exps: vec![0; d] }] }
    }

    pub fn monomial(v: Vec<f64>, exps: Vec<u32>) -> Self {
        let d = v.len();
        TestVectorField { dim: d, modes: vec![FieldMode { v, k: vec![0.0; d], phase: 0.0, exps }] }
    }

    pub fn plus(mut self, other: TestVectorField) -> Self {
        self.modes.extend(other.modes);
        self
    }

    /// `(X(x), ∂_c X^a)` with `jac[a * d + c]`.
    pub fn eval(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim;
        let mut val = vec![0.0; d];
        let mut jac = vec![0.0; d * d];
        for m in &self.modes {
            let arg: f64 = m.k.iter().zip(x).map(|(k, x)| k * x).sum::<f64>() + m.phase;
            let (s, c) = arg.sin_cos();
            let mono: f64 = x.iter().zip(&m.exps).map(|(x, e)| x.powi(*e as i32)).product();
            let scal = c * mono;
            let mut grad = vec![0.0; d];
            for cidx in 0..d {
                let dm = if m.exps[cidx] == 0 {
                    0.0
                } else {
                    m.exps[cidx] as f64 * x.iter().zip(&m.exps).enumerate().map(|(i, (x, e))| if i == cidx { x.powi(*e as i32 - 1) } else { x.powi(*e as i32) }).product::<f64>()
                };
                grad[cidx] = -s * m.k[cidx] * mono + c * dm;
            }
            for a in 0..d {
                val[a] += m.v[a] * scal;
                for cidx in 0..d {
                    jac[a * d + cidx] += m.v[a] * grad[cidx];
                }
            }
        }
        (val, jac)
    }
}

/// `div X = ∂_a X^a + ½ g^{ab} ∂_c g_ab X^c`.
pub fn divergence(metric: &dyn AmbientMetric, x: &[f64], field: &TestVectorField) -> f64 {
    let jet = metric.metric_jet(x);
    let (val, jac) = field.eval(x);
    divergence_with(&jet, &val, &jac)
}

fn divergence_with(jet: &MetricJet<f64>, val: &[f64], jac: &[f64]) -> f64 {
    let d = jet.dim;
    let ginv = gmat(jet).try_inverse().expect("metric is invertible on the chart");
    let mut div: f64 = (0..d).map(|a| jac[a * d + a]).sum();
    for c in 0..d {
        let mut tr = 0.0;
        for a in 0..d {
            for b in 0..d {
                tr += ginv[(a, b)] * jet.dg(c, a, b);
            }
        }
        div += 0.5 * tr * val[c];
    }
    div
}

/// `⟨∇_V X, V⟩` for a vector `V` at `x`.
pub fn directional_term(metric: &dyn AmbientMetric, x: &[f64], field: &TestVectorField, v: &[f64]) -> f64 {
    let jet = metric.metric_jet(x);
    let (val, jac) = field.eval(x);
    directional_with(&jet, &val, &jac, v)
}

fn directional_with(jet: &MetricJet<f64>, val: &[f64], jac: &[f64], v: &[f64]) -> f64 {
    let d = jet.dim;
    let mut acc = 0.0;
    for a in 0..d {
        for c in 0..d {
            let vv = v[a] * v[c];
            if vv == 0.0 {
                continue;
            }
            let mut t = 0.0;
            for b in 0..d {
                t += jet.g(a, b) * jac[b * d + c];
            }
            for dd in 0..d {
                t += jet.christoffel_first(a, c, dd) * val[dd];
            }
            acc += vv * t;
        }
    }
    acc
}

/// `∫ div X dμ − ∫⟨∇_N X, N⟩ dA`, zero on CMC surfaces.
pub fn first_variation(metric: &dyn AmbientMetric, q: &SurfaceQuadrature, field: &TestVectorField) -> f64 {
    let surf: f64 = q
        .surface
        .par_iter()
        .map(|s| {
            let jet = metric.metric_jet(&s.x);
            let (val, jac) = field.eval(&s.x);
            (divergence_with(&jet, &val, &jac) - directional_with(&jet, &val, &jac, &s.normal)) * s.da
        })
        .sum();
    let vol: f64 = q.volume.par_iter().map(|s| divergence(metric, &s.x, field) * s.dv).sum();
    surf - q.nh * vol
}

/// `ρ^{ℓ−n}∫⟨∇_N X, N⟩ dA` and its limit `ω/(n+1−ℓ) ∫ Σ_i ⟨∇_{E_i}X, E_i⟩ dL`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalGradient {
    pub rho: f64,
    pub scaled: f64,
    pub limit: f64,
}

pub fn normal_gradient_limit(metric: &dyn AmbientMetric, gamma: &GammaSpec, rho: f64, field: &TestVectorField, res: &QuadratureRes) -> Result<NormalGradient> {
    let q = tube_quadrature(metric, gamma, rho, res)?;
    let n = q.n();
    let ell = q.ell;
    let integral: f64 = q.surface.par_iter().map(|s| directional_term(metric, &s.x, field, &s.normal) * s.da).sum();
    let scaled = integral * rho.powi(ell as i32 - n as i32);
    let dim = metric.dim();
    let on_gamma = parameter_grid(&gamma.parameter_periods(), res.nu)
        .par_iter()
        .map(|(u, w)| {
            let fr = gamma.frame(dim, u);
            let g = gmat(&metric.metric_jet(&fr.pos));
            let tm = DMatrix::from_fn(dim, ell, |r, c| fr.dpos[c][r]);
            let dl = (tm.transpose() * &g * &tm).determinant().max(0.0).sqrt();
            let tr: f64 = fr.normals.iter().map(|e| directional_term(metric, &fr.pos, field, e)).sum();
            tr * dl * w
        })
        .sum::<f64>();
    let limit = sphere_area(n - ell) / (n + 1 - ell) as f64 * on_gamma;
    Ok(NormalGradient { rho, scaled, limit })
}

/// Pointwise split of `div X` on Γ into tangential and normal frame sums.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameSplit {
    pub divergence: f64,
    /// `Σ_j ⟨∇_{F_j}X, F_j⟩`
    pub tangential: f64,
    /// `Σ_i ⟨∇_{E_i}X, E_i⟩`
    pub normal: f64,
}

pub fn frame_split(metric: &dyn AmbientMetric, gamma: &GammaSpec, field: &TestVectorField, u: &[f64]) -> FrameSplit {
    let dim = metric.dim();
    let fr = gamma.frame(dim, u);
    let g = gmat(&metric.metric_jet(&fr.pos));
    // orthonormalize the tangents in g
    let mut tangents: Vec<DVector<f64>> = Vec::new();
    for t in &fr.dpos {
        let mut v = DVector::from_column_slice(t);
        for q in &tangents {
            let c = (q.transpose() * &g * &v)[(0, 0)];
            v -= q * c;
        }
        let l = (v.transpose() * &g * &v)[(0, 0)].sqrt();
        tangents.push(v / l);
    }
    let tangential = tangents.iter().map(|t| directional_term(metric, &fr.pos, field, t.as_slice())).sum();
    let normal = fr.normals.iter().map(|e| directional_term(metric, &fr.pos, field, e)).sum();
    FrameSplit { divergence: divergence(metric, &fr.pos, field), tangential, normal }
}

/// Settings of the minimality detector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Largest tube radius; the limit is extrapolated from `ρ` and `ρ/2`.
    pub rho: f64,
    /// Fourier harmonics of the unknown curvature vector.
    pub harmonics: usize,
    pub tol: f64,
    pub res: QuadratureRes,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig { rho: 0.01, harmonics: 2, tol: 1e-4, res: QuadratureRes { nu: 64, n_circle: 24, n_lat: 8, n_radial: 8 } }
    }
}

/// Mean-curvature vector of Γ recovered from the limits of the first variation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimalityReport {
    /// Parameter values along Γ.
    pub u: Vec<f64>,
    /// Curvature vector `Σ_j ∇_{F_j}F_j` at each parameter value.
    pub curvature: Vec<Vec<f64>>,
    /// `L²(dL)`-average of `|H_Γ|`.
    pub magnitude: f64,
    pub minimal: bool,
}

fn test_family(gamma: &GammaSpec, dim: usize, harmonics: usize) -> Vec<TestVectorField> {
    let mut out = Vec::new();
    let e = |b: usize| {
        let mut v = vec![0.0; dim];
        v[b] = 1.0;
        v
    };
    match gamma {
        GammaSpec::Curve(ClosedCurve::Circle { center, .. }) => {
            // monomials in x − center of degree ≤ harmonics
            let mut exps: Vec<Vec<u32>> = vec![vec![0; dim]];
            for _ in 0..harmonics {
                let mut next = exps.clone();
                for ex in &exps {
                    for c in 0..dim {
                        let mut e2 = ex.clone();
                        e2[c] += 1;
                        if !next.contains(&e2) {
                            next.push(e2);
                        }
                    }
                }
                exps = next;
            }
            for b in 0..dim {
                for ex in &exps {
                    // shift to the center by expanding around it through plane-wave-free modes
                    out.push(shifted_monomial(e(b), ex, center));
                }
            }
        }
        _ => {
            let periods = gamma.parameter_periods();
            let ell = periods.len();
            let kappa: Vec<f64> = periods.iter().map(|p| 2.0 * PI / p).collect();
            for b in 0..dim {
                for j in 0..ell.max(1) {
                    for m in 0..=harmonics {
                        for phase in [0.0, -0.5 * PI] {
                            if m == 0 && phase != 0.0 {
                                continue;
                            }
                            let mut k = vec![0.0; dim];
                            if ell > 0 {
                                k[j] = kappa[j] * m as f64;
                            }
                            out.push(TestVectorField::plane_wave(e(b), k.clone(), phase));
                            for c in ell..dim {
                                let mut exps = vec![0; dim];
                                exps[c] = 1;
                                out.push(TestVectorField { dim, modes: vec![FieldMode { v: e(b), k: k.clone(), phase, exps }] });
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn shifted_monomial(v: Vec<f64>, exps: &[u32], center: &[f64]) -> TestVectorField {
    // Π (x_i − c_i)^{e_i} expanded into monomials
    let dim = v.len();
    let mut terms: Vec<(f64, Vec<u32>)> = vec![(1.0, vec![0; dim])];
    for (i, &e) in exps.iter().enumerate() {
        for _ in 0..e {
            let mut next = Vec::new();
            for (c, ex) in &terms {
                let mut up = ex.clone();
                up[i] += 1;
                next.push((*c, up));
                next.push((-c * center[i], ex.clone()));
            }
            terms = next;
        }
    }
    TestVectorField {
        dim,
        modes: terms.into_iter().filter(|(c, _)| *c != 0.0).map(|(c, ex)| FieldMode { v: v.iter().map(|a| a * c).collect(), k: vec![0.0; dim], phase: 0.0, exps: ex }).collect(),
    }
}

/// Recovers the mean-curvature vector of a closed curve Γ from the
/// `ρ → 0` limit of the first variation of its tubes, which equals
/// `−ω/(n+1−ℓ) ∫⟨X, H_Γ⟩ dL` for every test field `X`.
pub fn minimality_detector(metric: &dyn AmbientMetric, gamma: &GammaSpec, cfg: &DetectorConfig) -> Result<MinimalityReport> {
    if gamma.ell() != 1 {
        return Err(Error::InvalidInput("the detector is implemented for curves (ℓ = 1)".into()));
    }
    let dim = metric.dim();
    let n = dim - 1;
    let fields = test_family(gamma, dim, cfg.harmonics);
    let q1 = tube_quadrature(metric, gamma, cfg.rho, &cfg.res)?;
    let q2 = tube_quadrature(metric, gamma, 0.5 * cfg.rho, &cfg.res)?;
    let scale = |q: &SurfaceQuadrature| q.rho.powi(1 - n as i32);
    let c = sphere_area(n - 1) / n as f64;
    let rhs: Vec<f64> = fields
        .par_iter()
        .map(|x| {
            let d1 = first_variation(metric, &q1, x) * scale(&q1);
            let d2 = first_variation(metric, &q2, x) * scale(&q2);
            -(2.0 * d2 - d1) / c
        })
        .collect();
    // unknowns: H^b(u) = Σ_m a cos(mκu) + b sin(mκu)
    let period = gamma.parameter_periods()[0];
    let kappa = 2.0 * PI / period;
    let nh = 2 * cfg.harmonics + 1;
    let basis = |u: f64, m: usize| -> f64 {
        if m == 0 {
            1.0
        } else if m % 2 == 1 {
            (kappa * ((m + 1) / 2) as f64 * u).cos()
        } else {
            (kappa * (m / 2) as f64 * u).sin()
        }
    };
    let nu = cfg.res.nu.max(4 * nh);
    let nodes: Vec<(Vec<f64>, f64)> = parameter_grid(&[period], nu);
    let geo: Vec<(Vec<f64>, DMatrix<f64>, f64)> = nodes
        .iter()
        .map(|(u, w)| {
            let fr = gamma.frame(dim, u);
            let g = gmat(&metric.metric_jet(&fr.pos));
            let t = DVector::from_column_slice(&fr.dpos[0]);
            let dl = (t.transpose() * &g * &t)[(0, 0)].sqrt();
            (fr.pos, g, dl * w)
        })
        .collect();
    let nunk = dim * nh;
    let mut a = DMatrix::<f64>::zeros(fields.len(), nunk);
    for (r, x) in fields.iter().enumerate() {
        for ((u, _), (pos, g, w)) in nodes.iter().zip(&geo) {
            let (val, _) = x.eval(pos);
            for b in 0..dim {
                let xb: f64 = (0..dim).map(|a| g[(b, a)] * val[a]).sum();
                for m in 0..nh {
                    a[(r, b * nh + m)] += xb * basis(u[0], m) * w;
                }
            }
        }
    }
    let svd = a.svd(true, true);
    let sol = svd.solve(&DVector::from_vec(rhs), 1e-10).map_err(|e| Error::Degenerate(e.to_string()))?;
    let mut us = Vec::new();
    let mut curv = Vec::new();
    let mut num = 0.0;
    let mut len = 0.0;
    for ((u, _), (_, g, w)) in nodes.iter().zip(&geo) {
        let h: Vec<f64> = (0..dim).map(|b| (0..nh).map(|m| sol[b * nh + m] * basis(u[0], m)).sum()).collect();
        let hv = DVector::from_column_slice(&h);
        num += (hv.transpose() * g * &hv)[(0, 0)] * w;
        len += w;
        us.push(u[0]);
        curv.push(h);
    }
    let magnitude = (num / len).sqrt();
    Ok(MinimalityReport { u: us, curvature: curv, magnitude, minimal: magnitude <= cfg.tol })
}
