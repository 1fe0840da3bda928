//! Ambient metric germs along a closed geodesic.
//!
//! Γ is the `x₀`-axis of a Fermi chart `(x₀, x')`, `x₀ ∈ [0, Λ)`. The metric
//! is *defined* by its truncated expansion
//!
//! ```text
//! g₀₀ = 1 + A_kl(x₀) x_k x_l + C_klm(x₀) x_k x_l x_m
//! g₀ᵢ = 0
//! gᵢⱼ = δᵢⱼ + ⅓ R_kilj(x₀) x_k x_l
//! ```
//!
//! where `A_ij = ⟨R(Xᵢ,X₀)Xⱼ,X₀⟩` and `R_kilj = ⟨R(X_k,Xᵢ)X_l,Xⱼ⟩` in a
//! parallel orthonormal frame, and the optional cubic `C` only enters `g₀₀`.
//! With the sign convention `⟨R(X,Y)Y,X⟩ = K`, a round sphere has `A = −I`.
//! All coefficients are real Fourier series in `x₀`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A real trigonometric polynomial `Σ_h c_h cos(hκx) + s_h sin(hκx)`, `κ = 2π/Λ`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FourierSeries {
    /// `(c_h, s_h)` indexed by harmonic `h`.
    pub terms: Vec<(f64, f64)>,
}

impl FourierSeries {
    pub fn constant(c: f64) -> Self {
        FourierSeries { terms: vec![(c, 0.0)] }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|&(c, s)| c == 0.0 && s == 0.0)
    }

    pub fn harmonic(&self, h: usize) -> (f64, f64) {
        self.terms.get(h).copied().unwrap_or((0.0, 0.0))
    }

    pub fn set(&mut self, h: usize, c: f64, s: f64) {
        if self.terms.len() <= h {
            self.terms.resize(h + 1, (0.0, 0.0));
        }
        self.terms[h] = (c, s);
    }

    /// Value and first derivative at `x`.
    pub fn eval_d(&self, x: f64, kappa: f64) -> (f64, f64) {
        let mut v = 0.0;
        let mut d = 0.0;
        for (h, &(c, s)) in self.terms.iter().enumerate() {
            let w = kappa * h as f64;
            let (sn, cs) = (w * x).sin_cos();
            v += c * cs + s * sn;
            d += w * (s * cs - c * sn);
        }
        (v, d)
    }

    pub fn eval(&self, x: f64, kappa: f64) -> f64 {
        self.eval_d(x, kappa).0
    }

    fn scaled(&self, a: f64) -> Self {
        FourierSeries { terms: self.terms.iter().map(|&(c, s)| (a * c, a * s)).collect() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExactModel {
    /// Zero curvature; the chart metric is Euclidean.
    FlatTorus,
    /// The truncated polynomial metric, exact by definition.
    Truncated,
}

impl fmt::Display for ExactModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExactModel::FlatTorus => "FLAT_TORUS",
            ExactModel::Truncated => "TRUNCATED",
        })
    }
}

impl FromStr for ExactModel {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "FLAT_TORUS" => Ok(ExactModel::FlatTorus),
            "TRUNCATED" => Ok(ExactModel::Truncated),
            other => Err(format!("unknown exact_model `{other}`")),
        }
    }
}

/// A point of the Fermi chart.
#[derive(Clone, Debug, PartialEq)]
pub struct FermiPoint {
    pub x0: f64,
    pub xprime: Vec<f64>,
    pub r: f64,
}

impl FermiPoint {
    pub fn new(x0: f64, xprime: Vec<f64>) -> Self {
        let r = xprime.iter().map(|v| v * v).sum::<f64>().sqrt();
        FermiPoint { x0, xprime, r }
    }
}

/// Curvature coefficients and their `x₀`-derivatives frozen at one `x₀`.
///
/// Index layout (0-based): `a[k*n + l]`, `t[((k*n + i)*n + l)*n + j]`,
/// `c[(k*n + l)*n + m]`.
#[derive(Clone, Debug)]
pub struct CurvatureAt {
    pub n: usize,
    pub a: Vec<f64>,
    pub da: Vec<f64>,
    pub t: Vec<f64>,
    pub dt: Vec<f64>,
    pub c: Vec<f64>,
    pub dc: Vec<f64>,
}

/// Metric coefficients and first partial derivatives at a chart point.
///
/// Coordinates are ordered `(x₀, x₁, …, x_n)`; `dg[(c*d + a)*d + b] = ∂_c g_ab`
/// with `d = n + 1`.
#[derive(Clone, Debug)]
pub struct MetricJet<T> {
    pub dim: usize,
    pub g: Vec<T>,
    pub dg: Vec<T>,
}

impl<T: Scalar> MetricJet<T> {
    #[inline]
    pub fn g(&self, a: usize, b: usize) -> T {
        self.g[a * self.dim + b]
    }

    #[inline]
    pub fn dg(&self, c: usize, a: usize, b: usize) -> T {
        self.dg[(c * self.dim + a) * self.dim + b]
    }

    /// Christoffel symbols of the first kind `Γ_{κ,νλ} = ½(∂_ν g_κλ + ∂_λ g_κν − ∂_κ g_νλ)`.
    pub fn christoffel_first(&self, k: usize, nu: usize, la: usize) -> T {
        (self.dg(nu, k, la) + self.dg(la, k, nu) - self.dg(k, nu, la)) * 0.5
    }
}

impl CurvatureAt {
    /// Metric jet at normal coordinates `xp`.
    pub fn jet<T: Scalar>(&self, xp: &[T]) -> MetricJet<T> {
        let n = self.n;
        let d = n + 1;
        let z = T::cst(0.0);
        let mut g = vec![z; d * d];
        let mut dg = vec![z; d * d * d];
        for a in 0..d {
            g[a * d + a] = T::cst(1.0);
        }
        // g00 and its derivatives
        let mut g00 = T::cst(1.0);
        let mut d0g00 = z;
        for k in 0..n {
            for l in 0..n {
                let xx = xp[k] * xp[l];
                g00 += xx * self.a[k * n + l];
                d0g00 += xx * self.da[k * n + l];
                for m in 0..n {
                    let idx = (k * n + l) * n + m;
                    if self.c[idx] != 0.0 || self.dc[idx] != 0.0 {
                        let xxx = xx * xp[m];
                        g00 += xxx * self.c[idx];
                        d0g00 += xxx * self.dc[idx];
                    }
                }
            }
        }
        g[0] = g00;
        dg[0] = d0g00;
        for p in 0..n {
            let mut s = z;
            for l in 0..n {
                s += xp[l] * (2.0 * self.a[p * n + l]);
                for m in 0..n {
                    let cv = self.c[(p * n + l) * n + m];
                    if cv != 0.0 {
                        s += xp[l] * xp[m] * (3.0 * cv);
                    }
                }
            }
            dg[(p + 1) * d * d] = s;
        }
        // gij
        let t = |k: usize, i: usize, l: usize, j: usize| self.t[((k * n + i) * n + l) * n + j];
        let dt = |k: usize, i: usize, l: usize, j: usize| self.dt[((k * n + i) * n + l) * n + j];
        for i in 0..n {
            for j in 0..n {
                let mut v = z;
                let mut v0 = z;
                for k in 0..n {
                    for l in 0..n {
                        let tv = t(k, i, l, j);
                        let dv = dt(k, i, l, j);
                        if tv != 0.0 || dv != 0.0 {
                            let xx = xp[k] * xp[l];
                            v += xx * tv;
                            v0 += xx * dv;
                        }
                    }
                }
                g[(i + 1) * d + j + 1] = v * (1.0 / 3.0) + if i == j { 1.0 } else { 0.0 };
                dg[(i + 1) * d + j + 1] = v0 * (1.0 / 3.0);
                for p in 0..n {
                    let mut s = z;
                    for l in 0..n {
                        let c = t(p, i, l, j) + t(l, i, p, j);
                        if c != 0.0 {
                            s += xp[l] * c;
                        }
                    }
                    dg[((p + 1) * d + i + 1) * d + j + 1] = s * (1.0 / 3.0);
                }
            }
        }
        MetricJet { dim: d, g, dg }
    }
}

/// Ambient metric data along Γ.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelMetric {
    n: usize,
    ell: usize,
    lambda_len: f64,
    exact_model: ExactModel,
    /// `⟨R(Xᵢ,X₀)Xⱼ,X₀⟩`, `n × n`.
    r0i0j: Vec<FourierSeries>,
    /// `⟨R(X_k,Xᵢ)X_l,Xⱼ⟩`, `n⁴`.
    rikjl: Vec<FourierSeries>,
    /// Cubic `g₀₀` coefficients, `n³`, fully symmetric.
    c00: Vec<FourierSeries>,
    r_max: f64,
}

/// Builder that fills symmetry orbits and rejects conflicting entries.
#[derive(Clone, Debug)]
pub struct ModelBuilder {
    n: usize,
    ell: usize,
    lambda_len: f64,
    exact_model: ExactModel,
    r0i0j: Vec<FourierSeries>,
    rikjl: Vec<FourierSeries>,
    c00: Vec<FourierSeries>,
    set_a: Vec<Vec<bool>>,
    set_t: Vec<Vec<bool>>,
    set_c: Vec<Vec<bool>>,
}

fn mark(flags: &mut [Vec<bool>], idx: usize, h: usize) -> bool {
    let f = &mut flags[idx];
    if f.len() <= h {
        f.resize(h + 1, false);
    }
    std::mem::replace(&mut f[h], true)
}

impl ModelBuilder {
    pub fn new(n: usize, lambda_len: f64) -> Self {
        ModelBuilder {
            n,
            ell: 1,
            lambda_len,
            exact_model: ExactModel::Truncated,
            r0i0j: vec![FourierSeries::default(); n * n],
            rikjl: vec![FourierSeries::default(); n * n * n * n],
            c00: vec![FourierSeries::default(); n * n * n],
            set_a: vec![Vec::new(); n * n],
            set_t: vec![Vec::new(); n * n * n * n],
            set_c: vec![Vec::new(); n * n * n],
        }
    }

    pub fn ell(mut self, ell: usize) -> Self {
        self.ell = ell;
        self
    }

    pub fn exact_model(mut self, m: ExactModel) -> Self {
        self.exact_model = m;
        self
    }

    fn put(series: &mut [FourierSeries], flags: &mut [Vec<bool>], idx: usize, h: usize, c: f64, s: f64, what: &str) -> Result<()> {
        let was = mark(flags, idx, h);
        let old = series[idx].harmonic(h);
        if was && ((old.0 - c).abs() > 1e-14 || (old.1 - s).abs() > 1e-14) {
            return Err(Error::CurvatureSymmetry(format!(
                "{what}: harmonic {h} already ({}, {}) from its symmetry orbit, got ({c}, {s})",
                old.0, old.1
            )));
        }
        series[idx].set(h, c, s);
        Ok(())
    }

    fn check_index(&self, idx: &[usize]) -> Result<()> {
        if idx.iter().any(|&i| i >= self.n) {
            return Err(Error::InvalidInput(format!("frame index out of range 1..={} in {:?}", self.n, idx.iter().map(|i| i + 1).collect::<Vec<_>>())));
        }
        Ok(())
    }

    /// Sets `⟨R(Xᵢ,X₀)Xⱼ,X₀⟩` (0-based indices) and its transpose.
    pub fn r0i0j(mut self, i: usize, j: usize, h: usize, c: f64, s: f64) -> Result<Self> {
        self.check_index(&[i, j])?;
        let n = self.n;
        let what = format!("R0i0j({},{})", i + 1, j + 1);
        for idx in [i * n + j, j * n + i] {
            Self::put(&mut self.r0i0j, &mut self.set_a, idx, h, c, s, &what)?;
        }
        Ok(self)
    }

    /// Sets `⟨R(X_k,Xᵢ)X_l,Xⱼ⟩` (0-based) and its whole symmetry orbit.
    pub fn rikjl(mut self, k: usize, i: usize, l: usize, j: usize, h: usize, c: f64, s: f64) -> Result<Self> {
        self.check_index(&[k, i, l, j])?;
        let what = format!("Rikjl({},{},{},{})", k + 1, i + 1, l + 1, j + 1);
        if (k == i || l == j) && (c != 0.0 || s != 0.0) {
            return Err(Error::CurvatureSymmetry(format!("{what}: nonzero entry violates antisymmetry")));
        }
        let n = self.n;
        let at = |a: usize, b: usize, cc: usize, dd: usize| ((a * n + b) * n + cc) * n + dd;
        let orbit = [
            (at(k, i, l, j), 1.0),
            (at(i, k, l, j), -1.0),
            (at(k, i, j, l), -1.0),
            (at(i, k, j, l), 1.0),
            (at(l, j, k, i), 1.0),
            (at(j, l, k, i), -1.0),
            (at(l, j, i, k), -1.0),
            (at(j, l, i, k), 1.0),
        ];
        for (idx, sg) in orbit {
            Self::put(&mut self.rikjl, &mut self.set_t, idx, h, sg * c, sg * s, &what)?;
        }
        Ok(self)
    }

    /// Sets the cubic `g₀₀` coefficient `C_klm` (0-based) on all permutations.
    ///
    /// The stored value multiplies each ordered monomial `x_k x_l x_m`, so the
    /// polynomial term is `Σ_{k,l,m} C_klm x_k x_l x_m`.
    pub fn c00(mut self, k: usize, l: usize, m: usize, h: usize, c: f64, s: f64) -> Result<Self> {
        self.check_index(&[k, l, m])?;
        let n = self.n;
        let what = format!("C00({},{},{})", k + 1, l + 1, m + 1);
        let perms = [(k, l, m), (k, m, l), (l, k, m), (l, m, k), (m, k, l), (m, l, k)];
        let mut seen = Vec::new();
        for (a, b, cc) in perms {
            let idx = (a * n + b) * n + cc;
            if seen.contains(&idx) {
                continue;
            }
            seen.push(idx);
            Self::put(&mut self.c00, &mut self.set_c, idx, h, c, s, &what)?;
        }
        Ok(self)
    }

    pub fn build(self) -> Result<ModelMetric> {
        if self.n == 0 {
            return Err(Error::InvalidInput("n must be positive".into()));
        }
        if self.ell == 0 {
            return Err(Error::InvalidInput("ell must be positive".into()));
        }
        if !(self.lambda_len.is_finite() && self.lambda_len > 0.0) {
            return Err(Error::InvalidInput(format!("Lambda must be positive, got {}", self.lambda_len)));
        }
        let curved = self.r0i0j.iter().chain(&self.rikjl).chain(&self.c00).any(|s| !s.is_zero());
        if self.exact_model == ExactModel::FlatTorus && curved {
            return Err(Error::InvalidInput("FLAT_TORUS model cannot carry curvature entries".into()));
        }
        let mut m = ModelMetric {
            n: self.n,
            ell: self.ell,
            lambda_len: self.lambda_len,
            exact_model: self.exact_model,
            r0i0j: self.r0i0j,
            rikjl: self.rikjl,
            c00: self.c00,
            r_max: f64::INFINITY,
        };
        m.check_symmetries()?;
        m.r_max = 0.45 * m.positivity_radius();
        Ok(m)
    }
}

impl ModelMetric {
    /// Zero-curvature model: the chart metric is Euclidean.
    pub fn flat_torus(n: usize, lambda_len: f64) -> Self {
        ModelBuilder::new(n, lambda_len).exact_model(ExactModel::FlatTorus).build().expect("flat model is valid")
    }

    /// A curved `n = 2`, `Λ = 2π` model with positive-definite `A`
    /// (so the geodesic is stable), nonconstant normal curvature and a small
    /// cubic `g₀₀` term.
    pub fn curved_toy() -> Self {
        Self::toy_with_unstable(0)
    }

    /// The curved toy model with `m ∈ {0, 1, 2}` normal directions made unstable.
    ///
    /// Unstable directions have `A_ii = −0.5`, so the constant section along
    /// `Xᵢ` is a negative direction of `−(∂² − A)`.
    pub fn toy_with_unstable(m: usize) -> Self {
        assert!(m <= 2, "the toy model has two normal directions");
        let a11 = if m >= 1 { (-0.5, 0.0) } else { (0.6, 0.2) };
        let a22 = if m >= 2 { (-0.5, 0.0) } else { (0.8, -0.15) };
        let b = ModelBuilder::new(2, 2.0 * PI);
        let build = || -> Result<ModelMetric> {
            let mut b = b.r0i0j(0, 0, 0, a11.0, 0.0)?;
            if a11.1 != 0.0 {
                b = b.r0i0j(0, 0, 1, a11.1, 0.0)?;
            }
            b = b.r0i0j(1, 1, 0, a22.0, 0.0)?;
            if a22.1 != 0.0 {
                b = b.r0i0j(1, 1, 2, a22.1, 0.0)?;
            }
            b.r0i0j(0, 1, 1, 0.0, 0.1)?
                .rikjl(0, 1, 0, 1, 0, -0.5, 0.0)?
                .rikjl(0, 1, 0, 1, 1, -0.2, 0.0)?
                .c00(0, 0, 0, 0, 0.3, 0.0)?
                .c00(0, 1, 1, 0, 0.1, 0.0)?
                .c00(1, 1, 1, 1, 0.0, 0.2)?
                .build()
        };
        build().expect("builtin toy model is valid")
    }

    /// Looks up a builtin model by name.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "flat_torus" => Some(Self::flat_torus(2, 2.0 * PI)),
            "flat_torus3" => Some(Self::flat_torus(3, 2.0 * PI)),
            "curved_toy" | "curved.toy" => Some(Self::curved_toy()),
            "unstable1" => Some(Self::toy_with_unstable(1)),
            "unstable2" => Some(Self::toy_with_unstable(2)),
            _ => None,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn lambda_len(&self) -> f64 {
        self.lambda_len
    }

    pub fn exact_model(&self) -> ExactModel {
        self.exact_model
    }

    /// Radius below which chart points are accepted.
    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn is_flat(&self) -> bool {
        self.exact_model == ExactModel::FlatTorus
            || self.r0i0j.iter().chain(&self.rikjl).chain(&self.c00).all(|s| s.is_zero())
    }

    /// `2π/Λ`.
    pub fn kappa(&self) -> f64 {
        2.0 * PI / self.lambda_len
    }

    /// Highest stored harmonic.
    pub fn max_harmonic(&self) -> usize {
        self.r0i0j.iter().chain(&self.rikjl).chain(&self.c00).map(|s| s.terms.len().saturating_sub(1)).max().unwrap_or(0)
    }

    pub fn r0i0j_series(&self, i: usize, j: usize) -> &FourierSeries {
        &self.r0i0j[i * self.n + j]
    }

    pub fn rikjl_series(&self, k: usize, i: usize, l: usize, j: usize) -> &FourierSeries {
        let n = self.n;
        &self.rikjl[((k * n + i) * n + l) * n + j]
    }

    pub fn c00_series(&self, k: usize, l: usize, m: usize) -> &FourierSeries {
        let n = self.n;
        &self.c00[(k * n + l) * n + m]
    }

    /// `A(x₀)` as a row-major `n × n` matrix.
    pub fn a_matrix(&self, x0: f64) -> Vec<f64> {
        let k = self.kappa();
        self.r0i0j.iter().map(|s| s.eval(x0, k)).collect()
    }

    pub fn curvature_at(&self, x0: f64) -> CurvatureAt {
        let k = self.kappa();
        let split = |v: &[FourierSeries]| -> (Vec<f64>, Vec<f64>) { v.iter().map(|s| s.eval_d(x0, k)).unzip() };
        let (a, da) = split(&self.r0i0j);
        let (t, dt) = split(&self.rikjl);
        let (c, dc) = split(&self.c00);
        CurvatureAt { n: self.n, a, da, t, dt, c, dc }
    }

    /// Metric coefficients at `p`, coordinates ordered `(x₀, x₁, …, x_n)`.
    pub fn metric_at(&self, p: &FermiPoint) -> Result<DMatrix<f64>> {
        if p.xprime.len() != self.n {
            return Err(Error::InvalidInput(format!("point has {} normal coordinates, model has n = {}", p.xprime.len(), self.n)));
        }
        let jet = self.curvature_at(p.x0).jet::<f64>(&p.xprime);
        let d = self.n + 1;
        let g = DMatrix::from_row_slice(d, d, &jet.g);
        if g.clone().cholesky().is_none() {
            return Err(Error::NonPositiveDefinite { r: p.r });
        }
        Ok(g)
    }

    /// `Ric(Υ,Υ) = −Σ_α ⟨R(Υ,E_α)Υ,E_α⟩` over the frame `X₀, X₁, …, X_n`.
    pub fn ricci_normal(&self, x0: f64, upsilon: &[f64]) -> Result<f64> {
        let norm = upsilon.iter().map(|v| v * v).sum::<f64>().sqrt();
        if upsilon.len() != self.n || (norm - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidInput(format!("Υ must be a unit {}-vector (|Υ| = {norm})", self.n)));
        }
        let c = self.curvature_at(x0);
        Ok(ricci_from(&c, upsilon))
    }

    /// The inhomogeneous term `(⅔⟨R(Υ,X₀)Υ,X₀⟩ − ⅓Ric(Υ,Υ))` of the residual, per unit `ρ²`.
    pub fn forcing_coefficient(&self, x0: f64, upsilon: &[f64]) -> f64 {
        let c = self.curvature_at(x0);
        let n = self.n;
        let mut ra = 0.0;
        for k in 0..n {
            for l in 0..n {
                ra += c.a[k * n + l] * upsilon[k] * upsilon[l];
            }
        }
        2.0 / 3.0 * ra - ricci_from(&c, upsilon) / 3.0
    }

    fn check_symmetries(&self) -> Result<()> {
        let n = self.n;
        let h_max = self.max_harmonic();
        for h in 0..=h_max {
            for i in 0..n {
                for j in 0..n {
                    if self.r0i0j[i * n + j].harmonic(h) != self.r0i0j[j * n + i].harmonic(h) {
                        return Err(Error::CurvatureSymmetry(format!("R0i0j not symmetric at ({},{}) harmonic {h}", i + 1, j + 1)));
                    }
                }
            }
            let t = |k: usize, i: usize, l: usize, j: usize| self.rikjl_series(k, i, l, j).harmonic(h);
            let neg = |p: (f64, f64)| (-p.0, -p.1);
            for k in 0..n {
                for i in 0..n {
                    for l in 0..n {
                        for j in 0..n {
                            let v = t(k, i, l, j);
                            if v != neg(t(i, k, l, j)) || v != neg(t(k, i, j, l)) || v != t(l, j, k, i) {
                                return Err(Error::CurvatureSymmetry(format!(
                                    "Rikjl({},{},{},{}) harmonic {h}",
                                    k + 1,
                                    i + 1,
                                    l + 1,
                                    j + 1
                                )));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Largest `r` up to which the metric stays positive definite on a sample
    /// of base points and directions (`∞` when it never degenerates).
    fn positivity_radius(&self) -> f64 {
        if self.is_flat() {
            return f64::INFINITY;
        }
        let dirs = sample_directions(self.n);
        let xs: Vec<f64> = (0..64).map(|i| i as f64 * self.lambda_len / 64.0).collect();
        let cur: Vec<CurvatureAt> = xs.iter().map(|&x| self.curvature_at(x)).collect();
        let ok = |r: f64| {
            cur.iter().all(|c| {
                dirs.iter().all(|u| {
                    let xp: Vec<f64> = u.iter().map(|v| v * r).collect();
                    let jet = c.jet::<f64>(&xp);
                    DMatrix::from_row_slice(self.n + 1, self.n + 1, &jet.g).cholesky().is_some()
                })
            })
        };
        let cap = 64.0;
        let mut lo = 0.0;
        let mut hi = f64::NAN;
        let mut r = 1e-3;
        while r <= cap {
            if ok(r) {
                lo = r;
                r *= 1.25;
            } else {
                hi = r;
                break;
            }
        }
        if hi.is_nan() {
            return f64::INFINITY;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if ok(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Parses the key–value model description format.
    ///
    /// ```text
    /// n 2
    /// ell 1
    /// Lambda 6.283185307179586
    /// exact_model TRUNCATED
    /// R0i0j 1 1 0 0.6 0.0
    /// Rikjl 1 2 1 2 0 -0.5 0.0
    /// C00 1 1 1 0 0.3 0.0
    /// ```
    ///
    /// Data lines give 1-based frame indices, a harmonic, and the cosine and
    /// sine coefficients. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut n: Option<usize> = None;
        let mut ell = 1usize;
        let mut lambda: Option<f64> = None;
        let mut exact = ExactModel::Truncated;
        let mut data: Vec<(usize, Vec<&str>)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let toks: Vec<&str> = body.split_whitespace().collect();
            let perr = |msg: String| Error::ModelParse { line, msg };
            let single = |toks: &[&str]| -> Result<String> {
                if toks.len() != 2 {
                    return Err(perr(format!("`{}` takes exactly one value", toks[0])));
                }
                Ok(toks[1].to_string())
            };
            match toks[0] {
                "n" => n = Some(single(&toks)?.parse().map_err(|e| perr(format!("n: {e}")))?),
                "ell" => ell = single(&toks)?.parse().map_err(|e| perr(format!("ell: {e}")))?,
                "Lambda" => lambda = Some(single(&toks)?.parse().map_err(|e| perr(format!("Lambda: {e}")))?),
                "exact_model" => exact = single(&toks)?.parse().map_err(perr)?,
                "R0i0j" | "Rikjl" | "C00" => data.push((line, toks)),
                other => return Err(perr(format!("unknown key `{other}`"))),
            }
        }
        let n = n.ok_or(Error::ModelParse { line: 0, msg: "missing key `n`".into() })?;
        let lambda = lambda.ok_or(Error::ModelParse { line: 0, msg: "missing key `Lambda`".into() })?;
        if n == 0 {
            return Err(Error::ModelParse { line: 0, msg: "n must be positive".into() });
        }
        let mut b = ModelBuilder::new(n, lambda).ell(ell).exact_model(exact);
        for (line, toks) in data {
            let perr = |msg: String| Error::ModelParse { line, msg };
            let nidx = match toks[0] {
                "R0i0j" => 2,
                "Rikjl" => 4,
                _ => 3,
            };
            if toks.len() != 1 + nidx + 3 {
                return Err(perr(format!("`{}` expects {} indices, a harmonic and two coefficients", toks[0], nidx)));
            }
            let mut idx = Vec::with_capacity(nidx);
            for t in &toks[1..=nidx] {
                let v: usize = t.parse().map_err(|_| perr(format!("bad index `{t}`")))?;
                if v == 0 || v > n {
                    return Err(perr(format!("index {v} outside 1..={n}")));
                }
                idx.push(v - 1);
            }
            let h: usize = toks[nidx + 1].parse().map_err(|_| perr(format!("bad harmonic `{}`", toks[nidx + 1])))?;
            let c: f64 = toks[nidx + 2].parse().map_err(|_| perr(format!("bad coefficient `{}`", toks[nidx + 2])))?;
            let s: f64 = toks[nidx + 3].parse().map_err(|_| perr(format!("bad coefficient `{}`", toks[nidx + 3])))?;
            if h == 0 && s != 0.0 {
                return Err(perr("harmonic 0 has no sine part".into()));
            }
            let wrap = |e: Error| match e {
                Error::CurvatureSymmetry(m) => Error::ModelParse { line, msg: format!("curvature symmetry: {m}") },
                other => other,
            };
            b = match toks[0] {
                "R0i0j" => b.r0i0j(idx[0], idx[1], h, c, s),
                "Rikjl" => b.rikjl(idx[0], idx[1], idx[2], idx[3], h, c, s),
                _ => b.c00(idx[0], idx[1], idx[2], h, c, s),
            }
            .map_err(wrap)?;
        }
        b.build()
    }

    /// Writes the model in the format read by [`ModelMetric::parse`].
    pub fn to_text(&self) -> String {
        let n = self.n;
        let mut out = format!("n {n}\nell {}\nLambda {:?}\nexact_model {}\n", self.ell, self.lambda_len, self.exact_model);
        let mut emit = |key: &str, idx: &[usize], s: &FourierSeries| {
            for (h, &(c, sn)) in s.terms.iter().enumerate() {
                if c != 0.0 || sn != 0.0 {
                    let ids: Vec<String> = idx.iter().map(|i| (i + 1).to_string()).collect();
                    out.push_str(&format!("{key} {} {h} {c:?} {sn:?}\n", ids.join(" ")));
                }
            }
        };
        for i in 0..n {
            for j in i..n {
                emit("R0i0j", &[i, j], &self.r0i0j[i * n + j]);
            }
        }
        for k in 0..n {
            for i in 0..n {
                for l in 0..n {
                    for j in 0..n {
                        emit("Rikjl", &[k, i, l, j], &self.rikjl[((k * n + i) * n + l) * n + j]);
                    }
                }
            }
        }
        for k in 0..n {
            for l in k..n {
                for m in l..n {
                    emit("C00", &[k, l, m], &self.c00[(k * n + l) * n + m]);
                }
            }
        }
        out
    }

    /// Returns a copy with every curvature coefficient multiplied by `s`.
    pub fn scaled_curvature(&self, s: f64) -> Self {
        let mut m = self.clone();
        for v in m.r0i0j.iter_mut().chain(m.rikjl.iter_mut()).chain(m.c00.iter_mut()) {
            *v = v.scaled(s);
        }
        m.r_max = 0.45 * m.positivity_radius();
        m
    }
}

fn ricci_from(c: &CurvatureAt, u: &[f64]) -> f64 {
    let n = c.n;
    let mut s = 0.0;
    for k in 0..n {
        for l in 0..n {
            let uu = u[k] * u[l];
            s += c.a[k * n + l] * uu;
            for i in 0..n {
                s += c.t[((k * n + i) * n + l) * n + i] * uu;
            }
        }
    }
    -s
}

/// Unit directions used for the positivity scan: coordinate axes, pairwise
/// diagonals, and a fixed circle sample in each coordinate 2-plane.
fn sample_directions(n: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        out.push(e.clone());
        e[i] = -1.0;
        out.push(e);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            for t in 0..16 {
                let a = 2.0 * PI * t as f64 / 16.0 + 0.1;
                let mut e = vec![0.0; n];
                e[i] = a.cos();
                e[j] = a.sin();
                out.push(e);
            }
        }
    }
    out
}
