//! Perturbed tubes `T_ρ(w, Φ)` around Γ (`n = 2`).
//!
//! The tube is the image of `G(x₀, θ) = (x₀, ρ(1 + w)Υ(θ) + Φ(x₀))` with
//! `Υ = (cos θ, sin θ)`. Its mean curvature is computed directly from the
//! chart metric: first fundamental form, inward unit normal, and second
//! fundamental form with the exact Christoffel symbols of the polynomial
//! metric. The kernel is generic over [`Scalar`], so the same code yields the
//! curvature and its exact linearization.
//!
//! Conventions: `H` is the mean of the principal curvatures with respect to
//! the inward normal, so the round cylinder of radius `ρ` has `H = 1/(2ρ)`,
//! and the *residual* is `nρH − (n − 1)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{CurvatureAt, FermiPoint, ModelMetric};
use crate::modes::{decompose, ModeSplit, NormalSection};
use crate::scalar::Scalar;
use crate::spectral::{periodic_grid, Periodic1, Periodic2};

/// A candidate hypersurface `T_ρ(w, Φ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TubeConfiguration {
    pub rho: f64,
    pub w: Periodic2,
    pub phi: NormalSection,
}

impl TubeConfiguration {
    /// The unperturbed tube of radius `rho` with bands `(mx, mt)`.
    pub fn round(rho: f64, lambda: f64, mx: usize, mt: usize) -> Self {
        TubeConfiguration { rho, w: Periodic2::zero(lambda, mx, mt), phi: NormalSection::zero(2, lambda, mx) }
    }

    pub fn lambda(&self) -> f64 {
        self.w.lambda()
    }

    /// Checks `1 + w > 0` and `ρ(1 + max w) + |Φ|_∞ < r_max`.
    pub fn validate(&self, model: &ModelMetric) -> Result<()> {
        if model.n() != 2 || self.phi.n() != 2 {
            return Err(Error::InvalidInput("tube geometry is implemented for n = 2".into()));
        }
        if !(self.rho > 0.0) {
            return Err(Error::InvalidInput(format!("rho must be positive, got {}", self.rho)));
        }
        let (mx, mt) = self.w.modes();
        let nx = (4 * (2 * mx + 1)).next_power_of_two();
        let nt = (4 * (2 * mt + 1)).next_power_of_two();
        let g = self.w.to_grid(nx, nt);
        let (wmin, wmax) = g.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if 1.0 + wmin <= 0.0 {
            return Err(Error::Degenerate(format!("1 + w reaches {:.3e}; the tube is not a graph", 1.0 + wmin)));
        }
        let bound = self.rho * (1.0 + wmax.max(0.0)) + self.phi.sup_norm();
        if bound >= model.r_max() {
            return Err(Error::OutOfChart { r: bound, r_max: model.r_max() });
        }
        Ok(())
    }
}

/// Pointwise jet of the tube data at `(x₀, θ)`.
#[derive(Clone, Copy, Debug)]
pub struct Local<T> {
    pub x0: f64,
    pub theta: f64,
    pub w: T,
    pub w_x: T,
    pub w_t: T,
    pub w_xx: T,
    pub w_xt: T,
    pub w_tt: T,
    pub phi: [T; 2],
    pub dphi: [T; 2],
    pub ddphi: [T; 2],
}

impl Local<f64> {
    /// Evaluates the tube jet at one point (direct Fourier sums).
    pub fn at(tube: &TubeConfiguration, x0: f64, theta: f64) -> Self {
        let w = &tube.w;
        let ev = |f: &Periodic2| f.eval(x0, theta);
        let p1 = |f: &Periodic1| f.eval(x0);
        Local {
            x0,
            theta,
            w: ev(w),
            w_x: ev(&w.derivative(1, 0)),
            w_t: ev(&w.derivative(0, 1)),
            w_xx: ev(&w.derivative(2, 0)),
            w_xt: ev(&w.derivative(1, 1)),
            w_tt: ev(&w.derivative(0, 2)),
            phi: [p1(&tube.phi.phi[0]), p1(&tube.phi.phi[1])],
            dphi: [p1(&tube.phi.phi[0].derivative(1)), p1(&tube.phi.phi[1].derivative(1))],
            ddphi: [p1(&tube.phi.phi[0].derivative(2)), p1(&tube.phi.phi[1].derivative(2))],
        }
    }
}

/// Geometry of the tube at one point, in the `(x₀, θ)` parametrization.
#[derive(Clone, Copy, Debug)]
pub struct PointGeometry<T> {
    /// Chart position `(x₀, x₁, x₂)`.
    pub position: [T; 3],
    /// Tangents `G_{x₀}` and `G_θ`.
    pub tangents: [[T; 3]; 2],
    /// First fundamental form `(I_xx, I_xθ, I_θθ)`.
    pub first: [T; 3],
    /// Second fundamental form `(II_xx, II_xθ, II_θθ)` for the inward normal.
    pub second: [T; 3],
    /// Inward unit normal (contravariant components).
    pub normal: [T; 3],
    /// `nρH − (n − 1)`.
    pub residual: T,
}

fn inverse3<T: Scalar>(g: &[T]) -> ([T; 9], T) {
    let a = |i: usize, j: usize| g[i * 3 + j];
    let c00 = a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1);
    let c01 = a(1, 2) * a(2, 0) - a(1, 0) * a(2, 2);
    let c02 = a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0);
    let det = a(0, 0) * c00 + a(0, 1) * c01 + a(0, 2) * c02;
    let inv = T::cst(1.0) / det;
    let out = [
        c00 * inv,
        (a(0, 2) * a(2, 1) - a(0, 1) * a(2, 2)) * inv,
        (a(0, 1) * a(1, 2) - a(0, 2) * a(1, 1)) * inv,
        c01 * inv,
        (a(0, 0) * a(2, 2) - a(0, 2) * a(2, 0)) * inv,
        (a(0, 2) * a(1, 0) - a(0, 0) * a(1, 2)) * inv,
        c02 * inv,
        (a(0, 1) * a(2, 0) - a(0, 0) * a(2, 1)) * inv,
        (a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0)) * inv,
    ];
    (out, det)
}

/// Mean-curvature kernel at one point.
pub fn point_geometry<T: Scalar>(curv: &CurvatureAt, rho: f64, l: &Local<T>) -> PointGeometry<T> {
    let (s, c) = l.theta.sin_cos();
    let z = T::cst(0.0);
    let one_w = l.w + 1.0;
    let xp = [one_w * (rho * c) + l.phi[0], one_w * (rho * s) + l.phi[1]];
    let ups = [c, s];
    let yv = [-s, c];
    let vec2 = |a: T, b: T, extra: [T; 2]| -> [T; 3] {
        // a·Υ + b·Y + extra in the normal block
        [z, a * ups[0] + b * yv[0] + extra[0], a * ups[1] + b * yv[1] + extra[1]]
    };
    let mut gx = vec2(l.w_x * rho, z, l.dphi);
    gx[0] = T::cst(1.0);
    let gt = vec2(l.w_t * rho, one_w * rho, [z, z]);
    let gxx = vec2(l.w_xx * rho, z, l.ddphi);
    let gxt = vec2(l.w_xt * rho, l.w_x * rho, [z, z]);
    let gtt = vec2(l.w_tt * rho - one_w * rho, l.w_t * (2.0 * rho), [z, z]);

    let jet = curv.jet::<T>(&xp);
    let (ginv, _) = inverse3(&jet.g);
    let nu = [
        gx[1] * gt[2] - gx[2] * gt[1],
        gx[2] * gt[0] - gx[0] * gt[2],
        gx[0] * gt[1] - gx[1] * gt[0],
    ];
    let mut nu_up = [z; 3];
    for a in 0..3 {
        for b in 0..3 {
            nu_up[a] += ginv[a * 3 + b] * nu[b];
        }
    }
    let nn = nu[0] * nu_up[0] + nu[1] * nu_up[1] + nu[2] * nu_up[2];
    let inv_len = T::cst(1.0) / nn.sqrt();
    let gdot = |u: &[T; 3], v: &[T; 3]| {
        let mut acc = z;
        for a in 0..3 {
            for b in 0..3 {
                acc += jet.g(a, b) * u[a] * v[b];
            }
        }
        acc
    };
    // Γ-contraction (g⁻¹ν)^κ Γ_{κ,νλ} as a bilinear form in the tangents
    let mut gam = [z; 9];
    for nu_i in 0..3 {
        for la in nu_i..3 {
            let mut acc = z;
            for k in 0..3 {
                acc += nu_up[k] * jet.christoffel_first(k, nu_i, la);
            }
            gam[nu_i * 3 + la] = acc;
            gam[la * 3 + nu_i] = acc;
        }
    }
    let bil = |u: &[T; 3], v: &[T; 3]| {
        let mut acc = z;
        for a in 0..3 {
            for b in 0..3 {
                acc += gam[a * 3 + b] * u[a] * v[b];
            }
        }
        acc
    };
    let dot = |u: &[T; 3], v: &[T; 3]| u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    let ixx = gdot(&gx, &gx);
    let ixt = gdot(&gx, &gt);
    let itt = gdot(&gt, &gt);
    let iixx = (dot(&nu, &gxx) + bil(&gx, &gx)) * inv_len;
    let iixt = (dot(&nu, &gxt) + bil(&gx, &gt)) * inv_len;
    let iitt = (dot(&nu, &gtt) + bil(&gt, &gt)) * inv_len;
    let det_i = ixx * itt - ixt * ixt;
    let trace = (itt * iixx - ixt * iixt * 2.0 + ixx * iitt) / det_i;
    PointGeometry {
        position: [T::cst(l.x0), xp[0], xp[1]],
        tangents: [gx, gt],
        first: [ixx, ixt, itt],
        second: [iixx, iixt, iitt],
        normal: [nu_up[0] * inv_len, nu_up[1] * inv_len, nu_up[2] * inv_len],
        residual: trace * rho + (-1.0),
    }
}

/// Fermi coordinates of the surface point over `(x₀, θ)`.
pub fn embed(model: &ModelMetric, tube: &TubeConfiguration, x0: f64, theta: f64) -> Result<FermiPoint> {
    let w = tube.w.eval(x0, theta);
    let phi = tube.phi.eval(x0);
    let (s, c) = theta.sin_cos();
    let xp = vec![tube.rho * (1.0 + w) * c + phi[0], tube.rho * (1.0 + w) * s + phi[1]];
    let p = FermiPoint::new(x0, xp);
    if p.r >= model.r_max() {
        return Err(Error::OutOfChart { r: p.r, r_max: model.r_max() });
    }
    Ok(p)
}

/// A symmetric 2 × 2 form in the `(s, θ)` coordinates, `s = x₀/ρ`.
pub type Form2 = [[f64; 2]; 2];

/// `⟨Z_α, Z_β⟩` computed exactly under the chart metric, `(s, θ)` coordinates.
pub fn first_fundamental_form(model: &ModelMetric, tube: &TubeConfiguration, x0: f64, theta: f64) -> Result<Form2> {
    embed(model, tube, x0, theta)?;
    let pg = point_geometry(&model.curvature_at(x0), tube.rho, &Local::at(tube, x0, theta));
    let r = tube.rho;
    let f = [[pg.first[0] * r * r, pg.first[1] * r], [pg.first[1] * r, pg.first[2]]];
    if !(f[0][0] > 0.0 && f[0][0] * f[1][1] - f[0][1] * f[1][0] > 0.0) {
        return Err(Error::Degenerate("first fundamental form is not positive definite".into()));
    }
    Ok(f)
}

/// Leading terms of the expansion of the first fundamental form:
/// `ρ²[1, 0; 0, 1 + ⅓ρ²⟨R(Υ,Y)Υ,Y⟩ + 2w + ⅔ρ⟨R(Υ,Y)Φ,Y⟩]`.
pub fn first_fundamental_form_expansion(model: &ModelMetric, tube: &TubeConfiguration, x0: f64, theta: f64) -> Form2 {
    let (s, c) = theta.sin_cos();
    let ups = [c, s];
    let y = [-s, c];
    let phi = tube.phi.eval(x0);
    let w = tube.w.eval(x0, theta);
    let cv = model.curvature_at(x0);
    let r4 = |a: &[f64; 2], b: &[f64; 2], cc: &[f64], d: &[f64; 2]| {
        let mut acc = 0.0;
        for k in 0..2 {
            for i in 0..2 {
                for l in 0..2 {
                    for j in 0..2 {
                        acc += cv.t[((k * 2 + i) * 2 + l) * 2 + j] * a[k] * b[i] * cc[l] * d[j];
                    }
                }
            }
        }
        acc
    };
    let rho = tube.rho;
    let tt = 1.0 + rho * rho / 3.0 * r4(&ups, &y, &ups, &y) + 2.0 * w + 2.0 * rho / 3.0 * r4(&ups, &y, &phi, &y);
    [[rho * rho, 0.0], [0.0, rho * rho * tt]]
}

/// Frame of the tube at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct TubeFrame {
    /// `Z₀ = ∂_s G`, chart components.
    pub z0: Vec<f64>,
    /// `Z_j = ∂_{θ} G` (one tangent for `n = 2`).
    pub zj: Vec<Vec<f64>>,
    /// Inward unit normal.
    pub normal: Vec<f64>,
    /// `α_j` from the linear system `Σ α_j⟨Y_j,Y_i⟩ = ∂_{y_i}w + (ρ/3)⟨R(Φ,Υ)Υ,Y_i⟩`.
    pub alpha: Vec<f64>,
    /// Measured `Y_j`-components of the normal.
    pub alpha_measured: Vec<f64>,
}

/// Unit normal and tangent frame at `(x₀, θ)`.
pub fn unit_normal(model: &ModelMetric, tube: &TubeConfiguration, x0: f64, theta: f64) -> Result<TubeFrame> {
    first_fundamental_form(model, tube, x0, theta)?;
    let loc = Local::at(tube, x0, theta);
    let cv = model.curvature_at(x0);
    let pg = point_geometry(&cv, tube.rho, &loc);
    let (s, c) = theta.sin_cos();
    let ups = [c, s];
    let y = [-s, c];
    let mut rphi = 0.0;
    for k in 0..2 {
        for i in 0..2 {
            for l in 0..2 {
                for j in 0..2 {
                    rphi += cv.t[((k * 2 + i) * 2 + l) * 2 + j] * loc.phi[k] * ups[i] * ups[l] * y[j];
                }
            }
        }
    }
    let alpha = loc.w_t + tube.rho / 3.0 * rphi;
    let nm = pg.normal;
    Ok(TubeFrame {
        z0: pg.tangents[0].iter().map(|v| v * tube.rho).collect(),
        zj: vec![pg.tangents[1].to_vec()],
        normal: nm.to_vec(),
        alpha: vec![alpha],
        alpha_measured: vec![nm[1] * y[0] + nm[2] * y[1]],
    })
}

/// Grid samples of a tube's jet, row-major `[i·n_θ + j]`.
#[derive(Clone, Debug)]
pub struct TubeSamples {
    pub nx: usize,
    pub nt: usize,
    pub xs: Vec<f64>,
    pub thetas: Vec<f64>,
    pub w: Vec<f64>,
    pub w_x: Vec<f64>,
    pub w_t: Vec<f64>,
    pub w_xx: Vec<f64>,
    pub w_xt: Vec<f64>,
    pub w_tt: Vec<f64>,
    /// `[component][i]`.
    pub phi: [Vec<f64>; 2],
    pub dphi: [Vec<f64>; 2],
    pub ddphi: [Vec<f64>; 2],
}

impl TubeSamples {
    pub fn new(tube: &TubeConfiguration, nx: usize, nt: usize) -> Self {
        let w = &tube.w;
        let gr = |f: Periodic2| f.to_grid(nx, nt);
        let ph = |k: usize, d: u32| tube.phi.phi[k].derivative(d).samples(nx);
        TubeSamples {
            nx,
            nt,
            xs: periodic_grid(tube.lambda(), nx),
            thetas: periodic_grid(2.0 * std::f64::consts::PI, nt),
            w: gr(w.clone()),
            w_x: gr(w.derivative(1, 0)),
            w_t: gr(w.derivative(0, 1)),
            w_xx: gr(w.derivative(2, 0)),
            w_xt: gr(w.derivative(1, 1)),
            w_tt: gr(w.derivative(0, 2)),
            phi: [ph(0, 0), ph(1, 0)],
            dphi: [ph(0, 1), ph(1, 1)],
            ddphi: [ph(0, 2), ph(1, 2)],
        }
    }

    pub fn local(&self, i: usize, j: usize) -> Local<f64> {
        let p = i * self.nt + j;
        Local {
            x0: self.xs[i],
            theta: self.thetas[j],
            w: self.w[p],
            w_x: self.w_x[p],
            w_t: self.w_t[p],
            w_xx: self.w_xx[p],
            w_xt: self.w_xt[p],
            w_tt: self.w_tt[p],
            phi: [self.phi[0][i], self.phi[1][i]],
            dphi: [self.dphi[0][i], self.dphi[1][i]],
            ddphi: [self.ddphi[0][i], self.ddphi[1][i]],
        }
    }
}

/// Residual `nρH − (n − 1)` on an `nx × nt` grid (row-major).
pub fn residual_grid(model: &ModelMetric, tube: &TubeConfiguration, nx: usize, nt: usize) -> Result<Vec<f64>> {
    tube.validate(model)?;
    let smp = TubeSamples::new(tube, nx, nt);
    let rows: Vec<Result<Vec<f64>>> = (0..nx)
        .into_par_iter()
        .map(|i| {
            let cv = model.curvature_at(smp.xs[i]);
            (0..nt)
                .map(|j| {
                    let pg = point_geometry(&cv, tube.rho, &smp.local(i, j));
                    let det = pg.first[0] * pg.first[2] - pg.first[1] * pg.first[1];
                    if !(det > 0.0) || !pg.residual.is_finite() {
                        return Err(Error::Degenerate(format!("singular tube geometry at x0 = {}, theta = {}", smp.xs[i], smp.thetas[j])));
                    }
                    Ok(pg.residual)
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(nx * nt);
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}

/// Mean curvature `H` on an `nx × nt` grid, computed from the chart metric.
pub fn mean_curvature_oracle(model: &ModelMetric, tube: &TubeConfiguration, nx: usize, nt: usize) -> Result<Vec<f64>> {
    let n = model.n() as f64;
    let r = residual_grid(model, tube, nx, nt)?;
    Ok(r.into_iter().map(|v| (v + n - 1.0) / (n * tube.rho)).collect())
}

/// The residual and its structured pieces, band-limited to the tube's band.
#[derive(Clone, Debug)]
pub struct ResidualReport {
    /// Full residual `nρH − (n − 1)`.
    pub residual: Periodic2,
    /// `ρ²(⅔⟨R(Υ,X₀)Υ,X₀⟩ − ⅓Ric(Υ,Υ))`.
    pub f_term: Periodic2,
    /// `−(∂²_s w + Δ_θ w + (n−1)w) − ρ⟨Φ'' + R(Φ,X₀)X₀, Υ⟩`.
    pub linear: Periodic2,
    /// `residual − f_term − linear`.
    pub remainder: Periodic2,
    /// Splitting of the full residual.
    pub split: ModeSplit,
    /// The `ŵ` block of the residual divided by `ρ`.
    pub psi: NormalSection,
    /// Sup of the residual on the evaluation grid.
    pub sup: f64,
}

/// Residual on a 2× oversampled grid, projected back to the tube's band.
pub fn mean_curvature_residual(model: &ModelMetric, tube: &TubeConfiguration) -> Result<ResidualReport> {
    let (mx, mt) = tube.w.modes();
    let mx = mx.max(tube.phi.modes());
    let nx = 2 * (2 * mx + 2).next_power_of_two();
    let nt = 2 * (2 * mt + 2).next_power_of_two();
    residual_report_on(model, tube, nx, nt, mx, mt)
}

/// As [`mean_curvature_residual`] with an explicit evaluation grid and band.
pub fn residual_report_on(model: &ModelMetric, tube: &TubeConfiguration, nx: usize, nt: usize, mx: usize, mt: usize) -> Result<ResidualReport> {
    let lambda = tube.lambda();
    let vals = residual_grid(model, tube, nx, nt)?;
    let sup = vals.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let residual = Periodic2::from_grid(lambda, nx, nt, &vals, mx, mt)?;
    let f_term = forcing_field(model, tube.rho, lambda, nx, nt, mx, mt)?;
    let linear = linear_block(model, tube, nx, nt, mx, mt)?;
    let remainder = residual.sub(&f_term).sub(&linear);
    let split = decompose(&residual);
    let psi = split.w_hat.scaled(1.0 / tube.rho);
    Ok(ResidualReport { residual, f_term, linear, remainder, split, psi, sup })
}

/// `ρ²(⅔⟨R(Υ,X₀)Υ,X₀⟩ − ⅓Ric(Υ,Υ))` projected to the band.
pub fn forcing_field(model: &ModelMetric, rho: f64, lambda: f64, nx: usize, nt: usize, mx: usize, mt: usize) -> Result<Periodic2> {
    let xs = periodic_grid(lambda, nx);
    let ts = periodic_grid(2.0 * std::f64::consts::PI, nt);
    let mut v = Vec::with_capacity(nx * nt);
    for &x in &xs {
        for &t in &ts {
            v.push(rho * rho * model.forcing_coefficient(x, &[t.cos(), t.sin()]));
        }
    }
    Periodic2::from_grid(lambda, nx, nt, &v, mx, mt)
}

/// The linear block `−(∂²_s w + Δ_θ w + w) − ρ⟨Φ'' − AΦ, Υ⟩` (`n = 2`).
pub fn linear_block(model: &ModelMetric, tube: &TubeConfiguration, nx: usize, nt: usize, mx: usize, mt: usize) -> Result<Periodic2> {
    let rho = tube.rho;
    let w = &tube.w;
    let lw = w.derivative(2, 0).scaled(rho * rho).add(&w.derivative(0, 2)).add(w).scaled(-1.0);
    let jphi = geodesic_jacobi_apply(model, &tube.phi, nx);
    let xs = periodic_grid(tube.lambda(), nx);
    let ts = periodic_grid(2.0 * std::f64::consts::PI, nt);
    let j0 = jphi.phi[0].samples(nx);
    let j1 = jphi.phi[1].samples(nx);
    let mut v = Vec::with_capacity(nx * nt);
    for i in 0..xs.len() {
        for &t in &ts {
            v.push(-rho * (j0[i] * t.cos() + j1[i] * t.sin()));
        }
    }
    let phipart = Periodic2::from_grid(tube.lambda(), nx, nt, &v, mx, mt)?;
    Ok(lw.with_modes(mx, mt).add(&phipart))
}

/// `𝔍Φ = Φ'' + R(Φ,X₀)X₀ = Φ'' − AΦ`, with the product evaluated on `nx` points.
pub fn geodesic_jacobi_apply(model: &ModelMetric, phi: &NormalSection, nx: usize) -> NormalSection {
    let n = phi.n();
    let modes = phi.modes();
    let lambda = phi.lambda();
    let xs = periodic_grid(lambda, nx);
    let samples: Vec<Vec<f64>> = phi.phi.iter().map(|p| p.samples(nx)).collect();
    let mut out = Vec::with_capacity(n);
    for a in 0..n {
        let mut v = vec![0.0; nx];
        for (i, &x) in xs.iter().enumerate() {
            let am = model.a_matrix(x);
            for b in 0..n {
                v[i] -= am[a * n + b] * samples[b][i];
            }
        }
        let ap = Periodic1::from_samples(lambda, &v, modes).expect("grid covers band");
        out.push(phi.phi[a].derivative(2).add(&ap));
    }
    NormalSection { phi: out }
}
