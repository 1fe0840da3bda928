//! The three linear inverses used by the fixed-point scheme.
//!
//! * `(L)₀ = ∂²_s + (n − 1)` on fibre-constant functions, `s = x₀/ρ`;
//! * `L̃ = ∂²_s + Δ_θ + (n − 1)` on sphere degree ≥ 2;
//! * the geodesic Jacobi operator `𝔍Φ = Φ'' + R(Φ,X₀)X₀ = Φ'' − AΦ`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelMetric;
use crate::modes::NormalSection;
use crate::spectral::{periodic_grid, second_derivative_matrix, Periodic1, Periodic2};

/// Distance of a radius from the resonant set `√(n−1)Λ/ρ ∈ 2πℤ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceInfo {
    pub rho: f64,
    /// `√(n−1)Λ/ρ mod 2π`.
    pub phase: f64,
    /// Distance of `√(n−1)Λ/ρ` to the nearest multiple of `2π`.
    pub distance_to_resonance: f64,
    /// `1 − cos(√(n−1)Λ/ρ)`.
    pub small_divisor: f64,
}

impl ResonanceInfo {
    pub fn new(rho: f64, n: usize, lambda: f64) -> Self {
        let q = ((n - 1) as f64).sqrt() * lambda / rho;
        let phase = q.rem_euclid(2.0 * PI);
        let distance_to_resonance = phase.min(2.0 * PI - phase);
        // 1 − cos x = 2 sin²(x/2) keeps full relative precision near zero
        let small_divisor = 2.0 * (0.5 * distance_to_resonance).sin().powi(2);
        ResonanceInfo { rho, phase, distance_to_resonance, small_divisor }
    }
}

fn check_resonance(rho: f64, n: usize, lambda: f64, delta_res: f64) -> Result<ResonanceInfo> {
    let info = ResonanceInfo::new(rho, n, lambda);
    if info.small_divisor <= delta_res {
        return Err(Error::Resonant { rho, small_divisor: info.small_divisor, threshold: delta_res });
    }
    Ok(info)
}

/// Solves `(∂²_s + (n−1)) v = f` by the diagonal Fourier formula
/// `v̂_m = f̂_m / ((n−1) − ω_m²)`, `ω_m = 2πmρ/Λ`.
pub fn solve_l0(f0: &Periodic1, rho: f64, n: usize, delta_res: f64) -> Result<Periodic1> {
    check_resonance(rho, n, f0.lambda(), delta_res)?;
    let w = f0.kappa() * rho;
    let nu2 = (n - 1) as f64;
    Ok(f0.map_symbol(|m| {
        let om = w * m as f64;
        1.0 / (nu2 - om * om)
    }))
}

/// `∫₀^s e^{iaσ} dσ`.
fn exp_integral(a: f64, s: f64) -> Complex64 {
    if a.abs() * s.abs() < 1e-8 {
        return Complex64::new(s, 0.5 * a * s * s);
    }
    let i = Complex64::new(0.0, 1.0);
    ((i * a * s).exp() - 1.0) / (i * a)
}

/// Solves `(∂²_s + (n−1)) v = f` with the variation-of-parameters formula
///
/// ```text
/// ν v(s) = sin(νs)(α + ∫₀^s cos(νσ) f dσ) − cos(νs)(β + ∫₀^s sin(νσ) f dσ),   ν = √(n−1),
/// ```
///
/// the constants `α, β` fixed by `Λ/ρ`-periodicity. The integrals are
/// evaluated mode by mode in closed form; the result is sampled on `samples`
/// points and projected back to the band of `f0`.
pub fn solve_l0_variation(f0: &Periodic1, rho: f64, n: usize, delta_res: f64, samples: usize) -> Result<Periodic1> {
    check_resonance(rho, n, f0.lambda(), delta_res)?;
    let nu = ((n - 1) as f64).sqrt();
    let mu_unit = f0.kappa() * rho;
    let modes = f0.modes() as isize;
    let integrals = |s: f64| -> (f64, f64) {
        let mut ic = Complex64::new(0.0, 0.0);
        let mut is = Complex64::new(0.0, 0.0);
        for m in -modes..=modes {
            let c = f0.coef(m);
            if c.norm() == 0.0 {
                continue;
            }
            let mu = mu_unit * m as f64;
            let ep = exp_integral(mu + nu, s);
            let em = exp_integral(mu - nu, s);
            ic += c * (ep + em) * 0.5;
            is += c * (ep - em) * Complex64::new(0.0, -0.5);
        }
        (ic.re, is.re)
    };
    let period = f0.lambda() / rho;
    let (cp, sp) = ((nu * period).cos(), (nu * period).sin());
    let (icp, isp) = integrals(period);
    // [S, 1−C; C−1, S] (α, β)ᵀ = (C·Is − S·Ic, −C·Ic − S·Is)ᵀ
    let det = sp * sp + (1.0 - cp) * (1.0 - cp);
    let r1 = cp * isp - sp * icp;
    let r2 = -cp * icp - sp * isp;
    let alpha = (sp * r1 - (1.0 - cp) * r2) / det;
    let beta = ((1.0 - cp) * r1 + sp * r2) / det;
    let xs = periodic_grid(f0.lambda(), samples);
    let vals: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let s = x / rho;
            let (ic, is) = integrals(s);
            ((nu * s).sin() * (alpha + ic) - (nu * s).cos() * (beta + is)) / nu
        })
        .collect();
    Periodic1::from_samples(f0.lambda(), &vals, f0.modes())
}

/// Solves `(∂²_s + Δ_θ + (n−1)) w̃ = f̃` on sphere degree ≥ 2 (`n = 2`).
pub fn solve_tilde(f_tilde: &Periodic2, rho: f64) -> Result<Periodic2> {
    let (mx, mt) = f_tilde.modes();
    let scale = f_tilde.max_coef_where(|_| true).max(1.0);
    let low = f_tilde.max_coef_where(|q| q <= 1);
    if low > 1e-12 * scale {
        return Err(Error::BlockViolation(format!("sphere degree 0/1 content of size {low:.3e}")));
    }
    let w = f_tilde.kappa() * rho;
    let mut out = Periodic2::zero(f_tilde.lambda(), mx, mt);
    for m in -(mx as isize)..=mx as isize {
        for q in -(mt as isize)..=mt as isize {
            if q.unsigned_abs() < 2 {
                continue;
            }
            let om = w * m as f64;
            let d = 1.0 - (q * q) as f64 - om * om;
            *out.coef_mut(m, q) = f_tilde.coef(m, q) / d;
        }
    }
    Ok(out)
}

/// Collocation matrix of `𝔍 = ∂² − A` on `nx` points, block layout
/// `[component·nx + i]`.
pub fn geodesic_jacobi_matrix(model: &ModelMetric, nx: usize) -> DMatrix<f64> {
    let n = model.n();
    let d2 = second_derivative_matrix(model.lambda_len(), nx);
    let xs = periodic_grid(model.lambda_len(), nx);
    let mut m = DMatrix::zeros(n * nx, n * nx);
    for a in 0..n {
        for i in 0..nx {
            for j in 0..nx {
                m[(a * nx + i, a * nx + j)] = d2[i * nx + j];
            }
        }
    }
    for (i, &x) in xs.iter().enumerate() {
        let am = model.a_matrix(x);
        for a in 0..n {
            for b in 0..n {
                m[(a * nx + i, b * nx + i)] -= am[a * n + b];
            }
        }
    }
    m
}

/// A factorized geodesic Jacobi operator, reusable across solves.
#[derive(Clone, Debug)]
pub struct GeodesicJacobi {
    n: usize,
    nx: usize,
    lambda: f64,
    modes: usize,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    pub sigma_min: f64,
}

impl GeodesicJacobi {
    /// Factorizes `𝔍` for sections with `modes` Fourier modes.
    pub fn new(model: &ModelMetric, modes: usize, delta_j: f64) -> Result<Self> {
        let nx = (2 * (2 * modes + 1)).next_power_of_two().max(16);
        let m = geodesic_jacobi_matrix(model, nx);
        let sv = m.clone().singular_values();
        let sigma_min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if sigma_min <= delta_j {
            return Err(Error::DegenerateGeodesic { sigma_min, threshold: delta_j });
        }
        Ok(GeodesicJacobi { n: model.n(), nx, lambda: model.lambda_len(), modes, lu: m.lu(), sigma_min })
    }

    /// Solves `𝔍Φ = Ψ`.
    pub fn solve(&self, psi: &NormalSection) -> Result<NormalSection> {
        if psi.n() != self.n {
            return Err(Error::InvalidInput(format!("section has {} components, model n = {}", psi.n(), self.n)));
        }
        if psi.modes() > self.modes {
            return Err(Error::GridMismatch { expected: format!("at most {} modes", self.modes), got: format!("{}", psi.modes()) });
        }
        let nx = self.nx;
        let mut rhs = DVector::zeros(self.n * nx);
        for a in 0..self.n {
            for (i, v) in psi.phi[a].samples(nx).into_iter().enumerate() {
                rhs[a * nx + i] = v;
            }
        }
        let sol = self.lu.solve(&rhs).ok_or(Error::DegenerateGeodesic { sigma_min: self.sigma_min, threshold: 0.0 })?;
        let phi = (0..self.n)
            .map(|a| Periodic1::from_samples(self.lambda, &sol.as_slice()[a * nx..(a + 1) * nx], self.modes))
            .collect::<Result<Vec<_>>>()?;
        Ok(NormalSection { phi })
    }
}

/// Solves `Φ'' + R(Φ,X₀)X₀ = Ψ`.
pub fn solve_geodesic_jacobi(psi: &NormalSection, model: &ModelMetric, delta_j: f64) -> Result<NormalSection> {
    GeodesicJacobi::new(model, psi.modes(), delta_j)?.solve(psi)
}

/// Which inverse norm of `(L)₀` to measure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    /// `sup ‖v‖_∞ / ‖f‖_∞`.
    L0Sup,
    /// `sup ‖v‖_∞ / (‖f‖_∞ + ‖∂_s f‖_∞)`.
    L0Derivative,
}

/// `1 + 1/(ρ(1 − cos(√(n−1)Λ/ρ)))`, the shape of the inverse bound.
pub fn inverse_bound_profile(rho: f64, n: usize, lambda: f64) -> f64 {
    1.0 + 1.0 / (rho * ResonanceInfo::new(rho, n, lambda).small_divisor)
}

/// Measured operator norm of `(L)₀⁻¹` over pure modes and `trials` seeded
/// random band-limited inputs.
pub fn estimate_inverse_norm(rho: f64, n: usize, lambda: f64, which: NormKind, seed: u64, trials: usize) -> Result<f64> {
    let nu = ((n - 1) as f64).sqrt();
    let kappa = 2.0 * PI / lambda;
    let m_res = (nu / (rho * kappa)).ceil() as usize;
    let modes = m_res + 4;
    let mut inputs: Vec<Periodic1> = Vec::new();
    for m in 0..=modes {
        let mut c = Periodic1::zero(lambda, modes);
        *c.coef_mut(m as isize) += Complex64::new(0.5, 0.0);
        *c.coef_mut(-(m as isize)) += Complex64::new(0.5, 0.0);
        inputs.push(c);
        if m > 0 {
            let mut s = Periodic1::zero(lambda, modes);
            *s.coef_mut(m as isize) = Complex64::new(0.0, -0.5);
            *s.coef_mut(-(m as isize)) = Complex64::new(0.0, 0.5);
            inputs.push(s);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let mut f = Periodic1::zero(lambda, modes);
        for m in 0..=modes as isize {
            let a: f64 = rng.gen_range(-1.0..1.0);
            let b: f64 = if m == 0 { 0.0 } else { rng.gen_range(-1.0..1.0) };
            *f.coef_mut(m) = Complex64::new(a, b);
            if m > 0 {
                *f.coef_mut(-m) = Complex64::new(a, -b);
            }
        }
        inputs.push(f);
    }
    let mut best = 0.0_f64;
    for f in &inputs {
        let v = solve_l0(f, rho, n, 0.0)?;
        let denom = match which {
            NormKind::L0Sup => f.sup_norm(),
            NormKind::L0Derivative => f.sup_norm() + rho * f.derivative(1).sup_norm(),
        };
        if denom > 0.0 {
            best = best.max(v.sup_norm() / denom);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variation_of_parameters_agrees_with_fourier() {
        let lam = 2.0 * PI;
        let f = Periodic1::from_fn(lam, 10, |x| 0.3 + x.cos() - 0.4 * (3.0 * x).sin() + 0.1 * (7.0 * x).cos());
        let rho = 0.183;
        let a = solve_l0(&f, rho, 2, 1e-6).unwrap();
        let b = solve_l0_variation(&f, rho, 2, 1e-6, 64).unwrap();
        assert!(a.sub(&b).sup_norm() < 1e-11 * a.sup_norm().max(1.0), "{}", a.sub(&b).sup_norm());
    }
}
