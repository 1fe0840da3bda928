//! Functions on the normal circle bundle `SNΓ ≅ S¹(Λ) × S^{n−1}` and their
//! three-way splitting `w = w₀ + ŵ + w̃`.
//!
//! `w₀` is the fibrewise mean, `ŵ` the part spanned by the restrictions of
//! linear functions `θ_j` (identified with a normal section `Φ = Σ φ_j X_j`),
//! and `w̃` everything of sphere degree at least two. Explicit harmonics are
//! used for `n = 2`, where `θ₁ = cos θ`, `θ₂ = sin θ`; other `n` are covered by
//! [`SphereBasis`] eigenvalue tables.

use crate::error::{Error, Result};
use crate::spectral::{Periodic1, Periodic2};

/// One eigenspace of the sphere Laplacian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SphereMode {
    pub j: usize,
    /// `λ_j² = j(n − 2 + j)`.
    pub lambda_sq: f64,
    pub multiplicity: usize,
}

/// Eigenvalues of `−Δ` on `S^{n−1}` up to degree `j_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct SphereBasis {
    pub n: usize,
    pub entries: Vec<SphereMode>,
}

fn binomial(n: i64, k: i64) -> usize {
    if k < 0 || n < 0 || k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}

impl SphereBasis {
    pub fn new(n: usize, j_max: usize) -> Self {
        assert!(n >= 2, "the normal sphere S^(n-1) needs n >= 2");
        let entries = (0..=j_max)
            .map(|j| {
                let (ni, ji) = (n as i64, j as i64);
                SphereMode {
                    j,
                    lambda_sq: (j * (n - 2 + j)) as f64,
                    multiplicity: binomial(ni - 1 + ji, ji) - binomial(ni - 3 + ji, ji - 2),
                }
            })
            .collect();
        SphereBasis { n, entries }
    }

    pub fn lambda_sq(&self, j: usize) -> f64 {
        (j * (self.n - 2 + j)) as f64
    }
}

/// A section `Φ = Σ φ_j X_j` of the normal bundle of Γ.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalSection {
    pub phi: Vec<Periodic1>,
}

impl NormalSection {
    pub fn zero(n: usize, lambda: f64, modes: usize) -> Self {
        NormalSection { phi: vec![Periodic1::zero(lambda, modes); n] }
    }

    /// Constant section with components `a`.
    pub fn constant(a: &[f64], lambda: f64, modes: usize) -> Self {
        NormalSection { phi: a.iter().map(|&c| Periodic1::constant(lambda, modes, c)).collect() }
    }

    pub fn n(&self) -> usize {
        self.phi.len()
    }

    pub fn lambda(&self) -> f64 {
        self.phi[0].lambda()
    }

    pub fn modes(&self) -> usize {
        self.phi.iter().map(Periodic1::modes).max().unwrap_or(0)
    }

    /// Components at `x₀`.
    pub fn eval(&self, x0: f64) -> Vec<f64> {
        self.phi.iter().map(|p| p.eval(x0)).collect()
    }

    pub fn derivative(&self, order: u32) -> Self {
        NormalSection { phi: self.phi.iter().map(|p| p.derivative(order)).collect() }
    }

    pub fn scaled(&self, s: f64) -> Self {
        NormalSection { phi: self.phi.iter().map(|p| p.scaled(s)).collect() }
    }

    pub fn add(&self, o: &Self) -> Self {
        NormalSection { phi: self.phi.iter().zip(&o.phi).map(|(a, b)| a.add(b)).collect() }
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.add(&o.scaled(-1.0))
    }

    pub fn with_modes(&self, modes: usize) -> Self {
        NormalSection { phi: self.phi.iter().map(|p| p.with_modes(modes)).collect() }
    }

    /// `sup_{x₀} |Φ(x₀)|` (Euclidean length in the frame), on an oversampled grid.
    pub fn sup_norm(&self) -> f64 {
        let n = (4 * (2 * self.modes() + 1)).next_power_of_two();
        let s: Vec<Vec<f64>> = self.phi.iter().map(|p| p.samples(n)).collect();
        (0..n).map(|i| s.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt()).fold(0.0, f64::max)
    }

    /// Sum of the components' graded norms.
    pub fn graded_norm(&self, scale: f64) -> f64 {
        self.phi.iter().map(|p| p.graded_norm(scale)).sum()
    }

    pub fn mean_square(&self) -> f64 {
        self.phi.iter().map(Periodic1::mean_square).sum()
    }
}

/// The splitting `w = w₀ + ŵ + w̃` of a field on `SNΓ` (`n = 2`).
#[derive(Clone, Debug, PartialEq)]
pub struct ModeSplit {
    pub w0: Periodic1,
    /// `ŵ = φ₁ cos θ + φ₂ sin θ`.
    pub w_hat: NormalSection,
    /// θ-degree ≥ 2 part.
    pub w_tilde: Periodic2,
}

/// A uniform `N_s × N_θ` sampling grid with a target band.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub lambda: f64,
    pub nx: usize,
    pub nt: usize,
    pub mx: usize,
    pub mt: usize,
}

impl GridSpec {
    /// Grid with the largest band that avoids the Nyquist modes.
    pub fn new(lambda: f64, nx: usize, nt: usize) -> Self {
        GridSpec { lambda, nx, nt, mx: (nx - 1) / 2, mt: (nt - 1) / 2 }
    }
}

impl ModeSplit {
    pub fn zero(lambda: f64, mx: usize, mt: usize) -> Self {
        ModeSplit {
            w0: Periodic1::zero(lambda, mx),
            w_hat: NormalSection::zero(2, lambda, mx),
            w_tilde: Periodic2::zero(lambda, mx, mt),
        }
    }

    /// `w₀ + ŵ + w̃` as one field.
    pub fn reassemble(&self) -> Periodic2 {
        let (mx, mt) = self.w_tilde.modes();
        let mx = mx.max(self.w0.modes()).max(self.w_hat.modes());
        Periodic2::from_periodic1(&self.w0, mt.max(1))
            .add(&section_to_linear_mode(&self.w_hat, mt.max(1)))
            .add(&self.w_tilde)
            .with_modes(mx, mt.max(1))
    }
}

/// Splits a band-limited field on `SNΓ` (`n = 2`).
pub fn decompose(w: &Periodic2) -> ModeSplit {
    let (mx, _) = w.modes();
    let (c0, _) = w.theta_mode(0);
    let (re1, im1) = w.theta_mode(1);
    // c₁ = (a − i b)/2 for a cos θ + b sin θ
    let w_hat = NormalSection { phi: vec![re1.scaled(2.0), im1.scaled(-2.0)] };
    let w_tilde = w.filter_theta(|q| q >= 2);
    ModeSplit { w0: c0.with_modes(mx), w_hat, w_tilde }
}

/// Splits row-major grid samples `values[i·N_θ + j]`.
pub fn decompose_samples(grid: &GridSpec, values: &[f64]) -> Result<ModeSplit> {
    if values.len() != grid.nx * grid.nt {
        return Err(Error::GridMismatch {
            expected: format!("{}x{} samples", grid.nx, grid.nt),
            got: format!("{} samples", values.len()),
        });
    }
    let w = Periodic2::from_grid(grid.lambda, grid.nx, grid.nt, values, grid.mx, grid.mt)?;
    Ok(decompose(&w))
}

/// `ĥ(x₀, θ) = Σ_j φ_j(x₀) θ_j` for `n = 2`.
pub fn section_to_linear_mode(phi: &NormalSection, mt: usize) -> Periodic2 {
    assert_eq!(phi.n(), 2, "explicit harmonics are implemented for n = 2");
    let mx = phi.modes();
    let mut out = Periodic2::zero(phi.lambda(), mx, mt.max(1));
    for m in -(mx as isize)..=mx as isize {
        let a = phi.phi[0].coef(m);
        let b = phi.phi[1].coef(m);
        // a cos θ + b sin θ = (a − i b)/2 e^{iθ} + (a + i b)/2 e^{−iθ}, per x₀-mode
        let i = num_complex::Complex64::new(0.0, 1.0);
        *out.coef_mut(m, 1) = (a - i * b) * 0.5;
        *out.coef_mut(m, -1) = (a + i * b) * 0.5;
    }
    out
}
