//! Band-limited periodic fields on the circle `[0, Λ)` and on the product
//! `[0, Λ) × S¹`.
//!
//! Fields are stored as complex Fourier coefficients over signed modes
//! `|m| ≤ M` (and `|q| ≤ Q` in θ). They come from real samples, and every
//! operator here preserves Hermitian symmetry, so grid values are recovered by
//! taking real parts. Grids are uniform: `x₀ᵢ = iΛ/N`, `θⱼ = 2πj/N_θ`.

use std::cell::RefCell;
use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_in_place(data: &mut [Complex64], inverse: bool) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        let plan = if inverse {
            p.plan_fft_inverse(data.len())
        } else {
            p.plan_fft_forward(data.len())
        };
        plan.process(data);
    });
}

/// Position of signed mode `m` in an FFT buffer of length `n`.
#[inline]
fn fft_slot(m: isize, n: usize) -> usize {
    if m >= 0 {
        m as usize
    } else {
        (n as isize + m) as usize
    }
}

/// Sample points `iΛ/N` of the periodic coordinate.
pub fn periodic_grid(lambda: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 * lambda / n as f64).collect()
}

/// A real band-limited periodic function of `x₀ ∈ [0, Λ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Periodic1 {
    lambda: f64,
    modes: usize,
    coef: Vec<Complex64>,
}

impl Periodic1 {
    pub fn zero(lambda: f64, modes: usize) -> Self {
        Periodic1 { lambda, modes, coef: vec![Complex64::new(0.0, 0.0); 2 * modes + 1] }
    }

    pub fn constant(lambda: f64, modes: usize, c: f64) -> Self {
        let mut f = Self::zero(lambda, modes);
        f.coef[modes] = Complex64::new(c, 0.0);
        f
    }

    /// Projects uniform samples onto modes `|m| ≤ modes`.
    pub fn from_samples(lambda: f64, samples: &[f64], modes: usize) -> Result<Self> {
        let n = samples.len();
        if n < 2 * modes + 1 {
            return Err(Error::GridMismatch {
                expected: format!("at least {} samples", 2 * modes + 1),
                got: format!("{n}"),
            });
        }
        let mut buf: Vec<Complex64> = samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft_in_place(&mut buf, false);
        let scale = 1.0 / n as f64;
        let coef = (-(modes as isize)..=modes as isize)
            .map(|m| buf[fft_slot(m, n)] * scale)
            .collect();
        Ok(Periodic1 { lambda, modes, coef })
    }

    /// Builds a function from a closure sampled on a grid fine enough for `modes`.
    pub fn from_fn(lambda: f64, modes: usize, f: impl Fn(f64) -> f64) -> Self {
        let n = (2 * modes + 1).next_power_of_two() * 2;
        let xs = periodic_grid(lambda, n);
        let s: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        Self::from_samples(lambda, &s, modes).expect("grid sized for the band")
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    /// Wavenumber unit `2π/Λ`.
    pub fn kappa(&self) -> f64 {
        2.0 * PI / self.lambda
    }

    /// Coefficient of signed mode `m` (zero outside the band).
    pub fn coef(&self, m: isize) -> Complex64 {
        if m.unsigned_abs() > self.modes {
            Complex64::new(0.0, 0.0)
        } else {
            self.coef[(m + self.modes as isize) as usize]
        }
    }

    pub fn coef_mut(&mut self, m: isize) -> &mut Complex64 {
        let idx = (m + self.modes as isize) as usize;
        &mut self.coef[idx]
    }

    /// Samples on an `n`-point uniform grid.
    pub fn samples(&self, n: usize) -> Vec<f64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for m in -(self.modes as isize)..=self.modes as isize {
            if 2 * m.unsigned_abs() >= n && m != 0 {
                continue;
            }
            buf[fft_slot(m, n)] += self.coef(m);
        }
        fft_in_place(&mut buf, true);
        buf.iter().map(|c| c.re).collect()
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = self.kappa();
        let mut s = self.coef(0).re;
        for m in 1..=self.modes as isize {
            let c = self.coef(m);
            let ph = k * m as f64 * x;
            s += 2.0 * (c.re * ph.cos() - c.im * ph.sin());
        }
        s
    }

    /// `d^order/dx₀^order`.
    pub fn derivative(&self, order: u32) -> Self {
        let k = self.kappa();
        let mut out = self.clone();
        for m in -(self.modes as isize)..=self.modes as isize {
            let ik = Complex64::new(0.0, k * m as f64);
            *out.coef_mut(m) = self.coef(m) * ik.powu(order);
        }
        out
    }

    /// Same function with a different band (truncating or zero-extending).
    pub fn with_modes(&self, modes: usize) -> Self {
        let mut out = Self::zero(self.lambda, modes);
        for m in -(modes.min(self.modes) as isize)..=modes.min(self.modes) as isize {
            *out.coef_mut(m) = self.coef(m);
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.coef.iter_mut().for_each(|c| *c *= s);
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        let modes = self.modes.max(other.modes);
        let mut out = Self::zero(self.lambda, modes);
        for m in -(modes as isize)..=modes as isize {
            *out.coef_mut(m) = self.coef(m) + other.coef(m);
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scaled(-1.0))
    }

    /// Applies a real symbol `σ(m)` mode by mode.
    pub fn map_symbol(&self, sigma: impl Fn(isize) -> f64) -> Self {
        let mut out = self.clone();
        for m in -(self.modes as isize)..=self.modes as isize {
            *out.coef_mut(m) = self.coef(m) * sigma(m);
        }
        out
    }

    /// Sup norm on a 4× oversampled grid.
    pub fn sup_norm(&self) -> f64 {
        let n = (4 * (2 * self.modes + 1)).next_power_of_two();
        self.samples(n).iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    /// `Σ |c_m|²` (mean square of the function).
    pub fn mean_square(&self) -> f64 {
        self.coef.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Graded spectral norm `Σ (1 + |ω_m|)² |c_m|`, with `ω_m = m·2π/Λ·scale`.
    ///
    /// `scale = ρ` measures frequencies in the stretched variable `s = x₀/ρ`.
    pub fn graded_norm(&self, scale: f64) -> f64 {
        let k = self.kappa() * scale;
        (-(self.modes as isize)..=self.modes as isize)
            .map(|m| {
                let g = 1.0 + (k * m as f64).abs();
                g * g * self.coef(m).norm()
            })
            .sum()
    }
}

/// A real band-limited function of `(x₀, θ) ∈ [0, Λ) × [0, 2π)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Periodic2 {
    lambda: f64,
    mx: usize,
    mt: usize,
    coef: Vec<Complex64>,
}

impl Periodic2 {
    pub fn zero(lambda: f64, mx: usize, mt: usize) -> Self {
        Periodic2 { lambda, mx, mt, coef: vec![Complex64::new(0.0, 0.0); (2 * mx + 1) * (2 * mt + 1)] }
    }

    #[inline]
    fn idx(&self, m: isize, q: isize) -> usize {
        (m + self.mx as isize) as usize * (2 * self.mt + 1) + (q + self.mt as isize) as usize
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn modes(&self) -> (usize, usize) {
        (self.mx, self.mt)
    }

    pub fn kappa(&self) -> f64 {
        2.0 * PI / self.lambda
    }

    pub fn coef(&self, m: isize, q: isize) -> Complex64 {
        if m.unsigned_abs() > self.mx || q.unsigned_abs() > self.mt {
            Complex64::new(0.0, 0.0)
        } else {
            self.coef[self.idx(m, q)]
        }
    }

    pub fn coef_mut(&mut self, m: isize, q: isize) -> &mut Complex64 {
        let i = self.idx(m, q);
        &mut self.coef[i]
    }

    /// Projects row-major samples `values[i·n_θ + j]` onto the band.
    pub fn from_grid(lambda: f64, nx: usize, nt: usize, values: &[f64], mx: usize, mt: usize) -> Result<Self> {
        if values.len() != nx * nt {
            return Err(Error::GridMismatch {
                expected: format!("{nx}x{nt} = {} values", nx * nt),
                got: format!("{} values", values.len()),
            });
        }
        if nx < 2 * mx + 1 || nt < 2 * mt + 1 {
            return Err(Error::GridMismatch {
                expected: format!("grid of at least {}x{}", 2 * mx + 1, 2 * mt + 1),
                got: format!("{nx}x{nt}"),
            });
        }
        let buf = fft2(values, nx, nt, false);
        let scale = 1.0 / (nx * nt) as f64;
        let mut out = Self::zero(lambda, mx, mt);
        for m in -(mx as isize)..=mx as isize {
            for q in -(mt as isize)..=mt as isize {
                *out.coef_mut(m, q) = buf[fft_slot(m, nx) * nt + fft_slot(q, nt)] * scale;
            }
        }
        Ok(out)
    }

    pub fn from_fn(lambda: f64, mx: usize, mt: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        let nx = (2 * mx + 1).next_power_of_two() * 2;
        let nt = (2 * mt + 1).next_power_of_two() * 2;
        let xs = periodic_grid(lambda, nx);
        let ts = periodic_grid(2.0 * PI, nt);
        let mut v = Vec::with_capacity(nx * nt);
        for &x in &xs {
            for &t in &ts {
                v.push(f(x, t));
            }
        }
        Self::from_grid(lambda, nx, nt, &v, mx, mt).expect("grid sized for the band")
    }

    /// Function of `x₀` alone, constant in θ.
    pub fn from_periodic1(f: &Periodic1, mt: usize) -> Self {
        let mut out = Self::zero(f.lambda(), f.modes(), mt);
        for m in -(f.modes() as isize)..=f.modes() as isize {
            *out.coef_mut(m, 0) = f.coef(m);
        }
        out
    }

    /// Row-major samples on an `nx × nt` grid.
    pub fn to_grid(&self, nx: usize, nt: usize) -> Vec<f64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); nx * nt];
        for m in -(self.mx as isize)..=self.mx as isize {
            if m != 0 && 2 * m.unsigned_abs() >= nx {
                continue;
            }
            for q in -(self.mt as isize)..=self.mt as isize {
                if q != 0 && 2 * q.unsigned_abs() >= nt {
                    continue;
                }
                buf[fft_slot(m, nx) * nt + fft_slot(q, nt)] += self.coef(m, q);
            }
        }
        let out = ifft2(buf, nx, nt);
        out.iter().map(|c| c.re).collect()
    }

    pub fn eval(&self, x: f64, theta: f64) -> f64 {
        let k = self.kappa();
        let mut s = 0.0;
        for m in -(self.mx as isize)..=self.mx as isize {
            for q in -(self.mt as isize)..=self.mt as isize {
                let c = self.coef(m, q);
                let ph = k * m as f64 * x + q as f64 * theta;
                s += c.re * ph.cos() - c.im * ph.sin();
            }
        }
        s
    }

    /// `∂^dx_{x₀} ∂^dt_θ`.
    pub fn derivative(&self, dx: u32, dt: u32) -> Self {
        let k = self.kappa();
        let mut out = self.clone();
        for m in -(self.mx as isize)..=self.mx as isize {
            for q in -(self.mt as isize)..=self.mt as isize {
                let f = Complex64::new(0.0, k * m as f64).powu(dx) * Complex64::new(0.0, q as f64).powu(dt);
                *out.coef_mut(m, q) = self.coef(m, q) * f;
            }
        }
        out
    }

    pub fn with_modes(&self, mx: usize, mt: usize) -> Self {
        let mut out = Self::zero(self.lambda, mx, mt);
        let (ax, at) = (mx.min(self.mx) as isize, mt.min(self.mt) as isize);
        for m in -ax..=ax {
            for q in -at..=at {
                *out.coef_mut(m, q) = self.coef(m, q);
            }
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.coef.iter_mut().for_each(|c| *c *= s);
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        let (mx, mt) = (self.mx.max(other.mx), self.mt.max(other.mt));
        let mut out = Self::zero(self.lambda, mx, mt);
        for m in -(mx as isize)..=mx as isize {
            for q in -(mt as isize)..=mt as isize {
                *out.coef_mut(m, q) = self.coef(m, q) + other.coef(m, q);
            }
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scaled(-1.0))
    }

    /// Keeps only θ-modes with `|q|` accepted by `keep`.
    pub fn filter_theta(&self, keep: impl Fn(usize) -> bool) -> Self {
        let mut out = self.clone();
        for m in -(self.mx as isize)..=self.mx as isize {
            for q in -(self.mt as isize)..=self.mt as isize {
                if !keep(q.unsigned_abs()) {
                    *out.coef_mut(m, q) = Complex64::new(0.0, 0.0);
                }
            }
        }
        out
    }

    /// The θ-mode-`q` coefficient as a function of `x₀`, i.e. `c_q(x₀)` with
    /// `f = Σ_q c_q(x₀) e^{iqθ}`; returned as (real part, imaginary part).
    pub fn theta_mode(&self, q: isize) -> (Periodic1, Periodic1) {
        let mut re = Periodic1::zero(self.lambda, self.mx);
        let mut im = Periodic1::zero(self.lambda, self.mx);
        for m in -(self.mx as isize)..=self.mx as isize {
            let c = self.coef(m, q);
            let cm = self.coef(-m, q);
            // c_q(x) = Σ_m c_{m,q} e^{imκx}; its real part has coefficients (c_{m,q} + conj c_{-m,q})/2.
            *re.coef_mut(m) = (c + cm.conj()) * 0.5;
            *im.coef_mut(m) = (c - cm.conj()) * Complex64::new(0.0, -0.5);
        }
        (re, im)
    }

    pub fn sup_norm(&self) -> f64 {
        let nx = (4 * (2 * self.mx + 1)).next_power_of_two();
        let nt = (4 * (2 * self.mt + 1)).next_power_of_two();
        self.to_grid(nx, nt).iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    /// Mean square over the product domain, `Σ |c_{m,q}|²`.
    pub fn mean_square(&self) -> f64 {
        self.coef.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Graded norm `Σ (1 + |ω_m| + |q|)² |c_{m,q}|` with `ω_m = m·2π/Λ·scale`.
    pub fn graded_norm(&self, scale: f64) -> f64 {
        let k = self.kappa() * scale;
        let mut s = 0.0;
        for m in -(self.mx as isize)..=self.mx as isize {
            for q in -(self.mt as isize)..=self.mt as isize {
                let g = 1.0 + (k * m as f64).abs() + q.unsigned_abs() as f64;
                s += g * g * self.coef(m, q).norm();
            }
        }
        s
    }

    /// Largest coefficient magnitude among θ-modes accepted by `sel`.
    pub fn max_coef_where(&self, sel: impl Fn(usize) -> bool) -> f64 {
        let mut best = 0.0_f64;
        for m in -(self.mx as isize)..=self.mx as isize {
            for q in -(self.mt as isize)..=self.mt as isize {
                if sel(q.unsigned_abs()) {
                    best = best.max(self.coef(m, q).norm());
                }
            }
        }
        best
    }
}

fn fft2(values: &[f64], nx: usize, nt: usize, inverse: bool) -> Vec<Complex64> {
    let buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_complex(buf, nx, nt, inverse)
}

fn ifft2(buf: Vec<Complex64>, nx: usize, nt: usize) -> Vec<Complex64> {
    fft2_complex(buf, nx, nt, true)
}

fn fft2_complex(mut buf: Vec<Complex64>, nx: usize, nt: usize, inverse: bool) -> Vec<Complex64> {
    for row in buf.chunks_mut(nt) {
        fft_in_place(row, inverse);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); nx];
    for j in 0..nt {
        for i in 0..nx {
            col[i] = buf[i * nt + j];
        }
        fft_in_place(&mut col, inverse);
        for i in 0..nx {
            buf[i * nt + j] = col[i];
        }
    }
    buf
}

/// Real symmetric second-derivative collocation matrix on an `n`-point grid of
/// period `lambda`, row-major.
pub fn second_derivative_matrix(lambda: f64, n: usize) -> Vec<f64> {
    let k = 2.0 * PI / lambda;
    let mut out = vec![0.0; n * n];
    for j in 0..n {
        let mut e = vec![Complex64::new(0.0, 0.0); n];
        e[j] = Complex64::new(1.0, 0.0);
        fft_in_place(&mut e, false);
        for (slot, c) in e.iter_mut().enumerate() {
            let m = if slot <= n / 2 { slot as f64 } else { slot as f64 - n as f64 };
            *c *= -(k * m) * (k * m) / n as f64;
        }
        fft_in_place(&mut e, true);
        for i in 0..n {
            out[i * n + j] = e[i].re;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodic1_roundtrip_and_derivative() {
        let lam = 3.0;
        let k = 2.0 * PI / lam;
        let f = Periodic1::from_fn(lam, 6, |x| (k * x).cos() + 0.3 * (3.0 * k * x).sin());
        let d = f.derivative(1);
        let x = 0.77;
        let exact = -k * (k * x).sin() + 0.9 * k * (3.0 * k * x).cos();
        assert!((d.eval(x) - exact).abs() < 1e-12);
        let s = f.samples(32);
        let g = Periodic1::from_samples(lam, &s, 6).unwrap();
        for m in -6..=6 {
            assert!((g.coef(m) - f.coef(m)).norm() < 1e-14);
        }
    }

    #[test]
    fn periodic2_derivatives_match_closed_form() {
        let lam = 2.0 * PI;
        let f = Periodic2::from_fn(lam, 4, 4, |x, t| (x + 2.0 * t).sin() + (2.0 * x).cos() * t.cos());
        let fxt = f.derivative(1, 1);
        let (x, t) = (0.3_f64, 1.1_f64);
        let exact = -2.0 * (x + 2.0 * t).sin() + 2.0 * (2.0 * x).sin() * t.sin();
        assert!((fxt.eval(x, t) - exact).abs() < 1e-12);
        let grid = f.to_grid(16, 16);
        let g = Periodic2::from_grid(lam, 16, 16, &grid, 4, 4).unwrap();
        assert!(g.sub(&f).mean_square() < 1e-28);
    }

    #[test]
    fn theta_mode_extracts_real_coefficient_functions() {
        let lam = 2.0 * PI;
        let f = Periodic2::from_fn(lam, 3, 3, |x, t| (1.0 + x.cos()) * t.cos() + x.sin() * t.sin());
        // f = c_1 e^{iθ} + c_{-1} e^{-iθ} with c_1 = (a - i b)/2, a = 1+cos x, b = sin x
        let (re, im) = f.theta_mode(1);
        let x = 0.4;
        assert!((re.eval(x) - 0.5 * (1.0 + x.cos())).abs() < 1e-13);
        assert!((im.eval(x) + 0.5 * x.sin()).abs() < 1e-13);
    }

    #[test]
    fn second_derivative_matrix_is_symmetric_and_exact() {
        let lam = 2.0 * PI;
        let n = 16;
        let d2 = second_derivative_matrix(lam, n);
        for i in 0..n {
            for j in 0..n {
                assert!((d2[i * n + j] - d2[j * n + i]).abs() < 1e-12);
            }
        }
        let xs = periodic_grid(lam, n);
        let f: Vec<f64> = xs.iter().map(|x| (3.0 * x).sin()).collect();
        for i in 0..n {
            let v: f64 = (0..n).map(|j| d2[i * n + j] * f[j]).sum();
            assert!((v + 9.0 * (3.0 * xs[i]).sin()).abs() < 1e-11);
        }
    }
}
