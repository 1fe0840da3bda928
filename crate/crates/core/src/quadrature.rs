//! Gauss–Legendre rules, product rules on round spheres, and sphere areas.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};

/// Area `ω_m` of the unit sphere `S^m ⊂ ℝ^{m+1}`, from `ω_m = 2π ω_{m−2}/(m − 1)`.
pub fn sphere_area(m: usize) -> f64 {
    match m {
        0 => 2.0,
        1 => 2.0 * PI,
        _ => 2.0 * PI * sphere_area(m - 2) / (m - 1) as f64,
    }
}

/// Gauss–Legendre nodes and weights on `[−1, 1]` (Golub–Welsch).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "a Gauss rule needs at least one node");
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = k as f64 / ((4 * k * k - 1) as f64).sqrt();
        j[(k, k - 1)] = b;
        j[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n).map(|i| (eig.eigenvalues[i], 2.0 * eig.eigenvectors[(0, i)].powi(2))).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite nodes"));
    pairs.into_iter().unzip()
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let h = 0.5 * (b - a);
    (x.iter().map(|t| a + h * (t + 1.0)).collect(), w.iter().map(|v| v * h).collect())
}

/// Quadrature on `S^m`: unit points in `ℝ^{m+1}` with weights summing to `ω_m`.
///
/// `S^1` uses `n_circle` equispaced points; higher spheres are built as
/// `y = (cos φ · z, sin φ)` with `z ∈ S^{m−1}` and `n_lat` Gauss nodes in `φ`.
#[derive(Clone, Debug)]
pub struct SphereRule {
    pub m: usize,
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl SphereRule {
    pub fn new(m: usize, n_circle: usize, n_lat: usize) -> Self {
        match m {
            0 => SphereRule { m, points: vec![vec![1.0], vec![-1.0]], weights: vec![1.0, 1.0] },
            1 => {
                let w = 2.0 * PI / n_circle as f64;
                let points = (0..n_circle)
                    .map(|j| {
                        let (s, c) = (w * j as f64).sin_cos();
                        vec![c, s]
                    })
                    .collect();
                SphereRule { m, points, weights: vec![w; n_circle] }
            }
            _ => {
                let lower = SphereRule::new(m - 1, n_circle, n_lat);
                let (phis, wphi) = gauss_legendre_on(n_lat, -0.5 * PI, 0.5 * PI);
                let mut points = Vec::with_capacity(lower.points.len() * n_lat);
                let mut weights = Vec::with_capacity(points.capacity());
                for (phi, wp) in phis.iter().zip(&wphi) {
                    let (s, c) = phi.sin_cos();
                    let jac = c.powi(m as i32 - 1);
                    for (z, wz) in lower.points.iter().zip(&lower.weights) {
                        let mut y: Vec<f64> = z.iter().map(|v| v * c).collect();
                        y.push(s);
                        points.push(y);
                        weights.push(wz * wp * jac);
                    }
                }
                SphereRule { m, points, weights }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}
