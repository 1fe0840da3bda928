//! Morse index of the leaves and the flat-torus bifurcation spectrum.
//!
//! The Jacobi operator of a leaf is obtained by linearizing `w ↦ nρH` in
//! exact dual arithmetic. A variation `w + εe` moves the surface with normal
//! speed `ρη e`, `η = ⟨Υ, −N⟩`; since the leaf is CMC, tangential motions do
//! not change `H` to first order, so `M_ab = ∫ ηe_a D[e_b] dA` is the
//! quadratic form of the Jacobi operator on normal speeds `ηe`, and
//! `G_ab = ∫ η²e_a e_b dA` their `L²` Gram matrix. Eigenvalues of the pencil
//! `(M, G)` are those of `−𝓛` on the Fourier subspace; the index counts the
//! negative ones.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jacobi::geodesic_jacobi_matrix;
use crate::model::ModelMetric;
use crate::modes::SphereBasis;
use crate::scalar::{Dual, Scalar};
use crate::solver::SolveResult;
use crate::spectral::periodic_grid;
use crate::tube::{point_geometry, Local, TubeConfiguration, TubeSamples};

/// Which part of the mode splitting an eigenvector mostly lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    /// Fibre-constant (`w₀`).
    Zero,
    /// Linear in the fibre (`Φ`).
    Linear,
    /// Sphere degree ≥ 2 (`w̃`).
    High,
}

impl Block {
    fn of(q: usize) -> Block {
        match q {
            0 => Block::Zero,
            1 => Block::Linear,
            _ => Block::High,
        }
    }
}

/// Eigen-data of a discretized Jacobi operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub rho: f64,
    /// Ascending eigenvalues of `−𝓛` (generalized, `L²`-normalized).
    pub eigenvalues: Vec<f64>,
    pub index: usize,
    pub nullity: usize,
    pub block_tags: Vec<Block>,
    /// `‖M − Mᵀ‖ / ‖M‖` before symmetrization.
    pub asymmetry: f64,
    /// Largest off-block entry of the normalized operator.
    pub coupling: f64,
}

impl SpectrumReport {
    pub fn positives(&self) -> usize {
        self.eigenvalues.len() - self.index - self.nullity
    }
}

/// Basis and quadrature parameters for the assembly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssemblyConfig {
    /// Largest Fourier mode along Γ.
    pub mx: usize,
    /// Largest Fourier mode in θ.
    pub mt: usize,
    pub nx: usize,
    pub nt: usize,
    /// Eigenvalues with `|λ| ≤ δ_null·max|λ|` count as null.
    pub delta_null: f64,
    /// Keep only `cos(qθ)`, `q` even (reflection-invariant functions).
    pub g_invariant: bool,
}

impl AssemblyConfig {
    /// A basis that resolves every negative direction of the zero block at `rho`.
    pub fn for_rho(rho: f64, lambda: f64) -> Self {
        let m_neg = (lambda / (2.0 * PI * rho)).ceil() as usize;
        let mx = (m_neg + 4).max(12);
        AssemblyConfig { mx, mt: 4, nx: (4 * mx + 4).next_power_of_two().max(64), nt: 32, delta_null: 1e-7, g_invariant: false }
    }
}

#[derive(Clone, Copy, Debug)]
struct BasisFn {
    m: usize,
    q: usize,
    /// `true` for `sin(mκx)`.
    sx: bool,
    /// `true` for `sin(qθ)`.
    st: bool,
}

fn basis(cfg: &AssemblyConfig) -> Vec<BasisFn> {
    let mut out = Vec::new();
    for q in 0..=cfg.mt {
        if cfg.g_invariant && q % 2 == 1 {
            continue;
        }
        for st in [false, true] {
            if st && (q == 0 || cfg.g_invariant) {
                continue;
            }
            for m in 0..=cfg.mx {
                for sx in [false, true] {
                    if sx && m == 0 {
                        continue;
                    }
                    out.push(BasisFn { m, q, sx, st });
                }
            }
        }
    }
    out
}

/// Values of a basis function and its jet at a point: `(e, e_x, e_t, e_xx, e_xt, e_tt)`.
fn basis_jet(b: &BasisFn, kappa: f64, x: f64, t: f64) -> [f64; 6] {
    let a = kappa * b.m as f64;
    let q = b.q as f64;
    let (sx, cx) = (a * x).sin_cos();
    let (stt, ct) = (q * t).sin_cos();
    let (fx, dfx) = if b.sx { (sx, a * cx) } else { (cx, -a * sx) };
    let ddfx = -a * a * fx;
    let (ft, dft) = if b.st { (stt, q * ct) } else { (ct, -q * stt) };
    let ddft = -q * q * ft;
    [fx * ft, dfx * ft, fx * dft, ddfx * ft, dfx * dft, fx * ddft]
}

/// Assembled quadratic form and Gram matrix.
#[derive(Clone, Debug)]
pub struct JacobiAssembly {
    pub rho: f64,
    pub m: DMatrix<f64>,
    pub gram: DMatrix<f64>,
    pub blocks: Vec<Block>,
    pub asymmetry: f64,
    pub delta_null: f64,
}

/// Assembles the Jacobi operator of a converged leaf.
pub fn assemble_jacobi(model: &ModelMetric, leaf: &SolveResult, cfg: &AssemblyConfig) -> Result<JacobiAssembly> {
    if !leaf.converged {
        return Err(Error::NotConverged);
    }
    assemble_jacobi_tube(model, &leaf.tube, cfg)
}

/// Assembles the linearization at an arbitrary tube (meaningful when it is CMC).
pub fn assemble_jacobi_tube(model: &ModelMetric, tube: &TubeConfiguration, cfg: &AssemblyConfig) -> Result<JacobiAssembly> {
    tube.validate(model)?;
    let (nx, nt) = (cfg.nx, cfg.nt);
    let smp = TubeSamples::new(tube, nx, nt);
    let rho = tube.rho;
    let kappa = model.kappa();
    let w_quad = tube.lambda() / nx as f64 * 2.0 * PI / nt as f64;
    // Per point: η, dA weight, and ∂residual/∂(w, w_x, w_t, w_xx, w_xt, w_tt).
    let per_point: Vec<(f64, f64, [f64; 6])> = (0..nx)
        .into_par_iter()
        .flat_map_iter(|i| {
            let cv = model.curvature_at(smp.xs[i]);
            let smp = &smp;
            (0..nt).map(move |j| {
                let base = smp.local(i, j);
                let pg = point_geometry(&cv, rho, &base);
                let (s, c) = base.theta.sin_cos();
                let jet = cv.jet::<f64>(&[pg.position[1], pg.position[2]]);
                let ups = [0.0, c, s];
                let mut eta = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        eta -= jet.g(a, b) * ups[a] * pg.normal[b];
                    }
                }
                let da = (pg.first[0] * pg.first[2] - pg.first[1] * pg.first[1]).sqrt();
                let mut grad = [0.0; 6];
                for (c_idx, g) in grad.iter_mut().enumerate() {
                    let d = |v: f64, k: usize| Dual::new(v, if k == c_idx { 1.0 } else { 0.0 });
                    let cst = |v: f64| Dual::cst(v);
                    let loc = Local {
                        x0: base.x0,
                        theta: base.theta,
                        w: d(base.w, 0),
                        w_x: d(base.w_x, 1),
                        w_t: d(base.w_t, 2),
                        w_xx: d(base.w_xx, 3),
                        w_xt: d(base.w_xt, 4),
                        w_tt: d(base.w_tt, 5),
                        phi: [cst(base.phi[0]), cst(base.phi[1])],
                        dphi: [cst(base.dphi[0]), cst(base.dphi[1])],
                        ddphi: [cst(base.ddphi[0]), cst(base.ddphi[1])],
                    };
                    *g = point_geometry(&cv, rho, &loc).residual.eps;
                }
                (eta, da * w_quad, grad)
            })
        })
        .collect();
    let basis = basis(cfg);
    let nb = basis.len();
    let npts = nx * nt;
    // E[p, a] = η e_a √w, D[p, b] = D[e_b] √w
    let mut e = DMatrix::<f64>::zeros(npts, nb);
    let mut d = DMatrix::<f64>::zeros(npts, nb);
    let mut eg = DMatrix::<f64>::zeros(npts, nb);
    for i in 0..nx {
        for j in 0..nt {
            let p = i * nt + j;
            let (eta, wt, grad) = per_point[p];
            let sw = wt.sqrt();
            for (b, bf) in basis.iter().enumerate() {
                let jv = basis_jet(bf, kappa, smp.xs[i], smp.thetas[j]);
                e[(p, b)] = eta * jv[0] * sw;
                eg[(p, b)] = eta * jv[0] * sw;
                d[(p, b)] = grad.iter().zip(jv.iter()).map(|(g, v)| g * v).sum::<f64>() * sw;
            }
        }
    }
    let m = e.transpose() * &d;
    let gram = eg.transpose() * &eg;
    let asym = (&m - m.transpose()).norm() / m.norm().max(f64::MIN_POSITIVE);
    let m = (&m + m.transpose()) * 0.5;
    Ok(JacobiAssembly { rho, m, gram, blocks: basis.iter().map(|b| Block::of(b.q)).collect(), asymmetry: asym, delta_null: cfg.delta_null })
}

impl JacobiAssembly {
    /// Generalized eigen-decomposition of `(M, G)`.
    pub fn spectrum(&self) -> Result<SpectrumReport> {
        let (vals, vecs, normalized) = generalized_eigen(&self.m, &self.gram)?;
        let mut order: Vec<usize> = (0..vals.len()).collect();
        order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).expect("finite eigenvalues"));
        let scale = vals.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let thr = self.delta_null * scale;
        let eigenvalues: Vec<f64> = order.iter().map(|&i| vals[i]).collect();
        let index = eigenvalues.iter().filter(|&&v| v < -thr).count();
        let nullity = eigenvalues.iter().filter(|&&v| v.abs() <= thr).count();
        let block_tags = order
            .iter()
            .map(|&i| {
                let mut w = [0.0; 3];
                for (a, blk) in self.blocks.iter().enumerate() {
                    let k = match blk {
                        Block::Zero => 0,
                        Block::Linear => 1,
                        Block::High => 2,
                    };
                    w[k] += vecs[(a, i)] * vecs[(a, i)];
                }
                let k = (0..3).max_by(|&a, &b| w[a].partial_cmp(&w[b]).expect("finite")).expect("three blocks");
                [Block::Zero, Block::Linear, Block::High][k]
            })
            .collect();
        let mut coupling: f64 = 0.0;
        for a in 0..self.blocks.len() {
            for b in 0..self.blocks.len() {
                if self.blocks[a] != self.blocks[b] {
                    coupling = coupling.max(normalized[(a, b)].abs());
                }
            }
        }
        Ok(SpectrumReport { rho: self.rho, eigenvalues, index, nullity, block_tags, asymmetry: self.asymmetry, coupling })
    }

    /// Negative counts of the block-diagonal form and of its `±c·G` shifts,
    /// returned as `(lower, decoupled, upper)` with `lower ≤ upper`.
    pub fn sandwich(&self, c: f64) -> Result<(usize, usize, usize)> {
        let mut bd = self.m.clone();
        for a in 0..self.blocks.len() {
            for b in 0..self.blocks.len() {
                if self.blocks[a] != self.blocks[b] {
                    bd[(a, b)] = 0.0;
                }
            }
        }
        let count = |mm: &DMatrix<f64>| -> Result<usize> {
            let (v, _, _) = generalized_eigen(mm, &self.gram)?;
            Ok(v.iter().filter(|&&x| x < 0.0).count())
        };
        let lo = count(&(&bd + &self.gram * c))?;
        let mid = count(&bd)?;
        let hi = count(&(&bd - &self.gram * c))?;
        Ok((lo, mid, hi))
    }
}

fn generalized_eigen(m: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let chol = g.clone().cholesky().ok_or_else(|| Error::Degenerate("Gram matrix is not positive definite".into()))?;
    let l = chol.l();
    let linv = l.clone().try_inverse().ok_or_else(|| Error::Degenerate("singular Cholesky factor".into()))?;
    let c = &linv * m * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c.clone());
    let vecs = linv.transpose() * &eig.eigenvectors;
    Ok((eig.eigenvalues.iter().copied().collect(), vecs, c))
}

/// Index and nullity counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexCount {
    pub index: usize,
    pub nullity: usize,
}

/// Index of a spectrum; a nonzero nullity makes the index ill-defined.
pub fn index_count(spectrum: &SpectrumReport) -> Result<usize> {
    if spectrum.nullity > 0 {
        return Err(Error::NullityPresent { nullity: spectrum.nullity });
    }
    Ok(spectrum.index)
}

/// Negative count of `−𝔍 = −∂² + A` on a collocation grid of `nx` points.
pub fn geodesic_index(model: &ModelMetric, nx: usize) -> IndexCount {
    let j = geodesic_jacobi_matrix(model, nx);
    let neg = -j;
    let sym = (&neg + neg.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1.0);
    let thr = 1e-9 * scale;
    IndexCount {
        index: eig.eigenvalues.iter().filter(|&&v| v < -thr).count(),
        nullity: eig.eigenvalues.iter().filter(|&&v| v.abs() <= thr).count(),
    }
}

/// Comparison of a measured leaf index with `Index(Γ) + 2k + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexComparison {
    pub k: usize,
    pub index: usize,
    pub geodesic_index: usize,
    pub expected: usize,
    pub matches: bool,
}

pub fn compare_to_formula(model: &ModelMetric, k: usize, spectrum: &SpectrumReport) -> Result<IndexComparison> {
    let index = index_count(spectrum)?;
    let g = geodesic_index(model, 64);
    if g.nullity > 0 {
        return Err(Error::NullityPresent { nullity: g.nullity });
    }
    let expected = g.index + 2 * k + 1;
    Ok(IndexComparison { k, index, geodesic_index: g.index, expected, matches: index == expected })
}

/// `B(k, ℓ, ρ) = −k² + ρ⁻²(n − 1 − λ_ℓ²)`, with `k` the wavenumber along Γ.
pub fn flat_torus_symbol(k: usize, l_mode: usize, rho: f64, n: usize) -> f64 {
    let lam2 = SphereBasis::new(n, l_mode).lambda_sq(l_mode);
    let k2 = (k * k) as f64;
    -k2 + ((n - 1) as f64 - lam2) / (rho * rho)
}

/// `ρ_k = √(n−1)/k`, `k = 1..=k_max`: radii where `B(k, 0, ρ)` vanishes.
pub fn degenerate_radii(n: usize, k_max: usize) -> Vec<f64> {
    let s = ((n - 1) as f64).sqrt();
    (1..=k_max).map(|k| s / k as f64).collect()
}

/// Assembles the flat round tube and returns its spectrum.
pub fn flat_torus_spectrum(rho: f64, lambda: f64, cfg: &AssemblyConfig) -> Result<SpectrumReport> {
    let flat = ModelMetric::flat_torus(2, lambda);
    let tube = TubeConfiguration::round(rho, lambda, 2, 2);
    assemble_jacobi_tube(&flat, &tube, cfg)?.spectrum()
}

/// `x₀` grid used by the quadrature (exposed for tests).
pub fn quadrature_nodes(lambda: f64, nx: usize) -> Vec<f64> {
    periodic_grid(lambda, nx)
}
