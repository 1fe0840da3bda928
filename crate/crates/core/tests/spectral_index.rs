use std::f64::consts::PI;
use std::sync::OnceLock;

use cmc_tubes::solver::{fixed_point_solve, gap_intervals, SolveResult, SolverConfig};
use cmc_tubes::spectrum::{
    assemble_jacobi, compare_to_formula, degenerate_radii, flat_torus_spectrum, flat_torus_symbol, geodesic_index, index_count, AssemblyConfig, Block,
};
use cmc_tubes::{Error, ModelMetric};
use proptest::prelude::*;

const LAM: f64 = 2.0 * PI;

fn toy() -> &'static ModelMetric {
    static M: OnceLock<ModelMetric> = OnceLock::new();
    M.get_or_init(ModelMetric::curved_toy)
}

fn leaf(model: &ModelMetric, rho: f64) -> SolveResult {
    fixed_point_solve(model, rho, &SolverConfig::default()).unwrap()
}

/// `ρ²m² + q² − 1` over the assembled basis, sorted.
fn flat_oracle(rho: f64, cfg: &AssemblyConfig) -> Vec<f64> {
    let mut v = Vec::new();
    for q in 0..=cfg.mt {
        let nq = if q == 0 { 1 } else { 2 };
        for m in 0..=cfg.mx {
            let nm = if m == 0 { 1 } else { 2 };
            for _ in 0..nq * nm {
                v.push(rho * rho * (m * m) as f64 + (q * q) as f64 - 1.0);
            }
        }
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

#[test]
fn symbol_examples() {
    assert_eq!(flat_torus_symbol(2, 0, 0.5, 3), 4.0);
    assert_eq!(flat_torus_symbol(2, 1, 0.5, 3), -4.0);
    assert_eq!(flat_torus_symbol(3, 1, 0.1, 2), -9.0);
    assert!((flat_torus_symbol(1, 2, 1.0, 2) - (-1.0 - 3.0)).abs() < 1e-15);
}

#[test]
fn degenerate_radius_tables() {
    let r2 = degenerate_radii(2, 4);
    assert_eq!(r2, vec![1.0, 0.5, 1.0 / 3.0, 0.25]);
    let r5 = degenerate_radii(5, 3);
    assert_eq!(r5, vec![2.0, 1.0, 2.0 / 3.0]);
    for (k, r) in r5.iter().enumerate() {
        assert!(flat_torus_symbol(k + 1, 0, *r, 5).abs() < 1e-14);
    }
}

#[test]
fn flat_spectrum_matches_the_symbol() {
    let rho = 0.23;
    let cfg = AssemblyConfig::for_rho(rho, LAM);
    let s = flat_torus_spectrum(rho, LAM, &cfg).unwrap();
    let oracle = flat_oracle(rho, &cfg);
    assert_eq!(s.eigenvalues.len(), oracle.len());
    let err = s.eigenvalues.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-10, "{err}");
    assert_eq!((s.index, s.nullity), (9, 2));
    assert!(s.asymmetry < 1e-12 && s.coupling < 1e-12);
}

#[test]
fn flat_degenerate_radii_carry_zero_eigenvalues() {
    for k in 1..=10 {
        let rho = 1.0 / k as f64;
        let cfg = AssemblyConfig::for_rho(rho, LAM);
        let s = flat_torus_spectrum(rho, LAM, &cfg).unwrap();
        // the two translations plus cos(kx₀), sin(kx₀)
        assert_eq!(s.nullity, 4, "k = {k}");
        let zeros: Vec<f64> = s.eigenvalues.iter().copied().filter(|v| v.abs() < 1e-6).collect();
        assert!(zeros.iter().all(|v| v.abs() <= 1e-10), "{zeros:?}");
    }
}

#[test]
fn reflection_invariant_basis_removes_translations() {
    let rho = 0.23;
    let cfg = AssemblyConfig { g_invariant: true, ..AssemblyConfig::for_rho(rho, LAM) };
    let s = flat_torus_spectrum(rho, LAM, &cfg).unwrap();
    assert_eq!((s.index, s.nullity), (9, 0));
    assert_eq!(index_count(&s).unwrap(), 9);
}

#[test]
fn nullity_blocks_the_index() {
    let rho = 0.23;
    let s = flat_torus_spectrum(rho, LAM, &AssemblyConfig::for_rho(rho, LAM)).unwrap();
    assert!(matches!(index_count(&s), Err(Error::NullityPresent { nullity: 2 })));
}

#[test]
fn unconverged_leaf_is_refused() {
    let mut l = leaf(toy(), 0.18);
    l.converged = false;
    assert!(matches!(assemble_jacobi(toy(), &l, &AssemblyConfig::for_rho(0.18, LAM)), Err(Error::NotConverged)));
}

#[test]
fn geodesic_indices_of_builtin_models() {
    assert_eq!(geodesic_index(toy(), 64).index, 0);
    assert_eq!(geodesic_index(&ModelMetric::builtin("unstable1").unwrap(), 64).index, 1);
    assert_eq!(geodesic_index(&ModelMetric::builtin("unstable2").unwrap(), 64).index, 2);
    assert!(geodesic_index(&ModelMetric::flat_torus(2, LAM), 64).nullity > 0);
}

#[test]
fn index_is_constant_across_a_window() {
    let iv = gap_intervals(2, LAM, 5, 5, 0.0).unwrap()[0];
    for i in 1..=5 {
        let rho = iv.rho_lo + (iv.rho_hi - iv.rho_lo) * i as f64 / 6.0;
        let a = assemble_jacobi(toy(), &leaf(toy(), rho), &AssemblyConfig::for_rho(rho, LAM)).unwrap();
        let s = a.spectrum().unwrap();
        assert_eq!(s.nullity, 0, "rho {rho}");
        let cmp = compare_to_formula(toy(), 5, &s).unwrap();
        assert!(cmp.matches && cmp.index == 11, "{cmp:?}");
    }
}

#[test]
fn unstable_geodesic_shifts_the_index() {
    let m = ModelMetric::builtin("unstable1").unwrap();
    let rho = 11.0 / 60.0;
    let s = assemble_jacobi(&m, &leaf(&m, rho), &AssemblyConfig::for_rho(rho, LAM)).unwrap().spectrum().unwrap();
    let cmp = compare_to_formula(&m, 5, &s).unwrap();
    assert_eq!((cmp.geodesic_index, cmp.expected, cmp.index), (1, 12, 12));
    let lin = s.eigenvalues.iter().zip(&s.block_tags).filter(|(v, b)| **v < 0.0 && **b == Block::Linear).count();
    assert_eq!(lin, 1);
}

#[test]
fn block_sandwich_brackets_the_count() {
    let rho = 11.0 / 60.0;
    let a = assemble_jacobi(toy(), &leaf(toy(), rho), &AssemblyConfig::for_rho(rho, LAM)).unwrap();
    let s = a.spectrum().unwrap();
    let (lo, mid, hi) = a.sandwich(0.1 * rho * rho).unwrap();
    assert!(lo <= mid && mid <= hi);
    assert!(lo <= s.index && s.index <= hi);
    assert_eq!((lo, hi), (11, 11));
}

proptest! {
    #[test]
    fn symbol_identities(k in 0usize..40, n in 2usize..7, rho in 0.01..2.0f64) {
        prop_assert_eq!(flat_torus_symbol(k, 1, rho, n), -((k * k) as f64));
        prop_assert!(flat_torus_symbol(k, 2, rho, n) < 0.0);
        let b0 = flat_torus_symbol(k, 0, rho, n);
        prop_assert!((b0 - ((n - 1) as f64 / (rho * rho) - (k * k) as f64)).abs() <= 1e-12 * b0.abs().max(1.0));
    }
}
