use std::f64::consts::PI;

use cmc_tubes::jacobi::{
    estimate_inverse_norm, inverse_bound_profile, solve_geodesic_jacobi, solve_l0, solve_l0_variation, solve_tilde, GeodesicJacobi, NormKind,
    ResonanceInfo,
};
use cmc_tubes::model::ModelBuilder;
use cmc_tubes::modes::NormalSection;
use cmc_tubes::spectral::{Periodic1, Periodic2};
use cmc_tubes::tube::geodesic_jacobi_apply;
use cmc_tubes::{Error, ModelMetric};
use proptest::prelude::*;

const LAM: f64 = 2.0 * PI;

fn apply_l0(v: &Periodic1, rho: f64, n: usize) -> Periodic1 {
    v.derivative(2).scaled(rho * rho).add(&v.scaled((n - 1) as f64))
}

fn sample_f() -> Periodic1 {
    Periodic1::from_fn(LAM, 12, |x| 0.2 + x.cos() - 0.7 * (4.0 * x).sin() + 0.05 * (11.0 * x).cos())
}

#[test]
fn l0_inverse_satisfies_the_equation() {
    for (rho, n) in [(0.183, 2), (0.07, 3), (0.41, 5)] {
        let f = sample_f();
        let v = solve_l0(&f, rho, n, 1e-8).unwrap();
        assert!(apply_l0(&v, rho, n).sub(&f).sup_norm() <= 1e-10 * f.sup_norm());
    }
}

#[test]
fn resonant_radii_are_refused() {
    let f = sample_f();
    for k in 1..=20 {
        let rho = 1.0 / k as f64;
        assert!(ResonanceInfo::new(rho, 2, LAM).small_divisor < 1e-20);
        assert!(matches!(solve_l0(&f, rho, 2, 1e-6), Err(Error::Resonant { .. })), "k = {k}");
        assert!(matches!(solve_l0_variation(&f, rho, 2, 1e-6, 64), Err(Error::Resonant { .. })));
    }
    // n = 3: ρ_k = √2/k
    assert!(matches!(solve_l0(&f, 2f64.sqrt() / 7.0, 3, 1e-6), Err(Error::Resonant { .. })));
}

#[test]
fn second_harmonic_in_theta_is_divided_by_minus_three() {
    for rho in [0.05, 0.2, 0.6] {
        let f = Periodic2::from_fn(LAM, 2, 3, |_, t| (2.0 * t).cos());
        let w = solve_tilde(&f, rho).unwrap();
        for (x, t) in [(0.3, 0.1), (2.0, 1.7)] {
            assert!((w.eval(x, t) + (2.0 * t).cos() / 3.0).abs() < 1e-14);
        }
    }
}

#[test]
fn tilde_inverse_satisfies_the_equation() {
    let rho = 0.13;
    let f = Periodic2::from_fn(LAM, 5, 5, |x, t| (2.0 * t + x).cos() - 0.3 * (3.0 * t).sin() * (4.0 * x).cos() + 0.1 * (5.0 * t).cos());
    let w = solve_tilde(&f, rho).unwrap();
    let back = w.derivative(2, 0).scaled(rho * rho).add(&w.derivative(0, 2)).add(&w);
    assert!(back.sub(&f).sup_norm() < 1e-12);
}

#[test]
fn low_degree_content_is_a_block_violation() {
    let f = Periodic2::from_fn(LAM, 2, 3, |x, t| t.cos() * x.sin() + (2.0 * t).cos());
    assert!(matches!(solve_tilde(&f, 0.1), Err(Error::BlockViolation(_))));
    let f = Periodic2::from_fn(LAM, 2, 3, |_, _| 1.0);
    assert!(matches!(solve_tilde(&f, 0.1), Err(Error::BlockViolation(_))));
}

#[test]
fn tilde_inverse_norm_is_uniform_in_rho() {
    let norm = |rho: f64| {
        let mut best = 0.0_f64;
        for m in 0..=4 {
            for q in 2..=5 {
                let f = Periodic2::from_fn(LAM, 4, 5, |x, t| (m as f64 * x + q as f64 * t).cos());
                best = best.max(solve_tilde(&f, rho).unwrap().sup_norm() / f.sup_norm());
            }
        }
        best
    };
    let ns: Vec<f64> = [0.01, 0.03, 0.1, 0.3, 0.9].iter().map(|&r| norm(r)).collect();
    let (lo, hi) = ns.iter().fold((f64::INFINITY, 0.0_f64), |(a, b), &v| (a.min(v), b.max(v)));
    assert!(hi / lo < 1.1, "{ns:?}");
    assert!((hi - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn geodesic_jacobi_inverse_satisfies_the_equation() {
    let model = ModelMetric::curved_toy();
    let psi = NormalSection {
        phi: vec![Periodic1::from_fn(LAM, 6, |x| x.cos() - 0.2), Periodic1::from_fn(LAM, 6, |x| (3.0 * x).sin() + 0.4 * (2.0 * x).cos())],
    };
    // solve on a wider band so truncation of the A-products stays below the tolerance
    let psi = psi.with_modes(24);
    let phi = solve_geodesic_jacobi(&psi, &model, 1e-8).unwrap();
    let back = geodesic_jacobi_apply(&model, &phi, 128);
    assert!(back.sub(&psi).sup_norm() < 1e-10, "{}", back.sub(&psi).sup_norm());
}

#[test]
fn flat_geodesic_is_degenerate() {
    let psi = NormalSection::constant(&[1.0, 0.0], LAM, 3);
    let flat = ModelMetric::flat_torus(2, LAM);
    assert!(matches!(solve_geodesic_jacobi(&psi, &flat, 1e-8), Err(Error::DegenerateGeodesic { .. })));
}

#[test]
fn constant_negative_kappa_squared_is_degenerate() {
    // A = −κ²I puts cos(κx₀) in the kernel of Φ'' − AΦ
    let kappa: f64 = 1.0;
    let m = ModelBuilder::new(2, LAM).r0i0j(0, 0, 0, -kappa * kappa, 0.0).unwrap().r0i0j(1, 1, 0, -kappa * kappa, 0.0).unwrap().build().unwrap();
    assert!(matches!(GeodesicJacobi::new(&m, 4, 1e-8), Err(Error::DegenerateGeodesic { .. })));
}

#[test]
fn constant_positive_a_divides_each_mode() {
    let c = 0.6;
    let m = ModelBuilder::new(2, LAM).r0i0j(0, 0, 0, c, 0.0).unwrap().r0i0j(1, 1, 0, c, 0.0).unwrap().build().unwrap();
    let psi = NormalSection { phi: vec![Periodic1::from_fn(LAM, 4, |x| (2.0 * x).cos()), Periodic1::from_fn(LAM, 4, |_| 1.0)] };
    let phi = solve_geodesic_jacobi(&psi, &m, 1e-8).unwrap();
    for x in [0.0, 0.9, 3.3] {
        let v = phi.eval(x);
        assert!((v[0] + (2.0 * x).cos() / (4.0 + c)).abs() < 1e-12);
        assert!((v[1] + 1.0 / c).abs() < 1e-12);
    }
}

#[test]
fn measured_l0_inverse_stays_below_profile() {
    // radii across the gap I_5 = (1/6, 1/5) for n = 2, Λ = 2π
    for t in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let rho = 1.0 / 6.0 + t * (1.0 / 5.0 - 1.0 / 6.0);
        let norm = estimate_inverse_norm(rho, 2, LAM, NormKind::L0Sup, 7, 8).unwrap();
        let prof = inverse_bound_profile(rho, 2, LAM);
        assert!(norm <= 2.0 * prof, "rho {rho}: {norm} vs {prof}");
        let d = estimate_inverse_norm(rho, 2, LAM, NormKind::L0Derivative, 7, 8).unwrap();
        assert!(d <= norm);
    }
}

#[test]
fn inverse_norm_is_seed_deterministic() {
    let a = estimate_inverse_norm(0.18, 2, LAM, NormKind::L0Sup, 42, 5).unwrap();
    let b = estimate_inverse_norm(0.18, 2, LAM, NormKind::L0Sup, 42, 5).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn l0_substitution_on_random_data(coefs in prop::collection::vec(-1.0..1.0f64, 9), t in 0.05..0.95f64, k in 2usize..12) {
        let rho = 1.0 / (k as f64 + t);
        prop_assume!(ResonanceInfo::new(rho, 2, LAM).small_divisor > 1e-4);
        let f = Periodic1::from_fn(LAM, 4, |x| (0..=4).map(|m| coefs[m] * (m as f64 * x).cos() + if m > 0 { coefs[4 + m] * (m as f64 * x).sin() } else { 0.0 }).sum());
        let v = solve_l0(&f, rho, 2, 1e-8).unwrap();
        prop_assert!(apply_l0(&v, rho, 2).sub(&f).sup_norm() <= 1e-10 * f.sup_norm().max(1e-3));
        let w = solve_l0_variation(&f, rho, 2, 1e-8, 32).unwrap();
        prop_assert!(v.sub(&w).sup_norm() <= 1e-9 * v.sup_norm().max(1.0));
    }
}
