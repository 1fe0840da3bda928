use std::f64::consts::PI;
use std::sync::OnceLock;

use cmc_tubes::fit::loglog_slope;
use cmc_tubes::jacobi::ResonanceInfo;
use cmc_tubes::solver::{apply_n, fixed_point_solve, foliation_check, gap_intervals, SolverConfig, Unknowns};
use cmc_tubes::tube::mean_curvature_oracle;
use cmc_tubes::{Error, ModelMetric};
use proptest::prelude::*;

const LAM: f64 = 2.0 * PI;

fn toy() -> &'static ModelMetric {
    static M: OnceLock<ModelMetric> = OnceLock::new();
    M.get_or_init(ModelMetric::curved_toy)
}

fn small_cfg() -> SolverConfig {
    SolverConfig { ns: 32, nt: 16, tol: 1e-8, ..SolverConfig::default() }
}

#[test]
fn gap_window_examples() {
    let iv = gap_intervals(2, LAM, 5, 5, 0.0).unwrap()[0];
    assert_eq!(iv.k, 5);
    assert!((iv.rho_lo - 1.0 / 6.0).abs() < 1e-15 && (iv.rho_hi - 0.2).abs() < 1e-15);
    assert!((iv.midpoint() - 11.0 / 60.0).abs() < 1e-15);

    let c1 = 0.5;
    let iv = gap_intervals(2, LAM, 5, 5, c1).unwrap()[0];
    let m = c1 * 5f64.powf(-2.25);
    assert!((iv.rho_lo - (1.0 / 6.0 + m)).abs() < 1e-15 && (iv.rho_hi - (0.2 - m)).abs() < 1e-15);

    // n = 3 scales every window by √2
    let iv3 = gap_intervals(3, LAM, 5, 5, 0.0).unwrap()[0];
    assert!((iv3.rho_hi - 2f64.sqrt() / 5.0).abs() < 1e-15);

    assert!(matches!(gap_intervals(2, LAM, 1, 4, 0.0), Err(Error::InvalidInput(_))));
    assert_eq!(gap_intervals(2, LAM, 2, 9, 0.0).unwrap().len(), 8);
}

#[test]
fn flat_torus_leaf_is_the_round_cylinder() {
    let flat = ModelMetric::flat_torus(2, LAM);
    let s = fixed_point_solve(&flat, 11.0 / 60.0, &small_cfg()).unwrap();
    assert!(s.converged && s.iterations == 1);
    assert_eq!(s.unknowns.sup_norm(), 0.0);
    assert!(s.residual_sup < 1e-14);
}

#[test]
fn midpoint_solve_contracts() {
    let s = fixed_point_solve(toy(), 11.0 / 60.0, &SolverConfig::default()).unwrap();
    assert!(s.converged && s.residual_sup <= 1e-9);
    assert!(s.contraction_factor < 0.5, "{}", s.contraction_factor);
    assert!(s.history.windows(2).all(|w| w[1] < w[0]));
    assert!(s.e_norm <= SolverConfig::default().c0 * s.rho * s.rho);
}

#[test]
fn leaf_has_constant_mean_curvature() {
    let s = fixed_point_solve(toy(), 11.0 / 60.0, &SolverConfig::default()).unwrap();
    // an independent evaluation on a finer grid
    let h = mean_curvature_oracle(toy(), &s.tube, 96, 48).unwrap();
    let target = 1.0 / (2.0 * s.rho);
    let worst = h.iter().map(|v| (v - target).abs()).fold(0.0, f64::max);
    assert!(worst * 2.0 * s.rho < 1e-8, "{worst}");
}

#[test]
fn resonant_radius_is_refused() {
    assert!(matches!(fixed_point_solve(toy(), 0.2, &small_cfg()), Err(Error::Resonant { .. })));
}

#[test]
fn bad_config_is_rejected() {
    let cfg = SolverConfig { ns: 24, ..SolverConfig::default() };
    assert!(matches!(fixed_point_solve(toy(), 0.18, &cfg), Err(Error::InvalidInput(_))));
    let cfg = SolverConfig { tol: 0.0, ..SolverConfig::default() };
    assert!(matches!(fixed_point_solve(toy(), 0.18, &cfg), Err(Error::InvalidInput(_))));
}

#[test]
fn iteration_cap_reports_no_convergence() {
    let cfg = SolverConfig { max_iter: 1, ..small_cfg() };
    assert!(matches!(fixed_point_solve(toy(), 0.18, &cfg), Err(Error::NoConvergence { .. })));
}

#[test]
fn solution_is_a_fixed_point_of_n() {
    let cfg = small_cfg();
    let s = fixed_point_solve(toy(), 0.18, &cfg).unwrap();
    let next = apply_n(toy(), 0.18, &s.unknowns, &cfg).unwrap();
    assert!(next.sub(&s.unknowns).sup_norm() < 1e-8);
}

#[test]
fn escaping_the_ball_is_an_error() {
    let cfg = small_cfg();
    let (mx, mt) = cfg.bands();
    let mut xi = Unknowns::zero(LAM, mx, mt);
    xi.w0 = cmc_tubes::spectral::Periodic1::constant(LAM, mx, 3.0);
    assert!(matches!(apply_n(toy(), 0.18, &xi, &cfg), Err(Error::BallEscape { .. })));
}

#[test]
fn first_iterate_scales_like_rho_squared() {
    let cfg = small_cfg();
    let (mx, mt) = cfg.bands();
    let ivs = gap_intervals(2, LAM, 3, 8, 0.0).unwrap();
    let (rs, ns): (Vec<f64>, Vec<f64>) = ivs
        .iter()
        .map(|iv| {
            let rho = iv.midpoint();
            let xi = apply_n(toy(), rho, &Unknowns::zero(LAM, mx, mt), &cfg).unwrap();
            (rho, xi.e_norm(rho, ResonanceInfo::new(rho, 2, LAM).small_divisor))
        })
        .unzip();
    let slope = loglog_slope(&rs, &ns);
    assert!((slope - 2.0).abs() < 0.3, "slope {slope}: {ns:?}");
}

#[test]
fn leaves_foliate_a_window() {
    let iv = gap_intervals(2, LAM, 5, 5, 0.2).unwrap()[0];
    let rep = foliation_check(toy(), &iv, 4, &small_cfg()).unwrap();
    assert!(rep.min_gap > 0.0 && rep.min_radial_derivative > 0.5);
    assert_eq!(rep.rhos.len(), 4);
}

proptest! {
    #[test]
    fn windows_avoid_resonances(n in 2usize..6, k_min in 2usize..6, span in 0usize..10, c1 in 0.0..0.3f64) {
        let k_max = k_min + span;
        let ivs = gap_intervals(n, LAM, k_min, k_max, c1).unwrap();
        let scale = ((n - 1) as f64).sqrt();
        for iv in &ivs {
            prop_assert!(iv.rho_lo < iv.rho_hi);
            prop_assert!(iv.rho_lo >= scale / (iv.k as f64 + 1.0) && iv.rho_hi <= scale / iv.k as f64);
            let mid = ResonanceInfo::new(iv.midpoint(), n, LAM);
            prop_assert!(mid.small_divisor > 0.0);
        }
        for w in ivs.windows(2) {
            prop_assert!(w[1].rho_hi <= w[0].rho_lo);
        }
    }
}
