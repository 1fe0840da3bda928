use std::f64::consts::PI;

use cmc_tubes::fit::loglog_slope;
use cmc_tubes::model::{ExactModel, FermiPoint, ModelBuilder, ModelMetric};
use cmc_tubes::Error;
use nalgebra::DMatrix;
use proptest::prelude::*;
use std::sync::OnceLock;

fn toy() -> &'static ModelMetric {
    static M: OnceLock<ModelMetric> = OnceLock::new();
    M.get_or_init(ModelMetric::curved_toy)
}

fn identity_err(g: &DMatrix<f64>) -> f64 {
    (g - DMatrix::identity(g.nrows(), g.ncols())).abs().max()
}

#[test]
fn flat_metric_is_identity_everywhere() {
    let m = ModelMetric::flat_torus(3, 2.0 * PI);
    for p in [FermiPoint::new(0.4, vec![0.3, -1.2, 2.0]), FermiPoint::new(5.0, vec![10.0, 0.0, 0.0])] {
        assert_eq!(identity_err(&m.metric_at(&p).unwrap()), 0.0);
    }
}

#[test]
fn metric_is_identity_on_gamma() {
    let m = ModelMetric::curved_toy();
    for x0 in [0.0, 1.3, 4.4] {
        let g = m.metric_at(&FermiPoint::new(x0, vec![0.0, 0.0])).unwrap();
        assert!(identity_err(&g) < 1e-15);
    }
}

#[test]
fn hand_evaluated_truncated_metric() {
    let rho = 0.3;
    let m = ModelBuilder::new(2, 2.0 * PI).r0i0j(0, 0, 0, -1.0, 0.0).unwrap().build().unwrap();
    let g = m.metric_at(&FermiPoint::new(1.0, vec![rho, 0.0])).unwrap();
    assert!((g[(0, 0)] - (1.0 - rho * rho)).abs() < 1e-15);
    assert!(identity_err(&g.view((1, 1), (2, 2)).into_owned()) < 1e-15);

    // one normal-curvature entry T(1,2,1,2) = K; at x' = (ρ, 0) only g_22 moves
    let k = 0.7;
    let m = ModelBuilder::new(2, 2.0 * PI).rikjl(0, 1, 0, 1, 0, k, 0.0).unwrap().build().unwrap();
    let g = m.metric_at(&FermiPoint::new(0.0, vec![rho, 0.0])).unwrap();
    assert!((g[(2, 2)] - (1.0 + k * rho * rho / 3.0)).abs() < 1e-15);
    assert!((g[(1, 1)] - 1.0).abs() < 1e-15);
    assert!(g[(1, 2)].abs() < 1e-15);
    // off-diagonal at x' = (ρ, ρ)/√2: ⅓ Σ T(k,1,l,2) x_k x_l = ⅓ T(2,1,1,2) ρ²/2 = ⅓(−K)ρ²/2
    let s = rho / 2f64.sqrt();
    let g = m.metric_at(&FermiPoint::new(0.0, vec![s, s])).unwrap();
    assert!((g[(1, 2)] + k * rho * rho / 6.0).abs() < 1e-15);
}

#[test]
fn positivity_breach_is_reported() {
    let m = ModelBuilder::new(2, 2.0 * PI).r0i0j(0, 0, 0, -4.0, 0.0).unwrap().build().unwrap();
    assert!(m.r_max() < 0.5);
    let err = m.metric_at(&FermiPoint::new(0.0, vec![0.6, 0.0])).unwrap_err();
    assert!(matches!(err, Error::NonPositiveDefinite { .. }));
}

#[test]
fn ricci_of_flat_model_vanishes() {
    let m = ModelMetric::flat_torus(2, 2.0 * PI);
    assert_eq!(m.ricci_normal(0.3, &[0.6, 0.8]).unwrap(), 0.0);
}

#[test]
fn ricci_matches_frame_sum() {
    let c = 0.37;
    let m = ModelBuilder::new(2, 2.0 * PI).r0i0j(0, 0, 0, c, 0.0).unwrap().build().unwrap();
    // −Σ_α ⟨R(Υ,E_α)Υ,E_α⟩ with Υ = e₁: only α = 0 contributes, giving −A₁₁
    assert!((m.ricci_normal(0.0, &[1.0, 0.0]).unwrap() + c).abs() < 1e-15);

    let k = -0.45;
    let m = ModelBuilder::new(2, 2.0 * PI).rikjl(0, 1, 0, 1, 0, k, 0.0).unwrap().build().unwrap();
    // brute force: −Σ_i T(k,i,l,i) Υ_k Υ_l over the stored tensor
    let cv = m.curvature_at(0.0);
    let u = [0.6, 0.8];
    let mut brute = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            for i in 0..2 {
                brute -= cv.t[((a * 2 + i) * 2 + b) * 2 + i] * u[a] * u[b];
            }
        }
    }
    assert!((m.ricci_normal(0.0, &u).unwrap() - brute).abs() < 1e-15);
}

#[test]
fn ricci_rejects_non_unit_direction() {
    let m = ModelMetric::curved_toy();
    assert!(matches!(m.ricci_normal(0.0, &[1.0, 1.0]), Err(Error::InvalidInput(_))));
}

#[test]
fn metric_deviation_is_quadratic() {
    let m = ModelMetric::curved_toy();
    let rs: Vec<f64> = (0..9).map(|i| 1e-3 * 10f64.powf(i as f64 / 4.0)).collect();
    let devs: Vec<f64> = rs
        .iter()
        .map(|&r| {
            let p = FermiPoint::new(0.7, vec![r * 0.8, r * 0.6]);
            identity_err(&m.metric_at(&p).unwrap())
        })
        .collect();
    let slope = loglog_slope(&rs, &devs);
    assert!((slope - 2.0).abs() < 0.05, "slope {slope}");
}

#[test]
fn analytic_derivatives_match_central_differences() {
    let m = ModelMetric::curved_toy();
    let x = [0.9, 0.21, -0.13];
    let jet = m.curvature_at(x[0]).jet::<f64>(&x[1..]);
    let g_at = |y: &[f64]| m.curvature_at(y[0]).jet::<f64>(&y[1..]).g;
    let fd_err = |h: f64| {
        let mut worst: f64 = 0.0;
        for c in 0..3 {
            let mut p = x;
            let mut q = x;
            p[c] += h;
            q[c] -= h;
            let (gp, gq) = (g_at(&p), g_at(&q));
            for a in 0..3 {
                for b in 0..3 {
                    let fd = (gp[a * 3 + b] - gq[a * 3 + b]) / (2.0 * h);
                    worst = worst.max((fd - jet.dg(c, a, b)).abs());
                }
            }
        }
        worst
    };
    let (e1, e2) = (fd_err(1e-2), fd_err(5e-3));
    assert!(e1 < 1e-4);
    let order = (e1 / e2).log2();
    assert!((order - 2.0).abs() < 0.2, "order {order}");
}

#[test]
fn parse_reads_every_key() {
    let text = "# toy\nn 2\nell 1\nLambda 6.283185307179586\nexact_model TRUNCATED\nR0i0j 1 1 0 0.6 0.0\nR0i0j 1 1 1 0.2 0.0\nRikjl 1 2 1 2 0 -0.5 0.0\nC00 1 1 1 0 0.3 0.0\n";
    let m = ModelMetric::parse(text).unwrap();
    assert_eq!(m.n(), 2);
    assert_eq!(m.exact_model(), ExactModel::Truncated);
    assert!((m.a_matrix(0.0)[0] - 0.8).abs() < 1e-15);
    assert_eq!(m.rikjl_series(1, 0, 1, 0).harmonic(0), (-0.5, 0.0));
}

#[test]
fn parse_rejects_unknown_keys_and_bad_lines() {
    let bad = [
        ("n 2\nLambda 1\nfoo 3\n", 3),
        ("n 2\nLambda 1\nR0i0j 1 3 0 1 0\n", 3),
        ("n 2\nLambda 1\nRikjl 1 1 1 2 0 1 0\n", 3),
        ("n 2\nLambda 1\nR0i0j 1 2 0 1\n", 3),
    ];
    for (text, line) in bad {
        match ModelMetric::parse(text) {
            Err(Error::ModelParse { line: l, .. }) => assert_eq!(l, line, "{text}"),
            other => panic!("expected ModelParse for {text:?}, got {other:?}"),
        }
    }
    assert!(matches!(ModelMetric::parse("Lambda 1\n"), Err(Error::ModelParse { .. })));
}

#[test]
fn conflicting_symmetry_orbit_is_rejected() {
    let b = ModelBuilder::new(2, 1.0).rikjl(0, 1, 0, 1, 0, 1.0, 0.0).unwrap();
    assert!(matches!(b.rikjl(1, 0, 0, 1, 0, 1.0, 0.0), Err(Error::CurvatureSymmetry(_))));
}

#[test]
fn flat_model_refuses_curvature() {
    let b = ModelBuilder::new(2, 1.0).exact_model(ExactModel::FlatTorus).r0i0j(0, 0, 0, 1.0, 0.0).unwrap();
    assert!(b.build().is_err());
}

#[test]
fn text_round_trip_of_builtin_models() {
    for name in ["flat_torus", "curved_toy", "unstable1", "unstable2"] {
        let m = ModelMetric::builtin(name).unwrap();
        let back = ModelMetric::parse(&m.to_text()).unwrap();
        let p = FermiPoint::new(1.1, vec![0.05, -0.08]);
        assert_eq!(m.metric_at(&p).unwrap(), back.metric_at(&p).unwrap(), "{name}");
    }
}

proptest! {
    #[test]
    fn stored_tables_keep_curvature_symmetries(x0 in 0.0..(2.0 * PI)) {
        let m = toy();
        let c = m.curvature_at(x0);
        let t = |k: usize, i: usize, l: usize, j: usize| c.t[((k * 2 + i) * 2 + l) * 2 + j];
        for k in 0..2 { for i in 0..2 { for l in 0..2 { for j in 0..2 {
            prop_assert_eq!(t(k, i, l, j), -t(i, k, l, j));
            prop_assert_eq!(t(k, i, l, j), -t(k, i, j, l));
            prop_assert_eq!(t(k, i, l, j), t(l, j, k, i));
        }}}}
        prop_assert_eq!(c.a[1], c.a[2]);
    }

    #[test]
    fn metric_is_symmetric_positive_inside_r_max(x0 in 0.0..(2.0 * PI), th in 0.0..(2.0 * PI), frac in 0.0..1.0f64) {
        let m = toy();
        let r = frac * m.r_max();
        let g = m.metric_at(&FermiPoint::new(x0, vec![r * th.cos(), r * th.sin()])).unwrap();
        prop_assert!((&g - g.transpose()).abs().max() == 0.0);
        prop_assert!(g.cholesky().is_some());
    }
}
