mod common;

use std::f64::consts::PI;

use common::*;
use hiddenmm::players::{make_activation, ActivationKind};
use hiddenmm::validator::{
    check_input_game_init, check_neural_game_init, data_spectrum, data_spectrum_with_budget, experiment_init_sigmas,
    gaussian_second_moment, hermite_coeffs, hermite_coeffs_fn, khatri_rao_power, neural_spectral_bounds,
    normalize_rows, InputInitParams, NeuralBoundParams, KHATRI_RAO_BUDGET,
};
use hiddenmm::Error;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn recipe(slack: f64) -> InputInitParams {
    let (s1, s2) = experiment_init_sigmas(1280, 1.0);
    InputInitParams {
        s1_f: s1,
        s2_f: s2,
        s1_g: s1,
        s2_g: s2,
        d0_f: 5,
        d1_f: 1280,
        d2_f: 3,
        d0_g: 5,
        d1_g: 1280,
        d2_g: 3,
        theta0_norm: 10.0,
        phi0_norm: 10.0,
        eps: 1.0,
        sigma_max_a: 10.0 * 3f64.sqrt(),
        c: 1.0,
        slack,
    }
}

fn check<'a>(r: &'a hiddenmm::validator::InitReport, name: &str) -> &'a hiddenmm::validator::Check {
    r.checks.iter().find(|c| c.name == name).unwrap()
}

#[test]
fn recipe_variance_and_width_hold() {
    let r = check_input_game_init(&recipe(1.0));
    for name in ["variance_F", "variance_G", "width_F", "width_G"] {
        assert!(check(&r, name).holds, "{name}");
    }
    assert_eq!(r.overall, r.checks.iter().all(|c| c.holds));
    assert!(r.checks.iter().all(|c| c.margin.is_finite()));
}

#[test]
fn recipe_scaled_conditions_need_slack() {
    // The literal eps- and coupling-scaled inequalities hold once the implied constant absorbs
    // the recipe's gap; the margin table records how much.
    let tight = check_input_game_init(&recipe(1.0));
    let names: Vec<_> = tight.failing().map(|c| c.name.as_str()).collect();
    assert!(names.iter().all(|n| n.starts_with("eps_scaled") || n.starts_with("coupling_scaled")));
    let loose = check_input_game_init(&recipe(1e3));
    assert!(loose.overall, "{}", loose.table());
}

#[test]
fn large_sigma_fails_variance() {
    let mut p = recipe(1.0);
    p.s1_f = 1.0;
    let r = check_input_game_init(&p);
    let v = check(&r, "variance_F");
    assert!(!v.holds);
    assert_eq!(v.lhs, 1.0);
    assert!((v.rhs - PI / (4.0 * 1280.0 * 100.0)).abs() < 1e-18);
    assert!(!r.overall);
}

#[test]
fn vanishing_eps_relaxes_scaled_conditions() {
    let mut p = recipe(1.0);
    p.eps = 1e-300;
    let r = check_input_game_init(&p);
    assert!(check(&r, "eps_scaled_F").holds && check(&r, "eps_scaled_G").holds);
}

#[test]
fn report_reevaluates_identically() {
    let p = recipe(1.0);
    let a = check_input_game_init(&p);
    let json = serde_json::to_string(&a).unwrap();
    let back: hiddenmm::validator::InitReport = serde_json::from_str(&json).unwrap();
    let mut q = p;
    q.c = back.constants_used["C"];
    q.slack = back.constants_used["slack"];
    assert_eq!(check_input_game_init(&q), back);
}

#[test]
fn sigma_rule_variance_threshold() {
    // sigma1^2 = d1^{-7/4} against pi / (400 d1): holds exactly when d1^{3/4} > 400 / pi.
    let threshold = (400.0 / PI).powf(4.0 / 3.0);
    for d1 in [1usize, 2, 16, 256, 640, 641, 1280, 4096, 1 << 16] {
        let (s1, s2) = experiment_init_sigmas(d1, 1.0);
        assert_eq!(s2, 1.0);
        let mut p = recipe(1.0);
        p.s1_f = s1;
        p.d1_f = d1;
        let r = check_input_game_init(&p);
        assert_eq!(check(&r, "variance_F").holds, d1 as f64 > threshold, "d1 = {d1}");
    }
    assert_eq!(experiment_init_sigmas(1, 3.0).0, 3.0);
}

#[test]
fn neural_width_examples() {
    let r = check_neural_game_init(0.1, 0.1, 4, 128, 8, 1.0, 1.0);
    assert_eq!(r.checks[1].lhs, 128.0);
    assert!(r.overall);
    for n in [3usize, 8, 20] {
        let a = check_neural_game_init(0.1, 0.1, 4, 128, n, 1.0, 1.0).checks[1].lhs;
        let b = check_neural_game_init(0.1, 0.1, 4, 128, 2 * n, 1.0, 1.0).checks[1].lhs;
        assert_eq!(b, 8.0 * a);
    }
    let z = check_neural_game_init(0.0, 1.0, 4, 128, 8, 1.0, 1.0);
    assert!(z.checks[0].holds);
    assert_eq!(z.checks[0].margin, z.checks[0].rhs);
}

#[test]
fn khatri_rao_examples() {
    let mut r = rng(1);
    let x = normalize_rows(&gauss_mat(&mut r, 6, 3));
    let k1 = khatri_rao_power(&x, 1, KHATRI_RAO_BUDGET).unwrap();
    assert_eq!(k1, x.transpose());
    let (smax, smin) = data_spectrum(&x, 1).unwrap();
    let sv = x.singular_values();
    assert!((smax - sv.max()).abs() < 1e-12 && (smin - sv.min()).abs() < 1e-12);

    let eye = DMatrix::<f64>::identity(4, 4);
    for t in 1..=3 {
        let (a, b) = data_spectrum(&eye, t).unwrap();
        assert!((a - 1.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
    }

    // Column j of the t-fold power is the t-fold Kronecker power of row j.
    let k3 = khatri_rao_power(&x, 3, KHATRI_RAO_BUDGET).unwrap();
    let row = x.row(2).transpose();
    let kron = row.kronecker(&row).kronecker(&row);
    assert!((k3.column(2) - kron).norm() < 1e-14);

    assert!(matches!(khatri_rao_power(&x, 0, KHATRI_RAO_BUDGET), Err(Error::InvalidParameter(_))));
    match data_spectrum_with_budget(&x, 4, 1024) {
        Err(Error::MemoryBudget(msg)) => assert!(msg.contains("3^4")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn gaussian_rows_spectrum_band() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let x = normalize_rows(&gauss_mat(&mut r, 16, 4));
        let (smax, _) = data_spectrum(&x, 2).unwrap();
        let s = (16.0f64 / 4.0).sqrt();
        assert!(smax >= 0.5 * s && smax <= 4.0 * s, "seed {seed}: {smax}");
    }
}

#[test]
fn data_rows_are_normalized() {
    let x = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 5.0]);
    assert_eq!(data_spectrum(&x, 1).unwrap(), (1.0, 1.0));
    let z = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
    assert!(data_spectrum(&z, 1).is_err());
}

#[test]
fn hermite_examples() {
    let lin = hermite_coeffs(&make_activation(ActivationKind::Linear), 16).unwrap();
    assert!((lin[1] - 1.0).abs() < 1e-10);
    for (i, c) in lin.iter().enumerate().filter(|(i, _)| *i != 1) {
        assert!(c.abs() <= 1e-10, "c_{i} = {c}");
    }
    let gelu = hermite_coeffs(&make_activation(ActivationKind::Gelu), 16).unwrap();
    assert!((gelu[0] - 0.28209).abs() < 1e-5);
    // He_2(z) / sqrt(2) against psi(z) = z^2: c_2 = sqrt(2).
    let sq = hermite_coeffs_fn(&|z: f64| z * z, 4).unwrap();
    assert!((sq[0] - 1.0).abs() < 1e-12 && (sq[2] - 2f64.sqrt()).abs() < 1e-12 && sq[1].abs() < 1e-12);
    assert!(hermite_coeffs_fn(&|z: f64| z, 17).is_err());
}

#[test]
fn hermite_parseval() {
    for kind in [ActivationKind::Gelu, ActivationKind::Softplus, ActivationKind::Linear] {
        let act = make_activation(kind);
        let m2 = gaussian_second_moment(&act);
        let mut prev_gap = f64::INFINITY;
        for k in [2usize, 4, 8, 16] {
            let c = hermite_coeffs(&act, k).unwrap();
            let s: f64 = c.iter().map(|v| v * v).sum();
            assert!(s <= m2 + 1e-6, "{kind:?} k={k}");
            let gap = m2 - s;
            assert!(gap <= prev_gap + 1e-12);
            prev_gap = gap;
        }
    }
}

fn neutral(t: usize) -> NeuralBoundParams {
    NeuralBoundParams {
        sigma1: 1.0,
        sigma2: 1.0,
        d1: 4,
        n: 4,
        x_spectrum: (1.0, 1.0),
        delta1: 0.0,
        delta2: 0.0,
        r1: 1.0,
        r2: 1.0,
        t,
    }
}

#[test]
fn neural_bound_examples() {
    let act = make_activation(ActivationKind::Gelu);
    let (lo, _) = neural_spectral_bounds(&[0.0, 1.0, 0.0], &act, &neutral(1)).unwrap();
    assert!((lo - 2.0).abs() < 1e-15);
    let (lo, up) = neural_spectral_bounds(&[0.3, 0.0, 0.2], &act, &neutral(1)).unwrap();
    assert_eq!(lo, 0.0);
    assert!(up > 0.0);
    let mut prev = 0.0;
    for n in [1usize, 4, 16, 64] {
        let p = NeuralBoundParams { n, ..neutral(1) };
        let (_, up) = neural_spectral_bounds(&[0.3, 0.5, 0.2], &act, &p).unwrap();
        assert!(up > prev);
        prev = up;
    }
    assert!(neural_spectral_bounds(&[0.3], &act, &neutral(1)).is_err());
    assert!(neural_spectral_bounds(&[0.3, 0.5], &act, &neutral(2)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn overall_is_conjunction(s1 in 1e-5f64..1.0, norm in 0.1f64..20.0, eps in 1e-3f64..10.0, slack in 0.1f64..1e4, d1 in 1usize..5000) {
        let mut p = recipe(slack);
        p.s1_f = s1;
        p.theta0_norm = norm;
        p.eps = eps;
        p.d1_f = d1;
        let r = check_input_game_init(&p);
        prop_assert_eq!(r.overall, r.checks.iter().all(|c| c.holds));
        prop_assert!(r.checks.iter().all(|c| c.margin.is_finite()));
        prop_assert_eq!(r.checks.len(), 8);
    }
}
