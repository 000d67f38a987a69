mod common;

use common::*;
use hiddenmm::experiments::{
    brute_force_gap, build_neural_erm, build_quadratic_testbed, build_rps, csv_string, emit, grid_resolution,
    net_records, project_simplex, run_experiment, svg_string, NeuralErmOptions, OutputPaths, RunSummary,
    SuccessMetric, MAX_GRID_STEPS,
};
use hiddenmm::objectives::{GameFamily, HiddenGame, LossKind};
use hiddenmm::solver::run;
use hiddenmm::validator::data_spectrum;
use hiddenmm::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn rps_builder() {
    let s = build_rps(1280, 0).unwrap();
    let a = s.game.coupling();
    assert_eq!(a[(0, 1)], -10.0);
    assert_eq!(a, &(-a.transpose()));
    let u = DVector::from_element(3, 1.0 / 3.0);
    assert!(u.dot(&(a * &u)).abs() < 1e-15);
    assert_eq!(s.params["sigma2"], 1.0);
    assert_eq!(s.target.as_ref().unwrap(), &u);
    assert_eq!((s.config.eta_theta, s.config.eta_phi, s.config.horizon), (0.01, 0.01, 100_000));
    assert_eq!(s.success_metric, SuccessMetric::LatentDistanceToTarget);
    assert!(s.theta0.norm() <= 10.0 && s.phi0.norm() <= 10.0);
    assert_eq!((s.theta0.len(), s.phi0.len()), (5, 5));
    assert!(matches!(build_rps(1279, 0), Err(Error::InvalidParameter(_))));
    let again = build_rps(1280, 0).unwrap();
    assert_eq!(s.theta0, again.theta0);
    assert_ne!(s.theta0, build_rps(1280, 1).unwrap().theta0);
}

#[test]
fn rps_short_run_summary() {
    let mut s = build_rps(1280, 2).unwrap();
    s.config.horizon = 20;
    s.config.audit_every = 10;
    let (rec, summary) = run_experiment(&s).unwrap();
    assert_eq!(rec.rows.len(), 3);
    assert!(rec.rows.iter().all(|r| r.potential.is_none()));
    let f = DVector::from_vec(project_simplex(&rec.last().latent_min));
    let g = DVector::from_vec(project_simplex(&rec.last().latent_max));
    let u = s.target.clone().unwrap();
    let d = (f - &u).norm().max((g - &u).norm());
    assert!((summary.metric_value - d).abs() < 1e-12);
    assert_eq!(summary.success, d <= 1e-2);
    assert_eq!(net_records(&s.game).len(), 2);
}

#[test]
fn testbed_examples() {
    let mut r = rng(1);
    let (a, b) = (gauss_vec(&mut r, 3), gauss_vec(&mut r, 2));
    let s = build_quadratic_testbed(1.5, 0.5, DMatrix::zeros(3, 2), a.clone(), b.clone()).unwrap();
    let q = s.game.quadratic_saddle().unwrap();
    assert!((q.theta - a).norm() < 1e-14 && (q.phi - b).norm() < 1e-14);

    let one = build_quadratic_testbed(1.0, 1.0, DMatrix::identity(1, 1), DVector::zeros(1), DVector::zeros(1)).unwrap();
    let q = one.game.quadratic_saddle().unwrap();
    assert_eq!((q.theta[0], q.phi[0]), (0.0, 0.0));

    let bm = gauss_mat(&mut r, 3, 3);
    let s = build_quadratic_testbed(0.7, 1.3, bm, gauss_vec(&mut r, 3), gauss_vec(&mut r, 3)).unwrap();
    let q = s.game.quadratic_saddle().unwrap();
    let (gt, gp) = s.game.grads(&q.theta, &q.phi).unwrap();
    assert!(gt.norm() < 1e-12 && gp.norm() < 1e-12);
    assert_eq!(s.success_metric, SuccessMetric::NashGap);

    assert!(build_quadratic_testbed(0.0, 1.0, DMatrix::zeros(1, 1), DVector::zeros(1), DVector::zeros(1)).is_err());
}

#[test]
fn testbed_run_reaches_saddle() {
    let mut r = rng(2);
    let mut s = build_quadratic_testbed(1.0, 1.0, orthogonal(&mut r, 2), gauss_vec(&mut r, 2), gauss_vec(&mut r, 2)).unwrap();
    s.theta0 = gauss_vec(&mut r, 2);
    s.phi0 = gauss_vec(&mut r, 2);
    let (_, summary) = run_experiment(&s).unwrap();
    assert!(summary.success, "{}", summary.metric_value);
}

#[test]
fn neural_erm_builder() {
    let opts = NeuralErmOptions::default();
    let s = build_neural_erm(8, 4, 128, 4, 128, 2, LossKind::Mse, 0, &opts).unwrap();
    assert_eq!(s.success_metric, SuccessMetric::GradNorm);
    let GameFamily::Separable(g) = s.game.family() else { panic!() };
    for d in [&g.data_f, &g.data_g] {
        for i in 0..d.len() {
            assert!((d.x.row(i).norm() - 1.0).abs() < 1e-12);
            assert!(d.y[i].norm() <= 1.0);
        }
    }
    assert!(matches!(
        build_neural_erm(8, 4, 64, 4, 128, 2, LossKind::Mse, 0, &opts),
        Err(Error::InvalidParameter(_))
    ));
    let forced = NeuralErmOptions { force: true, ..opts };
    assert!(build_neural_erm(8, 4, 64, 4, 128, 2, LossKind::Mse, 0, &forced).is_ok());
    assert!(build_neural_erm(8, 4, 128, 4, 128, 2, LossKind::Logistic, 0, &opts).is_err());
    assert!(build_neural_erm(3, 4, 128, 4, 128, 2, LossKind::Mse, 0, &forced).is_err());
    let ce = build_neural_erm(8, 4, 128, 4, 128, 3, LossKind::CrossEntropyL2, 0, &opts).unwrap();
    let GameFamily::Separable(g) = ce.game.family() else { panic!() };
    assert!(g.data_f.y.iter().all(|y| (y.sum() - 1.0).abs() < 1e-12 && y.min() > 0.0));
}

#[test]
fn orthonormal_data_spectrum() {
    let q = orthogonal(&mut rng(3), 4);
    let (a, b) = data_spectrum(&q, 1).unwrap();
    assert!((a - 1.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
}

#[test]
fn zero_coupling_decouples() {
    let s = build_neural_erm(8, 4, 128, 4, 128, 2, LossKind::Mse, 4, &NeuralErmOptions::default()).unwrap();
    let GameFamily::Separable(g) = s.game.family() else { panic!() };
    let game = HiddenGame::separable(
        g.min_net.clone(),
        g.max_net.clone(),
        DMatrix::zeros(16, 16),
        g.data_f.clone(),
        g.data_g.clone(),
        g.loss_f.clone(),
        g.loss_g.clone(),
    )
    .unwrap();
    let mut r = rng(4);
    let phi_b = &s.phi0 + gauss_vec(&mut r, s.phi0.len()) * 0.1;
    let theta_b = &s.theta0 + gauss_vec(&mut r, s.theta0.len()) * 0.1;
    assert_eq!(game.grad_theta(&s.theta0, &s.phi0).unwrap(), game.grad_theta(&s.theta0, &phi_b).unwrap());
    assert_eq!(game.grad_phi(&s.theta0, &s.phi0).unwrap(), game.grad_phi(&theta_b, &s.phi0).unwrap());

    let mut cfg = s.config.clone();
    cfg.horizon = 30;
    let a = run(&game, &cfg, &s.theta0, &s.phi0).unwrap();
    let b = run(&game, &cfg, &s.theta0, &phi_b).unwrap();
    assert_eq!(a.final_theta, b.final_theta);

    // Plain gradient descent on the min player's own objective.
    let mut theta = s.theta0.clone();
    for _ in 0..30 {
        theta -= cfg.eta_theta * game.grad_theta(&theta, &s.phi0).unwrap();
    }
    assert!((theta - DVector::from_column_slice(&a.final_theta)).amax() < 1e-14);
}

fn tiny(seed: u64) -> (HiddenGame, DVector<f64>, DVector<f64>) {
    let mut r = rng(seed);
    let game = quad_game(1.0, 1.0, gauss_mat(&mut r, 1, 1) * 0.5, gauss_vec(&mut r, 1) * 0.3, gauss_vec(&mut r, 1) * 0.3);
    (game, gauss_vec(&mut r, 1) * 0.5, gauss_vec(&mut r, 1) * 0.5)
}

#[test]
fn brute_force_matches_closed_form() {
    for seed in 0..10 {
        let (game, t, p) = tiny(seed);
        let q = game.quadratic_saddle().unwrap();
        let exact = q.nash_gap(&t, &p);
        let h = grid_resolution(3.0, MAX_GRID_STEPS);
        let bf = brute_force_gap(&game, &t, &p, 3.0, MAX_GRID_STEPS).unwrap();
        assert!(bf <= exact + 1e-12);
        assert!(exact - bf <= h * h, "seed {seed}: {exact} vs {bf}");
        let at = brute_force_gap(&game, &q.theta, &q.phi, 3.0, MAX_GRID_STEPS).unwrap();
        assert!(at.abs() <= h * h);
    }
}

#[test]
fn brute_force_refinement_is_monotone() {
    for seed in 0..10 {
        let (game, t, p) = tiny(seed);
        let exact = game.quadratic_saddle().unwrap().nash_gap(&t, &p);
        let errs: Vec<f64> = [11, 21, 41].iter().map(|&k| exact - brute_force_gap(&game, &t, &p, 3.0, k).unwrap()).collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-15), "{errs:?}");
    }
}

#[test]
fn brute_force_limits() {
    let mut r = rng(5);
    let game = quad_game(1.0, 1.0, gauss_mat(&mut r, 3, 2), DVector::zeros(3), DVector::zeros(2));
    let err = brute_force_gap(&game, &DVector::zeros(3), &DVector::zeros(2), 1.0, 5).unwrap_err();
    assert!(matches!(err, Error::DimensionTooLarge(_)));
    let (g, t, p) = tiny(0);
    assert!(brute_force_gap(&g, &t, &p, 1.0, 42).is_err());
    assert!(brute_force_gap(&g, &t, &p, 1.0, 1).is_err());
}

fn testbed_spec(horizon: u64, every: u64) -> hiddenmm::experiments::ExperimentSpec {
    let mut r = rng(6);
    let mut s = build_quadratic_testbed(1.0, 1.0, orthogonal(&mut r, 3), gauss_vec(&mut r, 3), gauss_vec(&mut r, 3)).unwrap();
    s.theta0 = gauss_vec(&mut r, 3);
    s.phi0 = gauss_vec(&mut r, 3);
    s.config.horizon = horizon;
    s.config.audit_every = every;
    s
}

#[test]
fn csv_layout() {
    for (horizon, every) in [(0u64, 1u64), (10, 1), (10, 3), (100, 10), (101, 10)] {
        let s = testbed_spec(horizon, every);
        let (rec, _) = run_experiment(&s).unwrap();
        let csv = csv_string(&rec);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# schema=1");
        let expected = 1 + horizon.div_ceil(every) as usize;
        assert_eq!(lines.len() - 2, expected, "horizon {horizon}, every {every}");
        let width = lines[1].split(',').count();
        assert_eq!(width, 9 + 4 * 3);
        assert!(lines[2..].iter().all(|l| l.split(',').count() == width));
        assert!(lines[2].starts_with("0,"));
    }
    let s = testbed_spec(10, 5);
    let (rec, _) = run_experiment(&s).unwrap();
    let mut untracked = rec.clone();
    for row in &mut untracked.rows {
        row.potential = None;
    }
    let line = csv_string(&untracked).lines().nth(2).unwrap().to_string();
    assert_eq!(line.split(',').nth(8), Some(""));
}

#[test]
fn reruns_are_byte_identical() {
    let s = testbed_spec(200, 7);
    let a = csv_string(&run_experiment(&s).unwrap().0);
    let b = csv_string(&run_experiment(&s).unwrap().0);
    assert_eq!(a, b);
}

#[test]
fn svg_only_for_three_dim_latents() {
    let s = testbed_spec(30, 5);
    let (rec, _) = run_experiment(&s).unwrap();
    let svg = svg_string(&rec).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    let mut r = rng(7);
    let game = quad_game(1.0, 1.0, gauss_mat(&mut r, 2, 2), DVector::zeros(2), DVector::zeros(2));
    let rec = run(&game, &Default::default(), &DVector::zeros(2), &DVector::zeros(2)).unwrap();
    assert!(svg_string(&rec).is_none());
}

#[test]
fn emit_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let s = testbed_spec(40, 10);
    let (rec, summary) = run_experiment(&s).unwrap();
    let out = OutputPaths::in_dir(&dir.path().join("nested"), "testbed", true);
    emit(&rec, &summary, &out).unwrap();
    let csv = std::fs::read_to_string(&out.csv).unwrap();
    assert_eq!(csv, csv_string(&rec));
    let back: RunSummary = serde_json::from_str(&std::fs::read_to_string(&out.json).unwrap()).unwrap();
    assert_eq!(back, summary);
    assert!(out.svg.as_ref().unwrap().exists());
    let no_svg = OutputPaths::in_dir(dir.path(), "plain", false);
    emit(&rec, &summary, &no_svg).unwrap();
    assert!(no_svg.svg.is_none() && no_svg.csv.exists());
}

#[test]
fn summary_reports_nash_gap() {
    let s = testbed_spec(500, 100);
    let (rec, summary) = run_experiment(&s).unwrap();
    let q = s.game.quadratic_saddle().unwrap();
    let gap = q.nash_gap(&DVector::from_column_slice(&rec.final_theta), &DVector::from_column_slice(&rec.final_phi));
    assert!((summary.metric_value - gap).abs() < 1e-6 * gap.max(1.0));
    assert_eq!(summary.schema, 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn simplex_projection_is_nearest(v in prop::collection::vec(-5.0f64..5.0, 1..6), seed in 0u64..1000) {
        let p = project_simplex(&v);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|x| *x >= 0.0));
        prop_assert_eq!(project_simplex(&p).iter().zip(&p).all(|(a, b)| (a - b).abs() < 1e-12), true);
        let dist = |y: &[f64]| v.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let mut r = rng(seed);
        for _ in 0..20 {
            let e: Vec<f64> = (0..v.len()).map(|_| -r.gen::<f64>().ln()).collect();
            let s: f64 = e.iter().sum();
            let y: Vec<f64> = e.iter().map(|x| x / s).collect();
            prop_assert!(dist(&p) <= dist(&y) + 1e-12);
        }
    }
}
