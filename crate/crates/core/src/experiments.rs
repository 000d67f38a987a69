//! Canonical experiments, brute-force oracles and output writers.
//!
//! Output schema (version 1):
//!
//! - CSV: a `# schema=1` line, then the header
//!   `t,value,grad_norm_theta,grad_norm_phi,sigma_min_F,sigma_min_G,dist_init,path_length,potential,`
//!   followed by `latent_min[i]`, `latent_max[i]`, `latent_min_projected[i]`,
//!   `latent_max_projected[i]` columns. An empty `potential` cell means the potential was not
//!   tracked.
//! - JSON: a [`RunSummary`].
//! - SVG: projected latent trajectories on the 2-simplex, 800 x 700 canvas.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::certificates::{CertOptions, PlCertificate};
use crate::error::{Error, Result};
use crate::objectives::{
    nash_gap, shared_coupling, Dataset, HiddenGame, InnerOptions, LatentLoss, LossKind, PlayerMap, Regularizer,
};
use crate::players::{empirical_spectrum, make_activation, ActivationKind, Dims, SpectralCertificate, TwoLayerNet};
use crate::solver::{base_rates, run, SaddleValue, SolverConfig, TheoryConstants, TrajectoryRecord};
use crate::validator::{check_neural_game_init, experiment_init_sigmas, normalize_rows, InitReport};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuccessMetric {
    /// Largest distance between a player's projected latent strategy and the target.
    LatentDistanceToTarget,
    NashGap,
    /// Larger of the two final gradient norms.
    GradNorm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputPaths {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub svg: Option<PathBuf>,
}

impl OutputPaths {
    /// `<dir>/<stem>.csv`, `<dir>/<stem>.json` and optionally `<dir>/<stem>.svg`.
    pub fn in_dir(dir: &Path, stem: &str, svg: bool) -> Self {
        Self {
            csv: dir.join(format!("{stem}.csv")),
            json: dir.join(format!("{stem}.json")),
            svg: svg.then(|| dir.join(format!("{stem}.svg"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub name: String,
    pub game: HiddenGame,
    pub config: SolverConfig,
    pub seeds: Vec<u64>,
    pub success_metric: SuccessMetric,
    pub success_tol: f64,
    pub outputs: OutputPaths,
    pub theta0: DVector<f64>,
    pub phi0: DVector<f64>,
    /// Target strategy for [`SuccessMetric::LatentDistanceToTarget`].
    pub target: Option<DVector<f64>>,
    /// Builder knobs echoed into the summary.
    pub params: BTreeMap<String, f64>,
}

impl ExperimentSpec {
    fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidParameter("experiment needs at least one seed".into()));
        }
        if !(self.success_tol > 0.0) {
            return Err(Error::InvalidParameter("success tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Uniform sample from the Euclidean ball of the given radius.
pub fn sample_ball<R: Rng>(rng: &mut R, dim: usize, radius: f64) -> DVector<f64> {
    let dir: DVector<f64> = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
    let n = dir.norm();
    let u: f64 = rng.gen();
    let r = radius * u.powf(1.0 / dim as f64);
    dir * (r / n)
}

/// Hidden rock-paper-scissors coupling `10 * [[0, -1, 1], [1, 0, -1], [-1, 1, 0]]`.
pub fn rps_coupling() -> DMatrix<f64> {
    10.0 * DMatrix::from_row_slice(3, 3, &[0.0, -1.0, 1.0, 1.0, 0.0, -1.0, -1.0, 1.0, 0.0])
}

pub const RPS_D0: usize = 5;
pub const RPS_D2: usize = 3;
pub const RPS_DEFAULT_D1: usize = 1280;
pub const RPS_INIT_RADIUS: f64 = 10.0;

/// Hidden rock-paper-scissors between two GeLU nets `R^5 -> R^3` optimized over their inputs.
pub fn build_rps(d1: usize, seed: u64) -> Result<ExperimentSpec> {
    build_rps_with_slack(d1, seed, 1.0)
}

pub fn build_rps_with_slack(d1: usize, seed: u64, slack: f64) -> Result<ExperimentSpec> {
    if d1 < 256 * RPS_D0 {
        return Err(Error::InvalidParameter(format!("d1 = {d1} is below 256 * d0 = {}", 256 * RPS_D0)));
    }
    let act = make_activation(ActivationKind::Gelu);
    let (s1, s2) = experiment_init_sigmas(d1, slack);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims::new(RPS_D0, d1, RPS_D2);
    let f = TwoLayerNet::init_gaussian(dims, s1, s2, act, rng.next_u64())?;
    let g = TwoLayerNet::init_gaussian(dims, s1, s2, act, rng.next_u64())?;
    let theta0 = sample_ball(&mut rng, RPS_D0, RPS_INIT_RADIUS);
    let phi0 = sample_ball(&mut rng, RPS_D0, RPS_INIT_RADIUS);
    let u = DVector::from_element(RPS_D2, 1.0 / 3.0);
    let eps = 1.0;
    let game = HiddenGame::input(
        PlayerMap::Net(f),
        PlayerMap::Net(g),
        rps_coupling(),
        Regularizer::centered(eps, &u),
        Regularizer::centered(eps, &u),
    )?;
    let config = SolverConfig { eta_theta: 0.01, eta_phi: 0.01, horizon: 100_000, seed, ..SolverConfig::default() };
    let params = BTreeMap::from([
        ("d0".to_string(), RPS_D0 as f64),
        ("d1".to_string(), d1 as f64),
        ("d2".to_string(), RPS_D2 as f64),
        ("sigma1".to_string(), s1),
        ("sigma2".to_string(), s2),
        ("eps".to_string(), eps),
        ("slack".to_string(), slack),
        ("init_radius".to_string(), RPS_INIT_RADIUS),
    ]);
    Ok(ExperimentSpec {
        name: "rps".into(),
        game,
        config,
        seeds: vec![seed],
        success_metric: SuccessMetric::LatentDistanceToTarget,
        success_tol: 1e-2,
        outputs: OutputPaths::in_dir(Path::new("out"), &format!("rps_seed{seed}"), true),
        theta0,
        phi0,
        target: Some(u),
        params,
    })
}

/// `L = (mu_theta/2)|theta - a|^2 + theta^T B phi - (mu_phi/2)|phi - b|^2` with identity maps.
///
/// Uses `eta_theta = mu_phi^2 / (18 L^3)`, `eta_phi = 1 / L` with `L` the exact Hessian norm,
/// a 10^4-step horizon and the closed-form potential. The initial point is the origin.
pub fn build_quadratic_testbed(
    mu_theta: f64,
    mu_phi: f64,
    b_mat: DMatrix<f64>,
    a: DVector<f64>,
    b: DVector<f64>,
) -> Result<ExperimentSpec> {
    if !(mu_theta > 0.0 && mu_phi > 0.0) {
        return Err(Error::InvalidParameter("testbed moduli must be positive".into()));
    }
    let (p, q) = b_mat.shape();
    if a.len() != p || b.len() != q {
        return Err(Error::Shape("testbed centers do not match the coupling".into()));
    }
    let game = HiddenGame::input(
        PlayerMap::Identity(p),
        PlayerMap::Identity(q),
        b_mat,
        Regularizer::centered(mu_theta, &a),
        Regularizer::centered(mu_phi, &b),
    )?;
    let saddle = game
        .quadratic_saddle()
        .ok_or_else(|| Error::InvalidParameter("singular saddle system".into()))?;
    let l = game.latent_smoothness();
    let (eta_theta, eta_phi) = base_rates(mu_phi, l);
    let config = SolverConfig {
        eta_theta,
        eta_phi,
        horizon: 10_000,
        saddle: SaddleValue::Known(saddle.value),
        ..SolverConfig::default()
    };
    let params = BTreeMap::from([
        ("mu_theta".to_string(), mu_theta),
        ("mu_phi".to_string(), mu_phi),
        ("L_grad".to_string(), l),
        ("saddle_value".to_string(), saddle.value),
    ]);
    Ok(ExperimentSpec {
        name: "quadratic".into(),
        game,
        config,
        seeds: vec![0],
        success_metric: SuccessMetric::NashGap,
        success_tol: 1e-6,
        outputs: OutputPaths::in_dir(Path::new("out"), "quadratic", false),
        theta0: DVector::zeros(p),
        phi0: DVector::zeros(q),
        target: None,
        params,
    })
}

/// Options of the neural ERM builder.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuralErmOptions {
    /// Proceed even when the width check fails.
    pub force: bool,
    /// Constant of the width and scale conditions.
    pub kappa: f64,
    pub ridge: f64,
    pub horizon: u64,
}

impl Default for NeuralErmOptions {
    fn default() -> Self {
        Self { force: false, kappa: 1.0, ridge: 0.1, horizon: 2000 }
    }
}

fn gaussian_rows<R: Rng>(rng: &mut R, n: usize, d: usize) -> DMatrix<f64> {
    normalize_rows(&DMatrix::from_fn(n, d, |_, _| -> f64 { StandardNormal.sample(rng) }))
}

fn labels<R: Rng>(rng: &mut R, n: usize, dlat: usize, kind: LossKind) -> Vec<DVector<f64>> {
    (0..n)
        .map(|_| match kind {
            LossKind::CrossEntropyL2 => {
                let e = DVector::from_fn(dlat, |_, _| rng.gen::<f64>().ln().abs() + 1e-3);
                let s = e.sum();
                e / s
            }
            _ => sample_ball(rng, dlat, 1.0),
        })
        .collect()
}

/// Separable game between two GeLU nets trained on unit-norm Gaussian data.
///
/// `sigma1 = 1/(2 sqrt(d0))`, `sigma2 = 1/sqrt(d1)`, so the scale condition holds with room.
/// The shared coupling has operator norm `1/(2n)` (block norm 1/2). Steps are
/// `eta_phi = 1 / L_est`, `eta_theta = eta_phi / 2` with
/// `L_est = L_latent * max(sigma_max(J_F), sigma_max(J_G))^2` at the initialization.
#[allow(clippy::too_many_arguments)]
pub fn build_neural_erm(
    n: usize,
    d0f: usize,
    d1f: usize,
    d0g: usize,
    d1g: usize,
    dlat: usize,
    loss_kind: LossKind,
    seed: u64,
    opts: &NeuralErmOptions,
) -> Result<ExperimentSpec> {
    if n < d0f.max(d0g) {
        return Err(Error::InvalidParameter(format!("n = {n} must be at least max(d0F, d0G)")));
    }
    let loss = match loss_kind {
        LossKind::Mse => LatentLoss::mse(),
        LossKind::CrossEntropyL2 => LatentLoss::cross_entropy_l2(opts.ridge)?,
        other => {
            return Err(Error::InvalidParameter(format!("{other:?} is not strongly convex")));
        }
    };
    let sig = |d0: usize, d1: usize| (0.5 / (d0 as f64).sqrt(), 1.0 / (d1 as f64).sqrt());
    let (s1f, s2f) = sig(d0f, d1f);
    let (s1g, s2g) = sig(d0g, d1g);
    for (s1, s2, d0, d1, who) in [(s1f, s2f, d0f, d1f, "F"), (s1g, s2g, d0g, d1g, "G")] {
        let report = check_neural_game_init(s1, s2, d0, d1, n, loss.mu, opts.kappa);
        if !report.overall && !opts.force {
            let failing: Vec<_> = report.failing().map(|c| c.name.clone()).collect();
            return Err(Error::InvalidParameter(format!("player {who} fails {failing:?}; set force to proceed")));
        }
    }
    let act = make_activation(ActivationKind::Gelu);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = TwoLayerNet::init_gaussian(Dims::new(d0f, d1f, dlat), s1f, s2f, act, rng.next_u64())?;
    let g = TwoLayerNet::init_gaussian(Dims::new(d0g, d1g, dlat), s1g, s2g, act, rng.next_u64())?;
    let data_f = Dataset::new(gaussian_rows(&mut rng, n, d0f), labels(&mut rng, n, dlat, loss_kind))?;
    let data_g = Dataset::new(gaussian_rows(&mut rng, n, d0g), labels(&mut rng, n, dlat, loss_kind))?;
    let a = DMatrix::from_fn(dlat, dlat, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
    let a = &a * (0.5 / (n as f64 * empirical_spectrum(&a)?.1));
    let theta0 = f.params();
    let phi0 = g.params();
    let game = HiddenGame::separable(f, g, shared_coupling(&a, n, n), data_f, data_g, loss.clone(), loss)?;
    let smax = empirical_spectrum(&game.jacobian_min(&theta0)?)?
        .1
        .max(empirical_spectrum(&game.jacobian_max(&phi0)?)?.1);
    let l_est = game.latent_smoothness() * smax * smax;
    let eta_phi = 1.0 / l_est;
    let config = SolverConfig {
        eta_theta: 0.5 * eta_phi,
        eta_phi,
        horizon: opts.horizon,
        seed,
        ..SolverConfig::default()
    };
    let params = BTreeMap::from([
        ("n".to_string(), n as f64),
        ("d0F".to_string(), d0f as f64),
        ("d1F".to_string(), d1f as f64),
        ("d0G".to_string(), d0g as f64),
        ("d1G".to_string(), d1g as f64),
        ("dlat".to_string(), dlat as f64),
        ("sigma1F".to_string(), s1f),
        ("sigma2F".to_string(), s2f),
        ("sigma1G".to_string(), s1g),
        ("sigma2G".to_string(), s2g),
        ("L_est".to_string(), l_est),
        ("kappa".to_string(), opts.kappa),
    ]);
    Ok(ExperimentSpec {
        name: "neural_erm".into(),
        game,
        config,
        seeds: vec![seed],
        success_metric: SuccessMetric::GradNorm,
        success_tol: 1e-4,
        outputs: OutputPaths::in_dir(Path::new("out"), &format!("neural_erm_seed{seed}"), false),
        theta0,
        phi0,
        target: None,
        params,
    })
}

/// Largest supported grid size per axis for [`brute_force_gap`].
pub const MAX_GRID_STEPS: usize = 41;

/// Spacing of a grid with `steps` points on `[-radius, radius]`.
pub fn grid_resolution(radius: f64, steps: usize) -> f64 {
    2.0 * radius / (steps.max(2) - 1) as f64
}

fn grid_points(dim: usize, radius: f64, steps: usize) -> Vec<DVector<f64>> {
    let h = grid_resolution(radius, steps);
    let total = steps.pow(dim as u32);
    (0..total)
        .map(|mut idx| {
            DVector::from_fn(dim, |_, _| {
                let k = idx % steps;
                idx /= steps;
                -radius + k as f64 * h
            })
        })
        .collect()
}

/// Grid-search Nash gap over `[-radius, radius]^dim` for each player.
pub fn brute_force_gap(game: &HiddenGame, theta: &DVector<f64>, phi: &DVector<f64>, radius: f64, steps: usize) -> Result<f64> {
    let total = game.theta_dim() + game.phi_dim();
    if total > 4 {
        return Err(Error::DimensionTooLarge(format!("total input dimension {total} exceeds 4")));
    }
    if !(2..=MAX_GRID_STEPS).contains(&steps) {
        return Err(Error::DimensionTooLarge(format!("grid_steps must lie in 2..={MAX_GRID_STEPS}, got {steps}")));
    }
    let mut up = f64::NEG_INFINITY;
    for p in grid_points(game.phi_dim(), radius, steps) {
        up = up.max(game.value(theta, &p)?);
    }
    let mut down = f64::INFINITY;
    for t in grid_points(game.theta_dim(), radius, steps) {
        down = down.min(game.value(&t, phi)?);
    }
    Ok(up - down)
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut css = 0.0;
    let mut tau = 0.0;
    for (i, ui) in u.iter().enumerate() {
        css += ui;
        let t = (css - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}

/// Serializable snapshot of a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetRecord {
    pub dims: Dims,
    pub activation: ActivationKind,
    pub init_std: Option<(f64, f64)>,
    pub w1: Vec<Vec<f64>>,
    pub w2: Vec<Vec<f64>>,
}

impl NetRecord {
    pub fn of(net: &TwoLayerNet) -> Self {
        let rows = |m: &DMatrix<f64>| (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect();
        Self {
            dims: net.dims(),
            activation: net.activation().kind,
            init_std: net.init_std(),
            w1: rows(net.w1()),
            w2: rows(net.w2()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateSummary {
    pub pl: PlCertificate,
    pub min_player: SpectralCertificate,
    pub max_player: SpectralCertificate,
}

/// JSON run summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: u32,
    pub name: String,
    pub seed: u64,
    pub config: SolverConfig,
    pub params: BTreeMap<String, f64>,
    pub theta0: Vec<f64>,
    pub phi0: Vec<f64>,
    pub success_metric: SuccessMetric,
    pub success_tol: f64,
    pub metric_value: f64,
    pub success: bool,
    pub steps: u64,
    pub stop: crate::solver::StopReason,
    pub potential_estimated: bool,
    pub violations: usize,
    pub theory: Option<TheoryConstants>,
    pub certificates: Option<CertificateSummary>,
    pub init_report: Option<InitReport>,
    pub verdicts: BTreeMap<String, bool>,
    pub players: Vec<NetRecord>,
}

/// Evaluates the spec's success metric on a finished run.
pub fn success_metric_value(spec: &ExperimentSpec, record: &TrajectoryRecord) -> Result<f64> {
    let last = record.last();
    match spec.success_metric {
        SuccessMetric::GradNorm => Ok(last.grad_norm_theta.max(last.grad_norm_phi)),
        SuccessMetric::NashGap => {
            let theta = DVector::from_column_slice(&record.final_theta);
            let phi = DVector::from_column_slice(&record.final_phi);
            nash_gap(&spec.game, &theta, &phi, &InnerOptions::with_tol(1e-6))
        }
        SuccessMetric::LatentDistanceToTarget => {
            let target = spec
                .target
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("latent-distance metric needs a target".into()))?;
            let dist = |v: &[f64]| {
                let p = project_simplex(v);
                p.iter().zip(target.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            };
            Ok(dist(&last.latent_min).max(dist(&last.latent_max)))
        }
    }
}

/// Certificates of the spec's game at its initial point.
pub fn certify_spec(spec: &ExperimentSpec, opts: &CertOptions) -> Result<CertificateSummary> {
    let (pl, f, g) = PlCertificate::build(&spec.game, &spec.theta0, &spec.phi0, opts)?;
    Ok(CertificateSummary { pl, min_player: f, max_player: g })
}

/// Runs the spec from its initial point and builds the summary (without certificates).
pub fn run_experiment(spec: &ExperimentSpec) -> Result<(TrajectoryRecord, RunSummary)> {
    spec.validate()?;
    let record = run(&spec.game, &spec.config, &spec.theta0, &spec.phi0)?;
    let metric = success_metric_value(spec, &record)?;
    let success = metric <= spec.success_tol;
    let summary = RunSummary {
        schema: SCHEMA_VERSION,
        name: spec.name.clone(),
        seed: spec.seeds[0],
        config: spec.config.clone(),
        params: spec.params.clone(),
        theta0: spec.theta0.iter().cloned().collect(),
        phi0: spec.phi0.iter().cloned().collect(),
        success_metric: spec.success_metric,
        success_tol: spec.success_tol,
        metric_value: metric,
        success,
        steps: record.steps,
        stop: record.stop.clone(),
        potential_estimated: record.potential_estimated,
        violations: record.violations.len(),
        theory: None,
        certificates: None,
        init_report: None,
        verdicts: BTreeMap::from([("success".to_string(), success)]),
        players: Vec::new(),
    };
    Ok((record, summary))
}

/// Snapshots of the networks in a game.
pub fn net_records(game: &HiddenGame) -> Vec<NetRecord> {
    use crate::objectives::GameFamily;
    match game.family() {
        GameFamily::Input(g) => [&g.min_map, &g.max_map].iter().filter_map(|m| m.net()).map(NetRecord::of).collect(),
        GameFamily::Separable(g) => vec![NetRecord::of(&g.min_net), NetRecord::of(&g.max_net)],
    }
}

/// Renders the CSV for a trajectory.
pub fn csv_string(record: &TrajectoryRecord) -> String {
    let first = &record.rows[0];
    let (p, q) = (first.latent_min.len(), first.latent_max.len());
    let mut s = format!("# schema={SCHEMA_VERSION}\n");
    s.push_str("t,value,grad_norm_theta,grad_norm_phi,sigma_min_F,sigma_min_G,dist_init,path_length,potential");
    for (name, n) in [("latent_min", p), ("latent_max", q), ("latent_min_projected", p), ("latent_max_projected", q)] {
        for i in 0..n {
            let _ = write!(s, ",{name}[{i}]");
        }
    }
    s.push('\n');
    for r in &record.rows {
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},",
            r.t, r.value, r.grad_norm_theta, r.grad_norm_phi, r.sigma_min_f, r.sigma_min_g, r.dist_from_init, r.path_length
        );
        if let Some(pv) = r.potential {
            let _ = write!(s, "{pv}");
        }
        let cols = r
            .latent_min
            .iter()
            .chain(&r.latent_max)
            .cloned()
            .chain(project_simplex(&r.latent_min))
            .chain(project_simplex(&r.latent_max));
        for v in cols {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

const SVG_W: f64 = 800.0;
const SVG_H: f64 = 700.0;

/// Projected latent trajectories on the 2-simplex, or `None` when the latents are not 3-dimensional.
pub fn svg_string(record: &TrajectoryRecord) -> Option<String> {
    let first = &record.rows[0];
    if first.latent_min.len() != 3 || first.latent_max.len() != 3 {
        return None;
    }
    let verts = [(100.0, 620.0), (700.0, 620.0), (400.0, 620.0 - 600.0 * 3f64.sqrt() / 2.0)];
    let to_xy = |p: &[f64]| {
        let x: f64 = (0..3).map(|i| p[i] * verts[i].0).sum();
        let y: f64 = (0..3).map(|i| p[i] * verts[i].1).sum();
        (x, y)
    };
    let path = |sel: &dyn Fn(&crate::solver::AuditRow) -> &Vec<f64>| {
        let mut d = String::new();
        for (k, r) in record.rows.iter().enumerate() {
            let (x, y) = to_xy(&project_simplex(sel(r)));
            let _ = write!(d, "{}{x:.3},{y:.3} ", if k == 0 { "M" } else { "L" });
        }
        d
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}">"#
    );
    let _ = writeln!(
        s,
        r#"<path d="M{:.3},{:.3} L{:.3},{:.3} L{:.3},{:.3} Z" fill="none" stroke="black" stroke-width="1.5"/>"#,
        verts[0].0, verts[0].1, verts[1].0, verts[1].1, verts[2].0, verts[2].1
    );
    let _ = writeln!(s, r##"<path d="{}" fill="none" stroke="#1f77b4" stroke-width="1.2"/>"##, path(&|r| &r.latent_min));
    let _ = writeln!(s, r##"<path d="{}" fill="none" stroke="#d62728" stroke-width="1.2"/>"##, path(&|r| &r.latent_max));
    s.push_str("</svg>\n");
    Some(s)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, contents)?;
    Ok(())
}

/// Writes the CSV, JSON summary and (when requested and applicable) the SVG.
pub fn emit(record: &TrajectoryRecord, summary: &RunSummary, outputs: &OutputPaths) -> Result<()> {
    write_file(&outputs.csv, &csv_string(record))?;
    write_file(&outputs.json, &serde_json::to_string_pretty(summary)?)?;
    if let (Some(path), Some(svg)) = (&outputs.svg, svg_string(record)) {
        write_file(path, &svg)?;
    }
    Ok(())
}
