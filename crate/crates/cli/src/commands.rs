use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hiddenmm::certificates::active_lipschitz;
use hiddenmm::experiments::{
    build_rps_with_slack, emit, net_records, run_experiment, OutputPaths, RPS_D0, RPS_D2, RPS_DEFAULT_D1,
    SCHEMA_VERSION,
};
use hiddenmm::players::{certify_input, make_activation, ActivationKind, Dims, TwoLayerNet, Verdict};
use hiddenmm::solver::{base_rates, theory_constants, MonitorPolicy, StopReason};
use hiddenmm::validator::{
    check_input_game_init, check_neural_game_init, experiment_init_sigmas, InitReport, InputInitParams,
};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ConfigFile, Knobs};
use crate::{AuditArgs, CheckInitArgs, CliError, ConstantsArgs, RpsArgs};

fn config_err(e: hiddenmm::Error) -> CliError {
    CliError::Config(e.to_string())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Failure(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

fn parse_monitor(s: &str) -> Result<MonitorPolicy, CliError> {
    match s {
        "warn" => Ok(MonitorPolicy::Warn),
        "abort" => Ok(MonitorPolicy::Abort),
        other => Err(CliError::Config(format!("monitor must be warn or abort, got `{other}`"))),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RpsConfig {
    pub d1: usize,
    pub seeds: u64,
    pub first_seed: u64,
    pub steps: u64,
    pub out: PathBuf,
    pub jobs: usize,
    pub threshold: f64,
    pub audit_every: u64,
    pub slack: f64,
    pub monitor: MonitorPolicy,
    pub svg: bool,
}

pub fn resolve_rps(a: &RpsArgs) -> Result<RpsConfig, CliError> {
    let mut file = ConfigFile::load_opt(a.config.as_deref())?;
    let mut k = file.take("rps");
    let out_file: Option<PathBuf> = k.get("out")?;
    let monitor: String = k.pick("monitor", a.monitor.clone(), "warn".into())?;
    let cfg = RpsConfig {
        d1: k.pick("d1", a.d1, RPS_DEFAULT_D1)?,
        seeds: k.pick("seeds", a.seeds, 10)?,
        first_seed: k.pick("first_seed", a.first_seed, 0)?,
        steps: k.pick("steps", a.steps, 100_000)?,
        out: a
            .out
            .clone()
            .or_else(|| std::env::var_os("HIDDENMM_OUT").map(PathBuf::from))
            .or(out_file)
            .unwrap_or_else(|| PathBuf::from("out")),
        jobs: k.pick("jobs", a.jobs, 0)?,
        threshold: k.pick("threshold", a.threshold, 0.9)?,
        audit_every: k.pick("audit_every", a.audit_every, 100)?,
        slack: k.pick("slack", a.slack, 1.0)?,
        monitor: parse_monitor(&monitor)?,
        svg: k.pick("svg", a.svg, true)?,
    };
    k.finish()?;
    file.finish()?;
    if cfg.seeds == 0 {
        return Err(CliError::Config("seeds must be positive".into()));
    }
    if !(0.0..=1.0).contains(&cfg.threshold) {
        return Err(CliError::Config("threshold must lie in [0, 1]".into()));
    }
    if cfg.audit_every == 0 {
        return Err(CliError::Config("audit_every must be positive".into()));
    }
    if cfg.d1 < 256 * RPS_D0 {
        return Err(CliError::Config(format!("d1 = {} is below 256 * d0 = {}", cfg.d1, 256 * RPS_D0)));
    }
    if !(cfg.slack > 0.0 && cfg.slack.is_finite()) {
        return Err(CliError::Config("slack must be positive".into()));
    }
    Ok(cfg)
}

#[derive(Debug, Serialize)]
struct SeedOutcome {
    seed: u64,
    metric_value: f64,
    success: bool,
    steps: u64,
    stop: StopReason,
    init_conditions_hold: bool,
    violations: usize,
}

#[derive(Debug, Serialize)]
struct RpsReport<'a> {
    schema: u32,
    command: &'static str,
    config: &'a RpsConfig,
    runs: Vec<SeedOutcome>,
    successes: u64,
    fraction: f64,
    pass: bool,
}

fn rps_seed(cfg: &RpsConfig, seed: u64) -> Result<SeedOutcome, CliError> {
    let mut spec = build_rps_with_slack(cfg.d1, seed, cfg.slack)?;
    spec.config.horizon = cfg.steps;
    spec.config.audit_every = cfg.audit_every;
    spec.config.monitor = cfg.monitor;
    spec.outputs = OutputPaths::in_dir(&cfg.out, &format!("rps_seed{seed}"), cfg.svg);
    let (s1, s2) = (spec.params["sigma1"], spec.params["sigma2"]);
    let report = check_input_game_init(&InputInitParams {
        s1_f: s1,
        s2_f: s2,
        s1_g: s1,
        s2_g: s2,
        d0_f: RPS_D0,
        d1_f: cfg.d1,
        d2_f: RPS_D2,
        d0_g: RPS_D0,
        d1_g: cfg.d1,
        d2_g: RPS_D2,
        theta0_norm: spec.theta0.norm(),
        phi0_norm: spec.phi0.norm(),
        eps: spec.params["eps"],
        sigma_max_a: spec.game.coupling_norm(),
        c: 1.0,
        slack: cfg.slack,
    });
    let (record, mut summary) = run_experiment(&spec)?;
    summary.verdicts.insert("init_conditions".into(), report.overall);
    let init_ok = report.overall;
    summary.init_report = Some(report);
    summary.players = net_records(&spec.game);
    emit(&record, &summary, &spec.outputs)?;
    Ok(SeedOutcome {
        seed,
        metric_value: summary.metric_value,
        success: summary.success,
        steps: summary.steps,
        stop: summary.stop,
        init_conditions_hold: init_ok,
        violations: summary.violations,
    })
}

pub fn rps(a: &RpsArgs) -> Result<bool, CliError> {
    let cfg = resolve_rps(a)?;
    std::fs::create_dir_all(&cfg.out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| CliError::Failure(e.to_string()))?;
    let seeds: Vec<u64> = (cfg.first_seed..cfg.first_seed + cfg.seeds).collect();
    let results: Vec<Result<SeedOutcome, CliError>> =
        pool.install(|| seeds.par_iter().map(|&s| rps_seed(&cfg, s)).collect());
    let mut runs = Vec::with_capacity(results.len());
    for r in results {
        runs.push(r?);
    }
    for r in &runs {
        println!(
            "seed {:>4}  distance {:.3e}  steps {:>6}  {}",
            r.seed,
            r.metric_value,
            r.steps,
            if r.success { "ok" } else { "FAIL" }
        );
    }
    let successes = runs.iter().filter(|r| r.success).count() as u64;
    let fraction = successes as f64 / cfg.seeds as f64;
    let pass = fraction >= cfg.threshold;
    println!("{successes}/{} seeds within tolerance (need fraction {})", cfg.seeds, cfg.threshold);
    let report = RpsReport { schema: SCHEMA_VERSION, command: "rps", config: &cfg, runs, successes, fraction, pass };
    write_json(&cfg.out.join("rps_summary.json"), &report)?;
    Ok(pass)
}

fn input_params(k: &mut Knobs) -> Result<InputInitParams, CliError> {
    let p = InputInitParams {
        s1_f: k.require("sigma1_f")?,
        s2_f: k.require("sigma2_f")?,
        s1_g: k.require("sigma1_g")?,
        s2_g: k.require("sigma2_g")?,
        d0_f: k.require("d0_f")?,
        d1_f: k.require("d1_f")?,
        d2_f: k.require("d2_f")?,
        d0_g: k.require("d0_g")?,
        d1_g: k.require("d1_g")?,
        d2_g: k.require("d2_g")?,
        theta0_norm: k.require("theta0_norm")?,
        phi0_norm: k.require("phi0_norm")?,
        eps: k.require("eps")?,
        sigma_max_a: k.require("sigma_max_a")?,
        c: k.get("c")?.unwrap_or(1.0),
        slack: k.get("slack")?.unwrap_or(1.0),
    };
    Ok(p)
}

pub fn check_init(a: &CheckInitArgs) -> Result<bool, CliError> {
    let mut file = ConfigFile::load(&a.config)?;
    if !file.has_section("input") && !file.has_section("neural") {
        return Err(CliError::Config("config needs an [input] or [neural] section".into()));
    }
    let mut reports: BTreeMap<&str, InitReport> = BTreeMap::new();
    if file.has_section("input") {
        let mut k = file.take("input");
        let p = input_params(&mut k)?;
        k.finish()?;
        reports.insert("input", check_input_game_init(&p));
    }
    if file.has_section("neural") {
        let mut k = file.take("neural");
        let r = check_neural_game_init(
            k.require("sigma1")?,
            k.require("sigma2")?,
            k.require("d0")?,
            k.require("d1")?,
            k.require("n")?,
            k.require("mu")?,
            k.get("kappa")?.unwrap_or(1.0),
        );
        k.finish()?;
        reports.insert("neural", r);
    }
    file.finish()?;
    for (name, r) in &reports {
        println!("[{name}]");
        print!("{}", r.table());
        let failing: Vec<&str> = r.failing().map(|c| c.name.as_str()).collect();
        if !failing.is_empty() {
            println!("failing: {}", failing.join(", "));
        }
    }
    if let Some(path) = &a.json {
        write_json(path, &reports)?;
    }
    Ok(reports.values().all(|r| r.overall))
}

#[derive(Debug, Serialize)]
struct AuditConfig {
    d0: usize,
    d1: usize,
    d2: usize,
    sigma1: f64,
    sigma2: f64,
    seeds: u64,
    first_seed: u64,
    c: f64,
    x_norm: f64,
    activation: ActivationKind,
    threshold: f64,
}

fn resolve_audit(a: &AuditArgs) -> Result<AuditConfig, CliError> {
    let mut file = ConfigFile::load_opt(a.config.as_deref())?;
    let mut k = file.take("audit");
    let d1 = k.pick("d1", a.d1, 512)?;
    let act: String = k.pick("activation", a.activation.clone(), "gelu".into())?;
    let cfg = AuditConfig {
        d0: k.pick("d0", a.d0, 2)?,
        d1,
        d2: k.pick("d2", a.d2, 2)?,
        sigma1: k.pick("sigma1", a.sigma1, experiment_init_sigmas(d1.max(1), 1.0).0)?,
        sigma2: k.pick("sigma2", a.sigma2, 1.0)?,
        seeds: k.pick("seeds", a.seeds, 100)?,
        first_seed: k.pick("first_seed", a.first_seed, 0)?,
        c: k.pick("c", a.c, 1.0)?,
        x_norm: k.pick("x_norm", a.x_norm, 1.0)?,
        activation: act.parse().map_err(config_err)?,
        threshold: k.pick("threshold", a.threshold, 0.95)?,
    };
    k.finish()?;
    file.finish()?;
    if cfg.seeds == 0 {
        return Err(CliError::Config("seeds must be positive".into()));
    }
    if cfg.d0 == 0 || cfg.d1 == 0 || cfg.d2 == 0 {
        return Err(CliError::Config("dimensions must be positive".into()));
    }
    if !(cfg.sigma1 > 0.0 && cfg.sigma2 > 0.0) {
        return Err(CliError::Config("sigma1 and sigma2 must be positive".into()));
    }
    Ok(cfg)
}

pub fn audit_spectrum(a: &AuditArgs) -> Result<bool, CliError> {
    let cfg = resolve_audit(a)?;
    let act = make_activation(cfg.activation);
    let x = DVector::from_element(cfg.d0, cfg.x_norm / (cfg.d0 as f64).sqrt());
    println!(
        "{:>6} {:>12} {:>12} {:>12} {:>12}  verdict",
        "seed", "sigma_min", "lower", "sigma_max", "upper"
    );
    let (mut upper_ok, mut lower_ok, mut vacuous, mut violated) = (0u64, 0u64, 0u64, 0u64);
    for seed in cfg.first_seed..cfg.first_seed + cfg.seeds {
        let net = TwoLayerNet::init_gaussian(Dims::new(cfg.d0, cfg.d1, cfg.d2), cfg.sigma1, cfg.sigma2, act, seed)?;
        let cert = certify_input(&net, &x, cfg.c)?;
        upper_ok += u64::from(cert.sigma_max_emp <= cert.sigma_max_upper);
        lower_ok += u64::from(cert.sigma_min_emp >= cert.sigma_min_lower);
        match cert.verdict {
            Verdict::Vacuous => vacuous += 1,
            Verdict::Violated => violated += 1,
            Verdict::Holds => {}
        }
        println!(
            "{:>6} {:>12.5e} {:>12.5e} {:>12.5e} {:>12.5e}  {:?}",
            seed, cert.sigma_min_emp, cert.sigma_min_lower, cert.sigma_max_emp, cert.sigma_max_upper, cert.verdict
        );
    }
    let n = cfg.seeds;
    let freq = (n - violated) as f64 / n as f64;
    println!("upper bound holds {upper_ok}/{n}, lower bound holds {lower_ok}/{n}, vacuous {vacuous}/{n}");
    println!("non-violated frequency {freq:.3} (need {})", cfg.threshold);
    Ok(freq >= cfg.threshold)
}

#[derive(Debug, Serialize)]
struct ConstantsReport {
    mu_theta: f64,
    mu_phi: f64,
    l_grad: f64,
    eta_theta: f64,
    eta_phi: f64,
    theory: hiddenmm::solver::TheoryConstants,
}

pub fn constants(a: &ConstantsArgs) -> Result<bool, CliError> {
    let mut file = ConfigFile::load_opt(a.config.as_deref())?;
    let mut k = file.take("constants");
    let need = |flag: Option<f64>, file: Option<f64>, key: &str| {
        flag.or(file).ok_or_else(|| CliError::Config(format!("missing `{key}`")))
    };
    let mu_theta = need(a.mu_theta, k.get("mu_theta")?, "mu_theta")?;
    let mu_phi = need(a.mu_phi, k.get("mu_phi")?, "mu_phi")?;
    let l_grad = need(a.l_grad, k.get("l_grad")?, "l_grad")?;
    if !(mu_phi > 0.0 && l_grad > 0.0) {
        return Err(CliError::Config("mu_phi and l_grad must be positive".into()));
    }
    let (et, ep) = base_rates(mu_phi, l_grad);
    let eta_theta = k.pick("eta_theta", a.eta_theta, et)?;
    let eta_phi = k.pick("eta_phi", a.eta_phi, ep)?;
    let p0 = k.pick("p0", a.p0, 1.0)?;
    let radius: Option<f64> = a.radius.or(k.get("radius")?);
    let nu_max: Option<f64> = a.nu_max.or(k.get("nu_max")?);
    let json: Option<PathBuf> = a.json.clone().or(k.get("json")?);
    k.finish()?;
    file.finish()?;
    let mut tc = theory_constants(mu_theta, mu_phi, l_grad, eta_theta, eta_phi, p0).map_err(config_err)?;
    tc.radius = radius;
    if let (Some(r), Some(nu)) = (radius, nu_max) {
        tc.l_act = Some(active_lipschitz(l_grad, r, nu));
    }
    let rows: [(&str, Option<f64>); 10] = [
        ("eta_theta", Some(eta_theta)),
        ("eta_phi", Some(eta_phi)),
        ("L", Some(tc.l_big)),
        ("alpha1", Some(tc.alpha1)),
        ("c", Some(tc.c)),
        ("P0", Some(tc.p0_bound)),
        ("path_bound", Some(tc.path_bound)),
        ("path_bound_tight", Some(tc.path_bound_tight)),
        ("L_act", tc.l_act),
        ("radius", tc.radius),
    ];
    for (name, v) in rows {
        match v {
            Some(v) => println!("{name:<18} {v:.6}"),
            None => println!("{name:<18} -"),
        }
    }
    if !tc.contraction {
        println!("no contraction certificate (c = {:.6} outside (0, 1))", tc.c);
    }
    let report = ConstantsReport { mu_theta, mu_phi, l_grad, eta_theta, eta_phi, theory: tc };
    println!("{}", serde_json::to_string(&report).map_err(|e| CliError::Failure(e.to_string()))?);
    if let Some(path) = json {
        write_json(&path, &report)?;
    }
    Ok(true)
}
