//! Alternating gradient descent-ascent with per-iteration audits, the Lyapunov potential and
//! the contraction / path-length constants.
//!
//! One AltGDA step is
//!
//! ```text
//! theta' = theta - eta_theta * grad_theta L(theta, phi)
//! phi'   = phi   + eta_phi   * grad_phi   L(theta', phi)
//! ```
//!
//! so the max player always sees the freshly updated min iterate.

use std::sync::atomic::{AtomicBool, Ordering};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{best_response_max_strict, HiddenGame, InnerOptions};
use crate::players::empirical_spectrum;

/// What the monitor does when a certificate is breached during a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MonitorPolicy {
    Warn,
    Abort,
}

/// How the potential is referenced during a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaddleValue {
    /// Potential is not tracked.
    Untracked,
    /// Potential uses a known saddle value.
    Known(f64),
    /// Potential is reported relative to `max_phi L(theta_T, phi)` at the final iterate.
    Estimated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub eta_theta: f64,
    pub eta_phi: f64,
    /// Weight of the primal-dual gap in the potential.
    pub lambda_pot: f64,
    pub horizon: u64,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub audit_every: u64,
    pub seed: u64,
    /// Monitor threshold on the audited `sigma_min` of both Jacobians; 0 disables.
    pub sigma_min_floor: f64,
    /// Stop once both gradient norms are at most this value; 0 disables.
    pub stop_grad_tol: f64,
    /// Certified radius around the initialization; `None` disables the containment check.
    pub radius: Option<f64>,
    pub monitor: MonitorPolicy,
    pub saddle: SaddleValue,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eta_theta: 0.01,
            eta_phi: 0.01,
            lambda_pot: 0.1,
            horizon: 1000,
            inner_tol: 1e-8,
            inner_max_iter: 200_000,
            audit_every: 100,
            seed: 0,
            sigma_min_floor: 0.0,
            stop_grad_tol: 0.0,
            radius: None,
            monitor: MonitorPolicy::Warn,
            saddle: SaddleValue::Untracked,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, name: &str| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be finite and non-negative, got {v}")))
            }
        };
        pos(self.eta_theta, "eta_theta")?;
        pos(self.eta_phi, "eta_phi")?;
        pos(self.inner_tol, "inner_tol")?;
        pos(self.sigma_min_floor, "sigma_min_floor")?;
        pos(self.stop_grad_tol, "stop_grad_tol")?;
        if !(self.lambda_pot >= 0.0 && self.lambda_pot.is_finite()) {
            return Err(Error::InvalidParameter("lambda_pot must be non-negative".into()));
        }
        if self.audit_every == 0 {
            return Err(Error::InvalidParameter("audit_every must be positive".into()));
        }
        Ok(())
    }

    fn inner(&self) -> InnerOptions {
        InnerOptions { tol: self.inner_tol, max_iter: self.inner_max_iter, ..InnerOptions::default() }
    }
}

/// One audited iterate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub t: u64,
    pub value: f64,
    pub grad_norm_theta: f64,
    pub grad_norm_phi: f64,
    pub sigma_min_f: f64,
    pub sigma_min_g: f64,
    /// `|(theta_t, phi_t) - (theta_0, phi_0)|`.
    pub dist_from_init: f64,
    /// `sum_{s<t} |theta_{s+1} - theta_s| + |phi_{s+1} - phi_s|`.
    pub path_length: f64,
    pub potential: Option<f64>,
    /// Displacement of the step taken from this iterate, if one was taken.
    pub step_displacement: Option<f64>,
    pub latent_min: Vec<f64>,
    pub latent_max: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub t: u64,
    pub kind: String,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Horizon,
    GradTol,
    Aborted(String),
    Cancelled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub rows: Vec<AuditRow>,
    pub violations: Vec<Violation>,
    pub stop: StopReason,
    /// Steps actually taken.
    pub steps: u64,
    pub potential_estimated: bool,
    pub final_theta: Vec<f64>,
    pub final_phi: Vec<f64>,
}

impl TrajectoryRecord {
    pub fn last(&self) -> &AuditRow {
        self.rows.last().expect("a record always has the t = 0 row")
    }
}

/// One AltGDA step.
pub fn altgda_step(
    game: &HiddenGame,
    theta: &DVector<f64>,
    phi: &DVector<f64>,
    eta_theta: f64,
    eta_phi: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let gt = game.grad_theta(theta, phi)?;
    let theta_next = theta - eta_theta * gt;
    let gp = game.grad_phi(&theta_next, phi)?;
    let phi_next = phi + eta_phi * gp;
    if !theta_next.iter().chain(phi_next.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("AltGDA iterate".into()));
    }
    Ok((theta_next, phi_next))
}

/// `P = (Phi(theta) - saddle_value) + lambda (Phi(theta) - L(theta, phi))` with
/// `Phi(theta) = max_phi L(theta, phi)`.
///
/// When both players are identity maps the two gaps are evaluated as closed-form quadratic
/// forms, which avoids cancellation near the saddle.
pub fn potential(
    game: &HiddenGame,
    theta: &DVector<f64>,
    phi: &DVector<f64>,
    lambda_pot: f64,
    saddle_value: f64,
    inner: &InnerOptions,
) -> Result<f64> {
    let (phi_val, w) = potential_parts(game, theta, phi, saddle_value, inner)?;
    Ok(phi_val + lambda_pot * w)
}

/// Returns `(Phi(theta) - saddle_value, Phi(theta) - L(theta, phi))`.
fn potential_parts(
    game: &HiddenGame,
    theta: &DVector<f64>,
    phi: &DVector<f64>,
    saddle_value: f64,
    inner: &InnerOptions,
) -> Result<(f64, f64)> {
    if let Some(q) = game.quadratic_saddle() {
        let u = q.primal_gap(theta) + (q.value - saddle_value);
        return Ok((u, q.best_response_gap(theta, phi)));
    }
    let br = best_response_max_strict(game, theta, phi, inner)?;
    let v = game.value(theta, phi)?;
    Ok((br.value - saddle_value, (br.value - v).max(0.0)))
}

/// Runs AltGDA from `(theta0, phi0)`.
pub fn run(game: &HiddenGame, config: &SolverConfig, theta0: &DVector<f64>, phi0: &DVector<f64>) -> Result<TrajectoryRecord> {
    run_with_cancel(game, config, theta0, phi0, None)
}

struct Auditor<'a> {
    game: &'a HiddenGame,
    config: &'a SolverConfig,
    theta0: DVector<f64>,
    phi0: DVector<f64>,
    inner: InnerOptions,
}

impl Auditor<'_> {
    fn dist(&self, theta: &DVector<f64>, phi: &DVector<f64>) -> f64 {
        ((theta - &self.theta0).norm_squared() + (phi - &self.phi0).norm_squared()).sqrt()
    }

    /// Audits a point. Returns the row plus `Phi(theta)` and `W` when the potential is tracked.
    fn audit(&self, t: u64, theta: &DVector<f64>, phi: &DVector<f64>, path: f64) -> Result<(AuditRow, Option<(f64, f64)>)> {
        let game = self.game;
        let (gt, gp) = game.grads(theta, phi)?;
        let (smin_f, _) = empirical_spectrum(&game.jacobian_min(theta)?)?;
        let (smin_g, _) = empirical_spectrum(&game.jacobian_max(phi)?)?;
        let parts = match self.config.saddle {
            SaddleValue::Untracked => None,
            SaddleValue::Known(v) => Some(potential_parts(game, theta, phi, v, &self.inner)?),
            SaddleValue::Estimated => Some(potential_parts(game, theta, phi, 0.0, &self.inner)?),
        };
        let potential = match (self.config.saddle, parts) {
            (SaddleValue::Known(_), Some((u, w))) => Some(u + self.config.lambda_pot * w),
            _ => None,
        };
        let row = AuditRow {
            t,
            value: game.value(theta, phi)?,
            grad_norm_theta: gt.norm(),
            grad_norm_phi: gp.norm(),
            sigma_min_f: smin_f,
            sigma_min_g: smin_g,
            dist_from_init: self.dist(theta, phi),
            path_length: path,
            potential,
            step_displacement: None,
            latent_min: game.latent_min(theta)?.iter().cloned().collect(),
            latent_max: game.latent_max(phi)?.iter().cloned().collect(),
        };
        Ok((row, parts))
    }
}

/// [`run`] with a cancellation flag checked once per step.
pub fn run_with_cancel(
    game: &HiddenGame,
    config: &SolverConfig,
    theta0: &DVector<f64>,
    phi0: &DVector<f64>,
    cancel: Option<&AtomicBool>,
) -> Result<TrajectoryRecord> {
    config.validate()?;
    if theta0.len() != game.theta_dim() || phi0.len() != game.phi_dim() {
        return Err(Error::Shape("initial point does not match the game".into()));
    }
    let auditor = Auditor { game, config, theta0: theta0.clone(), phi0: phi0.clone(), inner: config.inner() };
    let mut theta = theta0.clone();
    let mut phi = phi0.clone();
    let mut path = 0.0;
    let mut rows = Vec::new();
    let mut parts = Vec::new();
    let mut violations = Vec::new();
    let mut stop = StopReason::Horizon;
    let mut steps = 0u64;

    let mut record_audit = |t: u64,
                            theta: &DVector<f64>,
                            phi: &DVector<f64>,
                            path: f64,
                            rows: &mut Vec<AuditRow>,
                            violations: &mut Vec<Violation>|
     -> Result<Option<String>> {
        let (row, p) = auditor.audit(t, theta, phi, path)?;
        let mut breach = None;
        if config.sigma_min_floor > 0.0 && row.sigma_min_f.min(row.sigma_min_g) < config.sigma_min_floor {
            let detail = format!(
                "sigma_min (F {:.3e}, G {:.3e}) below floor {:.3e}",
                row.sigma_min_f, row.sigma_min_g, config.sigma_min_floor
            );
            breach = Some(detail.clone());
            push_violation(violations, t, "sigma_min_floor", detail);
        }
        if let Some(r) = config.radius {
            if row.dist_from_init > r {
                let detail = format!("distance {:.3e} exceeds radius {:.3e}", row.dist_from_init, r);
                breach = Some(detail.clone());
                push_violation(violations, t, "radius", detail);
            }
        }
        rows.push(row);
        parts.push(p);
        Ok(breach)
    };

    let breach = record_audit(0, &theta, &phi, path, &mut rows, &mut violations)?;
    if let (Some(b), MonitorPolicy::Abort) = (breach, config.monitor) {
        stop = StopReason::Aborted(b);
    }

    if stop == StopReason::Horizon {
        for t in 0..config.horizon {
            if cancel.map(|c| c.load(Ordering::Relaxed)).unwrap_or(false) {
                stop = StopReason::Cancelled;
                break;
            }
            if config.stop_grad_tol > 0.0 {
                let (gt, gp) = game.grads(&theta, &phi)?;
                if gt.norm() <= config.stop_grad_tol && gp.norm() <= config.stop_grad_tol {
                    stop = StopReason::GradTol;
                    break;
                }
            }
            let (tn, pn) = altgda_step(game, &theta, &phi, config.eta_theta, config.eta_phi)?;
            let disp = (&tn - &theta).norm() + (&pn - &phi).norm();
            if let Some(last) = rows.last_mut() {
                if last.t == t {
                    last.step_displacement = Some(disp);
                }
            }
            path += disp;
            theta = tn;
            phi = pn;
            steps = t + 1;
            let on_grid = steps.is_multiple_of(config.audit_every);
            let mut breach = None;
            if on_grid || steps == config.horizon {
                breach = record_audit(steps, &theta, &phi, path, &mut rows, &mut violations)?;
            } else if let Some(r) = config.radius {
                let d = auditor.dist(&theta, &phi);
                if d > r {
                    let detail = format!("distance {d:.3e} exceeds radius {r:.3e}");
                    push_violation(&mut violations, steps, "radius", detail.clone());
                    breach = Some(detail);
                }
            }
            if let (Some(b), MonitorPolicy::Abort) = (breach, config.monitor) {
                stop = StopReason::Aborted(b);
                break;
            }
        }
    }
    if rows.last().map(|r| r.t) != Some(steps) {
        record_audit(steps, &theta, &phi, path, &mut rows, &mut violations)?;
    }
    if let StopReason::Aborted(reason) = &stop {
        log::warn!("run aborted at step {steps}: {reason}");
    }

    let mut estimated = false;
    if config.saddle == SaddleValue::Estimated {
        let reference = parts.last().and_then(|p| *p).map(|(phi_t, _)| phi_t).unwrap_or(0.0);
        for (row, p) in rows.iter_mut().zip(parts.iter()) {
            if let Some((phi_t, w)) = p {
                row.potential = Some(phi_t - reference + config.lambda_pot * w);
            }
        }
        estimated = true;
    }

    Ok(TrajectoryRecord {
        rows,
        violations,
        stop,
        steps,
        potential_estimated: estimated,
        final_theta: theta.iter().cloned().collect(),
        final_phi: phi.iter().cloned().collect(),
    })
}

const MAX_VIOLATIONS: usize = 100;

fn push_violation(v: &mut Vec<Violation>, t: u64, kind: &str, detail: String) {
    if v.len() < MAX_VIOLATIONS {
        log::warn!("monitor at step {t}: {detail}");
        v.push(Violation { t, kind: kind.to_string(), detail });
    }
}

/// Quantities measured at the initialization that enter the step-size rule and the `P0` bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitDiagnostics {
    /// `|grad_F L|` at the initial latents.
    pub latent_grad_norm_f: f64,
    /// `|grad_G L|` at the initial latents.
    pub latent_grad_norm_g: f64,
    pub grad_norm_theta: f64,
    pub grad_norm_phi: f64,
    pub nu_jac_f: f64,
    pub nu_jac_g: f64,
    pub mu_jac_f: f64,
    pub mu_jac_g: f64,
    pub beta_f: f64,
    pub beta_g: f64,
    pub lambda: f64,
    /// Lipschitz constant of `L` used by the simplified `P0` bound.
    pub lipschitz: f64,
}

impl InitDiagnostics {
    /// Zero norms, unit moduli, zero smoothness and `lambda = 0`.
    pub fn neutral() -> Self {
        Self {
            latent_grad_norm_f: 0.0,
            latent_grad_norm_g: 0.0,
            grad_norm_theta: 0.0,
            grad_norm_phi: 0.0,
            nu_jac_f: 0.0,
            nu_jac_g: 0.0,
            mu_jac_f: 1.0,
            mu_jac_g: 1.0,
            beta_f: 0.0,
            beta_g: 0.0,
            lambda: 0.0,
            lipschitz: 0.0,
        }
    }
}

/// Power of `L_grad` in the `eta_theta` rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateForm {
    /// `eta_theta = c_theta mu_phi^2 / (18 L^3)`.
    Cubic,
    /// `eta_theta = c_theta mu_phi^2 / (18 L^2)`.
    Quadratic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub eta_theta: f64,
    pub eta_phi: f64,
    pub c_theta: f64,
    pub c_phi: f64,
    pub a_theta: f64,
    pub b_phi: f64,
    pub form: RateForm,
    /// True when the `A_theta B_phi` product overflowed and the plain rule was used.
    pub fallback: bool,
}

/// The twelve-factor product `A_theta`.
pub fn a_theta(mu_theta: f64, l: f64, d: &InitDiagnostics) -> f64 {
    let m = mu_theta;
    let j = d.mu_jac_f;
    let (nu, beta) = (d.nu_jac_f, d.beta_f);
    [
        1.0 + d.latent_grad_norm_f,
        1.0 + 8.0 * l.powi(4) * nu,
        1.0 + 1.0 / (m.powi(3) * j.powi(6)),
        1.0 + d.grad_norm_theta,
        1.0 + 80.0 * l * l * nu,
        1.0 + 1.0 / (m.powi(3) * j.powi(4)),
        1.0 + 8.0 * l.powi(4) * beta,
        1.0 + 1.0 / (2.0 * m.powi(5) * j.powi(10)),
        1.0 + 80.0 * l * l * beta,
        1.0 + 1.0 / (2.0 * m.powi(4) * j.powi(8)),
        1.0 + 1.0 / (m * m * j.powi(4)),
        1.0 + 1.0 / (2.0 * m.powi(3) * j.powi(6)),
    ]
    .iter()
    .product()
}

/// The twelve-factor product `B_phi`.
pub fn b_phi(mu_phi: f64, l: f64, d: &InitDiagnostics) -> f64 {
    let m = mu_phi;
    let j = d.mu_jac_g;
    let (nu, beta) = (d.nu_jac_g, d.beta_g);
    [
        1.0 + d.latent_grad_norm_g,
        1.0 + 1.0 / (m.powi(3) * j.powi(6)),
        1.0 + 1.0 / (m * j.powi(4)),
        1.0 + 1.0 / (m * m * j.powi(4)),
        1.0 + 1.0 / (m * j * j),
        1.0 + d.lambda,
        1.0 + d.grad_norm_phi,
        1.0 + 80.0 * l * l * nu,
        1.0 + 8.0 * l.powi(4) * beta,
        1.0 + 1.0 / (m.powi(4) * j.powi(8)),
        1.0 + 80.0 * l * l * beta,
        1.0 + 1.0 / (m.powi(3) * j.powi(8)),
    ]
    .iter()
    .product()
}

/// Step sizes that keep the trajectory inside the certified ball.
///
/// `mu_theta`, `mu_phi` are the latent strong-convexity moduli; the `mu_phi^2` in the
/// `eta_theta` rule is the PL modulus `mu_phi * mu_jac_g^2`.
pub fn recommended_rates(mu_theta: f64, mu_phi: f64, l_grad: f64, diag: &InitDiagnostics, form: RateForm) -> Result<Rates> {
    for (v, name) in [(mu_theta, "mu_theta"), (mu_phi, "mu_phi"), (l_grad, "L_grad"), (diag.mu_jac_f, "mu_jac_f"), (diag.mu_jac_g, "mu_jac_g")] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
        }
    }
    let a = a_theta(mu_theta, l_grad, diag);
    let b = b_phi(mu_phi, l_grad, diag);
    let pl_phi = mu_phi * diag.mu_jac_g * diag.mu_jac_g;
    let eta_phi = 1.0 / l_grad;
    let prod = a * b;
    if !prod.is_finite() || prod <= 0.0 {
        log::warn!("A_theta * B_phi overflowed; using eta_theta = mu_phi^2 / (18 L^3)");
        return Ok(Rates {
            eta_theta: pl_phi * pl_phi / (18.0 * l_grad.powi(3)),
            eta_phi,
            c_theta: f64::NAN,
            c_phi: 1.0,
            a_theta: a,
            b_phi: b,
            form: RateForm::Cubic,
            fallback: true,
        });
    }
    let c_theta = 0.5f64.min((1.0 / (4.0 * prod)).sqrt());
    let power = match form {
        RateForm::Cubic => 3,
        RateForm::Quadratic => 2,
    };
    Ok(Rates {
        eta_theta: c_theta * pl_phi * pl_phi / (18.0 * l_grad.powi(power)),
        eta_phi,
        c_theta,
        c_phi: 1.0,
        a_theta: a,
        b_phi: b,
        form,
        fallback: false,
    })
}

/// The plain rule `eta_theta = mu_phi^2 / (18 L^3)`, `eta_phi = 1 / L`.
pub fn base_rates(mu_phi: f64, l_grad: f64) -> (f64, f64) {
    (mu_phi * mu_phi / (18.0 * l_grad.powi(3)), 1.0 / l_grad)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    /// `L = L_grad + L_grad^2 / mu_phi`.
    pub l_big: f64,
    pub alpha1: f64,
    /// Contraction factor `1 - mu_theta mu_phi^2 / (36 L_grad^3)`.
    pub c: f64,
    /// `2 sqrt(2 alpha1) / (1 - c) * sqrt(P0)`.
    pub path_bound: f64,
    /// `sqrt(2 alpha1) / (1 - sqrt(c)) * sqrt(P0)`.
    pub path_bound_tight: f64,
    pub p0_bound: f64,
    pub l_act: Option<f64>,
    pub radius: Option<f64>,
    /// False when `c` falls outside `(0, 1)`; the bounds are then infinite.
    pub contraction: bool,
}

impl TheoryConstants {
    /// `sqrt(2 alpha1) c^{t/2} sqrt(P0)`.
    pub fn displacement_bound(&self, t: u64) -> f64 {
        (2.0 * self.alpha1).sqrt() * self.c.powf(t as f64 / 2.0) * self.p0_bound.sqrt()
    }

    /// `c^t P0`.
    pub fn potential_envelope(&self, t: u64) -> f64 {
        self.c.powf(t as f64) * self.p0_bound
    }
}

/// Contraction and path-length constants for AltGDA.
pub fn theory_constants(mu_theta: f64, mu_phi: f64, l_grad: f64, eta_theta: f64, eta_phi: f64, p0: f64) -> Result<TheoryConstants> {
    for (v, name) in [(mu_theta, "mu_theta"), (mu_phi, "mu_phi"), (l_grad, "L_grad"), (eta_theta, "eta_theta"), (eta_phi, "eta_phi"), (p0, "P0")] {
        if !(v >= 0.0) || v.is_nan() {
            return Err(Error::InvalidParameter(format!("{name} must be non-negative, got {v}")));
        }
    }
    if l_grad <= 0.0 {
        return Err(Error::InvalidParameter("L_grad must be positive".into()));
    }
    let l_big = l_grad + l_grad * l_grad / mu_phi;
    let lg2 = l_grad * l_grad;
    let k = 1.0 + eta_phi * eta_phi * lg2;
    let alpha1 = 2.0 * k * eta_theta * eta_theta * l_big * l_big / mu_theta
        + (20.0 * k * eta_theta * eta_theta * lg2 + 20.0 * lg2 * eta_phi * eta_phi) / mu_phi;
    let c = 1.0 - mu_theta * mu_phi * mu_phi / (36.0 * l_grad.powi(3));
    let contraction = c > 0.0 && c < 1.0 && alpha1.is_finite();
    let (path_bound, path_bound_tight) = if !contraction {
        (f64::INFINITY, f64::INFINITY)
    } else if p0 == 0.0 {
        (0.0, 0.0)
    } else {
        let s = (2.0 * alpha1).sqrt() * p0.sqrt();
        (2.0 * s / (1.0 - c), s / (1.0 - c.sqrt()))
    };
    Ok(TheoryConstants {
        l_big,
        alpha1,
        c,
        path_bound,
        path_bound_tight,
        p0_bound: p0,
        l_act: None,
        radius: None,
        contraction,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct P0Bound {
    /// Sum of the four refined terms.
    pub refined: f64,
    /// `L_L (C1 |grad_theta| + C2 |grad_phi|)` with `C1 = sqrt(2/mu_theta^3)` and
    /// `C2 = (1 + lambda) sqrt(2/mu_phi^3)`.
    pub simplified: f64,
}

/// Upper bounds on the initial potential.
pub fn p0_upper(diag: &InitDiagnostics, mu_theta: f64, mu_phi: f64) -> Result<P0Bound> {
    for (v, name) in [(mu_theta, "mu_theta"), (mu_phi, "mu_phi"), (diag.mu_jac_f, "mu_jac_f"), (diag.mu_jac_g, "mu_jac_g")] {
        if !(v > 0.0) {
            return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
        }
    }
    let d = diag;
    let (gt, gp) = (d.grad_norm_theta, d.grad_norm_phi);
    let jf2 = d.mu_jac_f * d.mu_jac_f;
    let jg2 = d.mu_jac_g * d.mu_jac_g;
    let refined = d.latent_grad_norm_f * d.nu_jac_f / (mu_theta * jf2) * gt
        + d.latent_grad_norm_f * d.beta_f / (2.0 * mu_theta * mu_theta * jf2 * jf2) * gt * gt
        + (1.0 + d.lambda) * d.latent_grad_norm_g * d.nu_jac_g / (mu_phi * jg2) * gp
        + (1.0 + d.lambda) * d.latent_grad_norm_g * d.beta_g / (2.0 * mu_phi * mu_phi * jg2 * jg2) * gp * gp;
    let c1 = (2.0 / mu_theta.powi(3)).sqrt();
    let c2 = (1.0 + d.lambda) * (2.0 / mu_phi.powi(3)).sqrt();
    Ok(P0Bound { refined, simplified: d.lipschitz * (c1 * gt + c2 * gp) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contraction_example() {
        let tc = theory_constants(1.0, 1.0, 2.0, 1.0 / 144.0, 0.5, 1.0).unwrap();
        assert!((tc.c - 287.0 / 288.0).abs() < 1e-15);
        assert!(tc.contraction);
        let zero = theory_constants(1.0, 1.0, 2.0, 1.0 / 144.0, 0.5, 0.0).unwrap();
        assert_eq!(zero.path_bound, 0.0);
        let weak = theory_constants(0.0, 1.0, 2.0, 0.01, 0.5, 1.0).unwrap();
        assert!(!weak.contraction);
        assert!(weak.path_bound.is_infinite());
    }

    #[test]
    fn fallback_rates() {
        let (et, ep) = base_rates(1.0, 2.0);
        assert!((et - 1.0 / 144.0).abs() < 1e-16);
        assert_eq!(ep, 0.5);
        let mut d = InitDiagnostics::neutral();
        d.grad_norm_theta = 1e300;
        d.latent_grad_norm_f = 1e300;
        let r = recommended_rates(1.0, 1.0, 2.0, &d, RateForm::Cubic).unwrap();
        assert!(r.fallback);
        assert!((r.eta_theta - 1.0 / 144.0).abs() < 1e-16);
        assert_eq!(r.eta_phi, 0.5);
    }

    #[test]
    fn neutral_rates() {
        let d = InitDiagnostics::neutral();
        let r = recommended_rates(1.0, 1.0, 2.0, &d, RateForm::Cubic).unwrap();
        assert!(!r.fallback);
        assert!(r.c_theta <= 0.5);
        assert!(r.eta_theta <= r.eta_phi);
        let q = recommended_rates(1.0, 1.0, 2.0, &d, RateForm::Quadratic).unwrap();
        assert!((q.eta_theta - 2.0 * r.eta_theta).abs() < 1e-18);
        assert!(recommended_rates(0.0, 1.0, 2.0, &d, RateForm::Cubic).is_err());
    }

    #[test]
    fn p0_zero_gradients() {
        let mut d = InitDiagnostics::neutral();
        d.nu_jac_f = 2.0;
        d.beta_g = 3.0;
        let b = p0_upper(&d, 1.0, 1.0).unwrap();
        assert_eq!(b.refined, 0.0);
        assert_eq!(b.simplified, 0.0);
    }
}
