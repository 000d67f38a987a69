//! Polyak-Lojasiewicz moduli, certified radii, active Lipschitz constants and the probes that
//! compare stationarity, saddle and minimax optimality.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{
    best_response_max_strict, best_response_min_strict, GameFamily, HiddenGame, InnerOptions, PlayerMap,
};
use crate::players::{certify_input, empirical_spectrum, smoothness_data, SpectralCertificate, TwoLayerNet};
use crate::solver::InitDiagnostics;
use crate::validator::{data_spectrum, hermite_coeffs, neural_spectral_bounds, NeuralBoundParams};

/// PL modulus of `l o F` when `l` is `mu`-strongly convex: `mu * sigma_min^2`.
pub fn pl_moduli(mu_latent: f64, sigma_min: f64) -> f64 {
    mu_latent * sigma_min * sigma_min
}

/// `4.5 * L_grad * R * nu_max`.
pub fn active_lipschitz(l_grad: f64, radius: f64, nu_max: f64) -> f64 {
    4.5 * l_grad * radius * nu_max
}

/// `L_act * beta_max`.
pub fn effective_smoothness(l_act: f64, beta_max: f64) -> f64 {
    l_act * beta_max
}

/// How the two players' certificates combine into a single radius.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RadiusMode {
    /// `min(mu_F, mu_G) / (2 max(beta_F, beta_G))`.
    Conservative,
    /// `max(mu_F, mu_G) / (2 min(beta_F, beta_G))`.
    Optimistic,
}

/// Knobs for certificate construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertOptions {
    /// Constant in the variance condition of the input-game bound.
    pub c: f64,
    pub radius_mode: RadiusMode,
    /// Hermite degree `t` for the neural-game lower bound.
    pub t: usize,
    pub delta1: f64,
    pub delta2: f64,
    pub r1: f64,
    pub r2: f64,
    /// Bound on `sigma_max(W2)` along the run for the data-driven smoothness; defaults to the
    /// value at the certified point.
    pub chi_max: Option<f64>,
}

impl Default for CertOptions {
    fn default() -> Self {
        Self {
            c: 1.0,
            radius_mode: RadiusMode::Conservative,
            t: 1,
            delta1: 0.1,
            delta2: 0.1,
            r1: 1.0,
            r2: 1.0,
            chi_max: None,
        }
    }
}

/// Certificate for a separable-game player at its current parameters.
pub fn certify_params(net: &TwoLayerNet, x: &nalgebra::DMatrix<f64>, opts: &CertOptions) -> Result<SpectralCertificate> {
    let (s1, s2) = net
        .init_std()
        .ok_or_else(|| Error::InvalidParameter("net has no recorded initialization scale".into()))?;
    let act = net.activation();
    let coeffs = hermite_coeffs(act, opts.t.max(4))?;
    let xs = data_spectrum(x, opts.t as u32)?;
    let p = NeuralBoundParams {
        sigma1: s1,
        sigma2: s2,
        d1: net.dims().d1,
        n: x.nrows(),
        x_spectrum: xs,
        delta1: opts.delta1,
        delta2: opts.delta2,
        r1: opts.r1,
        r2: opts.r2,
        t: opts.t,
    };
    let (lower, upper) = neural_spectral_bounds(&coeffs, act, &p)?;
    let chi = match opts.chi_max {
        Some(c) => c,
        None => empirical_spectrum(net.w2())?.1,
    };
    let beta = smoothness_data(x, act, chi)?;
    let (emin, emax) = empirical_spectrum(&net.jacobian_params(x)?)?;
    Ok(SpectralCertificate::evaluate(lower, upper.max(lower), beta, emin, emax))
}

fn identity_certificate() -> SpectralCertificate {
    SpectralCertificate::evaluate(1.0, 1.0, 0.0, 1.0, 1.0)
}

/// Spectral certificates of both players at `(theta, phi)`.
pub fn player_certificates(
    game: &HiddenGame,
    theta: &DVector<f64>,
    phi: &DVector<f64>,
    opts: &CertOptions,
) -> Result<(SpectralCertificate, SpectralCertificate)> {
    match game.family() {
        GameFamily::Input(g) => {
            let cert = |m: &PlayerMap, x: &DVector<f64>| match m {
                PlayerMap::Net(n) => certify_input(n, x, opts.c),
                PlayerMap::Identity(_) => Ok(identity_certificate()),
            };
            Ok((cert(&g.min_map, theta)?, cert(&g.max_map, phi)?))
        }
        GameFamily::Separable(g) => {
            let f = g.min_net.with_params(theta)?;
            let h = g.max_net.with_params(phi)?;
            Ok((certify_params(&f, &g.data_f.x, opts)?, certify_params(&h, &g.data_g.x, opts)?))
        }
    }
}

/// PL moduli, certified radius and active constants of a game at a point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlCertificate {
    pub mu_latent_min: f64,
    pub mu_latent_max: f64,
    pub sigma_min_f: f64,
    pub sigma_min_g: f64,
    pub mu_theta_eff: f64,
    pub mu_phi_eff: f64,
    pub mu_jac: f64,
    pub beta: f64,
    pub radius: f64,
    pub l_act: f64,
    pub l_grad_eff: f64,
}

impl PlCertificate {
    pub fn build(
        game: &HiddenGame,
        theta: &DVector<f64>,
        phi: &DVector<f64>,
        opts: &CertOptions,
    ) -> Result<(Self, SpectralCertificate, SpectralCertificate)> {
        let (cf, cg) = player_certificates(game, theta, phi, opts)?;
        let (mu_min, mu_max) = game.latent_moduli();
        let (mu_jac, beta) = match opts.radius_mode {
            RadiusMode::Conservative => (cf.mu_jac().min(cg.mu_jac()), cf.beta.max(cg.beta)),
            RadiusMode::Optimistic => (cf.mu_jac().max(cg.mu_jac()), cf.beta.min(cg.beta)),
        };
        let radius = if beta > 0.0 { mu_jac / (2.0 * beta) } else { f64::INFINITY };
        let l_grad = game.latent_smoothness();
        let nu_max = cf.sigma_max_upper.max(cg.sigma_max_upper);
        let l_act = active_lipschitz(l_grad, radius, nu_max);
        let cert = Self {
            mu_latent_min: mu_min,
            mu_latent_max: mu_max,
            sigma_min_f: cf.sigma_min_emp,
            sigma_min_g: cg.sigma_min_emp,
            mu_theta_eff: pl_moduli(mu_min, cf.sigma_min_emp),
            mu_phi_eff: pl_moduli(mu_max, cg.sigma_min_emp),
            mu_jac,
            beta,
            radius,
            l_act,
            l_grad_eff: effective_smoothness(l_act, cf.beta.max(cg.beta)),
        };
        Ok((cert, cf, cg))
    }
}

/// Measures the inputs of the step-size rule and of the `P0` bound at `(theta, phi)`.
///
/// `nu` and `beta` come from the closed-form certificates, `mu_jac` is the certificate's
/// `mu_Jac`, and the Lipschitz constant is the larger latent gradient norm at the point.
pub fn init_diagnostics(
    game: &HiddenGame,
    theta: &DVector<f64>,
    phi: &DVector<f64>,
    lambda: f64,
    opts: &CertOptions,
) -> Result<InitDiagnostics> {
    let (cf, cg) = player_certificates(game, theta, phi, opts)?;
    let (lf, lg) = game.latent_grads(theta, phi)?;
    let (gt, gp) = game.grads(theta, phi)?;
    Ok(InitDiagnostics {
        latent_grad_norm_f: lf.norm(),
        latent_grad_norm_g: lg.norm(),
        grad_norm_theta: gt.norm(),
        grad_norm_phi: gp.norm(),
        nu_jac_f: cf.sigma_max_upper,
        nu_jac_g: cg.sigma_max_upper,
        mu_jac_f: cf.mu_jac(),
        mu_jac_g: cg.mu_jac(),
        beta_f: cf.beta,
        beta_g: cg.beta,
        lambda,
        lipschitz: lf.norm().max(lg.norm()),
    })
}

/// Joint optimality measures at a point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceProbe {
    /// `max(|grad_theta L|, |grad_phi L|)`.
    pub stationarity_eps: f64,
    /// `max(Phi(theta) - L(theta, phi), L(theta, phi) - Psi(phi))`.
    pub saddle_eps: f64,
    /// Nash gap `Phi(theta) - Psi(phi)`.
    pub minimax_eps: f64,
}

pub fn equivalence_probe(
    game: &HiddenGame,
    theta: &DVector<f64>,
    phi: &DVector<f64>,
    inner: &InnerOptions,
) -> Result<EquivalenceProbe> {
    let (gt, gp) = game.grads(theta, phi)?;
    let v = game.value(theta, phi)?;
    let up = best_response_max_strict(game, theta, phi, inner)?.value;
    let down = best_response_min_strict(game, theta, phi, inner)?.value;
    Ok(EquivalenceProbe {
        stationarity_eps: gt.norm().max(gp.norm()),
        saddle_eps: (up - v).max(v - down),
        minimax_eps: up - down,
    })
}
