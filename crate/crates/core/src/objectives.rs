//! Latent losses, the two hidden-game families, analytic gradients, best responses and the
//! Nash (Nikaido-Isoda) gap.
//!
//! An input-optimization game optimizes over the inputs of two fixed maps:
//!
//! `L(theta, phi) = F(theta)^T A G(phi) + (w_F/2)|F(theta) - t_F|^2 - (w_G/2)|G(phi) - t_G|^2`.
//!
//! With `w_F = w_G = eps` and zero targets this is the regularized bilinear game. With targets at
//! the uniform strategy it is the hidden Rock-Paper-Scissors game. With identity maps it is the
//! quadratic testbed.
//!
//! A separable game optimizes over network parameters:
//!
//! `L(theta, phi) = sum_i l_F(y_i, F(x_i)) + F(D_F)^T A G(D_G) - sum_j l_G(y_j, G(x_j))`,
//!
//! where `F(D_F)` stacks the outputs on the dataset and `A` is a block coupling matrix.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::players::{empirical_spectrum, TwoLayerNet};

/// Latent loss families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    Logistic,
    SquaredHinge,
    CrossEntropyL2,
    QuadraticToTarget,
}

/// Gradient-growth constants: `|grad_h l(y, h)| <= a1 |h| + a2 diam(Y) + a3`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Growth {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

/// A loss on the latent output `h` of a player.
///
/// Labels are vectors of the same length as `h`:
/// MSE takes any real vector, logistic takes entries in `[0, 1]`, squared hinge takes entries
/// in `{-1, 1}` and cross-entropy takes a probability vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentLoss {
    pub kind: LossKind,
    /// Strong-convexity modulus in `h` (0 if none).
    pub mu: f64,
    /// Smoothness constant in `h`.
    pub smooth: f64,
    pub growth: Growth,
    /// Ridge weight for cross-entropy.
    pub reg_lambda: f64,
    /// Target for `QuadraticToTarget`.
    pub target: Option<Vec<f64>>,
}

impl LatentLoss {
    /// `(1/2)|h - y|^2`.
    pub fn mse() -> Self {
        Self {
            kind: LossKind::Mse,
            mu: 1.0,
            smooth: 1.0,
            growth: Growth { a1: 1.0, a2: 1.0, a3: 0.0 },
            reg_lambda: 0.0,
            target: None,
        }
    }

    /// `sum_k log(1 + e^{h_k}) - y_k h_k`.
    pub fn logistic() -> Self {
        Self {
            kind: LossKind::Logistic,
            mu: 0.0,
            smooth: 0.25,
            growth: Growth { a1: 0.0, a2: 0.0, a3: 1.0 },
            reg_lambda: 0.0,
            target: None,
        }
    }

    /// `(1/2) sum_k max(0, 1 - y_k h_k)^2`.
    pub fn squared_hinge() -> Self {
        Self {
            kind: LossKind::SquaredHinge,
            mu: 0.0,
            smooth: 1.0,
            growth: Growth { a1: 2.0, a2: 1.0, a3: 0.0 },
            reg_lambda: 0.0,
            target: None,
        }
    }

    /// `-sum_k y_k log softmax(h)_k + (lambda/2)|h|^2`.
    pub fn cross_entropy_l2(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("ridge weight must be positive, got {lambda}")));
        }
        Ok(Self {
            kind: LossKind::CrossEntropyL2,
            mu: lambda,
            smooth: 0.5 + lambda,
            growth: Growth { a1: lambda, a2: 0.0, a3: 2.0 },
            reg_lambda: lambda,
            target: None,
        })
    }

    /// `(1/2)|h - target|^2`; labels are ignored.
    pub fn quadratic_to_target(target: &DVector<f64>) -> Self {
        Self {
            kind: LossKind::QuadraticToTarget,
            mu: 1.0,
            smooth: 1.0,
            growth: Growth { a1: 1.0, a2: 1.0, a3: 0.0 },
            reg_lambda: 0.0,
            target: Some(target.iter().cloned().collect()),
        }
    }

    pub fn from_kind(kind: LossKind, lambda: f64) -> Result<Self> {
        match kind {
            LossKind::Mse => Ok(Self::mse()),
            LossKind::Logistic => Ok(Self::logistic()),
            LossKind::SquaredHinge => Ok(Self::squared_hinge()),
            LossKind::CrossEntropyL2 => Self::cross_entropy_l2(lambda),
            LossKind::QuadraticToTarget => {
                Err(Error::InvalidParameter("quadratic-to-target loss needs an explicit target".into()))
            }
        }
    }

    fn check(&self, h: &DVector<f64>, y: &DVector<f64>) -> Result<()> {
        if !h.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("latent output".into()));
        }
        let label_err = |msg: &str| Err(Error::InvalidParameter(format!("incompatible label: {msg}")));
        if self.kind == LossKind::QuadraticToTarget {
            let t = self.target.as_ref().map(|t| t.len()).unwrap_or(0);
            if t != h.len() {
                return Err(Error::Shape(format!("target has length {t}, output {}", h.len())));
            }
            return Ok(());
        }
        if y.len() != h.len() {
            return Err(Error::Shape(format!("label has length {}, output {}", y.len(), h.len())));
        }
        match self.kind {
            LossKind::Logistic if y.iter().any(|v| !(0.0..=1.0).contains(v)) => label_err("logistic labels must lie in [0, 1]"),
            LossKind::SquaredHinge if y.iter().any(|v| *v != 1.0 && *v != -1.0) => label_err("hinge labels must be +1 or -1"),
            LossKind::CrossEntropyL2
                if y.iter().any(|v| *v < 0.0) || (y.sum() - 1.0).abs() > 1e-9 =>
            {
                label_err("cross-entropy labels must be a probability vector")
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, h: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        self.check(h, y)?;
        Ok(match self.kind {
            LossKind::Mse => 0.5 * (h - y).norm_squared(),
            LossKind::Logistic => h
                .iter()
                .zip(y.iter())
                .map(|(&hk, &yk)| softplus(hk) - yk * hk)
                .sum(),
            LossKind::SquaredHinge => h
                .iter()
                .zip(y.iter())
                .map(|(&hk, &yk)| 0.5 * (1.0 - yk * hk).max(0.0).powi(2))
                .sum(),
            LossKind::CrossEntropyL2 => {
                let m = h.max();
                let lse = m + h.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                -h.iter().zip(y.iter()).map(|(&hk, &yk)| yk * (hk - lse)).sum::<f64>()
                    + 0.5 * self.reg_lambda * h.norm_squared()
            }
            LossKind::QuadraticToTarget => {
                let t = self.target.as_ref().expect("checked");
                0.5 * h.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            }
        })
    }

    /// Gradient of the loss with respect to `h`.
    pub fn latent_grad(&self, h: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(h, y)?;
        Ok(match self.kind {
            LossKind::Mse => h - y,
            LossKind::Logistic => DVector::from_fn(h.len(), |k, _| sigmoid(h[k]) - y[k]),
            LossKind::SquaredHinge => DVector::from_fn(h.len(), |k, _| {
                let m = y[k] * h[k];
                if m < 1.0 {
                    -y[k] * (1.0 - m)
                } else {
                    0.0
                }
            }),
            LossKind::CrossEntropyL2 => softmax(h) - y + self.reg_lambda * h,
            LossKind::QuadraticToTarget => {
                let t = self.target.as_ref().expect("checked");
                DVector::from_fn(h.len(), |k, _| h[k] - t[k])
            }
        })
    }

    /// `a1 h_norm + a2 diam_y + a3`.
    pub fn growth_bound(&self, h_norm: f64, diam_y: f64) -> f64 {
        self.growth.a1 * h_norm + self.growth.a2 * diam_y + self.growth.a3
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax(h: &DVector<f64>) -> DVector<f64> {
    let m = h.max();
    let e = h.map(|v| (v - m).exp());
    let s = e.sum();
    e / s
}

/// Free-standing form of [`LatentLoss::growth_bound`].
pub fn growth_bound(loss: &LatentLoss, h_norm: f64, diam_y: f64) -> f64 {
    loss.growth_bound(h_norm, diam_y)
}

/// The map a player applies to its decision variable in an input-optimization game.
#[derive(Clone, Debug)]
pub enum PlayerMap {
    Net(TwoLayerNet),
    /// The identity on `R^n`.
    Identity(usize),
}

impl PlayerMap {
    pub fn input_dim(&self) -> usize {
        match self {
            Self::Net(n) => n.dims().d0,
            Self::Identity(n) => *n,
        }
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            Self::Net(n) => n.dims().d2,
            Self::Identity(n) => *n,
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Self::Net(n) => n.forward(x),
            Self::Identity(d) => {
                if x.len() != *d {
                    return Err(Error::Shape(format!("input has length {}, expected {d}", x.len())));
                }
                Ok(x.clone())
            }
        }
    }

    pub fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        match self {
            Self::Net(n) => n.jacobian_input(x),
            Self::Identity(d) => Ok(DMatrix::identity(*d, *d)),
        }
    }

    pub fn vjp(&self, x: &DVector<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Self::Net(n) => n.vjp_input(x, r),
            Self::Identity(_) => Ok(r.clone()),
        }
    }

    pub fn net(&self) -> Option<&TwoLayerNet> {
        match self {
            Self::Net(n) => Some(n),
            Self::Identity(_) => None,
        }
    }
}

/// `(weight/2)|h - target|^2`, with a zero target when `target` is `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regularizer {
    pub weight: f64,
    pub target: Option<Vec<f64>>,
}

impl Regularizer {
    pub fn origin(weight: f64) -> Self {
        Self { weight, target: None }
    }

    pub fn centered(weight: f64, target: &DVector<f64>) -> Self {
        Self { weight, target: Some(target.iter().cloned().collect()) }
    }

    fn offset(&self, h: &DVector<f64>) -> DVector<f64> {
        match &self.target {
            Some(t) => DVector::from_fn(h.len(), |k, _| h[k] - t[k]),
            None => h.clone(),
        }
    }

    pub fn target_vector(&self, dim: usize) -> DVector<f64> {
        match &self.target {
            Some(t) => DVector::from_column_slice(t),
            None => DVector::zeros(dim),
        }
    }
}

/// A labelled dataset; rows of `x` are samples.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: Vec<DVector<f64>>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: Vec<DVector<f64>>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::Shape("empty dataset".into()));
        }
        if y.len() != x.nrows() {
            return Err(Error::Shape(format!("{} samples but {} labels", x.nrows(), y.len())));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    /// Largest pairwise distance between labels, and at least the largest label norm.
    pub fn label_diameter(&self) -> f64 {
        let mut d = self.y.iter().map(|y| y.norm()).fold(0.0, f64::max);
        for (i, a) in self.y.iter().enumerate() {
            for b in &self.y[i + 1..] {
                d = d.max((a - b).norm());
            }
        }
        d
    }
}

#[derive(Clone, Debug)]
pub struct InputGame {
    pub min_map: PlayerMap,
    pub max_map: PlayerMap,
    pub reg_min: Regularizer,
    pub reg_max: Regularizer,
}

#[derive(Clone, Debug)]
pub struct SeparableGame {
    pub min_net: TwoLayerNet,
    pub max_net: TwoLayerNet,
    pub data_f: Dataset,
    pub data_g: Dataset,
    pub loss_f: LatentLoss,
    pub loss_g: LatentLoss,
}

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum GameFamily {
    Input(InputGame),
    Separable(SeparableGame),
}

/// A hidden convex-concave game.
#[derive(Clone, Debug)]
pub struct HiddenGame {
    coupling: DMatrix<f64>,
    coupling_norm: f64,
    family: GameFamily,
}

/// Tiles a shared coupling `a` into the block matrix used by separable games.
pub fn shared_coupling(a: &DMatrix<f64>, n_f: usize, n_g: usize) -> DMatrix<f64> {
    let (p, q) = a.shape();
    DMatrix::from_fn(n_f * p, n_g * q, |r, c| a[(r % p, c % q)])
}

fn operator_norm(a: &DMatrix<f64>) -> Result<f64> {
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(empirical_spectrum(a)?.1)
}

/// Latent outputs of both players at a point.
struct Latents {
    f: DVector<f64>,
    g: DVector<f64>,
}

impl HiddenGame {
    /// Input-optimization game. Regularizer weights must be non-negative; the best-response
    /// solvers additionally need them positive.
    pub fn input(
        min_map: PlayerMap,
        max_map: PlayerMap,
        a: DMatrix<f64>,
        reg_min: Regularizer,
        reg_max: Regularizer,
    ) -> Result<Self> {
        if a.shape() != (min_map.latent_dim(), max_map.latent_dim()) {
            return Err(Error::Shape(format!(
                "coupling is {:?}, expected ({}, {})",
                a.shape(),
                min_map.latent_dim(),
                max_map.latent_dim()
            )));
        }
        for (r, dim, who) in [(&reg_min, min_map.latent_dim(), "min"), (&reg_max, max_map.latent_dim(), "max")] {
            if !(r.weight >= 0.0 && r.weight.is_finite()) {
                return Err(Error::InvalidParameter(format!("{who}-player regularizer weight must be >= 0")));
            }
            if let Some(t) = &r.target {
                if t.len() != dim {
                    return Err(Error::Shape(format!("{who}-player target has length {}, expected {dim}", t.len())));
                }
            }
        }
        let coupling_norm = operator_norm(&a)?;
        Ok(Self {
            coupling: a,
            coupling_norm,
            family: GameFamily::Input(InputGame { min_map, max_map, reg_min, reg_max }),
        })
    }

    /// Separable neural-parameter game with block coupling of shape `(n_F d2_F) x (n_G d2_G)`.
    pub fn separable(
        min_net: TwoLayerNet,
        max_net: TwoLayerNet,
        a_block: DMatrix<f64>,
        data_f: Dataset,
        data_g: Dataset,
        loss_f: LatentLoss,
        loss_g: LatentLoss,
    ) -> Result<Self> {
        if loss_f.mu <= 0.0 || loss_g.mu <= 0.0 {
            return Err(Error::InvalidParameter("separable games need strongly convex losses on both sides".into()));
        }
        if data_f.x.ncols() != min_net.dims().d0 || data_g.x.ncols() != max_net.dims().d0 {
            return Err(Error::Shape("dataset width does not match network input".into()));
        }
        let rows = data_f.len() * min_net.dims().d2;
        let cols = data_g.len() * max_net.dims().d2;
        if a_block.shape() != (rows, cols) {
            return Err(Error::Shape(format!("coupling is {:?}, expected ({rows}, {cols})", a_block.shape())));
        }
        for (loss, data, d2) in [(&loss_f, &data_f, min_net.dims().d2), (&loss_g, &data_g, max_net.dims().d2)] {
            let h = DVector::zeros(d2);
            for y in &data.y {
                loss.value(&h, y)?;
            }
        }
        let coupling_norm = operator_norm(&a_block)?;
        Ok(Self {
            coupling: a_block,
            coupling_norm,
            family: GameFamily::Separable(SeparableGame { min_net, max_net, data_f, data_g, loss_f, loss_g }),
        })
    }

    pub fn family(&self) -> &GameFamily {
        &self.family
    }

    pub fn coupling(&self) -> &DMatrix<f64> {
        &self.coupling
    }

    /// Cached operator norm of the coupling.
    pub fn coupling_norm(&self) -> f64 {
        self.coupling_norm
    }

    /// Regularization weight of the min player for input games.
    pub fn eps(&self) -> Option<f64> {
        match &self.family {
            GameFamily::Input(g) => Some(g.reg_min.weight),
            GameFamily::Separable(_) => None,
        }
    }

    pub fn theta_dim(&self) -> usize {
        match &self.family {
            GameFamily::Input(g) => g.min_map.input_dim(),
            GameFamily::Separable(g) => g.min_net.dims().n_params(),
        }
    }

    pub fn phi_dim(&self) -> usize {
        match &self.family {
            GameFamily::Input(g) => g.max_map.input_dim(),
            GameFamily::Separable(g) => g.max_net.dims().n_params(),
        }
    }

    /// Strong-convexity moduli of the latent objective, `(mu_min, mu_max)`.
    pub fn latent_moduli(&self) -> (f64, f64) {
        match &self.family {
            GameFamily::Input(g) => (g.reg_min.weight, g.reg_max.weight),
            GameFamily::Separable(g) => (g.loss_f.mu, g.loss_g.mu),
        }
    }

    /// Smoothness of the latent objective in `(F, G)` jointly. Exact Hessian norm for input
    /// games; `max(L_F, L_G) + |A|` for separable games.
    pub fn latent_smoothness(&self) -> f64 {
        match &self.family {
            GameFamily::Input(g) => {
                let (p, q) = self.coupling.shape();
                let mut h = DMatrix::zeros(p + q, p + q);
                for i in 0..p {
                    h[(i, i)] = g.reg_min.weight;
                }
                for j in 0..q {
                    h[(p + j, p + j)] = -g.reg_max.weight;
                }
                h.view_mut((0, p), (p, q)).copy_from(&self.coupling);
                h.view_mut((p, 0), (q, p)).copy_from(&self.coupling.transpose());
                h.symmetric_eigenvalues().iter().fold(0.0, |m, v| m.max(v.abs()))
            }
            GameFamily::Separable(g) => g.loss_f.smooth.max(g.loss_g.smooth) + self.coupling_norm,
        }
    }

    fn check_dims(&self, theta: &DVector<f64>, phi: &DVector<f64>) -> Result<()> {
        if theta.len() != self.theta_dim() || phi.len() != self.phi_dim() {
            return Err(Error::Shape(format!(
                "point has dims ({}, {}), game expects ({}, {})",
                theta.len(),
                phi.len(),
                self.theta_dim(),
                self.phi_dim()
            )));
        }
        Ok(())
    }

    /// Latent output of the min player (stacked over the dataset for separable games).
    pub fn latent_min(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        if theta.len() != self.theta_dim() {
            return Err(Error::Shape(format!("theta has length {}, expected {}", theta.len(), self.theta_dim())));
        }
        match &self.family {
            GameFamily::Input(g) => g.min_map.eval(theta),
            GameFamily::Separable(g) => g.min_net.with_params(theta)?.forward_batch(&g.data_f.x),
        }
    }

    /// Latent output of the max player (stacked over the dataset for separable games).
    pub fn latent_max(&self, phi: &DVector<f64>) -> Result<DVector<f64>> {
        if phi.len() != self.phi_dim() {
            return Err(Error::Shape(format!("phi has length {}, expected {}", phi.len(), self.phi_dim())));
        }
        match &self.family {
            GameFamily::Input(g) => g.max_map.eval(phi),
            GameFamily::Separable(g) => g.max_net.with_params(phi)?.forward_batch(&g.data_g.x),
        }
    }

    fn latents(&self, theta: &DVector<f64>, phi: &DVector<f64>) -> Result<Latents> {
        self.check_dims(theta, phi)?;
        Ok(Latents { f: self.latent_min(theta)?, g: self.latent_max(phi)? })
    }

    fn min_term(&self, f: &DVector<f64>) -> Result<f64> {
        match &self.family {
            GameFamily::Input(g) => Ok(0.5 * g.reg_min.weight * g.reg_min.offset(f).norm_squared()),
            GameFamily::Separable(g) => stacked_loss(&g.loss_f, f, &g.data_f),
        }
    }

    fn max_term(&self, gv: &DVector<f64>) -> Result<f64> {
        match &self.family {
            GameFamily::Input(g) => Ok(0.5 * g.reg_max.weight * g.reg_max.offset(gv).norm_squared()),
            GameFamily::Separable(g) => stacked_loss(&g.loss_g, gv, &g.data_g),
        }
    }

    fn latent_value(&self, l: &Latents) -> Result<f64> {
        let bil = l.f.dot(&(&self.coupling * &l.g));
        let v = bil + self.min_term(&l.f)? - self.max_term(&l.g)?;
        if !v.is_finite() {
            return Err(Error::NonFinite("game value".into()));
        }
        Ok(v)
    }

    /// `dL/dF` at the given latents.
    fn latent_grad_f(&self, l: &Latents) -> Result<DVector<f64>> {
        let mut out = &self.coupling * &l.g;
        match &self.family {
            GameFamily::Input(g) => out += g.reg_min.weight * g.reg_min.offset(&l.f),
            GameFamily::Separable(g) => out += stacked_grad(&g.loss_f, &l.f, &g.data_f)?,
        }
        Ok(out)
    }

    /// `dL/dG` at the given latents.
    fn latent_grad_g(&self, l: &Latents) -> Result<DVector<f64>> {
        let mut out = self.coupling.tr_mul(&l.f);
        match &self.family {
            GameFamily::Input(g) => out -= g.reg_max.weight * g.reg_max.offset(&l.g),
            GameFamily::Separable(g) => out -= stacked_grad(&g.loss_g, &l.g, &g.data_g)?,
        }
        Ok(out)
    }

    fn pull_min(&self, theta: &DVector<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.family {
            GameFamily::Input(g) => g.min_map.vjp(theta, r),
            GameFamily::Separable(g) => g.min_net.with_params(theta)?.vjp_params(&g.data_f.x, r),
        }
    }

    fn pull_max(&self, phi: &DVector<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.family {
            GameFamily::Input(g) => g.max_map.vjp(phi, r),
            GameFamily::Separable(g) => g.max_net.with_params(phi)?.vjp_params(&g.data_g.x, r),
        }
    }

    /// Objective value `L(theta, phi)`.
    pub fn value(&self, theta: &DVector<f64>, phi: &DVector<f64>) -> Result<f64> {
        let l = self.latents(theta, phi)?;
        self.latent_value(&l)
    }

    /// Latent gradients `(dL/dF, dL/dG)` at a point.
    pub fn latent_grads(&self, theta: &DVector<f64>, phi: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let l = self.latents(theta, phi)?;
        Ok((self.latent_grad_f(&l)?, self.latent_grad_g(&l)?))
    }

    pub fn grad_theta(&self, theta: &DVector<f64>, phi: &DVector<f64>) -> Result<DVector<f64>> {
        let l = self.latents(theta, phi)?;
        let r = self.latent_grad_f(&l)?;
        finite(self.pull_min(theta, &r)?, "theta gradient")
    }

    pub fn grad_phi(&self, theta: &DVector<f64>, phi: &DVector<f64>) -> Result<DVector<f64>> {
        let l = self.latents(theta, phi)?;
        let r = self.latent_grad_g(&l)?;
        finite(self.pull_max(phi, &r)?, "phi gradient")
    }

    /// Both gradients at the same point.
    pub fn grads(&self, theta: &DVector<f64>, phi: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let l = self.latents(theta, phi)?;
        let gt = self.pull_min(theta, &self.latent_grad_f(&l)?)?;
        let gp = self.pull_max(phi, &self.latent_grad_g(&l)?)?;
        Ok((finite(gt, "theta gradient")?, finite(gp, "phi gradient")?))
    }

    /// Jacobian of the min player's latent output with respect to `theta`.
    pub fn jacobian_min(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        match &self.family {
            GameFamily::Input(g) => g.min_map.jacobian(theta),
            GameFamily::Separable(g) => g.min_net.with_params(theta)?.jacobian_params(&g.data_f.x),
        }
    }

    /// Jacobian of the max player's latent output with respect to `phi`.
    pub fn jacobian_max(&self, phi: &DVector<f64>) -> Result<DMatrix<f64>> {
        match &self.family {
            GameFamily::Input(g) => g.max_map.jacobian(phi),
            GameFamily::Separable(g) => g.max_net.with_params(phi)?.jacobian_params(&g.data_g.x),
        }
    }

    /// Closed-form saddle when both players are identity maps.
    pub fn quadratic_saddle(&self) -> Option<QuadraticSaddle> {
        match &self.family {
            GameFamily::Input(g) => match (&g.min_map, &g.max_map) {
                (PlayerMap::Identity(_), PlayerMap::Identity(_)) => QuadraticSaddle::solve(self, g).ok(),
                _ => None,
            },
            GameFamily::Separable(_) => None,
        }
    }
}

fn finite(v: DVector<f64>, what: &str) -> Result<DVector<f64>> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn stacked_loss(loss: &LatentLoss, h: &DVector<f64>, data: &Dataset) -> Result<f64> {
    let d = h.len() / data.len();
    let mut s = 0.0;
    for (i, y) in data.y.iter().enumerate() {
        s += loss.value(&h.rows(i * d, d).into_owned(), y)?;
    }
    Ok(s)
}

fn stacked_grad(loss: &LatentLoss, h: &DVector<f64>, data: &Dataset) -> Result<DVector<f64>> {
    let d = h.len() / data.len();
    let mut out = DVector::zeros(h.len());
    for (i, y) in data.y.iter().enumerate() {
        let g = loss.latent_grad(&h.rows(i * d, d).into_owned(), y)?;
        out.rows_mut(i * d, d).copy_from(&g);
    }
    Ok(out)
}

/// Closed-form saddle of an input game whose players are identity maps, that is
/// `L = theta^T A phi + (w_F/2)|theta - a|^2 - (w_G/2)|phi - b|^2`.
#[derive(Clone, Debug)]
pub struct QuadraticSaddle {
    pub theta: DVector<f64>,
    pub phi: DVector<f64>,
    pub value: f64,
    a: DMatrix<f64>,
    w_f: f64,
    w_g: f64,
    t_f: DVector<f64>,
    t_g: DVector<f64>,
}

impl QuadraticSaddle {
    fn solve(game: &HiddenGame, g: &InputGame) -> Result<Self> {
        let (w_f, w_g) = (g.reg_min.weight, g.reg_max.weight);
        if w_f <= 0.0 || w_g <= 0.0 {
            return Err(Error::InvalidParameter("quadratic saddle needs positive moduli".into()));
        }
        let a = game.coupling.clone();
        let (p, q) = a.shape();
        let t_f = g.reg_min.target_vector(p);
        let t_g = g.reg_max.target_vector(q);
        let mut m = DMatrix::zeros(p + q, p + q);
        for i in 0..p {
            m[(i, i)] = w_f;
        }
        for j in 0..q {
            m[(p + j, p + j)] = -w_g;
        }
        m.view_mut((0, p), (p, q)).copy_from(&a);
        m.view_mut((p, 0), (q, p)).copy_from(&a.transpose());
        let mut rhs = DVector::zeros(p + q);
        rhs.rows_mut(0, p).copy_from(&(w_f * &t_f));
        rhs.rows_mut(p, q).copy_from(&(-w_g * &t_g));
        let sol = m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidParameter("singular saddle system".into()))?;
        let theta = sol.rows(0, p).into_owned();
        let phi = sol.rows(p, q).into_owned();
        let value = game.value(&theta, &phi)?;
        Ok(Self { theta, phi, value, a, w_f, w_g, t_f, t_g })
    }

    /// `argmax_phi L(theta, phi) = t_G + A^T theta / w_G`.
    pub fn best_response_max(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.t_g + self.a.tr_mul(theta) / self.w_g
    }

    /// `argmin_theta L(theta, phi) = t_F - A phi / w_F`.
    pub fn best_response_min(&self, phi: &DVector<f64>) -> DVector<f64> {
        &self.t_f - &self.a * phi / self.w_f
    }

    /// `Phi(theta) - Phi*` as the quadratic form `(1/2) d^T (w_F I + A A^T / w_G) d`.
    pub fn primal_gap(&self, theta: &DVector<f64>) -> f64 {
        let d = theta - &self.theta;
        let ad = self.a.tr_mul(&d);
        0.5 * (self.w_f * d.norm_squared() + ad.norm_squared() / self.w_g)
    }

    /// `Phi* - Psi(phi)` with `Psi(phi) = min_theta L(theta, phi)`.
    pub fn dual_gap(&self, phi: &DVector<f64>) -> f64 {
        let d = phi - &self.phi;
        let ad = &self.a * &d;
        0.5 * (self.w_g * d.norm_squared() + ad.norm_squared() / self.w_f)
    }

    /// `Phi(theta) - L(theta, phi) = (w_G/2)|phi - phi*(theta)|^2`.
    pub fn best_response_gap(&self, theta: &DVector<f64>, phi: &DVector<f64>) -> f64 {
        0.5 * self.w_g * (phi - self.best_response_max(theta)).norm_squared()
    }

    /// Closed-form Nash gap.
    pub fn nash_gap(&self, theta: &DVector<f64>, phi: &DVector<f64>) -> f64 {
        self.primal_gap(theta) + self.dual_gap(phi)
    }
}

/// Options for the inner best-response solvers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerOptions {
    /// Stop when the gradient norm of the inner problem is at most `tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial step; backtracking halves it whenever sufficient increase fails.
    pub step: Option<f64>,
    /// Use gradient iterations even when a closed form is available.
    pub force_iterative: bool,
}

impl Default for InnerOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 200_000, step: None, force_iterative: false }
    }
}

impl InnerOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

/// Result of an inner solve.
#[derive(Clone, Debug)]
pub struct BestResponse {
    pub point: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

impl BestResponse {
    fn into_result(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NoConvergence { iterations: self.iterations, residual: self.grad_norm })
        }
    }
}

/// Gradient ascent with sufficient-increase backtracking on `phi -> L(theta, phi)`.
///
/// Non-convergence is reported through [`BestResponse::converged`] rather than an error.
pub fn best_response_max(
    game: &HiddenGame,
    theta: &DVector<f64>,
    phi_start: &DVector<f64>,
    opts: &InnerOptions,
) -> Result<BestResponse> {
    game.check_dims(theta, phi_start)?;
    if let (false, Some(q)) = (opts.force_iterative, game.quadratic_saddle()) {
        let point = q.best_response_max(theta);
        let value = game.value(theta, &point)?;
        return Ok(BestResponse { point, value, iterations: 0, grad_norm: 0.0, converged: true });
    }
    let f = game.latent_min(theta)?;
    let eval = |phi: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
        let l = Latents { f: f.clone(), g: game.latent_max(phi)? };
        let v = game.latent_value(&l)?;
        let r = game.latent_grad_g(&l)?;
        Ok((v, game.pull_max(phi, &r)?))
    };
    backtracking_ascent(eval, phi_start, opts)
}

/// Gradient descent mirror of [`best_response_max`] on `theta -> L(theta, phi)`. The returned
/// `value` is `min_theta L(theta, phi)`.
pub fn best_response_min(
    game: &HiddenGame,
    theta_start: &DVector<f64>,
    phi: &DVector<f64>,
    opts: &InnerOptions,
) -> Result<BestResponse> {
    game.check_dims(theta_start, phi)?;
    if let (false, Some(q)) = (opts.force_iterative, game.quadratic_saddle()) {
        let point = q.best_response_min(phi);
        let value = game.value(&point, phi)?;
        return Ok(BestResponse { point, value, iterations: 0, grad_norm: 0.0, converged: true });
    }
    let g = game.latent_max(phi)?;
    let eval = |theta: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
        let l = Latents { f: game.latent_min(theta)?, g: g.clone() };
        let v = game.latent_value(&l)?;
        let r = game.latent_grad_f(&l)?;
        Ok((-v, -game.pull_min(theta, &r)?))
    };
    let mut br = backtracking_ascent(eval, theta_start, opts)?;
    br.value = -br.value;
    Ok(br)
}

fn backtracking_ascent<E>(eval: E, start: &DVector<f64>, opts: &InnerOptions) -> Result<BestResponse>
where
    E: Fn(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let mut x = start.clone();
    let (mut v, mut g) = eval(&x)?;
    let mut step = opts.step.unwrap_or(1.0);
    let grow = opts.step.is_none();
    for it in 0..opts.max_iter {
        let gn2 = g.norm_squared();
        if gn2.sqrt() <= opts.tol {
            return Ok(BestResponse { point: x, value: v, iterations: it, grad_norm: gn2.sqrt(), converged: true });
        }
        loop {
            let cand = &x + step * &g;
            let (vc, gc) = eval(&cand)?;
            let flat = (vc - v).abs() <= 1e-14 * v.abs().max(1.0);
            if vc >= v + 0.5 * step * gn2 || (flat && gc.norm_squared() < gn2) {
                x = cand;
                v = vc;
                g = gc;
                break;
            }
            step *= 0.5;
            if step < 1e-300 {
                return Ok(BestResponse { point: x, value: v, iterations: it, grad_norm: gn2.sqrt(), converged: false });
            }
        }
        if grow {
            step *= 1.5;
        }
    }
    let gn = g.norm();
    Ok(BestResponse { point: x, value: v, iterations: opts.max_iter, grad_norm: gn, converged: gn <= opts.tol })
}

/// Nikaido-Isoda gap `max_phi' L(theta, phi') - min_theta' L(theta', phi)`.
pub fn nash_gap(game: &HiddenGame, theta: &DVector<f64>, phi: &DVector<f64>, opts: &InnerOptions) -> Result<f64> {
    let up = best_response_max(game, theta, phi, opts)?.into_result()?;
    let down = best_response_min(game, theta, phi, opts)?.into_result()?;
    Ok(up.value - down.value)
}

/// Best response that fails on non-convergence.
pub fn best_response_max_strict(
    game: &HiddenGame,
    theta: &DVector<f64>,
    phi_start: &DVector<f64>,
    opts: &InnerOptions,
) -> Result<BestResponse> {
    best_response_max(game, theta, phi_start, opts)?.into_result()
}

/// Descent mirror of [`best_response_max_strict`].
pub fn best_response_min_strict(
    game: &HiddenGame,
    theta_start: &DVector<f64>,
    phi: &DVector<f64>,
    opts: &InnerOptions,
) -> Result<BestResponse> {
    best_response_min(game, theta_start, phi, opts)?.into_result()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::players::{make_activation, ActivationKind, Dims};

    fn quad_game(wf: f64, wg: f64, a: DMatrix<f64>, ta: DVector<f64>, tb: DVector<f64>) -> HiddenGame {
        let (p, q) = a.shape();
        HiddenGame::input(
            PlayerMap::Identity(p),
            PlayerMap::Identity(q),
            a,
            Regularizer::centered(wf, &ta),
            Regularizer::centered(wg, &tb),
        )
        .unwrap()
    }

    #[test]
    fn loss_examples() {
        let h = DVector::from_vec(vec![0.3, -1.2]);
        assert_eq!(LatentLoss::mse().latent_grad(&h, &h).unwrap().norm(), 0.0);
        let hinge = LatentLoss::squared_hinge();
        let g = hinge.latent_grad(&DVector::from_element(1, 0.0), &DVector::from_element(1, 1.0)).unwrap();
        assert_eq!(g[0], -1.0);
        let lg = LatentLoss::logistic();
        for x in [-30.0, -1.0, 0.0, 2.0, 40.0] {
            for y in [0.0, 1.0] {
                let g = lg.latent_grad(&DVector::from_element(1, x), &DVector::from_element(1, y)).unwrap();
                assert!(g[0].abs() <= 1.0);
            }
        }
        assert!(lg.latent_grad(&DVector::from_element(1, 0.0), &DVector::from_element(1, 2.0)).is_err());
        assert_eq!(LatentLoss::mse().growth_bound(3.0, 2.0), 5.0);
        assert_eq!(LatentLoss::logistic().growth_bound(123.0, 7.0), 1.0);
        for l in [LatentLoss::mse(), LatentLoss::logistic(), LatentLoss::squared_hinge(), LatentLoss::cross_entropy_l2(0.1).unwrap()] {
            assert!(l.mu <= l.smooth);
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let h = DVector::from_vec(vec![0.4, -0.7, 1.1]);
        let cases = vec![
            (LatentLoss::mse(), DVector::from_vec(vec![0.1, 0.2, -0.3])),
            (LatentLoss::logistic(), DVector::from_vec(vec![1.0, 0.0, 0.5])),
            (LatentLoss::squared_hinge(), DVector::from_vec(vec![1.0, -1.0, 1.0])),
            (LatentLoss::cross_entropy_l2(0.3).unwrap(), DVector::from_vec(vec![0.2, 0.5, 0.3])),
            (LatentLoss::quadratic_to_target(&DVector::from_vec(vec![1.0, 2.0, 3.0])), DVector::zeros(3)),
        ];
        for (loss, y) in cases {
            let g = loss.latent_grad(&h, &y).unwrap();
            for k in 0..3 {
                let mut hp = h.clone();
                hp[k] += 1e-6;
                let mut hm = h.clone();
                hm[k] -= 1e-6;
                let fd = (loss.value(&hp, &y).unwrap() - loss.value(&hm, &y).unwrap()) / 2e-6;
                assert!((fd - g[k]).abs() < 1e-7, "{:?} {k}: {fd} vs {}", loss.kind, g[k]);
            }
        }
    }

    #[test]
    fn rps_neutrality() {
        let a = 10.0 * DMatrix::from_row_slice(3, 3, &[0.0, -1.0, 1.0, 1.0, 0.0, -1.0, -1.0, 1.0, 0.0]);
        let u = DVector::from_element(3, 1.0 / 3.0);
        let g = quad_game(1.0, 1.0, a, u.clone(), u.clone());
        assert_eq!(g.value(&u, &u).unwrap(), 0.0);
        let s = g.quadratic_saddle().unwrap();
        assert!((s.theta.clone() - &u).norm() < 1e-12);
        assert!((s.phi.clone() - &u).norm() < 1e-12);
    }

    #[test]
    fn degenerate_input_game_has_zero_gradients() {
        let act = make_activation(ActivationKind::Gelu);
        let f = TwoLayerNet::init_gaussian(Dims::new(2, 8, 2), 0.4, 1.0, act, 1).unwrap();
        let g = TwoLayerNet::init_gaussian(Dims::new(2, 8, 2), 0.4, 1.0, act, 2).unwrap();
        let game = HiddenGame::input(
            PlayerMap::Net(f),
            PlayerMap::Net(g),
            DMatrix::zeros(2, 2),
            Regularizer::origin(0.0),
            Regularizer::origin(0.0),
        )
        .unwrap();
        let (gt, gp) = game.grads(&DVector::from_vec(vec![0.3, 1.0]), &DVector::from_vec(vec![-0.5, 0.2])).unwrap();
        assert_eq!(gt.norm(), 0.0);
        assert_eq!(gp.norm(), 0.0);
    }

    #[test]
    fn coupling_norm_is_cached_svd() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.5, -1.0, 0.0, 3.0]);
        let g = quad_game(1.0, 2.0, a.transpose(), DVector::zeros(3), DVector::zeros(2));
        let fresh = a.singular_values().max();
        assert!((g.coupling_norm() - fresh).abs() < 1e-10);
    }

    #[test]
    fn best_responses_quadratic() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 0.3, 0.8]);
        let g = quad_game(1.5, 0.7, a, DVector::from_vec(vec![0.2, -0.1]), DVector::from_vec(vec![1.0, 0.5]));
        let theta = DVector::from_vec(vec![0.9, -0.4]);
        let phi = DVector::from_vec(vec![0.1, 0.3]);
        let closed = best_response_max(&g, &theta, &phi, &InnerOptions::default()).unwrap();
        let opts = InnerOptions { tol: 1e-12, force_iterative: true, ..InnerOptions::default() };
        let iter = best_response_max(&g, &theta, &phi, &opts).unwrap();
        assert!(iter.converged);
        assert!((closed.point - iter.point).norm() < 1e-10);
        let again = best_response_max(&g, &theta, &closed_point(&g, &theta), &opts).unwrap();
        assert_eq!(again.iterations, 0);

        let s = g.quadratic_saddle().unwrap();
        let gap = nash_gap(&g, &theta, &phi, &InnerOptions::default()).unwrap();
        assert!((gap - s.nash_gap(&theta, &phi)).abs() < 1e-10);
        let gap_it = nash_gap(&g, &theta, &phi, &opts).unwrap();
        assert!((gap_it - s.nash_gap(&theta, &phi)).abs() < 1e-9);
        assert!(nash_gap(&g, &s.theta, &s.phi, &InnerOptions::default()).unwrap().abs() < 1e-12);
    }

    fn closed_point(g: &HiddenGame, theta: &DVector<f64>) -> DVector<f64> {
        g.quadratic_saddle().unwrap().best_response_max(theta)
    }
}
