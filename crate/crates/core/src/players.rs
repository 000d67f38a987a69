//! Two-layer neural players `F(x) = W2 psi(W1 x)` with analytic Jacobians, Gaussian
//! initialization and closed-form spectral certificates.
//!
//! Parameter vectors flatten `W1` row-major followed by `W2` row-major, so entry
//! `W1[j, l]` sits at index `j * d0 + l` and `W2[k, j]` at `d1 * d0 + k * d1 + j`.

use std::f64::consts::{LN_2, PI, SQRT_2};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

const GRID_LO: f64 = -10.0;
const GRID_HI: f64 = 10.0;
const GRID_STEP: f64 = 1e-4;

/// Supported activation functions.
///
/// `Linear` is the identity stand-in used by tests and sanity checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Gelu,
    Softplus,
    Linear,
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gelu" => Ok(Self::Gelu),
            "softplus" => Ok(Self::Softplus),
            "linear" => Ok(Self::Linear),
            other => Err(Error::InvalidParameter(format!("unsupported activation `{other}`"))),
        }
    }
}

/// A smooth activation together with its derivative bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Activation {
    pub kind: ActivationKind,
    /// `sup |psi'|` over the evaluation grid.
    pub dot_psi_max: f64,
    /// `sup |psi''|` over the evaluation grid.
    pub ddot_psi_max: f64,
    /// Lipschitz constant of `psi'`; equal to `ddot_psi_max`.
    pub deriv_lipschitz: f64,
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ActivationKind {
    pub fn value(self, x: f64) -> f64 {
        match self {
            Self::Gelu => x * std_normal_cdf(x),
            Self::Softplus => {
                if x > 0.0 {
                    x + (-x).exp().ln_1p() - LN_2
                } else {
                    x.exp().ln_1p() - LN_2
                }
            }
            Self::Linear => x,
        }
    }

    pub fn deriv(self, x: f64) -> f64 {
        match self {
            Self::Gelu => std_normal_cdf(x) + x * std_normal_pdf(x),
            Self::Softplus => sigmoid(x),
            Self::Linear => 1.0,
        }
    }

    pub fn second_deriv(self, x: f64) -> f64 {
        match self {
            Self::Gelu => (2.0 - x * x) * std_normal_pdf(x),
            Self::Softplus => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Self::Linear => 0.0,
        }
    }
}

/// Builds an activation, computing `sup |psi'|` and `sup |psi''|` on a dense grid over
/// `[-10, 10]` with step `1e-4`.
pub fn make_activation(kind: ActivationKind) -> Activation {
    let steps = ((GRID_HI - GRID_LO) / GRID_STEP).round() as usize;
    let (mut d1, mut d2) = (0.0f64, 0.0f64);
    for i in 0..=steps {
        let x = GRID_LO + i as f64 * GRID_STEP;
        d1 = d1.max(kind.deriv(x).abs());
        d2 = d2.max(kind.second_deriv(x).abs());
    }
    Activation { kind, dot_psi_max: d1, ddot_psi_max: d2, deriv_lipschitz: d2 }
}

impl Activation {
    pub fn value(&self, x: f64) -> f64 {
        self.kind.value(x)
    }

    pub fn deriv(&self, x: f64) -> f64 {
        self.kind.deriv(x)
    }

    pub fn second_deriv(&self, x: f64) -> f64 {
        self.kind.second_deriv(x)
    }
}

/// Network dimensions `(d0, d1, d2)`: input, hidden width, output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d0: usize,
    pub d1: usize,
    pub d2: usize,
}

impl Dims {
    pub fn new(d0: usize, d1: usize, d2: usize) -> Self {
        Self { d0, d1, d2 }
    }

    /// Number of trainable parameters, `d1*d0 + d2*d1`.
    pub fn n_params(&self) -> usize {
        self.d1 * self.d0 + self.d2 * self.d1
    }
}

/// A two-layer network `x -> W2 psi(W1 x)`.
#[derive(Clone, Debug)]
pub struct TwoLayerNet {
    w1: DMatrix<f64>,
    w2: DMatrix<f64>,
    act: Activation,
    dims: Dims,
    init_std: Option<(f64, f64)>,
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

impl TwoLayerNet {
    /// Wraps explicit weight matrices. `w1` is `d1 x d0`, `w2` is `d2 x d1`.
    pub fn new(w1: DMatrix<f64>, w2: DMatrix<f64>, act: Activation) -> Result<Self> {
        if w1.nrows() == 0 || w1.ncols() == 0 || w2.nrows() == 0 {
            return Err(Error::Shape("zero dimension".into()));
        }
        if w2.ncols() != w1.nrows() {
            return Err(Error::Shape(format!(
                "W2 has {} columns but W1 has {} rows",
                w2.ncols(),
                w1.nrows()
            )));
        }
        check_finite(&w1, "W1")?;
        check_finite(&w2, "W2")?;
        let dims = Dims::new(w1.ncols(), w1.nrows(), w2.nrows());
        Ok(Self { w1, w2, act, dims, init_std: None })
    }

    /// Samples `W1 ~ N(0, sigma1^2)` and `W2 ~ N(0, sigma2^2)` entrywise from a ChaCha8 stream.
    pub fn init_gaussian(dims: Dims, sigma1: f64, sigma2: f64, act: Activation, seed: u64) -> Result<Self> {
        if dims.d0 == 0 || dims.d1 == 0 || dims.d2 == 0 {
            return Err(Error::Shape("zero dimension".into()));
        }
        if !(sigma1 > 0.0 && sigma1.is_finite()) || !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "standard deviations must be positive, got ({sigma1}, {sigma2})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n1 = Normal::new(0.0, sigma1).expect("validated std");
        let n2 = Normal::new(0.0, sigma2).expect("validated std");
        let mut w1 = DMatrix::zeros(dims.d1, dims.d0);
        for j in 0..dims.d1 {
            for l in 0..dims.d0 {
                w1[(j, l)] = n1.sample(&mut rng);
            }
        }
        let mut w2 = DMatrix::zeros(dims.d2, dims.d1);
        for k in 0..dims.d2 {
            for j in 0..dims.d1 {
                w2[(k, j)] = n2.sample(&mut rng);
            }
        }
        Ok(Self { w1, w2, act, dims, init_std: Some((sigma1, sigma2)) })
    }

    pub fn w1(&self) -> &DMatrix<f64> {
        &self.w1
    }

    pub fn w2(&self) -> &DMatrix<f64> {
        &self.w2
    }

    pub fn activation(&self) -> &Activation {
        &self.act
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Initialization standard deviations, if the net was sampled by [`Self::init_gaussian`].
    pub fn init_std(&self) -> Option<(f64, f64)> {
        self.init_std
    }

    /// Returns a copy with `W2` scaled by `c`.
    pub fn scale_output(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.w2 *= c;
        out
    }

    fn check_input(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dims.d0 {
            return Err(Error::Shape(format!("input has length {}, expected {}", x.len(), self.dims.d0)));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        Ok(())
    }

    /// `W2 psi(W1 x)`.
    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(x)?;
        let z = &self.w1 * x;
        Ok(&self.w2 * z.map(|v| self.act.value(v)))
    }

    /// Input Jacobian `W2 diag(psi'(W1 x)) W1`, shape `d2 x d0`.
    pub fn jacobian_input(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        let z = &self.w1 * x;
        let mut scaled = self.w2.clone();
        for j in 0..self.dims.d1 {
            let s = self.act.deriv(z[j]);
            scaled.column_mut(j).scale_mut(s);
        }
        Ok(scaled * &self.w1)
    }

    /// Vector-Jacobian product `J(x)^T r` with respect to the input.
    pub fn vjp_input(&self, x: &DVector<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(x)?;
        if r.len() != self.dims.d2 {
            return Err(Error::Shape(format!("cotangent has length {}, expected {}", r.len(), self.dims.d2)));
        }
        let z = &self.w1 * x;
        let mut delta = self.w2.tr_mul(r);
        for j in 0..self.dims.d1 {
            delta[j] *= self.act.deriv(z[j]);
        }
        Ok(self.w1.tr_mul(&delta))
    }

    fn check_batch(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.nrows() == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        if x.ncols() != self.dims.d0 {
            return Err(Error::Shape(format!("batch has {} columns, expected {}", x.ncols(), self.dims.d0)));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("batch".into()));
        }
        Ok(())
    }

    /// Stacked outputs `(F(x_1), ..., F(x_n))` for the rows of `x`, length `n * d2`.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_batch(x)?;
        let a = (&self.w1 * x.transpose()).map(|v| self.act.value(v));
        let out = &self.w2 * a;
        Ok(DVector::from_column_slice(out.as_slice()))
    }

    /// Stacked parameter Jacobian over the rows of `x`, shape `(n d2) x (d1 d0 + d2 d1)`.
    ///
    /// Row `i * d2 + k` holds the gradient of output `k` at sample `i`.
    pub fn jacobian_params(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_batch(x)?;
        warn_if_not_unit_rows(x);
        let Dims { d0, d1, d2 } = self.dims;
        let n = x.nrows();
        let off = d1 * d0;
        let mut jac = DMatrix::zeros(n * d2, self.dims.n_params());
        for i in 0..n {
            let xi = x.row(i).transpose();
            let z = &self.w1 * &xi;
            for k in 0..d2 {
                let row = i * d2 + k;
                for j in 0..d1 {
                    let g = self.w2[(k, j)] * self.act.deriv(z[j]);
                    for l in 0..d0 {
                        jac[(row, j * d0 + l)] = g * xi[l];
                    }
                    jac[(row, off + k * d1 + j)] = self.act.value(z[j]);
                }
            }
        }
        Ok(jac)
    }

    /// Vector-Jacobian product `J_params(x)^T r` for a stacked cotangent `r` of length `n * d2`.
    pub fn vjp_params(&self, x: &DMatrix<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_batch(x)?;
        let Dims { d0, d1, d2 } = self.dims;
        let n = x.nrows();
        if r.len() != n * d2 {
            return Err(Error::Shape(format!("cotangent has length {}, expected {}", r.len(), n * d2)));
        }
        let z = &self.w1 * x.transpose();
        let a = z.map(|v| self.act.value(v));
        let rm = DMatrix::from_column_slice(d2, n, r.as_slice());
        let g2 = &rm * a.transpose();
        let mut delta = self.w2.tr_mul(&rm);
        for i in 0..n {
            for j in 0..d1 {
                delta[(j, i)] *= self.act.deriv(z[(j, i)]);
            }
        }
        let g1 = delta * x;
        let mut out = DVector::zeros(self.dims.n_params());
        for j in 0..d1 {
            for l in 0..d0 {
                out[j * d0 + l] = g1[(j, l)];
            }
        }
        let off = d1 * d0;
        for k in 0..d2 {
            for j in 0..d1 {
                out[off + k * d1 + j] = g2[(k, j)];
            }
        }
        Ok(out)
    }

    /// Flattened parameters (W1 row-major, then W2 row-major).
    pub fn params(&self) -> DVector<f64> {
        let Dims { d0, d1, d2 } = self.dims;
        let mut p = DVector::zeros(self.dims.n_params());
        for j in 0..d1 {
            for l in 0..d0 {
                p[j * d0 + l] = self.w1[(j, l)];
            }
        }
        let off = d1 * d0;
        for k in 0..d2 {
            for j in 0..d1 {
                p[off + k * d1 + j] = self.w2[(k, j)];
            }
        }
        p
    }

    /// Same architecture and activation with the weights replaced by a flattened vector.
    pub fn with_params(&self, p: &DVector<f64>) -> Result<Self> {
        let Dims { d0, d1, d2 } = self.dims;
        if p.len() != self.dims.n_params() {
            return Err(Error::Shape(format!(
                "parameter vector has length {}, expected {}",
                p.len(),
                self.dims.n_params()
            )));
        }
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("parameter vector".into()));
        }
        let w1 = DMatrix::from_row_slice(d1, d0, &p.as_slice()[..d1 * d0]);
        let w2 = DMatrix::from_row_slice(d2, d1, &p.as_slice()[d1 * d0..]);
        Ok(Self { w1, w2, act: self.act, dims: self.dims, init_std: self.init_std })
    }
}

pub(crate) fn warn_if_not_unit_rows(x: &DMatrix<f64>) {
    let off = (0..x.nrows()).any(|i| (x.row(i).norm() - 1.0).abs() > 1e-8);
    if off {
        log::warn!("data rows are not unit-norm");
    }
}

/// Verdict of a spectral certificate against empirical singular values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Holds,
    Violated,
    Vacuous,
}

/// Closed-form spectral bounds paired with empirical measurements.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralCertificate {
    pub sigma_min_lower: f64,
    pub sigma_max_upper: f64,
    pub beta: f64,
    pub radius: f64,
    pub sigma_min_emp: f64,
    pub sigma_max_emp: f64,
    pub verdict: Verdict,
}

/// Safety factor applied to the empirical `sigma_min` when the closed-form lower bound is vacuous.
pub const EMPIRICAL_MU_FACTOR: f64 = 0.9;

impl SpectralCertificate {
    /// Compares bounds with measurements. The radius is `mu_jac / (2 beta)`, where `mu_jac` is the
    /// lower bound if it is positive and `0.9 * sigma_min_emp` otherwise.
    pub fn evaluate(lower: f64, upper: f64, beta: f64, sigma_min_emp: f64, sigma_max_emp: f64) -> Self {
        let verdict = if lower <= 0.0 {
            Verdict::Vacuous
        } else if sigma_min_emp >= lower && sigma_max_emp <= upper {
            Verdict::Holds
        } else {
            Verdict::Violated
        };
        let lower = lower.max(0.0);
        let mu_jac = if lower > 0.0 { lower } else { EMPIRICAL_MU_FACTOR * sigma_min_emp };
        let radius = if beta > 0.0 { mu_jac / (2.0 * beta) } else { f64::INFINITY };
        Self {
            sigma_min_lower: lower,
            sigma_max_upper: upper,
            beta,
            radius,
            sigma_min_emp,
            sigma_max_emp,
            verdict,
        }
    }

    /// The `mu_Jac` value used for the radius.
    pub fn mu_jac(&self) -> f64 {
        if self.sigma_min_lower > 0.0 {
            self.sigma_min_lower
        } else {
            EMPIRICAL_MU_FACTOR * self.sigma_min_emp
        }
    }
}

/// Input-Jacobian singular value bounds for a Gaussian-initialized net.
///
/// `lower = max(0, s1 s2 d1 / 16 * (1/2 - s1 |theta| sqrt(C d1 / pi)))`, `upper = 3.47 s1 s2 d1`.
pub fn spectral_bounds_input(sigma1: f64, sigma2: f64, d1: usize, theta_norm: f64, c: f64) -> (f64, f64) {
    let d1 = d1 as f64;
    let scale = sigma1 * sigma2 * d1;
    let bracket = 0.5 - sigma1 * theta_norm * (c * d1 / PI).sqrt();
    let lower = (scale / 16.0 * bracket).max(0.0);
    (lower, 3.47 * scale)
}

/// Smoothness of the input map, `343 s1^2 s2 d1^{3/2} / (32 sqrt(2 pi))`.
pub fn smoothness_input(sigma1: f64, sigma2: f64, d1: usize) -> f64 {
    343.0 * sigma1 * sigma1 * sigma2 * (d1 as f64).powf(1.5) / (32.0 * (2.0 * PI).sqrt())
}

/// Data-driven smoothness, `sqrt(2) sigma_max(X) (psi_dot_max + psi_ddot_max chi_max)`.
pub fn smoothness_data(x: &DMatrix<f64>, act: &Activation, chi_max: f64) -> Result<f64> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::Shape("empty data matrix".into()));
    }
    let (_, smax) = empirical_spectrum(x)?;
    Ok(SQRT_2 * smax * (act.dot_psi_max + act.ddot_psi_max * chi_max))
}

/// Smallest and largest singular values by full SVD. The smallest is taken over the
/// `min(m, n)` singular values.
pub fn empirical_spectrum(j: &DMatrix<f64>) -> Result<(f64, f64)> {
    if j.nrows() == 0 || j.ncols() == 0 {
        return Err(Error::Shape("empty matrix".into()));
    }
    if !j.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("matrix passed to empirical_spectrum".into()));
    }
    let sv = j.singular_values();
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    Ok((smin, smax))
}

/// Certificate for an input-optimization player at the input point `x`.
pub fn certify_input(net: &TwoLayerNet, x: &DVector<f64>, c: f64) -> Result<SpectralCertificate> {
    let (s1, s2) = net
        .init_std()
        .ok_or_else(|| Error::InvalidParameter("net has no recorded initialization scale".into()))?;
    let d1 = net.dims().d1;
    let (lower, upper) = spectral_bounds_input(s1, s2, d1, x.norm(), c);
    let beta = smoothness_input(s1, s2, d1);
    let (emin, emax) = empirical_spectrum(&net.jacobian_input(x)?)?;
    Ok(SpectralCertificate::evaluate(lower, upper, beta, emin, emax))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gelu() -> Activation {
        make_activation(ActivationKind::Gelu)
    }

    #[test]
    fn gelu_constants() {
        let a = gelu();
        let sqrt2 = SQRT_2;
        let exact_dot = std_normal_cdf(sqrt2) + sqrt2 * std_normal_pdf(sqrt2);
        assert_relative_eq!(a.dot_psi_max, exact_dot, max_relative = 1e-6);
        assert!((a.dot_psi_max - 1.1289).abs() < 1e-4);
        assert_relative_eq!(a.ddot_psi_max, 2.0 / (2.0 * PI).sqrt(), max_relative = 1e-6);
        assert_eq!(a.deriv_lipschitz, a.ddot_psi_max);
        assert_eq!(a.value(0.0), 0.0);
    }

    #[test]
    fn softplus_is_centered() {
        let a = make_activation(ActivationKind::Softplus);
        assert!(a.value(0.0).abs() <= 1e-12);
        assert_relative_eq!(a.ddot_psi_max, 0.25, max_relative = 1e-6);
        assert!(a.dot_psi_max > 0.9999 && a.dot_psi_max < 1.0);
        assert_relative_eq!(a.value(3.0), (1.0 + 3.0f64.exp()).ln() - LN_2, max_relative = 1e-14);
        assert_relative_eq!(a.value(-3.0), (1.0 + (-3.0f64).exp()).ln() - LN_2, max_relative = 1e-14);
    }

    #[test]
    fn parse_kind() {
        assert_eq!("GeLU".parse::<ActivationKind>().unwrap(), ActivationKind::Gelu);
        assert!("relu".parse::<ActivationKind>().is_err());
    }

    #[test]
    fn init_rejects_degenerate() {
        assert!(TwoLayerNet::init_gaussian(Dims::new(2, 3, 1), 0.0, 1.0, gelu(), 0).is_err());
        assert!(TwoLayerNet::init_gaussian(Dims::new(0, 3, 1), 1.0, 1.0, gelu(), 0).is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let a = TwoLayerNet::init_gaussian(Dims::new(3, 7, 2), 0.3, 1.2, gelu(), 42).unwrap();
        let b = TwoLayerNet::init_gaussian(Dims::new(3, 7, 2), 0.3, 1.2, gelu(), 42).unwrap();
        assert_eq!(a.w1(), b.w1());
        assert_eq!(a.w2(), b.w2());
        let c = TwoLayerNet::init_gaussian(Dims::new(3, 7, 2), 0.3, 1.2, gelu(), 43).unwrap();
        assert_ne!(a.w1(), c.w1());
    }

    #[test]
    fn identity_net_at_sqrt2() {
        let net = TwoLayerNet::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1), gelu()).unwrap();
        let y = net.forward(&DVector::from_element(1, SQRT_2)).unwrap();
        assert_relative_eq!(y[0], SQRT_2 * std_normal_cdf(SQRT_2), max_relative = 1e-14);
        assert!((y[0] - 1.30299).abs() < 1e-5);
    }

    #[test]
    fn params_roundtrip() {
        let net = TwoLayerNet::init_gaussian(Dims::new(3, 5, 2), 0.5, 0.7, gelu(), 1).unwrap();
        let p = net.params();
        assert_eq!(p[3 + 2], net.w1()[(1, 2)]);
        assert_eq!(p[15 + 5 + 3], net.w2()[(1, 3)]);
        let back = net.with_params(&p).unwrap();
        assert_eq!(back.w1(), net.w1());
        assert_eq!(back.w2(), net.w2());
    }

    #[test]
    fn vjp_matches_explicit_jacobian() {
        let net = TwoLayerNet::init_gaussian(Dims::new(3, 8, 2), 0.6, 0.9, gelu(), 5).unwrap();
        let x = DMatrix::from_fn(4, 3, |i, j| ((i * 3 + j) as f64 * 0.37).sin());
        let r = DVector::from_fn(8, |i, _| (i as f64 * 0.91).cos());
        let jac = net.jacobian_params(&x).unwrap();
        let explicit = jac.transpose() * &r;
        let fast = net.vjp_params(&x, &r).unwrap();
        assert!((explicit - fast).norm() < 1e-12);

        let xi = DVector::from_vec(vec![0.3, -0.2, 0.8]);
        let ri = DVector::from_vec(vec![1.5, -0.5]);
        let ji = net.jacobian_input(&xi).unwrap();
        assert!((ji.transpose() * &ri - net.vjp_input(&xi, &ri).unwrap()).norm() < 1e-12);
    }

    #[test]
    fn forward_batch_stacks_rows() {
        let net = TwoLayerNet::init_gaussian(Dims::new(2, 6, 3), 0.6, 0.9, gelu(), 9).unwrap();
        let x = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, -0.4, 0.5]);
        let s = net.forward_batch(&x).unwrap();
        let f1 = net.forward(&DVector::from_vec(vec![-0.4, 0.5])).unwrap();
        assert!((s.rows(3, 3) - f1).norm() < 1e-15);
    }

    #[test]
    fn bounds_examples() {
        let (lo, up) = spectral_bounds_input(0.01, 0.1, 256, 1.0, 1.0);
        assert!((lo - 0.0065557).abs() < 1e-7);
        assert!((up - 0.88832).abs() < 1e-10);
        let (lo, _) = spectral_bounds_input(0.1, 0.1, 256, 1.0, 1.0);
        assert_eq!(lo, 0.0);
        let cert = SpectralCertificate::evaluate(lo, 1.0, 1.0, 0.5, 0.7);
        assert_eq!(cert.verdict, Verdict::Vacuous);
        assert_relative_eq!(smoothness_input(0.01, 1.0, 256), 343e-4 * 4096.0 / (32.0 * (2.0 * PI).sqrt()), max_relative = 1e-12);
        assert_relative_eq!(smoothness_input(0.02, 1.0, 256), 4.0 * smoothness_input(0.01, 1.0, 256), max_relative = 1e-14);
    }

    #[test]
    fn data_smoothness() {
        let a = gelu();
        let x = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let b = smoothness_data(&x, &a, 1.0).unwrap();
        assert!((b - 5.4499).abs() < 1e-3);
        let b0 = smoothness_data(&x, &a, 0.0).unwrap();
        assert_relative_eq!(b0, SQRT_2 * 2.0 * a.dot_psi_max, max_relative = 1e-12);
        assert!(smoothness_data(&DMatrix::zeros(0, 2), &a, 1.0).is_err());
    }

    #[test]
    fn spectrum_basics() {
        assert_eq!(empirical_spectrum(&DMatrix::identity(3, 3)).unwrap(), (1.0, 1.0));
        let (lo, hi) = empirical_spectrum(&DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0]))).unwrap();
        assert_relative_eq!(lo, 0.5, max_relative = 1e-14);
        assert_relative_eq!(hi, 2.0, max_relative = 1e-14);
        let mut bad = DMatrix::identity(2, 2);
        bad[(0, 1)] = f64::NAN;
        assert!(empirical_spectrum(&bad).is_err());
    }
}
