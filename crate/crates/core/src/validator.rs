//! Pre-flight checks for the initialization, width and data conditions behind the convergence
//! guarantees, reported inequality by inequality with margins.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::players::{empirical_spectrum, warn_if_not_unit_rows, Activation};

/// One inequality `lhs <= rhs` (or `<` for strict checks).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// `rhs - lhs`, clamped to the finite range.
    pub margin: f64,
}

impl Check {
    fn new(name: &str, lhs: f64, rhs: f64, strict: bool) -> Self {
        let lhs = clamp_finite(lhs);
        let rhs = clamp_finite(rhs);
        let holds = if strict { lhs < rhs } else { lhs <= rhs };
        Self { name: name.to_string(), lhs, rhs, holds, margin: clamp_finite(rhs - lhs) }
    }
}

fn clamp_finite(v: f64) -> f64 {
    if v.is_nan() {
        f64::MAX
    } else {
        v.clamp(-f64::MAX, f64::MAX)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitReport {
    pub checks: Vec<Check>,
    pub overall: bool,
    pub constants_used: BTreeMap<String, f64>,
}

impl InitReport {
    fn from_checks(checks: Vec<Check>, constants_used: BTreeMap<String, f64>) -> Self {
        let overall = checks.iter().all(|c| c.holds);
        Self { checks, overall, constants_used }
    }

    pub fn failing(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.holds)
    }

    /// Plain-text margin table.
    pub fn table(&self) -> String {
        let mut s = format!("{:<28} {:>14} {:>14} {:>14}  {}\n", "check", "lhs", "rhs", "margin", "holds");
        for c in &self.checks {
            s.push_str(&format!(
                "{:<28} {:>14.6e} {:>14.6e} {:>14.6e}  {}\n",
                c.name,
                c.lhs,
                c.rhs,
                c.margin,
                if c.holds { "yes" } else { "NO" }
            ));
        }
        s.push_str(&format!("overall: {}\n", if self.overall { "holds" } else { "fails" }));
        s
    }
}

/// Inputs of the input-game initialization conditions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputInitParams {
    pub s1_f: f64,
    pub s2_f: f64,
    pub s1_g: f64,
    pub s2_g: f64,
    pub d0_f: usize,
    pub d1_f: usize,
    pub d2_f: usize,
    pub d0_g: usize,
    pub d1_g: usize,
    pub d2_g: usize,
    pub theta0_norm: f64,
    pub phi0_norm: f64,
    pub eps: f64,
    pub sigma_max_a: f64,
    /// Constant in the variance condition.
    pub c: f64,
    /// Constant standing in for each `<~`.
    pub slack: f64,
}

fn bracket(s1: f64, norm: f64, d1: f64, c: f64) -> f64 {
    0.5 - s1 * norm * (c * d1 / PI).sqrt()
}

/// `num / bracket^2`, or `+inf` when the bracket is not positive.
fn over_bracket(num: f64, b: f64) -> f64 {
    if b <= 0.0 {
        f64::INFINITY
    } else {
        num / (b * b)
    }
}

/// Evaluates the variance, `eps`-scaled, `sigma_max(A)`-scaled and width conditions.
pub fn check_input_game_init(p: &InputInitParams) -> InitReport {
    let (d1f, d1g) = (p.d1_f as f64, p.d1_g as f64);
    let bf = bracket(p.s1_f, p.theta0_norm, d1f, p.c);
    let bg = bracket(p.s1_g, p.phi0_norm, d1g, p.c);
    let sq = |x: f64| x * x;
    let checks = vec![
        Check::new("variance_F", sq(p.s1_f), PI / (4.0 * p.c * d1f * sq(p.theta0_norm)), true),
        Check::new("variance_G", sq(p.s1_g), PI / (4.0 * p.c * d1g * sq(p.phi0_norm)), true),
        Check::new(
            "eps_scaled_F",
            over_bracket(p.s1_f.powi(4) * sq(p.s2_f) * p.theta0_norm, bf),
            p.slack * PI / (p.eps * d1f.powf(3.5)),
            false,
        ),
        Check::new(
            "eps_scaled_G",
            over_bracket(p.s1_g.powi(4) * sq(p.s2_g) * p.phi0_norm, bg),
            p.slack * PI / (p.eps * d1g.powf(3.5)),
            false,
        ),
        Check::new(
            "coupling_scaled_F",
            over_bracket(p.s1_g * p.s2_g * p.s1_f.powi(3) * p.s2_f * p.theta0_norm, bf),
            p.slack * PI / (p.sigma_max_a * d1f.powf(2.5)),
            false,
        ),
        Check::new(
            "coupling_scaled_G",
            over_bracket(p.s1_f * p.s2_f * p.s1_g.powi(3) * p.s2_g * p.phi0_norm, bg),
            p.slack * PI / (p.sigma_max_a * d1g.powf(2.5)),
            false,
        ),
        Check::new("width_F", 256.0 * p.d0_f.max(p.d2_f) as f64, d1f, false),
        Check::new("width_G", 256.0 * p.d0_g.max(p.d2_g) as f64, d1g, false),
    ];
    let constants = BTreeMap::from([("C".to_string(), p.c), ("slack".to_string(), p.slack)]);
    InitReport::from_checks(checks, constants)
}

/// `sigma1 = slack * min(d1^{-1/2}, d1^{-7/8}, 1)`, `sigma2 = 1`.
pub fn experiment_init_sigmas(d1: usize, slack: f64) -> (f64, f64) {
    let d = d1 as f64;
    (slack * d.powf(-0.5).min(d.powf(-0.875)).min(1.0), 1.0)
}

/// Neural-game conditions `s1 s2 <= kappa / sqrt(d0 d1)` and `d1 >= kappa mu^2 n^3 / d0`.
pub fn check_neural_game_init(s1: f64, s2: f64, d0: usize, d1: usize, n: usize, mu: f64, kappa: f64) -> InitReport {
    let (d0f, d1f, nf) = (d0 as f64, d1 as f64, n as f64);
    let checks = vec![
        Check::new("scale_product", s1 * s2, kappa / (d0f * d1f).sqrt(), false),
        Check::new("width", kappa * mu * mu * nf.powi(3) / d0f, d1f, false),
    ];
    InitReport::from_checks(checks, BTreeMap::from([("kappa".to_string(), kappa), ("mu".to_string(), mu)]))
}

/// Default memory budget for the Khatri-Rao power, in bytes.
pub const KHATRI_RAO_BUDGET: usize = 2 << 30;

/// Khatri-Rao power `X^{*t}`: column `i` is the `t`-fold Kronecker power of row `i` of `x`.
pub fn khatri_rao_power(x: &DMatrix<f64>, t: u32, budget_bytes: usize) -> Result<DMatrix<f64>> {
    if t == 0 {
        return Err(Error::InvalidParameter("Khatri-Rao power needs t >= 1".into()));
    }
    let (n, d) = x.shape();
    let rows = (d as u128).checked_pow(t).unwrap_or(u128::MAX);
    let bytes = rows.saturating_mul(n as u128).saturating_mul(8);
    if bytes > budget_bytes as u128 {
        return Err(Error::MemoryBudget(format!(
            "X^{{*{t}}} needs d^t * n = {d}^{t} * {n} entries ({bytes} bytes), budget is {budget_bytes}"
        )));
    }
    let rows = rows as usize;
    let mut out = DMatrix::zeros(rows, n);
    for i in 0..n {
        let mut col = vec![1.0];
        for _ in 0..t {
            let mut next = Vec::with_capacity(col.len() * d);
            for &a in &col {
                for l in 0..d {
                    next.push(a * x[(i, l)]);
                }
            }
            col = next;
        }
        out.column_mut(i).copy_from_slice(&col);
    }
    Ok(out)
}

/// `(sigma_max(X), sigma_min(X^{*t}))`. Rows are normalized (with a warning) first.
pub fn data_spectrum(x: &DMatrix<f64>, t: u32) -> Result<(f64, f64)> {
    data_spectrum_with_budget(x, t, KHATRI_RAO_BUDGET)
}

pub fn data_spectrum_with_budget(x: &DMatrix<f64>, t: u32, budget_bytes: usize) -> Result<(f64, f64)> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::Shape("empty data matrix".into()));
    }
    warn_if_not_unit_rows(x);
    let mut xn = x.clone();
    for i in 0..xn.nrows() {
        let nrm = xn.row(i).norm();
        if nrm == 0.0 {
            return Err(Error::InvalidParameter(format!("data row {i} is zero")));
        }
        xn.row_mut(i).scale_mut(1.0 / nrm);
    }
    let (_, smax) = empirical_spectrum(&xn)?;
    let kr = khatri_rao_power(&xn, t, budget_bytes)?;
    let (smin, _) = empirical_spectrum(&kr)?;
    Ok((smax, smin))
}

/// Gauss-Hermite nodes and weights for the weight `exp(-x^2)`, by Newton iteration on the
/// orthonormal recurrence.
fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let pim4 = PI.powf(-0.25);
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let mut guesses: Vec<f64> = jacobi.symmetric_eigenvalues().iter().cloned().collect();
    guesses.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for (i, &z0) in guesses.iter().enumerate() {
        let mut z = z0;
        let mut pp = 0.0;
        for _ in 0..50 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        w[i] = 2.0 / (pp * pp);
    }
    (x, w)
}

/// Minimum number of quadrature nodes.
pub const HERMITE_NODES: usize = 128;

fn hermite_coeffs_with_nodes<F: Fn(f64) -> f64>(psi: &F, k_max: usize, nodes: usize) -> Vec<f64> {
    let (x, w) = gauss_hermite(nodes);
    let mut acc = vec![0.0; k_max + 1];
    for (xi, wi) in x.iter().zip(&w) {
        let z = std::f64::consts::SQRT_2 * xi;
        let weight = wi / PI.sqrt() * psi(z);
        let (mut h_prev, mut h) = (0.0, 1.0);
        for (k, a) in acc.iter_mut().enumerate() {
            *a += weight * h;
            let next = z * h - k as f64 * h_prev;
            h_prev = h;
            h = next;
        }
    }
    let mut fact = 1.0;
    for (k, a) in acc.iter_mut().enumerate() {
        if k > 0 {
            fact *= k as f64;
        }
        *a /= fact.sqrt();
    }
    acc
}

/// Normalized Hermite coefficients `c_i = E[psi(Z) He_i(Z)] / sqrt(i!)`, `i = 0..=k_max`, with
/// probabilists' polynomials `He_i`.
///
/// Computed with 128-node Gauss-Hermite quadrature and checked against 256 nodes.
pub fn hermite_coeffs(act: &Activation, k_max: usize) -> Result<Vec<f64>> {
    hermite_coeffs_fn(&|z| act.value(z), k_max)
}

/// [`hermite_coeffs`] for an arbitrary function.
pub fn hermite_coeffs_fn<F: Fn(f64) -> f64>(psi: &F, k_max: usize) -> Result<Vec<f64>> {
    if k_max > 16 {
        return Err(Error::InvalidParameter(format!("k_max must be at most 16, got {k_max}")));
    }
    let c = hermite_coeffs_with_nodes(psi, k_max, HERMITE_NODES);
    let c2 = hermite_coeffs_with_nodes(psi, k_max, 2 * HERMITE_NODES);
    let worst = c.iter().zip(&c2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if !(worst <= 1e-9) {
        return Err(Error::Quadrature(format!("node doubling changed a coefficient by {worst:.3e}")));
    }
    Ok(c)
}

/// `E[psi(Z)^2]` by the same quadrature.
pub fn gaussian_second_moment(act: &Activation) -> f64 {
    let (x, w) = gauss_hermite(2 * HERMITE_NODES);
    x.iter()
        .zip(&w)
        .map(|(xi, wi)| {
            let v = act.value(std::f64::consts::SQRT_2 * xi);
            wi / PI.sqrt() * v * v
        })
        .sum()
}

/// Knobs of the neural-game Jacobian bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuralBoundParams {
    pub sigma1: f64,
    pub sigma2: f64,
    pub d1: usize,
    pub n: usize,
    /// `(sigma_max(X), sigma_min(X^{*t}))`.
    pub x_spectrum: (f64, f64),
    pub delta1: f64,
    pub delta2: f64,
    pub r1: f64,
    pub r2: f64,
    pub t: usize,
}

/// Literal evaluation of the Hermite-based Jacobian bounds:
///
/// `lower = s1^{r1} sqrt((1 - d1') c_t^2 / t! * d1) * sigma_min(X^{*t})`
///
/// `upper = s2 psi_dot_max sigma_max(X) sqrt(d1) + s1^{r1} sqrt((1 + d2')(c_1^2 + c_inf^2) d1) sigma_max(X)
///          + s1^{r2} |c_0| sqrt((1 + d2') d1 n)`
///
/// with `c_inf^2 = sum_{i >= 2} c_i^2` over the supplied coefficients.
pub fn neural_spectral_bounds(coeffs: &[f64], act: &Activation, p: &NeuralBoundParams) -> Result<(f64, f64)> {
    if coeffs.len() < 2 || p.t >= coeffs.len() {
        return Err(Error::InvalidParameter("need coefficients c_0, c_1 and c_t".into()));
    }
    let d1 = p.d1 as f64;
    let (smax_x, smin_kr) = p.x_spectrum;
    let fact: f64 = (1..=p.t).map(|k| k as f64).product();
    let ct = coeffs[p.t];
    let lower = p.sigma1.powf(p.r1) * ((1.0 - p.delta1) * ct * ct / fact * d1).sqrt() * smin_kr;
    let c_inf2: f64 = coeffs.iter().skip(2).map(|c| c * c).sum();
    let upper = p.sigma2 * act.dot_psi_max * smax_x * d1.sqrt()
        + p.sigma1.powf(p.r1) * ((1.0 + p.delta2) * (coeffs[1] * coeffs[1] + c_inf2) * d1).sqrt() * smax_x
        + p.sigma1.powf(p.r2) * coeffs[0].abs() * ((1.0 + p.delta2) * d1 * p.n as f64).sqrt();
    Ok((lower, upper))
}

/// Unit-norm rows of `x`.
pub fn normalize_rows(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for i in 0..out.nrows() {
        let n = out.row(i).norm();
        if n > 0.0 {
            out.row_mut(i).scale_mut(1.0 / n);
        }
    }
    out
}
