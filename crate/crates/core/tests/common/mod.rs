#![allow(dead_code)]

use hiddenmm::objectives::{HiddenGame, PlayerMap, Regularizer};
use hiddenmm::players::{make_activation, ActivationKind, Dims, TwoLayerNet};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss_vec<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| -> f64 { StandardNormal.sample(rng) })
}

pub fn gauss_mat<R: Rng>(rng: &mut R, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| -> f64 { StandardNormal.sample(rng) })
}

/// Central-difference gradient of a scalar function.
pub fn fd_grad<F: Fn(&DVector<f64>) -> f64>(f: F, x: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let mut p = x.clone();
        let mut m = x.clone();
        p[i] += h;
        m[i] -= h;
        (f(&p) - f(&m)) / (2.0 * h)
    })
}

/// Central-difference Jacobian of a vector function.
pub fn fd_jacobian<F: Fn(&DVector<f64>) -> DVector<f64>>(f: F, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let m = f(x).len();
    let mut j = DMatrix::zeros(m, x.len());
    for i in 0..x.len() {
        let mut p = x.clone();
        let mut q = x.clone();
        p[i] += h;
        q[i] -= h;
        j.set_column(i, &((f(&p) - f(&q)) / (2.0 * h)));
    }
    j
}

/// Normwise relative error with an absolute floor.
pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-8)
}

pub fn rel_err_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-8)
}

pub fn gelu_net(d0: usize, d1: usize, d2: usize, s1: f64, s2: f64, seed: u64) -> TwoLayerNet {
    TwoLayerNet::init_gaussian(Dims::new(d0, d1, d2), s1, s2, make_activation(ActivationKind::Gelu), seed).unwrap()
}

/// Quadratic game with identity maps.
pub fn quad_game(wf: f64, wg: f64, a: DMatrix<f64>, tf: DVector<f64>, tg: DVector<f64>) -> HiddenGame {
    let (p, q) = a.shape();
    HiddenGame::input(
        PlayerMap::Identity(p),
        PlayerMap::Identity(q),
        a,
        Regularizer::centered(wf, &tf),
        Regularizer::centered(wg, &tg),
    )
    .unwrap()
}

/// Random orthogonal matrix from a QR factorization.
pub fn orthogonal<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    gauss_mat(rng, n, n).qr().q()
}

pub fn report(id: &str, pass: bool, detail: &str) {
    println!("{} {id}: {detail}", if pass { "PASS" } else { "FAIL" });
}
