//! Oracles shared by the integration tests.
#![allow(dead_code)]

use hyposplit::linalg::expm;
use hyposplit::model::{a_tilde, sigma_tilde_sq};
use hyposplit::quadrature::gauss_legendre_on;
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// ∫₀ʰ e^{Ã(h−u)} S e^{Ãᵀ(h−u)} du by Gauss–Legendre quadrature.
pub fn omega_quadrature(a: &DMatrix<f64>, s: &DMatrix<f64>, h: f64, nodes: usize) -> DMatrix<f64> {
    let (u, w) = gauss_legendre_on(nodes, 0.0, h);
    let mut out = DMatrix::zeros(a.nrows(), a.nrows());
    for (ui, wi) in u.iter().zip(&w) {
        let e = expm(&(a * (h - ui))).unwrap();
        out += (&e * s * e.transpose()) * *wi;
    }
    out
}

pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

pub fn kramers_a_tilde(eta: f64, a: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0 * a, -eta])
}

/// Lower-triangular factor with positive diagonal, entries of moderate size.
pub fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..=i {
            l[(i, j)] = if i == j {
                rng.random_range(0.3..2.0)
            } else {
                rng.random_range(-1.0..1.0)
            };
        }
    }
    &l * l.transpose()
}

/// Random Ã = [[0, I], [A_x, A_v]] whose eigenvalues all have negative real
/// part, with its noise ΣΣᵀ.
pub fn random_stable(rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = rng.random_range(1..=3);
    loop {
        let ax = DMatrix::from_fn(d, d, |_, _| rng.random_range(-3.0..1.0));
        let av = DMatrix::from_fn(d, d, |_, _| rng.random_range(-3.0..1.0));
        let at = a_tilde(&ax, &av);
        let eig = at.clone().complex_eigenvalues();
        if eig.iter().all(|z| z.re < -1e-3) {
            return (at, random_spd(rng, d));
        }
    }
}

pub fn sigma_tilde(sst: &DMatrix<f64>) -> DMatrix<f64> {
    sigma_tilde_sq(sst)
}

/// log(x1/x2)/log 2: the observed order of a residual when h halves.
pub fn observed_order(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}
