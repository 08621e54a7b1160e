mod common;

use common::*;
use hyposplit::model::{a_tilde, sigma_tilde_sq};
use hyposplit::ou::{omega_expansion, omega_rescaled, ou_covariance, ou_mean, OuFlow};
use hyposplit::rng::stream;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

const ETA: f64 = 6.5;
const A: f64 = 1.0;
const B: f64 = 0.6;
const S2: f64 = 0.1;

fn kramers_flow(h: f64) -> OuFlow {
    OuFlow::new(
        &kramers_a_tilde(ETA, A),
        &DMatrix::from_element(1, 1, S2),
        h,
    )
    .unwrap()
}

#[test]
fn mean_matches_rk4_integration() {
    let at = kramers_a_tilde(ETA, A);
    let w = (A / B).sqrt();
    let bt = DVector::from_vec(vec![w, 0.0]);
    let y = DVector::from_vec(vec![w + 0.1, 0.0]);
    let exact = ou_mean(&at, &bt, 0.1, &y).unwrap();
    let f = |z: &DVector<f64>| &at * (z - &bt);
    let mut z = y.clone();
    let dt = 1e-5;
    for _ in 0..10_000 {
        let k1 = f(&z);
        let k2 = f(&(&z + &k1 * (dt / 2.0)));
        let k3 = f(&(&z + &k2 * (dt / 2.0)));
        let k4 = f(&(&z + &k3 * dt));
        z += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    }
    assert!((exact - z).amax() < 1e-10);
    assert!((ou_mean(&at, &bt, 0.7, &bt).unwrap() - &bt).amax() < 1e-15);
}

#[test]
fn covariance_matches_quadrature_for_kramers() {
    let at = kramers_a_tilde(ETA, A);
    let s = sigma_tilde_sq(&DMatrix::from_element(1, 1, S2));
    for h in [0.02, 0.1] {
        let exact = ou_covariance(&at, &s, h).unwrap();
        let quad = omega_quadrature(&at, &s, h, 64);
        assert!(rel_frobenius(&exact, &quad) < 1e-8, "h={h}");
    }
}

#[test]
fn covariance_matches_quadrature_for_random_stable_systems() {
    let mut rng = stream(20, 0);
    for _ in 0..100 {
        let (at, sst) = random_stable(&mut rng);
        let s = sigma_tilde_sq(&sst);
        let h = 0.3;
        let exact = ou_covariance(&at, &s, h).unwrap();
        let quad = omega_quadrature(&at, &s, h, 64);
        assert!(rel_frobenius(&exact, &quad) < 1e-8);
    }
}

#[test]
fn rescaled_step_matches_quadrature() {
    let at = kramers_a_tilde(ETA, A);
    let sst = DMatrix::from_element(1, 1, S2);
    let r = omega_rescaled(&at, &sst, 0.1, 2.0 / 3.0).unwrap();
    assert!((r.step - 0.15).abs() < 1e-15);
    let quad = omega_quadrature(&at, &sigma_tilde_sq(&sst), 0.15, 64);
    let rr = quad[(1, 1)];
    assert!((r.logdet_rr - rr.ln()).abs() < 1e-8);
    assert!((r.scaled_rr - 2.0 / 3.0 * rr.ln()).abs() < 1e-8);
    assert!((r.logdet_full - quad.determinant().ln()).abs() < 1e-8);

    let one = omega_rescaled(&at, &sst, 0.1, 1.0).unwrap();
    assert_eq!(one.logdet_full, kramers_flow(0.1).logdet_full);
}

#[test]
fn rescaled_nilpotent_closed_form() {
    let d = 2;
    let at = a_tilde(&DMatrix::zeros(d, d), &DMatrix::zeros(d, d));
    let s2 = 0.7;
    let h = 0.05;
    let r = omega_rescaled(&at, &(DMatrix::identity(d, d) * s2), h, 2.0 / 3.0).unwrap();
    let expect = 2.0 / 3.0 * d as f64 * (1.5 * h * s2).ln();
    assert!((r.scaled_rr - expect).abs() < 1e-12);
}

#[test]
fn sr_expansion_at_small_step() {
    // Unit damping: the relative remainder is of order (h·η)².
    let flow = OuFlow::new(
        &kramers_a_tilde(1.0, A),
        &DMatrix::from_element(1, 1, S2),
        0.01,
    )
    .unwrap();
    let exp = omega_expansion(
        &DMatrix::from_element(1, 1, -1.0),
        &DMatrix::from_element(1, 1, S2),
        0.01,
    );
    let rel = (flow.blocks.sr[(0, 0)] - exp.sr[(0, 0)]).abs() / flow.blocks.sr[(0, 0)].abs();
    assert!(rel < 1e-3, "{rel}");
}

/// Residuals of every block and derived quantity against the leading-order
/// expansions, paired with the order of the remainder.
fn expansion_residuals(
    at: &DMatrix<f64>,
    sst: &DMatrix<f64>,
    h: f64,
) -> Vec<(&'static str, f64, f64)> {
    let d = sst.nrows();
    let av = at.view((d, d), (d, d)).into_owned();
    let flow = OuFlow::new(at, sst, h).unwrap();
    let e = omega_expansion(&av, sst, h);
    let sinv = sst.clone().try_inverse().unwrap();
    let id = DMatrix::<f64>::identity(d, d);
    let rr_inv = &sinv / h - (&sinv * &av + av.transpose() * &sinv) * 0.5;
    let gain = &id * (h / 2.0) - (&av - sst * av.transpose() * &sinv) * (h * h / 12.0);
    let srrs = sst * (h.powi(3) / 4.0) + (&av * sst + sst * av.transpose()) * (h.powi(4) / 8.0);
    let srrs_exact = &flow.gain * &flow.blocks.rs;
    let schur = sst * (h.powi(3) / 12.0);
    // log det(h³ΣΣᵀ/12) carries the constant −d·log 12 in addition to the
    // h-dependent terms.
    let c12 = d as f64 * 12f64.ln();
    let logdet_s = sst.determinant().ln();
    let tr = av.trace();
    let dl = d as f64 * h.ln();
    vec![
        ("SS", (&flow.blocks.ss - &e.ss).norm(), 5.0),
        ("SR", (&flow.blocks.sr - &e.sr).norm(), 4.0),
        ("RS", (&flow.blocks.rs - &e.rs).norm(), 4.0),
        ("RR", (&flow.blocks.rr - &e.rr).norm(), 3.0),
        ("RR inverse", (&flow.rr_inv - rr_inv).norm(), 1.0),
        ("gain", (&flow.gain - gain).norm(), 3.0),
        ("SR RR⁻¹ RS", (srrs_exact - srrs).norm(), 5.0),
        ("Schur", (&flow.schur - schur).norm(), 5.0),
        (
            "logdet RR",
            (flow.logdet_rr - (dl + logdet_s + h * tr)).abs(),
            2.0,
        ),
        (
            "logdet Schur",
            (flow.logdet_schur - (3.0 * dl + logdet_s - c12)).abs(),
            2.0,
        ),
        (
            "logdet full",
            (flow.logdet_full - (4.0 * dl + 2.0 * logdet_s - c12 + h * tr)).abs(),
            2.0,
        ),
    ]
}

#[allow(clippy::needless_range_loop)]
#[test]
fn expansion_remainders_have_predicted_order() {
    let at = kramers_a_tilde(ETA, A);
    let sst = DMatrix::from_element(1, 1, S2);
    let r = [0.1, 0.05, 0.025].map(|h| expansion_residuals(&at, &sst, h));
    for i in 0..r[0].len() {
        let (name, _, order) = r[0][i];
        for k in 0..2 {
            let ratio = r[k][i].1 / r[k + 1][i].1;
            let predicted = 2f64.powf(order);
            assert!(
                (ratio / predicted - 1.0).abs() < 0.25,
                "{name}: ratio {ratio:.3} vs {predicted}"
            );
        }
    }
}

#[test]
fn expansion_exact_for_undamped_noise() {
    let d = 2;
    let sst = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
    let at = a_tilde(&DMatrix::from_element(d, d, -0.3), &DMatrix::zeros(d, d));
    let flow = OuFlow::new(&at, &sst, 0.2).unwrap();
    let e = omega_expansion(&DMatrix::zeros(d, d), &sst, 0.2);
    assert!((&flow.blocks.rr - &sst * 0.2).amax() < 1e-3);
    assert_eq!(e.rr, &sst * 0.2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]
    #[test]
    fn covariance_is_symmetric_psd(seed in any::<u64>(), h in 1e-3f64..1.0) {
        let mut rng = stream(seed, 0);
        let (at, sst) = random_stable(&mut rng);
        let flow = OuFlow::new(&at, &sst, h).unwrap();
        prop_assert_eq!(&flow.omega, &flow.omega.transpose());
        let eig = flow.omega.clone().symmetric_eigen();
        prop_assert!(eig.eigenvalues.min() >= -1e-12 * flow.omega.norm());
        prop_assert_eq!(&flow.blocks.rs, &flow.blocks.sr.transpose());
        let sum = flow.logdet_rr + flow.logdet_schur;
        prop_assert!((flow.logdet_full - sum).abs() < 1e-10 * (1.0 + sum.abs()));
    }
}
