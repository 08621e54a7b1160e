//! Exact flow of the linear part dY = Ã(Y − b̃) dt + Σ̃ dW: mean map,
//! covariance Ω̃_h and its smooth/rough block structure.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, expm, spd_inverse_logdet, symmetrize};
use crate::model::{a_tilde, sigma_tilde_sq, SecondOrderModel, Theta};

/// e^{Ãh}(y − b̃) + b̃.
pub fn ou_mean(
    a_tilde: &DMatrix<f64>,
    b_tilde: &DVector<f64>,
    h: f64,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    if !(h >= 0.0) {
        return Err(Error::Argument(format!(
            "step must be nonnegative, got {h}"
        )));
    }
    if h == 0.0 {
        return Ok(y.clone());
    }
    let e = expm(&(a_tilde * h))?;
    Ok(e * (y - b_tilde) + b_tilde)
}

/// Ω̃_h = ∫₀ʰ e^{Ã(h−u)} Σ̃Σ̃ᵀ e^{Ãᵀ(h−u)} du from the exponential of the
/// block matrix [[Ã, Σ̃Σ̃ᵀ], [0, −Ãᵀ]]·h. Returns (e^{Ãh}, Ω̃_h).
pub fn ou_exp_and_covariance(
    a_tilde: &DMatrix<f64>,
    sigma_tilde_sq: &DMatrix<f64>,
    h: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Argument(format!("step must be positive, got {h}")));
    }
    let n = a_tilde.nrows();
    let mut c = DMatrix::zeros(2 * n, 2 * n);
    c.view_mut((0, 0), (n, n)).copy_from(&(a_tilde * h));
    c.view_mut((0, n), (n, n)).copy_from(&(sigma_tilde_sq * h));
    c.view_mut((n, n), (n, n))
        .copy_from(&(-a_tilde.transpose() * h));
    let e = expm(&c)?;
    let exp_ah = e.view((0, 0), (n, n)).into_owned();
    let g = e.view((0, n), (n, n)).into_owned();
    let omega = linalg::psd_repair(&symmetrize(&(g * exp_ah.transpose())))?;
    Ok((exp_ah, omega))
}

pub fn ou_covariance(
    a_tilde: &DMatrix<f64>,
    sigma_tilde_sq: &DMatrix<f64>,
    h: f64,
) -> Result<DMatrix<f64>> {
    ou_exp_and_covariance(a_tilde, sigma_tilde_sq, h).map(|(_, o)| o)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OmegaBlocks {
    pub ss: DMatrix<f64>,
    pub sr: DMatrix<f64>,
    pub rs: DMatrix<f64>,
    pub rr: DMatrix<f64>,
}

impl OmegaBlocks {
    pub fn split(omega: &DMatrix<f64>) -> Self {
        let d = omega.nrows() / 2;
        Self {
            ss: omega.view((0, 0), (d, d)).into_owned(),
            sr: omega.view((0, d), (d, d)).into_owned(),
            rs: omega.view((d, 0), (d, d)).into_owned(),
            rr: omega.view((d, d), (d, d)).into_owned(),
        }
    }
}

/// Two leading orders of each block of Ω̃_h as h → 0.
pub fn omega_expansion(a_v: &DMatrix<f64>, sst: &DMatrix<f64>, h: f64) -> OmegaBlocks {
    let av_s = a_v * sst;
    let s_avt = sst * a_v.transpose();
    OmegaBlocks {
        ss: sst * (h.powi(3) / 3.0) + (&av_s + &s_avt) * (h.powi(4) / 8.0),
        sr: sst * (h * h / 2.0) + (&av_s + &s_avt * 2.0) * (h.powi(3) / 6.0),
        rs: sst * (h * h / 2.0) + (&av_s * 2.0 + &s_avt) * (h.powi(3) / 6.0),
        rr: sst * h + (&av_s + &s_avt) * (h * h / 2.0),
    }
}

/// Everything data-independent needed to evaluate residuals and objectives
/// at one (θ, h).
#[derive(Debug, Clone)]
pub struct OuFlow {
    pub h: f64,
    pub exp_ah: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub blocks: OmegaBlocks,
    /// Ω^{S|R} = Ω^SS − Ω^SR (Ω^RR)⁻¹ Ω^RS.
    pub schur: DMatrix<f64>,
    /// Ω^SR (Ω^RR)⁻¹.
    pub gain: DMatrix<f64>,
    pub rr_inv: DMatrix<f64>,
    pub schur_inv: DMatrix<f64>,
    pub logdet_rr: f64,
    pub logdet_schur: f64,
    pub logdet_full: f64,
}

impl OuFlow {
    /// Builds the flow from Ã (2d×2d) and ΣΣᵀ (d×d).
    pub fn new(a_tilde: &DMatrix<f64>, sst: &DMatrix<f64>, h: f64) -> Result<Self> {
        let (exp_ah, omega) = ou_exp_and_covariance(a_tilde, &sigma_tilde_sq(sst), h)?;
        let blocks = OmegaBlocks::split(&omega);
        let (rr_inv, logdet_rr) = spd_inverse_logdet(&blocks.rr).map_err(|_| {
            Error::Numeric("rough covariance block is not positive definite".into())
        })?;
        let gain = &blocks.sr * &rr_inv;
        let schur = symmetrize(&(&blocks.ss - &gain * &blocks.rs));
        let (schur_inv, logdet_schur) = spd_inverse_logdet(&schur)
            .map_err(|_| Error::Numeric("Schur complement is not positive definite".into()))?;
        // Direct factorization when it succeeds; the block identity otherwise.
        let logdet_full = linalg::cholesky_logdet(&omega)
            .map(|(_, l)| l)
            .unwrap_or(logdet_rr + logdet_schur);
        Ok(Self {
            h,
            exp_ah,
            omega,
            blocks,
            schur,
            gain,
            rr_inv,
            schur_inv,
            logdet_rr,
            logdet_schur,
            logdet_full,
        })
    }

    pub fn for_model<M: SecondOrderModel + ?Sized>(
        model: &M,
        theta: &Theta,
        h: f64,
    ) -> Result<Self> {
        let (a_x, a_v) = model.linear_drift(&theta.beta);
        let sst = model.diffusion().sigma_sigma_t(&theta.sigma)?;
        Self::new(&a_tilde(&a_x, &a_v), &sst, h)
    }

    /// Ω̃_h⁻¹ assembled from the rough block and the Schur complement.
    pub fn omega_inv(&self) -> DMatrix<f64> {
        let d = self.gain.nrows();
        let s_g = &self.schur_inv * &self.gain;
        let mut inv = DMatrix::zeros(2 * d, 2 * d);
        inv.view_mut((0, 0), (d, d)).copy_from(&self.schur_inv);
        inv.view_mut((0, d), (d, d)).copy_from(&(-&s_g));
        inv.view_mut((d, 0), (d, d)).copy_from(&(-s_g.transpose()));
        inv.view_mut((d, d), (d, d))
            .copy_from(&(&self.rr_inv + self.gain.transpose() * &s_g));
        symmetrize(&inv)
    }
}

/// Log-determinants of the flow at the rescaled step h/c, raw and multiplied
/// by c. c = 4/3 gives the step 3h/4 and c = 2/3 the step 3h/2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RescaledLogDets {
    pub c: f64,
    pub step: f64,
    pub logdet_full: f64,
    pub logdet_rr: f64,
    pub logdet_schur: f64,
    pub scaled_full: f64,
    pub scaled_rr: f64,
    pub scaled_schur: f64,
}

pub fn omega_rescaled(
    a_tilde: &DMatrix<f64>,
    sst: &DMatrix<f64>,
    h: f64,
    c: f64,
) -> Result<RescaledLogDets> {
    if !(c > 0.0) {
        return Err(Error::Argument(format!(
            "rescaling constant must be positive, got {c}"
        )));
    }
    let step = h / c;
    let flow = OuFlow::new(a_tilde, sst, step)?;
    Ok(RescaledLogDets {
        c,
        step,
        logdet_full: flow.logdet_full,
        logdet_rr: flow.logdet_rr,
        logdet_schur: flow.logdet_schur,
        scaled_full: c * flow.logdet_full,
        scaled_rr: c * flow.logdet_rr,
        scaled_schur: c * flow.logdet_schur,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn kramers_a(eta: f64, a: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0 * a, -eta])
    }

    #[test]
    fn mean_fixed_point_and_zero_step() {
        let a = kramers_a(6.5, 1.0);
        let b = DVector::from_vec(vec![1.3, 0.0]);
        assert_relative_eq!(ou_mean(&a, &b, 0.7, &b).unwrap(), b, epsilon = 1e-15);
        let y = DVector::from_vec(vec![0.2, -0.4]);
        assert_eq!(ou_mean(&a, &b, 0.0, &y).unwrap(), y);
    }

    #[test]
    fn integrated_brownian_blocks_closed_form() {
        let z = DMatrix::zeros(2, 2);
        let sst = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]);
        let h = 0.3;
        let f = OuFlow::new(&a_tilde(&z, &z), &sst, h).unwrap();
        assert_relative_eq!(f.blocks.rr, &sst * h, max_relative = 1e-13);
        assert_relative_eq!(f.blocks.sr, &sst * (h * h / 2.0), max_relative = 1e-13);
        assert_relative_eq!(f.blocks.ss, &sst * (h.powi(3) / 3.0), max_relative = 1e-13);
        assert_relative_eq!(f.schur, &sst * (h.powi(3) / 12.0), max_relative = 1e-12);
    }

    #[test]
    fn zero_noise_gives_zero_covariance() {
        let o = ou_covariance(&kramers_a(6.5, 1.0), &DMatrix::zeros(2, 2), 0.1).unwrap();
        assert!(o.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn logdet_matches_direct_cholesky() {
        let sst = DMatrix::from_element(1, 1, 0.1);
        for h in [0.02, 0.1, 0.5] {
            let f = OuFlow::new(&kramers_a(6.5, 1.0), &sst, h).unwrap();
            let sum = f.logdet_rr + f.logdet_schur;
            assert!((sum - f.logdet_full).abs() < 1e-10, "h={h}");
            assert_eq!(f.blocks.rs, f.blocks.sr.transpose());
        }
    }

    #[test]
    fn omega_inverse_is_inverse() {
        let sst = DMatrix::from_element(1, 1, 0.1);
        let f = OuFlow::new(&kramers_a(6.5, 1.0), &sst, 0.1).unwrap();
        let prod = &f.omega * f.omega_inv();
        assert_relative_eq!(prod, DMatrix::identity(2, 2), epsilon = 1e-9);
    }

    #[test]
    fn rescaled_identity_and_nilpotent_case() {
        let a = kramers_a(6.5, 1.0);
        let sst = DMatrix::from_element(1, 1, 0.1);
        let r = omega_rescaled(&a, &sst, 0.1, 1.0).unwrap();
        let f = OuFlow::new(&a, &sst, 0.1).unwrap();
        assert_eq!(r.scaled_full, f.logdet_full);

        let z = DMatrix::zeros(2, 2);
        let sst = DMatrix::from_diagonal(&DVector::from_vec(vec![0.4, 0.4]));
        let h = 0.1;
        let r = omega_rescaled(&a_tilde(&z, &z), &sst, h, 2.0 / 3.0).unwrap();
        let expected = (2.0 / 3.0) * 2.0 * (1.5 * h * 0.4f64).ln();
        assert!((r.scaled_rr - expected).abs() < 1e-12);
    }

    #[test]
    fn expansion_exact_when_damping_vanishes() {
        let sst = DMatrix::from_element(1, 1, 0.2);
        let e = omega_expansion(&DMatrix::zeros(1, 1), &sst, 0.3);
        assert_eq!(e.rr, &sst * 0.3);
    }
}
