//! Residuals of the splitting scheme and the objective functions
//! (negative log pseudo-likelihoods up to constants and a factor 2).

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pairwise_sum, quad_form, spd_inverse_logdet, to_row_major};
use crate::model::{a_tilde, SecondOrderModel, Theta};
use crate::observe::{ObservationKind, ObservationSet};
use crate::ou::{omega_rescaled, OuFlow};

const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObjectiveKind {
    /// Full pseudo-likelihood, complete observations.
    #[serde(rename = "CF")]
    CF,
    /// Rough (velocity) part, complete observations.
    #[serde(rename = "CR")]
    CR,
    /// Smooth given rough, complete observations. Cannot identify the drift.
    #[serde(rename = "CSR")]
    CSR,
    /// Full pseudo-likelihood with finite-difference velocities.
    #[serde(rename = "PF")]
    PF,
    /// Rough part with finite-difference velocities.
    #[serde(rename = "PR")]
    PR,
    /// Smooth given rough with finite-difference velocities. Cannot identify the drift.
    #[serde(rename = "PSR")]
    PSR,
    /// Euler–Maruyama contrast for partial observations (four-point form).
    #[serde(rename = "EM-PR")]
    EmPr,
    /// Euler–Maruyama rough contrast for complete observations.
    #[serde(rename = "EM-CR")]
    EmCr,
    /// Local Gaussian approximation, complete observations.
    #[serde(rename = "LG-CF")]
    LgCf,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 9] = [
        ObjectiveKind::CF,
        ObjectiveKind::CR,
        ObjectiveKind::CSR,
        ObjectiveKind::PF,
        ObjectiveKind::PR,
        ObjectiveKind::PSR,
        ObjectiveKind::EmPr,
        ObjectiveKind::EmCr,
        ObjectiveKind::LgCf,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ObjectiveKind::CF => "CF",
            ObjectiveKind::CR => "CR",
            ObjectiveKind::CSR => "CSR",
            ObjectiveKind::PF => "PF",
            ObjectiveKind::PR => "PR",
            ObjectiveKind::PSR => "PSR",
            ObjectiveKind::EmPr => "EM-PR",
            ObjectiveKind::EmCr => "EM-CR",
            ObjectiveKind::LgCf => "LG-CF",
        }
    }

    pub fn observation(self) -> ObservationKind {
        match self {
            ObjectiveKind::CF
            | ObjectiveKind::CR
            | ObjectiveKind::CSR
            | ObjectiveKind::EmCr
            | ObjectiveKind::LgCf => ObservationKind::Complete,
            _ => ObservationKind::Partial,
        }
    }

    /// False for the smooth-given-rough objectives, whose drift minimizer is
    /// not identified.
    pub fn identifies_drift(self) -> bool {
        !matches!(self, ObjectiveKind::CSR | ObjectiveKind::PSR)
    }
}

impl std::fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for ObjectiveKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | '|' | ' '))
            .collect::<String>()
            .to_ascii_uppercase();
        Ok(match norm.as_str() {
            "CF" => ObjectiveKind::CF,
            "CR" => ObjectiveKind::CR,
            "CSR" => ObjectiveKind::CSR,
            "PF" => ObjectiveKind::PF,
            "PR" => ObjectiveKind::PR,
            "PSR" => ObjectiveKind::PSR,
            "EMPR" => ObjectiveKind::EmPr,
            "EMCR" => ObjectiveKind::EmCr,
            "LGCF" => ObjectiveKind::LgCf,
            _ => return Err(Error::Argument(format!("unknown objective kind '{s}'"))),
        })
    }
}

/// Residuals of one frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualFrame {
    pub z_s: Vec<f64>,
    pub z_r: Vec<f64>,
    pub z_sr: Vec<f64>,
    /// log |det D_v f_{h/2}| at the frame's current state.
    pub logdet_jacobian_term: f64,
}

/// Data-independent pieces of the splitting scheme at one (θ, h).
pub(crate) struct SplitContext<'a, M: ?Sized> {
    model: &'a M,
    beta: &'a [f64],
    d: usize,
    h: f64,
    exp_ah: Vec<f64>,
    gain: Vec<f64>,
    rr_inv: Vec<f64>,
    schur_inv: Vec<f64>,
    omega_inv: Vec<f64>,
    pub flow: OuFlow,
}

pub(crate) struct Scratch {
    y: Vec<f64>,
    b: Vec<f64>,
    cent: Vec<f64>,
    tmp: Vec<f64>,
    z: Vec<f64>,
    zsr: Vec<f64>,
}

impl Scratch {
    fn new(d: usize) -> Self {
        Self {
            y: vec![0.0; 2 * d],
            b: vec![0.0; 2 * d],
            cent: vec![0.0; 2 * d],
            tmp: vec![0.0; d],
            z: vec![0.0; 2 * d],
            zsr: vec![0.0; d],
        }
    }
}

impl<'a, M: SecondOrderModel + ?Sized> SplitContext<'a, M> {
    pub(crate) fn new(model: &'a M, theta: &'a Theta, h: f64) -> Result<Self> {
        model.check_theta(theta)?;
        let flow = OuFlow::for_model(model, theta, h)?;
        Ok(Self {
            model,
            beta: &theta.beta,
            d: model.dim(),
            h,
            exp_ah: to_row_major(&flow.exp_ah),
            gain: to_row_major(&flow.gain),
            rr_inv: to_row_major(&flow.rr_inv),
            schur_inv: to_row_major(&flow.schur_inv),
            omega_inv: to_row_major(&flow.omega_inv()),
            flow,
        })
    }

    /// Fills s.z = (z_s, z_r) and s.zsr; returns log|det D_v f_{h/2}(cur)|.
    #[inline]
    fn frame(&self, lag: &[f64], cur: &[f64], s: &mut Scratch) -> f64 {
        let d = self.d;
        let n = 2 * d;
        let half = 0.5 * self.h;
        let m = self.model;

        // μ̃_h(f̃_{h/2}(lag))
        s.y.copy_from_slice(lag);
        m.nonlinear_flow(self.beta, half, &lag[..d], &lag[d..], &mut s.tmp);
        s.y[d..].copy_from_slice(&s.tmp);
        m.anchor(self.beta, &lag[..d], &mut s.b[..d]);
        for i in 0..n {
            s.cent[i] = s.y[i] - s.b[i];
        }
        // z_s = x_k − μ^S
        for (i, c) in cur[..d].iter().enumerate() {
            let row = &self.exp_ah[i * n..(i + 1) * n];
            let mu: f64 = row.iter().zip(&s.cent).map(|(a, c)| a * c).sum::<f64>() + s.b[i];
            s.z[i] = c - mu;
        }
        // z_r = f*⁻¹_{h/2}(y_k) − μ^R
        m.nonlinear_flow_rough_inverse(self.beta, half, &cur[..d], &cur[d..], &mut s.tmp);
        for i in d..n {
            let row = &self.exp_ah[i * n..(i + 1) * n];
            let mu: f64 = row.iter().zip(&s.cent).map(|(a, c)| a * c).sum::<f64>() + s.b[i];
            s.z[i] = s.tmp[i - d] - mu;
        }
        for i in 0..d {
            let g = &self.gain[i * d..(i + 1) * d];
            s.zsr[i] = s.z[i] - g.iter().zip(&s.z[d..]).map(|(a, b)| a * b).sum::<f64>();
        }
        if m.flow_jacobian_is_unit() {
            0.0
        } else {
            m.log_abs_det_dv_flow(self.beta, half, &cur[..d], &cur[d..])
        }
    }
}

/// Residuals for every frame of `obs` at θ.
pub fn residuals<M: SecondOrderModel + ?Sized>(
    model: &M,
    theta: &Theta,
    obs: &ObservationSet,
) -> Result<Vec<ResidualFrame>> {
    check_obs(model, obs)?;
    let ctx = SplitContext::new(model, theta, obs.h)?;
    let d = ctx.d;
    let mut s = Scratch::new(d);
    let mut out = Vec::with_capacity(obs.n_frames());
    for j in 0..obs.n_frames() {
        let jac = ctx.frame(obs.lagged_at(j), obs.current_at(j), &mut s);
        if !jac.is_finite() || s.z.iter().any(|z| !z.is_finite()) {
            return Err(Error::Numeric(format!("non-finite residual in frame {j}")));
        }
        out.push(ResidualFrame {
            z_s: s.z[..d].to_vec(),
            z_r: s.z[d..].to_vec(),
            z_sr: s.zsr.clone(),
            logdet_jacobian_term: jac,
        });
    }
    Ok(out)
}

fn check_obs<M: SecondOrderModel + ?Sized>(model: &M, obs: &ObservationSet) -> Result<()> {
    if obs.dim != model.dim() {
        return Err(Error::Argument(
            "observation dimension does not match the model".into(),
        ));
    }
    if obs.n_frames() == 0 {
        return Err(Error::Argument("no observation frames".into()));
    }
    Ok(())
}

/// Sums `term(j)` over frames in fixed-size chunks, then combines the chunk
/// sums pairwise. The grouping depends only on the frame count.
fn chunked_sum<F>(n_frames: usize, d: usize, term: F) -> f64
where
    F: Fn(usize, &mut Scratch) -> f64 + Sync,
{
    let n_chunks = n_frames.div_ceil(CHUNK);
    let sums: Vec<f64> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut s = Scratch::new(d);
            let end = ((c + 1) * CHUNK).min(n_frames);
            let mut acc = 0.0;
            for j in c * CHUNK..end {
                acc += term(j, &mut s);
            }
            acc
        })
        .collect();
    pairwise_sum(&sums)
}

/// Value of the objective `kind` at θ on `obs`.
pub fn objective<M: SecondOrderModel + ?Sized>(
    model: &M,
    theta: &Theta,
    obs: &ObservationSet,
    kind: ObjectiveKind,
) -> Result<f64> {
    if obs.kind != kind.observation() {
        return Err(Error::Argument(format!(
            "objective {kind} needs {:?} observations",
            kind.observation()
        )));
    }
    let value = match kind {
        ObjectiveKind::EmPr => objective_em_partial(model, theta, obs)?,
        ObjectiveKind::EmCr => objective_em_complete(model, theta, obs)?,
        ObjectiveKind::LgCf => objective_lg_complete(model, theta, obs)?,
        _ => split_objective(model, theta, obs, kind)?,
    };
    if !value.is_finite() {
        return Err(Error::Numeric(format!(
            "objective {kind} is not finite at this θ"
        )));
    }
    Ok(value)
}

fn split_objective<M: SecondOrderModel + ?Sized>(
    model: &M,
    theta: &Theta,
    obs: &ObservationSet,
    kind: ObjectiveKind,
) -> Result<f64> {
    check_obs(model, obs)?;
    let ctx = SplitContext::new(model, theta, obs.h)?;
    let d = ctx.d;
    let frames = obs.n_frames();
    let flow = &ctx.flow;
    let n_minus_2 = obs.n as f64 - 2.0;

    let (per_frame_logdet, constant, jac_factor) = match kind {
        ObjectiveKind::CF => (flow.logdet_full, 0.0, 2.0),
        ObjectiveKind::CR => (flow.logdet_rr, 0.0, 2.0),
        ObjectiveKind::CSR => (flow.logdet_schur, 0.0, 0.0),
        ObjectiveKind::PF => {
            let (a_x, a_v) = model.linear_drift(&theta.beta);
            let sst = model.diffusion().sigma_sigma_t(&theta.sigma)?;
            let r = omega_rescaled(&a_tilde(&a_x, &a_v), &sst, obs.h, 4.0 / 3.0)?;
            (0.0, n_minus_2 * r.scaled_full, 6.0)
        }
        ObjectiveKind::PR => {
            let (a_x, a_v) = model.linear_drift(&theta.beta);
            let sst = model.diffusion().sigma_sigma_t(&theta.sigma)?;
            let r = omega_rescaled(&a_tilde(&a_x, &a_v), &sst, obs.h, 2.0 / 3.0)?;
            (0.0, n_minus_2 * r.scaled_rr, 2.0)
        }
        ObjectiveKind::PSR => (0.0, 2.0 * n_minus_2 * flow.logdet_schur, 4.0),
        _ => unreachable!("baseline objectives are handled separately"),
    };

    let sum = chunked_sum(frames, d, |j, s| {
        let jac = ctx.frame(obs.lagged_at(j), obs.current_at(j), s);
        let quad = match kind {
            ObjectiveKind::CF | ObjectiveKind::PF => quad_form(&ctx.omega_inv, &s.z),
            ObjectiveKind::CR | ObjectiveKind::PR => quad_form(&ctx.rr_inv, &s.z[d..]),
            _ => quad_form(&ctx.schur_inv, &s.zsr),
        };
        per_frame_logdet + quad + jac_factor * jac
    });
    Ok(constant + sum)
}

/// Euler–Maruyama contrast for partial observations:
/// (2/3)(N−4) log det ΣΣᵀ + (1/h) Σ_{k=2}^{N−2} rₖᵀ (ΣΣᵀ)⁻¹ rₖ with
/// rₖ = Δx_{k+1} − Δx_k − h F(x_{k−1}, Δx_{k−1}) and Δx_k = (x_k − x_{k−1})/h.
pub fn objective_em_partial<M: SecondOrderModel + ?Sized>(
    model: &M,
    theta: &Theta,
    obs: &ObservationSet,
) -> Result<f64> {
    model.check_theta(theta)?;
    let d = model.dim();
    let n = obs.n;
    if n < 5 {
        return Err(Error::Argument(
            "the four-point contrast needs N ≥ 5".into(),
        ));
    }
    let sst = model.diffusion().sigma_sigma_t(&theta.sigma)?;
    let (inv, logdet) = spd_inverse_logdet(&sst)?;
    let inv = to_row_major(&inv);
    let h = obs.h;
    let x = &obs.x;
    let dx = |k: usize, i: usize| (x[k * d + i] - x[(k - 1) * d + i]) / h;
    let count = n - 3;
    let sum = chunked_sum(count, d, |j, s| {
        let k = j + 2;
        for i in 0..d {
            s.cent[i] = x[(k - 1) * d + i];
            s.cent[d + i] = dx(k - 1, i);
        }
        model.drift(&theta.beta, &s.cent[..d], &s.cent[d..2 * d], &mut s.tmp);
        for i in 0..d {
            s.z[i] = dx(k + 1, i) - dx(k, i) - h * s.tmp[i];
        }
        quad_form(&inv, &s.z[..d])
    });
    Ok(2.0 / 3.0 * (n as f64 - 4.0) * logdet + sum / h)
}

/// Euler–Maruyama rough contrast for complete observations:
/// Σ_{k=1}^N (log det ΣΣᵀ + (1/h) rₖᵀ (ΣΣᵀ)⁻¹ rₖ), rₖ = v_k − v_{k−1} − h F(y_{k−1}).
pub fn objective_em_complete<M: SecondOrderModel + ?Sized>(
    model: &M,
    theta: &Theta,
    obs: &ObservationSet,
) -> Result<f64> {
    model.check_theta(theta)?;
    check_obs(model, obs)?;
    let d = model.dim();
    let sst = model.diffusion().sigma_sigma_t(&theta.sigma)?;
    let (inv, logdet) = spd_inverse_logdet(&sst)?;
    let inv = to_row_major(&inv);
    let h = obs.h;
    let sum = chunked_sum(obs.n_frames(), d, |j, s| {
        let lag = obs.lagged_at(j);
        let cur = obs.current_at(j);
        model.drift(&theta.beta, &lag[..d], &lag[d..], &mut s.tmp);
        for i in 0..d {
            s.z[i] = cur[d + i] - lag[d + i] - h * s.tmp[i];
        }
        logdet + quad_form(&inv, &s.z[..d]) / h
    });
    Ok(sum)
}

/// Local Gaussian transition: mean (x + h v + h²/2 F, v + h F) and covariance
/// [[h³/3, h²/2], [h²/2, h]] ⊗ ΣΣᵀ.
pub fn lg_transition<M: SecondOrderModel + ?Sized>(
    model: &M,
    theta: &Theta,
    y: &[f64],
    h: f64,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    model.check_theta(theta)?;
    let d = model.dim();
    if y.len() != 2 * d {
        return Err(Error::Argument("state has the wrong length".into()));
    }
    let sst = model.diffusion().sigma_sigma_t(&theta.sigma)?;
    let mut f = vec![0.0; d];
    model.drift(&theta.beta, &y[..d], &y[d..], &mut f);
    let mut mean = vec![0.0; 2 * d];
    for i in 0..d {
        mean[i] = y[i] + h * y[d + i] + 0.5 * h * h * f[i];
        mean[d + i] = y[d + i] + h * f[i];
    }
    Ok((mean, lg_covariance(&sst, h)))
}

fn lg_covariance(sst: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    let d = sst.nrows();
    let mut c = DMatrix::zeros(2 * d, 2 * d);
    c.view_mut((0, 0), (d, d))
        .copy_from(&(sst * (h.powi(3) / 3.0)));
    c.view_mut((0, d), (d, d)).copy_from(&(sst * (h * h / 2.0)));
    c.view_mut((d, 0), (d, d)).copy_from(&(sst * (h * h / 2.0)));
    c.view_mut((d, d), (d, d)).copy_from(&(sst * h));
    c
}

/// Σ_{k=1}^N (log det C + rₖᵀ C⁻¹ rₖ) for the local Gaussian transition.
pub fn objective_lg_complete<M: SecondOrderModel + ?Sized>(
    model: &M,
    theta: &Theta,
    obs: &ObservationSet,
) -> Result<f64> {
    model.check_theta(theta)?;
    check_obs(model, obs)?;
    let d = model.dim();
    let h = obs.h;
    let sst = model.diffusion().sigma_sigma_t(&theta.sigma)?;
    let (inv, logdet) = spd_inverse_logdet(&lg_covariance(&sst, h))?;
    let inv = to_row_major(&inv);
    let sum = chunked_sum(obs.n_frames(), d, |j, s| {
        let lag = obs.lagged_at(j);
        let cur = obs.current_at(j);
        model.drift(&theta.beta, &lag[..d], &lag[d..], &mut s.tmp);
        for i in 0..d {
            s.z[i] = cur[i] - (lag[i] + h * lag[d + i] + 0.5 * h * h * s.tmp[i]);
            s.z[d + i] = cur[d + i] - (lag[d + i] + h * s.tmp[i]);
        }
        logdet + quad_form(&inv, &s.z)
    });
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kramers::{kramers_model, KramersParams};
    use crate::observe::{build_observations, DifferenceScheme};
    use crate::simulate::{simulate_em_subsampled, simulate_strang, SimKey, Trajectory};

    fn theta0() -> Theta {
        KramersParams::new(6.5, 1.0, 0.6, 0.1).theta()
    }

    fn em_path(n: usize, seed: u64) -> Trajectory {
        let m = kramers_model();
        let th = theta0();
        let y0 = m.default_initial_state(&th.beta);
        simulate_em_subsampled(&m, &th, &y0, 1e-3, n, 100, SimKey::new(seed)).unwrap()
    }

    #[test]
    fn kind_tags_roundtrip() {
        for k in ObjectiveKind::ALL {
            assert_eq!(k.tag().parse::<ObjectiveKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.tag()));
        }
        assert_eq!("cs|r".parse::<ObjectiveKind>().unwrap(), ObjectiveKind::CSR);
        assert!("XX".parse::<ObjectiveKind>().is_err());
    }

    #[test]
    fn noise_free_strang_path_has_zero_residuals() {
        let m = kramers_model();
        let th = theta0();
        let mut quiet = th.clone();
        quiet.sigma = vec![0.0];
        let tr = simulate_strang(&m, &quiet, &[0.3, 0.5], 0.1, 200, SimKey::new(1)).unwrap();
        let obs =
            build_observations(&tr, ObservationKind::Complete, DifferenceScheme::Forward).unwrap();
        let res = residuals(&m, &th, &obs).unwrap();
        for r in res {
            assert!(r.z_s[0].abs() < 1e-13 && r.z_r[0].abs() < 1e-13);
            assert_eq!(r.logdet_jacobian_term, 0.0);
        }
    }

    #[test]
    fn kind_must_match_observations() {
        let tr = em_path(50, 1);
        let obs =
            build_observations(&tr, ObservationKind::Complete, DifferenceScheme::Forward).unwrap();
        assert!(objective(&kramers_model(), &theta0(), &obs, ObjectiveKind::PR).is_err());
    }

    #[test]
    fn invalid_theta_is_domain_error() {
        let tr = em_path(50, 1);
        let obs =
            build_observations(&tr, ObservationKind::Complete, DifferenceScheme::Forward).unwrap();
        let mut th = theta0();
        th.beta[1] = -1.0;
        assert!(matches!(
            objective(&kramers_model(), &th, &obs, ObjectiveKind::CF),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn em_partial_reduces_to_log_term_on_linear_path() {
        let h = 0.1;
        let n = 30;
        let tr =
            Trajectory::from_positions((0..=n).map(|k| 2.0 * k as f64 * h).collect(), h).unwrap();
        let obs =
            build_observations(&tr, ObservationKind::Partial, DifferenceScheme::Forward).unwrap();
        let th = Theta::new(vec![0.0, 1e-300, 1e-300], vec![0.7]);
        let v = objective_em_partial(&kramers_model(), &th, &obs).unwrap();
        let expected = 2.0 / 3.0 * (n as f64 - 4.0) * 0.7f64.ln();
        assert!((v - expected).abs() < 1e-12, "{v} vs {expected}");
    }

    #[test]
    fn lg_covariance_determinant() {
        let th = theta0();
        for h in [0.1, 0.01] {
            let (mean, cov) = lg_transition(&kramers_model(), &th, &[0.5, 0.2], h).unwrap();
            let expected = h.powi(4) * 0.01 / 12.0;
            assert!((cov.determinant() - expected).abs() < 1e-12 * expected.max(1e-30) + 1e-300);
            assert!((mean[0] - 0.5).abs() < 0.05);
        }
        let (mean, cov) = lg_transition(&kramers_model(), &th, &[0.5, 0.2], 1e-9).unwrap();
        assert!(cov.norm() < 1e-9);
        assert!((mean[0] - 0.5).abs() < 1e-8 && (mean[1] - 0.2).abs() < 1e-8);
    }

    #[test]
    fn objective_is_bit_stable_across_thread_counts() {
        let tr = em_path(3000, 2);
        let obs =
            build_observations(&tr, ObservationKind::Partial, DifferenceScheme::Forward).unwrap();
        let m = kramers_model();
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = one.install(|| objective(&m, &theta0(), &obs, ObjectiveKind::PF).unwrap());
        let b = four.install(|| objective(&m, &theta0(), &obs, ObjectiveKind::PF).unwrap());
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
