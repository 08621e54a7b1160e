//! Asymptotic covariances of the estimators, confidence intervals, and the
//! closed-form quantities of the Kramers oscillator: invariant density,
//! variance constants and mean waiting time.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::kramers::KramersParams;
use crate::linalg::{pairwise_sum, spd_inverse_logdet, symmetric_pinv, symmetrize};
use crate::model::{DiffusionParam, SecondOrderModel, Theta};
use crate::objectives::ObjectiveKind;
use crate::observe::ObservationSet;
use crate::quadrature::integrate_breaks;

/// Variance inflation of the diffusion estimator relative to the full
/// complete-data estimator. None for objectives without a known constant.
pub fn c_obj(kind: ObjectiveKind) -> Option<f64> {
    match kind {
        ObjectiveKind::CF => Some(1.0),
        ObjectiveKind::CR => Some(2.0),
        ObjectiveKind::PF | ObjectiveKind::PR => Some(9.0 / 4.0),
        _ => None,
    }
}

/// Ergodic average over the lagged states of `obs` of
/// (∂_{β_i}F)ᵀ(ΣΣᵀ)⁻¹(∂_{β_j}F), with ∂_β by central differences.
pub fn c_beta_empirical<M: SecondOrderModel + ?Sized>(
    model: &M,
    theta: &Theta,
    obs: &ObservationSet,
) -> Result<DMatrix<f64>> {
    model.check_theta(theta)?;
    let n = obs.n_frames();
    if n == 0 {
        return Err(Error::Argument("no observed states".into()));
    }
    let d = model.dim();
    let r = model.drift_dim();
    let (sst_inv, _) = spd_inverse_logdet(&model.diffusion().sigma_sigma_t(&theta.sigma)?)?;
    let steps: Vec<f64> = theta
        .beta
        .iter()
        .map(|b| if *b == 0.0 { 1e-6 } else { 1e-6 * b.abs() })
        .collect();

    // terms[(i, j)] holds one value per state.
    let mut terms = vec![Vec::with_capacity(n); r * r];
    let mut grads = vec![vec![0.0; d]; r];
    let (mut fp, mut fm) = (vec![0.0; d], vec![0.0; d]);
    let mut beta = theta.beta.clone();
    for k in 0..n {
        let y = obs.lagged_at(k);
        let (x, v) = y.split_at(d);
        for i in 0..r {
            beta[i] = theta.beta[i] + steps[i];
            model.drift(&beta, x, v, &mut fp);
            beta[i] = theta.beta[i] - steps[i];
            model.drift(&beta, x, v, &mut fm);
            beta[i] = theta.beta[i];
            for c in 0..d {
                grads[i][c] = (fp[c] - fm[c]) / (2.0 * steps[i]);
            }
        }
        for i in 0..r {
            for j in i..r {
                let mut s = 0.0;
                for a in 0..d {
                    for b in 0..d {
                        s += grads[i][a] * sst_inv[(a, b)] * grads[j][b];
                    }
                }
                terms[i * r + j].push(s);
            }
        }
    }
    let mut out = DMatrix::zeros(r, r);
    for i in 0..r {
        for j in i..r {
            let v = pairwise_sum(&terms[i * r + j]) / n as f64;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// tr((∂_{σ_i}ΣΣᵀ)(ΣΣᵀ)⁻¹(∂_{σ_j}ΣΣᵀ)(ΣΣᵀ)⁻¹).
pub fn c_sigma(diffusion: &DiffusionParam, sigma: &[f64]) -> Result<DMatrix<f64>> {
    let (inv, _) = spd_inverse_logdet(&diffusion.sigma_sigma_t(sigma)?)?;
    let s = diffusion.n_params();
    let left: Vec<DMatrix<f64>> = (0..s).map(|j| diffusion.derivative(j) * &inv).collect();
    let mut out = DMatrix::zeros(s, s);
    for i in 0..s {
        for j in i..s {
            let v = (&left[i] * &left[j]).trace();
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticInfo {
    pub kind: ObjectiveKind,
    pub param_names: Vec<String>,
    pub c_beta: DMatrix<f64>,
    pub c_sigma: DMatrix<f64>,
    pub c_obj: f64,
    pub n: usize,
    pub h: f64,
}

impl AsymptoticInfo {
    pub fn new(
        kind: ObjectiveKind,
        param_names: Vec<String>,
        c_beta: DMatrix<f64>,
        c_sigma: DMatrix<f64>,
        n: usize,
        h: f64,
    ) -> Result<Self> {
        let c_obj = c_obj(kind).ok_or_else(|| {
            Error::Argument(format!(
                "no asymptotic variance constant for objective {kind}"
            ))
        })?;
        if param_names.len() != c_beta.nrows() + c_sigma.nrows() {
            return Err(Error::Argument(
                "parameter names do not match the information blocks".into(),
            ));
        }
        if n == 0 || !(h > 0.0) {
            return Err(Error::Argument("design needs N > 0 and h > 0".into()));
        }
        Ok(Self {
            kind,
            param_names,
            c_beta,
            c_sigma,
            c_obj,
            n,
            h,
        })
    }

    /// Information from ergodic averages over the observed states.
    pub fn empirical<M: SecondOrderModel + ?Sized>(
        model: &M,
        theta: &Theta,
        obs: &ObservationSet,
        kind: ObjectiveKind,
    ) -> Result<Self> {
        let cb = c_beta_empirical(model, theta, obs)?;
        let cs = c_sigma(&model.diffusion(), &theta.sigma)?;
        Self::new(kind, model.param_names(), cb, cs, obs.n, obs.h)
    }

    /// Kramers information with the drift block by quadrature against the
    /// invariant density.
    pub fn kramers(p: &KramersParams, kind: ObjectiveKind, n: usize, h: f64) -> Result<Self> {
        let cb = kramers_c_beta_quadrature(p)?;
        let cs = DMatrix::from_element(1, 1, 1.0 / (p.sigma2 * p.sigma2));
        let names = ["eta", "a", "b", "sigma2"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        Self::new(kind, names, cb, cs, n, h)
    }

    /// Joint covariance of θ̂: C_β⁻¹/(Nh) and c_obj·C_σ⁻¹/N on the diagonal
    /// blocks, zero across. The flags mark parameters in the null space of a
    /// singular block.
    pub fn covariance(&self) -> (DMatrix<f64>, Vec<bool>) {
        let r = self.c_beta.nrows();
        let s = self.c_sigma.nrows();
        let mut cov = DMatrix::zeros(r + s, r + s);
        let mut unidentified = vec![false; r + s];
        let nf = self.n as f64;
        let blocks = [
            (&self.c_beta, 0, 1.0 / (nf * self.h)),
            (&self.c_sigma, r, self.c_obj / nf),
        ];
        for (m, off, scale) in blocks {
            if m.nrows() == 0 {
                continue;
            }
            let (pinv, singular) = symmetric_pinv(m);
            let k = m.nrows();
            cov.view_mut((off, off), (k, k)).copy_from(&(pinv * scale));
            if singular {
                for i in null_directions(m) {
                    unidentified[off + i] = true;
                }
            }
        }
        (cov, unidentified)
    }
}

/// Coordinates with a non-negligible component along a null eigenvector.
fn null_directions(m: &DMatrix<f64>) -> Vec<usize> {
    let eig = symmetrize(m).symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut out = Vec::new();
    for (k, lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() <= 1e-12 * top.max(f64::MIN_POSITIVE) {
            for i in 0..m.nrows() {
                if eig.eigenvectors[(i, k)].abs() > 1e-8 && !out.contains(&i) {
                    out.push(i);
                }
            }
        }
    }
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub name: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub std_error: f64,
}

impl Interval {
    pub fn covers(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceIntervals {
    /// Significance α; the intervals have coverage 1 − α.
    pub alpha: f64,
    pub intervals: Vec<Interval>,
    /// Set when an information block was singular; the affected intervals
    /// are infinite.
    pub singular: bool,
}

fn z_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Argument(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(1.0 - alpha / 2.0))
}

/// Wald intervals θ̂_i ± z_{1−α/2}·√V_ii.
pub fn confidence_intervals(
    theta: &Theta,
    info: &AsymptoticInfo,
    alpha: f64,
) -> Result<ConfidenceIntervals> {
    let z = z_quantile(alpha)?;
    let values = theta.to_vec();
    if values.len() != info.param_names.len() {
        return Err(Error::Argument(
            "θ does not match the information matrix".into(),
        ));
    }
    let (cov, unidentified) = info.covariance();
    let singular = unidentified.iter().any(|u| *u);
    if singular {
        log::warn!(
            "singular asymptotic information; unidentified parameters get infinite intervals"
        );
    }
    let intervals = values
        .iter()
        .enumerate()
        .map(|(i, &est)| {
            let se = if unidentified[i] {
                f64::INFINITY
            } else {
                cov[(i, i)].max(0.0).sqrt()
            };
            let half = if se.is_infinite() {
                f64::INFINITY
            } else {
                z * se
            };
            Interval {
                name: info.param_names[i].clone(),
                estimate: est,
                lower: est - half,
                upper: est + half,
                std_error: se,
            }
        })
        .collect();
    Ok(ConfidenceIntervals {
        alpha,
        intervals,
        singular,
    })
}

/// Positive Kramers parameters, required by the closed forms.
fn check_positive(p: &KramersParams) -> Result<()> {
    p.validate()?;
    if !(p.eta > 0.0) {
        return Err(Error::Domain("eta must be positive".into()));
    }
    Ok(())
}

/// Stationary law of the Kramers oscillator: π(x) ∝ exp(−2ηU(x)/σ²) times
/// the Gaussian velocity marginal N(0, σ²/(2η)).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantDensity {
    pub params: KramersParams,
    /// 2η/σ².
    pub scale: f64,
    /// ∫exp(−scale·(U(x) − U_min))dx.
    pub normalizer: f64,
    /// Half-width of the integration range; the density there is below
    /// e^{−60} of its peak.
    pub support: f64,
    pub velocity_variance: f64,
}

impl InvariantDensity {
    pub fn new(p: &KramersParams) -> Result<Self> {
        check_positive(p)?;
        let scale = 2.0 * p.eta / p.sigma2;
        let w = p.well();
        let u_min = p.potential(w);
        let mut support = 2.0 * w;
        while scale * (p.potential(support) - u_min) < 60.0 {
            support *= 1.5;
        }
        let mut out = Self {
            params: *p,
            scale,
            normalizer: 1.0,
            support,
            velocity_variance: p.sigma2 / (2.0 * p.eta),
        };
        out.normalizer = 2.0 * out.half_line(|_| 1.0)?;
        Ok(out)
    }

    fn unnormalized(&self, x: f64) -> f64 {
        let w = self.params.well();
        (-self.scale * (self.params.potential(x) - self.params.potential(w))).exp()
    }

    fn half_line<G: Fn(f64) -> f64>(&self, g: G) -> Result<f64> {
        let breaks = [0.0, self.params.well(), self.support];
        Ok(integrate_breaks(|x| g(x) * self.unnormalized(x), &breaks, 0.0, 1e-13)?.value)
    }

    pub fn position(&self, x: f64) -> f64 {
        self.unnormalized(x) / self.normalizer
    }

    pub fn velocity(&self, v: f64) -> f64 {
        let s2 = self.velocity_variance;
        (-0.5 * v * v / s2).exp() / (2.0 * std::f64::consts::PI * s2).sqrt()
    }

    /// C·exp(−2ηU(x)/σ²)·exp(−ηv²/σ²), evaluated directly rather than as a
    /// product of the marginals.
    pub fn joint(&self, x: f64, v: f64) -> f64 {
        let p = &self.params;
        let zv = (std::f64::consts::PI * p.sigma2 / p.eta).sqrt();
        let w = p.well();
        let expo = -self.scale * (p.potential(x) - p.potential(w)) - p.eta * v * v / p.sigma2;
        expo.exp() / (self.normalizer * zv)
    }

    /// ∫x^k π(x)dx; zero for odd k by symmetry.
    pub fn position_moment(&self, k: u32) -> Result<f64> {
        if k % 2 == 1 {
            return Ok(0.0);
        }
        Ok(2.0 * self.half_line(|x| x.powi(k as i32))? / self.normalizer)
    }

    pub fn grid(&self, x: &[f64], v: &[f64]) -> DensityGrid {
        let mut joint = Vec::with_capacity(x.len() * v.len());
        for &xi in x {
            for &vj in v {
                joint.push(self.joint(xi, vj));
            }
        }
        DensityGrid {
            x: x.to_vec(),
            v: v.to_vec(),
            position: x.iter().map(|&t| self.position(t)).collect(),
            velocity: v.iter().map(|&t| self.velocity(t)).collect(),
            joint,
        }
    }
}

pub fn kramers_invariant_density(p: &KramersParams) -> Result<InvariantDensity> {
    InvariantDensity::new(p)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityGrid {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    /// Row-major over (x, v).
    pub joint: Vec<f64>,
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KramersMoments {
    pub m2: f64,
    pub m4: f64,
    pub m6: f64,
}

pub fn kramers_moments(p: &KramersParams) -> Result<KramersMoments> {
    let d = InvariantDensity::new(p)?;
    Ok(KramersMoments {
        m2: d.position_moment(2)?,
        m4: d.position_moment(4)?,
        m6: d.position_moment(6)?,
    })
}

/// Drift information of the Kramers oscillator under its invariant law.
/// With ∂F = (−v, x, −x³) and independent x and v:
/// [[1/(2η), 0, 0], [0, m2, −m4], [0, −m4, m6]]/σ² in the lower block.
pub fn kramers_c_beta_quadrature(p: &KramersParams) -> Result<DMatrix<f64>> {
    let m = kramers_moments(p)?;
    let s2 = p.sigma2;
    Ok(DMatrix::from_row_slice(
        3,
        3,
        &[
            1.0 / (2.0 * p.eta),
            0.0,
            0.0,
            0.0,
            m.m2 / s2,
            -m.m4 / s2,
            0.0,
            -m.m4 / s2,
            m.m6 / s2,
        ],
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauReport {
    pub tau: f64,
    /// √2·π/(√(a + η²/4) − η/2).
    pub prefactor: f64,
    /// a²η/(2bσ²).
    pub exponent: f64,
    /// η/√a; the approximation wants this large.
    pub damping_ratio: f64,
    /// (σ²/(2η))/(a²/(4b)), velocity variance over barrier height; wants
    /// this small.
    pub noise_ratio: f64,
}

/// Kramers' mean waiting time between the wells. Validity diagnostics are
/// reported, not enforced.
pub fn kramers_tau(p: &KramersParams) -> Result<TauReport> {
    check_positive(p)?;
    Ok(tau_unchecked(p))
}

fn tau_unchecked(p: &KramersParams) -> TauReport {
    let (eta, a, b, s2) = (p.eta, p.a, p.b, p.sigma2);
    let prefactor = std::f64::consts::SQRT_2 * std::f64::consts::PI
        / ((a + eta * eta / 4.0).sqrt() - eta / 2.0);
    let exponent = a * a * eta / (2.0 * b * s2);
    TauReport {
        tau: prefactor * exponent.exp(),
        prefactor,
        exponent,
        damping_ratio: eta / a.sqrt(),
        noise_ratio: (s2 / (2.0 * eta)) / (a * a / (4.0 * b)),
    }
}

/// Central-difference gradient of τ in (η, a, b, σ²) with steps
/// rel_step·|θ_i|.
pub fn tau_gradient(p: &KramersParams, rel_step: f64) -> Result<[f64; 4]> {
    check_positive(p)?;
    let base = p.to_array();
    let mut g = [0.0; 4];
    for i in 0..4 {
        let step = rel_step * base[i].abs();
        let (mut up, mut dn) = (base, base);
        up[i] += step;
        dn[i] -= step;
        let fu = tau_unchecked(&KramersParams::from_slice(&up)?).tau;
        let fd = tau_unchecked(&KramersParams::from_slice(&dn)?).tau;
        g[i] = (fu - fd) / (2.0 * step);
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauInterval {
    pub tau: f64,
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
    pub gradient: [f64; 4],
}

/// Delta-method interval τ̂ ± z·√(∇τᵀV∇τ) for a 4×4 covariance V of
/// (η̂, â, b̂, σ̂²).
pub fn tau_ci_delta(p: &KramersParams, cov: &DMatrix<f64>, alpha: f64) -> Result<TauInterval> {
    if cov.shape() != (4, 4) {
        return Err(Error::Argument("covariance must be 4×4".into()));
    }
    let z = z_quantile(alpha)?;
    let tau = kramers_tau(p)?.tau;
    let g = tau_gradient(p, 1e-5)?;
    let mut var = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            var += g[i] * cov[(i, j)] * g[j];
        }
    }
    if !var.is_finite() {
        return Err(Error::Numeric("delta-method variance is not finite".into()));
    }
    let se = var.max(0.0).sqrt();
    Ok(TauInterval {
        tau,
        std_error: se,
        lower: tau - z * se,
        upper: tau + z * se,
        gradient: g,
    })
}
