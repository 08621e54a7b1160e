//! Second-order SDE models dX = V dt, dV = F(X, V; β) dt + Σ dW and the split
//! F(x, v) = A_x (x − b) + A_v v + N(x, v) around a fixed point.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Parameter vector θ = (β, σ), natural scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub beta: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl Theta {
    pub fn new(beta: Vec<f64>, sigma: Vec<f64>) -> Self {
        Self { beta, sigma }
    }

    pub fn len(&self) -> usize {
        self.beta.len() + self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.beta.clone();
        v.extend_from_slice(&self.sigma);
        v
    }

    pub fn from_slice(r: usize, values: &[f64]) -> Self {
        Self {
            beta: values[..r].to_vec(),
            sigma: values[r..].to_vec(),
        }
    }
}

/// Coordinate-wise reparametrization used by the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Identity,
    Log,
}

impl Transform {
    pub fn forward(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Log => x.ln(),
        }
    }

    pub fn inverse(self, u: f64) -> f64 {
        match self {
            Transform::Identity => u,
            Transform::Log => u.exp(),
        }
    }
}

/// How the diffusion parameters σ map to ΣΣᵀ. Either parametrization is
/// linear in ΣΣᵀ, so the derivatives of ΣΣᵀ are constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DiffusionParam {
    /// σ = diagonal of ΣΣᵀ, Σ = diag(√σ).
    DiagonalVariance { dim: usize },
    /// σ = vech(ΣΣᵀ) (lower triangle, column-major), Σ its Cholesky factor.
    Covariance { dim: usize },
}

impl DiffusionParam {
    pub fn dim(&self) -> usize {
        match *self {
            DiffusionParam::DiagonalVariance { dim } | DiffusionParam::Covariance { dim } => dim,
        }
    }

    pub fn n_params(&self) -> usize {
        let d = self.dim();
        match self {
            DiffusionParam::DiagonalVariance { .. } => d,
            DiffusionParam::Covariance { .. } => d * (d + 1) / 2,
        }
    }

    /// (row, col) of each parameter within ΣΣᵀ.
    pub fn positions(&self) -> Vec<(usize, usize)> {
        let d = self.dim();
        match self {
            DiffusionParam::DiagonalVariance { .. } => (0..d).map(|i| (i, i)).collect(),
            DiffusionParam::Covariance { .. } => {
                let mut out = Vec::with_capacity(self.n_params());
                for j in 0..d {
                    for i in j..d {
                        out.push((i, j));
                    }
                }
                out
            }
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        let d = self.dim();
        match self {
            DiffusionParam::DiagonalVariance { .. } if d == 1 => vec!["sigma2".into()],
            _ => self
                .positions()
                .into_iter()
                .map(|(i, j)| format!("sigma2_{}{}", i + 1, j + 1))
                .collect(),
        }
    }

    /// ΣΣᵀ without any definiteness check.
    pub fn sigma_sigma_t_unchecked(&self, params: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        for (p, (i, j)) in params.iter().zip(self.positions()) {
            m[(i, j)] = *p;
            m[(j, i)] = *p;
        }
        m
    }

    /// ΣΣᵀ, required to be symmetric positive definite.
    pub fn sigma_sigma_t(&self, params: &[f64]) -> Result<DMatrix<f64>> {
        self.check_len(params)?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Domain("non-finite diffusion parameter".into()));
        }
        let m = self.sigma_sigma_t_unchecked(params);
        if nalgebra::Cholesky::new(m.clone()).is_none() {
            return Err(Error::Domain(
                "diffusion parameters do not give a positive definite ΣΣᵀ".into(),
            ));
        }
        Ok(m)
    }

    /// A square root Σ of ΣΣᵀ. Positive semidefinite values are accepted so
    /// that noise-free paths can be generated.
    pub fn sigma(&self, params: &[f64]) -> Result<DMatrix<f64>> {
        self.check_len(params)?;
        match self {
            DiffusionParam::DiagonalVariance { .. } => {
                if params.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
                    return Err(Error::Domain(
                        "diffusion variances must be nonnegative".into(),
                    ));
                }
                Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                    params.len(),
                    params.iter().map(|p| p.sqrt()),
                )))
            }
            DiffusionParam::Covariance { .. } => {
                linalg::psd_factor(&self.sigma_sigma_t_unchecked(params))
                    .map_err(|_| Error::Domain("ΣΣᵀ is not positive semidefinite".into()))
            }
        }
    }

    /// ∂ΣΣᵀ/∂σ_j.
    pub fn derivative(&self, j: usize) -> DMatrix<f64> {
        let d = self.dim();
        let (r, c) = self.positions()[j];
        let mut m = DMatrix::zeros(d, d);
        m[(r, c)] = 1.0;
        m[(c, r)] = 1.0;
        m
    }

    /// Map σ to unconstrained coordinates: log variances for the diagonal
    /// case, log-Cholesky for the full covariance.
    pub fn to_unconstrained(&self, params: &[f64]) -> Result<Vec<f64>> {
        match self {
            DiffusionParam::DiagonalVariance { .. } => {
                if params.iter().any(|p| !(*p > 0.0)) {
                    return Err(Error::Domain("diffusion variances must be positive".into()));
                }
                Ok(params.iter().map(|p| p.ln()).collect())
            }
            DiffusionParam::Covariance { .. } => {
                let l = nalgebra::Cholesky::new(self.sigma_sigma_t(params)?)
                    .expect("checked positive definite")
                    .l();
                Ok(self
                    .positions()
                    .into_iter()
                    .map(|(i, j)| if i == j { l[(i, i)].ln() } else { l[(i, j)] })
                    .collect())
            }
        }
    }

    pub fn from_unconstrained(&self, u: &[f64]) -> Vec<f64> {
        match self {
            DiffusionParam::DiagonalVariance { .. } => u.iter().map(|x| x.exp()).collect(),
            DiffusionParam::Covariance { dim } => {
                let mut l = DMatrix::zeros(*dim, *dim);
                for (x, (i, j)) in u.iter().zip(self.positions()) {
                    l[(i, j)] = if i == j { x.exp() } else { *x };
                }
                let s = &l * l.transpose();
                self.positions()
                    .into_iter()
                    .map(|(i, j)| s[(i, j)])
                    .collect()
            }
        }
    }

    fn check_len(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::Argument(format!(
                "expected {} diffusion parameters, got {}",
                self.n_params(),
                params.len()
            )));
        }
        Ok(())
    }
}

/// A second-order SDE with its drift split. State slices have length `dim()`.
///
/// Implementors supply the drift, the linear part (A_x, A_v), the anchor b and
/// the nonlinear remainder N. The nonlinear flow solves dv/dt = N(x, v) with x
/// frozen; the default integrates it with four RK4 substeps.
pub trait SecondOrderModel: Send + Sync {
    fn name(&self) -> String;

    fn dim(&self) -> usize;

    fn drift_param_names(&self) -> Vec<String>;

    fn diffusion(&self) -> DiffusionParam;

    fn drift_dim(&self) -> usize {
        self.drift_param_names().len()
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = self.drift_param_names();
        names.extend(self.diffusion().param_names());
        names
    }

    /// Domain check for β. The default only checks the length.
    fn check_drift(&self, beta: &[f64]) -> Result<()> {
        if beta.len() != self.drift_dim() {
            return Err(Error::Argument(format!(
                "expected {} drift parameters, got {}",
                self.drift_dim(),
                beta.len()
            )));
        }
        Ok(())
    }

    fn check_theta(&self, theta: &Theta) -> Result<()> {
        self.check_drift(&theta.beta)?;
        self.diffusion().sigma_sigma_t(&theta.sigma)?;
        Ok(())
    }

    fn drift(&self, beta: &[f64], x: &[f64], v: &[f64], out: &mut [f64]);

    /// (A_x, A_v), each d×d.
    fn linear_drift(&self, beta: &[f64]) -> (DMatrix<f64>, DMatrix<f64>);

    /// Fixed point b used for the linearization at position x.
    fn anchor(&self, beta: &[f64], x: &[f64], out: &mut [f64]);

    fn nonlinear(&self, beta: &[f64], x: &[f64], v: &[f64], out: &mut [f64]);

    /// Rough component of f_h(x, v).
    fn nonlinear_flow(&self, beta: &[f64], h: f64, x: &[f64], v: &[f64], out: &mut [f64]) {
        rk4_flow(self, beta, h, x, v, out);
    }

    /// v ↦ f*⁻¹_h(x, v), the inverse of the rough component at fixed x.
    fn nonlinear_flow_rough_inverse(
        &self,
        beta: &[f64],
        h: f64,
        x: &[f64],
        v: &[f64],
        out: &mut [f64],
    ) {
        self.nonlinear_flow(beta, -h, x, v, out);
    }

    /// log |det D_v f_h(x, v)|.
    fn log_abs_det_dv_flow(&self, beta: &[f64], h: f64, x: &[f64], v: &[f64]) -> f64 {
        if self.flow_jacobian_is_unit() {
            return 0.0;
        }
        numeric_log_abs_det_dv(self, beta, h, x, v)
    }

    /// True when N does not depend on v, so D_v f_h = I.
    fn flow_jacobian_is_unit(&self) -> bool {
        false
    }

    /// Optimizer transforms for β.
    fn drift_transforms(&self) -> Vec<Transform> {
        vec![Transform::Identity; self.drift_dim()]
    }

    /// Default initial state for simulation.
    fn default_initial_state(&self, beta: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut y = vec![0.0; 2 * d];
        let zeros = vec![0.0; d];
        self.anchor(beta, &zeros, &mut y[..d]);
        y
    }
}

/// Four RK4 substeps of dv/dt = N(x, v) with x frozen.
pub fn rk4_flow<M: SecondOrderModel + ?Sized>(
    model: &M,
    beta: &[f64],
    h: f64,
    x: &[f64],
    v: &[f64],
    out: &mut [f64],
) {
    let d = v.len();
    let dt = h / 4.0;
    out.copy_from_slice(v);
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (
        vec![0.0; d],
        vec![0.0; d],
        vec![0.0; d],
        vec![0.0; d],
        vec![0.0; d],
    );
    for _ in 0..4 {
        model.nonlinear(beta, x, out, &mut k1);
        for i in 0..d {
            tmp[i] = out[i] + 0.5 * dt * k1[i];
        }
        model.nonlinear(beta, x, &tmp, &mut k2);
        for i in 0..d {
            tmp[i] = out[i] + 0.5 * dt * k2[i];
        }
        model.nonlinear(beta, x, &tmp, &mut k3);
        for i in 0..d {
            tmp[i] = out[i] + dt * k3[i];
        }
        model.nonlinear(beta, x, &tmp, &mut k4);
        for i in 0..d {
            out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

fn numeric_log_abs_det_dv<M: SecondOrderModel + ?Sized>(
    model: &M,
    beta: &[f64],
    h: f64,
    x: &[f64],
    v: &[f64],
) -> f64 {
    let d = v.len();
    let mut jac = DMatrix::zeros(d, d);
    let mut vp = v.to_vec();
    let (mut fp, mut fm) = (vec![0.0; d], vec![0.0; d]);
    for j in 0..d {
        let step = 1e-6 * (1.0 + v[j].abs());
        vp[j] = v[j] + step;
        model.nonlinear_flow(beta, h, x, &vp, &mut fp);
        vp[j] = v[j] - step;
        model.nonlinear_flow(beta, h, x, &vp, &mut fm);
        vp[j] = v[j];
        for i in 0..d {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * step);
        }
    }
    jac.determinant().abs().ln()
}

/// Ã = [[0, I], [A_x, A_v]].
pub fn a_tilde(a_x: &DMatrix<f64>, a_v: &DMatrix<f64>) -> DMatrix<f64> {
    let d = a_x.nrows();
    let mut m = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        m[(i, d + i)] = 1.0;
    }
    m.view_mut((d, 0), (d, d)).copy_from(a_x);
    m.view_mut((d, d), (d, d)).copy_from(a_v);
    m
}

/// Σ̃Σ̃ᵀ = [[0, 0], [0, ΣΣᵀ]].
pub fn sigma_tilde_sq(sst: &DMatrix<f64>) -> DMatrix<f64> {
    let d = sst.nrows();
    let mut m = DMatrix::zeros(2 * d, 2 * d);
    m.view_mut((d, d), (d, d)).copy_from(sst);
    m
}

/// Full nonlinear flow f̃_h(y) = (x, f_h(x, v)) applied in place.
pub fn flow_full<M: SecondOrderModel + ?Sized>(model: &M, beta: &[f64], h: f64, y: &mut [f64]) {
    let d = model.dim();
    let mut out = vec![0.0; d];
    let (x, v) = y.split_at_mut(d);
    model.nonlinear_flow(beta, h, x, v, &mut out);
    v.copy_from_slice(&out);
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitReport {
    pub n_points: usize,
    pub max_abs_error: f64,
    pub flagged: bool,
}

/// Compares F with A_x (x − b) + A_v v + N at the given (x, v) points.
pub fn validate_split<M: SecondOrderModel + ?Sized>(
    model: &M,
    beta: &[f64],
    points: &[(Vec<f64>, Vec<f64>)],
) -> Result<SplitReport> {
    if points.is_empty() {
        return Err(Error::Argument("validate_split needs sample points".into()));
    }
    let d = model.dim();
    let (a_x, a_v) = model.linear_drift(beta);
    let (mut f, mut b, mut n) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut max_err: f64 = 0.0;
    for (x, v) in points {
        model.drift(beta, x, v, &mut f);
        model.anchor(beta, x, &mut b);
        model.nonlinear(beta, x, v, &mut n);
        for i in 0..d {
            let mut rec = n[i];
            for j in 0..d {
                rec += a_x[(i, j)] * (x[j] - b[j]) + a_v[(i, j)] * v[j];
            }
            let err = (rec - f[i]).abs();
            max_err = if err.is_nan() {
                f64::INFINITY
            } else {
                max_err.max(err)
            };
        }
    }
    Ok(SplitReport {
        n_points: points.len(),
        max_abs_error: max_err,
        flagged: max_err > 1e-8,
    })
}
