//! The Kramers oscillator: a particle in the double-well potential
//! U(x) = −a x²/2 + b x⁴/4 with linear damping η and additive noise σ².

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DiffusionParam, SecondOrderModel, Theta, Transform};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KramersParams {
    pub eta: f64,
    pub a: f64,
    pub b: f64,
    pub sigma2: f64,
}

impl KramersParams {
    pub fn new(eta: f64, a: f64, b: f64, sigma2: f64) -> Self {
        Self { eta, a, b, sigma2 }
    }

    pub fn validate(&self) -> Result<()> {
        check_drift(self.eta, self.a, self.b)?;
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(Error::Domain(format!(
                "sigma2 must be positive, got {}",
                self.sigma2
            )));
        }
        Ok(())
    }

    pub fn theta(&self) -> Theta {
        Theta::new(vec![self.eta, self.a, self.b], vec![self.sigma2])
    }

    pub fn from_theta(theta: &Theta) -> Result<Self> {
        if theta.beta.len() != 3 || theta.sigma.len() != 1 {
            return Err(Error::Argument(
                "Kramers parameters are (eta, a, b; sigma2)".into(),
            ));
        }
        Ok(Self::new(
            theta.beta[0],
            theta.beta[1],
            theta.beta[2],
            theta.sigma[0],
        ))
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.eta, self.a, self.b, self.sigma2]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        match v {
            [eta, a, b, s] => Ok(Self::new(*eta, *a, *b, *s)),
            _ => Err(Error::Argument("expected four Kramers parameters".into())),
        }
    }

    /// Positive stable point √(a/b).
    pub fn well(&self) -> f64 {
        (self.a / self.b).sqrt()
    }

    /// U(x) = −a x²/2 + b x⁴/4.
    pub fn potential(&self, x: f64) -> f64 {
        -0.5 * self.a * x * x + 0.25 * self.b * x.powi(4)
    }
}

fn check_drift(eta: f64, a: f64, b: f64) -> Result<()> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::Domain(format!("eta must be nonnegative, got {eta}")));
    }
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::Domain(format!("a must be positive, got {a}")));
    }
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::Domain(format!("b must be positive, got {b}")));
    }
    Ok(())
}

/// Drift parameters β = (η, a, b), diffusion parameter σ².
///
/// The linearization point is the stable point on the same side as x
/// (x*₊ for x ≥ 0), so à = [[0, 1], [−2a, −η]] in both wells and
/// N(x) = a x − b x³ + 2a (x − x*). N does not depend on v, hence the
/// nonlinear flow is exact: f_h(x, v) = v + h N(x).
#[derive(Debug, Clone, Copy, Default)]
pub struct Kramers;

pub fn kramers_model() -> Kramers {
    Kramers
}

impl Kramers {
    #[inline]
    fn anchor_scalar(beta: &[f64], x: f64) -> f64 {
        let w = (beta[1] / beta[2]).sqrt();
        if x < 0.0 {
            -w
        } else {
            w
        }
    }

    #[inline]
    fn n_scalar(beta: &[f64], x: f64) -> f64 {
        let (a, b) = (beta[1], beta[2]);
        a * x - b * x * x * x + 2.0 * a * (x - Self::anchor_scalar(beta, x))
    }
}

impl SecondOrderModel for Kramers {
    fn name(&self) -> String {
        "kramers".into()
    }

    fn dim(&self) -> usize {
        1
    }

    fn drift_param_names(&self) -> Vec<String> {
        vec!["eta".into(), "a".into(), "b".into()]
    }

    fn diffusion(&self) -> DiffusionParam {
        DiffusionParam::DiagonalVariance { dim: 1 }
    }

    fn check_drift(&self, beta: &[f64]) -> Result<()> {
        if beta.len() != 3 {
            return Err(Error::Argument(
                "Kramers drift parameters are (eta, a, b)".into(),
            ));
        }
        check_drift(beta[0], beta[1], beta[2])
    }

    #[inline]
    fn drift(&self, beta: &[f64], x: &[f64], v: &[f64], out: &mut [f64]) {
        let (eta, a, b) = (beta[0], beta[1], beta[2]);
        let x = x[0];
        out[0] = -eta * v[0] + a * x - b * x * x * x;
    }

    fn linear_drift(&self, beta: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        (
            DMatrix::from_element(1, 1, -2.0 * beta[1]),
            DMatrix::from_element(1, 1, -beta[0]),
        )
    }

    #[inline]
    fn anchor(&self, beta: &[f64], x: &[f64], out: &mut [f64]) {
        out[0] = Self::anchor_scalar(beta, x[0]);
    }

    #[inline]
    fn nonlinear(&self, beta: &[f64], x: &[f64], _v: &[f64], out: &mut [f64]) {
        out[0] = Self::n_scalar(beta, x[0]);
    }

    #[inline]
    fn nonlinear_flow(&self, beta: &[f64], h: f64, x: &[f64], v: &[f64], out: &mut [f64]) {
        out[0] = v[0] + h * Self::n_scalar(beta, x[0]);
    }

    #[inline]
    fn nonlinear_flow_rough_inverse(
        &self,
        beta: &[f64],
        h: f64,
        x: &[f64],
        v: &[f64],
        out: &mut [f64],
    ) {
        out[0] = v[0] - h * Self::n_scalar(beta, x[0]);
    }

    fn flow_jacobian_is_unit(&self) -> bool {
        true
    }

    fn drift_transforms(&self) -> Vec<Transform> {
        vec![Transform::Log; 3]
    }
}
