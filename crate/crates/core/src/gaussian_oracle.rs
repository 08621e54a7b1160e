//! Gaussian functionals of a Wiener path on consecutive unit intervals, and
//! Monte Carlo checks of their second and fourth moments.
//!
//! On interval k with local time s ∈ [0, 1]:
//! η = ∫dW, ξ = ∫s dW, ξ' = ∫(1−s) dW, ζ = ∫s² dW, ζ' = ∫(1−s)² dW.
//! Across intervals, U_k = ξ'_k + ξ_{k−1} and Q_k = ζ'_k + 2η_{k−1} − ζ_{k−1}.
//! The step h scales out, so h = 1 throughout.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::stream;

/// Intervals simulated per random substream.
const BLOCK: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct Functionals {
    pub dim: usize,
    pub n_intervals: usize,
    pub n_substeps: usize,
    pub eta: Vec<f64>,
    pub xi: Vec<f64>,
    pub xi_prime: Vec<f64>,
    pub zeta: Vec<f64>,
    pub zeta_prime: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Functional {
    Eta,
    Xi,
    XiPrime,
    Zeta,
    ZetaPrime,
}

impl Functionals {
    pub fn get(&self, which: Functional, k: usize) -> &[f64] {
        let v = match which {
            Functional::Eta => &self.eta,
            Functional::Xi => &self.xi,
            Functional::XiPrime => &self.xi_prime,
            Functional::Zeta => &self.zeta,
            Functional::ZetaPrime => &self.zeta_prime,
        };
        &v[k * self.dim..(k + 1) * self.dim]
    }

    /// U_k = ξ'_k + ξ_{k−1}, k ≥ 1.
    pub fn u(&self, k: usize) -> Vec<f64> {
        let (a, b) = (
            self.get(Functional::XiPrime, k),
            self.get(Functional::Xi, k - 1),
        );
        a.iter().zip(b).map(|(a, b)| a + b).collect()
    }

    /// ξ'_k + η_{k−1} − ξ'_{k−1}, equal to U_k.
    pub fn u_alternative(&self, k: usize) -> Vec<f64> {
        let xp = self.get(Functional::XiPrime, k);
        let e = self.get(Functional::Eta, k - 1);
        let xpp = self.get(Functional::XiPrime, k - 1);
        (0..self.dim).map(|i| xp[i] + e[i] - xpp[i]).collect()
    }

    /// Q_k = ζ'_k + 2η_{k−1} − ζ_{k−1}, k ≥ 1.
    pub fn q(&self, k: usize) -> Vec<f64> {
        let zp = self.get(Functional::ZetaPrime, k);
        let e = self.get(Functional::Eta, k - 1);
        let z = self.get(Functional::Zeta, k - 1);
        (0..self.dim).map(|i| zp[i] + 2.0 * e[i] - z[i]).collect()
    }
}

/// Left-endpoint Itô sums on a grid of `n_substeps` per interval. Block b of
/// intervals draws from substream b of `seed`, so the output does not depend
/// on the thread count.
pub fn sample_functionals(
    n_intervals: usize,
    dim: usize,
    n_substeps: usize,
    seed: u64,
) -> Result<Functionals> {
    if n_substeps < 100 {
        return Err(Error::Argument(format!(
            "need at least 100 substeps, got {n_substeps}"
        )));
    }
    if dim == 0 || n_intervals == 0 {
        return Err(Error::Argument(
            "need a positive dimension and interval count".into(),
        ));
    }
    let ds = 1.0 / n_substeps as f64;
    let sd = ds.sqrt();
    let weights: Vec<[f64; 4]> = (0..n_substeps)
        .map(|j| {
            let s = j as f64 * ds;
            [s, 1.0 - s, s * s, (1.0 - s) * (1.0 - s)]
        })
        .collect();
    let stride = 5 * dim;
    let mut packed = vec![0.0; n_intervals * stride];
    packed
        .par_chunks_mut(BLOCK * stride)
        .enumerate()
        .for_each(|(b, chunk)| {
            let mut rng = stream(seed, b as u64);
            for rec in chunk.chunks_mut(stride) {
                for i in 0..dim {
                    let mut acc = [0.0; 5];
                    for w in &weights {
                        let dw: f64 = StandardNormal.sample(&mut rng);
                        let dw = dw * sd;
                        acc[0] += dw;
                        acc[1] += w[0] * dw;
                        acc[2] += w[1] * dw;
                        acc[3] += w[2] * dw;
                        acc[4] += w[3] * dw;
                    }
                    for (f, v) in acc.iter().enumerate() {
                        rec[f * dim + i] = *v;
                    }
                }
            }
        });
    let mut out = Functionals {
        dim,
        n_intervals,
        n_substeps,
        eta: Vec::with_capacity(n_intervals * dim),
        xi: Vec::with_capacity(n_intervals * dim),
        xi_prime: Vec::with_capacity(n_intervals * dim),
        zeta: Vec::with_capacity(n_intervals * dim),
        zeta_prime: Vec::with_capacity(n_intervals * dim),
    };
    for rec in packed.chunks(stride) {
        out.eta.extend_from_slice(&rec[0..dim]);
        out.xi.extend_from_slice(&rec[dim..2 * dim]);
        out.xi_prime.extend_from_slice(&rec[2 * dim..3 * dim]);
        out.zeta.extend_from_slice(&rec[3 * dim..4 * dim]);
        out.zeta_prime.extend_from_slice(&rec[4 * dim..5 * dim]);
    }
    Ok(out)
}

/// Exact second moments of the discretized functionals, exposing the
/// O(1/n) bias of the left-endpoint sums.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiscreteMoments {
    pub xi_xi: f64,
    pub xi_prime_xi_prime: f64,
    pub eta_xi: f64,
    pub eta_xi_prime: f64,
    pub xi_xi_prime: f64,
}

pub fn discrete_moments(n_substeps: usize) -> DiscreteMoments {
    let ds = 1.0 / n_substeps as f64;
    let s: Vec<f64> = (0..n_substeps).map(|j| j as f64 * ds).collect();
    let sum = |f: &dyn Fn(f64) -> f64| s.iter().map(|&x| f(x)).sum::<f64>() * ds;
    DiscreteMoments {
        xi_xi: sum(&|x| x * x),
        xi_prime_xi_prime: sum(&|x| (1.0 - x) * (1.0 - x)),
        eta_xi: sum(&|x| x),
        eta_xi_prime: sum(&|x| 1.0 - x),
        xi_xi_prime: sum(&|x| x * (1.0 - x)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentCheck {
    pub name: String,
    pub estimate: f64,
    pub target: f64,
    pub std_error: f64,
    pub z: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    pub n_intervals: usize,
    pub n_substeps: usize,
    pub dim: usize,
    /// |z| at or below this counts as a pass.
    pub z_threshold: f64,
    pub checks: Vec<MomentCheck>,
    pub all_pass: bool,
}

/// Mean and batch-means standard error with 100 contiguous batches.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let batches = 100.min(n);
    let size = n / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| values[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let bm = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - bm).powi(2)).sum::<f64>() / (batches - 1).max(1) as f64;
    (mean, (var / batches as f64).sqrt())
}

fn check(name: String, values: &[f64], target: f64, z_threshold: f64) -> MomentCheck {
    let (estimate, std_error) = mean_and_se(values);
    let z = if std_error > 0.0 {
        (estimate - target) / std_error
    } else if estimate == target {
        0.0
    } else {
        f64::INFINITY
    };
    MomentCheck {
        name,
        estimate,
        target,
        std_error,
        z,
        pass: z.abs() <= z_threshold,
    }
}

fn quad(b: &DMatrix<f64>, x: &[f64]) -> f64 {
    let d = x.len();
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += x[i] * b[(i, j)] * x[j];
        }
    }
    s
}

/// Per-interval values of (αᵀB₁α)(βᵀB₂β).
pub fn quadratic_products(
    f: &Functionals,
    alpha: Functional,
    beta: Functional,
    b1: &DMatrix<f64>,
    b2: &DMatrix<f64>,
) -> Vec<f64> {
    (0..f.n_intervals)
        .map(|k| quad(b1, f.get(alpha, k)) * quad(b2, f.get(beta, k)))
        .collect()
}

/// Test matrices for the fourth-moment identities: B₁ with unit diagonal
/// plus 0.3 off the diagonal, B₂ = diag(1, 2, …) plus 0.1 off the diagonal.
pub fn default_test_matrices(dim: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let b1 = DMatrix::from_fn(dim, dim, |i, j| if i == j { 1.0 } else { 0.3 });
    let b2 = DMatrix::from_fn(dim, dim, |i, j| if i == j { (i + 1) as f64 } else { 0.1 });
    (b1, b2)
}

/// Checks the Itô-isometry second moments, the moments of U and Q, and the
/// fourth moments of quadratic forms against their closed forms.
pub fn check_moments(f: &Functionals, z_threshold: f64) -> Result<MomentReport> {
    if f.n_intervals < 10_000 {
        return Err(Error::Argument(format!(
            "need at least 10000 draws, got {}",
            f.n_intervals
        )));
    }
    use Functional::*;
    let d = f.dim;
    let n = f.n_intervals;
    let names = [
        (Eta, "eta"),
        (Xi, "xi"),
        (XiPrime, "xi'"),
        (Zeta, "zeta"),
        (ZetaPrime, "zeta'"),
    ];
    let mut checks = Vec::new();
    let comp =
        |which: Functional, i: usize| -> Vec<f64> { (0..n).map(|k| f.get(which, k)[i]).collect() };
    let us: Vec<Vec<f64>> = (1..n).map(|k| f.u(k)).collect();
    let qs: Vec<Vec<f64>> = (1..n).map(|k| f.q(k)).collect();

    for i in 0..d {
        for (w, name) in names {
            checks.push(check(
                format!("E[{name}_{i}]"),
                &comp(w, i),
                0.0,
                z_threshold,
            ));
        }
        let u: Vec<f64> = us.iter().map(|u| u[i]).collect();
        checks.push(check(format!("E[U_{i}]"), &u, 0.0, z_threshold));
        let q: Vec<f64> = qs.iter().map(|q| q[i]).collect();
        checks.push(check(format!("E[Q_{i}]"), &q, 0.0, z_threshold));
    }

    let pairs: [(Functional, Functional, &str, f64); 6] = [
        (Eta, Eta, "eta eta", 1.0),
        (Eta, Xi, "eta xi", 0.5),
        (Eta, XiPrime, "eta xi'", 0.5),
        (Xi, XiPrime, "xi xi'", 1.0 / 6.0),
        (Xi, Xi, "xi xi", 1.0 / 3.0),
        (XiPrime, XiPrime, "xi' xi'", 1.0 / 3.0),
    ];
    for (a, b, name, diag) in pairs {
        for i in 0..d {
            for j in 0..d {
                let v: Vec<f64> = (0..n).map(|k| f.get(a, k)[i] * f.get(b, k)[j]).collect();
                let target = if i == j { diag } else { 0.0 };
                checks.push(check(format!("E[{name}]_{i}{j}"), &v, target, z_threshold));
            }
        }
    }
    for i in 0..d {
        for j in 0..d {
            let id = if i == j { 1.0 } else { 0.0 };
            let uu: Vec<f64> = us.iter().map(|u| u[i] * u[j]).collect();
            checks.push(check(
                format!("E[U U]_{i}{j}"),
                &uu,
                2.0 / 3.0 * id,
                z_threshold,
            ));
            let uw: Vec<f64> = (1..n)
                .map(|k| {
                    let u = &us[k - 1];
                    u[i] * (u[j] + 2.0 * f.get(XiPrime, k - 1)[j])
                })
                .collect();
            checks.push(check(
                format!("E[U (U + 2 xi')]_{i}{j}"),
                &uw,
                id,
                z_threshold,
            ));
            let qq: Vec<f64> = qs.iter().map(|q| q[i] * q[j]).collect();
            checks.push(check(
                format!("E[Q Q]_{i}{j}"),
                &qq,
                46.0 / 15.0 * id,
                z_threshold,
            ));
        }
    }

    let (b1, b2) = default_test_matrices(d);
    let tr12 = (&b1 * &b2).trace();
    let tr11 = (&b1 * &b1).trace();
    let (t1, t2) = (b1.trace(), b2.trace());
    let fourth: [(Functional, Functional, &str, f64, f64); 4] = [
        (Eta, Eta, "eta", 2.0, 1.0),
        (Xi, Xi, "xi", 2.0 / 9.0, 1.0 / 9.0),
        (XiPrime, XiPrime, "xi'", 2.0 / 9.0, 1.0 / 9.0),
        (Xi, XiPrime, "xi, xi'", 1.0 / 18.0, 1.0 / 9.0),
    ];
    for (a, b, name, c_tr, c_tt) in fourth {
        let v = quadratic_products(f, a, b, &b1, &b2);
        checks.push(check(
            format!("E[q4 {name}; B1, B2]"),
            &v,
            c_tr * tr12 + c_tt * t1 * t2,
            z_threshold,
        ));
        let v = quadratic_products(f, a, b, &b1, &b1);
        checks.push(check(
            format!("E[q4 {name}; B1, B1]"),
            &v,
            c_tr * tr11 + c_tt * t1 * t1,
            z_threshold,
        ));
    }

    let all_pass = checks.iter().all(|c| c.pass);
    Ok(MomentReport {
        n_intervals: n,
        n_substeps: f.n_substeps,
        dim: d,
        z_threshold,
        checks,
        all_pass,
    })
}
