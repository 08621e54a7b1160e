//! Minimization of the objectives: Nelder–Mead in transformed coordinates,
//! one restart from the incumbent, then a BFGS polish with central-difference
//! gradients.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SecondOrderModel, Theta, Transform};
use crate::objectives::{objective, ObjectiveKind};
use crate::observe::ObservationSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateOptions {
    pub max_iters: usize,
    /// Simplex size (in transformed coordinates) at which Nelder–Mead stops.
    pub tol: f64,
    /// Start points on the natural scale, each a full θ vector. Empty means
    /// the default start with every parameter 0.1.
    pub starts: Vec<Vec<f64>>,
    pub restarts: usize,
    pub polish: bool,
    /// Initial simplex edge in transformed coordinates.
    pub initial_step: f64,
    /// Parameters held fixed, by name.
    pub fixed: BTreeMap<String, f64>,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            tol: 1e-5,
            starts: Vec::new(),
            restarts: 1,
            polish: true,
            initial_step: 1.0,
            fixed: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub drift: Vec<Transform>,
    /// "log" for diagonal variances, "log-cholesky" for a full covariance.
    pub diffusion: String,
    pub fixed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub kind: ObjectiveKind,
    pub param_names: Vec<String>,
    pub theta_hat: Theta,
    pub objective_value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub start_point: Theta,
    pub transform: TransformSpec,
    /// Observation intervals N and step h of the data.
    pub n: usize,
    pub h: f64,
}

impl EstimationResult {
    pub fn theta_vec(&self) -> Vec<f64> {
        self.theta_hat.to_vec()
    }
}

/// Maps between natural θ and the free unconstrained coordinates u.
pub(crate) struct ParamMap {
    r: usize,
    drift_t: Vec<Transform>,
    diffusion: crate::model::DiffusionParam,
    fixed: Vec<Option<f64>>,
}

impl ParamMap {
    pub(crate) fn new<M: SecondOrderModel + ?Sized>(
        model: &M,
        fixed: &BTreeMap<String, f64>,
    ) -> Result<Self> {
        let names = model.param_names();
        let mut fx = vec![None; names.len()];
        for (name, value) in fixed {
            let i = names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Argument(format!("unknown parameter '{name}' in fixed")))?;
            fx[i] = Some(*value);
        }
        let diffusion = model.diffusion();
        if matches!(diffusion, crate::model::DiffusionParam::Covariance { .. })
            && fx[model.drift_dim()..].iter().any(|f| f.is_some())
            && fx[model.drift_dim()..].iter().any(|f| f.is_none())
        {
            return Err(Error::Argument(
                "a full covariance must be fixed entirely or not at all".into(),
            ));
        }
        Ok(Self {
            r: model.drift_dim(),
            drift_t: model.drift_transforms(),
            diffusion,
            fixed: fx,
        })
    }

    fn to_u(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let mut full = Vec::with_capacity(theta.len());
        for (t, v) in self.drift_t.iter().zip(&theta[..self.r]) {
            let u = t.forward(*v);
            if !u.is_finite() {
                return Err(Error::Domain(format!(
                    "start value {v} outside the transform domain"
                )));
            }
            full.push(u);
        }
        if self.fixed[self.r..].iter().all(|f| f.is_some()) {
            full.extend(theta[self.r..].iter().map(|_| 0.0));
        } else {
            full.extend(self.diffusion.to_unconstrained(&theta[self.r..])?);
        }
        Ok(full
            .into_iter()
            .zip(&self.fixed)
            .filter(|(_, f)| f.is_none())
            .map(|(u, _)| u)
            .collect())
    }

    fn theta_at(&self, u: &[f64]) -> Theta {
        let mut free = u.iter();
        let mut full = Vec::with_capacity(self.fixed.len());
        for f in &self.fixed {
            full.push(match f {
                Some(_) => 0.0,
                None => *free.next().expect("free coordinate count"),
            });
        }
        let mut beta: Vec<f64> = self
            .drift_t
            .iter()
            .zip(&full[..self.r])
            .map(|(t, u)| t.inverse(*u))
            .collect();
        let mut sigma = self.diffusion.from_unconstrained(&full[self.r..]);
        for (i, f) in self.fixed.iter().enumerate() {
            if let Some(v) = f {
                if i < self.r {
                    beta[i] = *v;
                } else {
                    sigma[i - self.r] = *v;
                }
            }
        }
        Theta::new(beta, sigma)
    }

    /// Positions within the free coordinates that are logarithms of a
    /// positive parameter.
    fn log_coordinates(&self) -> Vec<usize> {
        let diag_log = matches!(
            self.diffusion,
            crate::model::DiffusionParam::DiagonalVariance { .. }
        );
        let mut out = Vec::new();
        let mut free = 0;
        for (i, f) in self.fixed.iter().enumerate() {
            if f.is_some() {
                continue;
            }
            let is_log = if i < self.r {
                self.drift_t[i] == Transform::Log
            } else {
                diag_log
            };
            if is_log {
                out.push(free);
            }
            free += 1;
        }
        out
    }

    fn spec(&self, names: &[String]) -> TransformSpec {
        TransformSpec {
            drift: self.drift_t.clone(),
            diffusion: match self.diffusion {
                crate::model::DiffusionParam::DiagonalVariance { .. } => "log".into(),
                crate::model::DiffusionParam::Covariance { .. } => "log-cholesky".into(),
            },
            fixed: names
                .iter()
                .zip(&self.fixed)
                .filter(|(_, f)| f.is_some())
                .map(|(n, _)| n.clone())
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn eval<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], count: &mut usize) -> f64 {
    *count += 1;
    let v = f(x);
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Nelder–Mead with standard coefficients. Stops when every vertex lies
/// within `tol` (max norm) of the best vertex, or after `max_iters`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    step: f64,
    max_iters: usize,
    tol: f64,
) -> Minimum {
    let n = x0.len();
    let mut evals = 0;
    if n == 0 {
        let fx = eval(&mut f, x0, &mut evals);
        return Minimum {
            x: vec![],
            fx,
            iterations: 0,
            evaluations: evals,
            converged: true,
        };
    }
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let mut fs: Vec<f64> = simplex
        .iter()
        .map(|v| eval(&mut f, v, &mut evals))
        .collect();
    let mut iters = 0;
    let mut converged = false;
    let mut order: Vec<usize> = (0..=n).collect();

    while iters < max_iters {
        order.sort_by(|&a, &b| fs[a].total_cmp(&fs[b]).then(a.cmp(&b)));
        let best = order[0];
        let worst = order[n];
        let second = order[n - 1];
        let size = simplex
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[best]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if size < tol && fs[best].is_finite() {
            converged = true;
            break;
        }
        iters += 1;

        let mut centroid = vec![0.0; n];
        for &i in &order[..n] {
            for (c, v) in centroid.iter_mut().zip(&simplex[i]) {
                *c += v / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[worst])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(1.0);
        let fr = eval(&mut f, &xr, &mut evals);
        if fr < fs[best] {
            let xe = along(2.0);
            let fe = eval(&mut f, &xe, &mut evals);
            if fe < fr {
                simplex[worst] = xe;
                fs[worst] = fe;
            } else {
                simplex[worst] = xr;
                fs[worst] = fr;
            }
            continue;
        }
        if fr < fs[second] {
            simplex[worst] = xr;
            fs[worst] = fr;
            continue;
        }
        // Outside contraction when the reflection improved on the worst vertex.
        let xc = along(if fr < fs[worst] { 0.5 } else { -0.5 });
        let fc = eval(&mut f, &xc, &mut evals);
        if fc < fs[worst].min(fr) {
            simplex[worst] = xc;
            fs[worst] = fc;
            continue;
        }
        let xb = simplex[best].clone();
        for &i in &order[1..] {
            for (v, b) in simplex[i].iter_mut().zip(&xb) {
                *v = b + 0.5 * (*v - b);
            }
            fs[i] = eval(&mut f, &simplex[i], &mut evals);
        }
    }
    let best = (0..=n)
        .min_by(|&a, &b| fs[a].total_cmp(&fs[b]).then(a.cmp(&b)))
        .unwrap();
    Minimum {
        x: simplex[best].clone(),
        fx: fs[best],
        iterations: iters,
        evaluations: evals,
        converged,
    }
}

fn gradient<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], count: &mut usize) -> Option<Vec<f64>> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-5 * (1.0 + x[i].abs());
        xp[i] = x[i] + h;
        let fp = eval(f, &xp, count);
        xp[i] = x[i] - h;
        let fm = eval(f, &xp, count);
        xp[i] = x[i];
        if !fp.is_finite() || !fm.is_finite() {
            return None;
        }
        g[i] = (fp - fm) / (2.0 * h);
    }
    Some(g)
}

/// BFGS with backtracking line search and central-difference gradients.
pub fn bfgs<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], max_iters: usize, tol: f64) -> Minimum {
    let n = x0.len();
    let mut evals = 0;
    let mut x = x0.to_vec();
    let mut fx = eval(&mut f, &x, &mut evals);
    let mut iters = 0;
    let mut converged = false;
    if n == 0 || !fx.is_finite() {
        return Minimum {
            x,
            fx,
            iterations: 0,
            evaluations: evals,
            converged: n == 0,
        };
    }
    let mut hinv = vec![vec![0.0; n]; n];
    for (i, row) in hinv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let Some(mut g) = gradient(&mut f, &x, &mut evals) else {
        return Minimum {
            x,
            fx,
            iterations: 0,
            evaluations: evals,
            converged: false,
        };
    };
    while iters < max_iters {
        iters += 1;
        let mut p: Vec<f64> = (0..n)
            .map(|i| -(0..n).map(|j| hinv[i][j] * g[j]).sum::<f64>())
            .collect();
        let mut slope: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            // Not a descent direction: reset to steepest descent.
            for (i, row) in hinv.iter_mut().enumerate() {
                row.iter_mut().for_each(|v| *v = 0.0);
                row[i] = 1.0;
            }
            p = g.iter().map(|v| -v).collect();
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }
        let pmax = p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut t = if pmax > 1.0 { 1.0 / pmax } else { 1.0 };
        let mut accepted = None;
        for _ in 0..50 {
            let xn: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + t * b).collect();
            let fnew = eval(&mut f, &xn, &mut evals);
            if fnew <= fx + 1e-4 * t * slope {
                accepted = Some((xn, fnew));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            converged = true;
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let Some(gn) = gradient(&mut f, &xn, &mut evals) else {
            x = xn;
            fx = fnew;
            break;
        };
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let step = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let improvement = fx - fnew;
        x = xn;
        fx = fnew;
        g = gn;
        if step < tol || improvement <= 1e-14 * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 {
            let hy: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| hinv[i][j] * y[j]).sum())
                .collect();
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    hinv[i][j] +=
                        rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
        }
    }
    Minimum {
        x,
        fx,
        iterations: iters,
        evaluations: evals,
        converged,
    }
}

/// Minimizes the objective `kind` over θ.
pub fn estimate<M: SecondOrderModel + ?Sized>(
    model: &M,
    obs: &ObservationSet,
    kind: ObjectiveKind,
    options: &EstimateOptions,
) -> Result<EstimationResult> {
    if obs.kind != kind.observation() {
        return Err(Error::Argument(format!(
            "objective {kind} needs {:?} observations",
            kind.observation()
        )));
    }
    let names = model.param_names();
    let p = names.len();
    let map = ParamMap::new(model, &options.fixed)?;
    let mut starts = options.starts.clone();
    if starts.is_empty() {
        starts.push(default_start(model));
    }
    for s in &mut starts {
        if s.len() != p {
            return Err(Error::Argument(format!("start point needs {p} values")));
        }
        for (i, name) in names.iter().enumerate() {
            if let Some(v) = options.fixed.get(name) {
                s[i] = *v;
            }
        }
    }

    let f = |u: &[f64]| -> f64 {
        let theta = map.theta_at(u);
        objective(model, &theta, obs, kind).unwrap_or(f64::INFINITY)
    };

    let log_coords = map.log_coordinates();
    let mut best: Option<(Minimum, Vec<f64>, usize, usize)> = None;
    for start in &starts {
        let u0 = map.to_u(start)?;
        let mut m = nelder_mead(f, &u0, options.initial_step, options.max_iters, options.tol);
        let (mut iters, mut evals) = (m.iterations, m.evaluations);
        for _ in 0..options.restarts {
            let again = nelder_mead(
                f,
                &m.x,
                options.initial_step,
                options.max_iters,
                options.tol,
            );
            iters += again.iterations;
            evals += again.evaluations;
            if again.fx <= m.fx {
                m = Minimum {
                    converged: again.converged,
                    ..again
                };
            } else {
                m.converged = again.converged;
            }
        }
        if let Some(u) = reseed_collapsed(&m.x, &log_coords) {
            let again = nelder_mead(f, &u, options.initial_step, options.max_iters, options.tol);
            iters += again.iterations;
            evals += again.evaluations;
            if again.fx < m.fx {
                m = again;
            }
        }
        if options.polish && m.fx.is_finite() {
            let pol = bfgs(f, &m.x, 200, options.tol * 1e-2);
            iters += pol.iterations;
            evals += pol.evaluations;
            if pol.fx < m.fx {
                m.x = pol.x;
                m.fx = pol.fx;
            }
        }
        if !m.fx.is_finite() {
            continue;
        }
        let theta_nat = map.theta_at(&m.x).to_vec();
        let better = match &best {
            None => true,
            Some((b, b_nat, _, _)) => {
                m.fx < b.fx || (m.fx == b.fx && lexicographic_less(&theta_nat, b_nat))
            }
        };
        if better {
            best = Some((m, start.clone(), iters, evals));
        }
    }
    let (m, start, iters, evals) = best.ok_or_else(|| {
        Error::Estimation(format!("objective {kind} is not finite at any start point"))
    })?;
    let r = model.drift_dim();
    Ok(EstimationResult {
        kind,
        param_names: names.clone(),
        theta_hat: map.theta_at(&m.x),
        objective_value: m.fx,
        iterations: iters,
        evaluations: evals,
        converged: m.converged,
        start_point: Theta::from_slice(r, &start),
        transform: map.spec(&names),
        n: obs.n,
        h: obs.h,
    })
}

/// Log coordinates more than a factor 1e8 below the largest one sit on a
/// plateau where the objective no longer depends on them. They are moved to
/// the mean of the remaining log coordinates for one more search.
fn reseed_collapsed(u: &[f64], log_coords: &[usize]) -> Option<Vec<f64>> {
    let gap = 1e8f64.ln();
    let top = log_coords
        .iter()
        .map(|&i| u[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let (low, rest): (Vec<usize>, Vec<usize>) = log_coords.iter().partition(|&&i| u[i] < top - gap);
    if low.is_empty() {
        return None;
    }
    let centre = rest.iter().map(|&i| u[i]).sum::<f64>() / rest.len() as f64;
    let mut out = u.to_vec();
    for i in low {
        out[i] = centre;
    }
    Some(out)
}

fn lexicographic_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    false
}

/// All drift parameters 0.1 and ΣΣᵀ = 0.1·I.
pub fn default_start<M: SecondOrderModel + ?Sized>(model: &M) -> Vec<f64> {
    let mut v = vec![0.1; model.drift_dim()];
    let diff = model.diffusion();
    v.extend(
        diff.positions()
            .into_iter()
            .map(|(i, j)| if i == j { 0.1 } else { 0.0 }),
    );
    v
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileCurve {
    pub axis: usize,
    pub name: String,
    pub grid: Vec<f64>,
    /// Objective values; +∞ where θ is inadmissible or the objective fails.
    pub values: Vec<f64>,
    pub argmin: Option<usize>,
    pub all_finite: bool,
    /// Values never decrease or never increase along the grid, so the slice
    /// has no interior minimum.
    pub monotone: bool,
}

/// The objective along one coordinate of θ, the others held at `center`.
pub fn profile_objective<M: SecondOrderModel + ?Sized>(
    model: &M,
    obs: &ObservationSet,
    kind: ObjectiveKind,
    center: &Theta,
    axis: usize,
    grid: &[f64],
) -> Result<ProfileCurve> {
    if grid.is_empty() {
        return Err(Error::Argument("profile grid is empty".into()));
    }
    let names = model.param_names();
    if axis >= names.len() {
        return Err(Error::Argument(format!("axis {axis} out of range")));
    }
    let r = center.beta.len();
    let base = center.to_vec();
    let values: Vec<f64> = grid
        .iter()
        .map(|g| {
            let mut v = base.clone();
            v[axis] = *g;
            objective(model, &Theta::from_slice(r, &v), obs, kind).unwrap_or(f64::INFINITY)
        })
        .collect();
    let argmin = values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i);
    let nondecreasing = values.windows(2).all(|w| w[1] >= w[0]);
    let nonincreasing = values.windows(2).all(|w| w[1] <= w[0]);
    Ok(ProfileCurve {
        axis,
        name: names[axis].clone(),
        grid: grid.to_vec(),
        all_finite: values.iter().all(|v| v.is_finite()),
        values,
        argmin,
        monotone: nondecreasing || nonincreasing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn nelder_mead_finds_rosenbrock_minimum() {
        let m = nelder_mead(rosenbrock, &[-1.2, 1.0], 0.5, 5000, 1e-8);
        assert!(m.converged);
        assert!(
            (m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5,
            "{:?}",
            m.x
        );
    }

    #[test]
    fn bfgs_polishes_quadratic() {
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + 10.0 * (x[1] + 1.0).powi(2) + x[0] * x[1];
        let m = bfgs(f, &[0.0, 0.0], 200, 1e-10);
        // Stationary point of the quadratic.
        let det = 2.0 * 20.0 - 1.0;
        let x0 = (6.0 * 20.0 + 20.0) / det;
        let x1 = (2.0 * -20.0 - 6.0) / det;
        assert!(
            (m.x[0] - x0).abs() < 1e-5 && (m.x[1] - x1).abs() < 1e-5,
            "{:?}",
            m.x
        );
    }

    #[test]
    fn nelder_mead_handles_infinite_regions() {
        let f = |x: &[f64]| {
            if x[0] < 0.0 {
                f64::INFINITY
            } else {
                (x[0] - 0.5).powi(2)
            }
        };
        let m = nelder_mead(f, &[2.0], 1.0, 1000, 1e-9);
        assert!((m.x[0] - 0.5).abs() < 1e-6);
    }
}
