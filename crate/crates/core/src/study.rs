//! Simulation study: many seeded replicates of fine-grid simulation,
//! subsampling and estimation under several objectives, collected into a
//! table with one row per (replicate, kind).

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SecondOrderModel, Theta};
use crate::objectives::ObjectiveKind;
use crate::observe::{build_observations, DifferenceScheme, ObservationKind, ObservationSet};
use crate::optimize::{estimate, EstimateOptions};
use crate::simulate::{simulate_em_subsampled, SimKey, Trajectory};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "HYPOSPLIT_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default = "default_model")]
    pub model: String,
    /// True parameters on the natural scale, drift first.
    pub theta0: Vec<f64>,
    pub h_sim: f64,
    pub h: f64,
    /// Observation intervals per replicate.
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
    pub kinds: Vec<ObjectiveKind>,
    #[serde(default)]
    pub scheme: DifferenceScheme,
    /// Initial state; the model default when absent.
    #[serde(default)]
    pub y0: Option<Vec<f64>>,
    /// Observation intervals simulated and discarded before the kept path.
    #[serde(default)]
    pub burn_in: usize,
    /// Start the optimizer at θ0 instead of the configured starts.
    #[serde(default)]
    pub start_at_truth: bool,
    #[serde(default)]
    pub options: EstimateOptions,
}

fn default_model() -> String {
    "kramers".into()
}

impl StudyConfig {
    /// Number of fine steps per observation interval.
    pub fn stride(&self) -> Result<usize> {
        if !(self.h_sim > 0.0) || !(self.h > 0.0) || !self.h.is_finite() {
            return Err(Error::Config("h and h_sim must be positive".into()));
        }
        let ratio = self.h / self.h_sim;
        let stride = ratio.round();
        if stride < 1.0 || ((ratio - stride) / ratio).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "h = {} is not a multiple of h_sim = {}",
                self.h, self.h_sim
            )));
        }
        Ok(stride as usize)
    }

    pub fn validate<M: SecondOrderModel + ?Sized>(&self, model: &M) -> Result<()> {
        self.stride()?;
        if self.n < 3 {
            return Err(Error::Config("n must be at least 3".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be positive".into()));
        }
        if self.kinds.is_empty() {
            return Err(Error::Config("no estimator kinds requested".into()));
        }
        let p = model.param_names().len();
        if self.theta0.len() != p {
            return Err(Error::Config(format!(
                "theta0 needs {p} values, got {}",
                self.theta0.len()
            )));
        }
        if self.theta0.contains(&0.0) {
            return Err(Error::Config(
                "normalized errors need nonzero theta0 entries".into(),
            ));
        }
        model.check_theta(&Theta::from_slice(model.drift_dim(), &self.theta0))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub replicate: usize,
    pub kind: ObjectiveKind,
    /// "ok" or "failed".
    pub status: String,
    pub message: String,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub theta_hat: Vec<f64>,
    /// (θ̂ − θ0) / θ0 componentwise.
    pub normalized_error: Vec<f64>,
}

impl StudyRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    pub param_names: Vec<String>,
    pub theta0: Vec<f64>,
    pub rows: Vec<StudyRow>,
    pub failed_replicates: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub n_ok: usize,
    pub mean_error: f64,
    pub median_error: f64,
    pub median_abs_error: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub replicates: usize,
    pub failed_replicates: usize,
    /// kind → parameter → summary.
    pub kinds: BTreeMap<String, BTreeMap<String, ParamSummary>>,
}

impl StudyTable {
    /// Fixed column order: replicate, kind, status, message, objective,
    /// converged, iterations, then `<name>_hat` and `<name>_err` per parameter.
    pub fn columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = [
            "replicate",
            "kind",
            "status",
            "message",
            "objective",
            "converged",
            "iterations",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        cols.extend(self.param_names.iter().map(|n| format!("{n}_hat")));
        cols.extend(self.param_names.iter().map(|n| format!("{n}_err")));
        cols
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.columns())?;
        for r in &self.rows {
            let mut rec = vec![
                r.replicate.to_string(),
                r.kind.tag().to_string(),
                r.status.clone(),
                r.message.clone(),
                r.objective.to_string(),
                r.converged.to_string(),
                r.iterations.to_string(),
            ];
            rec.extend(r.theta_hat.iter().map(|v| v.to_string()));
            rec.extend(r.normalized_error.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Estimates of parameter `j` from the successful rows of `kind`.
    pub fn estimates(&self, kind: ObjectiveKind, j: usize) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.kind == kind && r.ok())
            .map(|r| r.theta_hat[j])
            .collect()
    }

    pub fn errors(&self, kind: ObjectiveKind, j: usize) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.kind == kind && r.ok())
            .map(|r| r.normalized_error[j])
            .collect()
    }

    pub fn summary(&self) -> StudySummary {
        let replicates = self.rows.iter().map(|r| r.replicate + 1).max().unwrap_or(0);
        let mut kinds = BTreeMap::new();
        let mut seen: Vec<ObjectiveKind> = self.rows.iter().map(|r| r.kind).collect();
        seen.sort();
        seen.dedup();
        for kind in seen {
            let mut per = BTreeMap::new();
            for (j, name) in self.param_names.iter().enumerate() {
                let err = self.errors(kind, j);
                let est = self.estimates(kind, j);
                let abs: Vec<f64> = err.iter().map(|e| e.abs()).collect();
                per.insert(
                    name.clone(),
                    ParamSummary {
                        n_ok: err.len(),
                        mean_error: mean(&err),
                        median_error: median(&err),
                        median_abs_error: median(&abs),
                        variance: variance(&est),
                    },
                );
            }
            kinds.insert(kind.tag().to_string(), per);
        }
        StudySummary {
            replicates,
            failed_replicates: self.failed_replicates.len(),
            kinds,
        }
    }
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn median(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return f64::NAN;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

/// Thread pool sized by `HYPOSPLIT_THREADS` when set, rayon's default otherwise.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().map_err(|_| {
            Error::Config(format!(
                "{THREADS_ENV} must be a positive integer, got '{v}'"
            ))
        })?;
        if n == 0 {
            return Err(Error::Config(format!("{THREADS_ENV} must be positive")));
        }
        b = b.num_threads(n);
    }
    b.build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))
}

/// Simulates replicate `r`: Euler–Maruyama at h_sim, kept every h, with the
/// burn-in prefix dropped.
pub fn simulate_replicate<M: SecondOrderModel + ?Sized>(
    model: &M,
    cfg: &StudyConfig,
    r: usize,
) -> Result<Trajectory> {
    let theta0 = Theta::from_slice(model.drift_dim(), &cfg.theta0);
    let y0 = match &cfg.y0 {
        Some(y) => y.clone(),
        None => model.default_initial_state(&theta0.beta),
    };
    let key = SimKey::new(cfg.seed).replicate(r as u64);
    let stride = cfg.stride()?;
    let full = simulate_em_subsampled(
        model,
        &theta0,
        &y0,
        cfg.h_sim,
        cfg.n + cfg.burn_in,
        stride,
        key,
    )?;
    if cfg.burn_in == 0 {
        return Ok(full);
    }
    let d = full.dim;
    let cut = cfg.burn_in * d;
    let mut meta = full.meta.clone();
    meta.burn_in_steps = cfg.burn_in * stride;
    Trajectory::new(
        full.h,
        full.time(cfg.burn_in),
        d,
        full.x[cut..].to_vec(),
        full.v.as_ref().map(|v| v[cut..].to_vec()),
        meta,
    )
}

fn replicate_rows<M: SecondOrderModel + ?Sized>(
    model: &M,
    cfg: &StudyConfig,
    r: usize,
) -> Vec<StudyRow> {
    let p = cfg.theta0.len();
    let failed = |kind: ObjectiveKind, msg: String| StudyRow {
        replicate: r,
        kind,
        status: "failed".into(),
        message: msg,
        objective: f64::NAN,
        converged: false,
        iterations: 0,
        theta_hat: vec![f64::NAN; p],
        normalized_error: vec![f64::NAN; p],
    };
    let traj = match simulate_replicate(model, cfg, r) {
        Ok(t) => t,
        Err(e) => {
            return cfg
                .kinds
                .iter()
                .map(|k| failed(*k, format!("simulation: {e}")))
                .collect()
        }
    };
    let mut obs: BTreeMap<&str, Result<ObservationSet>> = BTreeMap::new();
    let mut options = cfg.options.clone();
    if cfg.start_at_truth {
        options.starts = vec![cfg.theta0.clone()];
    }
    cfg.kinds
        .iter()
        .map(|&kind| {
            let ok = kind.observation();
            let key = if ok == ObservationKind::Complete {
                "complete"
            } else {
                "partial"
            };
            let set = obs
                .entry(key)
                .or_insert_with(|| build_observations(&traj, ok, cfg.scheme));
            let set = match set {
                Ok(s) => s,
                Err(e) => return failed(kind, format!("observations: {e}")),
            };
            match estimate(model, set, kind, &options) {
                Ok(est) => {
                    let hat = est.theta_vec();
                    let err = hat
                        .iter()
                        .zip(&cfg.theta0)
                        .map(|(e, t)| (e - t) / t)
                        .collect();
                    StudyRow {
                        replicate: r,
                        kind,
                        status: "ok".into(),
                        message: String::new(),
                        objective: est.objective_value,
                        converged: est.converged,
                        iterations: est.iterations,
                        theta_hat: hat,
                        normalized_error: err,
                    }
                }
                Err(e) => failed(kind, format!("estimation: {e}")),
            }
        })
        .collect()
}

/// Runs every replicate on the worker pool. Rows come out ordered by
/// replicate and then by the configured kind order, whatever the
/// completion order. Fails when more than 5% of replicates have a failed row.
pub fn run_simulation_study<M: SecondOrderModel + ?Sized>(
    model: &M,
    cfg: &StudyConfig,
) -> Result<StudyTable> {
    cfg.validate(model)?;
    let pool = worker_pool()?;
    let per: Vec<Vec<StudyRow>> = pool.install(|| {
        (0..cfg.replicates)
            .into_par_iter()
            .map(|r| replicate_rows(model, cfg, r))
            .collect()
    });
    let failed_replicates: Vec<usize> = per
        .iter()
        .enumerate()
        .filter(|(_, rows)| rows.iter().any(|r| !r.ok()))
        .map(|(i, _)| i)
        .collect();
    for r in &failed_replicates {
        log::warn!("replicate {r} had failures");
    }
    if failed_replicates.len() as f64 > 0.05 * cfg.replicates as f64 {
        return Err(Error::Estimation(format!(
            "{} of {} replicates failed",
            failed_replicates.len(),
            cfg.replicates
        )));
    }
    Ok(StudyTable {
        param_names: model.param_names(),
        theta0: cfg.theta0.clone(),
        rows: per.into_iter().flatten().collect(),
        failed_replicates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kramers::kramers_model;

    fn small() -> StudyConfig {
        StudyConfig {
            model: "kramers".into(),
            theta0: vec![6.5, 1.0, 0.6, 0.1],
            h_sim: 0.01,
            h: 0.1,
            n: 400,
            replicates: 3,
            seed: 7,
            kinds: vec![ObjectiveKind::CF, ObjectiveKind::PR],
            scheme: DifferenceScheme::Forward,
            y0: None,
            burn_in: 0,
            start_at_truth: true,
            options: EstimateOptions::default(),
        }
    }

    #[test]
    fn stride_must_divide() {
        let mut c = small();
        assert_eq!(c.stride().unwrap(), 10);
        c.h_sim = 0.03;
        assert!(c.stride().is_err());
        c.h_sim = 0.1 / 3.0;
        assert_eq!(c.stride().unwrap(), 3);
    }

    #[test]
    fn rows_are_ordered_and_deterministic() {
        let m = kramers_model();
        let a = run_simulation_study(&m, &small()).unwrap();
        let b = run_simulation_study(&m, &small()).unwrap();
        assert_eq!(a, b);
        let order: Vec<_> = a.rows.iter().map(|r| (r.replicate, r.kind)).collect();
        assert_eq!(
            order[..3],
            [
                (0, ObjectiveKind::CF),
                (0, ObjectiveKind::PR),
                (1, ObjectiveKind::CF)
            ]
        );
        assert!(a.rows.iter().all(|r| r.ok()));
        let mut csv_a = Vec::new();
        a.write_csv(&mut csv_a).unwrap();
        let header = String::from_utf8(csv_a)
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string();
        assert_eq!(
            header,
            "replicate,kind,status,message,objective,converged,iterations,\
             eta_hat,a_hat,b_hat,sigma2_hat,eta_err,a_err,b_err,sigma2_err"
        );
    }

    #[test]
    fn burn_in_shifts_the_kept_path() {
        let m = kramers_model();
        let mut c = small();
        let plain = simulate_replicate(&m, &c, 0).unwrap();
        c.burn_in = 5;
        let burned = simulate_replicate(&m, &c, 0).unwrap();
        assert_eq!(burned.n_points(), plain.n_points());
        assert_eq!(burned.x[..10], plain.x[5..15]);
        assert!((burned.t0 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn invalid_theta_is_rejected() {
        let mut c = small();
        c.theta0 = vec![6.5, 1.0, 0.6];
        assert!(run_simulation_study(&kramers_model(), &c).is_err());
    }

    #[test]
    fn summary_statistics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(variance(&[1.0, 2.0, 3.0]), 1.0);
        assert!(variance(&[1.0]).is_nan());
    }
}
