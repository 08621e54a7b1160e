//! Trajectories and their generation: fine-grid Euler–Maruyama paths and
//! Strang-splitting sample paths.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{psd_factor, to_row_major};
use crate::model::{a_tilde, sigma_tilde_sq, SecondOrderModel, Theta};
use crate::ou::ou_exp_and_covariance;
use crate::rng;

const EXPLOSION_BOUND: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    EulerMaruyama,
    Strang,
    Ingested,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub provenance: Provenance,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub replicate: Option<u64>,
    /// Fine simulation step, when the path was subsampled from a finer grid.
    #[serde(default)]
    pub h_sim: Option<f64>,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub theta: Option<Vec<f64>>,
    #[serde(default)]
    pub y0: Option<Vec<f64>>,
    #[serde(default)]
    pub burn_in_steps: usize,
    #[serde(default)]
    pub notes: Vec<String>,
}

fn one() -> usize {
    1
}

impl TrajectoryMeta {
    pub fn new(provenance: Provenance) -> Self {
        Self {
            provenance,
            seed: None,
            replicate: None,
            h_sim: None,
            stride: 1,
            model: None,
            theta: None,
            y0: None,
            burn_in_steps: 0,
            notes: Vec::new(),
        }
    }
}

/// Equidistant observations t_k = t0 + k h of positions and, optionally,
/// velocities. States are stored flattened, `dim` values per time point.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub h: f64,
    pub t0: f64,
    pub dim: usize,
    pub x: Vec<f64>,
    pub v: Option<Vec<f64>>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn new(
        h: f64,
        t0: f64,
        dim: usize,
        x: Vec<f64>,
        v: Option<Vec<f64>>,
        meta: TrajectoryMeta,
    ) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::Argument(format!("step must be positive, got {h}")));
        }
        if dim == 0 || !x.len().is_multiple_of(dim) || x.is_empty() {
            return Err(Error::Argument(
                "positions do not match the dimension".into(),
            ));
        }
        if let Some(v) = &v {
            if v.len() != x.len() {
                return Err(Error::Argument(
                    "positions and velocities differ in length".into(),
                ));
            }
            if v.iter().any(|z| !z.is_finite()) {
                return Err(Error::Argument("non-finite velocity".into()));
            }
        }
        if x.iter().any(|z| !z.is_finite()) {
            return Err(Error::Argument("non-finite position".into()));
        }
        Ok(Self {
            h,
            t0,
            dim,
            x,
            v,
            meta,
        })
    }

    /// Positions-only trajectory of a scalar series.
    pub fn from_positions(x: Vec<f64>, h: f64) -> Result<Self> {
        Self::new(
            h,
            0.0,
            1,
            x,
            None,
            TrajectoryMeta::new(Provenance::External),
        )
    }

    pub fn n_points(&self) -> usize {
        self.x.len() / self.dim
    }

    /// Number of intervals N.
    pub fn n_steps(&self) -> usize {
        self.n_points() - 1
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.h
    }

    pub fn x_at(&self, k: usize) -> &[f64] {
        &self.x[k * self.dim..(k + 1) * self.dim]
    }

    pub fn v_at(&self, k: usize) -> Option<&[f64]> {
        self.v
            .as_ref()
            .map(|v| &v[k * self.dim..(k + 1) * self.dim])
    }

    /// Series of one position coordinate.
    pub fn coordinate(&self, i: usize) -> Vec<f64> {
        self.x.iter().skip(i).step_by(self.dim).copied().collect()
    }

    pub fn velocity_coordinate(&self, i: usize) -> Option<Vec<f64>> {
        self.v
            .as_ref()
            .map(|v| v.iter().skip(i).step_by(self.dim).copied().collect())
    }

    pub fn without_velocities(&self) -> Self {
        Self {
            v: None,
            ..self.clone()
        }
    }
}

/// Identifies a random stream: `replicate` selects an independent substream
/// of `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimKey {
    pub seed: u64,
    pub replicate: u64,
}

impl SimKey {
    pub fn new(seed: u64) -> Self {
        Self { seed, replicate: 0 }
    }

    pub fn replicate(self, replicate: u64) -> Self {
        Self { replicate, ..self }
    }
}

fn check_y0(y0: &[f64], d: usize) -> Result<()> {
    if y0.len() != 2 * d || y0.iter().any(|z| !z.is_finite()) {
        return Err(Error::Argument(format!(
            "initial state must have {} finite entries",
            2 * d
        )));
    }
    Ok(())
}

/// Euler–Maruyama with fine step `h_sim` for `n_steps` steps, keeping every point.
pub fn simulate_em<M: SecondOrderModel + ?Sized>(
    model: &M,
    theta: &Theta,
    y0: &[f64],
    h_sim: f64,
    n_steps: usize,
    key: SimKey,
) -> Result<Trajectory> {
    simulate_em_subsampled(model, theta, y0, h_sim, n_steps, 1, key)
}

/// Euler–Maruyama with fine step `h_sim`, storing every `stride`-th point
/// for `n_obs` observation intervals. Produces exactly the path that
/// `simulate_em` followed by `subsample` would, without holding the fine grid.
pub fn simulate_em_subsampled<M: SecondOrderModel + ?Sized>(
    model: &M,
    theta: &Theta,
    y0: &[f64],
    h_sim: f64,
    n_obs: usize,
    stride: usize,
    key: SimKey,
) -> Result<Trajectory> {
    let d = model.dim();
    if !(h_sim > 0.0) || !h_sim.is_finite() {
        return Err(Error::Argument(format!(
            "h_sim must be positive, got {h_sim}"
        )));
    }
    if n_obs == 0 || stride == 0 {
        return Err(Error::Argument(
            "need at least one step and a positive stride".into(),
        ));
    }
    check_y0(y0, d)?;
    model.check_drift(&theta.beta)?;
    let sigma = to_row_major(&model.diffusion().sigma(&theta.sigma)?);
    let sqrt_h = h_sim.sqrt();

    let mut rng = rng::stream(key.seed, key.replicate);
    let mut x = y0[..d].to_vec();
    let mut v = y0[d..].to_vec();
    let mut f = vec![0.0; d];
    let mut xi = vec![0.0; d];
    let mut xs = Vec::with_capacity((n_obs + 1) * d);
    let mut vs = Vec::with_capacity((n_obs + 1) * d);
    xs.extend_from_slice(&x);
    vs.extend_from_slice(&v);

    for step in 0..n_obs * stride {
        model.drift(&theta.beta, &x, &v, &mut f);
        for z in xi.iter_mut() {
            *z = rng.sample::<f64, _>(StandardNormal);
        }
        for i in 0..d {
            x[i] += h_sim * v[i];
            let mut noise = 0.0;
            for j in 0..d {
                noise += sigma[i * d + j] * xi[j];
            }
            v[i] += h_sim * f[i] + sqrt_h * noise;
        }
        guard(step + 1, &x, &v)?;
        if (step + 1) % stride == 0 {
            xs.extend_from_slice(&x);
            vs.extend_from_slice(&v);
        }
    }

    let mut meta = TrajectoryMeta::new(Provenance::EulerMaruyama);
    meta.seed = Some(key.seed);
    meta.replicate = Some(key.replicate);
    meta.h_sim = Some(h_sim);
    meta.stride = stride;
    meta.model = Some(model.name());
    meta.theta = Some(theta.to_vec());
    meta.y0 = Some(y0.to_vec());
    Trajectory::new(h_sim * stride as f64, 0.0, d, xs, Some(vs), meta)
}

fn guard(step: usize, x: &[f64], v: &[f64]) -> Result<()> {
    let norm2: f64 = x.iter().chain(v).map(|z| z * z).sum();
    if !norm2.is_finite() || norm2 > EXPLOSION_BOUND * EXPLOSION_BOUND {
        return Err(Error::Simulation {
            step,
            reason: format!("state norm {:e} exceeds the explosion bound", norm2.sqrt()),
        });
    }
    Ok(())
}

/// Keeps every `stride`-th point.
pub fn subsample(traj: &Trajectory, stride: usize) -> Result<Trajectory> {
    if stride == 0 || !traj.n_steps().is_multiple_of(stride) {
        return Err(Error::Argument(format!(
            "stride {stride} does not divide the {} steps of the trajectory",
            traj.n_steps()
        )));
    }
    let d = traj.dim;
    let pick =
        |s: &Vec<f64>| -> Vec<f64> { s.chunks(d).step_by(stride).flatten().copied().collect() };
    let mut meta = traj.meta.clone();
    meta.stride *= stride;
    if meta.h_sim.is_none() {
        meta.h_sim = Some(traj.h);
    }
    Trajectory::new(
        traj.h * stride as f64,
        traj.t0,
        d,
        pick(&traj.x),
        traj.v.as_ref().map(pick),
        meta,
    )
}

/// One Strang step f̃_{h/2} ∘ (μ̃_h + ε) ∘ f̃_{h/2} applied in place to the
/// 2d-state `y`, with `exp_ah` = e^{Ãh} in row-major layout.
pub fn strang_step<M: SecondOrderModel + ?Sized>(
    model: &M,
    beta: &[f64],
    exp_ah: &[f64],
    h: f64,
    eps: &[f64],
    y: &mut [f64],
) {
    let d = model.dim();
    let n = 2 * d;
    let mut tmp = vec![0.0; d];
    let mut b = vec![0.0; n];
    {
        let (x, v) = y.split_at_mut(d);
        model.nonlinear_flow(beta, h / 2.0, x, v, &mut tmp);
        v.copy_from_slice(&tmp);
        model.anchor(beta, x, &mut b[..d]);
    }
    let centered: Vec<f64> = y.iter().zip(&b).map(|(a, c)| a - c).collect();
    for i in 0..n {
        let row = &exp_ah[i * n..(i + 1) * n];
        y[i] = row.iter().zip(&centered).map(|(a, c)| a * c).sum::<f64>() + b[i] + eps[i];
    }
    let (x, v) = y.split_at_mut(d);
    model.nonlinear_flow(beta, h / 2.0, x, v, &mut tmp);
    v.copy_from_slice(&tmp);
}

/// Sample path of the Strang splitting scheme with step h.
pub fn simulate_strang<M: SecondOrderModel + ?Sized>(
    model: &M,
    theta: &Theta,
    y0: &[f64],
    h: f64,
    n: usize,
    key: SimKey,
) -> Result<Trajectory> {
    let d = model.dim();
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Argument(format!("step must be positive, got {h}")));
    }
    check_y0(y0, d)?;
    model.check_drift(&theta.beta)?;
    let sst = model.diffusion().sigma_sigma_t_unchecked(&theta.sigma);
    model.diffusion().sigma(&theta.sigma)?;
    let (a_x, a_v) = model.linear_drift(&theta.beta);
    let (exp_ah, omega) = ou_exp_and_covariance(&a_tilde(&a_x, &a_v), &sigma_tilde_sq(&sst), h)?;
    let chol: DMatrix<f64> = psd_factor(&omega)?;
    let chol = to_row_major(&chol);
    let exp_ah = to_row_major(&exp_ah);

    let mut rng = rng::stream(key.seed, key.replicate);
    let mut y = y0.to_vec();
    let mut xi = vec![0.0; 2 * d];
    let mut eps = vec![0.0; 2 * d];
    let mut xs = Vec::with_capacity((n + 1) * d);
    let mut vs = Vec::with_capacity((n + 1) * d);
    xs.extend_from_slice(&y[..d]);
    vs.extend_from_slice(&y[d..]);
    for step in 0..n {
        for z in xi.iter_mut() {
            *z = rng.sample::<f64, _>(StandardNormal);
        }
        for i in 0..2 * d {
            eps[i] = (0..2 * d).map(|j| chol[i * 2 * d + j] * xi[j]).sum();
        }
        strang_step(model, &theta.beta, &exp_ah, h, &eps, &mut y);
        guard(step + 1, &y[..d], &y[d..])?;
        xs.extend_from_slice(&y[..d]);
        vs.extend_from_slice(&y[d..]);
    }

    let mut meta = TrajectoryMeta::new(Provenance::Strang);
    meta.seed = Some(key.seed);
    meta.replicate = Some(key.replicate);
    meta.model = Some(model.name());
    meta.theta = Some(theta.to_vec());
    meta.y0 = Some(y0.to_vec());
    Trajectory::new(h, 0.0, d, xs, Some(vs), meta)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    h: f64,
    t0: f64,
    dim: usize,
    n_points: usize,
    meta: TrajectoryMeta,
}

fn column_names(dim: usize, with_v: bool) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    let name = |p: &str, i: usize| {
        if dim == 1 {
            p.to_string()
        } else {
            format!("{p}{}", i + 1)
        }
    };
    cols.extend((0..dim).map(|i| name("x", i)));
    if with_v {
        cols.extend((0..dim).map(|i| name("v", i)));
    }
    cols
}

/// CSV with columns t, x[, v] (x1..xd, v1..vd when d > 1).
pub fn write_csv<W: Write>(traj: &Trajectory, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(column_names(traj.dim, traj.v.is_some()))?;
    let mut row = Vec::new();
    for k in 0..traj.n_points() {
        row.clear();
        row.push(traj.time(k).to_string());
        row.extend(traj.x_at(k).iter().map(|z| z.to_string()));
        if let Some(v) = traj.v_at(k) {
            row.extend(v.iter().map(|z| z.to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes the CSV and its JSON metadata sidecar next to it.
pub fn write_trajectory(traj: &Trajectory, csv_path: &Path) -> Result<()> {
    write_csv(traj, File::create(csv_path)?)?;
    let side = Sidecar {
        h: traj.h,
        t0: traj.t0,
        dim: traj.dim,
        n_points: traj.n_points(),
        meta: traj.meta.clone(),
    };
    let mut f = File::create(sidecar_path(csv_path))?;
    serde_json::to_writer_pretty(&mut f, &side)?;
    writeln!(f)?;
    Ok(())
}

/// Parses a trajectory CSV. The step is taken from the time column, which
/// must be equidistant.
pub fn read_csv<R: Read>(reader: R) -> Result<Trajectory> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let t_col = find("t").ok_or_else(|| Error::Argument("CSV has no 't' column".into()))?;
    let x_cols: Vec<usize> = match find("x") {
        Some(c) => vec![c],
        None => (1..).map_while(|i| find(&format!("x{i}"))).collect(),
    };
    if x_cols.is_empty() {
        return Err(Error::Argument("CSV has no position columns".into()));
    }
    let dim = x_cols.len();
    let v_cols: Vec<usize> = if dim == 1 {
        find("v").into_iter().collect()
    } else {
        (1..=dim).map_while(|i| find(&format!("v{i}"))).collect()
    };
    let has_v = v_cols.len() == dim;

    let parse = |s: &str, line: usize| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::Argument(format!("unparseable number '{s}' on data row {line}")))
    };
    let (mut ts, mut xs, mut vs) = (Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        ts.push(parse(&rec[t_col], line + 1)?);
        for &c in &x_cols {
            xs.push(parse(&rec[c], line + 1)?);
        }
        if has_v {
            for &c in &v_cols {
                vs.push(parse(&rec[c], line + 1)?);
            }
        }
    }
    if ts.len() < 2 {
        return Err(Error::Argument("trajectory needs at least two rows".into()));
    }
    let t0 = ts[0];
    let h = (ts[ts.len() - 1] - t0) / (ts.len() - 1) as f64;
    for (k, t) in ts.iter().enumerate() {
        let expected = t0 + k as f64 * h;
        if (t - expected).abs() > 1e-9 * expected.abs().max(h).max(1.0) {
            return Err(Error::Argument(format!(
                "time column is not equidistant at row {}",
                k + 1
            )));
        }
    }
    Trajectory::new(
        h,
        t0,
        dim,
        xs,
        has_v.then_some(vs),
        TrajectoryMeta::new(Provenance::External),
    )
}

/// Reads a CSV trajectory, taking h, t0 and provenance from the sidecar when
/// one exists.
pub fn read_trajectory(csv_path: &Path) -> Result<Trajectory> {
    let mut traj = read_csv(File::open(csv_path)?)?;
    let side_path = sidecar_path(csv_path);
    if side_path.exists() {
        let side: Sidecar = serde_json::from_reader(File::open(side_path)?)?;
        if side.dim != traj.dim || side.n_points != traj.n_points() {
            return Err(Error::Argument("sidecar does not match the CSV".into()));
        }
        traj.h = side.h;
        traj.t0 = side.t0;
        traj.meta = side.meta;
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kramers::{kramers_model, KramersParams};
    use crate::model::{DiffusionParam, Transform};
    use crate::ou::ou_mean;
    use nalgebra::DVector;

    /// F ≡ 0 with an OU split A_x = A_v = 0, N = 0.
    pub(crate) struct FreeParticle;

    impl SecondOrderModel for FreeParticle {
        fn name(&self) -> String {
            "free".into()
        }
        fn dim(&self) -> usize {
            1
        }
        fn drift_param_names(&self) -> Vec<String> {
            vec![]
        }
        fn diffusion(&self) -> DiffusionParam {
            DiffusionParam::DiagonalVariance { dim: 1 }
        }
        fn drift(&self, _: &[f64], _: &[f64], _: &[f64], out: &mut [f64]) {
            out[0] = 0.0;
        }
        fn linear_drift(&self, _: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
            (DMatrix::zeros(1, 1), DMatrix::zeros(1, 1))
        }
        fn anchor(&self, _: &[f64], _: &[f64], out: &mut [f64]) {
            out[0] = 0.0;
        }
        fn nonlinear(&self, _: &[f64], _: &[f64], _: &[f64], out: &mut [f64]) {
            out[0] = 0.0;
        }
        fn drift_transforms(&self) -> Vec<Transform> {
            vec![]
        }
    }

    #[test]
    fn free_motion_without_noise() {
        let theta = Theta::new(vec![], vec![0.0]);
        let tr = simulate_em(
            &FreeParticle,
            &theta,
            &[0.5, 2.0],
            0.01,
            100,
            SimKey::new(1),
        )
        .unwrap();
        for k in 0..=100 {
            assert!((tr.x_at(k)[0] - (0.5 + k as f64 * 0.01 * 2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn em_is_deterministic_and_subsampling_matches() {
        let m = kramers_model();
        let th = KramersParams::new(6.5, 1.0, 0.6, 0.1).theta();
        let y0 = m.default_initial_state(&th.beta);
        let a = simulate_em(&m, &th, &y0, 1e-3, 2000, SimKey::new(9)).unwrap();
        let b = simulate_em(&m, &th, &y0, 1e-3, 2000, SimKey::new(9)).unwrap();
        assert_eq!(a, b);
        let sub = subsample(&a, 100).unwrap();
        let direct = simulate_em_subsampled(&m, &th, &y0, 1e-3, 20, 100, SimKey::new(9)).unwrap();
        assert_eq!(sub.x, direct.x);
        assert_eq!(sub.v, direct.v);
        assert!((sub.h - 0.1).abs() < 1e-15);
        assert_eq!(sub.n_points(), 21);
    }

    #[test]
    fn subsample_identity_and_errors() {
        let tr = Trajectory::from_positions((0..11).map(|k| k as f64).collect(), 0.5).unwrap();
        assert_eq!(subsample(&tr, 1).unwrap().x, tr.x);
        assert!(subsample(&tr, 3).is_err());
        assert!(subsample(&tr, 0).is_err());
    }

    #[test]
    fn explosion_is_reported_with_step() {
        let m = kramers_model();
        let th = KramersParams::new(0.0, 1.0, 0.6, 0.1).theta();
        let err = simulate_em(&m, &th, &[1e5, 0.0], 0.1, 100, SimKey::new(1)).unwrap_err();
        assert!(matches!(err, Error::Simulation { .. }));
    }

    #[test]
    fn strang_without_noise_or_nonlinearity_is_ou_mean() {
        let theta = Theta::new(vec![], vec![0.0]);
        let tr =
            simulate_strang(&FreeParticle, &theta, &[0.3, -1.0], 0.1, 5, SimKey::new(3)).unwrap();
        let a = model_a_tilde_free();
        let mut y = DVector::from_vec(vec![0.3, -1.0]);
        for k in 1..=5 {
            y = ou_mean(&a, &DVector::zeros(2), 0.1, &y).unwrap();
            assert!((tr.x_at(k)[0] - y[0]).abs() < 1e-14);
            assert!((tr.v_at(k).unwrap()[0] - y[1]).abs() < 1e-14);
        }
    }

    fn model_a_tilde_free() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0])
    }

    #[test]
    fn strang_step_zero_noise_is_composition() {
        let m = kramers_model();
        let beta = [6.5, 1.0, 0.6];
        let h = 0.1;
        let a = a_tilde(&m.linear_drift(&beta).0, &m.linear_drift(&beta).1);
        let e = crate::linalg::expm(&(&a * h)).unwrap();
        let mut y = vec![0.4, -0.3];
        strang_step(&m, &beta, &to_row_major(&e), h, &[0.0, 0.0], &mut y);

        let n = |x: f64| 1.0 * x - 0.6 * x.powi(3) + 2.0 * (x - (1.0f64 / 0.6).sqrt());
        let v1 = -0.3 + h / 2.0 * n(0.4);
        let w = (1.0f64 / 0.6).sqrt();
        let mid = &e * DVector::from_vec(vec![0.4 - w, v1]);
        let (x2, v2) = (mid[0] + w, mid[1]);
        let v3 = v2 + h / 2.0 * n(x2);
        assert!((y[0] - x2).abs() < 1e-15);
        assert!((y[1] - v3).abs() < 1e-14);
    }

    #[test]
    fn csv_roundtrip_with_sidecar() {
        let m = kramers_model();
        let th = KramersParams::new(6.5, 1.0, 0.6, 0.1).theta();
        let y0 = m.default_initial_state(&th.beta);
        let tr = simulate_strang(&m, &th, &y0, 0.1, 50, SimKey::new(5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("path.csv");
        write_trajectory(&tr, &p).unwrap();
        let back = read_trajectory(&p).unwrap();
        assert_eq!(back, tr);
    }
}
