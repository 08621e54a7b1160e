//! C ABI over the Kramers oscillator part of `hyposplit`.
//!
//! Every fallible function returns an [`HsStatus`]; on failure the message is
//! available from [`hs_last_error`] on the same thread. Handles are opaque and
//! must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use hyposplit::asymptotics::{confidence_intervals, kramers_tau, tau_ci_delta, AsymptoticInfo};
use hyposplit::objectives::ObjectiveKind;
use hyposplit::observe::{build_observations, DifferenceScheme};
use hyposplit::optimize::{estimate, EstimateOptions, EstimationResult};
use hyposplit::simulate::{
    read_trajectory, simulate_em_subsampled, Provenance, SimKey, Trajectory, TrajectoryMeta,
};
use hyposplit::{kramers_model, Error, KramersParams, SecondOrderModel, Theta};

/// Number of Kramers parameters (η, a, b, σ²).
pub const HS_N_PARAMS: usize = 4;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    Numeric = 4,
    Simulation = 5,
    Estimation = 6,
    Io = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HsObjective {
    Cf = 0,
    Cr = 1,
    Pf = 2,
    Pr = 3,
    EmPr = 4,
    EmCr = 5,
    LgCf = 6,
}

impl From<HsObjective> for ObjectiveKind {
    fn from(k: HsObjective) -> Self {
        match k {
            HsObjective::Cf => ObjectiveKind::CF,
            HsObjective::Cr => ObjectiveKind::CR,
            HsObjective::Pf => ObjectiveKind::PF,
            HsObjective::Pr => ObjectiveKind::PR,
            HsObjective::EmPr => ObjectiveKind::EmPr,
            HsObjective::EmCr => ObjectiveKind::EmCr,
            HsObjective::LgCf => ObjectiveKind::LgCf,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HsScheme {
    Forward = 0,
    Backward = 1,
    Central = 2,
}

impl From<HsScheme> for DifferenceScheme {
    fn from(s: HsScheme) -> Self {
        match s {
            HsScheme::Forward => DifferenceScheme::Forward,
            HsScheme::Backward => DifferenceScheme::Backward,
            HsScheme::Central => DifferenceScheme::Central,
        }
    }
}

/// Source of the asymptotic information used for intervals.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HsInfo {
    /// Ergodic averages over the observed path.
    Empirical = 0,
    /// Quadrature against the invariant density at θ̂.
    Quadrature = 1,
}

/// Observed path of the Kramers oscillator.
pub struct HsTrajectory {
    inner: Trajectory,
}

/// Fitted parameters together with the data they came from.
pub struct HsEstimate {
    result: EstimationResult,
    obs: hyposplit::observe::ObservationSet,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> HsStatus {
    match err {
        Error::Domain(_) => HsStatus::Domain,
        Error::Argument(_) | Error::Config(_) => HsStatus::InvalidArgument,
        Error::Numeric(_) => HsStatus::Numeric,
        Error::Simulation { .. } => HsStatus::Simulation,
        Error::Estimation(_) => HsStatus::Estimation,
        Error::Ingest(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => HsStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Arg(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

/// Runs `f`, records any failure, and converts it to a status.
fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> HsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HsStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            HsStatus::NullPointer
        }
        Ok(Err(Failure::Arg(msg))) => {
            set_error(format!("invalid argument: {msg}"));
            HsStatus::InvalidArgument
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            HsStatus::Panic
        }
    }
}

fn nonnull<T>(p: *const T, what: &'static str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::Null(what))
    } else {
        Ok(())
    }
}

unsafe fn params(theta: *const f64) -> Result<KramersParams, Failure> {
    nonnull(theta, "theta")?;
    let v = std::slice::from_raw_parts(theta, HS_N_PARAMS);
    Ok(KramersParams::from_slice(v)?)
}

/// Message of the last failure on this thread, or NULL if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Kramers mean waiting time between the wells.
///
/// # Safety
/// `theta` points to 4 doubles (η, a, b, σ²); `out_tau` is writable.
#[no_mangle]
pub unsafe extern "C" fn hs_kramers_tau(theta: *const f64, out_tau: *mut f64) -> HsStatus {
    guard(|| {
        nonnull(out_tau, "out_tau")?;
        let p = params(theta)?;
        *out_tau = kramers_tau(&p)?.tau;
        Ok(())
    })
}

/// Delta-method interval for τ at level 1 − α, using the quadrature
/// information of `objective` for a design of `n` intervals of width `h`.
///
/// # Safety
/// `theta` points to 4 doubles; the three outputs are writable.
#[no_mangle]
pub unsafe extern "C" fn hs_kramers_tau_interval(
    theta: *const f64,
    objective: HsObjective,
    n: usize,
    h: f64,
    alpha: f64,
    out_tau: *mut f64,
    out_lower: *mut f64,
    out_upper: *mut f64,
) -> HsStatus {
    guard(|| {
        nonnull(out_tau, "out_tau")?;
        nonnull(out_lower, "out_lower")?;
        nonnull(out_upper, "out_upper")?;
        let p = params(theta)?;
        let (cov, _) = AsymptoticInfo::kramers(&p, objective.into(), n, h)?.covariance();
        let ci = tau_ci_delta(&p, &cov, alpha)?;
        *out_tau = ci.tau;
        *out_lower = ci.lower;
        *out_upper = ci.upper;
        Ok(())
    })
}

/// Simulates `n` intervals of width `h` by Euler–Maruyama at `h_sim`, which
/// must divide `h`. The path starts in the right well at rest.
///
/// # Safety
/// `theta` points to 4 doubles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hs_simulate_kramers(
    theta: *const f64,
    h: f64,
    h_sim: f64,
    n: usize,
    seed: u64,
    out: *mut *mut HsTrajectory,
) -> HsStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = ptr::null_mut();
        let p = params(theta)?;
        if !(h > 0.0 && h_sim > 0.0) {
            return Err(Failure::Arg("h and h_sim must be positive".into()));
        }
        let ratio = h / h_sim;
        let stride = ratio.round();
        if stride < 1.0 || ((ratio - stride) / ratio).abs() > 1e-12 {
            return Err(Failure::Arg(format!(
                "h = {h} is not a multiple of h_sim = {h_sim}"
            )));
        }
        let m = kramers_model();
        let t = p.theta();
        let y0 = m.default_initial_state(&t.beta);
        let traj =
            simulate_em_subsampled(&m, &t, &y0, h_sim, n, stride as usize, SimKey::new(seed))?;
        *out = Box::into_raw(Box::new(HsTrajectory { inner: traj }));
        Ok(())
    })
}

/// Builds a trajectory from `n_points` positions sampled every `h`, with
/// velocities when `v` is not NULL.
///
/// # Safety
/// `x` points to `n_points` doubles, `v` is NULL or points to `n_points`
/// doubles, and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hs_trajectory_new(
    x: *const f64,
    v: *const f64,
    n_points: usize,
    h: f64,
    out: *mut *mut HsTrajectory,
) -> HsStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = ptr::null_mut();
        nonnull(x, "x")?;
        let xs = std::slice::from_raw_parts(x, n_points).to_vec();
        let vs = (!v.is_null()).then(|| std::slice::from_raw_parts(v, n_points).to_vec());
        let traj = Trajectory::new(h, 0.0, 1, xs, vs, TrajectoryMeta::new(Provenance::External))?;
        *out = Box::into_raw(Box::new(HsTrajectory { inner: traj }));
        Ok(())
    })
}

/// Reads a trajectory CSV written by the `hyposplit` command line tool.
///
/// # Safety
/// `path` is a NUL-terminated UTF-8 string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hs_trajectory_read_csv(
    path: *const c_char,
    out: *mut *mut HsTrajectory,
) -> HsStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = ptr::null_mut();
        nonnull(path, "path")?;
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure::Arg("path is not UTF-8".into()))?;
        let traj = read_trajectory(Path::new(p))?;
        if traj.dim != 1 {
            return Err(Failure::Arg(format!(
                "expected a one-dimensional path, got dimension {}",
                traj.dim
            )));
        }
        *out = Box::into_raw(Box::new(HsTrajectory { inner: traj }));
        Ok(())
    })
}

/// Number of sampled points, N + 1; zero for NULL.
///
/// # Safety
/// `traj` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hs_trajectory_len(traj: *const HsTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.inner.n_points())
}

/// Sampling step h; NaN for NULL.
///
/// # Safety
/// `traj` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hs_trajectory_step(traj: *const HsTrajectory) -> f64 {
    traj.as_ref().map_or(f64::NAN, |t| t.inner.h)
}

/// Whether the trajectory carries velocities.
///
/// # Safety
/// `traj` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hs_trajectory_has_velocities(traj: *const HsTrajectory) -> bool {
    traj.as_ref().is_some_and(|t| t.inner.v.is_some())
}

/// Copies the positions into `out`, which holds `capacity` doubles.
///
/// # Safety
/// `traj` is a live handle and `out` points to `capacity` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hs_trajectory_positions(
    traj: *const HsTrajectory,
    out: *mut f64,
    capacity: usize,
) -> HsStatus {
    guard(|| copy_series(traj, out, capacity, |t| Some(&t.x)))
}

/// Copies the velocities into `out`, which holds `capacity` doubles.
///
/// # Safety
/// `traj` is a live handle and `out` points to `capacity` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hs_trajectory_velocities(
    traj: *const HsTrajectory,
    out: *mut f64,
    capacity: usize,
) -> HsStatus {
    guard(|| copy_series(traj, out, capacity, |t| t.v.as_ref()))
}

unsafe fn copy_series<F>(
    traj: *const HsTrajectory,
    out: *mut f64,
    capacity: usize,
    pick: F,
) -> Result<(), Failure>
where
    F: Fn(&Trajectory) -> Option<&Vec<f64>>,
{
    nonnull(traj, "traj")?;
    nonnull(out, "out")?;
    let series =
        pick(&(*traj).inner).ok_or_else(|| Failure::Arg("trajectory has no velocities".into()))?;
    if capacity < series.len() {
        return Err(Failure::Arg(format!(
            "buffer holds {capacity} values, need {}",
            series.len()
        )));
    }
    ptr::copy_nonoverlapping(series.as_ptr(), out, series.len());
    Ok(())
}

/// # Safety
/// `traj` is NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hs_trajectory_free(traj: *mut HsTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Fits the Kramers oscillator with `objective`. Complete-data objectives
/// need velocities; partial ones use finite differences under `scheme`.
///
/// # Safety
/// `traj` is a live handle and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hs_estimate(
    traj: *const HsTrajectory,
    objective: HsObjective,
    scheme: HsScheme,
    out: *mut *mut HsEstimate,
) -> HsStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = ptr::null_mut();
        nonnull(traj, "traj")?;
        let kind: ObjectiveKind = objective.into();
        let obs = build_observations(&(*traj).inner, kind.observation(), scheme.into())?;
        let result = estimate(&kramers_model(), &obs, kind, &EstimateOptions::default())?;
        *out = Box::into_raw(Box::new(HsEstimate { result, obs }));
        Ok(())
    })
}

/// Copies θ̂ = (η, a, b, σ²) into `out`.
///
/// # Safety
/// `est` is a live handle and `out` points to 4 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hs_estimate_theta(est: *const HsEstimate, out: *mut f64) -> HsStatus {
    guard(|| {
        nonnull(est, "est")?;
        nonnull(out, "out")?;
        let v = (*est).result.theta_vec();
        ptr::copy_nonoverlapping(v.as_ptr(), out, HS_N_PARAMS);
        Ok(())
    })
}

/// Objective value at θ̂; NaN for NULL.
///
/// # Safety
/// `est` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hs_estimate_objective(est: *const HsEstimate) -> f64 {
    est.as_ref().map_or(f64::NAN, |e| e.result.objective_value)
}

/// Whether the optimizer met its tolerance.
///
/// # Safety
/// `est` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hs_estimate_converged(est: *const HsEstimate) -> bool {
    est.as_ref().is_some_and(|e| e.result.converged)
}

/// Wald intervals at level 1 − α for each of the 4 parameters.
///
/// # Safety
/// `est` is a live handle; `lower` and `upper` point to 4 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hs_estimate_intervals(
    est: *const HsEstimate,
    info: HsInfo,
    alpha: f64,
    lower: *mut f64,
    upper: *mut f64,
) -> HsStatus {
    guard(|| {
        nonnull(est, "est")?;
        nonnull(lower, "lower")?;
        nonnull(upper, "upper")?;
        let e = &*est;
        let th: &Theta = &e.result.theta_hat;
        let ai = match info {
            HsInfo::Empirical => {
                AsymptoticInfo::empirical(&kramers_model(), th, &e.obs, e.result.kind)?
            }
            HsInfo::Quadrature => AsymptoticInfo::kramers(
                &KramersParams::from_theta(th)?,
                e.result.kind,
                e.result.n,
                e.result.h,
            )?,
        };
        let ci = confidence_intervals(th, &ai, alpha)?;
        for (i, iv) in ci.intervals.iter().enumerate() {
            *lower.add(i) = iv.lower;
            *upper.add(i) = iv.upper;
        }
        Ok(())
    })
}

/// # Safety
/// `est` is NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hs_estimate_free(est: *mut HsEstimate) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}
