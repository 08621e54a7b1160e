use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use hyposplit_ffi::*;

const THETA0: [f64; 4] = [6.5, 1.0, 0.6, 0.1];
const TABLE1: [f64; 4] = [62.5, 296.7, 219.1, 9125.0];

fn last_error() -> String {
    let p = hs_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn simulate(theta: &[f64; 4], n: usize, seed: u64) -> *mut HsTrajectory {
    let mut t = ptr::null_mut();
    let st = unsafe { hs_simulate_kramers(theta.as_ptr(), 0.1, 1e-3, n, seed, &mut t) };
    assert_eq!(st, HsStatus::Ok);
    t
}

#[test]
fn tau_matches_fitted_values() {
    let mut tau = 0.0;
    assert_eq!(
        unsafe { hs_kramers_tau(TABLE1.as_ptr(), &mut tau) },
        HsStatus::Ok
    );
    assert!((tau - 3.97).abs() < 0.01, "{tau}");
    let (mut t, mut lo, mut hi) = (0.0, 0.0, 0.0);
    let st = unsafe {
        hs_kramers_tau_interval(
            TABLE1.as_ptr(),
            HsObjective::Pr,
            2500,
            0.02,
            0.05,
            &mut t,
            &mut lo,
            &mut hi,
        )
    };
    assert_eq!(st, HsStatus::Ok);
    assert_eq!(t, tau);
    assert!(
        (lo - 3.00).abs() < 0.05 && (hi - 4.94).abs() < 0.05,
        "[{lo}, {hi}]"
    );
}

#[test]
fn errors_set_status_and_message() {
    let mut tau = 0.0;
    assert_eq!(
        unsafe { hs_kramers_tau(ptr::null(), &mut tau) },
        HsStatus::NullPointer
    );
    assert!(last_error().contains("theta"));
    let bad = [1.0, 1.0, 1.0, -1.0];
    assert_eq!(
        unsafe { hs_kramers_tau(bad.as_ptr(), &mut tau) },
        HsStatus::Domain
    );
    let mut t = ptr::null_mut();
    let st = unsafe { hs_simulate_kramers(THETA0.as_ptr(), 0.1, 0.03, 10, 1, &mut t) };
    assert_eq!(st, HsStatus::InvalidArgument);
    assert!(t.is_null());
    assert!(last_error().contains("multiple"));
    let path = CString::new("/nonexistent/path.csv").unwrap();
    assert_eq!(
        unsafe { hs_trajectory_read_csv(path.as_ptr(), &mut t) },
        HsStatus::Io
    );
}

#[test]
fn simulated_path_round_trips_through_buffers() {
    let t = simulate(&THETA0, 200, 3);
    unsafe {
        assert_eq!(hs_trajectory_len(t), 201);
        assert_eq!(hs_trajectory_step(t), 0.1);
        assert!(hs_trajectory_has_velocities(t));
        let mut x = vec![0.0; 201];
        let mut v = vec![0.0; 201];
        assert_eq!(
            hs_trajectory_positions(t, x.as_mut_ptr(), x.len()),
            HsStatus::Ok
        );
        assert_eq!(
            hs_trajectory_velocities(t, v.as_mut_ptr(), v.len()),
            HsStatus::Ok
        );
        assert_eq!(
            hs_trajectory_positions(t, x.as_mut_ptr(), 10),
            HsStatus::InvalidArgument
        );

        let mut copy = ptr::null_mut();
        assert_eq!(
            hs_trajectory_new(x.as_ptr(), ptr::null(), x.len(), 0.1, &mut copy),
            HsStatus::Ok
        );
        assert!(!hs_trajectory_has_velocities(copy));
        assert_eq!(
            hs_trajectory_velocities(copy, v.as_mut_ptr(), v.len()),
            HsStatus::InvalidArgument
        );
        let mut back = vec![0.0; 201];
        assert_eq!(
            hs_trajectory_positions(copy, back.as_mut_ptr(), back.len()),
            HsStatus::Ok
        );
        assert_eq!(back, x);
        hs_trajectory_free(copy);
        hs_trajectory_free(t);
        hs_trajectory_free(ptr::null_mut());
    }
}

#[test]
fn estimate_and_intervals() {
    let t = simulate(&THETA0, 2000, 5);
    unsafe {
        let mut e = ptr::null_mut();
        assert_eq!(
            hs_estimate(t, HsObjective::Pr, HsScheme::Forward, &mut e),
            HsStatus::Ok
        );
        assert!(hs_estimate_converged(e));
        assert!(hs_estimate_objective(e).is_finite());
        let mut th = [0.0; 4];
        assert_eq!(hs_estimate_theta(e, th.as_mut_ptr()), HsStatus::Ok);
        for info in [HsInfo::Empirical, HsInfo::Quadrature] {
            let (mut lo, mut hi) = ([0.0; 4], [0.0; 4]);
            assert_eq!(
                hs_estimate_intervals(e, info, 0.05, lo.as_mut_ptr(), hi.as_mut_ptr()),
                HsStatus::Ok
            );
            for i in 0..4 {
                assert!(
                    lo[i] < th[i] && th[i] < hi[i],
                    "{info:?} {i}: {} {} {}",
                    lo[i],
                    th[i],
                    hi[i]
                );
            }
        }
        hs_estimate_free(e);

        // Complete-data objectives need velocities.
        let mut x = vec![0.0; 2001];
        hs_trajectory_positions(t, x.as_mut_ptr(), x.len());
        let mut partial = ptr::null_mut();
        hs_trajectory_new(x.as_ptr(), ptr::null(), x.len(), 0.1, &mut partial);
        let mut e = ptr::null_mut();
        assert_ne!(
            hs_estimate(partial, HsObjective::Cf, HsScheme::Forward, &mut e),
            HsStatus::Ok
        );
        assert!(e.is_null());
        hs_trajectory_free(partial);
        hs_trajectory_free(t);
    }
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(hs_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"hyposplit.h\"\n\
         int main(void) {\n\
           double theta[HS_N_PARAMS] = {62.5, 296.7, 219.1, 9125.0};\n\
           double tau;\n\
           HsTrajectory *t = NULL;\n\
           HsStatus s = hs_kramers_tau(theta, &tau);\n\
           hs_trajectory_free(t);\n\
           return s == HS_STATUS_OK ? 0 : 1;\n\
         }\n",
    )
    .unwrap();
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&src)
        .output()
        .expect("a C compiler is available");
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
