//! Estimation inputs built from a trajectory: consecutive state pairs for
//! complete observations, and position triples with finite-difference
//! velocities for partial observations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulate::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservationKind {
    Complete,
    Partial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DifferenceScheme {
    #[default]
    Forward,
    Backward,
    Central,
}

impl std::str::FromStr for DifferenceScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "forward" => Ok(Self::Forward),
            "backward" => Ok(Self::Backward),
            "central" => Ok(Self::Central),
            _ => Err(Error::Argument(format!("unknown difference scheme '{s}'"))),
        }
    }
}

/// Velocity proxies u_k attributed to time indices `index[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDifference {
    pub dim: usize,
    pub values: Vec<f64>,
    pub index: Vec<usize>,
}

impl FiniteDifference {
    pub fn at(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }
}

/// Finite-difference velocities of a flattened position series.
///
/// backward: u_k = (x_k − x_{k−1})/h for k = 1..N;
/// forward: u_k = (x_{k+1} − x_k)/h for k = 0..N−1;
/// central: the average of both for k = 1..N−1.
pub fn finite_difference(
    x: &[f64],
    dim: usize,
    h: f64,
    scheme: DifferenceScheme,
) -> Result<FiniteDifference> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Argument(format!("step must be positive, got {h}")));
    }
    if dim == 0 || !x.len().is_multiple_of(dim) {
        return Err(Error::Argument(
            "series length does not match the dimension".into(),
        ));
    }
    let n_points = x.len() / dim;
    let min_len = if scheme == DifferenceScheme::Central {
        3
    } else {
        2
    };
    if n_points < min_len {
        return Err(Error::Argument(format!(
            "{scheme:?} differences need at least {min_len} points"
        )));
    }
    let diff = |k: usize, i: usize| (x[(k + 1) * dim + i] - x[k * dim + i]) / h;
    let index: Vec<usize> = match scheme {
        DifferenceScheme::Backward => (1..n_points).collect(),
        DifferenceScheme::Forward => (0..n_points - 1).collect(),
        DifferenceScheme::Central => (1..n_points - 1).collect(),
    };
    let mut values = Vec::with_capacity(index.len() * dim);
    for &k in &index {
        for i in 0..dim {
            values.push(match scheme {
                DifferenceScheme::Backward => diff(k - 1, i),
                DifferenceScheme::Forward => diff(k, i),
                DifferenceScheme::Central => 0.5 * (diff(k - 1, i) + diff(k, i)),
            });
        }
    }
    Ok(FiniteDifference { dim, values, index })
}

/// Frames (lagged state, current state) in a flat layout, 2d values each.
///
/// Complete: frame k = 1..N pairs (y_{k−1}, y_k). Partial: with velocity
/// proxies u_k, frame k pairs (x_{k−1}, u_{k−1}) with (x_k, u_k); under the
/// forward scheme this is (x_{k−1}, Δx_k) and (x_k, Δx_{k+1}) for k = 1..N−1.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub kind: ObservationKind,
    pub scheme: Option<DifferenceScheme>,
    pub h: f64,
    pub dim: usize,
    /// Number of observation intervals N of the underlying trajectory.
    pub n: usize,
    pub lagged: Vec<f64>,
    pub current: Vec<f64>,
    /// Raw positions of the trajectory.
    pub x: Vec<f64>,
    /// Raw velocities, complete observations only.
    pub v: Option<Vec<f64>>,
}

impl ObservationSet {
    pub fn n_frames(&self) -> usize {
        self.lagged.len() / (2 * self.dim)
    }

    pub fn lagged_at(&self, j: usize) -> &[f64] {
        &self.lagged[j * 2 * self.dim..(j + 1) * 2 * self.dim]
    }

    pub fn current_at(&self, j: usize) -> &[f64] {
        &self.current[j * 2 * self.dim..(j + 1) * 2 * self.dim]
    }
}

pub fn build_observations(
    traj: &Trajectory,
    kind: ObservationKind,
    scheme: DifferenceScheme,
) -> Result<ObservationSet> {
    let d = traj.dim;
    let n = traj.n_steps();
    let (mut lagged, mut current) = (Vec::new(), Vec::new());
    let scheme_used = match kind {
        ObservationKind::Complete => {
            let v = traj
                .v
                .as_ref()
                .ok_or_else(|| Error::Argument("complete observations need velocities".into()))?;
            if n < 1 {
                return Err(Error::Argument("need at least two points".into()));
            }
            for k in 1..=n {
                lagged.extend_from_slice(&traj.x[(k - 1) * d..k * d]);
                lagged.extend_from_slice(&v[(k - 1) * d..k * d]);
                current.extend_from_slice(&traj.x[k * d..(k + 1) * d]);
                current.extend_from_slice(&v[k * d..(k + 1) * d]);
            }
            None
        }
        ObservationKind::Partial => {
            let fd = finite_difference(&traj.x, d, traj.h, scheme)?;
            if fd.index.len() < 2 {
                return Err(Error::Argument(
                    "too few points for partial observations".into(),
                ));
            }
            for j in 1..fd.index.len() {
                let (k_prev, k) = (fd.index[j - 1], fd.index[j]);
                lagged.extend_from_slice(traj.x_at(k_prev));
                lagged.extend_from_slice(fd.at(j - 1));
                current.extend_from_slice(traj.x_at(k));
                current.extend_from_slice(fd.at(j));
            }
            Some(scheme)
        }
    };
    Ok(ObservationSet {
        kind,
        scheme: scheme_used,
        h: traj.h,
        dim: d,
        n,
        lagged,
        current,
        x: traj.x.clone(),
        v: if kind == ObservationKind::Complete {
            traj.v.clone()
        } else {
            None
        },
    })
}
