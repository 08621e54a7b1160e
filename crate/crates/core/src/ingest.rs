//! Turns an irregular raw time series into an equidistant position series:
//! time filtering, binning by averaging, optional negative logarithm,
//! linear imputation of empty bins, and centering.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulate::{Provenance, Trajectory, TrajectoryMeta};

/// Tolerance added before flooring t/w so that times sitting exactly on a
/// bin edge are not pushed into the previous bin by rounding.
const EDGE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueTransform {
    #[default]
    None,
    NegLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Impute {
    #[default]
    Linear,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSpec {
    pub source: PathBuf,
    #[serde(default = "default_time")]
    pub time_column: String,
    #[serde(default = "default_value")]
    pub value_column: String,
    pub bin_width: f64,
    #[serde(default)]
    pub transform: ValueTransform,
    #[serde(default)]
    pub center: bool,
    #[serde(default)]
    pub time_range: Option<[f64; 2]>,
    #[serde(default)]
    pub impute: Impute,
}

fn default_time() -> String {
    "t".into()
}

fn default_value() -> String {
    "x".into()
}

impl IngestSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.bin_width > 0.0) || !self.bin_width.is_finite() {
            return Err(Error::Config(format!(
                "bin_width must be positive, got {}",
                self.bin_width
            )));
        }
        if let Some([lo, hi]) = self.time_range {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(format!("invalid time_range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub n_records: usize,
    pub n_bins: usize,
    pub imputed_bins: Vec<usize>,
    pub trimmed_leading: usize,
    pub trimmed_trailing: usize,
    /// Value subtracted when centering, 0 otherwise.
    pub center_value: f64,
    /// Time of the first bin center.
    pub t0: f64,
}

/// Reads `time_column` and `value_column` from the source CSV. Rows with an
/// empty value cell are skipped.
pub fn read_records(
    path: &Path,
    time_column: &str,
    value_column: &str,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Error::Ingest(format!("cannot read {}: {e}", path.display())))?;
    let headers: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Ingest(format!("column '{name}' not found in {}", path.display()))
        })
    };
    let (tc, vc) = (find(time_column)?, find(value_column)?);
    let (mut ts, mut vs) = (Vec::new(), Vec::new());
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let (t, v) = (rec[tc].trim(), rec[vc].trim());
        if v.is_empty() || t.is_empty() {
            continue;
        }
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|_| {
                Error::Ingest(format!("unparseable number '{s}' on data row {}", row + 1))
            })
        };
        let (t, v) = (parse(t)?, parse(v)?);
        if v.is_nan() {
            continue;
        }
        ts.push(t);
        vs.push(v);
    }
    Ok((ts, vs))
}

pub fn ingest_series(spec: &IngestSpec) -> Result<(Trajectory, IngestReport)> {
    let (t, v) = read_records(&spec.source, &spec.time_column, &spec.value_column)?;
    ingest_records(&t, &v, spec)
}

/// Bins are [i·w, (i+1)·w) with timestamps at their centers. Values are
/// averaged per bin, then transformed; empty interior bins are imputed
/// linearly and empty bins at either end are trimmed. Centering subtracts
/// the mean over all remaining bins, imputed ones included.
pub fn ingest_records(
    times: &[f64],
    values: &[f64],
    spec: &IngestSpec,
) -> Result<(Trajectory, IngestReport)> {
    spec.validate()?;
    if times.len() != values.len() {
        return Err(Error::Ingest(
            "time and value columns differ in length".into(),
        ));
    }
    let w = spec.bin_width;
    let keep = |t: f64| match spec.time_range {
        Some([lo, hi]) => t >= lo && t < hi,
        None => true,
    };
    let index = |t: f64| (t / w + EDGE_TOL).floor() as i64;
    let recs: Vec<(i64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(t, _)| keep(**t))
        .map(|(t, v)| (index(*t), *v))
        .collect();
    if recs.is_empty() {
        return Err(Error::Ingest(
            "no observations in the selected time range".into(),
        ));
    }
    let (first, last) = match spec.time_range {
        Some([lo, hi]) => (index(lo), ((hi / w - EDGE_TOL).ceil() as i64) - 1),
        None => (
            recs.iter().map(|r| r.0).min().expect("nonempty"),
            recs.iter().map(|r| r.0).max().expect("nonempty"),
        ),
    };
    let n_bins = (last - first + 1) as usize;
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for (i, v) in &recs {
        let j = (i - first) as usize;
        sums[j] += v;
        counts[j] += 1;
    }
    let mut binned: Vec<Option<f64>> = Vec::with_capacity(n_bins);
    for (s, c) in sums.iter().zip(&counts) {
        if *c == 0 {
            binned.push(None);
            continue;
        }
        let avg = s / *c as f64;
        let val = match spec.transform {
            ValueTransform::None => avg,
            ValueTransform::NegLog => {
                if !(avg > 0.0) {
                    return Err(Error::Ingest(format!(
                        "negative log of non-positive bin average {avg}"
                    )));
                }
                -avg.ln()
            }
        };
        binned.push(Some(val));
    }

    let lead = binned.iter().take_while(|b| b.is_none()).count();
    if lead == n_bins {
        return Err(Error::Ingest("every bin is empty".into()));
    }
    let trail = binned.iter().rev().take_while(|b| b.is_none()).count();
    if lead + trail > 0 {
        log::warn!("trimmed {lead} leading and {trail} trailing empty bins");
    }
    let core = &binned[lead..n_bins - trail];
    let mut imputed = Vec::new();
    let mut out: Vec<f64> = Vec::with_capacity(core.len());
    let mut k = 0;
    while k < core.len() {
        match core[k] {
            Some(v) => {
                out.push(v);
                k += 1;
            }
            None => {
                if spec.impute == Impute::Fail {
                    return Err(Error::Ingest(format!(
                        "bin {} is empty and imputation is disabled",
                        lead + k
                    )));
                }
                let left = out[k - 1];
                let gap_end = k + core[k..].iter().take_while(|b| b.is_none()).count();
                let right = core[gap_end].expect("gap ends at an observed bin");
                let span = (gap_end - k + 1) as f64;
                for j in k..gap_end {
                    let frac = (j - k + 1) as f64 / span;
                    out.push(left + frac * (right - left));
                    imputed.push(j);
                }
                k = gap_end;
            }
        }
    }
    let center_value = if spec.center {
        out.iter().sum::<f64>() / out.len() as f64
    } else {
        0.0
    };
    if spec.center {
        for v in &mut out {
            *v -= center_value;
        }
    }

    let first_kept = first + lead as i64;
    let t0 = (first_kept as f64 + 0.5) * w;
    let mut meta = TrajectoryMeta::new(Provenance::Ingested);
    meta.notes.push(format!("source records: {}", recs.len()));
    meta.notes
        .push(format!("bin width {w}, timestamps at bin centers"));
    meta.notes.push(format!("transform: {:?}", spec.transform));
    meta.notes.push(format!("imputed bins: {}", imputed.len()));
    meta.notes.push(format!(
        "trimmed empty bins: {lead} leading, {trail} trailing"
    ));
    if spec.center {
        meta.notes.push(format!(
            "centered by subtracting the mean over all bins: {center_value}"
        ));
    }
    let report = IngestReport {
        n_records: recs.len(),
        n_bins: out.len(),
        imputed_bins: imputed,
        trimmed_leading: lead,
        trimmed_trailing: trail,
        center_value,
        t0,
    };
    let traj = Trajectory::new(w, t0, 1, out, None, meta)?;
    Ok((traj, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::write_csv;

    fn spec(w: f64) -> IngestSpec {
        IngestSpec {
            source: PathBuf::new(),
            time_column: "t".into(),
            value_column: "x".into(),
            bin_width: w,
            transform: ValueTransform::None,
            center: false,
            time_range: None,
            impute: Impute::Linear,
        }
    }

    #[test]
    fn constant_series_centers_to_zero() {
        let t: Vec<f64> = (0..100).map(|k| k as f64 * 0.013).collect();
        let v = vec![4.2; 100];
        let mut s = spec(0.05);
        s.center = true;
        s.transform = ValueTransform::NegLog;
        let (tr, _) = ingest_records(&t, &v, &s).unwrap();
        assert!(tr.x.iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn single_gap_is_interpolated() {
        let t = [0.5, 2.5];
        let v = [1.0, 3.0];
        let (tr, rep) = ingest_records(&t, &v, &spec(1.0)).unwrap();
        assert_eq!(tr.x, vec![1.0, 2.0, 3.0]);
        assert_eq!(rep.imputed_bins, vec![1]);
        assert!((tr.t0 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn imputation_can_be_refused() {
        let mut s = spec(1.0);
        s.impute = Impute::Fail;
        assert!(ingest_records(&[0.5, 2.5], &[1.0, 3.0], &s).is_err());
    }

    #[test]
    fn averages_within_bins_then_transforms() {
        let t = [0.1, 0.2, 1.1];
        let v = [1.0, 3.0, std::f64::consts::E];
        let mut s = spec(1.0);
        s.transform = ValueTransform::NegLog;
        let (tr, _) = ingest_records(&t, &v, &s).unwrap();
        assert!((tr.x[0] + 2f64.ln()).abs() < 1e-15);
        assert!((tr.x[1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn time_range_gives_expected_length() {
        // 50 time units at bin width 0.02 in [30, 80).
        let t: Vec<f64> = (0..100_000).map(|k| 25.0 + k as f64 * 0.0006).collect();
        let v: Vec<f64> = t.iter().map(|t| t.sin()).collect();
        let mut s = spec(0.02);
        s.time_range = Some([30.0, 80.0]);
        let (tr, rep) = ingest_records(&t, &v, &s).unwrap();
        assert_eq!(tr.n_points(), 2500);
        assert_eq!(rep.trimmed_leading + rep.trimmed_trailing, 0);
        assert!((tr.t0 - 30.01).abs() < 1e-9);
    }

    #[test]
    fn boundary_empty_bins_are_trimmed() {
        let mut s = spec(1.0);
        s.time_range = Some([0.0, 6.0]);
        let (tr, rep) = ingest_records(&[2.5, 3.5], &[1.0, 2.0], &s).unwrap();
        assert_eq!(tr.x, vec![1.0, 2.0]);
        assert_eq!((rep.trimmed_leading, rep.trimmed_trailing), (2, 2));
        assert!((tr.t0 - 2.5).abs() < 1e-15);
    }

    #[test]
    fn all_missing_is_an_error() {
        let mut s = spec(1.0);
        s.time_range = Some([10.0, 20.0]);
        assert!(matches!(
            ingest_records(&[0.5], &[1.0], &s),
            Err(Error::Ingest(_))
        ));
    }

    #[test]
    fn reingesting_output_is_identity() {
        let t: Vec<f64> = (0..500).map(|k| 3.0 + k as f64 * 0.0071).collect();
        let v: Vec<f64> = t.iter().map(|t| (3.0 * t).cos() + 2.0).collect();
        let mut s = spec(0.02);
        s.transform = ValueTransform::NegLog;
        s.center = true;
        let (first, _) = ingest_records(&t, &v, &s).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        write_csv(&first, std::fs::File::create(&path).unwrap()).unwrap();
        let again_spec = IngestSpec {
            source: path,
            ..spec(first.h)
        };
        let (again, rep) = ingest_series(&again_spec).unwrap();
        assert_eq!(again.x, first.x);
        assert_eq!(again.t0, first.t0);
        assert_eq!(again.h, first.h);
        assert!(rep.imputed_bins.is_empty());
    }

    #[test]
    fn missing_column_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.csv");
        std::fs::write(&path, "age,ca\n1,2\n").unwrap();
        let s = IngestSpec {
            source: path,
            ..spec(1.0)
        };
        assert!(matches!(ingest_series(&s), Err(Error::Ingest(_))));
    }
}
