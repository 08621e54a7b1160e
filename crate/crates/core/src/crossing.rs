//! Well-occupancy analysis of a scalar series: smoothing by a centered moving
//! average, threshold crossings with hysteresis, and summaries of the time
//! spent in each state between consecutive crossings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WellState {
    Upper,
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossingEvent {
    pub index: usize,
    pub time: f64,
    /// State entered at this event.
    pub state: WellState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationSummary {
    pub state: WellState,
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub q25: f64,
    pub q75: f64,
    pub iqr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingAnalysis {
    pub window: usize,
    pub level: f64,
    pub events: Vec<CrossingEvent>,
    pub upper_durations: Vec<f64>,
    pub lower_durations: Vec<f64>,
    pub upper: Option<DurationSummary>,
    pub lower: Option<DurationSummary>,
}

/// Centered moving average over `window` points (odd). Near the ends the
/// window is truncated to the points available.
pub fn moving_average(x: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::Argument(format!(
            "smoothing window must be odd, got {window}"
        )));
    }
    let half = window / 2;
    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix.last().copied().unwrap_or(0.0) + v);
    }
    Ok((0..x.len())
        .map(|k| {
            let lo = k.saturating_sub(half);
            let hi = (k + half + 1).min(x.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect())
}

/// Crossing events of `s` with hysteresis: entering Upper needs an upward
/// pass through `level`, entering Lower a downward pass through `-level`.
pub fn crossings(s: &[f64], level: f64, h: f64, t0: f64) -> Result<Vec<CrossingEvent>> {
    if !(level > 0.0) || !level.is_finite() {
        return Err(Error::Argument(format!(
            "crossing level must be positive, got {level}"
        )));
    }
    let mut state: Option<WellState> = None;
    let mut events = Vec::new();
    for k in 1..s.len() {
        let entered = if state != Some(WellState::Upper) && s[k - 1] < level && level <= s[k] {
            Some(WellState::Upper)
        } else if state != Some(WellState::Lower) && s[k - 1] > -level && -level >= s[k] {
            Some(WellState::Lower)
        } else {
            None
        };
        if let Some(st) = entered {
            state = Some(st);
            events.push(CrossingEvent {
                index: k,
                time: t0 + k as f64 * h,
                state: st,
            });
        }
    }
    Ok(events)
}

/// Sample quantile with linear interpolation between order statistics
/// (position (n−1)p in the sorted sample).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = (n - 1) as f64 * p;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(state: WellState, durations: &[f64]) -> Option<DurationSummary> {
    if durations.is_empty() {
        return None;
    }
    let mut d = durations.to_vec();
    d.sort_by(f64::total_cmp);
    let (q25, q75) = (quantile_sorted(&d, 0.25), quantile_sorted(&d, 0.75));
    Some(DurationSummary {
        state,
        count: d.len(),
        mean: d.iter().sum::<f64>() / d.len() as f64,
        min: d[0],
        max: d[d.len() - 1],
        q25,
        q75,
        iqr: q75 - q25,
    })
}

/// Smooths `x`, detects crossings and measures each completed stay. The
/// segments before the first and after the last event are partial and
/// are not counted.
pub fn analyze(x: &[f64], h: f64, t0: f64, window: usize, level: f64) -> Result<CrossingAnalysis> {
    if !(h > 0.0) {
        return Err(Error::Argument(format!("step must be positive, got {h}")));
    }
    let s = moving_average(x, window)?;
    let events = crossings(&s, level, h, t0)?;
    let (mut upper, mut lower) = (Vec::new(), Vec::new());
    for pair in events.windows(2) {
        let d = (pair[1].index - pair[0].index) as f64 * h;
        match pair[0].state {
            WellState::Upper => upper.push(d),
            WellState::Lower => lower.push(d),
        }
    }
    Ok(CrossingAnalysis {
        window,
        level,
        upper: summarize(WellState::Upper, &upper),
        lower: summarize(WellState::Lower, &lower),
        events,
        upper_durations: upper,
        lower_durations: lower,
    })
}
