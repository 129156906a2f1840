//! Kaplan–Meier estimation, quantile inversion, and the Nelson–Aalen
//! variance term.
//!
//! Simultaneous observations are processed with events decrementing the risk
//! set before censorings. The product limit is accumulated segment-wise
//! between censoring times, so that without censoring the curve equals
//! `1 - ECDF` bit for bit.

use crate::error::{Error, Result};
use crate::survdata::{FactorialDataset, SurvivalSample};

/// Right-continuous non-increasing step function starting at 1.
///
/// `jump_times` are the (strictly increasing) times where the value drops;
/// `values[i]` is the value on `[jump_times[i], jump_times[i+1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    jump_times: Vec<f64>,
    values: Vec<f64>,
}

impl StepFunction {
    /// The constant function 1 (an all-censored sample has no jumps).
    pub fn constant_one() -> Self {
        Self {
            jump_times: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at `t`; beyond the last jump the last value extends.
    pub fn evaluate(&self, t: f64) -> f64 {
        let idx = self.jump_times.partition_point(|&jt| jt <= t);
        if idx == 0 {
            1.0
        } else {
            self.values[idx - 1]
        }
    }

    /// Smallest attained value (1 if there are no jumps).
    pub fn min_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(1.0)
    }

    /// Generalized inverse `inf{t >= 0 : S(t) <= q}`.
    ///
    /// For `q >= 1` this is the time origin 0. Returns `None` when the curve
    /// never falls to `q`.
    pub fn quantile(&self, q: f64) -> Option<f64> {
        if q >= 1.0 {
            return Some(0.0);
        }
        // values are strictly decreasing
        let idx = self.values.partition_point(|&v| v > q);
        self.jump_times.get(idx).copied()
    }

    /// `(time, value)` pairs as CSV, one step per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,survival\n");
        for (t, v) in self.jump_times.iter().zip(&self.values) {
            out.push_str(&format!("{t},{v}\n"));
        }
        out
    }
}

/// Kaplan–Meier fit of one sample: the survival curve plus the cumulative
/// Nelson–Aalen variance sum at each jump.
#[derive(Debug, Clone)]
pub struct KmFit {
    curve: StepFunction,
    /// Cumulative sum of d / Y(t)^2 at each jump, in jump order.
    na_cum: Vec<f64>,
    n: usize,
}

impl KmFit {
    pub fn new(sample: &SurvivalSample) -> Self {
        let mut pairs: Vec<(f64, bool)> = sample
            .observations()
            .iter()
            .map(|o| (o.time(), o.is_event()))
            .collect();
        Self::from_pairs(&mut pairs)
    }

    /// Fit from `(time, is_event)` pairs; the slice is sorted in place.
    pub fn from_pairs(pairs: &mut [(f64, bool)]) -> Self {
        // events before censorings at equal times
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
        let n = pairs.len();
        let mut jump_times = Vec::new();
        let mut values = Vec::new();
        let mut na_cum = Vec::new();

        let mut s_base = 1.0f64; // survival at the start of the current censor-free segment
        let mut y_seg = n; // at-risk count at segment start
        let mut d_seg = 0usize; // events within the segment so far
        let mut y = n; // at-risk count just before the current time
        let mut cum = 0.0f64;

        let mut i = 0;
        while i < n {
            let t = pairs[i].0;
            let mut d = 0usize;
            let mut c = 0usize;
            while i < n && pairs[i].0 == t {
                if pairs[i].1 {
                    d += 1;
                } else {
                    c += 1;
                }
                i += 1;
            }
            if d > 0 {
                cum += d as f64 / (y as f64 * y as f64);
                d_seg += d;
                let value = s_base * ((y_seg - d_seg) as f64 / y_seg as f64);
                jump_times.push(t);
                values.push(value);
                na_cum.push(cum);
            }
            y -= d + c;
            if c > 0 {
                // close the telescoping segment at a censoring time
                s_base *= (y_seg - d_seg) as f64 / y_seg as f64;
                y_seg = y;
                d_seg = 0;
            }
        }

        Self {
            curve: StepFunction { jump_times, values },
            na_cum,
            n,
        }
    }

    pub fn curve(&self) -> &StepFunction {
        &self.curve
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Median estimate `inf{t : S(t) <= 1/2}`, if the curve gets there.
    pub fn median(&self) -> Option<f64> {
        self.quantile(0.5)
    }

    /// Generalized inverse of the fitted curve (see [`StepFunction::quantile`]).
    pub fn quantile(&self, q: f64) -> Option<f64> {
        self.curve.quantile(q)
    }

    /// Nelson–Aalen variance estimate `V = n * sum_{events <= t} d / Y^2`.
    pub fn variance_at(&self, t: f64) -> f64 {
        let idx = self.curve.jump_times.partition_point(|&jt| jt <= t);
        if idx == 0 {
            0.0
        } else {
            self.n as f64 * self.na_cum[idx - 1]
        }
    }
}

/// Quantile of a survival curve at level `q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileResult {
    /// `inf{t : S(t) <= q}`, absent when the curve never reaches `q`.
    pub value: Option<f64>,
    pub level: f64,
}

/// The Kaplan–Meier survival curve of one group.
pub fn km_estimate(sample: &SurvivalSample) -> StepFunction {
    KmFit::new(sample).curve.clone()
}

/// Quantile inversion of a fitted curve; `q` must lie in `(0, 1)`.
pub fn km_quantile(curve: &StepFunction, q: f64) -> Result<QuantileResult> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "quantile level must lie in (0,1), got {q}"
        )));
    }
    Ok(QuantileResult {
        value: curve.quantile(q),
        level: q,
    })
}

/// `V = n * sum_{j: X_j <= t, event} 1 / Y(X_j)^2`.
pub fn nelson_aalen_variance(sample: &SurvivalSample, t: f64) -> f64 {
    KmFit::new(sample).variance_at(t)
}

/// Median of the pooled Kaplan–Meier curve over all groups (a diagnostic:
/// the permutation medians center at this quantity).
pub fn pooled_km_median(dataset: &FactorialDataset) -> QuantileResult {
    let pooled = dataset.pooled();
    QuantileResult {
        value: KmFit::new(&pooled).median(),
        level: 0.5,
    }
}
