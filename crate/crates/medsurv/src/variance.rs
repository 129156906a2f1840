//! Interval-based estimators of the standard deviation of
//! `sqrt(n_i) * (median_hat_i - median_i)`.
//!
//! The two-sided estimator inverts the fitted curve at levels
//! `l = 0 v 0.5(1 - z_{g/2} sqrt(V/n))` and `u = 1 ^ 0.5(1 + z_{g/2} sqrt(V/n))`;
//! when the curve never reaches `l`, the level is replaced by the curve
//! minimum and the normal quantile is re-solved from it (the adaptive
//! procedure). The one-sided estimator uses the median itself as the upper
//! quantile.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::KmFit;
use crate::numeric;
use crate::survdata::SurvivalSample;

/// Default interval level; all reported simulations use 10%.
pub const DEFAULT_GAMMA: f64 = 0.10;

/// Which interval strategy to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMethod {
    OneSided,
    TwoSided,
}

impl SigmaMethod {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "one-sided" | "one" => Ok(Self::OneSided),
            "two-sided" | "two" => Ok(Self::TwoSided),
            other => Err(Error::InvalidParameter(format!(
                "unknown sigma method `{other}` (expected one-sided or two-sided)"
            ))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::OneSided => "one_sided",
            Self::TwoSided => "two_sided",
        }
    }
}

/// What an estimate actually used, including the adaptive fallback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaKind {
    TwoSided,
    TwoSidedAdjusted,
    OneSided,
}

impl SigmaKind {
    pub fn label(&self) -> &'static str {
        match self {
            Self::TwoSided => "two_sided",
            Self::TwoSidedAdjusted => "two_sided_adjusted",
            Self::OneSided => "one_sided",
        }
    }
}

/// A standard deviation estimate together with the levels it used.
#[derive(Debug, Clone, Copy)]
pub struct SigmaEstimate {
    pub sigma: f64,
    pub method: SigmaKind,
    pub gamma_used: f64,
    /// The `(l, u)` levels the quantiles were taken at.
    pub bounds_used: (f64, f64),
}

/// Standard normal quantile `Phi^{-1}(p)`, `p` in `(0,1)`.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "normal quantile level must lie in (0,1), got {p}"
        )));
    }
    Ok(numeric::normal_quantile(p))
}

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    numeric::normal_cdf(x)
}

fn validate_gamma(gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "gamma must lie in (0,1), got {gamma}"
        )));
    }
    Ok(gamma)
}

fn levels_from(v_hat: f64, n: f64, z: f64) -> (f64, f64) {
    let half = z * (v_hat / n).sqrt();
    let l = (0.5 * (1.0 - half)).max(0.0);
    let u = (0.5 * (1.0 + half)).min(1.0);
    (l, u)
}

/// The interval levels `(l, u)` and the Nelson–Aalen variance `V` at the
/// median. Errors when the group median does not exist.
pub fn interval_levels(sample: &SurvivalSample, gamma: f64) -> Result<(f64, f64, f64)> {
    validate_gamma(gamma)?;
    let fit = KmFit::new(sample);
    let m = fit
        .median()
        .ok_or_else(|| Error::MedianAbsent(sample.label().to_string()))?;
    let v_hat = fit.variance_at(m);
    let z = numeric::normal_quantile(1.0 - gamma / 2.0);
    let (l, u) = levels_from(v_hat, fit.n() as f64, z);
    Ok((l, u, v_hat))
}

/// Re-solve the interval level for gamma when the curve bottoms out at
/// `l_tilde` above the nominal lower level:
/// `gamma_tilde = 2 (1 - Phi((1 - 2 l_tilde) / sqrt(V/n)))`.
///
/// Plugging `gamma_tilde` back into the definition of `l` reproduces
/// `l_tilde`. At the boundary `l_tilde = 0.5` the interval degenerates and
/// the result is 1.
pub fn adaptive_gamma(l_tilde: f64, v_hat: f64, n: usize) -> Result<f64> {
    if !(v_hat > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "adaptive gamma requires a positive variance estimate, got {v_hat}"
        )));
    }
    if !(0.0..=0.5).contains(&l_tilde) {
        return Err(Error::InvalidParameter(format!(
            "l_tilde must lie in [0, 0.5], got {l_tilde}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    let z = (1.0 - 2.0 * l_tilde) / (v_hat / n as f64).sqrt();
    // 2 (1 - Phi(z)) = erfc(z / sqrt(2))
    Ok(numeric::erfc(z / std::f64::consts::SQRT_2))
}

/// Two-sided interval estimator with the adaptive fallback.
pub fn sigma_two_sided(sample: &SurvivalSample, gamma: f64) -> Result<SigmaEstimate> {
    validate_gamma(gamma)?;
    let fit = KmFit::new(sample);
    sigma_from_fit(&fit, sample.label(), gamma, SigmaMethod::TwoSided)
}

/// One-sided interval estimator.
pub fn sigma_one_sided(sample: &SurvivalSample, gamma: f64) -> Result<SigmaEstimate> {
    validate_gamma(gamma)?;
    let fit = KmFit::new(sample);
    sigma_from_fit(&fit, sample.label(), gamma, SigmaMethod::OneSided)
}

/// Core estimator working on an existing fit; shared with the permutation
/// and simulation engines.
pub fn sigma_from_fit(
    fit: &KmFit,
    label: &str,
    gamma: f64,
    method: SigmaMethod,
) -> Result<SigmaEstimate> {
    let m = fit
        .median()
        .ok_or_else(|| Error::MedianAbsent(label.to_string()))?;
    let n = fit.n() as f64;
    let v_hat = fit.variance_at(m);
    let z = numeric::normal_quantile(1.0 - gamma / 2.0);
    let (l, u) = levels_from(v_hat, n, z);
    let sqrt_n = n.sqrt();

    // S^{-1}(u) always exists for u >= 1/2 once the median does; u clipped
    // to 1 inverts to the time origin.
    let upper_quantile = |uu: f64| fit.quantile(uu).expect("level >= 1/2 is attained");

    let estimate = match method {
        SigmaMethod::OneSided => {
            let qu = upper_quantile(u);
            SigmaEstimate {
                sigma: sqrt_n * (m - qu) / z,
                method: SigmaKind::OneSided,
                gamma_used: gamma,
                bounds_used: (l, u),
            }
        }
        SigmaMethod::TwoSided => match fit.quantile(l) {
            Some(ql) => {
                let qu = upper_quantile(u);
                SigmaEstimate {
                    sigma: 0.5 * sqrt_n * (ql - qu) / z,
                    method: SigmaKind::TwoSided,
                    gamma_used: gamma,
                    bounds_used: (l, u),
                }
            }
            None => {
                // curve never reaches l: fall back to its minimum
                let l_tilde = fit.curve().min_value();
                if v_hat <= 0.0 || l_tilde >= 0.5 {
                    return Err(Error::DegenerateSigma(label.to_string()));
                }
                // z for the adjusted gamma, by construction of adaptive_gamma:
                // z_{gamma_tilde/2} = (1 - 2 l_tilde) / sqrt(V/n)
                let z_t = (1.0 - 2.0 * l_tilde) / (v_hat / n).sqrt();
                let gamma_t = numeric::erfc(z_t / std::f64::consts::SQRT_2);
                if !(z_t > 0.0) {
                    return Err(Error::DegenerateSigma(label.to_string()));
                }
                let u_t = (0.5 * (1.0 + z_t * (v_hat / n).sqrt())).min(1.0);
                let ql = fit
                    .quantile(l_tilde)
                    .expect("curve attains its own minimum");
                let qu = upper_quantile(u_t);
                SigmaEstimate {
                    sigma: 0.5 * sqrt_n * (ql - qu) / z_t,
                    method: SigmaKind::TwoSidedAdjusted,
                    gamma_used: gamma_t,
                    bounds_used: (l_tilde, u_t),
                }
            }
        },
    };

    if !(estimate.sigma > 0.0 && estimate.sigma.is_finite()) {
        return Err(Error::DegenerateSigma(label.to_string()));
    }
    Ok(estimate)
}
