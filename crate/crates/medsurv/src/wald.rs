//! The Wald-type statistic `W_n(T) = n (T m)' (T S T')^+ (T m)` and the
//! asymptotic chi-squared test.

use serde::Serialize;

use crate::contrasts::{self, HypothesisSpec, Matrix};
use crate::error::{Error, Result};
use crate::estimator::KmFit;
use crate::numeric;
use crate::survdata::FactorialDataset;
use crate::variance::{self, SigmaMethod};

/// Inputs of the quadratic form: medians, standard deviations, group sizes
/// and the projection matrix.
#[derive(Debug, Clone)]
pub struct WaldInput {
    pub m_hat: Vec<f64>,
    pub sigma_hat: Vec<f64>,
    pub n_vec: Vec<usize>,
    pub t: Matrix,
}

/// `W = n (T m)' (T S T')^+ (T m)` with `S = diag(n/n_i * sigma_i^2)`.
pub fn wald_statistic(input: &WaldInput) -> Result<f64> {
    let k = input.t.cols();
    if input.m_hat.len() != k || input.sigma_hat.len() != k || input.n_vec.len() != k {
        return Err(Error::InvalidParameter(
            "median/sigma/size vectors must match the projection dimension".into(),
        ));
    }
    if input.sigma_hat.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidParameter("all sigma estimates must be positive".into()));
    }
    if input.n_vec.iter().any(|&n| n == 0) {
        return Err(Error::InvalidParameter("all group sizes must be positive".into()));
    }
    let n: usize = input.n_vec.iter().sum();
    let n_f = n as f64;

    let tm = input.t.mul_vec(&input.m_hat);
    // T * Sigma * T' with diagonal Sigma
    let mut t_sigma = Matrix::zeros(k, k);
    for r in 0..k {
        for c in 0..k {
            let s = n_f / input.n_vec[c] as f64 * input.sigma_hat[c] * input.sigma_hat[c];
            t_sigma.set(r, c, input.t.get(r, c) * s);
        }
    }
    let middle = contrasts::moore_penrose(&t_sigma.matmul(&input.t.transpose()));
    let mv = middle.mul_vec(&tm);
    let w = n_f * tm.iter().zip(&mv).map(|(a, b)| a * b).sum::<f64>();
    if !w.is_finite() {
        return Err(Error::NonFinite("Wald statistic"));
    }
    Ok(w.max(0.0))
}

/// Upper tail of the chi-squared distribution with `df` degrees of freedom.
pub fn chi_square_sf(x: f64, df: usize) -> Result<f64> {
    if df == 0 {
        return Err(Error::InvalidParameter("chi-squared needs df >= 1".into()));
    }
    if !(x >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "chi-squared statistic must be non-negative, got {x}"
        )));
    }
    Ok(numeric::reg_upper_gamma(df as f64 / 2.0, x / 2.0))
}

/// The `(1 - alpha)` quantile of the chi-squared distribution, solved from
/// the survival function by bracketed bisection.
pub fn chi_square_quantile(df: usize, alpha: f64) -> Result<f64> {
    if df == 0 {
        return Err(Error::InvalidParameter("chi-squared needs df >= 1".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0,1), got {alpha}"
        )));
    }
    let f = |x: f64| numeric::reg_upper_gamma(df as f64 / 2.0, x / 2.0) - alpha;
    let mut hi = df as f64 + 10.0;
    while f(hi) > 0.0 {
        hi *= 2.0;
    }
    Ok(numeric::bisect(&f, 0.0, hi, 1e-13, 200))
}

/// Test decision at level alpha; ties at the critical value retain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Reject,
    Retain,
}

/// Per-group diagnostics reported with every test.
#[derive(Debug, Clone, Serialize)]
pub struct GroupReport {
    pub label: String,
    pub n: usize,
    pub median: f64,
    pub sigma: f64,
    pub sigma_method: &'static str,
}

/// Outcome of a hypothesis test.
#[derive(Debug, Clone)]
pub struct TestResult {
    pub statistic: f64,
    pub df: usize,
    pub p_asymptotic: f64,
    pub p_permutation: Option<f64>,
    /// Chi-squared critical value for the asymptotic test, the conditional
    /// quantile for the permutation test.
    pub critical_value: f64,
    pub alpha: f64,
    pub decision: Decision,
    pub groups: Vec<GroupReport>,
    pub seed: Option<u64>,
    pub permutations: usize,
    pub discarded: usize,
}

#[derive(Serialize)]
struct TestResultJson<'a> {
    statistic: f64,
    df: usize,
    p_asymptotic: f64,
    p_permutation: Option<f64>,
    alpha: f64,
    decision: Decision,
    groups: &'a [GroupReport],
    seed: Option<u64>,
    permutations: usize,
    discarded: usize,
}

impl TestResult {
    /// Fixed-schema JSON:
    /// `{statistic, df, p_asymptotic, p_permutation, alpha, decision,
    /// groups: [{label, n, median, sigma, sigma_method}], seed,
    /// permutations, discarded}`.
    pub fn to_json(&self) -> String {
        let view = TestResultJson {
            statistic: self.statistic,
            df: self.df,
            p_asymptotic: self.p_asymptotic,
            p_permutation: self.p_permutation,
            alpha: self.alpha,
            decision: self.decision,
            groups: &self.groups,
            seed: self.seed,
            permutations: self.permutations,
            discarded: self.discarded,
        };
        serde_json::to_string_pretty(&view).expect("test result serializes")
    }
}

/// Observed statistic pieces, shared by the asymptotic and permutation
/// front ends.
pub(crate) struct ObservedStats {
    pub reports: Vec<GroupReport>,
    pub n_vec: Vec<usize>,
    pub t: Matrix,
    pub df: usize,
    pub statistic: f64,
}

pub(crate) fn observed_stats(
    dataset: &FactorialDataset,
    spec: &HypothesisSpec,
    gamma: f64,
    sigma_method: SigmaMethod,
) -> Result<ObservedStats> {
    let h = contrasts::hypothesis_matrix(spec, dataset.layout())?;
    let df = contrasts::rank(&h);
    if df == 0 {
        return Err(Error::InvalidParameter("hypothesis matrix has rank 0".into()));
    }
    let t = contrasts::projection(&h);

    let mut reports = Vec::with_capacity(dataset.k());
    let mut m_hat = Vec::with_capacity(dataset.k());
    let mut sigma_hat = Vec::with_capacity(dataset.k());
    for group in dataset.groups() {
        let fit = KmFit::new(group);
        let m = fit
            .median()
            .ok_or_else(|| Error::MedianAbsent(group.label().to_string()))?;
        let est = variance::sigma_from_fit(&fit, group.label(), gamma, sigma_method)?;
        m_hat.push(m);
        sigma_hat.push(est.sigma);
        reports.push(GroupReport {
            label: group.label().to_string(),
            n: group.len(),
            median: m,
            sigma: est.sigma,
            sigma_method: est.method.label(),
        });
    }
    let n_vec = dataset.group_sizes();
    let statistic = wald_statistic(&WaldInput {
        m_hat,
        sigma_hat,
        n_vec: n_vec.clone(),
        t: t.clone(),
    })?;
    Ok(ObservedStats {
        reports,
        n_vec,
        t,
        df,
        statistic,
    })
}

/// The asymptotic test: reject when `W` exceeds the `(1 - alpha)` quantile
/// of the chi-squared distribution with `rank(T)` degrees of freedom.
pub fn asymptotic_test(
    dataset: &FactorialDataset,
    spec: &HypothesisSpec,
    gamma: f64,
    sigma_method: SigmaMethod,
    alpha: f64,
) -> Result<TestResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0,1), got {alpha}"
        )));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "gamma must lie in (0,1), got {gamma}"
        )));
    }
    let obs = observed_stats(dataset, spec, gamma, sigma_method)?;
    let p = chi_square_sf(obs.statistic, obs.df)?;
    let critical = chi_square_quantile(obs.df, alpha)?;
    Ok(TestResult {
        statistic: obs.statistic,
        df: obs.df,
        p_asymptotic: p,
        p_permutation: None,
        critical_value: critical,
        alpha,
        decision: if obs.statistic > critical {
            Decision::Reject
        } else {
            Decision::Retain
        },
        groups: obs.reports,
        seed: None,
        permutations: 0,
        discarded: 0,
    })
}
