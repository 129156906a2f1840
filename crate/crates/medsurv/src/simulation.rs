//! Scenario engine for type-1-error and power studies: survival-time
//! generators, censoring-rate calibration for `Unif[0, U]` censoring, the
//! analytic asymptotic-variance oracle, and rejection-rate aggregation.

use rand::distr::Open01;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::contrasts::{self, HypothesisSpec};
use crate::error::{Error, Result};
use crate::estimator::KmFit;
use crate::numeric;
use crate::permutation;
use crate::seeding;
use crate::survdata::Layout;
use crate::variance::{self, SigmaMethod};
use crate::wald::{self, WaldInput};

/// A survival-time distribution on the positive half-line.
#[derive(Debug, Clone, PartialEq)]
pub enum SurvivalDistribution {
    Exponential { rate: f64 },
    Weibull { shape: f64, scale: f64 },
    LogNormal { mu: f64, sigma: f64 },
    Mixture { components: Vec<SurvivalDistribution>, weights: Vec<f64> },
    Shifted { base: Box<SurvivalDistribution>, delta: f64 },
}

impl SurvivalDistribution {
    pub fn exponential(rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("exponential rate must be positive, got {rate}")));
        }
        Ok(Self::Exponential { rate })
    }

    pub fn weibull(shape: f64, scale: f64) -> Result<Self> {
        if !(shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("weibull parameters must be positive, got shape {shape}, scale {scale}")));
        }
        Ok(Self::Weibull { shape, scale })
    }

    pub fn log_normal(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite() && mu.is_finite()) {
            return Err(Error::InvalidParameter(format!("log-normal needs finite mu and positive sigma, got mu {mu}, sigma {sigma}")));
        }
        Ok(Self::LogNormal { mu, sigma })
    }

    pub fn mixture(components: Vec<SurvivalDistribution>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() || components.len() != weights.len() {
            return Err(Error::InvalidParameter("mixture needs matching non-empty components and weights".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::InvalidParameter("mixture weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("mixture weights must sum to 1, got {total}")));
        }
        Ok(Self::Mixture { components, weights })
    }

    /// Equal-weight mixture.
    pub fn equal_mixture(components: Vec<SurvivalDistribution>) -> Result<Self> {
        let w = 1.0 / components.len() as f64;
        let weights = vec![w; components.len()];
        Self::mixture(components, weights)
    }

    /// Translate the distribution to the right by `delta >= 0`.
    pub fn shifted(self, delta: f64) -> Result<Self> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter(format!("shift must be non-negative, got {delta}")));
        }
        if delta == 0.0 {
            return Ok(self);
        }
        Ok(Self::Shifted { base: Box::new(self), delta })
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        match self {
            Self::Exponential { rate } => rate * (-rate * x).exp(),
            Self::Weibull { shape, scale } => {
                if x == 0.0 {
                    // finite limit only for shape >= 1
                    return if *shape > 1.0 { 0.0 } else if *shape == 1.0 { 1.0 / scale } else { 0.0 };
                }
                let z = x / scale;
                shape / scale * z.powf(shape - 1.0) * (-z.powf(*shape)).exp()
            }
            Self::LogNormal { mu, sigma } => {
                if x == 0.0 {
                    return 0.0;
                }
                let z = (x.ln() - mu) / sigma;
                (-0.5 * z * z).exp() / (x * sigma * (2.0 * std::f64::consts::PI).sqrt())
            }
            Self::Mixture { components, weights } => components
                .iter()
                .zip(weights)
                .map(|(c, w)| w * c.pdf(x))
                .sum(),
            Self::Shifted { base, delta } => base.pdf(x - delta),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match self {
            Self::Exponential { rate } => -(-rate * x).exp_m1(),
            Self::Weibull { shape, scale } => -(-(x / scale).powf(*shape)).exp_m1(),
            Self::LogNormal { mu, sigma } => numeric::normal_cdf((x.ln() - mu) / sigma),
            Self::Mixture { components, weights } => components
                .iter()
                .zip(weights)
                .map(|(c, w)| w * c.cdf(x))
                .sum(),
            Self::Shifted { base, delta } => base.cdf(x - delta),
        }
    }

    /// Survival function `1 - cdf`, computed without cancellation where a
    /// closed form exists.
    pub fn survival(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        match self {
            Self::Exponential { rate } => (-rate * x).exp(),
            Self::Weibull { shape, scale } => (-(x / scale).powf(*shape)).exp(),
            Self::LogNormal { mu, sigma } => numeric::normal_sf((x.ln() - mu) / sigma),
            Self::Mixture { components, weights } => components
                .iter()
                .zip(weights)
                .map(|(c, w)| w * c.survival(x))
                .sum(),
            Self::Shifted { base, delta } => base.survival(x - delta),
        }
    }

    /// `inf{x : F(x) >= p}` for `p` in `(0,1)`; closed form except for
    /// mixtures, which bisect the distribution function.
    pub fn quantile(&self, p: f64) -> f64 {
        debug_assert!(p > 0.0 && p < 1.0);
        match self {
            Self::Exponential { rate } => -(-p).ln_1p() / rate,
            Self::Weibull { shape, scale } => scale * (-(-p).ln_1p()).powf(1.0 / shape),
            Self::LogNormal { mu, sigma } => (mu + sigma * numeric::normal_quantile(p)).exp(),
            Self::Mixture { .. } => {
                let mut hi = 1.0;
                while self.cdf(hi) < p {
                    hi *= 2.0;
                }
                numeric::bisect(&|x| self.cdf(x) - p, 0.0, hi, 1e-13, 200)
            }
            Self::Shifted { base, delta } => base.quantile(p) + delta,
        }
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }

    /// One draw by inversion of a uniform on (0,1); mixtures first pick a
    /// component by weight.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Mixture { components, weights } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (c, w) in components.iter().zip(weights) {
                    acc += w;
                    if u < acc {
                        return c.sample(rng);
                    }
                }
                components.last().expect("mixture is non-empty").sample(rng)
            }
            Self::Shifted { base, delta } => base.sample(rng) + delta,
            _ => {
                let v: f64 = rng.sample(Open01);
                match self {
                    Self::Exponential { rate } => -v.ln() / rate,
                    Self::Weibull { shape, scale } => scale * (-v.ln()).powf(1.0 / shape),
                    Self::LogNormal { mu, sigma } => {
                        (mu + sigma * numeric::normal_quantile(v)).exp()
                    }
                    _ => unreachable!(),
                }
            }
        }
    }

    /// Parse `exp:<rate>`, `weib:<shape>,<scale>`, `logn:<mu>,<sigma>` or
    /// `mix(<spec>;<spec>;...)` with optional `w*` weight prefixes.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = |msg: &str| Error::InvalidParameter(format!("distribution `{s}`: {msg}"));
        if let Some(inner) = s.strip_prefix("mix(").and_then(|r| r.strip_suffix(')')) {
            let mut components = Vec::new();
            let mut weights = Vec::new();
            let mut explicit = false;
            for part in inner.split(';') {
                let part = part.trim();
                if let Some((w, spec)) = part.split_once('*') {
                    let w: f64 = w
                        .trim()
                        .parse()
                        .map_err(|_| bad("cannot parse mixture weight"))?;
                    weights.push(w);
                    explicit = true;
                    components.push(Self::parse(spec)?);
                } else {
                    weights.push(f64::NAN);
                    components.push(Self::parse(part)?);
                }
            }
            if explicit {
                if weights.iter().any(|w| w.is_nan()) {
                    return Err(bad("either weight every component or none"));
                }
                Self::mixture(components, weights)
            } else {
                Self::equal_mixture(components)
            }
        } else if let Some((kind, params)) = s.split_once(':') {
            let nums: Vec<f64> = params
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("cannot parse parameters"))?;
            match (kind.trim(), nums.as_slice()) {
                ("exp", [rate]) => Self::exponential(*rate),
                ("weib", [shape, scale]) => Self::weibull(*shape, *scale),
                ("logn", [mu, sigma]) => Self::log_normal(*mu, *sigma),
                _ => Err(bad("expected exp:<rate>, weib:<shape>,<scale> or logn:<mu>,<sigma>")),
            }
        } else {
            Err(bad("expected kind:params or mix(...)"))
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Exponential { rate } => format!("exp:{rate}"),
            Self::Weibull { shape, scale } => format!("weib:{shape},{scale}"),
            Self::LogNormal { mu, sigma } => format!("logn:{mu},{sigma}"),
            Self::Mixture { components, weights } => {
                let parts: Vec<String> = components
                    .iter()
                    .zip(weights)
                    .map(|(c, w)| format!("{w}*{}", c.label()))
                    .collect();
                format!("mix({})", parts.join(";"))
            }
            Self::Shifted { base, delta } => format!("{}+{delta}", base.label()),
        }
    }
}

/// i.i.d. draws.
pub fn sample_distribution<R: Rng + ?Sized>(
    dist: &SurvivalDistribution,
    n: usize,
    rng: &mut R,
) -> Vec<f64> {
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Censoring rate of `Unif[0, U]` censoring against `dist`:
/// `cr(U) = P(T > C) = (1/U) * int_0^U x f(x) dx + S(U)`,
/// evaluated by adaptive quadrature. Strictly decreasing in `U`.
pub fn censoring_rate(dist: &SurvivalDistribution, u: f64) -> f64 {
    debug_assert!(u > 0.0);
    let integral = numeric::adaptive_simpson(&|x| x * dist.pdf(x), 0.0, u, 1e-11);
    integral / u + dist.survival(u)
}

/// Solve `cr(U) = target` for the uniform censoring endpoint by bisection.
pub fn calibrate_censoring(dist: &SurvivalDistribution, target_cr: f64) -> Result<f64> {
    if !(target_cr > 0.0 && target_cr < 1.0) {
        return Err(Error::Calibration(format!(
            "target censoring rate must lie in (0,1), got {target_cr}"
        )));
    }
    let mut lo = 1e-6;
    let mut hi = 1.0;
    let mut guard = 0;
    while censoring_rate(dist, hi) > target_cr {
        hi *= 2.0;
        guard += 1;
        if guard > 80 {
            return Err(Error::Calibration(format!(
                "target rate {target_cr} not bracketable from above"
            )));
        }
    }
    guard = 0;
    while censoring_rate(dist, lo) < target_cr {
        lo *= 0.5;
        guard += 1;
        if guard > 80 {
            return Err(Error::Calibration(format!(
                "target rate {target_cr} not bracketable from below"
            )));
        }
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let cr = censoring_rate(dist, mid);
        if (cr - target_cr).abs() <= 1e-9 {
            return Ok(mid);
        }
        if cr > target_cr {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(mid)
}

/// Numeric evaluation of the asymptotic standard deviation of
/// `sqrt(n) (median_hat - median)`:
/// `sigma^2 = 1/(4 f(m)^2) * int_0^m f(x) / (G(x) S(x)^2) dx`
/// with `G(x) = 1 - x/U` for `Unif[0, U]` censoring (`G = 1` without).
///
/// Used as the oracle the interval estimators are validated against.
pub fn asymptotic_sigma_oracle(dist: &SurvivalDistribution, u: Option<f64>) -> Result<f64> {
    let m = dist.median();
    let f_m = dist.pdf(m);
    if !(f_m > 0.0) {
        return Err(Error::AssumptionViolated(format!(
            "density vanishes at the median {m}"
        )));
    }
    if let Some(u) = u {
        if !(u > m) {
            return Err(Error::AssumptionViolated(format!(
                "censoring endpoint {u} does not exceed the median {m}"
            )));
        }
    }
    let g = |x: f64| match u {
        Some(u) => 1.0 - x / u,
        None => 1.0,
    };
    let integrand = |x: f64| {
        let s = dist.survival(x);
        dist.pdf(x) / (g(x) * s * s)
    };
    let integral = numeric::adaptive_simpson(&integrand, 0.0, m, 1e-11);
    let sigma2 = integral / (4.0 * f_m * f_m);
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::NonFinite("asymptotic variance oracle"));
    }
    Ok(sigma2.sqrt())
}

/// Asymptotic chi-squared or permutation calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    Asymptotic,
    Permutation,
}

/// One tested procedure: an approach paired with a sigma strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TestMethod {
    pub approach: Approach,
    pub sigma: SigmaMethod,
}

impl TestMethod {
    pub const ALL: [TestMethod; 4] = [
        TestMethod { approach: Approach::Permutation, sigma: SigmaMethod::TwoSided },
        TestMethod { approach: Approach::Asymptotic, sigma: SigmaMethod::TwoSided },
        TestMethod { approach: Approach::Permutation, sigma: SigmaMethod::OneSided },
        TestMethod { approach: Approach::Asymptotic, sigma: SigmaMethod::OneSided },
    ];

    pub fn label(&self) -> String {
        let a = match self.approach {
            Approach::Asymptotic => "asymptotic",
            Approach::Permutation => "permutation",
        };
        format!("{a}_{}", self.sigma.label())
    }

    /// Accepts `perm-two`, `asymptotic-one-sided`, `asy_one`, ...
    pub fn parse(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        let approach = if norm.starts_with("perm") {
            Approach::Permutation
        } else if norm.starts_with("asy") {
            Approach::Asymptotic
        } else {
            return Err(Error::InvalidParameter(format!("unknown test method `{s}`")));
        };
        let sigma = if norm.contains("two") {
            SigmaMethod::TwoSided
        } else if norm.contains("one") {
            SigmaMethod::OneSided
        } else {
            return Err(Error::InvalidParameter(format!(
                "test method `{s}` does not name a sigma strategy"
            )));
        };
        Ok(Self { approach, sigma })
    }
}

/// A fully specified simulation scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub layout: Layout,
    pub distributions: Vec<SurvivalDistribution>,
    /// Target censoring rate per group; 0 means no censoring.
    pub censoring_rates: Vec<f64>,
    pub sizes: Vec<usize>,
    /// Per-group right shift of survival and censoring laws.
    pub shifts: Vec<f64>,
    pub hypothesis: HypothesisSpec,
    pub gamma: f64,
    pub alpha: f64,
    pub b: usize,
    pub n_sim: usize,
    pub seed: u64,
    pub methods: Vec<TestMethod>,
    pub max_discard_fraction: f64,
}

impl Scenario {
    fn validate(&self) -> Result<()> {
        let k = self.layout.k();
        let check_len = |len: usize, what: &str| {
            if len != k {
                Err(Error::InvalidParameter(format!(
                    "{what} has {len} entries but the layout has {k} groups"
                )))
            } else {
                Ok(())
            }
        };
        check_len(self.distributions.len(), "distributions")?;
        check_len(self.censoring_rates.len(), "censoring rates")?;
        check_len(self.sizes.len(), "sizes")?;
        check_len(self.shifts.len(), "shifts")?;
        if self.censoring_rates.iter().any(|&c| !(0.0..1.0).contains(&c)) {
            return Err(Error::InvalidParameter("censoring rates must lie in [0,1)".into()));
        }
        if self.sizes.iter().any(|&n| n < 2) {
            return Err(Error::InvalidParameter("every group needs at least 2 observations".into()));
        }
        if self.shifts.iter().any(|&d| !(d >= 0.0)) {
            return Err(Error::InvalidParameter("shifts must be non-negative".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) || !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter("gamma and alpha must lie in (0,1)".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidParameter("no test methods configured".into()));
        }
        if self.n_sim == 0 {
            return Err(Error::InvalidParameter("n_sim must be positive".into()));
        }
        let needs_perm = self.methods.iter().any(|m| m.approach == Approach::Permutation);
        if needs_perm && self.b == 0 {
            return Err(Error::InvalidParameter("permutation methods need b >= 1".into()));
        }
        Ok(())
    }
}

/// Rejection rate of one method within a study.
#[derive(Debug, Clone, Serialize)]
pub struct MethodRate {
    pub method: String,
    pub rejections: usize,
    pub rate: f64,
    /// Binomial Monte Carlo standard error of the rate.
    pub std_error: f64,
}

/// Aggregated outcome of one scenario at one shift.
#[derive(Debug, Clone, Serialize)]
pub struct StudyResult {
    pub scenario: String,
    pub delta: f64,
    pub replications: usize,
    pub included: usize,
    pub excluded: usize,
    pub rates: Vec<MethodRate>,
}

impl StudyResult {
    pub fn rate_for(&self, method_label: &str) -> Option<f64> {
        self.rates.iter().find(|r| r.method == method_label).map(|r| r.rate)
    }
}

enum RepOutcome {
    Excluded,
    Decisions(Vec<bool>),
}

fn run_replication(
    sc: &Scenario,
    dists: &[SurvivalDistribution],
    censor_endpoints: &[Option<f64>],
    censor_offsets: &[f64],
    t: &contrasts::Matrix,
    chi_crit: f64,
    sigma_methods: &[SigmaMethod],
    rep: usize,
) -> RepOutcome {
    let rep_seed = seeding::derive_seed(sc.seed, rep as u64);
    let mut rng = seeding::stream_rng(rep_seed, 0);

    let k = sc.sizes.len();
    let mut group_pairs: Vec<Vec<(f64, bool)>> = Vec::with_capacity(k);
    for i in 0..k {
        let mut pairs = Vec::with_capacity(sc.sizes[i]);
        for _ in 0..sc.sizes[i] {
            let t_surv = dists[i].sample(&mut rng);
            let c = match censor_endpoints[i] {
                Some(u) => {
                    let v: f64 = rng.sample(Open01);
                    censor_offsets[i] + u * v
                }
                None => f64::INFINITY,
            };
            pairs.push((t_surv.min(c), t_surv <= c));
        }
        group_pairs.push(pairs);
    }

    let fits: Vec<KmFit> = group_pairs
        .iter()
        .map(|pairs| KmFit::from_pairs(&mut pairs.clone()))
        .collect();
    let medians: Option<Vec<f64>> = fits.iter().map(|f| f.median()).collect();
    let Some(m_hat) = medians else {
        return RepOutcome::Excluded;
    };

    // observed W per sigma strategy
    let mut w_by_sigma = Vec::with_capacity(sigma_methods.len());
    for &method in sigma_methods {
        let sigma_hat: Option<Vec<f64>> = fits
            .iter()
            .map(|f| variance::sigma_from_fit(f, "", sc.gamma, method).ok().map(|e| e.sigma))
            .collect();
        let Some(sigma_hat) = sigma_hat else {
            return RepOutcome::Excluded;
        };
        let w = wald::wald_statistic(&WaldInput {
            m_hat: m_hat.clone(),
            sigma_hat,
            n_vec: sc.sizes.clone(),
            t: t.clone(),
        });
        match w {
            Ok(w) => w_by_sigma.push(w),
            Err(_) => return RepOutcome::Excluded,
        }
    }

    // shared permutation draws for all permutation methods
    let needs_perm = sc.methods.iter().any(|m| m.approach == Approach::Permutation);
    let mut perm_crit: Vec<Option<f64>> = vec![None; sigma_methods.len()];
    if needs_perm {
        let pooled: Vec<(f64, bool)> = group_pairs.iter().flatten().copied().collect();
        let perm_seed = seeding::derive_seed(rep_seed, 1);
        let draws = permutation::draws_multi(
            &pooled,
            &sc.sizes,
            t,
            sc.gamma,
            sigma_methods,
            sc.b,
            perm_seed,
        );
        for (mi, crit) in perm_crit.iter_mut().enumerate() {
            let values: Vec<f64> = draws.iter().filter_map(|d| d[mi]).collect();
            let discarded = sc.b - values.len();
            if discarded as f64 > sc.max_discard_fraction * sc.b as f64 || values.is_empty() {
                return RepOutcome::Excluded;
            }
            let dist = permutation::PermutationDistribution { values, discarded };
            match permutation::permutation_quantile(&dist, sc.alpha) {
                Ok(c) => *crit = Some(c),
                Err(_) => return RepOutcome::Excluded,
            }
        }
    }

    let decisions = sc
        .methods
        .iter()
        .map(|m| {
            let si = sigma_methods.iter().position(|&s| s == m.sigma).expect("sigma computed");
            let w = w_by_sigma[si];
            match m.approach {
                Approach::Asymptotic => w > chi_crit,
                Approach::Permutation => w > perm_crit[si].expect("permutation quantile computed"),
            }
        })
        .collect();
    RepOutcome::Decisions(decisions)
}

fn run_study(sc: &Scenario, delta_label: f64) -> Result<StudyResult> {
    sc.validate()?;

    // calibrate censoring on the unshifted laws, then shift both laws
    let mut base_endpoints = Vec::with_capacity(sc.distributions.len());
    for (dist, &cr) in sc.distributions.iter().zip(&sc.censoring_rates) {
        base_endpoints.push(if cr == 0.0 {
            None
        } else {
            Some(calibrate_censoring(dist, cr)?)
        });
    }
    let dists: Vec<SurvivalDistribution> = sc
        .distributions
        .iter()
        .zip(&sc.shifts)
        .map(|(d, &delta)| d.clone().shifted(delta))
        .collect::<Result<_>>()?;

    let h = contrasts::hypothesis_matrix(&sc.hypothesis, &sc.layout)?;
    let df = contrasts::rank(&h);
    if df == 0 {
        return Err(Error::InvalidParameter("hypothesis matrix has rank 0".into()));
    }
    let t = contrasts::projection(&h);
    let chi_crit = wald::chi_square_quantile(df, sc.alpha)?;

    let mut sigma_methods: Vec<SigmaMethod> = Vec::new();
    for m in &sc.methods {
        if !sigma_methods.contains(&m.sigma) {
            sigma_methods.push(m.sigma);
        }
    }

    let outcomes: Vec<RepOutcome> = (0..sc.n_sim)
        .into_par_iter()
        .map(|rep| {
            run_replication(
                sc,
                &dists,
                &base_endpoints,
                &sc.shifts,
                &t,
                chi_crit,
                &sigma_methods,
                rep,
            )
        })
        .collect();

    let mut excluded = 0;
    let mut rejections = vec![0usize; sc.methods.len()];
    for outcome in &outcomes {
        match outcome {
            RepOutcome::Excluded => excluded += 1,
            RepOutcome::Decisions(d) => {
                for (i, &r) in d.iter().enumerate() {
                    if r {
                        rejections[i] += 1;
                    }
                }
            }
        }
    }
    let included = sc.n_sim - excluded;
    if excluded * 2 > sc.n_sim || included == 0 {
        return Err(Error::InfeasibleScenario {
            excluded,
            replications: sc.n_sim,
        });
    }
    let rates = sc
        .methods
        .iter()
        .zip(&rejections)
        .map(|(m, &rej)| {
            let rate = rej as f64 / included as f64;
            MethodRate {
                method: m.label(),
                rejections: rej,
                rate,
                std_error: (rate * (1.0 - rate) / included as f64).sqrt(),
            }
        })
        .collect();
    Ok(StudyResult {
        scenario: sc.name.clone(),
        delta: delta_label,
        replications: sc.n_sim,
        included,
        excluded,
        rates,
    })
}

/// Type-1-error study; the scenario must carry zero shifts.
pub fn run_type1_study(sc: &Scenario) -> Result<StudyResult> {
    if sc.shifts.iter().any(|&d| d != 0.0) {
        return Err(Error::InvalidParameter(
            "type-1 studies need all shifts equal to zero".into(),
        ));
    }
    run_study(sc, 0.0)
}

/// Power study over a shift grid: `shift_groups` (0-based positions) receive
/// each delta in turn, every other group stays put. The `delta = 0` entry
/// reproduces the type-1 study bit for bit.
pub fn run_power_study(
    sc: &Scenario,
    deltas: &[f64],
    shift_groups: &[usize],
) -> Result<Vec<StudyResult>> {
    if deltas.is_empty() {
        return Err(Error::InvalidParameter("empty delta grid".into()));
    }
    let k = sc.layout.k();
    if shift_groups.iter().any(|&g| g >= k) {
        return Err(Error::InvalidParameter("shift group index out of range".into()));
    }
    let mut results = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let mut shifted = sc.clone();
        shifted.shifts = vec![0.0; k];
        for &g in shift_groups {
            shifted.shifts[g] = delta;
        }
        results.push(run_study(&shifted, delta)?);
    }
    Ok(results)
}

/// Tidy CSV: one row per (scenario, method, delta).
pub fn study_results_csv(results: &[StudyResult]) -> String {
    let mut out =
        String::from("scenario,method,delta,rate,std_error,rejections,included,excluded,replications\n");
    for r in results {
        for m in &r.rates {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.scenario,
                m.method,
                r.delta,
                m.rate,
                m.std_error,
                m.rejections,
                r.included,
                r.excluded,
                r.replications
            ));
        }
    }
    out
}

pub fn study_results_json(results: &[StudyResult]) -> String {
    serde_json::to_string_pretty(results).expect("study results serialize")
}

/// A scenario plus its power grid, as read from a scenario file.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub deltas: Vec<f64>,
    /// 0-based group positions that receive the shift.
    pub shift_groups: Vec<usize>,
}

impl ScenarioConfig {
    /// Run the configured studies: one result per grid entry.
    pub fn run(&self) -> Result<Vec<StudyResult>> {
        if self.deltas.iter().all(|&d| d == 0.0) {
            Ok(vec![run_type1_study(&self.scenario)?])
        } else {
            run_power_study(&self.scenario, &self.deltas, &self.shift_groups)
        }
    }
}

fn parse_layout(s: &str) -> Result<Layout> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once('x') {
        let a: usize = a.trim().parse().map_err(|_| Error::ScenarioParse(format!("bad layout `{s}`")))?;
        let b: usize = b.trim().parse().map_err(|_| Error::ScenarioParse(format!("bad layout `{s}`")))?;
        Layout::two_way(a, b)
    } else {
        let k: usize = s.parse().map_err(|_| Error::ScenarioParse(format!("bad layout `{s}`")))?;
        Layout::one_way(k)
    }
}

fn parse_list<T, F: Fn(&str) -> Result<T>>(s: &str, sep: char, f: F) -> Result<Vec<T>> {
    s.split(sep).map(|tok| f(tok.trim())).collect()
}

/// Parse a scenario file: one `[scenario]` section per study, `key = value`
/// lines, `#` comments. Returns the configurations plus any warnings
/// (e.g. a missing seed defaulting to 0).
pub fn parse_scenario_file(text: &str) -> Result<(Vec<ScenarioConfig>, Vec<String>)> {
    let mut sections: Vec<Vec<(String, String)>> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.eq_ignore_ascii_case("[scenario]") {
            sections.push(Vec::new());
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::ScenarioParse(format!(
                "line {}: expected `key = value`, got `{line}`",
                lineno + 1
            )));
        };
        let Some(section) = sections.last_mut() else {
            return Err(Error::ScenarioParse(format!(
                "line {}: key `{}` before any [scenario] header",
                lineno + 1,
                key.trim()
            )));
        };
        section.push((key.trim().to_ascii_lowercase(), value.trim().to_string()));
    }
    if sections.is_empty() {
        return Err(Error::ScenarioParse("no [scenario] section found".into()));
    }

    let mut configs = Vec::new();
    let mut warnings = Vec::new();
    for (si, section) in sections.iter().enumerate() {
        let get = |key: &str| -> Option<&str> {
            section
                .iter()
                .rev()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
        };
        let name = get("name").map(str::to_string).unwrap_or_else(|| format!("scenario_{}", si + 1));
        let layout = parse_layout(get("layout").ok_or_else(|| {
            Error::ScenarioParse(format!("scenario `{name}`: missing `layout`"))
        })?)?;
        let k = layout.k();

        let dists_raw = get("distributions").ok_or_else(|| {
            Error::ScenarioParse(format!("scenario `{name}`: missing `distributions`"))
        })?;
        let mut distributions = parse_list(dists_raw, '|', SurvivalDistribution::parse)?;
        if distributions.len() == 1 && k > 1 {
            distributions = vec![distributions[0].clone(); k];
        }

        let parse_f64 = |tok: &str| -> Result<f64> {
            tok.parse()
                .map_err(|_| Error::ScenarioParse(format!("scenario `{name}`: bad number `{tok}`")))
        };
        let parse_usize = |tok: &str| -> Result<usize> {
            tok.parse()
                .map_err(|_| Error::ScenarioParse(format!("scenario `{name}`: bad integer `{tok}`")))
        };

        let mut censoring_rates = match get("censoring") {
            Some(s) => parse_list(s, ',', parse_f64)?,
            None => vec![0.0],
        };
        if censoring_rates.len() == 1 && k > 1 {
            censoring_rates = vec![censoring_rates[0]; k];
        }
        let mut sizes = parse_list(
            get("sizes").ok_or_else(|| {
                Error::ScenarioParse(format!("scenario `{name}`: missing `sizes`"))
            })?,
            ',',
            parse_usize,
        )?;
        if sizes.len() == 1 && k > 1 {
            sizes = vec![sizes[0]; k];
        }

        let hypothesis = HypothesisSpec::parse(get("hypothesis").unwrap_or("equality"))?;
        let gamma = get("gamma").map(parse_f64).transpose()?.unwrap_or(variance::DEFAULT_GAMMA);
        let alpha = get("alpha").map(parse_f64).transpose()?.unwrap_or(0.05);
        let b = get("b").map(parse_usize).transpose()?.unwrap_or(1999);
        let n_sim = get("n_sim").map(parse_usize).transpose()?.unwrap_or(5000);
        let seed = match get("seed") {
            Some(s) => parse_usize(s)? as u64,
            None => {
                warnings.push(format!(
                    "scenario `{name}`: no seed given, defaulting to 0"
                ));
                0
            }
        };
        let methods = match get("methods") {
            Some(s) => parse_list(s, ',', TestMethod::parse)?,
            None => TestMethod::ALL.to_vec(),
        };
        let max_discard_fraction = get("max_discard_fraction")
            .map(parse_f64)
            .transpose()?
            .unwrap_or(0.10);

        let deltas = match get("deltas") {
            Some(s) => parse_list(s, ',', parse_f64)?,
            None => vec![0.0],
        };
        let shift_groups: Vec<usize> = match get("shift_groups") {
            // 1-based in the file
            Some(s) => parse_list(s, ',', parse_usize)?
                .into_iter()
                .map(|g| g.wrapping_sub(1))
                .collect(),
            None => {
                // convention from the studies: the first group in 2x2-style
                // layouts, the first two groups in 2x3 layouts
                if layout.level_counts() == [2, 3] {
                    vec![0, 1]
                } else {
                    vec![0]
                }
            }
        };

        let scenario = Scenario {
            name,
            layout,
            distributions,
            censoring_rates,
            sizes,
            shifts: vec![0.0; k],
            hypothesis,
            gamma,
            alpha,
            b,
            n_sim,
            seed,
            methods,
            max_discard_fraction,
        };
        scenario.validate()?;
        configs.push(ScenarioConfig {
            scenario,
            deltas,
            shift_groups,
        });
    }
    Ok((configs, warnings))
}

/// The distributions of the reported studies: `Exp(1)`, `Weibull(2, 1/sqrt(ln 2))`,
/// `LogN(0,1)`, plus the mixture settings used for the extra groups.
pub fn paper_distribution_set(name: &str, k: usize) -> Result<Vec<SurvivalDistribution>> {
    let exp = SurvivalDistribution::exponential(1.0)?;
    let weib = SurvivalDistribution::weibull(2.0, (2f64).ln().powf(-0.5))?;
    let logn = SurvivalDistribution::log_normal(0.0, 1.0)?;
    let base = match name.trim().to_ascii_lowercase().as_str() {
        "exp" => vec![exp; k],
        "weib" => vec![weib; k],
        "logn" => vec![logn; k],
        "mix" => match k {
            4 => vec![
                exp.clone(),
                weib.clone(),
                logn.clone(),
                SurvivalDistribution::equal_mixture(vec![exp, weib, logn])?,
            ],
            6 => vec![
                exp.clone(),
                weib.clone(),
                logn.clone(),
                SurvivalDistribution::equal_mixture(vec![exp.clone(), logn.clone()])?,
                SurvivalDistribution::equal_mixture(vec![exp, weib.clone()])?,
                SurvivalDistribution::equal_mixture(vec![weib, logn])?,
            ],
            other => {
                return Err(Error::InvalidParameter(format!(
                    "mixture setting defined for 4 or 6 groups, not {other}"
                )))
            }
        },
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown distribution set `{other}`"
            )))
        }
    };
    Ok(base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::stream_rng;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn medians_match_closed_forms() {
        let exp = SurvivalDistribution::exponential(1.0).unwrap();
        assert!((exp.median() - LN2).abs() < 1e-14);
        let weib = SurvivalDistribution::weibull(2.0, LN2.powf(-0.5)).unwrap();
        assert!((weib.median() - 1.0).abs() < 1e-12);
        let logn = SurvivalDistribution::log_normal(0.0, 1.0).unwrap();
        assert!((logn.median() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shift_moves_the_median_by_exactly_delta() {
        for spec in ["exp:1", "weib:2,1.2011224087864498", "logn:0,1"] {
            let base = SurvivalDistribution::parse(spec).unwrap();
            let delta = 0.8;
            let shifted = base.clone().shifted(delta).unwrap();
            assert_eq!(shifted.median(), base.median() + delta);
            assert_eq!(shifted.quantile(0.3), base.quantile(0.3) + delta);
        }
    }

    #[test]
    fn degenerate_mixture_equals_its_component() {
        let exp = SurvivalDistribution::exponential(1.0).unwrap();
        let mix = SurvivalDistribution::mixture(vec![exp.clone()], vec![1.0]).unwrap();
        for x in [0.1, 0.5, 1.0, 2.0, 5.0] {
            assert!((mix.cdf(x) - exp.cdf(x)).abs() < 1e-15);
            assert!((mix.pdf(x) - exp.pdf(x)).abs() < 1e-15);
        }
        assert!((mix.median() - exp.median()).abs() < 1e-10);
    }

    #[test]
    fn sample_means_match_expectations() {
        let exp = SurvivalDistribution::exponential(1.0).unwrap();
        let mut rng = stream_rng(1, 0);
        let n = 1_000_000;
        let mean: f64 = sample_distribution(&exp, n, &mut rng).iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "exp mean {mean}");
        // weibull(2, s): mean = s * Gamma(1.5)
        let s = LN2.powf(-0.5);
        let weib = SurvivalDistribution::weibull(2.0, s).unwrap();
        let mean: f64 =
            sample_distribution(&weib, 200_000, &mut rng).iter().sum::<f64>() / 200_000.0;
        let want = s * 0.5 * std::f64::consts::PI.sqrt();
        assert!((mean - want).abs() < 0.01, "weibull mean {mean} vs {want}");
    }

    #[test]
    fn samples_are_strictly_positive() {
        let mix = SurvivalDistribution::parse("mix(exp:1;weib:2,1.2;logn:0,1)").unwrap();
        let mut rng = stream_rng(2, 0);
        assert!(sample_distribution(&mix, 10_000, &mut rng).iter().all(|&x| x > 0.0));
    }

    #[test]
    fn censoring_rate_closed_forms() {
        // Exp(1): cr(U) = (1 - exp(-U)) / U
        let exp = SurvivalDistribution::exponential(1.0).unwrap();
        assert!((censoring_rate(&exp, 1.0) - 0.632_120_558_828_557_7).abs() < 1e-8);
        assert!((censoring_rate(&exp, 1.593_624_260_040_04) - 0.5).abs() < 1e-8);
        // reference quadrature values
        let weib = SurvivalDistribution::weibull(2.0, LN2.powf(-0.5)).unwrap();
        assert!((censoring_rate(&weib, 2.0) - 0.522_370_329_825_174).abs() < 1e-7);
        let logn = SurvivalDistribution::log_normal(0.0, 1.0).unwrap();
        assert!((censoring_rate(&logn, 3.0) - 0.432_341_063_590_478).abs() < 1e-7);
        // monotone decreasing in U
        assert!(censoring_rate(&exp, 10.0) < censoring_rate(&exp, 1.0));
    }

    #[test]
    fn calibration_reference_values() {
        let exp = SurvivalDistribution::exponential(1.0).unwrap();
        let u = calibrate_censoring(&exp, 0.5).unwrap();
        assert!((u - 1.593_624_260_040_04).abs() < 1e-5, "u = {u}");
        let weib = SurvivalDistribution::weibull(2.0, LN2.powf(-0.5)).unwrap();
        let u = calibrate_censoring(&weib, 0.25).unwrap();
        assert!((u - 4.257_865_799_032_59).abs() < 1e-4, "u = {u}");
        assert!(calibrate_censoring(&exp, 0.0).is_err());
        assert!(calibrate_censoring(&exp, 1.0).is_err());
        // round-trip
        let u = calibrate_censoring(&exp, 0.07).unwrap();
        assert!((censoring_rate(&exp, u) - 0.07).abs() < 1e-6);
    }

    #[test]
    fn sigma_oracle_closed_forms() {
        let exp = SurvivalDistribution::exponential(1.0).unwrap();
        assert!((asymptotic_sigma_oracle(&exp, None).unwrap() - 1.0).abs() < 1e-6);
        // Weibull(2, 1/sqrt(ln2)): sigma = 1 / (2 ln 2); confirmed by quadrature
        let weib = SurvivalDistribution::weibull(2.0, LN2.powf(-0.5)).unwrap();
        let s = asymptotic_sigma_oracle(&weib, None).unwrap();
        assert!((s - 0.721_347_520_444_481_7).abs() < 1e-6, "weibull sigma {s}");
        // LogN(0,1): sigma = sqrt(pi/2)
        let logn = SurvivalDistribution::log_normal(0.0, 1.0).unwrap();
        let s = asymptotic_sigma_oracle(&logn, None).unwrap();
        assert!((s - 1.253_314_137_315_500_3).abs() < 1e-6, "lognormal sigma {s}");
        // censored reference value: Exp(1) with cr = 0.25
        let s = asymptotic_sigma_oracle(&exp, Some(3.920_690_394_872_886)).unwrap();
        assert!((s - 1.054_865_244_450_634_9).abs() < 1e-6, "censored sigma {s}");
        // doubling the time unit doubles sigma (quadruples the variance)
        let exp_half = SurvivalDistribution::exponential(0.5).unwrap();
        let s = asymptotic_sigma_oracle(&exp_half, None).unwrap();
        assert!((s - 2.0).abs() < 1e-6);
        // censoring endpoint below the median violates the assumptions
        assert!(asymptotic_sigma_oracle(&exp, Some(0.5)).is_err());
    }

    #[test]
    fn distribution_parse_syntax() {
        assert_eq!(
            SurvivalDistribution::parse("exp:1").unwrap(),
            SurvivalDistribution::Exponential { rate: 1.0 }
        );
        assert!(matches!(
            SurvivalDistribution::parse("weib:2,0.8493").unwrap(),
            SurvivalDistribution::Weibull { .. }
        ));
        assert!(matches!(
            SurvivalDistribution::parse("logn:0,1").unwrap(),
            SurvivalDistribution::LogNormal { .. }
        ));
        let mix = SurvivalDistribution::parse("mix(exp:1; logn:0,1)").unwrap();
        match &mix {
            SurvivalDistribution::Mixture { weights, .. } => {
                assert_eq!(weights, &vec![0.5, 0.5])
            }
            other => panic!("unexpected {other:?}"),
        }
        let weighted = SurvivalDistribution::parse("mix(0.25*exp:1;0.75*logn:0,1)").unwrap();
        match &weighted {
            SurvivalDistribution::Mixture { weights, .. } => {
                assert_eq!(weights, &vec![0.25, 0.75])
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(SurvivalDistribution::parse("exp:-1").is_err());
        assert!(SurvivalDistribution::parse("cauchy:0,1").is_err());
        assert!(SurvivalDistribution::parse("mix(0.5*exp:1;logn:0,1)").is_err());
    }

    #[test]
    fn method_parse_and_labels() {
        let m = TestMethod::parse("perm-two").unwrap();
        assert_eq!(m.label(), "permutation_two_sided");
        let m = TestMethod::parse("asymptotic_one_sided").unwrap();
        assert_eq!(m.label(), "asymptotic_one_sided");
        assert!(TestMethod::parse("bootstrap").is_err());
    }

    fn small_scenario() -> Scenario {
        Scenario {
            name: "smoke".into(),
            layout: Layout::two_way(2, 2).unwrap(),
            distributions: paper_distribution_set("exp", 4).unwrap(),
            censoring_rates: vec![0.0; 4],
            sizes: vec![12; 4],
            shifts: vec![0.0; 4],
            hypothesis: HypothesisSpec::MainEffect("A".into()),
            gamma: 0.1,
            alpha: 0.05,
            b: 49,
            n_sim: 40,
            seed: 123,
            methods: TestMethod::ALL.to_vec(),
            max_discard_fraction: 0.10,
        }
    }

    #[test]
    fn study_runs_and_is_deterministic() {
        let sc = small_scenario();
        let a = run_type1_study(&sc).unwrap();
        let b = run_type1_study(&sc).unwrap();
        assert_eq!(a.included + a.excluded, 40);
        assert_eq!(a.rates.len(), 4);
        for (ra, rb) in a.rates.iter().zip(&b.rates) {
            assert_eq!(ra.rejections, rb.rejections);
            assert!(ra.rate >= 0.0 && ra.rate <= 1.0);
        }
        let csv = study_results_csv(&[a]);
        assert!(csv.starts_with("scenario,method,delta,"));
        assert!(csv.contains("permutation_two_sided"));
    }

    #[test]
    fn power_grid_endpoint_reproduces_type1() {
        let mut sc = small_scenario();
        sc.n_sim = 30;
        sc.b = 29;
        let t1 = run_type1_study(&sc).unwrap();
        let grid = run_power_study(&sc, &[0.0, 0.5], &[0]).unwrap();
        assert_eq!(grid.len(), 2);
        for (a, b) in t1.rates.iter().zip(&grid[0].rates) {
            assert_eq!(a.rejections, b.rejections);
        }
        assert_eq!(grid[1].delta, 0.5);
    }

    #[test]
    fn type1_rejects_nonzero_shifts() {
        let mut sc = small_scenario();
        sc.shifts[0] = 0.5;
        assert!(run_type1_study(&sc).is_err());
    }

    #[test]
    fn scenario_file_parses_with_defaults_and_warnings() {
        let text = "\
# a comment
[scenario]
name = demo
layout = 2x2
hypothesis = main-effect:A
distributions = exp:1
censoring = 0.07, 0.12, 0.12, 0.07
sizes = 12
gamma = 0.1
alpha = 0.05
b = 99
n_sim = 50

[scenario]
name = power_demo
layout = 2x3
distributions = exp:1 | exp:1 | exp:1 | exp:1 | exp:1 | exp:1
sizes = 10, 10, 10, 10, 10, 10
hypothesis = main-effect:A
deltas = 0, 0.4
seed = 7
n_sim = 20
b = 29
methods = perm-one, asy-one
";
        let (configs, warnings) = parse_scenario_file(text).unwrap();
        assert_eq!(configs.len(), 2);
        assert_eq!(warnings.len(), 1, "missing seed warns: {warnings:?}");
        assert!(warnings[0].contains("demo"));
        let c0 = &configs[0].scenario;
        assert_eq!(c0.sizes, vec![12; 4]);
        assert_eq!(c0.censoring_rates, vec![0.07, 0.12, 0.12, 0.07]);
        assert_eq!(c0.seed, 0);
        assert_eq!(c0.methods.len(), 4);
        let c1 = &configs[1];
        assert_eq!(c1.deltas, vec![0.0, 0.4]);
        assert_eq!(c1.shift_groups, vec![0, 1]); // 2x3 default
        assert_eq!(c1.scenario.methods.len(), 2);

        assert!(parse_scenario_file("x = 1\n").is_err());
        assert!(parse_scenario_file("[scenario]\nlayout = 2x2\n").is_err());
    }

    #[test]
    fn paper_distribution_sets() {
        let d = paper_distribution_set("mix", 4).unwrap();
        assert!(matches!(d[3], SurvivalDistribution::Mixture { .. }));
        let d = paper_distribution_set("mix", 6).unwrap();
        assert!(matches!(d[5], SurvivalDistribution::Mixture { .. }));
        assert!(paper_distribution_set("mix", 5).is_err());
        assert_eq!(paper_distribution_set("exp", 4).unwrap().len(), 4);
    }
}
