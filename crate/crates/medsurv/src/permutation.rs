//! Studentized permutation test: the pooled `(time, status)` pairs are
//! reassigned to groups of the original sizes by a uniform permutation, the
//! full statistic (medians and standard deviations included) is recomputed
//! per draw, and the observed statistic is compared against the conditional
//! `(1 - alpha)` quantile.
//!
//! Each draw owns an RNG stream addressed by `(seed, draw index)`, so the
//! sampled distribution is identical for any degree of parallelism.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::contrasts::{HypothesisSpec, Matrix};
use crate::error::{Error, Result};
use crate::estimator::KmFit;
use crate::seeding;
use crate::survdata::{FactorialDataset, SurvivalSample};
use crate::variance::{self, SigmaMethod};
use crate::wald::{self, chi_square_sf, Decision, TestResult, WaldInput};

/// What to do with draws whose permuted groups lack a median or a usable
/// standard deviation estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscardPolicy {
    /// Replace failed draws with later indices until the target count is met.
    Redraw,
    /// Keep the failures out and report how many there were.
    CountAndSkip,
}

/// Configuration of a permutation run.
#[derive(Debug, Clone, Copy)]
pub struct PermutationPlan {
    /// Number of permutation draws.
    pub b: usize,
    pub seed: u64,
    pub discard_policy: DiscardPolicy,
    /// Failing more than this fraction of draws is an error.
    pub max_discard_fraction: f64,
}

impl PermutationPlan {
    pub fn new(b: usize, seed: u64) -> Self {
        Self {
            b,
            seed,
            discard_policy: DiscardPolicy::CountAndSkip,
            max_discard_fraction: 0.10,
        }
    }
}

/// Realizations of the permutation statistic.
#[derive(Debug, Clone)]
pub struct PermutationDistribution {
    pub values: Vec<f64>,
    pub discarded: usize,
}

impl PermutationDistribution {
    pub fn b_effective(&self) -> usize {
        self.values.len()
    }
}

/// One uniform permutation draw: pooled pairs reassigned to groups of the
/// original sizes, pairs kept intact, labels and layout preserved.
pub fn permute_groups<R: Rng + ?Sized>(
    dataset: &FactorialDataset,
    rng: &mut R,
) -> FactorialDataset {
    let pooled: Vec<(f64, bool)> = dataset
        .groups()
        .iter()
        .flat_map(|g| g.observations().iter().map(|o| (o.time(), o.is_event())))
        .collect();
    let mut idx: Vec<u32> = (0..pooled.len() as u32).collect();
    idx.shuffle(rng);
    let mut offset = 0;
    let groups = dataset
        .groups()
        .iter()
        .map(|g| {
            let block = &idx[offset..offset + g.len()];
            offset += g.len();
            let times: Vec<f64> = block.iter().map(|&j| pooled[j as usize].0).collect();
            let events: Vec<bool> = block.iter().map(|&j| pooled[j as usize].1).collect();
            SurvivalSample::from_arrays(g.label(), &times, &events)
                .expect("group sizes are preserved")
        })
        .collect();
    FactorialDataset::new(groups, dataset.layout().clone()).expect("layout is preserved")
}

/// Evaluate the permutation statistic for draws `0..count`, for every
/// requested sigma method at once (the shuffle is shared). `None` marks a
/// draw where some permuted group failed for that method.
pub(crate) fn draws_multi(
    pooled: &[(f64, bool)],
    sizes: &[usize],
    t: &Matrix,
    gamma: f64,
    methods: &[SigmaMethod],
    count: usize,
    seed: u64,
) -> Vec<Vec<Option<f64>>> {
    (0..count)
        .into_par_iter()
        .map(|draw| {
            let mut rng = seeding::stream_rng(seed, draw as u64);
            let mut idx: Vec<u32> = (0..pooled.len() as u32).collect();
            idx.shuffle(&mut rng);

            let mut fits = Vec::with_capacity(sizes.len());
            let mut offset = 0;
            for &size in sizes {
                let mut pairs: Vec<(f64, bool)> = idx[offset..offset + size]
                    .iter()
                    .map(|&j| pooled[j as usize])
                    .collect();
                offset += size;
                fits.push(KmFit::from_pairs(&mut pairs));
            }

            let medians: Option<Vec<f64>> = fits.iter().map(|f| f.median()).collect();
            methods
                .iter()
                .map(|&method| {
                    let m_hat = medians.clone()?;
                    let sigma_hat: Option<Vec<f64>> = fits
                        .iter()
                        .map(|f| {
                            variance::sigma_from_fit(f, "", gamma, method)
                                .ok()
                                .map(|e| e.sigma)
                        })
                        .collect();
                    let w = wald::wald_statistic(&WaldInput {
                        m_hat,
                        sigma_hat: sigma_hat?,
                        n_vec: sizes.to_vec(),
                        t: t.clone(),
                    })
                    .ok()?;
                    w.is_finite().then_some(w)
                })
                .collect()
        })
        .collect()
}

fn pooled_pairs(dataset: &FactorialDataset) -> Vec<(f64, bool)> {
    dataset
        .groups()
        .iter()
        .flat_map(|g| g.observations().iter().map(|o| (o.time(), o.is_event())))
        .collect()
}

pub(crate) fn distribution_from_parts(
    pooled: &[(f64, bool)],
    sizes: &[usize],
    t: &Matrix,
    gamma: f64,
    sigma_method: SigmaMethod,
    plan: &PermutationPlan,
) -> Result<PermutationDistribution> {
    if plan.b == 0 {
        return Err(Error::InvalidParameter("need at least one permutation draw".into()));
    }
    if !(0.0..1.0).contains(&plan.max_discard_fraction) {
        return Err(Error::InvalidParameter(
            "max_discard_fraction must lie in [0,1)".into(),
        ));
    }
    let methods = [sigma_method];
    match plan.discard_policy {
        DiscardPolicy::CountAndSkip => {
            let draws = draws_multi(pooled, sizes, t, gamma, &methods, plan.b, plan.seed);
            let values: Vec<f64> = draws.iter().filter_map(|d| d[0]).collect();
            let discarded = plan.b - values.len();
            if discarded as f64 > plan.max_discard_fraction * plan.b as f64 || values.is_empty() {
                return Err(Error::ExcessiveDiscards {
                    discarded,
                    attempted: plan.b,
                    max_fraction: plan.max_discard_fraction,
                });
            }
            Ok(PermutationDistribution { values, discarded })
        }
        DiscardPolicy::Redraw => {
            // fixed attempt schedule keeps the result independent of thread
            // count: evaluate a deterministic number of indexed draws and
            // keep the first b valid ones in index order
            let max_attempts =
                (plan.b as f64 / (1.0 - plan.max_discard_fraction)).ceil() as usize;
            let draws = draws_multi(pooled, sizes, t, gamma, &methods, max_attempts, plan.seed);
            let mut values = Vec::with_capacity(plan.b);
            let mut discarded = 0;
            for d in &draws {
                if values.len() == plan.b {
                    break;
                }
                match d[0] {
                    Some(w) => values.push(w),
                    None => discarded += 1,
                }
            }
            if values.len() < plan.b {
                return Err(Error::ExcessiveDiscards {
                    discarded,
                    attempted: max_attempts,
                    max_fraction: plan.max_discard_fraction,
                });
            }
            Ok(PermutationDistribution { values, discarded })
        }
    }
}

/// The conditional distribution of the permutation statistic.
///
/// Draws where a permuted group's median or standard deviation fails to
/// exist are handled per the plan's discard policy. The result is fully
/// determined by `(seed, b, dataset, spec)`.
pub fn permutation_distribution(
    dataset: &FactorialDataset,
    spec: &HypothesisSpec,
    gamma: f64,
    sigma_method: SigmaMethod,
    plan: &PermutationPlan,
) -> Result<PermutationDistribution> {
    // the observed statistic must be computable first
    let obs = wald::observed_stats(dataset, spec, gamma, sigma_method)?;
    distribution_from_parts(
        &pooled_pairs(dataset),
        &obs.n_vec,
        &obs.t,
        gamma,
        sigma_method,
        plan,
    )
}

/// Empirical `(1 - alpha)` quantile: the order statistic at 1-based index
/// `ceil((1 - alpha) * b_effective)`.
pub fn permutation_quantile(dist: &PermutationDistribution, alpha: f64) -> Result<f64> {
    if dist.values.is_empty() {
        return Err(Error::InvalidParameter("empty permutation distribution".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0,1), got {alpha}"
        )));
    }
    let b = dist.values.len();
    let mut sorted = dist.values.clone();
    sorted.sort_unstable_by(f64::total_cmp);
    // guard the ceil against float noise just above an integer
    let rank = (((1.0 - alpha) * b as f64) - 1e-12).ceil() as usize;
    let rank = rank.clamp(1, b);
    Ok(sorted[rank - 1])
}

/// The permutation test: rejects when the observed statistic exceeds the
/// conditional `(1 - alpha)` quantile. The reported permutation p-value uses
/// the add-one convention `(1 + #{W_pi >= W}) / (b_effective + 1)`.
pub fn permutation_test(
    dataset: &FactorialDataset,
    spec: &HypothesisSpec,
    gamma: f64,
    sigma_method: SigmaMethod,
    alpha: f64,
    plan: &PermutationPlan,
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
    let obs = wald::observed_stats(dataset, spec, gamma, sigma_method)?;
    let dist = distribution_from_parts(
        &pooled_pairs(dataset),
        &obs.n_vec,
        &obs.t,
        gamma,
        sigma_method,
        plan,
    )?;
    let critical = permutation_quantile(&dist, alpha)?;
    let exceed = dist.values.iter().filter(|&&w| w >= obs.statistic).count();
    let p_perm = (1 + exceed) as f64 / (dist.b_effective() + 1) as f64;
    Ok(TestResult {
        statistic: obs.statistic,
        df: obs.df,
        p_asymptotic: chi_square_sf(obs.statistic, obs.df)?,
        p_permutation: Some(p_perm),
        critical_value: critical,
        alpha,
        decision: if obs.statistic > critical {
            Decision::Reject
        } else {
            Decision::Retain
        },
        groups: obs.reports,
        seed: Some(plan.seed),
        permutations: dist.b_effective(),
        discarded: dist.discarded,
    })
}
