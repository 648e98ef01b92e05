//! Significance tests used by concept convolution: a Poisson likelihood-ratio
//! scan statistic for count features and a one-sample Kolmogorov-Smirnov test
//! for continuous features, both judged against a fitted baseline.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{DistHint, FeatureRef, SampleWindow};

pub const DEFAULT_ALPHA: f64 = 0.05;

/// Empirical baselines above this many observations are compressed to
/// [`QUANTILE_KNOTS`] evenly spaced quantiles.
pub const DEFAULT_COMPRESS_THRESHOLD: usize = 1_000_000;
pub const QUANTILE_KNOTS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Scope {
    Local,
    Global,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BaselineKind {
    /// Mean rate per cell.
    Poisson { rate: f64 },
    /// Observations sorted ascending (or their quantile knots) and their mean.
    Empirical { sorted: Vec<f64>, mean: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineDist {
    pub feature: String,
    pub scope: Scope,
    pub kind: BaselineKind,
}

impl BaselineDist {
    /// Fit from raw observations. `hint` selects the family.
    pub fn fit(
        feature: impl Into<String>,
        scope: Scope,
        hint: DistHint,
        observations: &[f64],
        compress_threshold: usize,
    ) -> Result<Self> {
        let feature = feature.into();
        if observations.len() < 2 {
            return Err(Error::InsufficientData {
                what: format!("{scope:?} baseline of {feature}"),
                needed: 2,
                have: observations.len(),
            });
        }
        if let Some(&v) = observations.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite observation {v} for {feature}"
            )));
        }
        let mean = mean(observations);
        let kind = match hint {
            DistHint::Count => {
                if let Some(&value) = observations.iter().find(|&&v| v < 0.0) {
                    return Err(Error::NegativeCount { feature, value });
                }
                BaselineKind::Poisson { rate: mean }
            }
            DistHint::Continuous => {
                let mut sorted = observations.to_vec();
                sorted.sort_unstable_by(f64::total_cmp);
                if sorted.len() > compress_threshold {
                    sorted = quantile_knots(&sorted, QUANTILE_KNOTS);
                }
                BaselineKind::Empirical { sorted, mean }
            }
        };
        Ok(Self {
            feature,
            scope,
            kind,
        })
    }

    pub fn poisson_rate(&self) -> Option<f64> {
        match self.kind {
            BaselineKind::Poisson { rate } => Some(rate),
            _ => None,
        }
    }

    /// Fraction of baseline values `<= y`.
    pub fn ecdf(&self, y: f64) -> Option<f64> {
        match &self.kind {
            BaselineKind::Empirical { sorted, .. } => Some(ecdf(sorted, y)),
            _ => None,
        }
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// `knots` evenly spaced order statistics of `sorted`, including both ends.
pub fn quantile_knots(sorted: &[f64], knots: usize) -> Vec<f64> {
    let last = (sorted.len() - 1) as f64;
    (0..knots)
        .map(|i| {
            let pos = libm::round(i as f64 * last / (knots - 1) as f64) as usize;
            sorted[pos]
        })
        .collect()
}

fn ecdf(sorted: &[f64], y: f64) -> f64 {
    sorted.partition_point(|&v| v <= y) as f64 / sorted.len() as f64
}

/// Global baseline of one feature over every unmasked observation in the
/// training windows.
pub fn fit_global_baseline(
    train: &[SampleWindow],
    feature: FeatureRef,
    name: &str,
    hint: DistHint,
    compress_threshold: usize,
) -> Result<BaselineDist> {
    let obs: Vec<f64> = train.iter().flat_map(|s| s.observations(feature)).collect();
    BaselineDist::fit(name, Scope::Global, hint, &obs, compress_threshold)
}

/// Local baseline over a single window's unmasked cells (or its history for
/// temporal features).
pub fn fit_local_baseline(
    sample: &SampleWindow,
    feature: FeatureRef,
    name: &str,
    hint: DistHint,
) -> Result<BaselineDist> {
    let obs = sample.observations(feature);
    BaselineDist::fit(name, Scope::Local, hint, &obs, usize::MAX)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Direction {
    Higher,
    Lower,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestOutcome {
    pub significant: bool,
    pub direction: Direction,
    pub statistic: f64,
    pub p_value: f64,
}

impl TestOutcome {
    fn decide(direction: Direction, statistic: f64, p_value: f64, alpha: f64) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        Self {
            significant: direction != Direction::None && p_value < alpha,
            direction,
            statistic,
            p_value,
        }
    }

    pub fn is_higher(&self) -> bool {
        self.significant && self.direction == Direction::Higher
    }

    pub fn is_lower(&self) -> bool {
        self.significant && self.direction == Direction::Lower
    }
}

/// Survival function of the chi-squared distribution with one degree of freedom.
pub fn chi2_1_sf(statistic: f64) -> f64 {
    if statistic <= 0.0 {
        return 1.0;
    }
    libm::erfc(libm::sqrt(statistic / 2.0))
}

/// Log-likelihood ratio of a Poisson window with count `c` against expectation
/// `b`, with the `c = 0` limit equal to `b`.
pub fn poisson_llr(c: f64, b: f64) -> f64 {
    if c == 0.0 {
        return b;
    }
    (c * libm::log(c / b) - (c - b)).max(0.0)
}

/// Poisson likelihood-ratio test of a window sum over `cells` cells against a
/// per-cell `rate`.
pub fn poisson_lrt_rate(window_sum: f64, cells: usize, rate: f64, alpha: f64) -> Result<TestOutcome> {
    if cells == 0 {
        return Err(Error::InvalidParameter("poisson test over zero cells".to_string()));
    }
    if !(rate >= 0.0) || !(window_sum >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "poisson test needs non-negative rate and count, got rate={rate} count={window_sum}"
        )));
    }
    let c = window_sum;
    let b = rate * cells as f64;
    let direction = if c > b {
        Direction::Higher
    } else if c < b {
        Direction::Lower
    } else {
        Direction::None
    };
    if b == 0.0 {
        // Any count under a zero expectation is infinitely unlikely.
        return Ok(if c > 0.0 {
            TestOutcome::decide(direction, f64::INFINITY, 0.0, alpha)
        } else {
            TestOutcome::decide(direction, 0.0, 1.0, alpha)
        });
    }
    let statistic = 2.0 * poisson_llr(c, b);
    Ok(TestOutcome::decide(direction, statistic, chi2_1_sf(statistic), alpha))
}

pub fn poisson_lrt(window_sum: f64, cells: usize, baseline: &BaselineDist, alpha: f64) -> Result<TestOutcome> {
    let rate = baseline.poisson_rate().ok_or_else(|| {
        Error::BaselineKind(format!("{} is not a poisson baseline", baseline.feature))
    })?;
    poisson_lrt_rate(window_sum, cells, rate, alpha)
}

/// One-sample K-S distance of `window` from the baseline ECDF, taken over the
/// gaps on both sides of each sorted window value.
pub fn ks_statistic(window: &[f64], baseline_sorted: &[f64]) -> f64 {
    let mut ys = window.to_vec();
    ys.sort_unstable_by(f64::total_cmp);
    let n = ys.len() as f64;
    let mut d = 0.0f64;
    for (i, &y) in ys.iter().enumerate() {
        let f = ecdf(baseline_sorted, y);
        let below = f - i as f64 / n;
        let above = (i + 1) as f64 / n - f;
        d = d.max(below).max(above);
    }
    d
}

/// Asymptotic Kolmogorov tail `P(D > d)` for sample size `n`, summed until a
/// term drops below 1e-12.
pub fn kolmogorov_sf(d: f64, n: usize) -> f64 {
    let lambda2 = n as f64 * d * d;
    if lambda2 <= 0.0 {
        return 1.0;
    }
    // Below this the distribution function is under 1e-16.
    if lambda2 < 0.0324 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut k = 1u32;
    loop {
        let kf = k as f64;
        let term = libm::exp(-2.0 * kf * kf * lambda2);
        if k % 2 == 1 {
            sum += term;
        } else {
            sum -= term;
        }
        if term < 1e-12 {
            break;
        }
        k += 1;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

pub fn ks_test(window: &[f64], baseline: &BaselineDist, alpha: f64) -> Result<TestOutcome> {
    if window.is_empty() {
        return Err(Error::Empty("K-S window".to_string()));
    }
    let (sorted, base_mean) = match &baseline.kind {
        BaselineKind::Empirical { sorted, mean } => (sorted, *mean),
        _ => {
            return Err(Error::BaselineKind(format!(
                "{} is not an empirical baseline",
                baseline.feature
            )))
        }
    };
    let statistic = ks_statistic(window, sorted);
    let p_value = kolmogorov_sf(statistic, window.len());
    let m = mean(window);
    let direction = if m > base_mean {
        Direction::Higher
    } else if m < base_mean {
        Direction::Lower
    } else {
        Direction::None
    };
    Ok(TestOutcome::decide(direction, statistic, p_value, alpha))
}
