//! Fold-level confidence intervals and rank-sum comparisons.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    /// mean ± t(n−1) · sd / √n over folds.
    StudentT,
    /// Percentile interval of resampled means.
    Bootstrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub mean: f64,
    /// `None` when undefined (a single value).
    pub half_width: Option<f64>,
    pub n: usize,
    pub level: f64,
    pub method: CiMethod,
}

impl ConfidenceInterval {
    pub fn bounds(&self) -> Option<(f64, f64)> {
        self.half_width.map(|h| (self.mean - h, self.mean + h))
    }
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("confidence level {level} outside (0, 1)")))
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Student-t interval over fold values.
pub fn fold_ci(values: &[f64], level: f64) -> Result<ConfidenceInterval> {
    check_level(level)?;
    if values.is_empty() {
        return Err(Error::InvalidArgument("confidence interval of no values".into()));
    }
    let n = values.len();
    let m = mean(values);
    let half_width = if n == 1 {
        None
    } else {
        let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.5 + level / 2.0);
        Some(t * var.sqrt() / (n as f64).sqrt())
    };
    Ok(ConfidenceInterval {
        mean: m,
        half_width,
        n,
        level,
        method: CiMethod::StudentT,
    })
}

/// Percentile bootstrap interval of the mean; the half width is half the
/// interval length.
pub fn bootstrap_ci(values: &[f64], level: f64, replicates: usize, seed: u64) -> Result<ConfidenceInterval> {
    check_level(level)?;
    if values.is_empty() || replicates == 0 {
        return Err(Error::InvalidArgument("bootstrap needs values and replicates".into()));
    }
    let n = values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..replicates)
        .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let q = |p: f64| means[((p * (replicates - 1) as f64).round() as usize).min(replicates - 1)];
    let lo = q((1.0 - level) / 2.0);
    let hi = q(1.0 - (1.0 - level) / 2.0);
    Ok(ConfidenceInterval {
        mean: mean(values),
        half_width: (n > 1).then_some((hi - lo) / 2.0),
        n,
        level,
        method: CiMethod::Bootstrap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankSumResult {
    /// Normal-approximation z statistic; positive when `a` tends to exceed `b`.
    pub w: f64,
    /// Two-sided p value.
    pub p: f64,
    /// Sum of the ranks of `a` in the pooled sample (average ranks for ties).
    pub rank_sum: f64,
    pub n_a: usize,
    pub n_b: usize,
}

/// Average ranks (1-based) of the pooled sample.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Wilcoxon rank-sum test with tie-corrected normal approximation and no
/// continuity correction.
pub fn ranksum_test(a: &[f64], b: &[f64]) -> Result<RankSumResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("rank-sum test needs two non-empty samples".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("rank-sum test of NaN values".into()));
    }
    let (n_a, n_b) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = average_ranks(&pooled);
    let rank_sum: f64 = ranks[..n_a].iter().sum();
    let n = (n_a + n_b) as f64;
    let expected = n_a as f64 * (n + 1.0) / 2.0;

    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut ties = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        ties += t * t * t - t;
        i = j;
    }
    let variance = n_a as f64 * n_b as f64 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)).max(1.0));
    let (w, p) = if variance <= 0.0 {
        (0.0, 1.0)
    } else {
        let z = (rank_sum - expected) / variance.sqrt();
        let normal = Normal::standard();
        (z, (2.0 * normal.sf(z.abs())).min(1.0))
    };
    Ok(RankSumResult {
        w,
        p,
        rank_sum,
        n_a,
        n_b,
    })
}
