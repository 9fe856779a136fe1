//! Two-tailed permutation tests over score vectors and p-values for
//! correlation coefficients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::model::PermutationTestResult;

pub const DEFAULT_PERMUTATIONS: usize = 100_000;
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("number of permutations must be at least 1")]
    NoPermutations,
    #[error("both samples must be non-empty")]
    EmptySample,
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("correlation p-value needs n >= 3, got {0}")]
    TooFewObservations(usize),
    #[error("correlation coefficient {0} outside [-1, 1]")]
    InvalidCorrelation(f64),
}

pub type Result<T> = std::result::Result<T, StatsError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationConfig {
    pub n_permutations: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Independent random stream under the same seed, e.g. a pair index.
    pub stream: u64,
    /// Use (count + 1) / (N + 1) instead of max(count, 1) / N.
    pub add_one: bool,
}

impl Default for PermutationConfig {
    fn default() -> Self {
        PermutationConfig {
            n_permutations: DEFAULT_PERMUTATIONS,
            alpha: DEFAULT_ALPHA,
            seed: 0,
            stream: 0,
            add_one: false,
        }
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sampled null distribution of |mean(a) - mean(b)| under random relabeling
/// of a fixed pooled sample.
#[derive(Debug, Clone)]
pub struct PermutationNull {
    abs_diffs: Vec<f64>,
    tolerance: f64,
    add_one: bool,
}

impl PermutationNull {
    /// Draws `cfg.n_permutations` relabelings of `pooled`, the first `n_a`
    /// entries going to group A each time.
    pub fn sample(pooled: &[f64], n_a: usize, cfg: &PermutationConfig) -> Result<Self> {
        if cfg.n_permutations == 0 {
            return Err(StatsError::NoPermutations);
        }
        if n_a == 0 || n_a >= pooled.len() {
            return Err(StatsError::EmptySample);
        }
        if pooled.iter().any(|x| !x.is_finite()) {
            return Err(StatsError::NonFinite);
        }
        let n = pooled.len();
        let n_b = (n - n_a) as f64;
        let total: f64 = pooled.iter().sum();
        let scale = pooled.iter().fold(1.0f64, |m, x| m.max(x.abs()));

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(cfg.stream);
        let mut work = pooled.to_vec();
        let mut abs_diffs = Vec::with_capacity(cfg.n_permutations);
        for _ in 0..cfg.n_permutations {
            // partial Fisher-Yates: only the first n_a slots need to be random
            let mut sum_a = 0.0;
            for i in 0..n_a {
                let j = rng.random_range(i..n);
                work.swap(i, j);
                sum_a += work[i];
            }
            let d = sum_a / n_a as f64 - (total - sum_a) / n_b;
            abs_diffs.push(d.abs());
        }
        Ok(PermutationNull {
            abs_diffs,
            tolerance: 1e-12 * scale,
            add_one: cfg.add_one,
        })
    }

    pub fn len(&self) -> usize {
        self.abs_diffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.abs_diffs.is_empty()
    }

    /// Number of sampled relabelings at least as extreme as `d_obs`.
    /// Differences within rounding noise of |d_obs| count as ties.
    pub fn count_extreme(&self, d_obs: f64) -> usize {
        let threshold = d_obs.abs() - self.tolerance;
        self.abs_diffs.iter().filter(|&&d| d >= threshold).count()
    }

    pub fn p_value(&self, d_obs: f64) -> f64 {
        let count = self.count_extreme(d_obs);
        let n = self.abs_diffs.len();
        if self.add_one {
            (count + 1) as f64 / (n + 1) as f64
        } else {
            count.max(1) as f64 / n as f64
        }
    }
}

/// Orders the two samples canonically so the test is exactly symmetric in
/// its arguments.
fn canonical<'a>(a: &'a [f64], b: &'a [f64]) -> (&'a [f64], &'a [f64]) {
    let key = |x: &[f64]| x.len();
    let swap = match key(a).cmp(&key(b)) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => a
            .iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .is_some_and(|o| o.is_gt()),
    };
    if swap {
        (b, a)
    } else {
        (a, b)
    }
}

/// Two-tailed permutation test of equal means.
///
/// `D_obs = mean(a) - mean(b)`; the p-value is the share of sampled
/// relabelings with `|D_perm| >= |D_obs|`, floored at one count (or the
/// add-one correction when `cfg.add_one` is set). Deterministic in
/// `(cfg.seed, cfg.stream)`.
pub fn permutation_test(a: &[f64], b: &[f64], cfg: &PermutationConfig) -> Result<PermutationTestResult> {
    if cfg.n_permutations == 0 {
        return Err(StatsError::NoPermutations);
    }
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let d_obs = mean(a) - mean(b);
    let (first, second) = canonical(a, b);
    let mut pooled = first.to_vec();
    pooled.extend_from_slice(second);
    let null = PermutationNull::sample(&pooled, first.len(), cfg)?;
    let n_extreme = null.count_extreme(d_obs);
    let p_value = null.p_value(d_obs);
    Ok(PermutationTestResult {
        d_obs,
        p_value,
        n_permutations: cfg.n_permutations,
        n_extreme,
        alpha: cfg.alpha,
        significant: p_value < cfg.alpha,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub model_a: String,
    pub model_b: String,
    /// Index of the pair in enumeration order; also the random stream id.
    pub pair_id: u64,
    #[serde(flatten)]
    pub result: PermutationTestResult,
}

/// Runs a permutation test for every unordered pair of models. Pair `k`
/// (in `(i, j), i < j` order) uses random stream `k`, so results do not
/// depend on scheduling.
pub fn pairwise_permutation_tests(models: &[(String, Vec<f64>)], cfg: &PermutationConfig) -> Result<Vec<PairwiseTest>> {
    let pairs: Vec<(u64, usize, usize)> = (0..models.len())
        .flat_map(|i| (i + 1..models.len()).map(move |j| (i, j)))
        .enumerate()
        .map(|(k, (i, j))| (k as u64, i, j))
        .collect();
    pairs
        .into_par_iter()
        .map(|(pair_id, i, j)| {
            let cfg = PermutationConfig {
                stream: pair_id,
                ..*cfg
            };
            let result = permutation_test(&models[i].1, &models[j].1, &cfg)?;
            Ok(PairwiseTest {
                model_a: models[i].0.clone(),
                model_b: models[j].0.clone(),
                pair_id,
                result,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMethod {
    Pearson,
    Spearman,
}

/// Two-tailed p-value of a correlation coefficient via
/// `t = r sqrt((n - 2) / (1 - r^2))` on n - 2 degrees of freedom. The same
/// approximation is used for Spearman's rho.
pub fn correlation_pvalue(r: f64, n: usize, _method: CorrelationMethod) -> Result<f64> {
    if n < 3 {
        return Err(StatsError::TooFewObservations(n));
    }
    if !r.is_finite() || r.abs() > 1.0 {
        return Err(StatsError::InvalidCorrelation(r));
    }
    if r.abs() == 1.0 {
        return Ok(0.0);
    }
    if r == 0.0 {
        return Ok(1.0);
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    Ok((2.0 * dist.cdf(-t.abs())).min(1.0))
}
