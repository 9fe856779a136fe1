//! Normalized entropy, model-level aggregation, default-behavior detection,
//! none-of-the-above rates, distribution distances and correlations.
//!
//! All functions are pure.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AnswerRecord, GradeScore, Scope, ValueDistribution};

/// Default dominance threshold for flagging a default behavior.
pub const DEFAULT_TAU: f64 = 0.8;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("distribution for {0} is invalid (no counted answers)")]
    InvalidDistribution(String),
    #[error("distribution for {0} has an empty support")]
    EmptySupport(String),
    #[error("no scores to aggregate{0}")]
    Empty(&'static str),
    #[error("vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("correlation undefined: zero variance")]
    ZeroVariance,
    #[error("no matching distributions between the two sets")]
    NoOverlap,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Shannon entropy in bits of an arbitrary probability vector, with
/// `0 log 0 = 0`.
pub fn shannon_entropy_bits<'a>(probs: impl IntoIterator<Item = &'a f64>) -> f64 {
    probs.into_iter().filter(|&&p| p > 0.0).map(|&p| -p * p.log2()).sum()
}

/// Entropy of `probs` divided by `log2(support_size)`, clamped to [0, 1].
/// A single-value support can show no variety and scores 0.
pub fn normalized_entropy_of<'a>(probs: impl IntoIterator<Item = &'a f64>, support_size: usize) -> f64 {
    if support_size <= 1 {
        return 0.0;
    }
    let h = shannon_entropy_bits(probs) / (support_size as f64).log2();
    h.clamp(0.0, 1.0)
}

/// Diversity score of one distribution. The denominator is the full support
/// cardinality, including values never observed.
pub fn normalized_entropy(dist: &ValueDistribution) -> Result<GradeScore> {
    if !dist.valid {
        return Err(MetricsError::InvalidDistribution(dist.question_id.clone()));
    }
    if dist.support_size == 0 {
        return Err(MetricsError::EmptySupport(dist.question_id.clone()));
    }
    Ok(GradeScore {
        question_id: dist.question_id.clone(),
        concept_id: dist.concept_id.clone(),
        scope: dist.scope.clone(),
        entropy: normalized_entropy_of(dist.probabilities.values(), dist.support_size),
        support_cardinality: dist.support_size,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator) over sqrt(n).
    pub standard_error: f64,
    pub n: usize,
}

/// Mean and standard error of the mean. A single observation has SE 0.
pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(MetricsError::Empty(""));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let standard_error = if n < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    };
    Ok(Summary {
        mean,
        standard_error,
        n,
    })
}

/// Per-scope aggregates of a model's scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub multi: Summary,
    pub single: Summary,
}

/// Averages scores per scope. Both scopes need at least one score.
pub fn model_score(scores: &[GradeScore]) -> Result<ModelScore> {
    if scores.is_empty() {
        return Err(MetricsError::Empty(""));
    }
    let (multi, single): (Vec<&GradeScore>, Vec<&GradeScore>) = scores.iter().partition(|s| s.scope.is_multi());
    let collect = |v: Vec<&GradeScore>| v.iter().map(|s| s.entropy).collect::<Vec<_>>();
    Ok(ModelScore {
        multi: summarize(&collect(multi)).map_err(|_| MetricsError::Empty(" in multi-prompt scope"))?,
        single: summarize(&collect(single)).map_err(|_| MetricsError::Empty(" in single-prompt scope"))?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefaultBehavior {
    pub question_id: String,
    pub concept_id: String,
    pub scope: Scope,
    pub value: String,
    pub frequency: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefaultBehaviorSummary {
    pub behaviors: Vec<DefaultBehavior>,
    /// Percentage of concepts with at least one flagged distribution.
    pub pct_at_least_one: f64,
    /// Percentage of all valid distributions that are flagged.
    pub pct_total: f64,
    pub n_concepts: usize,
    pub n_distributions: usize,
}

/// Flags every valid distribution whose most frequent value reaches `tau`
/// (inclusive). Invalid distributions are ignored.
pub fn detect_default_behaviors(dists: &[ValueDistribution], tau: f64) -> DefaultBehaviorSummary {
    let mut behaviors = Vec::new();
    let mut concepts = BTreeSet::new();
    let mut flagged_concepts = BTreeSet::new();
    let mut n_distributions = 0;

    for dist in dists.iter().filter(|d| d.valid) {
        n_distributions += 1;
        concepts.insert(dist.concept_id.as_str());
        if let Some((value, frequency)) = dist.mode() {
            if frequency >= tau {
                flagged_concepts.insert(dist.concept_id.as_str());
                behaviors.push(DefaultBehavior {
                    question_id: dist.question_id.clone(),
                    concept_id: dist.concept_id.clone(),
                    scope: dist.scope.clone(),
                    value: value.to_string(),
                    frequency,
                    tau,
                });
            }
        }
    }

    let pct = |num: usize, den: usize| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
    DefaultBehaviorSummary {
        pct_at_least_one: pct(flagged_concepts.len(), concepts.len()),
        pct_total: pct(behaviors.len(), n_distributions),
        behaviors,
        n_concepts: concepts.len(),
        n_distributions,
    }
}

/// Fraction of answers mapped to the sentinel.
pub fn nota_rate(answers: &[AnswerRecord]) -> Result<f64> {
    if answers.is_empty() {
        return Err(MetricsError::Empty(""));
    }
    let n = answers.iter().filter(|a| a.is_sentinel()).count();
    Ok(n as f64 / answers.len() as f64)
}

/// Total variation distance between two probability maps aligned on the
/// union of their keys (missing values count as zero).
pub fn tvd_maps(p: &BTreeMap<String, f64>, q: &BTreeMap<String, f64>) -> f64 {
    let keys: BTreeSet<&String> = p.keys().chain(q.keys()).collect();
    let l1: f64 = keys
        .into_iter()
        .map(|k| (p.get(k).copied().unwrap_or(0.0) - q.get(k).copied().unwrap_or(0.0)).abs())
        .sum();
    (0.5 * l1).clamp(0.0, 1.0)
}

pub fn tvd(p: &ValueDistribution, q: &ValueDistribution) -> Result<f64> {
    for d in [p, q] {
        if !d.valid {
            return Err(MetricsError::InvalidDistribution(d.question_id.clone()));
        }
    }
    Ok(tvd_maps(&p.probabilities, &q.probabilities))
}

/// Aligned frequency vectors over the union of both key sets, in key order.
pub fn aligned_vectors(p: &BTreeMap<String, f64>, q: &BTreeMap<String, f64>) -> (Vec<f64>, Vec<f64>) {
    let keys: BTreeSet<&String> = p.keys().chain(q.keys()).collect();
    keys.into_iter()
        .map(|k| (p.get(k).copied().unwrap_or(0.0), q.get(k).copied().unwrap_or(0.0)))
        .unzip()
}

/// Mean TVD over distributions present in both sets, matched on
/// (question, scope). Invalid distributions on either side are skipped.
pub fn mean_tvd(a: &[ValueDistribution], b: &[ValueDistribution]) -> Result<f64> {
    let index: BTreeMap<(&str, &Scope), &ValueDistribution> = b
        .iter()
        .filter(|d| d.valid)
        .map(|d| ((d.question_id.as_str(), &d.scope), d))
        .collect();
    let distances: Vec<f64> = a
        .iter()
        .filter(|d| d.valid)
        .filter_map(|d| {
            index
                .get(&(d.question_id.as_str(), &d.scope))
                .map(|o| tvd_maps(&d.probabilities, &o.probabilities))
        })
        .collect();
    if distances.is_empty() {
        return Err(MetricsError::NoOverlap);
    }
    Ok(distances.iter().sum::<f64>() / distances.len() as f64)
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricsError::TooFew {
            needed: 2,
            got: x.len(),
        });
    }
    Ok(())
}

/// Pearson product-moment correlation.
pub fn pcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Ranks starting at 1; ties receive the mean of the ranks they span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson over tie-averaged ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pcc(&average_ranks(x), &average_ranks(y))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(pairs: &[(&str, f64)], support: usize) -> ValueDistribution {
        ValueDistribution {
            question_id: "q".into(),
            concept_id: "c".into(),
            scope: Scope::MultiPrompt,
            probabilities: pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            support_size: support,
            n_counted: 100,
            n_discarded: 0,
            n_prompts: 1,
            valid: true,
        }
    }

    /// Direct −Σ p log2 p, written out independently of the library path.
    fn oracle_entropy(p: &[f64]) -> f64 {
        let mut h = 0.0;
        for &x in p {
            if x != 0.0 {
                h -= x * (x.ln() / std::f64::consts::LN_2);
            }
        }
        h
    }

    #[test]
    fn uniform_over_six_is_one() {
        let d = dist(
            &[
                ("a", 1.0 / 6.0),
                ("b", 1.0 / 6.0),
                ("c", 1.0 / 6.0),
                ("d", 1.0 / 6.0),
                ("e", 1.0 / 6.0),
                ("f", 1.0 / 6.0),
            ],
            6,
        );
        assert!((normalized_entropy(&d).unwrap().entropy - 1.0).abs() < 1e-12);
    }

    #[test]
    fn point_mass_is_zero() {
        let d = dist(&[("a", 1.0), ("b", 0.0), ("c", 0.0)], 3);
        assert_eq!(normalized_entropy(&d).unwrap().entropy, 0.0);
    }

    #[test]
    fn skewed_over_four() {
        // 0.8/0.1/0.1 over a support of four: H = 0.9219 bits, / log2 4
        let expected = oracle_entropy(&[0.8, 0.1, 0.1]) / 2.0;
        assert!((expected - 0.4610).abs() < 1e-4);
        let d = dist(&[("a", 0.8), ("b", 0.1), ("c", 0.1), ("d", 0.0)], 4);
        let s = normalized_entropy(&d).unwrap();
        assert!((s.entropy - 0.4610).abs() < 1e-4);
        assert_eq!(s.support_cardinality, 4);
        // unobserved values still widen the denominator
        let sparse = dist(&[("a", 0.8), ("b", 0.1), ("c", 0.1)], 4);
        assert_eq!(normalized_entropy(&sparse).unwrap().entropy, s.entropy);
    }

    #[test]
    fn single_value_support_scores_zero() {
        assert_eq!(normalized_entropy(&dist(&[("a", 1.0)], 1)).unwrap().entropy, 0.0);
    }

    #[test]
    fn invalid_distribution_is_an_error() {
        let mut d = dist(&[], 3);
        d.valid = false;
        assert!(matches!(
            normalized_entropy(&d),
            Err(MetricsError::InvalidDistribution(_))
        ));
    }

    #[test]
    fn summary_of_three() {
        // sample std of [0.2, 0.6, 1.0] is 0.4; SE = 0.4 / sqrt 3
        let s = summarize(&[0.2, 0.6, 1.0]).unwrap();
        assert!((s.mean - 0.6).abs() < 1e-12);
        assert!((s.standard_error - 0.4 / 3f64.sqrt()).abs() < 1e-12);
        assert!((s.standard_error - 0.2309).abs() < 1e-4);
        let one = summarize(&[0.5]).unwrap();
        assert_eq!((one.mean, one.standard_error), (0.5, 0.0));
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn model_score_needs_both_scopes() {
        let s = |scope: Scope, e: f64| GradeScore {
            question_id: "q".into(),
            concept_id: "c".into(),
            scope,
            entropy: e,
            support_cardinality: 2,
        };
        let single = || Scope::SinglePrompt { prompt_id: "p".into() };
        let m = model_score(&[s(Scope::MultiPrompt, 0.64), s(single(), 0.4), s(single(), 0.58)]).unwrap();
        assert!((m.multi.mean - 0.64).abs() < 1e-12);
        assert!((m.single.mean - 0.49).abs() < 1e-12);
        assert!(model_score(&[s(Scope::MultiPrompt, 0.5)]).is_err());
        assert!(model_score(&[]).is_err());
    }

    #[test]
    fn default_behavior_threshold() {
        let flagged = detect_default_behaviors(&[dist(&[("round", 0.98), ("square", 0.02)], 2)], DEFAULT_TAU);
        assert_eq!(flagged.behaviors.len(), 1);
        assert_eq!(flagged.behaviors[0].value, "round");
        assert_eq!(flagged.behaviors[0].frequency, 0.98);

        let boundary = detect_default_behaviors(&[dist(&[("a", 0.8), ("b", 0.2)], 2)], 0.8);
        assert_eq!(boundary.behaviors.len(), 1);

        let balanced = detect_default_behaviors(&[dist(&[("a", 0.5), ("b", 0.5)], 2)], 0.8);
        assert!(balanced.behaviors.is_empty());
        assert_eq!(balanced.pct_total, 0.0);
    }

    #[test]
    fn flagged_binary_distribution_has_low_entropy() {
        let bound = oracle_entropy(&[0.8, 0.2]);
        assert!((bound - 0.7219).abs() < 1e-4);
        for p in [0.8, 0.85, 0.9, 0.99, 1.0] {
            let d = dist(&[("a", p), ("b", 1.0 - p)], 2);
            assert_eq!(
                detect_default_behaviors(std::slice::from_ref(&d), 0.8).behaviors.len(),
                1
            );
            assert!(normalized_entropy(&d).unwrap().entropy <= bound + 1e-12);
        }
    }

    #[test]
    fn nota_rates() {
        let a = |v: &str| AnswerRecord {
            image_id: "i".into(),
            question_id: "q".into(),
            prompt_id: "p".into(),
            model_id: "m".into(),
            raw_answer: "".into(),
            mapped_value: v.into(),
        };
        let mut answers: Vec<_> = (0..885).map(|_| a("round")).collect();
        answers.extend((0..115).map(|_| a(crate::model::NONE_OF_THE_ABOVE)));
        assert_eq!(nota_rate(&answers).unwrap(), 0.115);
        assert_eq!(nota_rate(&answers[..885]).unwrap(), 0.0);
        assert_eq!(nota_rate(&answers[885..]).unwrap(), 1.0);
        assert!(nota_rate(&[]).is_err());
    }

    #[test]
    fn tvd_examples() {
        let p = dist(&[("a", 0.8), ("b", 0.2)], 2);
        let q = dist(&[("a", 0.5), ("b", 0.5)], 2);
        assert!((tvd(&p, &q).unwrap() - 0.5 * (0.3 + 0.3)).abs() < 1e-12);
        assert_eq!(tvd(&p, &p).unwrap(), 0.0);
        assert_eq!(tvd(&dist(&[("a", 1.0)], 1), &dist(&[("b", 1.0)], 1)).unwrap(), 1.0);
    }

    #[test]
    fn correlations() {
        assert!((pcc(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pcc(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap() + 1.0).abs() < 1e-12);
        // cov = 1, var_x = var_y = 2 (sums of squares), r = 1/2
        assert!((pcc(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-9);
        assert_eq!(pcc(&[1.0, 1.0], &[1.0, 2.0]), Err(MetricsError::ZeroVariance));
        assert_eq!(pcc(&[1.0], &[1.0]), Err(MetricsError::TooFew { needed: 2, got: 1 }));
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 4.0, 9.0, 16.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn mean_tvd_matches_on_question_and_scope() {
        let mut a = dist(&[("x", 1.0)], 2);
        let mut b = dist(&[("y", 1.0)], 2);
        a.question_id = "q1".into();
        b.question_id = "q1".into();
        let other = dist(&[("x", 1.0)], 2);
        assert_eq!(mean_tvd(&[a.clone(), other.clone()], &[b, other]).unwrap(), 0.5);
        let mut c = a.clone();
        c.question_id = "zzz".into();
        assert_eq!(mean_tvd(&[a], &[c]), Err(MetricsError::NoOverlap));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn probs(k: usize) -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(0.0f64..1.0, k).prop_filter_map("nonzero", |w| {
                let s: f64 = w.iter().sum();
                (s > 1e-9).then(|| w.iter().map(|x| x / s).collect())
            })
        }

        fn as_map(p: &[f64]) -> BTreeMap<String, f64> {
            p.iter().enumerate().map(|(i, &v)| (format!("v{i:02}"), v)).collect()
        }

        proptest! {
            #[test]
            fn entropy_in_unit_interval_and_permutation_invariant(p in probs(5), rot in 0usize..5) {
                let h = normalized_entropy_of(&p, 5);
                prop_assert!((0.0..=1.0).contains(&h));
                let mut r = p.clone();
                r.rotate_left(rot);
                prop_assert!((normalized_entropy_of(&r, 5) - h).abs() < 1e-12);
                prop_assert!((h - oracle_entropy(&p) / 5f64.log2()).abs() < 1e-12);
            }

            #[test]
            fn tvd_is_a_metric(p in probs(4), q in probs(4), r in probs(4)) {
                let (mp, mq, mr) = (as_map(&p), as_map(&q), as_map(&r));
                let pq = tvd_maps(&mp, &mq);
                prop_assert!((pq - tvd_maps(&mq, &mp)).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&pq));
                prop_assert!(tvd_maps(&mp, &mp) == 0.0);
                prop_assert!(pq <= tvd_maps(&mp, &mr) + tvd_maps(&mr, &mq) + 1e-12);
            }

            #[test]
            fn pcc_bounded(x in prop::collection::vec(-10.0f64..10.0, 3..10), seed in any::<u64>()) {
                let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v * ((seed >> (i % 60)) & 1) as f64 + i as f64).collect();
                if let Ok(r) = pcc(&x, &y) {
                    prop_assert!((-1.0..=1.0).contains(&r));
                }
            }
        }
    }
}
