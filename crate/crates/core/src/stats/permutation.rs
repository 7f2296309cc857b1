//! Matched-pair sign-flip permutation test.
//!
//! Each pair contributes `x = s · (value_B - value_A)` where `s` is the
//! sign of the partition escalation from A to B for the item's subject.
//! Under the null every `x` is equally likely to carry either sign. Sums are
//! compared as integers, so `|T_perm| >= |T_obs|` has no rounding slack.

use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{StatsError, TrialRecord};
use crate::corpus::Condition;

pub const DEFAULT_PERMUTATIONS: u64 = 10_000;

/// Per-pair outcome compared between conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermMetric {
    /// Intervention level 0..=3.
    Level,
    /// 1 when fired, else 0.
    Fired,
}

impl PermMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            PermMetric::Level => "level",
            PermMetric::Fired => "fired",
        }
    }

    fn value(self, record: &TrialRecord) -> Option<i64> {
        let ann = record.annotation.as_ref()?;
        Some(match self {
            PermMetric::Level => i64::from(ann.level),
            PermMetric::Fired => i64::from(ann.fired),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermResult {
    pub metric: PermMetric,
    /// Mean signed difference over pairs.
    pub observed_stat: f64,
    pub n_pairs: u64,
    pub n_permutations: u64,
    pub exceed_count: u64,
    pub p_value: f64,
    pub seed: u64,
}

/// Matched records for one item under conditions A and B.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedPair {
    pub a: TrialRecord,
    pub b: TrialRecord,
}

/// Pairs completed records of `cond_a` and `cond_b` on `substrate_id` by
/// item id. Items present under only one condition are an error.
pub fn pair_records(
    records: &[TrialRecord],
    cond_a: &Condition,
    cond_b: &Condition,
    substrate_id: &str,
) -> Result<Vec<MatchedPair>, StatsError> {
    let mut a: BTreeMap<&str, &TrialRecord> = BTreeMap::new();
    let mut b: BTreeMap<&str, &TrialRecord> = BTreeMap::new();
    for r in records.iter().filter(|r| r.substrate_id == substrate_id && r.is_completed()) {
        if &r.condition == cond_a {
            a.insert(&r.item_id, r);
        } else if &r.condition == cond_b {
            b.insert(&r.item_id, r);
        }
    }
    let unmatched: Vec<String> = a
        .keys()
        .filter(|k| !b.contains_key(*k))
        .chain(b.keys().filter(|k| !a.contains_key(*k)))
        .map(|k| k.to_string())
        .collect();
    if !unmatched.is_empty() {
        return Err(StatsError::UnmatchedPairs(unmatched));
    }
    Ok(a.into_iter()
        .map(|(id, ra)| MatchedPair {
            a: ra.clone(),
            b: b[id].clone(),
        })
        .collect())
}

/// Signed per-pair contributions.
pub fn signed_differences(pairs: &[MatchedPair], metric: PermMetric) -> Result<Vec<i64>, StatsError> {
    pairs
        .iter()
        .map(|p| {
            if p.a.item_id != p.b.item_id {
                return Err(StatsError::UnmatchedPairs(vec![
                    p.a.item_id.clone(),
                    p.b.item_id.clone(),
                ]));
            }
            let partition = |r: &TrialRecord| {
                r.directive
                    .as_ref()
                    .map(|d| i64::from(d.partition.escalation_rank()))
                    .ok_or_else(|| StatsError::MissingDirective(r.item_id.clone()))
            };
            let sign = (partition(&p.b)? - partition(&p.a)?).signum();
            let value = |r: &TrialRecord| {
                metric
                    .value(r)
                    .ok_or_else(|| StatsError::MissingAnnotation(r.item_id.clone()))
            };
            Ok(sign * (value(&p.b)? - value(&p.a)?))
        })
        .collect()
}

pub fn permutation_test(
    pairs: &[MatchedPair],
    n_permutations: u64,
    seed: u64,
    metric: PermMetric,
) -> Result<PermResult, StatsError> {
    let xs = signed_differences(pairs, metric)?;
    let mut result = sign_flip_test(&xs, n_permutations, seed)?;
    result.metric = metric;
    Ok(result)
}

/// Sign-flip test on precomputed contributions. Permutation `i` draws its
/// flips from a ChaCha8 stream `i` under `seed`, so the outcome does not
/// depend on thread scheduling, and the input is sorted first so it does not
/// depend on pair order.
pub fn sign_flip_test(xs: &[i64], n_permutations: u64, seed: u64) -> Result<PermResult, StatsError> {
    if xs.is_empty() {
        return Err(StatsError::NoPairs);
    }
    if n_permutations == 0 {
        return Err(StatsError::ZeroPermutations);
    }
    let mut xs = xs.to_vec();
    xs.sort_unstable();
    let observed: i64 = xs.iter().sum();
    let threshold = observed.abs();

    let exceed_count = (0..n_permutations)
        .into_par_iter()
        .filter(|&i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i);
            let mut sum = 0i64;
            let mut bits = 0u64;
            for (j, x) in xs.iter().enumerate() {
                if j % 64 == 0 {
                    bits = rng.next_u64();
                }
                sum += if bits & 1 == 1 { -x } else { *x };
                bits >>= 1;
            }
            sum.abs() >= threshold
        })
        .count() as u64;

    Ok(PermResult {
        metric: PermMetric::Level,
        observed_stat: observed as f64 / xs.len() as f64,
        n_pairs: xs.len() as u64,
        n_permutations,
        exceed_count,
        p_value: (exceed_count + 1) as f64 / (n_permutations + 1) as f64,
        seed,
    })
}
