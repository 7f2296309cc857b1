//! Activation rates, exact Fisher tests, Wilson intervals, and matched-pair
//! permutation tests over trial records.

mod fisher;
mod permutation;
mod rate;
mod record;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fisher::{fisher_exact, fisher_exact_fraction, ContingencyTable2x2, FisherResult};
pub use permutation::{
    pair_records, permutation_test, sign_flip_test, signed_differences, MatchedPair, PermMetric,
    PermResult, DEFAULT_PERMUTATIONS,
};
pub use rate::{activation_rate, activation_rate_for, wilson_ci, Precision, RateSummary};
pub use record::{pair_key, sha256_hex, Timing, TrialError, TrialRecord, Usage};

use crate::corpus::Condition;
use crate::profile::DomainLabel;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("empty sample: n must be positive")]
    EmptySample,
    #[error("invalid counts: k={k} exceeds n={n}")]
    InvalidCounts { k: u64, n: u64 },
    #[error("confidence must lie strictly between 0 and 1, got {0}")]
    InvalidConfidence(f64),
    #[error("unmatched pairs for items: {}", .0.join(", "))]
    UnmatchedPairs(Vec<String>),
    #[error("record for item {0} has no routing directive")]
    MissingDirective(String),
    #[error("record for item {0} has no annotation")]
    MissingAnnotation(String),
    #[error("no matched pairs")]
    NoPairs,
    #[error("number of permutations must be positive")]
    ZeroPermutations,
}

pub const METHOD_NOTE: &str = "Permutation statistic: mean over matched pairs of the condition-B minus \
condition-A outcome, signed by the partition escalation expected from A to B for the item's subject \
(0 when both conditions place the subject in the same partition). Null: independent per-pair sign \
flips. p = (exceed + 1) / (permutations + 1). Fisher tests are two-sided by point-probability \
ordering; intervals are 95% Wilson score intervals.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRate {
    pub condition: String,
    pub group: String,
    pub summary: RateSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFisher {
    pub group: String,
    pub table: ContingencyTable2x2,
    pub result: FisherResult,
}

/// Structured analysis of one substrate's records for a pair of conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub substrate_id: String,
    pub condition_a: String,
    pub condition_b: String,
    pub rates: Vec<GroupRate>,
    pub fisher: Vec<GroupFisher>,
    pub permutation: Vec<PermResult>,
    pub omitted_groups: Vec<String>,
    pub note: String,
}

/// Maps a subject to its reporting group; `None` drops the record.
pub type GroupFn<'a> = &'a dyn Fn(&DomainLabel) -> Option<String>;

pub struct StatsRequest<'a> {
    pub substrate_id: &'a str,
    pub condition_a: &'a Condition,
    pub condition_b: &'a Condition,
    pub groups: &'a [String],
    pub group_of: GroupFn<'a>,
    pub n_permutations: u64,
    pub seed: u64,
}

pub fn summarize(records: &[TrialRecord], req: &StatsRequest<'_>) -> Result<StatsReport, StatsError> {
    let on_substrate: Vec<TrialRecord> = records
        .iter()
        .filter(|r| r.substrate_id == req.substrate_id)
        .cloned()
        .collect();

    let mut rates = Vec::new();
    let mut omitted = Vec::new();
    let mut by_condition: BTreeMap<String, BTreeMap<String, RateSummary>> = BTreeMap::new();
    for cond in [req.condition_a, req.condition_b] {
        let (map, missing) = activation_rate_for(
            &on_substrate,
            |r| (&r.condition == cond).then(|| (req.group_of)(&r.subject)).flatten(),
            req.groups,
        );
        omitted.extend(missing.into_iter().map(|g| format!("{cond}/{g}")));
        for g in req.groups {
            if let Some(s) = map.get(g) {
                rates.push(GroupRate {
                    condition: cond.to_string(),
                    group: g.clone(),
                    summary: s.clone(),
                });
            }
        }
        by_condition.insert(cond.to_string(), map);
    }

    let mut fisher = Vec::new();
    let (ra, rb) = (
        &by_condition[&req.condition_a.to_string()],
        &by_condition[&req.condition_b.to_string()],
    );
    for g in req.groups {
        if let (Some(a), Some(b)) = (ra.get(g), rb.get(g)) {
            let table = ContingencyTable2x2::new(a.fired, a.total - a.fired, b.fired, b.total - b.fired);
            fisher.push(GroupFisher {
                group: g.clone(),
                table,
                result: fisher_exact(&table),
            });
        }
    }

    let scoped: Vec<TrialRecord> = on_substrate
        .into_iter()
        .filter(|r| (req.group_of)(&r.subject).is_some())
        .collect();
    let pairs = pair_records(&scoped, req.condition_a, req.condition_b, req.substrate_id)?;
    let permutation = [PermMetric::Level, PermMetric::Fired]
        .into_iter()
        .map(|m| permutation_test(&pairs, req.n_permutations, req.seed, m))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(StatsReport {
        substrate_id: req.substrate_id.to_string(),
        condition_a: req.condition_a.to_string(),
        condition_b: req.condition_b.to_string(),
        rates,
        fisher,
        permutation,
        omitted_groups: omitted,
        note: METHOD_NOTE.to_string(),
    })
}
