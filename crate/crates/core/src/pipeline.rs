//! Run execution: route, assemble, complete, parse, record.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;

use crate::annotate::parse_response;
use crate::corpus::{expand_conditions, Condition, ConditionPair, Item, PairCounts, PairFilter};
use crate::profile::CapabilityProfile;
use crate::router::{route_item, RouteError};
use crate::runlog::{corpus_digest, RunLogError, RunLogWriter, RunManifest, Seeds, TOOL_VERSION};
use crate::scaffold::{assemble_baseline, assemble_prompt, PromptEnvelope, TEMPLATE_VERSION};
use crate::stats::{sha256_hex, Timing, TrialError, TrialRecord, Usage};
use crate::substrate::{complete_batch, connect, SubstrateConfig, SubstrateError, SubstrateResponse};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("condition {0} names no loaded profile")]
    UnknownProfile(String),
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error(transparent)]
    Substrate(#[from] SubstrateError),
    #[error(transparent)]
    Log(#[from] RunLogError),
    #[error("run has no items")]
    NoItems,
    #[error("run has no conditions")]
    NoConditions,
    #[error("run has no substrates")]
    NoSubstrates,
}

/// Everything that determines a run's content.
#[derive(Debug, Clone)]
pub struct RunPlan {
    pub items: Vec<Item>,
    pub profiles: Vec<CapabilityProfile>,
    pub conditions: Vec<Condition>,
    pub substrates: Vec<SubstrateConfig>,
    pub filter: PairFilter,
    pub seeds: Seeds,
}

/// A routed and assembled (item, condition) pair, ready for any substrate.
#[derive(Debug, Clone)]
pub struct PreparedTrial {
    pub pair: ConditionPair,
    pub envelope: PromptEnvelope,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOutcome {
    pub completed: usize,
    pub errored: usize,
    pub skipped: usize,
    /// Errors where the substrate gave up after retrying.
    pub exhausted: usize,
}

impl RunPlan {
    fn profile_index(&self) -> BTreeMap<&str, &CapabilityProfile> {
        self.profiles.iter().map(|p| (p.id(), p)).collect()
    }

    fn pairs(&self) -> (Vec<ConditionPair>, PairCounts) {
        expand_conditions(&self.items, &self.conditions, &self.filter)
    }

    pub fn manifest(&self) -> RunManifest {
        let (_, counts) = self.pairs();
        RunManifest {
            run_id: String::new(),
            corpus_digest: corpus_digest(&self.items),
            profile_ids: self.profiles.iter().map(|p| p.id().to_string()).collect(),
            substrate_ids: self.substrates.iter().map(|s| s.id.clone()).collect(),
            conditions: self.conditions.iter().map(ToString::to_string).collect(),
            seeds: self.seeds,
            pair_counts: counts,
            filter: self.filter.label.clone(),
            template_version: TEMPLATE_VERSION.to_string(),
            tool_version: TOOL_VERSION.to_string(),
        }
        .seal()
    }

    /// Routes and assembles every pair. Fails before any substrate call if
    /// a condition or subject cannot be routed.
    pub fn prepare(&self) -> Result<Vec<PreparedTrial>, PipelineError> {
        if self.items.is_empty() {
            return Err(PipelineError::NoItems);
        }
        if self.conditions.is_empty() {
            return Err(PipelineError::NoConditions);
        }
        let profiles = self.profile_index();
        let (pairs, _) = self.pairs();
        pairs
            .into_iter()
            .map(|pair| {
                let envelope = match &pair.condition {
                    Condition::Baseline => assemble_baseline(&pair.item),
                    Condition::Profile(id) => {
                        let profile = profiles
                            .get(id.as_str())
                            .ok_or_else(|| PipelineError::UnknownProfile(id.clone()))?;
                        let directive = route_item(profile, &pair.item)?;
                        assemble_prompt(profile, &directive, &pair.item)
                    }
                };
                Ok(PreparedTrial { pair, envelope })
            })
            .collect()
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// Turns one substrate outcome into a run-log record.
pub fn build_record(
    trial: &PreparedTrial,
    substrate_id: &str,
    result: Result<SubstrateResponse, SubstrateError>,
    timestamp_ms: u64,
) -> TrialRecord {
    let mut record = TrialRecord {
        item_id: trial.pair.item.id.clone(),
        subject: trial.pair.item.subject.clone(),
        condition: trial.pair.condition.clone(),
        profile_id: trial.envelope.profile_id.clone(),
        substrate_id: substrate_id.to_string(),
        template_version: trial.envelope.template_version.clone(),
        directive: trial.envelope.directive.clone(),
        annotation: None,
        raw_response: None,
        raw_response_digest: None,
        usage: None,
        error: None,
        timing: Timing {
            timestamp_ms,
            latency_ms: 0,
        },
    };
    match result {
        Ok(resp) => {
            record.annotation = Some(parse_response(&resp.text));
            record.raw_response_digest = Some(sha256_hex(resp.text.as_bytes()));
            record.usage = Some(Usage {
                prompt_tokens: resp.prompt_tokens,
                completion_tokens: resp.completion_tokens,
                attempt_count: resp.attempt_count,
            });
            record.timing.latency_ms = resp.latency_ms;
            record.raw_response = Some(resp.text);
        }
        Err(e) => {
            record.error = Some(TrialError {
                code: e.code().to_string(),
                message: e.to_string(),
                attempts: e.attempts().to_vec(),
            });
        }
    }
    record
}

fn is_exhaustion(e: &SubstrateError) -> bool {
    matches!(
        e,
        SubstrateError::RateLimitExhausted { .. }
            | SubstrateError::Timeout { .. }
            | SubstrateError::Upstream { .. }
            | SubstrateError::Transport { .. }
    )
}

/// Executes every pair on every substrate, appending records in a fixed
/// order. Pairs whose key is in `skip` are not re-run. Per-trial substrate
/// failures become error records and the run continues.
pub fn execute(
    plan: &RunPlan,
    log: &mut RunLogWriter,
    skip: &BTreeSet<String>,
) -> Result<RunOutcome, PipelineError> {
    if plan.substrates.is_empty() {
        return Err(PipelineError::NoSubstrates);
    }
    let trials = plan.prepare()?;
    let backends = plan
        .substrates
        .iter()
        .map(connect)
        .collect::<Result<Vec<_>, _>>()?;

    let mut outcome = RunOutcome::default();
    for backend in &backends {
        let pending: Vec<&PreparedTrial> = trials
            .iter()
            .filter(|t| {
                let key = crate::stats::pair_key(&t.pair.item.id, &t.pair.condition, backend.id());
                let done = skip.contains(&key);
                outcome.skipped += usize::from(done);
                !done
            })
            .collect();
        let chunk = backend.parallelism().max(1) * 8;
        for batch in pending.chunks(chunk) {
            let envelopes: Vec<PromptEnvelope> = batch.iter().map(|t| t.envelope.clone()).collect();
            let results = complete_batch(backend.as_ref(), &envelopes);
            for (trial, result) in batch.iter().zip(results) {
                match &result {
                    Ok(_) => outcome.completed += 1,
                    Err(e) => {
                        log::warn!("{} {}: {e}", trial.pair.item.id, trial.pair.condition);
                        outcome.errored += 1;
                        outcome.exhausted += usize::from(is_exhaustion(e));
                    }
                }
                log.append(&build_record(trial, backend.id(), result, now_ms()))?;
            }
        }
    }
    Ok(outcome)
}
