//! Deterministic offline substrate.
//!
//! Echoes the markers the envelope's directive asks for, followed by a
//! canned answer. A fault plan can override levels, drop markers, or emit
//! truncated markers for specific items.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Substrate, SubstrateConfig, SubstrateError, SubstrateResponse};
use crate::router::Level;
use crate::scaffold::{intervention_marker, PromptEnvelope, BOUNDARY_MARKER, UNCERTAINTY_MARKER};

/// Item keys are either `item_id` or `profile_id:item_id`; the scoped form
/// wins when both are present.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockFaultPlan {
    #[serde(default)]
    pub malform: bool,
    #[serde(default)]
    pub malform_items: BTreeSet<String>,
    #[serde(default)]
    pub omit_items: BTreeSet<String>,
    #[serde(default)]
    pub level_overrides: BTreeMap<String, Level>,
}

impl MockFaultPlan {
    fn scoped<'a>(envelope: &'a PromptEnvelope) -> Option<String> {
        envelope
            .profile_id
            .as_ref()
            .map(|p| format!("{p}:{}", envelope.item_id))
    }

    fn matches(set: &BTreeSet<String>, envelope: &PromptEnvelope) -> bool {
        set.contains(&envelope.item_id) || Self::scoped(envelope).is_some_and(|k| set.contains(&k))
    }

    fn level_for(&self, envelope: &PromptEnvelope) -> Option<Level> {
        Self::scoped(envelope)
            .and_then(|k| self.level_overrides.get(&k).copied())
            .or_else(|| self.level_overrides.get(&envelope.item_id).copied())
            .map(|l| l.min(crate::router::MAX_LEVEL))
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn word_count(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

pub fn mock_complete(envelope: &PromptEnvelope, faults: &MockFaultPlan) -> SubstrateResponse {
    mock_complete_as("mock", envelope, faults)
}

fn mock_complete_as(
    substrate_id: &str,
    envelope: &PromptEnvelope,
    faults: &MockFaultPlan,
) -> SubstrateResponse {
    let mut lines: Vec<String> = Vec::new();
    if let Some(d) = &envelope.directive {
        if !MockFaultPlan::matches(&faults.omit_items, envelope) {
            let level = faults.level_for(envelope).unwrap_or(d.level_hint);
            let status = intervention_marker(level, d.marker_partition(), &d.subject);
            if faults.malform || MockFaultPlan::matches(&faults.malform_items, envelope) {
                lines.push(status.chars().take(11).collect());
            } else {
                lines.push(status);
                if level >= 2 {
                    lines.push(UNCERTAINTY_MARKER.to_string());
                }
                if level >= 3 {
                    lines.push(BOUNDARY_MARKER.to_string());
                }
            }
        }
    }
    let letter = ['A', 'B', 'C', 'D'][(fnv1a(&envelope.item_id) % 4) as usize];
    lines.push(format!("Answer: {letter}"));
    let text = lines.join("\n");
    SubstrateResponse {
        prompt_tokens: word_count(&envelope.system_text) + word_count(&envelope.user_text),
        completion_tokens: word_count(&text),
        text,
        latency_ms: 0,
        substrate_id: substrate_id.to_string(),
        attempt_count: 1,
        attempts: Vec::new(),
        raw_payload: None,
    }
}

#[derive(Debug, Clone)]
pub struct MockSubstrate {
    id: String,
    faults: MockFaultPlan,
    parallelism: usize,
}

impl MockSubstrate {
    pub fn new(config: &SubstrateConfig) -> Self {
        MockSubstrate {
            id: config.id.clone(),
            faults: config.faults.clone(),
            parallelism: config.parallelism_limit,
        }
    }
}

impl Substrate for MockSubstrate {
    fn id(&self) -> &str {
        &self.id
    }

    fn parallelism(&self) -> usize {
        self.parallelism
    }

    fn complete(&self, envelope: &PromptEnvelope) -> Result<SubstrateResponse, SubstrateError> {
        Ok(mock_complete_as(&self.id, envelope, &self.faults))
    }
}
