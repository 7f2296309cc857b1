use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotate::InterventionAnnotation;
use crate::corpus::Condition;
use crate::profile::DomainLabel;
use crate::router::RoutingDirective;
use crate::substrate::AttemptRecord;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialError {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub attempts: Vec<AttemptRecord>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub attempt_count: u32,
}

/// Wall-clock data. Excluded from [`TrialRecord::content_digest`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timing {
    pub timestamp_ms: u64,
    pub latency_ms: u64,
}

/// One (item, condition, substrate) execution: the run-log persistence unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub item_id: String,
    pub subject: DomainLabel,
    pub condition: Condition,
    #[serde(default)]
    pub profile_id: Option<String>,
    pub substrate_id: String,
    #[serde(default)]
    pub template_version: String,
    #[serde(default)]
    pub directive: Option<RoutingDirective>,
    #[serde(default)]
    pub annotation: Option<InterventionAnnotation>,
    #[serde(default)]
    pub raw_response: Option<String>,
    #[serde(default)]
    pub raw_response_digest: Option<String>,
    #[serde(default)]
    pub usage: Option<Usage>,
    #[serde(default)]
    pub error: Option<TrialError>,
    #[serde(default)]
    pub timing: Timing,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl TrialRecord {
    pub fn is_completed(&self) -> bool {
        self.annotation.is_some() && self.error.is_none()
    }

    pub fn fired(&self) -> Option<bool> {
        self.annotation.as_ref().map(|a| a.fired)
    }

    pub fn level(&self) -> Option<u8> {
        self.annotation.as_ref().map(|a| a.level)
    }

    /// Resume key: identifies the (item, condition, substrate) pair.
    pub fn pair_key(&self) -> String {
        pair_key(&self.item_id, &self.condition, &self.substrate_id)
    }

    /// Digest of the record with `timing` zeroed, for reproducibility checks.
    pub fn content_digest(&self) -> String {
        let mut stripped = self.clone();
        stripped.timing = Timing::default();
        let json = serde_json::to_vec(&stripped).expect("trial records always serialize");
        sha256_hex(&json)
    }

    /// True when the stored digest matches the stored raw text.
    pub fn digest_consistent(&self) -> bool {
        match (&self.raw_response, &self.raw_response_digest) {
            (Some(text), Some(d)) => sha256_hex(text.as_bytes()) == *d,
            (None, None) => true,
            (None, Some(_)) => true,
            (Some(_), None) => false,
        }
    }
}

pub fn pair_key(item_id: &str, condition: &Condition, substrate_id: &str) -> String {
    let joined = format!("{item_id}\u{1f}{condition}\u{1f}{substrate_id}");
    sha256_hex(joined.as_bytes())[..32].to_string()
}
