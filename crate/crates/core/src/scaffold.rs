//! Substrate-facing prompt assembly and the intervention marker grammar.
//!
//! Marker grammar (one line each, emitted at the top of a response):
//!
//! ```text
//! [CCS:INTERVENTION level=<0|1|2|3> partition=<strong|mixed|weak> domain=<label>]
//! [CCS:UNCERTAINTY]
//! [CCS:BOUNDARY]
//! ```
//!
//! The follow-up markers only appear when the level is 2 or higher.

use serde::{Deserialize, Serialize};

use crate::corpus::Item;
use crate::profile::{parse_profile, CapabilityProfile, DomainLabel, Partition, ProfileError};
use crate::router::{Level, RoutingDirective};

pub const TEMPLATE_VERSION: &str = "ccs-template/1";

pub const MARKER_PREFIX: &str = "[CCS:";
pub const UNCERTAINTY_MARKER: &str = "[CCS:UNCERTAINTY]";
pub const BOUNDARY_MARKER: &str = "[CCS:BOUNDARY]";

const PROFILE_BEGIN: &str = "--- BEGIN CAPABILITY PROFILE ---";
const PROFILE_END: &str = "--- END CAPABILITY PROFILE ---";

const ROUTING_POLICY: &str = "Routing policy: For prompts in strong domains, respond directly and \
minimize intervention markers. For prompts in mixed domains, evaluate prompt-evidence alignment \
before determining intervention intensity. For prompts in weak domains, include explicit \
uncertainty disclosure and capability-boundary signaling.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEnvelope {
    pub item_id: String,
    pub system_text: String,
    pub user_text: String,
    /// `None` for the unscaffolded baseline condition.
    pub directive: Option<RoutingDirective>,
    pub template_version: String,
    #[serde(default)]
    pub profile_id: Option<String>,
}

/// The status marker line for a directive.
pub fn intervention_marker(level: Level, partition: Partition, domain: &DomainLabel) -> String {
    format!("[CCS:INTERVENTION level={level} partition={partition} domain={domain}]")
}

/// Marker lines a compliant response starts with.
pub fn expected_marker_lines(directive: &RoutingDirective) -> Vec<String> {
    let mut lines = vec![intervention_marker(
        directive.level_hint,
        directive.marker_partition(),
        &directive.subject,
    )];
    if directive.level_hint >= 2 {
        lines.push(UNCERTAINTY_MARKER.to_string());
    }
    if directive.level_hint >= 3 {
        lines.push(BOUNDARY_MARKER.to_string());
    }
    lines
}

fn profile_summary(profile: &CapabilityProfile) -> String {
    let list = |set: &std::collections::BTreeSet<DomainLabel>| {
        set.iter().map(DomainLabel::as_str).collect::<Vec<_>>().join(", ")
    };
    format!(
        "User capability profile: {{ strong: [{}], mixed: [{}], weak: [{}] }}",
        list(profile.strong()),
        list(profile.mixed()),
        list(profile.weak())
    )
}

fn level_instructions(level: Level) -> &'static str {
    match level {
        0 => "Level 0: respond directly and minimize intervention markers. Emit only the level-0 \
status marker line shown above, with no other markers, then answer.",
        1 => "Level 1: emit the status marker line, answer, and add one short sentence flagging \
the single point the user should double-check.",
        2 => "Level 2: emit the status marker line followed by [CCS:UNCERTAINTY] on its own line. \
Answer conditionally: state the assumptions your answer depends on and where they could fail.",
        _ => "Level 3: emit the status marker line, then [CCS:UNCERTAINTY] and [CCS:BOUNDARY] each \
on its own line. Include explicit uncertainty disclosure and capability-boundary signaling: say \
how confident you are, and say plainly that this question lies outside the user's reliable \
evaluation capacity so the answer should be checked by a qualified specialist.",
    }
}

fn user_text(item: &Item) -> String {
    let mut s = item.question.trim().to_string();
    if item.is_multiple_choice() {
        for (letter, choice) in ['A', 'B', 'C', 'D'].iter().zip(&item.choices) {
            s.push_str(&format!("\n{letter}. {choice}"));
        }
        s.push_str("\n\nAnswer with the letter of the correct option.");
    }
    s
}

/// Builds the scaffolded prompt for one item under one profile.
pub fn assemble_prompt(
    profile: &CapabilityProfile,
    directive: &RoutingDirective,
    item: &Item,
) -> PromptEnvelope {
    let marker_lines = expected_marker_lines(directive);
    let mut system = String::new();
    system.push_str(
        "You are assisting a professional whose ability to evaluate your reasoning differs \
across domains.\n\n",
    );
    system.push_str(&profile_summary(profile));
    system.push_str("\n\n");
    system.push_str(ROUTING_POLICY);
    system.push_str("\n\n");
    system.push_str(&format!(
        "Routing decision for this prompt: domain={} partition={} level={} reason={}\n",
        directive.subject,
        directive.marker_partition(),
        directive.level_hint,
        directive.rationale
    ));
    system.push_str(level_instructions(directive.level_hint));
    system.push_str("\n\nBegin your response with exactly these marker lines and nothing before them:\n");
    for line in &marker_lines {
        system.push_str(line);
        system.push('\n');
    }
    system.push_str("Do not emit any other [CCS: markers.\n\n");
    system.push_str(PROFILE_BEGIN);
    system.push('\n');
    system.push_str(&profile.to_toml());
    system.push_str(PROFILE_END);
    system.push('\n');

    PromptEnvelope {
        item_id: item.id.clone(),
        system_text: system,
        user_text: user_text(item),
        directive: Some(directive.clone()),
        template_version: TEMPLATE_VERSION.to_string(),
        profile_id: Some(profile.id().to_string()),
    }
}

/// Unscaffolded prompt for the baseline condition.
pub fn assemble_baseline(item: &Item) -> PromptEnvelope {
    PromptEnvelope {
        item_id: item.id.clone(),
        system_text: "You are a helpful assistant. Answer the question.\n".to_string(),
        user_text: user_text(item),
        directive: None,
        template_version: TEMPLATE_VERSION.to_string(),
        profile_id: None,
    }
}

/// Recovers the embedded profile from an assembled system prompt.
pub fn extract_profile_block(system_text: &str) -> Option<Result<CapabilityProfile, ProfileError>> {
    let start = system_text.find(PROFILE_BEGIN)? + PROFILE_BEGIN.len();
    let end = start + system_text[start..].find(PROFILE_END)?;
    Some(parse_profile(&system_text[start..end]))
}
