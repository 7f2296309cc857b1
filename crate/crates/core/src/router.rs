//! Intervention routing: the partition decision matrix plus the lexical
//! consistency guardrail used for mixed domains.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Item;
use crate::profile::{classify_domain, CapabilityProfile, DomainLabel, Partition, UndeclaredPolicy};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RouteError {
    #[error("domain `{subject}` is not declared by profile `{profile}` and its policy is reject")]
    UndeclaredDomain { profile: String, subject: DomainLabel },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Aligned,
    Misaligned,
    NoEvidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub score: f64,
    pub matched_strong_terms: Vec<String>,
    pub matched_offpartition_terms: Vec<String>,
    pub threshold: f64,
    pub verdict: Verdict,
}

/// Stable reason codes attached to every directive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rationale {
    StrongSilent,
    StrongAmbiguous,
    MixedAligned,
    MixedNoEvidence,
    MixedMisaligned,
    WeakFull,
    UndeclaredDefault,
}

impl Rationale {
    pub fn as_str(self) -> &'static str {
        match self {
            Rationale::StrongSilent => "strong_silent",
            Rationale::StrongAmbiguous => "strong_ambiguous",
            Rationale::MixedAligned => "mixed_aligned",
            Rationale::MixedNoEvidence => "mixed_no_evidence",
            Rationale::MixedMisaligned => "mixed_misaligned",
            Rationale::WeakFull => "weak_full",
            Rationale::UndeclaredDefault => "undeclared_default",
        }
    }
}

impl fmt::Display for Rationale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Intervention intensity: 0 silent, 1 light flag, 2 conditional scaffold,
/// 3 full scaffold with uncertainty disclosure and boundary signaling.
pub type Level = u8;

pub const MAX_LEVEL: Level = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDirective {
    pub subject: DomainLabel,
    pub partition: Partition,
    pub level_hint: Level,
    pub alignment: AlignmentReport,
    pub rationale: Rationale,
}

impl RoutingDirective {
    pub fn fires(&self) -> bool {
        self.level_hint >= 1
    }

    /// Partition written into markers. Undeclared domains are routed as weak.
    pub fn marker_partition(&self) -> Partition {
        match self.partition {
            Partition::Undeclared => Partition::Weak,
            p => p,
        }
    }
}

/// Lowercase alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Counts occurrences of `keyword` (itself tokenized, so multi-word terms
/// match consecutive tokens) in `tokens`.
fn count_term(tokens: &[String], keyword: &str) -> usize {
    let needle = tokenize(keyword);
    if needle.is_empty() || needle.len() > tokens.len() {
        return 0;
    }
    tokens
        .windows(needle.len())
        .filter(|w| w.iter().zip(&needle).all(|(a, b)| a == b))
        .count()
}

fn collect_matches<'a>(
    tokens: &[String],
    vocabulary: impl Iterator<Item = &'a str>,
    matched: &mut Vec<String>,
) -> usize {
    let mut total = 0;
    let mut seen = std::collections::BTreeSet::new();
    for keyword in vocabulary {
        if !seen.insert(keyword) {
            continue;
        }
        let hits = count_term(tokens, keyword);
        if hits > 0 {
            total += hits;
            matched.push(keyword.to_string());
        }
    }
    total
}

/// Compares prompt evidence with the declared strong partition.
///
/// `score = strong_hits / (strong_hits + offpartition_hits + 1)`, where hits
/// count every occurrence of a vocabulary term in the prompt. A score at the
/// threshold counts as aligned.
pub fn assess_alignment(profile: &CapabilityProfile, prompt_text: &str) -> AlignmentReport {
    let tokens = tokenize(prompt_text);
    let mut matched_strong = Vec::new();
    let mut matched_off = Vec::new();
    let strong_hits = collect_matches(
        &tokens,
        profile.partition_vocabulary(Partition::Strong),
        &mut matched_strong,
    );
    let off_hits = collect_matches(
        &tokens,
        profile
            .partition_vocabulary(Partition::Mixed)
            .chain(profile.partition_vocabulary(Partition::Weak)),
        &mut matched_off,
    );
    matched_strong.sort();
    matched_off.sort();

    let threshold = profile.alignment_threshold();
    if strong_hits + off_hits == 0 {
        return AlignmentReport {
            score: 0.0,
            matched_strong_terms: matched_strong,
            matched_offpartition_terms: matched_off,
            threshold,
            verdict: Verdict::NoEvidence,
        };
    }
    let score = (strong_hits as f64 / (strong_hits + off_hits + 1) as f64).clamp(0.0, 1.0);
    let verdict = if score >= threshold {
        Verdict::Aligned
    } else {
        Verdict::Misaligned
    };
    AlignmentReport {
        score,
        matched_strong_terms: matched_strong,
        matched_offpartition_terms: matched_off,
        threshold,
        verdict,
    }
}

/// Decision matrix over (partition, verdict, ambiguity flag).
pub fn decide(
    partition: Partition,
    verdict: Verdict,
    ambiguous: bool,
    policy: UndeclaredPolicy,
) -> Option<(Level, Rationale)> {
    Some(match partition {
        Partition::Strong if ambiguous => (1, Rationale::StrongAmbiguous),
        Partition::Strong => (0, Rationale::StrongSilent),
        Partition::Mixed => match verdict {
            Verdict::Aligned => (0, Rationale::MixedAligned),
            Verdict::NoEvidence => (1, Rationale::MixedNoEvidence),
            Verdict::Misaligned => (2, Rationale::MixedMisaligned),
        },
        Partition::Weak => (3, Rationale::WeakFull),
        Partition::Undeclared => match policy {
            UndeclaredPolicy::TreatAsWeak => (3, Rationale::UndeclaredDefault),
            UndeclaredPolicy::Reject => return None,
        },
    })
}

/// Routes a prompt with no ambiguity annotation.
pub fn route(
    profile: &CapabilityProfile,
    subject: &DomainLabel,
    prompt_text: &str,
) -> Result<RoutingDirective, RouteError> {
    route_with_ambiguity(profile, subject, prompt_text, false)
}

pub fn route_with_ambiguity(
    profile: &CapabilityProfile,
    subject: &DomainLabel,
    prompt_text: &str,
    ambiguous: bool,
) -> Result<RoutingDirective, RouteError> {
    let partition = classify_domain(profile, subject);
    let alignment = assess_alignment(profile, prompt_text);
    let (level_hint, rationale) = decide(
        partition,
        alignment.verdict,
        ambiguous,
        profile.undeclared_policy(),
    )
    .ok_or_else(|| RouteError::UndeclaredDomain {
        profile: profile.id().to_string(),
        subject: subject.clone(),
    })?;
    Ok(RoutingDirective {
        subject: subject.clone(),
        partition,
        level_hint,
        alignment,
        rationale,
    })
}

/// Routes a corpus item; the evidence text is the question plus its options.
pub fn route_item(profile: &CapabilityProfile, item: &Item) -> Result<RoutingDirective, RouteError> {
    route_with_ambiguity(profile, &item.subject, &item.evidence_text(), item.ambiguous)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::builtin_profile;

    fn label(s: &str) -> DomainLabel {
        DomainLabel::parse(s).unwrap()
    }

    #[test]
    fn tokenizer_splits_on_non_alphanumerics() {
        assert_eq!(
            tokenize("A Bayesian-network's 3 nodes?"),
            ["a", "bayesian", "network", "s", "3", "nodes"]
        );
    }

    #[test]
    fn multiword_terms_match_consecutive_tokens() {
        let toks = tokenize("apply modus ponens then modus tollens");
        assert_eq!(count_term(&toks, "modus ponens"), 1);
        assert_eq!(count_term(&toks, "modus"), 2);
        assert_eq!(count_term(&toks, "ponens modus"), 0);
    }

    #[test]
    fn logic_prompt_with_ml_notation_is_aligned() {
        let nlp = builtin_profile("pcs-nlp").unwrap();
        let report = assess_alignment(
            &nlp,
            "Which inference rule lets the model derive this proof from the axioms?",
        );
        assert_eq!(report.matched_strong_terms, ["inference", "model"]);
        assert_eq!(report.matched_offpartition_terms, ["proof"]);
        assert_eq!(report.score, 0.5);
        assert_eq!(report.verdict, Verdict::Aligned);
    }

    #[test]
    fn clinical_psychology_prompt_is_misaligned() {
        let nlp = builtin_profile("pcs-nlp").unwrap();
        let report = assess_alignment(
            &nlp,
            "A therapist notes a client's anxiety symptoms meet DSM criteria. What diagnosis fits?",
        );
        assert!(report.matched_strong_terms.is_empty());
        assert!(report.matched_offpartition_terms.len() >= 4);
        assert_eq!(report.score, 0.0);
        assert_eq!(report.verdict, Verdict::Misaligned);
    }

    #[test]
    fn empty_vocabulary_gives_no_evidence() {
        let nlp = builtin_profile("pcs-nlp")
            .unwrap()
            .with_vocabulary(Default::default())
            .unwrap();
        let report = assess_alignment(&nlp, "gradient descent on a neural network");
        assert_eq!(report.verdict, Verdict::NoEvidence);
        assert_eq!(report.score, 0.0);
        let d = route(&nlp, &label("formal_logic"), "anything").unwrap();
        assert_eq!((d.level_hint, d.rationale), (1, Rationale::MixedNoEvidence));
    }

    #[test]
    fn decision_matrix_examples() {
        let nlp = builtin_profile("pcs-nlp").unwrap();
        let lit = builtin_profile("pcs-litprof").unwrap();
        let q = "Which loss function is minimized when training a neural network classifier?";

        let a = route(&nlp, &label("machine_learning"), q).unwrap();
        assert_eq!((a.partition, a.level_hint), (Partition::Strong, 0));
        assert_eq!(a.rationale, Rationale::StrongSilent);

        let b = route(&lit, &label("machine_learning"), q).unwrap();
        assert_eq!((b.partition, b.level_hint), (Partition::Weak, 3));
        assert_eq!(b.rationale, Rationale::WeakFull);

        let econ = "Under OLS, what is the variance of the regression estimator given the model?";
        let c = route(&nlp, &label("econometrics"), econ).unwrap();
        assert_eq!((c.partition, c.level_hint), (Partition::Mixed, 0));
        assert_eq!(c.rationale, Rationale::MixedAligned);

        let amb = route_with_ambiguity(&nlp, &label("machine_learning"), q, true).unwrap();
        assert_eq!((amb.level_hint, amb.rationale), (1, Rationale::StrongAmbiguous));
    }

    #[test]
    fn undeclared_policy_paths() {
        let lit = builtin_profile("pcs-litprof").unwrap();
        let d = route(&lit, &label("econometrics"), "price elasticity").unwrap();
        assert_eq!(d.partition, Partition::Undeclared);
        assert_eq!((d.level_hint, d.rationale), (3, Rationale::UndeclaredDefault));
        assert_eq!(d.marker_partition(), Partition::Weak);

        let strict = lit.with_undeclared_policy(UndeclaredPolicy::Reject);
        assert_eq!(
            route(&strict, &label("econometrics"), "price elasticity"),
            Err(RouteError::UndeclaredDomain {
                profile: "PCS-LitProf".into(),
                subject: label("econometrics")
            })
        );
    }

    #[test]
    fn threshold_tie_is_aligned() {
        // one strong hit, no off-partition hits: 1 / (1 + 0 + 1) = 0.5
        let nlp = builtin_profile("pcs-nlp").unwrap();
        let r = assess_alignment(&nlp, "what is a kernel");
        assert_eq!(r.score, 0.5);
        assert_eq!(r.verdict, Verdict::Aligned);
    }
}
