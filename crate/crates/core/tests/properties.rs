//! Property suites over the routing, marker, loading, and statistics layers.

mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;

use ccs_core::annotate::parse_response;
use ccs_core::corpus::{expand_conditions, Condition, Item, PairFilter};
use ccs_core::profile::{
    builtin_profile, builtin_profiles, classify_domain, parse_profile, DomainLabel, Partition,
    ProfileDraft, ProfileError,
};
use ccs_core::router::{assess_alignment, route, route_with_ambiguity, AlignmentReport, Rationale, RoutingDirective, Verdict};
use ccs_core::scaffold::{assemble_prompt, extract_profile_block};
use ccs_core::stats::{
    activation_rate, fisher_exact, sign_flip_test, wilson_ci, ContingencyTable2x2, Timing, TrialRecord,
};
use ccs_core::substrate::{mock_complete, MockFaultPlan};

const SUBJECTS: [&str; 12] = [
    "machine_learning",
    "college_computer_science",
    "professional_psychology",
    "formal_logic",
    "econometrics",
    "clinical_knowledge",
    "medical_genetics",
    "professional_law",
    "philosophy",
    "european_history",
    "astronomy",
    "high_school_biology",
];

/// Prompt words drawn from every vocabulary plus filler.
fn word_pool() -> Vec<String> {
    let mut words: Vec<String> = builtin_profiles()
        .iter()
        .flat_map(|p| p.vocabulary().values().flatten().cloned().collect::<Vec<_>>())
        .collect();
    words.extend(["the", "a", "which", "of", "answer", "why", "42", "is"].map(String::from));
    words.sort();
    words.dedup();
    words
}

fn prompt_strategy() -> impl Strategy<Value = String> {
    let pool = word_pool();
    prop::collection::vec(prop::sample::select(pool), 0..25).prop_map(|w| w.join(" "))
}

fn level_bounds_hold(d: &RoutingDirective) -> bool {
    match d.partition {
        Partition::Strong => d.level_hint <= 1,
        Partition::Mixed => d.level_hint <= 2,
        Partition::Weak | Partition::Undeclared => d.level_hint == 3,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn router_is_deterministic_and_bounded(
        profile_ix in 0usize..2,
        subject in prop::sample::select(SUBJECTS.to_vec()),
        prompt in prompt_strategy(),
        ambiguous in any::<bool>(),
    ) {
        let profile = &builtin_profiles()[profile_ix];
        let subject = DomainLabel::parse(subject).unwrap();
        let first = route_with_ambiguity(profile, &subject, &prompt, ambiguous).unwrap();
        let first_json = serde_json::to_string(&first).unwrap();
        for _ in 0..3 {
            let again = route_with_ambiguity(profile, &subject, &prompt, ambiguous).unwrap();
            prop_assert_eq!(&serde_json::to_string(&again).unwrap(), &first_json);
        }
        prop_assert!(level_bounds_hold(&first));
        prop_assert_eq!(first.partition, classify_domain(profile, &subject));
        prop_assert!(first.alignment.score >= 0.0 && first.alignment.score < 1.0);
    }

    #[test]
    fn inversion_holds_for_any_prompt(
        subject in prop::sample::select(vec![
            "machine_learning", "college_computer_science", "philosophy", "european_history",
        ]),
        prompt in prompt_strategy(),
        ambiguous in any::<bool>(),
    ) {
        let nlp = builtin_profile("pcs-nlp").unwrap();
        let lit = builtin_profile("pcs-litprof").unwrap();
        let subject = DomainLabel::parse(subject).unwrap();
        let (a, b) = match nlp.classify(&subject) {
            Partition::Strong => (nlp, lit),
            _ => (lit, nlp),
        };
        prop_assert_eq!(a.classify(&subject), Partition::Strong);
        prop_assert_eq!(b.classify(&subject), Partition::Weak);
        prop_assert!(route_with_ambiguity(&a, &subject, &prompt, ambiguous).unwrap().level_hint <= 1);
        prop_assert_eq!(route_with_ambiguity(&b, &subject, &prompt, ambiguous).unwrap().level_hint, 3);
    }

    /// Among prompts that carry lexical evidence, a lower alignment score
    /// never routes a mixed subject to a lower level.
    #[test]
    fn mixed_level_is_monotone_in_score(p1 in prompt_strategy(), p2 in prompt_strategy()) {
        let nlp = builtin_profile("pcs-nlp").unwrap();
        let subject = DomainLabel::parse("formal_logic").unwrap();
        let a = route(&nlp, &subject, &p1).unwrap();
        let b = route(&nlp, &subject, &p2).unwrap();
        prop_assume!(a.alignment.verdict != Verdict::NoEvidence);
        prop_assume!(b.alignment.verdict != Verdict::NoEvidence);
        if a.alignment.score <= b.alignment.score {
            prop_assert!(a.level_hint >= b.level_hint);
        } else {
            prop_assert!(a.level_hint <= b.level_hint);
        }
    }
}

#[test]
fn repeated_routing_is_byte_identical() {
    let nlp = builtin_profile("pcs-nlp").unwrap();
    let subject = DomainLabel::parse("econometrics").unwrap();
    let prompt = "Under OLS, what is the variance of the regression estimator given the model?";
    let first = serde_json::to_string(&route(&nlp, &subject, prompt).unwrap()).unwrap();
    for _ in 0..1000 {
        assert_eq!(serde_json::to_string(&route(&nlp, &subject, prompt).unwrap()).unwrap(), first);
    }
}

#[test]
fn marker_round_trip_over_level_partition_product() {
    let profile = builtin_profile("pcs-nlp").unwrap();
    let item = common::neutral_items("machine_learning", 1).remove(0);
    for level in 0..=3u8 {
        for partition in [Partition::Strong, Partition::Mixed, Partition::Weak, Partition::Undeclared] {
            let d = RoutingDirective {
                subject: item.subject.clone(),
                partition,
                level_hint: level,
                alignment: AlignmentReport {
                    score: 0.0,
                    matched_strong_terms: vec![],
                    matched_offpartition_terms: vec![],
                    threshold: 0.5,
                    verdict: Verdict::NoEvidence,
                },
                rationale: Rationale::StrongSilent,
            };
            let env = assemble_prompt(&profile, &d, &item);
            let ann = parse_response(&mock_complete(&env, &MockFaultPlan::default()).text);
            assert_eq!(ann.level, level, "{level} {partition:?}");
            assert_eq!(ann.fired, level >= 1);
            assert!(ann.well_formed && ann.is_valid());
            assert_eq!(ann.partition, Some(d.marker_partition()));
            assert_eq!(ann.domain.as_ref(), Some(&item.subject));
        }
    }
}

fn arbitrary_text() -> impl Strategy<Value = String> {
    prop_oneof![
        any::<String>(),
        "(\\[CCS:[A-Z =0-9a-z_]{0,40}\\]?\n?|[a-z ]{0,8}|\\[|\\]){0,12}",
        prop::collection::vec(any::<u8>(), 0..200)
            .prop_map(|b| String::from_utf8_lossy(&b).into_owned()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn parse_response_is_total_and_valid(text in arbitrary_text()) {
        let a = parse_response(&text);
        prop_assert!(a.is_valid(), "{:?} -> {:?}", text, a);
        prop_assert_eq!(a, parse_response(&text));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn overlapping_partitions_are_rejected(
        labels in prop::collection::btree_set("[a-z]{3,8}", 2..8),
        dup_ix in any::<prop::sample::Index>(),
        first in 0usize..3,
        shift in 1usize..3,
    ) {
        let labels: Vec<DomainLabel> = labels.iter().map(|l| DomainLabel::parse(l).unwrap()).collect();
        let dup = labels[dup_ix.index(labels.len())].clone();
        let mut parts: [Vec<DomainLabel>; 3] = Default::default();
        for (i, l) in labels.iter().enumerate() {
            parts[i % 3].push(l.clone());
        }
        for p in parts.iter_mut() {
            p.retain(|l| l != &dup);
        }
        parts[first].push(dup.clone());
        parts[(first + shift) % 3].push(dup.clone());
        let [strong, mixed, weak] = parts;
        let err = ProfileDraft { id: "P".into(), strong, mixed, weak, ..Default::default() }
            .build()
            .unwrap_err();
        let rejected = matches!(err, ProfileError::Overlap { ref label, .. } if *label == dup);
        prop_assert!(rejected, "{:?}", err);
    }

    #[test]
    fn profile_embed_extract_round_trip(
        labels in prop::collection::btree_set("[a-z]{3,8}( [a-z]{2,6})?", 1..9),
        threshold in 0.0f64..=1.0,
    ) {
        let labels: Vec<DomainLabel> = labels.iter().map(|l| DomainLabel::parse(l).unwrap()).collect();
        let mut uniq = labels.clone();
        uniq.sort();
        uniq.dedup();
        let mut draft = ProfileDraft { id: "Random Profile".into(), alignment_threshold: Some(threshold), ..Default::default() };
        let mut vocab = BTreeMap::new();
        for (i, l) in uniq.iter().enumerate() {
            match i % 3 {
                0 => draft.strong.push(l.clone()),
                1 => draft.mixed.push(l.clone()),
                _ => draft.weak.push(l.clone()),
            }
            vocab.insert(l.clone(), vec![format!("term{i}"), format!("multi word {i}")]);
        }
        draft.vocabulary = vocab;
        let profile = draft.build().unwrap();
        prop_assert_eq!(&parse_profile(&profile.to_toml()).unwrap(), &profile);
        let item = Item {
            id: "x".into(),
            subject: uniq[0].clone(),
            question: "q".into(),
            choices: vec![],
            answer_index: None,
            ambiguous: false,
        };
        let d = route(&profile, &item.subject, &item.question).unwrap();
        let env = assemble_prompt(&profile, &d, &item);
        prop_assert_eq!(extract_profile_block(&env.system_text).unwrap().unwrap(), profile.clone());
        prop_assert_eq!(env, assemble_prompt(&profile, &d, &item));
    }

    #[test]
    fn expand_counts_add_up(n_items in 1usize..20, pilot in any::<bool>()) {
        let mut items = common::neutral_items("philosophy", n_items);
        items.extend(common::neutral_items("econometrics", n_items));
        let conditions = vec![
            Condition::Baseline,
            Condition::Profile("PCS-NLP".into()),
            Condition::Profile("PCS-LitProf".into()),
        ];
        let filter = if pilot { PairFilter::pilot_guess() } else { PairFilter::none() };
        let (pairs, counts) = expand_conditions(&items, &conditions, &filter);
        prop_assert_eq!(counts.raw, items.len() * conditions.len());
        prop_assert_eq!(counts.kept, pairs.len());
        prop_assert_eq!(counts.kept, counts.raw - counts.filtered);
    }
}

/// Exact two-sided p-value by enumerating every table with the observed
/// margins, using a u128 Pascal triangle (exact for n <= 120).
fn fisher_oracle(a: u64, b: u64, c: u64, d: u64) -> f64 {
    let n = (a + b + c + d) as usize;
    let mut pascal = vec![vec![0u128; n + 1]; n + 1];
    for i in 0..=n {
        pascal[i][0] = 1;
        for j in 1..=i {
            pascal[i][j] = pascal[i - 1][j - 1] + if j < i { pascal[i - 1][j] } else { 0 };
        }
    }
    let choose = |n: u64, k: u64| if k > n { 0 } else { pascal[n as usize][k as usize] };
    let (r1, r2, c1) = (a + b, c + d, a + c);
    let weight = |x: u64| choose(r1, x) * choose(r2, c1 - x);
    let observed = weight(a);
    let lo = c1.saturating_sub(r2);
    let hi = r1.min(c1);
    let tail: u128 = (lo..=hi).map(weight).filter(|w| *w <= observed).sum();
    tail as f64 / choose(r1 + r2, c1) as f64
}

fn table_strategy() -> impl Strategy<Value = (u64, u64, u64, u64)> {
    (0u64..=60)
        .prop_flat_map(|a| (Just(a), 0..=60 - a, 0..=60 - a))
        .prop_flat_map(|(a, b, c)| (Just(a), Just(b), Just(c), 0..=(60 - b).min(60 - c)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn fisher_matches_enumeration_oracle((a, b, c, d) in table_strategy()) {
        let r = fisher_exact(&ContingencyTable2x2::new(a, b, c, d));
        let degenerate = a + b == 0 || c + d == 0 || a + c == 0 || b + d == 0;
        prop_assert_eq!(r.degenerate, degenerate);
        if degenerate {
            prop_assert_eq!(r.p_value, 1.0);
        } else {
            let want = fisher_oracle(a, b, c, d);
            prop_assert!((r.p_value - want).abs() <= 1e-12 * want, "{} vs {}", r.p_value, want);
        }
    }

    #[test]
    fn fisher_swap_invariance((a, b, c, d) in table_strategy()) {
        let t = ContingencyTable2x2::new(a, b, c, d);
        let p = fisher_exact(&t);
        prop_assert_eq!(p, fisher_exact(&t.swap_rows()));
        prop_assert_eq!(p, fisher_exact(&t.swap_columns()));
    }

    #[test]
    fn wilson_contains_rate_and_narrows(num in 0u64..=10, den in 1u64..=10, scale in 1u64..30) {
        prop_assume!(num <= den);
        let (k, n) = (num * scale, den * scale);
        let (lo, hi) = wilson_ci(k, n, 0.95).unwrap();
        let rate = k as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= rate && rate <= hi && hi <= 1.0);
        let (lo2, hi2) = wilson_ci(k + num, n + den, 0.95).unwrap();
        prop_assert!(hi2 - lo2 < hi - lo);
    }

    #[test]
    fn permutation_p_is_positive_and_order_free(
        xs in prop::collection::vec(-3i64..=3, 1..80),
        seed in any::<u64>(),
        rot in any::<prop::sample::Index>(),
    ) {
        let r = sign_flip_test(&xs, 300, seed).unwrap();
        prop_assert!(r.p_value > 0.0 && r.p_value <= 1.0);
        prop_assert_eq!(r.p_value, (r.exceed_count + 1) as f64 / 301.0);
        let mut rotated = xs.clone();
        rotated.rotate_left(rot.index(xs.len()));
        prop_assert_eq!(r, sign_flip_test(&rotated, 300, seed).unwrap());
    }

    #[test]
    fn activation_totals_sum_to_record_count(
        spec in prop::collection::vec((0usize..4, 0u8..=3), 1..120),
    ) {
        let subjects = ["philosophy", "formal_logic", "econometrics", "machine_learning"];
        let records: Vec<TrialRecord> = spec
            .iter()
            .enumerate()
            .map(|(i, (s, level))| {
                let text = if *level == 0 {
                    "Answer: A".to_string()
                } else {
                    format!("[CCS:INTERVENTION level={level} partition=weak domain=x]\nAnswer: A")
                };
                TrialRecord {
                    item_id: format!("i{i}"),
                    subject: DomainLabel::parse(subjects[*s]).unwrap(),
                    condition: Condition::Baseline,
                    profile_id: None,
                    substrate_id: "mock".into(),
                    template_version: String::new(),
                    directive: None,
                    annotation: Some(parse_response(&text)),
                    raw_response: None,
                    raw_response_digest: None,
                    usage: None,
                    error: None,
                    timing: Timing::default(),
                }
            })
            .collect();
        let rates = activation_rate(&records, |r| Some(r.subject.as_str().to_string()));
        prop_assert_eq!(rates.values().map(|s| s.total).sum::<u64>(), records.len() as u64);
        let fired = spec.iter().filter(|(_, l)| *l >= 1).count() as u64;
        prop_assert_eq!(rates.values().map(|s| s.fired).sum::<u64>(), fired);
        for s in rates.values() {
            prop_assert!(s.wilson95.0 <= s.rate && s.rate <= s.wilson95.1);
        }
    }
}

#[test]
fn wilson_boundary_cases() {
    for n in 1..=60 {
        assert_eq!(wilson_ci(0, n, 0.95).unwrap().0, 0.0);
        assert_eq!(wilson_ci(n, n, 0.95).unwrap().1, 1.0);
    }
}

#[test]
fn assess_alignment_is_pure() {
    let nlp = builtin_profile("pcs-nlp").unwrap();
    let text = "Which inference rule lets the model derive this proof from the axioms?";
    assert_eq!(assess_alignment(&nlp, text), assess_alignment(&nlp, text));
}
