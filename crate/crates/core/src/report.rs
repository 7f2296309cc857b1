//! Table and figure-data rendering for run logs.
//!
//! Percentages come from [`RateSummary`]; the renderer does no arithmetic
//! of its own. Profile-inversion cells use one decimal, mixed-divergence cells use
//! integers, and both are fixed per table.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Condition;
use crate::profile::{DomainLabel, Partition};
use crate::runlog::{RunLogContents, RunManifest};
use crate::stats::{
    activation_rate, summarize, Precision, RateSummary, StatsError, StatsReport, StatsRequest,
    TrialRecord,
};

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("run log contains no trial records")]
    EmptyRun,
    #[error("condition {condition} has no records on substrate {substrate}")]
    MissingCondition { condition: String, substrate: String },
    #[error("substrate {0} has no records in this run")]
    UnknownSubstrate(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Named set of subjects reported as one column or row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainGroup {
    pub name: String,
    pub subjects: BTreeSet<DomainLabel>,
}

impl DomainGroup {
    pub fn new(name: &str, subjects: &[&str]) -> Self {
        DomainGroup {
            name: name.to_string(),
            subjects: subjects
                .iter()
                .map(|s| DomainLabel::parse(s).expect("static label"))
                .collect(),
        }
    }
}

/// ML / CS, Medical / Legal, and Humanities groupings.
pub fn standard_groups() -> Vec<DomainGroup> {
    vec![
        DomainGroup::new("ML / CS", &["machine_learning", "college_computer_science"]),
        DomainGroup::new(
            "Medical / Legal",
            &["clinical_knowledge", "medical_genetics", "professional_law"],
        ),
        DomainGroup::new("Humanities", &["philosophy", "european_history"]),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    /// Rows of the inversion table, in order.
    pub inversion_conditions: Vec<Condition>,
    /// Condition whose partitions label groups; used by the mixed-domain
    /// and cross-substrate tables.
    pub reference: Condition,
    /// Substrate for single-substrate tables; defaults to the first one in
    /// the manifest.
    pub substrate: Option<String>,
    pub groups: Vec<DomainGroup>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            inversion_conditions: vec![
                Condition::Profile("PCS-NLP".into()),
                Condition::Profile("PCS-LitProf".into()),
            ],
            reference: Condition::Profile("PCS-NLP".into()),
            substrate: None,
            groups: standard_groups(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Markdown,
    Csv,
}

/// A rendered table plus the manifest it summarizes.
#[derive(Debug, Clone, PartialEq)]
pub struct TableDoc {
    pub title: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub notes: Vec<String>,
    pub manifest: RunManifest,
}

fn csv_line(fields: &[String]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(fields).expect("in-memory csv write");
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("utf-8 fields")
}

impl TableDoc {
    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Markdown => self.to_markdown(),
            Format::Csv => self.to_csv(),
        }
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("<!--\n");
        for line in self.manifest.header_lines() {
            out.push_str(&line);
            out.push('\n');
        }
        out.push_str("-->\n\n");
        out.push_str(&format!("## {}\n\n", self.title));
        out.push_str(&format!("| {} |\n", self.headers.join(" | ")));
        out.push_str(&format!("|{}\n", "---|".repeat(self.headers.len())));
        for row in &self.rows {
            out.push_str(&format!("| {} |\n", row.join(" | ")));
        }
        for note in &self.notes {
            out.push_str(&format!("\n{note}\n"));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for line in self.manifest.header_lines() {
            out.push_str(&format!("# {line}\n"));
        }
        out.push_str(&format!("# table: {}\n", self.title));
        for note in &self.notes {
            out.push_str(&format!("# note: {note}\n"));
        }
        out.push_str(&csv_line(&self.headers));
        for row in &self.rows {
            out.push_str(&csv_line(row));
        }
        out
    }
}

fn primary_substrate(run: &RunLogContents, opts: &ReportOptions) -> Result<String, ReportError> {
    if run.records.is_empty() {
        return Err(ReportError::EmptyRun);
    }
    let present: BTreeSet<&str> = run.records.iter().map(|r| r.substrate_id.as_str()).collect();
    let chosen = match &opts.substrate {
        Some(s) => s.clone(),
        None => run
            .manifest
            .substrate_ids
            .iter()
            .find(|s| present.contains(s.as_str()))
            .cloned()
            .unwrap_or_else(|| run.records[0].substrate_id.clone()),
    };
    if !present.contains(chosen.as_str()) {
        return Err(ReportError::UnknownSubstrate(chosen));
    }
    Ok(chosen)
}

fn scoped<'a>(
    run: &'a RunLogContents,
    substrate: &str,
    condition: &Condition,
) -> Result<Vec<&'a TrialRecord>, ReportError> {
    let rs: Vec<&TrialRecord> = run
        .records
        .iter()
        .filter(|r| r.substrate_id == substrate && &r.condition == condition && r.is_completed())
        .collect();
    if rs.is_empty() {
        return Err(ReportError::MissingCondition {
            condition: condition.to_string(),
            substrate: substrate.to_string(),
        });
    }
    Ok(rs)
}

fn rates_by<F>(records: &[&TrialRecord], key: F) -> BTreeMap<String, RateSummary>
where
    F: Fn(&TrialRecord) -> Option<String>,
{
    let owned: Vec<TrialRecord> = records.iter().map(|r| (*r).clone()).collect();
    activation_rate(&owned, key)
}

fn group_of<'g>(groups: &'g [DomainGroup]) -> impl Fn(&DomainLabel) -> Option<String> + 'g {
    move |subject| {
        groups
            .iter()
            .find(|g| g.subjects.contains(subject))
            .map(|g| g.name.clone())
    }
}

/// Partition shared by every directive of the group's records, if any.
fn group_partition(records: &[&TrialRecord], group: &DomainGroup) -> Option<Partition> {
    let parts: BTreeSet<Partition> = records
        .iter()
        .filter(|r| group.subjects.contains(&r.subject))
        .filter_map(|r| r.directive.as_ref().map(|d| d.partition))
        .collect();
    match parts.len() {
        1 => parts.into_iter().next(),
        _ => None,
    }
}

fn capitalized(p: Partition) -> &'static str {
    match p {
        Partition::Strong => "Strong",
        Partition::Mixed => "Mixed",
        Partition::Weak => "Weak",
        Partition::Undeclared => "Undeclared",
    }
}

fn group_heading(reference: &[&TrialRecord], group: &DomainGroup) -> String {
    match group_partition(reference, group) {
        Some(p) => format!("{} ({})", group.name, capitalized(p)),
        None => group.name.clone(),
    }
}

/// `professional_psychology` -> `Professional Psychology`.
pub fn display_subject(label: &DomainLabel) -> String {
    label
        .as_str()
        .split('_')
        .map(|w| {
            let mut c = w.chars();
            match c.next() {
                Some(f) => f.to_uppercase().chain(c).collect(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Conditions as rows, domain groups as columns, `rate% (k/n)` cells.
pub fn render_profile_inversion(run: &RunLogContents, opts: &ReportOptions) -> Result<TableDoc, ReportError> {
    let substrate = primary_substrate(run, opts)?;
    let per_condition = opts
        .inversion_conditions
        .iter()
        .map(|c| scoped(run, &substrate, c).map(|rs| (c, rs)))
        .collect::<Result<Vec<_>, _>>()?;
    let reference = scoped(run, &substrate, &opts.reference)
        .or_else(|_| scoped(run, &substrate, &opts.inversion_conditions[0]))?;

    let mut headers = vec!["Condition".to_string()];
    headers.extend(opts.groups.iter().map(|g| group_heading(&reference, g)));
    let key = group_of(&opts.groups);
    let rows = per_condition
        .iter()
        .map(|(cond, rs)| {
            let rates = rates_by(rs, |r| key(&r.subject));
            let mut row = vec![cond.to_string()];
            row.extend(opts.groups.iter().map(|g| {
                rates
                    .get(&g.name)
                    .map_or_else(|| "n/a".to_string(), |s| s.cell(Precision::OneDecimal))
            }));
            row
        })
        .collect();
    Ok(TableDoc {
        title: format!("Profile inversion ({substrate})"),
        headers,
        rows,
        notes: vec![],
        manifest: run.manifest.clone(),
    })
}

/// Activation per subject within the reference condition's mixed
/// partition, integer percentages, highest first. Pass a baseline
/// `condition` to render the same subjects without scaffolding.
pub fn render_mixed_divergence(
    run: &RunLogContents,
    opts: &ReportOptions,
    condition: &Condition,
) -> Result<TableDoc, ReportError> {
    let substrate = primary_substrate(run, opts)?;
    let reference = scoped(run, &substrate, &opts.reference)?;
    let mixed: BTreeSet<DomainLabel> = reference
        .iter()
        .filter(|r| r.directive.as_ref().is_some_and(|d| d.partition == Partition::Mixed))
        .map(|r| r.subject.clone())
        .collect();
    let records = scoped(run, &substrate, condition)?;
    let rates = rates_by(&records, |r| {
        mixed.contains(&r.subject).then(|| r.subject.as_str().to_string())
    });
    if rates.is_empty() {
        return Err(ReportError::MissingCondition {
            condition: format!("{condition} (mixed subjects)"),
            substrate,
        });
    }
    let mut ordered: Vec<(&String, &RateSummary)> = rates.iter().collect();
    ordered.sort_by(|a, b| {
        (b.1.fired * a.1.total)
            .cmp(&(a.1.fired * b.1.total))
            .then_with(|| a.0.cmp(b.0))
    });
    let rows = ordered
        .into_iter()
        .map(|(label, s)| {
            let label = DomainLabel::parse(label).expect("label from records");
            vec![display_subject(&label), s.cell(Precision::Integer)]
        })
        .collect();
    Ok(TableDoc {
        title: format!("Within-partition activation divergence ({condition}, {substrate})"),
        headers: vec!["Mixed-Domain Subset".into(), "Intervention Activation".into()],
        rows,
        notes: vec![],
        manifest: run.manifest.clone(),
    })
}

/// Domain groups as rows, substrates as columns, percentage cells, for the
/// reference condition.
pub fn render_cross_substrate(run: &RunLogContents, opts: &ReportOptions) -> Result<TableDoc, ReportError> {
    if run.records.is_empty() {
        return Err(ReportError::EmptyRun);
    }
    let present: BTreeSet<&str> = run
        .records
        .iter()
        .filter(|r| r.condition == opts.reference && r.is_completed())
        .map(|r| r.substrate_id.as_str())
        .collect();
    let mut substrates: Vec<String> = run
        .manifest
        .substrate_ids
        .iter()
        .filter(|s| present.contains(s.as_str()))
        .cloned()
        .collect();
    for s in &present {
        if !substrates.iter().any(|x| x == s) {
            substrates.push(s.to_string());
        }
    }
    if substrates.is_empty() {
        return Err(ReportError::MissingCondition {
            condition: opts.reference.to_string(),
            substrate: "any".into(),
        });
    }
    let key = group_of(&opts.groups);
    let mut columns = Vec::new();
    for s in &substrates {
        let rs = scoped(run, s, &opts.reference)?;
        columns.push((rates_by(&rs, |r| key(&r.subject)), rs));
    }
    let mut headers = vec!["Domain Partition".to_string()];
    headers.extend(substrates.iter().cloned());
    let rows = opts
        .groups
        .iter()
        .filter(|g| columns.iter().any(|(rates, _)| rates.contains_key(&g.name)))
        .map(|g| {
            let mut row = vec![group_heading(&columns[0].1, g)];
            row.extend(columns.iter().map(|(rates, _)| {
                rates
                    .get(&g.name)
                    .map_or_else(|| "n/a".to_string(), |s| s.percent(Precision::OneDecimal))
            }));
            row
        })
        .collect();
    Ok(TableDoc {
        title: format!("Cross-substrate activation ({})", opts.reference),
        headers,
        rows,
        notes: vec![],
        manifest: run.manifest.clone(),
    })
}

/// Long-format rows for heatmaps: one per substrate, condition, and group
/// with records.
pub fn emit_heatmap_data(run: &RunLogContents, opts: &ReportOptions) -> TableDoc {
    let key = group_of(&opts.groups);
    let completed: Vec<TrialRecord> = run.records.iter().filter(|r| r.is_completed()).cloned().collect();
    let rates = activation_rate(&completed, |r| {
        key(&r.subject).map(|g| format!("{}\u{1f}{}\u{1f}{}", r.substrate_id, r.condition, g))
    });
    let order = |name: &str| opts.groups.iter().position(|g| g.name == name).unwrap_or(usize::MAX);
    let mut rows: Vec<(String, String, String, &RateSummary)> = rates
        .iter()
        .map(|(k, s)| {
            let mut parts = k.split('\u{1f}');
            let sub = parts.next().unwrap_or_default().to_string();
            let cond = parts.next().unwrap_or_default().to_string();
            let group = parts.next().unwrap_or_default().to_string();
            (sub, cond, group, s)
        })
        .collect();
    let sub_order = |s: &str| {
        run.manifest
            .substrate_ids
            .iter()
            .position(|x| x == s)
            .unwrap_or(usize::MAX)
    };
    let cond_order = |c: &str| {
        run.manifest
            .conditions
            .iter()
            .position(|x| x == c)
            .unwrap_or(usize::MAX)
    };
    rows.sort_by(|a, b| {
        (sub_order(&a.0), &a.0, cond_order(&a.1), &a.1, order(&a.2))
            .cmp(&(sub_order(&b.0), &b.0, cond_order(&b.1), &b.1, order(&b.2)))
    });
    TableDoc {
        title: "Activation heatmap data".into(),
        headers: ["substrate", "condition", "domain_group", "fired", "total", "rate", "mean_level"]
            .map(String::from)
            .to_vec(),
        rows: rows
            .into_iter()
            .map(|(sub, cond, group, s)| {
                vec![
                    sub,
                    cond,
                    group,
                    s.fired.to_string(),
                    s.total.to_string(),
                    format!("{:.6}", s.rate),
                    format!("{:.6}", s.mean_level),
                ]
            })
            .collect(),
        notes: vec![],
        manifest: run.manifest.clone(),
    }
}

/// Rates, Fisher tests, and permutation tests between the first two
/// inversion conditions on the primary substrate.
pub fn compute_stats(
    run: &RunLogContents,
    opts: &ReportOptions,
    n_permutations: u64,
    seed: u64,
) -> Result<StatsReport, ReportError> {
    let substrate = primary_substrate(run, opts)?;
    let (a, b) = match opts.inversion_conditions.as_slice() {
        [a, b, ..] => (a, b),
        [only] => {
            return Err(ReportError::MissingCondition {
                condition: format!("second condition besides {only}"),
                substrate,
            })
        }
        [] => return Err(ReportError::EmptyRun),
    };
    scoped(run, &substrate, a)?;
    scoped(run, &substrate, b)?;
    let names: Vec<String> = opts.groups.iter().map(|g| g.name.clone()).collect();
    let key = group_of(&opts.groups);
    let req = StatsRequest {
        substrate_id: &substrate,
        condition_a: a,
        condition_b: b,
        groups: &names,
        group_of: &key,
        n_permutations,
        seed,
    };
    Ok(summarize(&run.records, &req)?)
}

pub fn render_stats(report: &StatsReport, manifest: &RunManifest) -> TableDoc {
    let mut rows = Vec::new();
    for r in &report.rates {
        rows.push(vec![
            "rate".into(),
            format!("{} / {}", r.condition, r.group),
            r.summary.cell(Precision::OneDecimal),
            format!("[{:.4}, {:.4}]", r.summary.wilson95.0, r.summary.wilson95.1),
            format!("mean level {:.3}", r.summary.mean_level),
        ]);
    }
    for f in &report.fisher {
        let t = f.table;
        rows.push(vec![
            "fisher_exact".into(),
            f.group.clone(),
            format!("({},{};{},{})", t.a, t.b, t.c, t.d),
            format!("p = {:.6e}", f.result.p_value),
            if f.result.degenerate { "degenerate".into() } else { String::new() },
        ]);
    }
    for p in &report.permutation {
        rows.push(vec![
            format!("permutation ({})", p.metric.as_str()),
            format!("{} pairs", p.n_pairs),
            format!("T = {:.4}", p.observed_stat),
            format!("p = {:.6e}", p.p_value),
            format!("{} of {} >= observed, seed {}", p.exceed_count, p.n_permutations, p.seed),
        ]);
    }
    let mut notes = vec![report.note.clone()];
    if !report.omitted_groups.is_empty() {
        notes.push(format!("Omitted empty groups: {}", report.omitted_groups.join(", ")));
    }
    TableDoc {
        title: format!(
            "Statistics: {} vs {} ({})",
            report.condition_a, report.condition_b, report.substrate_id
        ),
        headers: ["test", "scope", "value", "statistic", "detail"].map(String::from).to_vec(),
        rows,
        notes,
        manifest: manifest.clone(),
    }
}
