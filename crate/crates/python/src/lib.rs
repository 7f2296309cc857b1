//! Python bindings for `ccs-core`.
//!
//! Rust types are wrapped in thin `#[pyclass]` shells; structured results
//! that Python callers mostly inspect are handed back as JSON text via
//! `to_json()` so the two sides never disagree on field names.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use ccs_core::annotate::{self, InterventionAnnotation};
use ccs_core::corpus::{Condition, Item};
use ccs_core::profile::{self as core_profile, CapabilityProfile, DomainLabel};
use ccs_core::report::{self, Format, ReportOptions};
use ccs_core::router::{self, RoutingDirective};
use ccs_core::runlog::{read_run_log, RunLogError};
use ccs_core::scaffold::{self, PromptEnvelope};
use ccs_core::stats::{self, ContingencyTable2x2};
use ccs_core::substrate::{self, MockFaultPlan};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_json<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(value_err)
}

fn label(raw: &str) -> PyResult<DomainLabel> {
    DomainLabel::parse(raw).map_err(value_err)
}

#[pyclass(name = "Profile", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyProfile(CapabilityProfile);

#[pymethods]
impl PyProfile {
    /// Parse a profile from TOML text.
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        core_profile::parse_profile(text).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        core_profile::load_profile(&path).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn builtin(name: &str) -> PyResult<Self> {
        core_profile::builtin_profile(name)
            .map(Self)
            .ok_or_else(|| PyValueError::new_err(format!("no builtin profile `{name}`")))
    }

    #[getter]
    fn id(&self) -> &str {
        self.0.id()
    }

    #[getter]
    fn strong(&self) -> Vec<String> {
        self.0.strong().iter().map(|d| d.to_string()).collect()
    }

    #[getter]
    fn mixed(&self) -> Vec<String> {
        self.0.mixed().iter().map(|d| d.to_string()).collect()
    }

    #[getter]
    fn weak(&self) -> Vec<String> {
        self.0.weak().iter().map(|d| d.to_string()).collect()
    }

    /// Partition name for a subject label.
    fn classify(&self, subject: &str) -> PyResult<&'static str> {
        Ok(self.0.classify(&label(subject)?).as_str())
    }

    fn to_toml(&self) -> String {
        self.0.to_toml()
    }

    fn __repr__(&self) -> String {
        format!("Profile(id={:?})", self.0.id())
    }
}

#[pyclass(name = "Directive", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyDirective(RoutingDirective);

#[pymethods]
impl PyDirective {
    #[getter]
    fn subject(&self) -> String {
        self.0.subject.to_string()
    }

    #[getter]
    fn partition(&self) -> &'static str {
        self.0.partition.as_str()
    }

    #[getter]
    fn level(&self) -> u8 {
        self.0.level_hint
    }

    #[getter]
    fn rationale(&self) -> &'static str {
        self.0.rationale.as_str()
    }

    #[getter]
    fn alignment_score(&self) -> f64 {
        self.0.alignment.score
    }

    fn fires(&self) -> bool {
        self.0.fires()
    }

    fn to_json(&self) -> PyResult<String> {
        to_json(&self.0)
    }

    fn __repr__(&self) -> String {
        format!(
            "Directive(subject={:?}, partition={:?}, level={})",
            self.0.subject.as_str(),
            self.0.partition.as_str(),
            self.0.level_hint
        )
    }
}

#[pyclass(name = "Envelope", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyEnvelope(PromptEnvelope);

#[pymethods]
impl PyEnvelope {
    #[getter]
    fn item_id(&self) -> &str {
        &self.0.item_id
    }

    #[getter]
    fn system_text(&self) -> &str {
        &self.0.system_text
    }

    #[getter]
    fn user_text(&self) -> &str {
        &self.0.user_text
    }

    #[getter]
    fn directive(&self) -> Option<PyDirective> {
        self.0.directive.clone().map(PyDirective)
    }

    fn to_json(&self) -> PyResult<String> {
        to_json(&self.0)
    }
}

#[pyclass(name = "Annotation", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyAnnotation(InterventionAnnotation);

#[pymethods]
impl PyAnnotation {
    #[getter]
    fn fired(&self) -> bool {
        self.0.fired
    }

    #[getter]
    fn level(&self) -> u8 {
        self.0.level
    }

    #[getter]
    fn well_formed(&self) -> bool {
        self.0.well_formed
    }

    #[getter]
    fn partition(&self) -> Option<&'static str> {
        self.0.partition.map(|p| p.as_str())
    }

    #[getter]
    fn domain(&self) -> Option<String> {
        self.0.domain.as_ref().map(|d| d.to_string())
    }

    fn to_json(&self) -> PyResult<String> {
        to_json(&self.0)
    }
}

fn make_item(
    item_id: &str,
    subject: &str,
    question: &str,
    choices: Vec<String>,
    ambiguous: bool,
) -> PyResult<Item> {
    Ok(Item {
        id: item_id.to_string(),
        subject: label(subject)?,
        question: question.to_string(),
        choices,
        answer_index: None,
        ambiguous,
    })
}

/// Names of the bundled profiles.
#[pyfunction]
fn builtin_profiles() -> Vec<String> {
    core_profile::builtin_profiles().iter().map(|p| p.id().to_string()).collect()
}

#[pyfunction]
#[pyo3(signature = (profile, subject, question, choices = Vec::new(), ambiguous = false))]
fn route(
    profile: &PyProfile,
    subject: &str,
    question: &str,
    choices: Vec<String>,
    ambiguous: bool,
) -> PyResult<PyDirective> {
    let item = make_item("item", subject, question, choices, ambiguous)?;
    router::route_item(&profile.0, &item).map(PyDirective).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (profile, item_id, subject, question, choices = Vec::new(), ambiguous = false))]
fn assemble_prompt(
    profile: &PyProfile,
    item_id: &str,
    subject: &str,
    question: &str,
    choices: Vec<String>,
    ambiguous: bool,
) -> PyResult<PyEnvelope> {
    let item = make_item(item_id, subject, question, choices, ambiguous)?;
    let d = router::route_item(&profile.0, &item).map_err(value_err)?;
    Ok(PyEnvelope(scaffold::assemble_prompt(&profile.0, &d, &item)))
}

/// Deterministic offline completion. `faults_json` takes the same shape as
/// the CLI's `--faults` file.
#[pyfunction]
#[pyo3(signature = (envelope, faults_json = None))]
fn mock_complete(envelope: &PyEnvelope, faults_json: Option<&str>) -> PyResult<String> {
    let faults: MockFaultPlan = match faults_json {
        Some(text) => serde_json::from_str(text).map_err(value_err)?,
        None => MockFaultPlan::default(),
    };
    Ok(substrate::mock_complete(&envelope.0, &faults).text)
}

#[pyfunction]
fn parse_response(text: &str) -> PyAnnotation {
    PyAnnotation(annotate::parse_response(text))
}

/// Two-sided Fisher exact p-value for the table `[[a, b], [c, d]]`.
#[pyfunction]
fn fisher_exact(a: u64, b: u64, c: u64, d: u64) -> f64 {
    stats::fisher_exact(&ContingencyTable2x2::new(a, b, c, d)).p_value
}

#[pyfunction]
#[pyo3(signature = (k, n, confidence = 0.95))]
fn wilson_ci(k: u64, n: u64, confidence: f64) -> PyResult<(f64, f64)> {
    stats::wilson_ci(k, n, confidence).map_err(value_err)
}

/// Sign-flip permutation test on per-pair signed differences. Returns
/// `(p_value, exceed_count)`.
#[pyfunction]
#[pyo3(signature = (differences, n_permutations = 10_000, seed = 0))]
fn sign_flip_test(differences: Vec<i64>, n_permutations: u64, seed: u64) -> PyResult<(f64, u64)> {
    let r = stats::sign_flip_test(&differences, n_permutations, seed).map_err(value_err)?;
    Ok((r.p_value, r.exceed_count))
}

fn log_err(e: RunLogError) -> PyErr {
    match e {
        RunLogError::Io { .. } => PyIOError::new_err(e.to_string()),
        other => value_err(other),
    }
}

/// Render one report table from a run log. `table` is one of
/// `profile_inversion`, `mixed_divergence`, `cross_substrate`, `heatmap`.
#[pyfunction]
#[pyo3(signature = (log_path, table, format = "md", substrate = None))]
fn render_report(log_path: PathBuf, table: &str, format: &str, substrate: Option<String>) -> PyResult<String> {
    let run = read_run_log(&log_path).map_err(log_err)?;
    let opts = ReportOptions {
        substrate,
        ..ReportOptions::default()
    };
    let fmt = match format {
        "md" | "markdown" => Format::Markdown,
        "csv" => Format::Csv,
        other => return Err(PyValueError::new_err(format!("unknown format `{other}`"))),
    };
    let doc = match table {
        "profile_inversion" => report::render_profile_inversion(&run, &opts),
        "mixed_divergence" => {
            let reference: Condition = opts.reference.clone();
            report::render_mixed_divergence(&run, &opts, &reference)
        }
        "cross_substrate" => report::render_cross_substrate(&run, &opts),
        "heatmap" => Ok(report::emit_heatmap_data(&run, &opts)),
        other => return Err(PyValueError::new_err(format!("unknown table `{other}`"))),
    }
    .map_err(value_err)?;
    Ok(doc.render(fmt))
}

#[pymodule]
fn ccs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProfile>()?;
    m.add_class::<PyDirective>()?;
    m.add_class::<PyEnvelope>()?;
    m.add_class::<PyAnnotation>()?;
    m.add_function(wrap_pyfunction!(builtin_profiles, m)?)?;
    m.add_function(wrap_pyfunction!(route, m)?)?;
    m.add_function(wrap_pyfunction!(assemble_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(mock_complete, m)?)?;
    m.add_function(wrap_pyfunction!(parse_response, m)?)?;
    m.add_function(wrap_pyfunction!(fisher_exact, m)?)?;
    m.add_function(wrap_pyfunction!(wilson_ci, m)?)?;
    m.add_function(wrap_pyfunction!(sign_flip_test, m)?)?;
    m.add_function(wrap_pyfunction!(render_report, m)?)?;
    Ok(())
}
