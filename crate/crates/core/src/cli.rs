//! `ccs` command line: validate, route, run, stats, report.
//!
//! Exit codes: 0 success, 1 I/O, 2 validation, 3 substrate exhaustion.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::corpus::{
    apply_ambiguity, load_ambiguity_sidecar, load_items, load_personas, sample_per_subject,
    Condition, CorpusError, Item, ItemFormat, PairFilter,
};
use crate::pipeline::{execute, PipelineError, RunPlan};
use crate::profile::{builtin_profile, load_profile, CapabilityProfile, ProfileError, UndeclaredPolicy};
use crate::report::{
    compute_stats, emit_heatmap_data, render_cross_substrate, render_mixed_divergence,
    render_profile_inversion, render_stats, Format, ReportError, ReportOptions,
};
use crate::router::{route_item, RouteError};
use crate::runlog::{read_run_log, run_digest, RunLogError, RunLogWriter, Seeds};
use crate::stats::DEFAULT_PERMUTATIONS;
use crate::substrate::{MockFaultPlan, SubstrateConfig, SubstrateError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_SUBSTRATE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "ccs", version, about = "Capability-conditioned scaffolding runner")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Md,
    Csv,
}

impl From<OutputFormat> for Format {
    fn from(f: OutputFormat) -> Self {
        match f {
            OutputFormat::Md => Format::Markdown,
            OutputFormat::Csv => Format::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FilterChoice {
    None,
    PilotGuess,
    ProfileApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyChoice {
    TreatAsWeak,
    Reject,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and validate capability profiles.
    Validate {
        /// Profile file or builtin name (pcs-nlp, pcs-litprof).
        #[arg(long = "profile", required = true)]
        profiles: Vec<String>,
    },
    /// Print routing directives without calling any substrate.
    Route {
        #[arg(long)]
        profile: String,
        #[arg(long = "corpus", required = true)]
        corpora: Vec<PathBuf>,
        #[arg(long)]
        ambiguity: Option<PathBuf>,
        /// Override the profile's undeclared-domain policy.
        #[arg(long, value_enum)]
        undeclared: Option<PolicyChoice>,
        /// Emit JSON lines instead of a tab-separated listing.
        #[arg(long)]
        json: bool,
    },
    /// Execute a run and append trial records to `<out>/run.jsonl`.
    Run {
        #[arg(long = "profile")]
        profiles: Vec<String>,
        #[arg(long = "corpus", required = true)]
        corpora: Vec<PathBuf>,
        /// Comma-separated: baseline and/or profile ids or builtin names.
        #[arg(long, value_delimiter = ',', default_value = "PCS-NLP,PCS-LitProf")]
        conditions: Vec<String>,
        /// `mock`, `mock:<id>`, or a substrate TOML file.
        #[arg(long = "substrate", default_value = "mock")]
        substrates: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Items sampled per subject; all items when omitted.
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long, value_enum, default_value = "none")]
        filter: FilterChoice,
        #[arg(long)]
        ambiguity: Option<PathBuf>,
        /// JSON fault plan applied to mock substrates.
        #[arg(long)]
        faults: Option<PathBuf>,
        /// Override the parallelism limit of every substrate.
        #[arg(long)]
        parallelism: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: bool,
    },
    /// Fisher, Wilson, and permutation statistics for a run log.
    Stats {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PERMUTATIONS)]
        permutations: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        substrate: Option<String>,
        #[arg(long, value_enum, default_value = "md")]
        format: OutputFormat,
        /// Output directory; prints to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render inversion, mixed-domain, cross-substrate, and heatmap tables.
    Report {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        substrate: Option<String>,
        #[arg(long, value_enum, default_value = "md")]
        format: OutputFormat,
        /// Output directory; prints to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    RunLog(#[from] RunLogError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Substrate(#[from] SubstrateError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error("{failed} trial(s) exhausted substrate retries; see error records in {log}")]
    Exhausted { failed: usize, log: PathBuf },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Profile(ProfileError::Io { .. })
            | CliError::Corpus(CorpusError::Io { .. })
            | CliError::RunLog(RunLogError::Io { .. })
            | CliError::Pipeline(PipelineError::Log(RunLogError::Io { .. }))
            | CliError::Io { .. } => EXIT_IO,
            CliError::Exhausted { .. } => EXIT_SUBSTRATE,
            _ => EXIT_VALIDATION,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Resolves a file path or a builtin profile name.
pub fn resolve_profile(spec: &str) -> Result<CapabilityProfile, CliError> {
    let path = Path::new(spec);
    if path.exists() {
        return Ok(load_profile(path)?);
    }
    if let Some(p) = builtin_profile(spec) {
        return Ok(p);
    }
    if spec.ends_with(".toml") || spec.contains('/') {
        return Ok(load_profile(path)?);
    }
    Err(CliError::Usage(format!(
        "`{spec}` is neither a profile file nor a builtin profile"
    )))
}

fn corpus_files(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(io_err(path))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| ItemFormat::from_path(p).is_some())
        .collect();
    files.sort();
    Ok(files)
}

/// Loads items from CSV/JSONL files, directories of them, or persona JSON.
pub fn load_corpora(paths: &[PathBuf], ambiguity: Option<&Path>) -> Result<Vec<Item>, CliError> {
    let mut items = Vec::new();
    for path in paths {
        if !path.exists() {
            return Err(CliError::Io {
                path: path.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "corpus not found"),
            });
        }
        for file in corpus_files(path)? {
            if file.extension().is_some_and(|e| e == "json") {
                for persona in load_personas(&file)? {
                    items.extend(persona.items());
                }
                continue;
            }
            let format = ItemFormat::from_path(&file).ok_or_else(|| {
                CliError::Usage(format!("{}: expected .csv, .jsonl, or .json", file.display()))
            })?;
            items.extend(load_items(&file, format)?);
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for item in &items {
        if !seen.insert(item.id.clone()) {
            return Err(CorpusError::DuplicateId(item.id.clone()).into());
        }
    }
    if let Some(sidecar) = ambiguity {
        let flags = load_ambiguity_sidecar(sidecar)?;
        apply_ambiguity(&mut items, &flags);
    }
    items.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(items)
}

fn resolve_substrate(spec: &str) -> Result<SubstrateConfig, CliError> {
    if spec == "mock" {
        return Ok(SubstrateConfig::mock("mock"));
    }
    if let Some(id) = spec.strip_prefix("mock:") {
        return Ok(SubstrateConfig::mock(id));
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(CliError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "substrate config not found"),
        });
    }
    Ok(SubstrateConfig::load(path)?)
}

fn resolve_conditions(
    names: &[String],
    profiles: &mut Vec<CapabilityProfile>,
) -> Result<Vec<Condition>, CliError> {
    let mut out = Vec::new();
    for name in names.iter().map(|s| s.trim()).filter(|s| !s.is_empty()) {
        if name.eq_ignore_ascii_case("baseline") {
            out.push(Condition::Baseline);
            continue;
        }
        let known = profiles
            .iter()
            .find(|p| p.id().eq_ignore_ascii_case(name))
            .map(|p| p.id().to_string());
        let id = match known {
            Some(id) => id,
            None => {
                let p = resolve_profile(name)?;
                let id = p.id().to_string();
                if !profiles.iter().any(|q| q.id() == id) {
                    profiles.push(p);
                }
                id
            }
        };
        out.push(Condition::Profile(id));
    }
    if out.is_empty() {
        return Err(CliError::Usage("no conditions given".into()));
    }
    Ok(out)
}

fn write_or_print(
    out_dir: Option<&Path>,
    name: &str,
    body: &str,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(io_err(&path))?;
            writeln!(stdout, "wrote {}", path.display()).map_err(io_err(Path::new("<stdout>")))
        }
        None => writeln!(stdout, "{body}").map_err(io_err(Path::new("<stdout>"))),
    }
}

fn cmd_validate(profiles: &[String], stdout: &mut dyn Write) -> Result<(), CliError> {
    for spec in profiles {
        let p = resolve_profile(spec)?;
        writeln!(
            stdout,
            "{spec}: ok ({}; {} strong, {} mixed, {} weak)",
            p.id(),
            p.strong().len(),
            p.mixed().len(),
            p.weak().len()
        )
        .map_err(io_err(Path::new("<stdout>")))?;
    }
    Ok(())
}

fn cmd_route(
    profile: &str,
    corpora: &[PathBuf],
    ambiguity: Option<&Path>,
    undeclared: Option<PolicyChoice>,
    json: bool,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let mut p = resolve_profile(profile)?;
    if let Some(choice) = undeclared {
        p = p.with_undeclared_policy(match choice {
            PolicyChoice::TreatAsWeak => UndeclaredPolicy::TreatAsWeak,
            PolicyChoice::Reject => UndeclaredPolicy::Reject,
        });
    }
    let items = load_corpora(corpora, ambiguity)?;
    let mut lines = Vec::with_capacity(items.len());
    for item in &items {
        let d = route_item(&p, item)?;
        lines.push(if json {
            serde_json::to_string(&serde_json::json!({ "item_id": item.id, "directive": d }))
                .expect("directive serializes")
        } else {
            format!(
                "{}\t{}\t{}\tlevel={}\t{}\tscore={:.3}",
                item.id, d.subject, d.partition, d.level_hint, d.rationale, d.alignment.score
            )
        });
    }
    for line in lines {
        writeln!(stdout, "{line}").map_err(io_err(Path::new("<stdout>")))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    profiles: &[String],
    corpora: &[PathBuf],
    conditions: &[String],
    substrates: &[String],
    seed: u64,
    sample: Option<usize>,
    filter: FilterChoice,
    ambiguity: Option<&Path>,
    faults: Option<&Path>,
    parallelism: Option<usize>,
    out: &Path,
    resume: bool,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let mut loaded = profiles
        .iter()
        .map(|s| resolve_profile(s))
        .collect::<Result<Vec<_>, _>>()?;
    let conditions = resolve_conditions(conditions, &mut loaded)?;
    let mut items = load_corpora(corpora, ambiguity)?;
    if let Some(n) = sample {
        items = sample_per_subject(&items, n, seed)?;
    }
    let fault_plan: Option<MockFaultPlan> = match faults {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            Some(serde_json::from_str(&text).map_err(|e| {
                CliError::Usage(format!("{}: invalid fault plan: {e}", path.display()))
            })?)
        }
        None => None,
    };
    let mut configs = substrates
        .iter()
        .map(|s| resolve_substrate(s))
        .collect::<Result<Vec<_>, _>>()?;
    for cfg in &mut configs {
        if let Some(n) = parallelism {
            cfg.parallelism_limit = n;
        }
        if let (Some(plan), crate::substrate::SubstrateKind::Mock) = (&fault_plan, cfg.kind) {
            cfg.faults = plan.clone();
        }
        cfg.validate()?;
    }
    let filter = match filter {
        FilterChoice::None => PairFilter::none(),
        FilterChoice::PilotGuess => PairFilter::pilot_guess(),
        FilterChoice::ProfileApplicable => PairFilter::profile_applicable(&loaded),
    };
    let plan = RunPlan {
        items,
        profiles: loaded,
        conditions,
        substrates: configs,
        filter,
        seeds: Seeds {
            sample: seed,
            permutation: seed,
        },
    };
    // Route everything up front so validation errors abort before the log
    // is touched.
    plan.prepare()?;
    let manifest = plan.manifest();
    let log_path = out.join("run.jsonl");
    let (mut writer, skip) = if resume {
        RunLogWriter::resume(&log_path, &manifest)?
    } else {
        (RunLogWriter::create(&log_path, &manifest)?, Default::default())
    };
    let outcome = execute(&plan, &mut writer, &skip)?;
    drop(writer);
    let contents = read_run_log(&log_path)?;
    writeln!(
        stdout,
        "{}: {} completed, {} errors, {} skipped; {} records in {} (digest {})",
        manifest.run_id,
        outcome.completed,
        outcome.errored,
        outcome.skipped,
        contents.records.len(),
        log_path.display(),
        &run_digest(&contents)[..16]
    )
    .map_err(io_err(Path::new("<stdout>")))?;
    if outcome.exhausted > 0 {
        return Err(CliError::Exhausted {
            failed: outcome.exhausted,
            log: log_path,
        });
    }
    Ok(())
}

fn report_options(substrate: Option<String>) -> ReportOptions {
    ReportOptions {
        substrate,
        ..ReportOptions::default()
    }
}

fn cmd_stats(
    log: &Path,
    permutations: u64,
    seed: u64,
    substrate: Option<String>,
    format: OutputFormat,
    out: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let run = read_run_log(log)?;
    let opts = report_options(substrate);
    let report = compute_stats(&run, &opts, permutations, seed)?;
    let doc = render_stats(&report, &run.manifest);
    let ext = match format {
        OutputFormat::Md => "md",
        OutputFormat::Csv => "csv",
    };
    write_or_print(out, &format!("stats.{ext}"), &doc.render(format.into()), stdout)?;
    if let Some(dir) = out {
        let json = serde_json::to_string_pretty(&report).expect("stats report serializes");
        write_or_print(Some(dir), "stats.json", &json, stdout)?;
    }
    Ok(())
}

fn cmd_report(
    log: &Path,
    substrate: Option<String>,
    format: OutputFormat,
    out: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let run = read_run_log(log)?;
    let opts = report_options(substrate);
    let fmt: Format = format.into();
    let ext = match format {
        OutputFormat::Md => "md",
        OutputFormat::Csv => "csv",
    };
    let inversion = render_profile_inversion(&run, &opts)?;
    write_or_print(out, &format!("profile_inversion.{ext}"), &inversion.render(fmt), stdout)?;

    match render_mixed_divergence(&run, &opts, &opts.reference) {
        Ok(doc) => write_or_print(out, &format!("mixed_divergence.{ext}"), &doc.render(fmt), stdout)?,
        Err(e) => log::warn!("skipping mixed-domain table: {e}"),
    }
    if run.records.iter().any(|r| r.condition == Condition::Baseline) {
        match render_mixed_divergence(&run, &opts, &Condition::Baseline) {
            Ok(doc) => write_or_print(
                out,
                &format!("mixed_divergence_baseline.{ext}"),
                &doc.render(fmt),
                stdout,
            )?,
            Err(e) => log::warn!("skipping baseline mixed-domain table: {e}"),
        }
    }
    let cross = render_cross_substrate(&run, &opts)?;
    write_or_print(out, &format!("cross_substrate.{ext}"), &cross.render(fmt), stdout)?;
    let heat = emit_heatmap_data(&run, &opts);
    write_or_print(out, "heatmap.csv", &heat.to_csv(), stdout)?;
    Ok(())
}

pub fn dispatch(cli: Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Validate { profiles } => cmd_validate(&profiles, stdout),
        Command::Route {
            profile,
            corpora,
            ambiguity,
            undeclared,
            json,
        } => cmd_route(&profile, &corpora, ambiguity.as_deref(), undeclared, json, stdout),
        Command::Run {
            profiles,
            corpora,
            conditions,
            substrates,
            seed,
            sample,
            filter,
            ambiguity,
            faults,
            parallelism,
            out,
            resume,
        } => cmd_run(
            &profiles,
            &corpora,
            &conditions,
            &substrates,
            seed,
            sample,
            filter,
            ambiguity.as_deref(),
            faults.as_deref(),
            parallelism,
            &out,
            resume,
            stdout,
        ),
        Command::Stats {
            log,
            permutations,
            seed,
            substrate,
            format,
            out,
        } => cmd_stats(&log, permutations, seed, substrate, format, out.as_deref(), stdout),
        Command::Report {
            log,
            substrate,
            format,
            out,
        } => cmd_report(&log, substrate, format, out.as_deref(), stdout),
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = write!(stderr, "{e}");
            return code;
        }
    };
    match dispatch(cli, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
