//! Append-only JSONL run logs.
//!
//! The first line is the run manifest; every following line is one trial
//! record. Lines are flushed as they are written, so an interrupted run
//! leaves at most one partial trailing line, which resume truncates.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Item, PairCounts};
use crate::stats::{sha256_hex, TrialRecord};

pub const TOOL_VERSION: &str = concat!("ccs/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub sample: u64,
    pub permutation: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Derived from the rest of the manifest; identical configs share it.
    pub run_id: String,
    pub corpus_digest: String,
    pub profile_ids: Vec<String>,
    pub substrate_ids: Vec<String>,
    pub conditions: Vec<String>,
    pub seeds: Seeds,
    pub pair_counts: PairCounts,
    pub filter: String,
    pub template_version: String,
    pub tool_version: String,
}

impl RunManifest {
    /// Fills `run_id` from the other fields.
    pub fn seal(mut self) -> Self {
        self.run_id.clear();
        let json = serde_json::to_vec(&self).expect("manifest serializes");
        self.run_id = format!("run-{}", &sha256_hex(&json)[..16]);
        self
    }

    /// `# key: value` lines for report headers.
    pub fn header_lines(&self) -> Vec<String> {
        vec![
            format!("run_id: {}", self.run_id),
            format!("corpus_digest: {}", self.corpus_digest),
            format!("profiles: {}", self.profile_ids.join(", ")),
            format!("substrates: {}", self.substrate_ids.join(", ")),
            format!("conditions: {}", self.conditions.join(", ")),
            format!(
                "seeds: sample={} permutation={}",
                self.seeds.sample, self.seeds.permutation
            ),
            format!(
                "pairs: raw={} filtered={} kept={} (filter: {})",
                self.pair_counts.raw, self.pair_counts.filtered, self.pair_counts.kept, self.filter
            ),
            format!("template_version: {}", self.template_version),
            format!("tool_version: {}", self.tool_version),
        ]
    }
}

/// Digest of the sampled items, independent of their order.
pub fn corpus_digest(items: &[Item]) -> String {
    let mut sorted: Vec<&Item> = items.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let json = serde_json::to_vec(&sorted).expect("items serialize");
    sha256_hex(&json)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogLine {
    Manifest(RunManifest),
    Trial(TrialRecord),
}

#[derive(Debug, Error)]
pub enum RunLogError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{0}: run log has no manifest line")]
    MissingManifest(PathBuf),
    #[error("{path}: existing log belongs to {existing}, not {requested}; use a fresh output path")]
    ManifestMismatch {
        path: PathBuf,
        existing: String,
        requested: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunLogError + '_ {
    move |source| RunLogError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLogContents {
    pub manifest: RunManifest,
    /// One record per pair key, in first-seen order. A completed record
    /// replaces an earlier error record for the same pair.
    pub records: Vec<TrialRecord>,
    /// Lines that repeated an already-logged pair.
    pub duplicates: usize,
}

impl RunLogContents {
    pub fn completed_keys(&self) -> BTreeSet<String> {
        self.records
            .iter()
            .filter(|r| r.is_completed())
            .map(TrialRecord::pair_key)
            .collect()
    }
}

fn parse_lines(path: &Path, text: &str) -> Result<RunLogContents, RunLogError> {
    let mut manifest = None;
    let mut records: Vec<TrialRecord> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut duplicates = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine = serde_json::from_str(line).map_err(|e| RunLogError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        match parsed {
            LogLine::Manifest(m) if manifest.is_none() && records.is_empty() => manifest = Some(m),
            LogLine::Manifest(_) => {
                return Err(RunLogError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "manifest must be the first and only manifest line".into(),
                })
            }
            LogLine::Trial(r) => match index.get(&r.pair_key()) {
                Some(&at) => {
                    duplicates += 1;
                    if !records[at].is_completed() && r.is_completed() {
                        records[at] = r;
                    }
                }
                None => {
                    index.insert(r.pair_key(), records.len());
                    records.push(r);
                }
            },
        }
    }
    let manifest = manifest.ok_or_else(|| RunLogError::MissingManifest(path.to_path_buf()))?;
    Ok(RunLogContents {
        manifest,
        records,
        duplicates,
    })
}

/// Reads a log, ignoring a partial trailing line.
pub fn read_run_log(path: &Path) -> Result<RunLogContents, RunLogError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let complete = match text.rfind('\n') {
        Some(end) => &text[..=end],
        None => "",
    };
    parse_lines(path, complete)
}

pub struct RunLogWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl RunLogWriter {
    /// Starts a fresh log, replacing any existing file.
    pub fn create(path: &Path, manifest: &RunManifest) -> Result<Self, RunLogError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let file = File::create(path).map_err(io_err(path))?;
        let mut w = RunLogWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        w.write_line(&LogLine::Manifest(manifest.clone()))?;
        Ok(w)
    }

    /// Reopens an existing log for appending after dropping any partial
    /// trailing line. Returns the writer and the keys of completed pairs.
    /// A missing file starts a fresh log.
    pub fn resume(path: &Path, manifest: &RunManifest) -> Result<(Self, BTreeSet<String>), RunLogError> {
        if !path.exists() {
            return Ok((Self::create(path, manifest)?, BTreeSet::new()));
        }
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .open(path)
            .map_err(io_err(path))?;
        let mut text = String::new();
        file.read_to_string(&mut text).map_err(io_err(path))?;
        let keep = text.rfind('\n').map_or(0, |i| i + 1);
        if keep < text.len() {
            log::warn!(
                "{}: truncating {} bytes of partial trailing line",
                path.display(),
                text.len() - keep
            );
            file.set_len(keep as u64).map_err(io_err(path))?;
        }
        if keep == 0 {
            drop(file);
            return Ok((Self::create(path, manifest)?, BTreeSet::new()));
        }
        let contents = parse_lines(path, &text[..keep])?;
        if contents.manifest.run_id != manifest.run_id {
            return Err(RunLogError::ManifestMismatch {
                path: path.to_path_buf(),
                existing: contents.manifest.run_id,
                requested: manifest.run_id.clone(),
            });
        }
        file.seek(SeekFrom::End(0)).map_err(io_err(path))?;
        Ok((
            RunLogWriter {
                path: path.to_path_buf(),
                out: BufWriter::new(file),
            },
            contents.completed_keys(),
        ))
    }

    fn write_line(&mut self, line: &LogLine) -> Result<(), RunLogError> {
        let mut json = serde_json::to_string(line).expect("log lines serialize");
        json.push('\n');
        self.out.write_all(json.as_bytes()).map_err(io_err(&self.path))?;
        self.out.flush().map_err(io_err(&self.path))
    }

    pub fn append(&mut self, record: &TrialRecord) -> Result<(), RunLogError> {
        self.write_line(&LogLine::Trial(record.clone()))
    }
}

/// Digest over the manifest and record contents with timing excluded.
pub fn run_digest(contents: &RunLogContents) -> String {
    let mut acc = serde_json::to_string(&contents.manifest).expect("manifest serializes");
    for r in &contents.records {
        acc.push('\n');
        acc.push_str(&r.content_digest());
    }
    sha256_hex(acc.as_bytes())
}
