//! End-to-end checks of the `ccs` binary.

mod common;

use std::path::Path;
use std::process::{Command, Output};

use ccs_core::runlog::{read_run_log, run_digest};

fn ccs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccs"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_csv(dir: &Path, subject: &str, n: usize) {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(dir.join(format!("{subject}_test.csv")))
        .unwrap();
    for i in 0..n {
        w.write_record([&format!("Neutral question {i}?"), "w", "x", "y", "z", "A"])
            .unwrap();
    }
}

#[test]
fn validate_exit_codes() {
    let ok = ccs(&["validate", "--profile", "pcs-nlp", "--profile", "pcs-litprof"]);
    assert_eq!(ok.status.code(), Some(0));
    let bundled = common::repo_root().join("profiles/pcs-nlp.toml");
    assert_eq!(ccs(&["validate", "--profile", bundled.to_str().unwrap()]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("overlap.toml");
    std::fs::write(
        &bad,
        "id = \"X\"\nstrong = [\"philosophy\"]\nmixed = []\nweak = [\"Philosophy\"]\n",
    )
    .unwrap();
    let out = ccs(&["validate", "--profile", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("philosophy"));

    let missing = dir.path().join("nope.toml");
    assert_eq!(ccs(&["validate", "--profile", missing.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn route_lists_directives_without_substrate() {
    let dir = tempfile::tempdir().unwrap();
    write_csv(dir.path(), "machine_learning", 10);
    let corpus = dir.path().join("machine_learning_test.csv");
    let corpus = corpus.to_str().unwrap();

    let nlp = ccs(&["route", "--profile", "pcs-nlp", "--corpus", corpus]);
    assert_eq!(nlp.status.code(), Some(0));
    let lines: Vec<String> = stdout(&nlp).lines().map(String::from).collect();
    assert_eq!(lines.len(), 10);
    assert!(lines.iter().all(|l| l.contains("\tlevel=0\t")));

    let lit = ccs(&["route", "--profile", "pcs-litprof", "--corpus", corpus]);
    assert_eq!(stdout(&lit).lines().filter(|l| l.contains("\tlevel=3\t")).count(), 10);

    write_csv(dir.path(), "astronomy", 2);
    let astro = dir.path().join("astronomy_test.csv");
    let rejected = ccs(&[
        "route",
        "--profile",
        "pcs-nlp",
        "--undeclared",
        "reject",
        "--corpus",
        astro.to_str().unwrap(),
    ]);
    assert_eq!(rejected.status.code(), Some(2));
    let weak = ccs(&["route", "--profile", "pcs-nlp", "--corpus", astro.to_str().unwrap()]);
    assert_eq!(weak.status.code(), Some(0));
    assert!(stdout(&weak).contains("undeclared"));
}

#[test]
fn run_resume_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    std::fs::create_dir(&corpus).unwrap();
    write_csv(&corpus, "machine_learning", 30);
    let out = dir.path().join("out");
    let args = [
        "run",
        "--corpus",
        corpus.to_str().unwrap(),
        "--conditions",
        "PCS-NLP,PCS-LitProf",
        "--seed",
        "5",
        "--out",
        out.to_str().unwrap(),
    ];
    assert_eq!(ccs(&args).status.code(), Some(0));
    let log = out.join("run.jsonl");
    let full = read_run_log(&log).unwrap();
    assert_eq!(full.records.len(), 60);
    let fired = |c: &str| {
        full.records
            .iter()
            .filter(|r| r.condition.to_string() == c && r.fired() == Some(true))
            .count()
    };
    assert_eq!((fired("PCS-NLP"), fired("PCS-LitProf")), (0, 30));

    // Simulate a crash after 10 records plus a torn write.
    let text = std::fs::read_to_string(&log).unwrap();
    let mut kept: String = text.lines().take(11).map(|l| format!("{l}\n")).collect();
    kept.push_str("{\"kind\":\"trial\",\"item_id\":\"machine_le");
    std::fs::write(&log, kept).unwrap();

    let mut resume = args.to_vec();
    resume.push("--resume");
    let out2 = ccs(&resume);
    assert_eq!(out2.status.code(), Some(0));
    assert!(stdout(&out2).contains("10 skipped"));
    let resumed = read_run_log(&log).unwrap();
    assert_eq!(resumed.records.len(), 60);
    assert_eq!(resumed.duplicates, 0);
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 61);
    assert_eq!(run_digest(&resumed), run_digest(&full));

    // Resuming a finished run is a no-op.
    let out3 = ccs(&resume);
    assert!(stdout(&out3).contains("0 completed, 0 errors, 60 skipped"));
}

#[test]
fn resume_refuses_a_different_configuration() {
    let dir = tempfile::tempdir().unwrap();
    write_csv(dir.path(), "philosophy", 3);
    let corpus = dir.path().join("philosophy_test.csv");
    let out = dir.path().join("out");
    let base = ["run", "--corpus", corpus.to_str().unwrap(), "--out", out.to_str().unwrap()];
    assert_eq!(ccs(&base).status.code(), Some(0));
    let mut other = base.to_vec();
    other.extend(["--seed", "9", "--resume"]);
    assert_eq!(ccs(&other).status.code(), Some(2));
}

#[test]
fn baseline_never_fires_under_mock() {
    let dir = tempfile::tempdir().unwrap();
    for s in ["professional_psychology", "formal_logic", "econometrics"] {
        write_csv(dir.path(), s, 5);
    }
    let out = dir.path().join("out");
    let o = ccs(&[
        "run",
        "--corpus",
        dir.path().to_str().unwrap(),
        "--conditions",
        "baseline",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let run = read_run_log(&out.join("run.jsonl")).unwrap();
    assert_eq!(run.records.len(), 15);
    assert!(run.records.iter().all(|r| r.fired() == Some(false) && r.directive.is_none()));
}

#[test]
fn report_and_stats_on_fixture() {
    let fixture = common::fixture_path();
    let dir = tempfile::tempdir().unwrap();
    let o = ccs(&[
        "report",
        "--log",
        fixture.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let t2 = std::fs::read_to_string(dir.path().join("profile_inversion.md")).unwrap();
    assert!(t2.contains("| PCS-NLP | 3.3% (1/30) | 100% (30/30) | 90.0% (27/30) |"));
    assert!(t2.starts_with("<!--\nrun_id: run-"));
    let t3 = std::fs::read_to_string(dir.path().join("mixed_divergence.md")).unwrap();
    assert!(t3.contains("| Professional Psychology | 73% (22/30) |"));
    let base = std::fs::read_to_string(dir.path().join("mixed_divergence_baseline.md")).unwrap();
    assert_eq!(base.matches("| 0% (0/30) |").count(), 3);
    let heat = std::fs::read_to_string(dir.path().join("heatmap.csv")).unwrap();
    assert!(heat.contains("claude-sonnet-4.5,PCS-NLP,ML / CS,1,30,"));

    let csv_dir = tempfile::tempdir().unwrap();
    let o = ccs(&[
        "report",
        "--log",
        fixture.to_str().unwrap(),
        "--format",
        "csv",
        "--out",
        csv_dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let t4 = std::fs::read_to_string(csv_dir.path().join("cross_substrate.csv")).unwrap();
    assert!(t4.lines().all(|l| l.starts_with('#') || !l.is_empty()));
    assert!(t4.contains("Medical / Legal (Weak),100%,93.3%,100%,100%"));

    let o = ccs(&[
        "stats",
        "--log",
        fixture.to_str().unwrap(),
        "--permutations",
        "2000",
        "--seed",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.contains("0 of 2000 >= observed"));
    assert!(s.contains("(1,29;30,0)"));
}

#[test]
fn report_errors() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("run.jsonl");
    // manifest only
    let first = std::fs::read_to_string(common::fixture_path())
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    std::fs::write(&log, format!("{first}\n")).unwrap();
    let o = ccs(&["report", "--log", log.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(ccs(&["report", "--log", "/nonexistent/run.jsonl"]).status.code(), Some(1));
    assert_eq!(ccs(&["stats", "--log", log.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn single_substrate_single_condition() {
    let dir = tempfile::tempdir().unwrap();
    write_csv(dir.path(), "philosophy", 4);
    let out = dir.path().join("out");
    ccs(&[
        "run",
        "--corpus",
        dir.path().join("philosophy_test.csv").to_str().unwrap(),
        "--conditions",
        "pcs-nlp",
        "--substrate",
        "mock:solo",
        "--out",
        out.to_str().unwrap(),
    ]);
    let log = out.join("run.jsonl");
    let o = ccs(&["report", "--log", log.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("PCS-LitProf"));
}

#[test]
fn persona_corpus_runs() {
    let dir = tempfile::tempdir().unwrap();
    let personas = common::repo_root().join("corpora/pdd-scenarios.json");
    let o = ccs(&[
        "run",
        "--corpus",
        personas.to_str().unwrap(),
        "--conditions",
        "baseline",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let run = read_run_log(&dir.path().join("run.jsonl")).unwrap();
    assert_eq!(run.records.len(), 18);
}

#[test]
fn faults_file_overrides_mock() {
    let dir = tempfile::tempdir().unwrap();
    write_csv(dir.path(), "machine_learning", 20);
    let faults = dir.path().join("faults.json");
    std::fs::write(&faults, r#"{"level_overrides": {"PCS-NLP:machine_learning_0017": 1}}"#).unwrap();
    let out = dir.path().join("out");
    let o = ccs(&[
        "run",
        "--corpus",
        dir.path().join("machine_learning_test.csv").to_str().unwrap(),
        "--conditions",
        "PCS-NLP",
        "--faults",
        faults.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let run = read_run_log(&out.join("run.jsonl")).unwrap();
    let fired: Vec<&str> = run
        .records
        .iter()
        .filter(|r| r.fired() == Some(true))
        .map(|r| r.item_id.as_str())
        .collect();
    assert_eq!(fired, ["machine_learning_0017"]);
}
