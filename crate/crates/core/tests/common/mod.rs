//! Shared test helpers: the bundled pilot-pattern fixture and synthetic
//! corpora.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use ccs_core::corpus::{Condition, Item, PairFilter};
use ccs_core::pipeline::{build_record, RunPlan};
use ccs_core::profile::{builtin_profiles, DomainLabel};
use ccs_core::runlog::{RunLogWriter, Seeds};
use ccs_core::substrate::{mock_complete, MockFaultPlan, SubstrateConfig};

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fixture_path() -> PathBuf {
    repo_root().join("fixtures/pilot-run.jsonl")
}

pub fn label(s: &str) -> DomainLabel {
    DomainLabel::parse(s).unwrap()
}

/// Neutral multiple-choice items: no vocabulary hits, so routing depends on
/// the partition alone.
pub fn neutral_items(subject: &str, n: usize) -> Vec<Item> {
    (0..n)
        .map(|i| Item {
            id: format!("{subject}_{i:04}"),
            subject: label(subject),
            question: format!("Fixture prompt number {i}."),
            choices: ["alpha", "beta", "gamma", "delta"].map(String::from).to_vec(),
            answer_index: Some((i % 4) as u8),
            ambiguous: false,
        })
        .collect()
}

pub const SUBSTRATES: [&str; 4] = ["claude-sonnet-4.5", "claude-haiku-4.5", "gpt-4.1", "gpt-5.5"];

const ML_CS: [(&str, usize); 2] = [("machine_learning", 15), ("college_computer_science", 15)];
const MED_LAW: [(&str, usize); 3] = [
    ("clinical_knowledge", 10),
    ("medical_genetics", 10),
    ("professional_law", 10),
];
const HUM: [(&str, usize); 2] = [("philosophy", 15), ("european_history", 15)];
const MIXED: [&str; 3] = ["professional_psychology", "formal_logic", "econometrics"];

fn group_items(spec: &[(&str, usize)]) -> Vec<Item> {
    spec.iter().flat_map(|(s, n)| neutral_items(s, *n)).collect()
}

/// Fired counts out of 30 per (substrate, condition, group).
fn fired_counts() -> BTreeMap<(&'static str, &'static str, &'static str), usize> {
    let mut m = BTreeMap::new();
    let sonnet = SUBSTRATES[0];
    for (g, k) in [("mlcs", 1), ("medlaw", 30), ("hum", 27)] {
        m.insert((sonnet, "PCS-NLP", g), k);
    }
    for (g, k) in [
        ("professional_psychology", 22),
        ("formal_logic", 4),
        ("econometrics", 1),
    ] {
        m.insert((sonnet, "PCS-NLP", g), k);
        m.insert((sonnet, "baseline", g), 0);
    }
    for (g, k) in [("mlcs", 30), ("medlaw", 22), ("hum", 0)] {
        m.insert((sonnet, "PCS-LitProf", g), k);
    }
    for (sub, ks) in [
        (SUBSTRATES[1], [0, 28, 23]),
        (SUBSTRATES[2], [0, 30, 29]),
        (SUBSTRATES[3], [0, 30, 30]),
    ] {
        for (g, k) in ["mlcs", "medlaw", "hum"].into_iter().zip(ks) {
            m.insert((sub, "PCS-NLP", g), k);
        }
    }
    m
}

fn group_key(subject: &DomainLabel) -> &'static str {
    let s = subject.as_str();
    if ML_CS.iter().any(|(x, _)| *x == s) {
        "mlcs"
    } else if MED_LAW.iter().any(|(x, _)| *x == s) {
        "medlaw"
    } else if HUM.iter().any(|(x, _)| *x == s) {
        "hum"
    } else {
        MIXED.into_iter().find(|x| *x == s).expect("fixture subject")
    }
}

/// Run-log lines reproducing the pilot counts: the first `k` items of each
/// group (in id order) fire, the rest stay silent.
pub fn write_pilot_fixture(path: &Path) {
    let mut items = group_items(&ML_CS);
    items.extend(group_items(&MED_LAW));
    items.extend(group_items(&HUM));
    for s in MIXED {
        items.extend(neutral_items(s, 30));
    }
    let table2: BTreeSet<DomainLabel> = ML_CS
        .iter()
        .chain(MED_LAW.iter())
        .chain(HUM.iter())
        .map(|(s, _)| label(s))
        .collect();
    let mixed: BTreeSet<DomainLabel> = MIXED.iter().map(|s| label(s)).collect();
    let mut keep = BTreeMap::new();
    keep.insert("PCS-LitProf".to_string(), table2.clone());
    keep.insert("baseline".to_string(), mixed);
    let plan = RunPlan {
        items,
        profiles: builtin_profiles(),
        conditions: vec![
            Condition::Profile("PCS-NLP".into()),
            Condition::Profile("PCS-LitProf".into()),
            Condition::Baseline,
        ],
        substrates: SUBSTRATES.iter().map(|s| SubstrateConfig::mock(*s)).collect(),
        filter: PairFilter {
            label: "pilot-fixture".into(),
            keep,
        },
        seeds: Seeds::default(),
    };
    let trials = plan.prepare().unwrap();
    let counts = fired_counts();
    let mut writer = RunLogWriter::create(path, &plan.manifest()).unwrap();
    for sub in SUBSTRATES {
        // position of each item within its (condition, group) block
        let mut seen: BTreeMap<(String, &str), usize> = BTreeMap::new();
        for t in &trials {
            let cond = t.pair.condition.to_string();
            let group = group_key(&t.pair.item.subject);
            let Some(&k) = counts.get(&(sub, cond.as_str(), group)) else {
                continue;
            };
            let pos = seen.entry((cond.clone(), group)).or_default();
            let fire = *pos < k;
            *pos += 1;
            let mut faults = MockFaultPlan::default();
            if fire {
                let hint = t.envelope.directive.as_ref().map_or(1, |d| d.level_hint);
                faults.level_overrides.insert(t.envelope.item_id.clone(), hint.max(1));
            } else {
                faults.omit_items.insert(t.envelope.item_id.clone());
            }
            let mut resp = mock_complete(&t.envelope, &faults);
            resp.substrate_id = sub.to_string();
            writer.append(&build_record(t, sub, Ok(resp), 0)).unwrap();
        }
    }
}

pub mod stub {
    //! Minimal HTTP/1.1 server answering scripted responses, one request per
    //! connection.

    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    #[derive(Debug, Clone)]
    pub struct Request {
        pub path: String,
        pub headers: Vec<(String, String)>,
        pub body: String,
    }

    impl Request {
        pub fn header(&self, name: &str) -> Option<&str> {
            self.headers
                .iter()
                .find(|(k, _)| k.eq_ignore_ascii_case(name))
                .map(|(_, v)| v.as_str())
        }
    }

    pub struct Reply {
        pub status: u16,
        pub headers: Vec<(String, String)>,
        pub body: String,
    }

    impl Reply {
        pub fn json(status: u16, body: serde_json::Value) -> Self {
            Reply {
                status,
                headers: vec![],
                body: body.to_string(),
            }
        }
    }

    pub struct StubServer {
        pub url: String,
        pub requests: Arc<Mutex<Vec<Request>>>,
    }

    type Handler = dyn Fn(usize, &Request) -> Reply + Send + Sync;

    pub fn start(handler: impl Fn(usize, &Request) -> Reply + Send + Sync + 'static) -> StubServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let requests: Arc<Mutex<Vec<Request>>> = Arc::default();
        let log = Arc::clone(&requests);
        let handler: Arc<Handler> = Arc::new(handler);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let log = Arc::clone(&log);
                let handler = Arc::clone(&handler);
                std::thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
                    let mut headers = Vec::new();
                    let mut len = 0usize;
                    loop {
                        let mut h = String::new();
                        reader.read_line(&mut h).unwrap();
                        let h = h.trim_end();
                        if h.is_empty() {
                            break;
                        }
                        if let Some((k, v)) = h.split_once(':') {
                            if k.eq_ignore_ascii_case("content-length") {
                                len = v.trim().parse().unwrap();
                            }
                            headers.push((k.trim().to_string(), v.trim().to_string()));
                        }
                    }
                    let mut body = vec![0u8; len];
                    reader.read_exact(&mut body).unwrap();
                    let req = Request {
                        path,
                        headers,
                        body: String::from_utf8(body).unwrap(),
                    };
                    let index = {
                        let mut l = log.lock().unwrap();
                        l.push(req.clone());
                        l.len() - 1
                    };
                    let reply = handler(index, &req);
                    let mut out = format!(
                        "HTTP/1.1 {} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
                        reply.status,
                        reply.body.len()
                    );
                    for (k, v) in &reply.headers {
                        out.push_str(&format!("{k}: {v}\r\n"));
                    }
                    out.push_str("\r\n");
                    out.push_str(&reply.body);
                    let _ = stream.write_all(out.as_bytes());
                });
            }
        });
        StubServer { url, requests }
    }

    /// OpenAI-style completion that follows the marker instructions found
    /// in the system prompt, as a compliant model would.
    pub fn compliant_reply(req: &Request) -> Reply {
        let body: serde_json::Value = serde_json::from_str(&req.body).unwrap();
        let system = body["messages"][0]["content"].as_str().unwrap_or("");
        let markers: Vec<&str> = system
            .split("nothing before them:\n")
            .nth(1)
            .map(|rest| rest.lines().take_while(|l| l.starts_with("[CCS:")).collect())
            .unwrap_or_default();
        let mut text = markers.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        text.push_str("Answer: B");
        Reply::json(
            200,
            serde_json::json!({
                "choices": [{"message": {"role": "assistant", "content": text}}],
                "usage": {"prompt_tokens": 100, "completion_tokens": 5}
            }),
        )
    }
}
