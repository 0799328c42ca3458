use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_slangtriage");

fn data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel)
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn jsonl(text: &str) -> Vec<Value> {
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

const POSTS: &[(&str, &str)] = &[
    ("1", "picked up some fenty pills from the plug"),
    ("2", "the new fenty beauty palette is out"),
    ("3", "lean and percs all weekend"),
    ("4", "gym then groceries"),
    ("5", "Fenty drop tonight"),
    ("6", "my oxycodone refill came through"),
];

fn fixture() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let mut f = std::fs::File::create(dir.path().join("raw.jsonl")).unwrap();
    for (id, text) in POSTS {
        writeln!(f, "{}", serde_json::json!({"id": id, "text": text, "source": "test"})).unwrap();
    }
    writeln!(f, "{{not json").unwrap();
    std::fs::write(
        dir.path().join("gold.csv"),
        "post_id,label\n1,opioid-related\n2,not-opioid-related\n3,opioid-related\n4,not-opioid-related\n5,not-opioid-related\n6,opioid-related\n",
    )
    .unwrap();
    std::fs::write(
        dir.path().join("gold2.csv"),
        "post_id,label\n1,opioid-related\n2,not-opioid-related\n3,unsure\n4,not-opioid-related\n5,not-opioid-related\n6,opioid-related\n",
    )
    .unwrap();
    dir
}

fn ids(posts: &[Value]) -> Vec<&str> {
    posts.iter().map(|p| p["id"].as_str().unwrap()).collect()
}

#[test]
fn ingest_reports_skips_and_round_trips() {
    let dir = fixture();
    let out = run(dir.path(), &["ingest", "raw.jsonl", "--output", "corpus.jsonl"]);
    assert!(out.status.success());
    let report: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(report["accepted"], 6);
    assert_eq!(report["warnings"].as_array().unwrap().len(), 1);

    let again = ok(dir.path(), &["ingest", "corpus.jsonl"]);
    assert_eq!(again, std::fs::read_to_string(dir.path().join("corpus.jsonl")).unwrap());
}

#[test]
fn csv_ingest() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("p.csv"), "id,text,source\na,hello there,s\nb,\"quoted, text\",s\n").unwrap();
    let posts = jsonl(&ok(dir.path(), &["ingest", "p.csv"]));
    assert_eq!(ids(&posts), ["a", "b"]);
    assert_eq!(posts[1]["text"], "quoted, text");
}

#[test]
fn filter_by_term_and_policy() {
    let dir = fixture();
    let posts = jsonl(&ok(dir.path(), &["filter", "raw.jsonl", "--term", "fenty"]));
    assert_eq!(ids(&posts), ["1", "2", "5"]);
    let posts = jsonl(&ok(dir.path(), &["filter", "raw.jsonl", "--term", "fenty", "--case-sensitive"]));
    assert_eq!(ids(&posts), ["1", "2"]);
    let posts = jsonl(&ok(dir.path(), &["filter", "raw.jsonl", "--term", "oxy"]));
    assert!(posts.is_empty());
    let posts = jsonl(&ok(dir.path(), &["filter", "raw.jsonl", "--term", "oxy", "--no-word-boundary"]));
    assert_eq!(ids(&posts), ["6"]);
}

#[test]
fn filter_sample_follows_seed() {
    let dir = fixture();
    let a = ok(dir.path(), &["--seed", "7", "filter", "raw.jsonl", "--term", "fenty", "--sample", "2"]);
    let b = ok(dir.path(), &["filter", "raw.jsonl", "--term", "fenty", "--sample", "2", "--seed", "7"]);
    assert_eq!(a, b);
    assert_eq!(jsonl(&a).len(), 2);
    assert!(!run(dir.path(), &["filter", "raw.jsonl", "--term", "fenty", "--sample", "9"]).status.success());
}

#[test]
fn filter_by_lexicon() {
    let dir = fixture();
    let posts = jsonl(&ok(dir.path(), &["filter", "raw.jsonl", "--lexicon", "builtin:example-strict"]));
    assert_eq!(ids(&posts), ["6"]);
}

#[test]
fn shipped_lexicon_files_match_builtins() {
    let dir = fixture();
    for name in ["example-broad", "example-strict"] {
        let file = data(&format!("lexicons/{name}.json"));
        let from_file = ok(dir.path(), &["classify-lexicon", "raw.jsonl", "--lexicon", file.to_str().unwrap()]);
        let builtin = ok(dir.path(), &["classify-lexicon", "raw.jsonl", "--lexicon", &format!("builtin:{name}")]);
        assert_eq!(from_file, builtin, "{name}");
    }
}

#[test]
fn classify_lexicon_labels_every_post() {
    let dir = fixture();
    let preds = jsonl(&ok(dir.path(), &["classify-lexicon", "raw.jsonl", "--lexicon", "builtin:example-broad"]));
    let labels: Vec<&str> = preds.iter().map(|p| p["label"].as_str().unwrap()).collect();
    assert_eq!(
        labels,
        [
            "opioid-related",
            "opioid-related",
            "opioid-related",
            "not-opioid-related",
            "opioid-related",
            "opioid-related"
        ]
    );
    assert!(preds.iter().all(|p| p["predictor_id"] == "example-broad" && p["shadow_label"].is_null()));
}

#[test]
fn plain_text_lexicon_takes_file_stem() {
    let dir = fixture();
    std::fs::write(dir.path().join("mine.txt"), "fenty\nlean\n").unwrap();
    let preds = jsonl(&ok(dir.path(), &["classify-lexicon", "raw.jsonl", "--lexicon", "mine.txt"]));
    assert_eq!(preds[0]["predictor_id"], "mine");
}

#[test]
fn unknown_builtin_fails() {
    let dir = fixture();
    let out = run(dir.path(), &["classify-lexicon", "raw.jsonl", "--lexicon", "builtin:dea"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no builtin lexicon"));
}

fn mock_config(dir: &Path) {
    let config = serde_json::json!({
        "provider": {"id": "mock-llm", "kind": "mock", "requests_per_minute": 6000},
        "batch_size": 4,
        "mock_script": {
            "rules": [{"keywords": ["pills", "percs", "oxycodone"], "answer": "opioid-related"}],
            "refuse_when": ["palette"]
        }
    });
    std::fs::write(dir.join("config.json"), config.to_string()).unwrap();
}

#[test]
fn adjudicate_with_mock_and_resume() {
    let dir = fixture();
    mock_config(dir.path());
    let out = run(
        dir.path(),
        &["--config", "config.json", "adjudicate", "raw.jsonl", "--transcripts", "t.jsonl", "--batch-size", "1", "-o", "llm.jsonl"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stats: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).lines().last().unwrap()).unwrap();
    assert_eq!(stats["posts_requested"], 6);
    assert_eq!(stats["refused"], 1);

    let preds = jsonl(&std::fs::read_to_string(dir.path().join("llm.jsonl")).unwrap());
    assert_eq!(preds.len(), 6);
    let label = |id: &str| preds.iter().find(|p| p["post_id"] == id).unwrap()["label"].clone();
    assert_eq!(label("1"), "opioid-related");
    assert_eq!(label("2"), "content-restriction-error");
    assert_eq!(label("4"), "not-opioid-related");
    assert!(preds.iter().all(|p| p["predictor_id"] == "mock-llm"));
    let transcripts = jsonl(&std::fs::read_to_string(dir.path().join("t.jsonl")).unwrap());
    assert_eq!(transcripts.len(), 6);

    let out = run(
        dir.path(),
        &["--config", "config.json", "adjudicate", "raw.jsonl", "--resume", "llm.jsonl"],
    );
    assert!(out.status.success());
    let stats: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).lines().last().unwrap()).unwrap();
    assert_eq!(stats["posts_requested"], 0);
    assert_eq!(stats["requests"], 0);
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        std::fs::read_to_string(dir.path().join("llm.jsonl")).unwrap()
    );
}

#[test]
fn missing_credential_fails_at_startup() {
    let dir = fixture();
    let config = serde_json::json!({
        "provider": {
            "id": "remote",
            "kind": "openai-compatible",
            "endpoint": "http://127.0.0.1:9/v1/chat/completions",
            "model": "m",
            "api_key_env": "SLANGTRIAGE_TEST_UNSET_KEY"
        }
    });
    std::fs::write(dir.path().join("c.json"), config.to_string()).unwrap();
    let out = Command::new(BIN)
        .args(["--config", "c.json", "adjudicate", "raw.jsonl"])
        .current_dir(dir.path())
        .env_remove("SLANGTRIAGE_TEST_UNSET_KEY")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("SLANGTRIAGE_TEST_UNSET_KEY"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = fixture();
    std::fs::write(dir.path().join("c.json"), r#"{"provder": {}}"#).unwrap();
    let out = run(dir.path(), &["--config", "c.json", "adjudicate", "raw.jsonl"]);
    assert!(!out.status.success());
}

#[test]
fn evaluate_json_text_and_plot_csv() {
    let dir = fixture();
    ok(dir.path(), &["classify-lexicon", "raw.jsonl", "--lexicon", "builtin:example-broad", "-o", "lex.jsonl"]);
    let reports: Value = serde_json::from_str(&ok(
        dir.path(),
        &["evaluate", "--predictions", "lex.jsonl", "--gold", "gold.csv", "--agreement-with", "gold2.csv", "--plot-csv", "plot.csv"],
    ))
    .unwrap();
    let r = &reports[0];
    assert_eq!(r["predictor_id"], "example-broad");
    assert_eq!(r["n_gold"], 6);
    // 3 tp, 2 fp (posts 2 and 5), 0 fn
    assert_eq!(r["binary"]["precision"].as_f64().unwrap(), 3.0 / 5.0);
    assert_eq!(r["binary"]["recall"].as_f64().unwrap(), 1.0);
    assert_eq!(r["agreement"]["n_items"], 6);
    assert_eq!(r["matrix"].as_array().unwrap().len(), 5);

    let plot = std::fs::read_to_string(dir.path().join("plot.csv")).unwrap();
    assert!(plot.starts_with("predictor,strategy,metric,value\n"));
    assert!(plot.contains("example-broad,predictor,f1,0.750000"));

    let text = ok(dir.path(), &["evaluate", "--predictions", "lex.jsonl", "--gold", "gold.csv", "--text"]);
    assert!(text.contains("predictor: example-broad"));
    assert!(text.contains("include-all"));
}

#[test]
fn evaluate_several_predictors() {
    let dir = fixture();
    ok(dir.path(), &["classify-lexicon", "raw.jsonl", "--lexicon", "builtin:example-broad", "-o", "a.jsonl"]);
    ok(dir.path(), &["classify-lexicon", "raw.jsonl", "--lexicon", "builtin:example-strict", "-o", "b.jsonl"]);
    let reports: Value =
        serde_json::from_str(&ok(dir.path(), &["evaluate", "--predictions", "a.jsonl", "b.jsonl", "--gold", "gold.csv"]))
            .unwrap();
    let names: Vec<&str> = reports.as_array().unwrap().iter().map(|r| r["predictor_id"].as_str().unwrap()).collect();
    assert_eq!(names, ["example-broad", "example-strict"]);
}

#[test]
fn agreement_between_gold_files() {
    let dir = fixture();
    let report: Value = serde_json::from_str(&ok(dir.path(), &["agreement", "--a", "gold.csv", "--b", "gold2.csv"])).unwrap();
    assert_eq!(report["n_items"], 6);
    // p_o = 5/6; marginals a = (3,3,0), b = (2,3,1) over 6
    let p_e = (3.0 * 2.0 + 3.0 * 3.0) / 36.0;
    let kappa = (5.0 / 6.0 - p_e) / (1.0 - p_e);
    assert!((report["kappa_3class"].as_f64().unwrap() - kappa).abs() < 1e-12);
    // unsure binarizes to negative: a = (3,3), b = (2,4)
    let p_e = (3.0 * 2.0 + 3.0 * 4.0) / 36.0;
    let kappa = (5.0 / 6.0 - p_e) / (1.0 - p_e);
    assert!((report["kappa_binarized"].as_f64().unwrap() - kappa).abs() < 1e-12);
}

#[test]
fn sample_session_strips_predictions_and_follows_seed() {
    let dir = fixture();
    ok(dir.path(), &["classify-lexicon", "raw.jsonl", "--lexicon", "builtin:example-strict", "-o", "p.jsonl"]);
    let args = ["--seed", "3", "sample-session", "--predictions", "p.jsonl", "--corpus", "raw.jsonl", "--count", "2"];
    let a = ok(dir.path(), &args);
    assert_eq!(a, ok(dir.path(), &args));
    let session: Value = serde_json::from_str(&a).unwrap();
    let items = session["items"].as_array().unwrap();
    // one positive plus two sampled negatives
    assert_eq!(items.len(), 3);
    assert!(items.iter().any(|i| i["post_id"] == "6"));
    for item in items {
        let keys: Vec<&String> = item.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["post_id", "text"]);
    }

    ok(dir.path(), &["sample-session", "--predictions", "p.jsonl", "--corpus", "raw.jsonl", "--fraction", "0.4", "--sessions-dir", "s"]);
    let files: Vec<_> = std::fs::read_dir(dir.path().join("s")).unwrap().collect();
    assert_eq!(files.len(), 1);

    let sub: Value = serde_json::from_str(&ok(
        dir.path(),
        &["sample-session", "--predictions", "p.jsonl", "--corpus", "raw.jsonl", "--count", "5", "--subset", "2"],
    ))
    .unwrap();
    assert_eq!(sub["items"].as_array().unwrap().len(), 2);
}

#[test]
fn sample_session_rejects_oversized_count() {
    let dir = fixture();
    ok(dir.path(), &["classify-lexicon", "raw.jsonl", "--lexicon", "builtin:example-strict", "-o", "p.jsonl"]);
    let out = run(dir.path(), &["sample-session", "--predictions", "p.jsonl", "--corpus", "raw.jsonl", "--count", "50"]);
    assert!(!out.status.success());
}

#[test]
fn substitute_corpus_with_shipped_map() {
    let dir = fixture();
    let map = data("substitution-map.json");
    let posts = jsonl(&ok(dir.path(), &["substitute", "raw.jsonl", "--map", map.to_str().unwrap()]));
    assert_eq!(posts[0]["text"], "picked up some Pikachu pills from the plug");
    assert_eq!(posts[2]["text"], "Jigglypuff and percs all weekend");
    assert_eq!(posts[3]["meta"]["substitutions"], 0);
}

#[test]
fn substitute_paired_writes_originals_and_gold() {
    let dir = fixture();
    std::fs::write(dir.path().join("pos.jsonl"), "{\"id\":\"p1\",\"text\":\"copped blues again\",\"source\":\"t\"}\n").unwrap();
    std::fs::write(dir.path().join("neg.jsonl"), "{\"id\":\"n1\",\"text\":\"feeling blues today\",\"source\":\"t\"}\n").unwrap();
    let modified = jsonl(&ok(
        dir.path(),
        &["substitute", "--opioid", "pos.jsonl", "--non-opioid", "neg.jsonl", "--originals", "orig.jsonl", "--gold", "g.csv"],
    ));
    assert_eq!(modified[0]["text"], "copped Squirtle again");
    assert_eq!(modified[1]["text"], "feeling Squirtle today");
    let originals = jsonl(&std::fs::read_to_string(dir.path().join("orig.jsonl")).unwrap());
    assert_eq!(originals[0]["text"], "copped blues again");
    let gold = std::fs::read_to_string(dir.path().join("g.csv")).unwrap();
    assert!(gold.contains("p1,opioid-related"));
    assert!(gold.contains("n1,not-opioid-related"));
}

#[test]
fn substitute_paired_requires_a_key_in_every_post() {
    let dir = fixture();
    let out = run(dir.path(), &["substitute", "--opioid", "raw.jsonl", "--non-opioid", "raw.jsonl"]);
    assert!(!out.status.success());
}

fn http_get(addr: &str, path: &str) -> Option<String> {
    let mut stream = TcpStream::connect(addr).ok()?;
    stream.set_read_timeout(Some(Duration::from_secs(5))).ok()?;
    write!(stream, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").ok()?;
    let mut body = String::new();
    stream.read_to_string(&mut body).ok()?;
    Some(body)
}

#[test]
fn serve_exposes_stored_sessions() {
    let dir = fixture();
    ok(dir.path(), &["classify-lexicon", "raw.jsonl", "--lexicon", "builtin:example-strict", "-o", "p.jsonl"]);
    ok(dir.path(), &["sample-session", "--predictions", "p.jsonl", "--corpus", "raw.jsonl", "--count", "1", "--sessions-dir", "s"]);

    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let mut child = Command::new(BIN)
        .args(["serve", "--addr", &addr, "--sessions-dir", "s"])
        .current_dir(dir.path())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(10);
    let reply = loop {
        if let Some(r) = http_get(&addr, "/sessions") {
            break r;
        }
        assert!(Instant::now() < deadline, "server did not come up");
        std::thread::sleep(Duration::from_millis(50));
    };
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    assert!(reply.contains("\"items\":2"), "{reply}");
}

#[test]
fn shipped_configs_parse() {
    let dir = fixture();
    let mock = data("config.mock.json");
    let preds = jsonl(&ok(dir.path(), &["--config", mock.to_str().unwrap(), "adjudicate", "raw.jsonl"]));
    assert_eq!(preds.len(), 6);

    // parses, then stops on the unset credential
    let example = data("config.example.json");
    let out = Command::new(BIN)
        .args(["--config", example.to_str().unwrap(), "adjudicate", "raw.jsonl"])
        .current_dir(dir.path())
        .env_remove("OPENAI_API_KEY")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("OPENAI_API_KEY"));
}
