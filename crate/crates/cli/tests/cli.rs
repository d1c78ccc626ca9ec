use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bos_topics::embedding::{save_embeddings, EmbeddingMatrix};

const THEMES: [[&str; 4]; 3] = [
    ["Rockets", "orbit", "launch", "satellites"],
    ["Bread", "flour", "ovens", "yeast"],
    ["Rivers", "salmon", "currents", "delta"],
];

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    corpus: PathBuf,
    emb: PathBuf,
    groups: usize,
}

/// 60 labeled documents of 5 one-sentence groups; group vectors point at their theme axis.
fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let mut lines = String::new();
    let mut rows = Vec::new();
    for d in 0..60usize {
        let theme = d % 3;
        let mut text = String::new();
        for g in 0..5usize {
            let t = if g == 4 && d % 2 == 0 { (theme + 1) % 3 } else { theme };
            let w = THEMES[t];
            let lead = w[g % 4];
            let lead = lead[..1].to_uppercase() + &lead[1..];
            text.push_str(&format!("{lead} {} and {} near {}. ", w[(g + 1) % 4], w[(g + 2) % 4], w[(g + d) % 4]));
            let mut v = vec![0.05f32 * ((d * 7 + g * 3) % 5) as f32; 6];
            v[t] = 1.0;
            rows.push(v);
        }
        lines.push_str(&serde_json::json!({"id": format!("doc{d:02}"), "text": text, "label": format!("t{theme}")}).to_string());
        lines.push('\n');
    }
    let corpus = root.join("corpus.jsonl");
    fs::write(&corpus, lines).unwrap();
    let emb = root.join("emb.bin");
    save_embeddings(&emb, &EmbeddingMatrix::from_rows(&rows).unwrap()).unwrap();
    Fixture {
        _dir: dir,
        root,
        corpus,
        emb,
        groups: rows.len(),
    }
}

fn bostopic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bostopic")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = bostopic(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fit_is_byte_identical_across_runs_and_threads() {
    let f = fixture();
    let a = f.root.join("a.json");
    let b = f.root.join("b.json");
    let common = ["--corpus", s(&f.corpus), "--emb", s(&f.emb), "--k", "3", "--alpha", "2", "--seed", "7", "--n-s", "1"];
    ok(&[&["--threads", "1", "fit"][..], &common, &["--out", s(&a)]].concat());
    ok(&[&["--threads", "4", "fit"][..], &common, &["--out", s(&b)]].concat());
    let first = fs::read(&a).unwrap();
    assert_eq!(first, fs::read(&b).unwrap().replace_path(&b, &a));

    let model: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(model["params"]["k"], 3);
    assert_eq!(model["run_config"]["seed"], 7);
    assert_eq!(model["assignments"].as_array().unwrap().len(), f.groups);
    assert_eq!(model["epoch_log"].as_array().unwrap().len(), 10);

    // The embedded config alone reproduces the artifact.
    let copy = f.root.join("config.json");
    fs::copy(&a, &copy).unwrap();
    fs::remove_file(&a).unwrap();
    ok(&["fit", "--config", s(&copy)]);
    assert_eq!(fs::read(&a).unwrap(), first);
}

trait ReplacePath {
    fn replace_path(self, from: &Path, to: &Path) -> Vec<u8>;
}

impl ReplacePath for Vec<u8> {
    fn replace_path(self, from: &Path, to: &Path) -> Vec<u8> {
        String::from_utf8(self).unwrap().replace(s(from), s(to)).into_bytes()
    }
}

#[test]
fn triplet_file_follows_count_law() {
    let f = fixture();
    let out = f.root.join("t.jsonl");
    let stdout = ok(&[
        "triplets", "--corpus", s(&f.corpus), "--emb", s(&f.emb), "--n-s", "1", "--f-pos", "0.08", "--f-tri", "0.24",
        "--out", s(&out),
    ])
    .stdout;
    // 60 documents of 5 groups, 2 negatives: 60 · 2 · 8 triplets.
    let n0 = 60 * 2 * 8;
    let want = n0 - (0.08 * n0 as f64).floor() as usize - (0.24 * n0 as f64).floor() as usize;
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), want);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for part in ["anchor", "positive", "negative"] {
            assert!(!v[part]["text"].as_str().unwrap().is_empty());
        }
    }
    let summary: serde_json::Value = serde_json::from_slice(&stdout).unwrap();
    assert_eq!(summary["built"], n0);
    assert_eq!(summary["kept"], want);

    let trainer: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.root.join("t.jsonl.config.json")).unwrap()).unwrap();
    assert_eq!(trainer, serde_json::json!({"margin": 0.16, "epochs": 4}));
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.root.join("t.jsonl.run.json")).unwrap()).unwrap();
    assert_eq!(run["n_neg"], 2);
}

#[test]
fn too_many_topics_is_reported() {
    let f = fixture();
    let k = (f.groups + 1).to_string();
    let out = bostopic(&["fit", "--corpus", s(&f.corpus), "--emb", s(&f.emb), "--n-s", "1", "--k", &k, "--out", s(&f.root.join("m.json"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("insufficient data"));
}

#[test]
fn bad_invocations_fail_with_diagnostics() {
    let f = fixture();
    let out = bostopic(&["fit", "--corpus", s(&f.corpus), "--bogus"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--bogus"));

    let missing = f.root.join("missing.jsonl");
    let out = bostopic(&["tokenize", "--corpus", s(&missing)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.jsonl"));

    // Embeddings built for one grouping do not fit another.
    let out = bostopic(&["fit", "--corpus", s(&f.corpus), "--emb", s(&f.emb), "--n-s", "2", "--k", "3"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("do not match"));

    let out = bostopic(&["fit", "--corpus", s(&f.corpus), "--emb", s(&f.corpus), "--k", "3"]);
    assert!(!out.status.success());
}

#[test]
fn tokenize_dumps_group_index() {
    let f = fixture();
    let out = ok(&["tokenize", "--corpus", s(&f.corpus), "--n-s", "2"]);
    let lines: Vec<serde_json::Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    // Five sentences in groups of two: 2 + 2 + 1 per document.
    assert_eq!(lines.len(), 60 * 3);
    assert_eq!(lines[2]["doc"], "doc00");
    assert_eq!(lines[2]["group"], 2);
    assert_eq!(lines[2]["row"], 2);
    assert!(lines[0]["text"].as_str().unwrap().contains(". "));
}

#[test]
fn topics_and_eval_reports() {
    let f = fixture();
    let model = f.root.join("m.json");
    ok(&["fit", "--corpus", s(&f.corpus), "--emb", s(&f.emb), "--n-s", "1", "--k", "3", "--out", s(&model)]);

    let report: serde_json::Value = serde_json::from_slice(&ok(&["topics", "--model", s(&model)]).stdout).unwrap();
    let topics = report.as_array().unwrap();
    assert_eq!(topics.len(), 3);
    for (t, entry) in topics.iter().enumerate() {
        assert_eq!(entry["topic"], t);
        for w in entry["words"].as_array().unwrap() {
            assert!(w["score"].as_f64().unwrap() > 0.0);
        }
    }
    let text = String::from_utf8(ok(&["--format", "text", "topics", "--model", s(&model)]).stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("topic   0:"));

    // Replace the fitted assignments with the planted themes to check the metrics exactly.
    let mut m: serde_json::Value = serde_json::from_slice(&fs::read(&model).unwrap()).unwrap();
    let mut assignments = Vec::new();
    let mut topic_doc = Vec::new();
    for d in 0..60usize {
        for g in 0..5usize {
            assignments.push(if g == 4 && d % 2 == 0 { (d + 1) % 3 } else { d % 3 });
        }
        let mut p = vec![0.1; 3];
        p[d % 3] = 0.8;
        topic_doc.push(p);
    }
    m["assignments"] = serde_json::json!(assignments);
    m["topic_doc"] = serde_json::json!(topic_doc);
    let planted = f.root.join("planted.json");
    fs::write(&planted, serde_json::to_vec(&m).unwrap()).unwrap();

    let metrics_path = f.root.join("metrics.json");
    ok(&["eval", "--model", s(&planted), "--out", s(&metrics_path)]);
    let m: serde_json::Value = serde_json::from_slice(&fs::read(&metrics_path).unwrap()).unwrap();
    assert_eq!(m["docs_scored"], 60);
    assert_eq!(m["nmi"], 1.0);
    let per_topic = m["per_topic_npmi"].as_array().unwrap();
    assert_eq!(per_topic.len(), 3);
    assert!(per_topic.iter().all(|v| v.as_f64().is_some_and(|x| (-1.0..=1.0).contains(&x))));
    assert_eq!(m["run_config"]["model"], s(&planted));
    let report: serde_json::Value = serde_json::from_slice(&ok(&["topics", "--model", s(&planted)]).stdout).unwrap();
    for t in 0..3 {
        let lead = report[t]["words"][0]["w"].as_str().unwrap();
        assert!(THEMES[t].iter().any(|w| w.to_lowercase().starts_with(lead)), "topic {t} led by {lead}");
    }
}

fn write_script(path: &Path, body: &str) -> String {
    fs::write(path, body).unwrap();
    format!("python3 {}", s(path))
}

#[test]
fn pipeline_with_provider_and_finetune() {
    let f = fixture();
    // Theme detected from the first word; fine-tuned runs mark themselves through BOS_MODEL_DIR.
    let provider = write_script(
        &f.root.join("provider.py"),
        r#"import json, os, struct, sys
themes = ["rockets orbit launch satellites", "bread flour ovens yeast", "rivers salmon currents delta"]
rows = [json.loads(l) for l in sys.stdin if l.strip()]
tuned = os.environ.get("BOS_MODEL_DIR")
if tuned:
    assert open(os.path.join(tuned, "weights.txt")).read() == "ok"
with open(os.environ["BOS_EMB_OUT"], "wb") as f:
    f.write(b"BOSEMB1\0" + struct.pack("<II", len(rows), 4))
    for r in rows:
        first = r["text"].split()[0].lower()
        v = [0.1, 0.1, 0.1, 0.3 if tuned else 0.1]
        for i, t in enumerate(themes):
            if first in t.split():
                v[i] = 1.0
        f.write(struct.pack("<ffff", *v))
"#,
    );
    let trainer = write_script(
        &f.root.join("trainer.py"),
        r#"import json, os, sys
triplets, config, out = sys.argv[1:4]
assert sum(1 for _ in open(triplets)) > 0
assert json.load(open(config)) == {"margin": 0.16, "epochs": 4}
open(os.path.join(out, "weights.txt"), "w").write("ok")
"#,
    );
    let work = f.root.join("run");
    // With seed 0 no topic lists any word on this fixture and the final eval stops.
    let out = bostopic(&[
        "pipeline", "--corpus", s(&f.corpus), "--provider", &provider, "--finetune", &trainer, "--workdir", s(&work),
        "--k", "3", "--n-s", "1", "--seed", "1",
    ]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    for name in ["groups.jsonl", "base.emb", "base.emb.idx.jsonl", "triplets.jsonl", "tuned.emb", "model.json", "topics.json", "topics.txt"] {
        assert!(work.join(name).exists(), "{name} missing; stderr: {stderr}");
    }
    assert!(work.join("encoder").join("weights.txt").exists());
    assert!(out.status.success(), "{stderr}");
    let metrics: serde_json::Value = serde_json::from_slice(&fs::read(work.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["docs_scored"], 60);
    let idx = fs::read_to_string(work.join("tuned.emb.idx.jsonl")).unwrap();
    assert_eq!(idx.lines().count(), f.groups);

    // A failing provider surfaces its message.
    let broken = write_script(&f.root.join("broken.py"), "import sys\nsys.stderr.write('no encoder here')\nsys.exit(3)\n");
    let out = bostopic(&["pipeline", "--corpus", s(&f.corpus), "--provider", &broken, "--workdir", s(&work), "--k", "3"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no encoder here"));
}

#[test]
fn pipeline_with_precomputed_embeddings() {
    let f = fixture();
    let work = f.root.join("run");
    let out = bostopic(&["--format", "text", "pipeline", "--corpus", s(&f.corpus), "--emb", s(&f.emb), "--workdir", s(&work), "--k", "3", "--n-s", "1"]);
    assert!(work.join("model.json").exists(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!work.join("base.emb").exists());
    let model: serde_json::Value = serde_json::from_slice(&fs::read(work.join("model.json")).unwrap()).unwrap();
    assert_eq!(model["run_config"]["command"], "pipeline");
    assert_eq!(model["run_config"]["embeddings"], s(&f.emb));
}
