use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str =
    "[model]\nd_model = 16\nd_embed = 8\nn_layers = 1\nn_heads = 2\nd_ffn_hidden = 32\n[train]\nepochs = 2\n";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sentifeed"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

/// Synthetic corpus under `data/` and a validated archive under `out/`.
fn ingested(posts: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--posts", &posts.to_string(), "--out-dir", "data"]);
    ok(dir.path(), &["ingest", "--csv", "data/corpus.csv", "--out-dir", "out"]);
    dir
}

fn trained_tiny(extra: &[&str]) -> tempfile::TempDir {
    let dir = ingested(20);
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    ok(dir.path(), &["annotate", "--corpus", "out/corpus.json", "--out-dir", "out"]);
    let mut args = vec!["--config", "tiny.toml", "train", "--corpus", "out/annotated.json", "--out-dir", "out"];
    args.extend_from_slice(extra);
    ok(dir.path(), &args);
    dir
}

#[test]
fn ingest_valid_fixture() {
    let dir = ingested(12);
    let data_lines = std::fs::read_to_string(dir.path().join("data/corpus.csv")).unwrap().lines().count() - 1;
    let report = &json(dir.path().join("out/corpus.json"))["ingest"];
    assert_eq!(report["rows_read"], data_lines);
    assert_eq!(report["rows_ingested"], data_lines);
    assert_eq!(report["posts"], 12);
    let record = json(dir.path().join("out/record_ingest.json"));
    assert_eq!(record["input_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn missing_sentiment_column_is_a_validation_error() {
    let dir = ingested(5);
    let csv = dir.path().join("data/corpus.csv");
    let text = std::fs::read_to_string(&csv).unwrap();
    let (header, rest) = text.split_once('\n').unwrap();
    std::fs::write(&csv, format!("{}\n{rest}", header.replace("sentiment_label", "label"))).unwrap();
    let out = run(dir.path(), &["ingest", "--csv", "data/corpus.csv", "--out-dir", "bad"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sentiment_label"));
    assert!(!dir.path().join("bad/corpus.json").exists());
}

#[test]
fn one_bad_image_gives_one_blank_slot_warning() {
    let dir = ingested(10);
    let archive = json(dir.path().join("out/corpus.json"));
    let first = archive["corpus"]["posts"]
        .as_array()
        .unwrap()
        .iter()
        .find_map(|p| p["image_refs"].as_array().unwrap().first().cloned())
        .expect("some post has an image");
    std::fs::remove_file(dir.path().join("data").join(first.as_str().unwrap())).unwrap();
    let out = ok(dir.path(), &["ingest", "--csv", "data/corpus.csv", "--out-dir", "out2"]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(stderr.lines().filter(|l| l.contains("blank slot")).count(), 1, "{stderr}");
    assert_eq!(json(dir.path().join("out2/corpus.json"))["ingest"]["warnings"].as_array().unwrap().len(), 1);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[model]\nlayers = 3\n").unwrap();
    let out = run(dir.path(), &["--config", "bad.toml", "config"]);
    assert_eq!(out.status.code(), Some(2));
    let out = ok(dir.path(), &["--k-txt", "9", "config"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("k_txt = 9"));
}

fn beam_lines(out: &Output) -> Vec<String> {
    String::from_utf8_lossy(&out.stdout).lines().filter(|l| !l.starts_with("post ")).map(str::to_string).collect()
}

#[test]
fn zero_control_makes_sentiment_a_no_op() {
    let dir = trained_tiny(&["--control-x", "0"]);
    let post =
        json(dir.path().join("out/annotated.json"))["corpus"]["posts"][0]["post_id"].as_str().unwrap().to_string();
    let gen = |s: &str| {
        let args = [
            "generate",
            "--model",
            "out/model.json",
            "--corpus",
            "out/annotated.json",
            "--post-id",
            &post,
            "--sentiment",
            s,
        ];
        ok(dir.path(), &[&args[..], &["--out-dir", &format!("gen_{s}")]].concat())
    };
    let (free, one) = (gen("none"), gen("1"));
    assert!(!beam_lines(&free).is_empty());
    assert_eq!(beam_lines(&free), beam_lines(&one));
}

#[test]
fn attribute_emits_one_heatmap_per_modality_and_sentiment() {
    let dir = trained_tiny(&[]);
    ok(
        dir.path(),
        &[
            "attribute",
            "--model",
            "out/model.json",
            "--corpus",
            "out/annotated.json",
            "--k-txt",
            "4",
            "--out-dir",
            "attr",
        ],
    );
    let mut pngs: Vec<String> = std::fs::read_dir(dir.path().join("attr/attributions"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png"))
        .collect();
    pngs.sort();
    let tails: Vec<&str> = pngs.iter().map(|n| &n[n.find('_').unwrap() + 1..]).collect();
    assert_eq!(tails, ["image_0.png", "image_1.png", "text_0.png", "text_1.png"]);
}

#[test]
fn desk_pipeline_end_to_end_is_reproducible() {
    let dir = ingested(30);
    let p = dir.path();
    ok(p, &["annotate", "--corpus", "out/corpus.json", "--out-dir", "out"]);
    ok(p, &["--preset", "desk", "--epochs", "3", "train", "--corpus", "out/annotated.json", "--out-dir", "out"]);
    let report = json(p.join("out/train_report.json"));
    assert_eq!(report["epoch_losses"].as_array().unwrap().len(), 3);
    for run_dir in ["eval_a", "eval_b"] {
        ok(p, &["evaluate", "--model", "out/model.json", "--corpus", "out/annotated.json", "--out-dir", run_dir]);
    }
    let a = std::fs::read_to_string(p.join("eval_a/metrics.json")).unwrap();
    assert_eq!(a, std::fs::read_to_string(p.join("eval_b/metrics.json")).unwrap());
    let metrics: Value = serde_json::from_str(&a).unwrap();
    for key in ["bleu", "rouge_l", "cider", "mrr", "usent_acc", "csent_acc", "control_acc"] {
        assert!(metrics[key].is_number(), "{key}");
    }
    let rec_a = json(p.join("eval_a/record_evaluate.json"));
    let rec_b = json(p.join("eval_b/record_evaluate.json"));
    assert_eq!(rec_a["input_hash"], rec_b["input_hash"]);
    assert_eq!(rec_a["metrics"], metrics);
    assert!(std::fs::read_to_string(p.join("eval_a/metrics.txt")).unwrap().contains("MRR"));
}
