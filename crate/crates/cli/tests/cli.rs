use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;

fn doclm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_doclm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn doclm")
}

fn ok(args: &[&str]) -> Output {
    let out = doclm(args);
    assert!(
        out.status.success(),
        "doclm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &str = r#"{
  "model": {"context_len": 512, "d_model": 32, "n_layers": 1, "n_heads": 2},
  "train": {"lr": 0.003, "warmup_steps": 10, "total_steps": 50, "batch_size": 4, "seed": 1},
  "corpus": {"n_docs": 24, "paragraphs": [1, 2], "words": [1, 3]}
}"#;

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Fixture {
            dir: tempfile::tempdir().unwrap(),
        };
        std::fs::write(f.path("config.json"), SMALL).unwrap();
        ok(&["synth", "--config", p(&f.path("config.json")), "--out", p(&f.path("corpus.jsonl"))]);
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn losses(log: &Path) -> Vec<(u64, f64)> {
    std::fs::read_to_string(log)
        .unwrap()
        .lines()
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            (v["step"].as_u64().unwrap(), v["loss"].as_f64().unwrap())
        })
        .collect()
}

#[test]
fn synth_writes_records_and_meta() {
    let f = Fixture::new();
    let text = std::fs::read_to_string(f.path("corpus.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 24);
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(f.path("corpus.jsonl.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["run_config"]["corpus"]["n_docs"], 24);
}

#[test]
fn vocab_reports_publaynet_size() {
    let f = Fixture::new();
    ok(&["vocab", "--out", p(&f.path("vocab.json"))]);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(f.path("vocab.json")).unwrap()).unwrap();
    assert_eq!(v["vocab_size"], 522);
    let ranges = v["ranges"].as_array().unwrap();
    let total: u64 = ranges.iter().map(|r| r["len"].as_u64().unwrap()).sum();
    assert_eq!(total, 522);
}

#[test]
fn smoke_train_then_generate_and_evaluate() {
    let f = Fixture::new();
    let ckpt = f.path("model.ckpt");
    let t0 = Instant::now();
    ok(&[
        "train",
        "--config",
        p(&f.path("config.json")),
        "--corpus",
        p(&f.path("corpus.jsonl")),
        "--out-checkpoint",
        p(&ckpt),
    ]);
    assert!(t0.elapsed().as_secs() < 60, "50 steps took {:?}", t0.elapsed());
    let log = losses(&f.path("model.ckpt.metrics.jsonl"));
    assert_eq!(log.len(), 50);
    assert!(log.iter().all(|(_, l)| l.is_finite()));
    let head: f64 = log[..5].iter().map(|x| x.1).sum::<f64>() / 5.0;
    let tail: f64 = log[45..].iter().map(|x| x.1).sum::<f64>() / 5.0;
    assert!(tail < head, "loss did not fall: {head} -> {tail}");

    let gen = f.path("completed.jsonl");
    ok(&[
        "complete",
        "--checkpoint",
        p(&ckpt),
        "--doc",
        p(&f.path("corpus.jsonl")),
        "--out",
        p(&gen),
    ]);
    assert_eq!(std::fs::read_to_string(&gen).unwrap().lines().count(), 24);
    let report = f.path("report.json");
    ok(&[
        "eval",
        "--generated",
        p(&gen),
        "--reference",
        p(&f.path("corpus.jsonl")),
        "--task",
        "completion",
        "--out",
        p(&report),
    ]);
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["n_pairs"], 24);
    for key in ["mIoU", "FID*", "Align", "Over"] {
        assert!(r["columns"]["completion"][key].is_number(), "missing {key}");
    }

    let placed = f.path("placed.jsonl");
    ok(&[
        "place",
        "--checkpoint",
        p(&ckpt),
        "--doc",
        p(&f.path("corpus.jsonl")),
        "--out",
        p(&placed),
        "--mode",
        "multiple",
    ]);
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(f.path("placed.jsonl.meta.json")).unwrap()).unwrap();
    let targets = meta["task"]["placement"]["targets"].as_array().unwrap();
    assert!(!targets.is_empty());
    for t in targets {
        let iou = t["iou"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&iou));
    }

    let a = f.path("a.jsonl");
    let b = f.path("b.jsonl");
    for out in [&a, &b] {
        ok(&[
            "complete",
            "--checkpoint",
            p(&ckpt),
            "--doc",
            p(&f.path("corpus.jsonl")),
            "--out",
            p(out),
            "--temperature",
            "1.0",
            "--seed",
            "7",
        ]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn resume_matches_continuous_run() {
    let f = Fixture::new();
    let cfg = f.path("config.json");
    let corpus = f.path("corpus.jsonl");
    ok(&[
        "train", "--config", p(&cfg), "--corpus", p(&corpus), "--out-checkpoint", p(&f.path("full.ckpt")), "--steps", "200",
    ]);
    ok(&[
        "train", "--config", p(&cfg), "--corpus", p(&corpus), "--out-checkpoint", p(&f.path("half.ckpt")), "--steps", "100",
    ]);
    ok(&[
        "train",
        "--config",
        p(&cfg),
        "--corpus",
        p(&corpus),
        "--resume",
        p(&f.path("half.ckpt")),
        "--out-checkpoint",
        p(&f.path("resumed.ckpt")),
        "--metrics-log",
        p(&f.path("half.ckpt.metrics.jsonl")),
        "--steps",
        "200",
    ]);
    let full = losses(&f.path("full.ckpt.metrics.jsonl"));
    let resumed = losses(&f.path("half.ckpt.metrics.jsonl"));
    assert_eq!(full.len(), 200);
    assert_eq!(resumed.len(), 200);
    for ((s1, l1), (s2, l2)) in full.iter().zip(&resumed) {
        assert_eq!(s1, s2);
        assert!((l1 - l2).abs() <= 1e-5, "step {s1}: {l1} vs {l2}");
    }
}

fn rect_coords(svg: &str) -> Vec<[f64; 4]> {
    svg.lines()
        .filter(|l| l.starts_with("<rect class=\"element\""))
        .map(|l| {
            let attr = |name: &str| -> f64 {
                let key = format!(" {name}=\"");
                let start = l.find(&key).unwrap() + key.len();
                let end = start + l[start..].find('"').unwrap();
                l[start..end].parse().unwrap()
            };
            [attr("x"), attr("y"), attr("width"), attr("height")]
        })
        .collect()
}

#[test]
fn render_is_byte_identical_and_parses_back() {
    let f = Fixture::new();
    let corpus = f.path("corpus.jsonl");
    let (a, b) = (f.path("a.svg"), f.path("b.svg"));
    ok(&["render", "--doc", p(&corpus), "--out", p(&a), "--show-text"]);
    ok(&["render", "--doc", p(&corpus), "--out", p(&b), "--show-text"]);
    let svg = std::fs::read_to_string(&a).unwrap();
    assert_eq!(svg.as_bytes(), std::fs::read(&b).unwrap().as_slice());

    let first: Value = serde_json::from_str(std::fs::read_to_string(&corpus).unwrap().lines().next().unwrap()).unwrap();
    let elements = first["elements"].as_array().unwrap();
    let rects = rect_coords(&svg);
    assert_eq!(rects.len(), elements.len());
    for (r, e) in rects.iter().zip(elements) {
        for (got, want) in r.iter().zip(e["bbox"].as_array().unwrap()) {
            assert!((got - want.as_f64().unwrap()).abs() <= 5e-4);
        }
    }
}

#[test]
fn empty_document_renders_canvas_only() {
    let f = Fixture::new();
    let doc = f.path("empty.jsonl");
    std::fs::write(&doc, "{\"id\":\"blank\",\"canvas\":{\"w\":100,\"h\":50},\"elements\":[]}\n").unwrap();
    let svg_path = f.path("empty.svg");
    ok(&["render", "--doc", p(&doc), "--out", p(&svg_path)]);
    let svg = std::fs::read_to_string(&svg_path).unwrap();
    assert!(svg.contains("viewBox=\"0 0 100.000 50.000\""));
    assert!(svg.contains("<rect class=\"canvas\""));
    assert!(rect_coords(&svg).is_empty());
    assert!(svg.trim_end().ends_with("</svg>"));
}

#[test]
fn exit_codes_follow_failure_stage() {
    let f = Fixture::new();
    let corpus = f.path("corpus.jsonl");

    std::fs::write(f.path("bad.json"), "{ not json").unwrap();
    let out = doclm(&["vocab", "--config", p(&f.path("bad.json")), "--out", p(&f.path("v.json"))]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(f.path("coco.json"), "[]").unwrap();
    let out = doclm(&["ingest", "--coco", p(&f.path("coco.json")), "--out", p(&f.path("i.jsonl"))]);
    assert_eq!(out.status.code(), Some(3));

    let unmapped = r#"{"images":[{"id":1,"width":10,"height":10,"file_name":"a"}],
        "annotations":[{"id":1,"image_id":1,"category_id":99,"bbox":[0,0,5,5]}],
        "categories":[{"id":99,"name":"other"}]}"#;
    std::fs::write(f.path("coco2.json"), unmapped).unwrap();
    let out = doclm(&["ingest", "--coco", p(&f.path("coco2.json")), "--out", p(&f.path("i.jsonl"))]);
    assert_eq!(out.status.code(), Some(3));

    std::fs::write(
        f.path("explode.json"),
        SMALL.replace("\"lr\": 0.003", "\"lr\": 1e30").replace("\"warmup_steps\": 10", "\"warmup_steps\": 0"),
    )
    .unwrap();
    let out = doclm(&[
        "train",
        "--config",
        p(&f.path("explode.json")),
        "--corpus",
        p(&corpus),
        "--out-checkpoint",
        p(&f.path("x.ckpt")),
        "--steps",
        "20",
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));

    ok(&[
        "train", "--config", p(&f.path("config.json")), "--corpus", p(&corpus), "--out-checkpoint", p(&f.path("m.ckpt")), "--steps", "2",
    ]);
    let out = doclm(&[
        "complete",
        "--checkpoint",
        p(&f.path("m.ckpt")),
        "--doc",
        p(&corpus),
        "--out",
        p(&f.path("c.jsonl")),
        "--k",
        "1000",
    ]);
    assert_eq!(out.status.code(), Some(5));

    let text = std::fs::read_to_string(&corpus).unwrap();
    let one: String = text.lines().take(1).collect::<Vec<_>>().join("\n") + "\n";
    std::fs::write(f.path("one.jsonl"), one).unwrap();
    let out = doclm(&[
        "eval",
        "--generated",
        p(&f.path("one.jsonl")),
        "--reference",
        p(&corpus),
        "--task",
        "completion",
        "--out",
        p(&f.path("r.json")),
    ]);
    assert_eq!(out.status.code(), Some(6));

    let out = doclm(&["render", "--doc", p(&corpus), "--id", "no-such-id", "--out", p(&f.path("x.svg"))]);
    assert_eq!(out.status.code(), Some(2));
}
