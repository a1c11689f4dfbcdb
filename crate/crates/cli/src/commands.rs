use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use doclm::corpus::{
    ingest_coco, publaynet_category_map, read_jsonl, records_to_documents, synth_generate, write_jsonl, CocoFile,
    CorpusRecord, IngestOptions, ReadMode, SidecarEntry,
};
use doclm::metrics::{evaluate, pair_by_id, placement_scores, EvalPair, EvalTask, MetricsReport};
use doclm::render::{render_svg, RenderOptions};
use doclm::sample::{complete_document, default_targets, place_text_boxes, PlacementMode, SampleConfig, TaskOutput};
use doclm::train::{load_checkpoint, save_checkpoint, Checkpoint, MetricsLog, TrainError, Trainer};
use doclm::codec::TokenKind;
use doclm::{Codec, Document};
use serde_json::json;

use crate::config::RunConfig;
use crate::{CliError, CliResult, EvalTaskArg, GenArgs, Mode, WithCode, EXIT_CONFIG, EXIT_EVAL, EXIT_GENERATE, EXIT_INGEST, EXIT_TRAIN};

fn config_err(e: anyhow::Error) -> CliError {
    CliError {
        code: EXIT_CONFIG,
        error: e,
    }
}

/// `<path>.meta.json` beside an output file.
fn meta_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn write_json(path: &Path, v: &serde_json::Value) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn load_documents(path: &Path, codec: &Codec) -> CliResult<Vec<Document>> {
    let read = read_jsonl(path, ReadMode::Lenient).code(EXIT_CONFIG)?;
    for d in &read.diagnostics {
        log::warn!("{}:{}: {}", path.display(), d.line, d.message);
    }
    records_to_documents(&read.records, codec.schema()).code(EXIT_CONFIG)
}

fn write_documents(path: &Path, docs: &[Document], codec: &Codec) -> CliResult<()> {
    let records: Vec<CorpusRecord> = docs
        .iter()
        .map(|d| CorpusRecord::from_document(d, codec.schema()))
        .collect::<Result<_, _>>()
        .code(EXIT_GENERATE)?;
    write_jsonl(path, &records).code(EXIT_CONFIG)
}

pub fn synth(config: Option<&Path>, out: &Path, seed: Option<u64>, n: Option<usize>) -> CliResult<()> {
    let mut cfg = RunConfig::load(config).map_err(config_err)?;
    if let Some(s) = seed {
        cfg.corpus.seed = s;
    }
    if let Some(n) = n {
        cfg.corpus.n_docs = n;
    }
    let records = synth_generate(&cfg.corpus).code(EXIT_CONFIG)?;
    let docs = records_to_documents(&records, &cfg.schema).code(EXIT_CONFIG)?;
    write_jsonl(out, &records).code(EXIT_CONFIG)?;
    write_json(&meta_path(out), &json!({"command": "synth", "run_config": cfg.to_json()})).code(EXIT_CONFIG)?;
    let mut hist = vec![0usize; cfg.schema.num_categories()];
    for d in &docs {
        for e in &d.elements {
            hist[e.category] += 1;
        }
    }
    let total: usize = hist.iter().sum();
    println!("documents: {}", docs.len());
    println!(
        "mean elements per document: {:.3}",
        if docs.is_empty() { 0.0 } else { total as f64 / docs.len() as f64 }
    );
    for (c, n) in cfg.schema.categories().iter().zip(&hist) {
        println!("  {:<10} {n}", c.name);
    }
    Ok(())
}

pub fn ingest(coco: &Path, sidecar: Option<&Path>, map: Option<&Path>, config: Option<&Path>, out: &Path) -> CliResult<()> {
    let cfg = RunConfig::load(config).map_err(config_err)?;
    let read = |p: &Path| std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()));
    let coco_file: CocoFile = serde_json::from_str(&read(coco).code(EXIT_INGEST)?)
        .with_context(|| format!("parsing COCO file {}", coco.display()))
        .code(EXIT_INGEST)?;
    let sidecar_map = match sidecar {
        None => None,
        Some(p) => Some(
            serde_json::from_str::<std::collections::HashMap<String, SidecarEntry>>(&read(p).code(EXIT_INGEST)?)
                .with_context(|| format!("parsing sidecar {}", p.display()))
                .code(EXIT_INGEST)?,
        ),
    };
    let category_map = match map {
        None => publaynet_category_map(),
        Some(p) => {
            let raw: BTreeMap<String, String> = serde_json::from_str(&read(p).code(EXIT_INGEST)?)
                .with_context(|| format!("parsing category map {}", p.display()))
                .code(EXIT_INGEST)?;
            let mut m = BTreeMap::new();
            for (k, v) in raw {
                let id: u64 = k
                    .parse()
                    .map_err(|_| anyhow!("category map key {k:?} is not an integer id"))
                    .code(EXIT_INGEST)?;
                m.insert(id, v);
            }
            m
        }
    };
    let result = ingest_coco(
        &coco_file,
        &IngestOptions {
            schema: &cfg.schema,
            category_map,
            sidecar: sidecar_map,
        },
    )
    .code(EXIT_INGEST)?;
    for d in &result.diagnostics {
        log::warn!("{d}");
    }
    records_to_documents(&result.records, &cfg.schema).code(EXIT_INGEST)?;
    write_jsonl(out, &result.records).code(EXIT_INGEST)?;
    write_json(
        &meta_path(out),
        &json!({
            "command": "ingest",
            "coco": coco,
            "sidecar": sidecar,
            "clamped": result.clamped,
            "diagnostics": result.diagnostics,
            "run_config": cfg.to_json(),
        }),
    )
    .code(EXIT_INGEST)?;
    println!(
        "records: {}  clamped boxes: {}  diagnostics: {}",
        result.records.len(),
        result.clamped,
        result.diagnostics.len()
    );
    Ok(())
}

pub fn vocab(config: Option<&Path>, out: &Path) -> CliResult<()> {
    let cfg = RunConfig::load(config).map_err(config_err)?;
    let codec = cfg.codec().map_err(config_err)?;
    let v = codec.vocab();
    let kinds = [
        TokenKind::Pad,
        TokenKind::Sos,
        TokenKind::Eos,
        TokenKind::Null,
        TokenKind::Eot,
        TokenKind::Cat,
        TokenKind::Coord,
        TokenKind::Style,
        TokenKind::TextByte,
    ];
    let ranges: Vec<serde_json::Value> = kinds
        .iter()
        .map(|&k| {
            let (start, len) = v.range_of(k);
            json!({"kind": k.to_string(), "start": start, "len": len})
        })
        .collect();
    let doc = json!({
        "vocab_size": v.size(),
        "ranges": ranges,
        "codec": codec.spec(),
        "run_config": cfg.to_json(),
    });
    write_json(out, &doc).code(EXIT_CONFIG)?;
    println!("vocabulary size {}", v.size());
    Ok(())
}

pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub corpus: PathBuf,
    pub out_checkpoint: PathBuf,
    pub resume: Option<PathBuf>,
    pub steps: Option<u64>,
    pub metrics_log: Option<PathBuf>,
    pub strict: bool,
}

pub fn train(a: TrainArgs) -> CliResult<()> {
    let mut cfg = RunConfig::load(a.config.as_deref()).map_err(config_err)?;
    let (mut trainer, codec) = match &a.resume {
        Some(p) => {
            let ckpt = load_checkpoint(p)
                .with_context(|| format!("loading {}", p.display()))
                .code(EXIT_CONFIG)?;
            let codec = Codec::from_spec(&ckpt.codec).code(EXIT_CONFIG)?;
            if let Some(rc) = &ckpt.run_config {
                if let Ok(saved) = serde_json::from_value::<RunConfig>(rc.clone()) {
                    cfg = RunConfig {
                        train: cfg.train.clone(),
                        ..saved
                    };
                }
            }
            // optimization settings must match the interrupted run
            let total = cfg.train.total_steps;
            cfg.train = ckpt.train_config.clone();
            cfg.train.total_steps = total;
            log::info!("resuming from step {}", ckpt.step);
            (Trainer::from_checkpoint(ckpt).code(EXIT_CONFIG)?, codec)
        }
        None => {
            let codec = cfg.codec().map_err(config_err)?;
            let model = cfg.model.to_config(codec.vocab().size());
            (Trainer::new(&model, cfg.train.clone()).code(EXIT_CONFIG)?, codec)
        }
    };
    if let Some(s) = a.steps {
        cfg.train.total_steps = s;
    }
    trainer.config.total_steps = cfg.train.total_steps;

    let mode = if a.strict { ReadMode::Strict } else { ReadMode::Lenient };
    let read = read_jsonl(&a.corpus, mode).code(EXIT_CONFIG)?;
    for d in &read.diagnostics {
        log::warn!("{}:{}: {}", a.corpus.display(), d.line, d.message);
    }
    let docs = records_to_documents(&read.records, codec.schema()).code(EXIT_CONFIG)?;
    let mut seqs = Vec::with_capacity(docs.len());
    for d in &docs {
        let s = codec
            .encode(d)
            .with_context(|| format!("encoding document {}", d.id))
            .code(EXIT_CONFIG)?;
        seqs.push(s.0);
    }
    if seqs.is_empty() {
        return Err(config_err(anyhow!("corpus {} has no documents", a.corpus.display())));
    }
    let ctx = trainer.params.config.context_len;
    let long = seqs.iter().filter(|s| s.len() - 1 > ctx).count();
    if long > 0 {
        log::warn!("{long} of {} sequences exceed the context of {ctx} tokens and will be skipped", seqs.len());
    }

    let log_path = a.metrics_log.clone().unwrap_or_else(|| {
        let mut s = a.out_checkpoint.as_os_str().to_owned();
        s.push(".metrics.jsonl");
        PathBuf::from(s)
    });
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(a.resume.is_some())
        .truncate(a.resume.is_none())
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))
        .code(EXIT_CONFIG)?;
    let mut log = MetricsLog::new(BufWriter::new(file));
    let mut log_err = None;
    let target = cfg.train.total_steps;
    let result = trainer.fit(&seqs, target, |r| {
        if r.step % 50 == 0 || r.step == target {
            log::info!("step {} loss {:.4} lr {:.2e}", r.step, r.loss, r.lr);
        }
        match log.log(r) {
            Ok(()) => true,
            Err(e) => {
                log_err = Some(e);
                false
            }
        }
    });
    if let Some(e) = log_err {
        return Err(CliError {
            code: EXIT_TRAIN,
            error: anyhow!("writing metrics log: {e}"),
        });
    }
    let reports = match result {
        Ok(r) => r,
        Err(e @ TrainError::NonFiniteGradient { .. }) => {
            return Err(CliError {
                code: EXIT_TRAIN,
                error: anyhow!("training aborted at step {}: {e}", trainer.step() + 1),
            })
        }
        Err(e) => return Err(CliError { code: EXIT_TRAIN, error: e.into() }),
    };
    let ckpt: Checkpoint = trainer.checkpoint(codec.spec(), Some(cfg.to_json()));
    save_checkpoint(&a.out_checkpoint, &ckpt)
        .with_context(|| format!("writing {}", a.out_checkpoint.display()))
        .code(EXIT_TRAIN)?;
    match reports.last() {
        Some(r) => println!("step {} loss {:.6}", r.step, r.loss),
        None => println!("step {} (nothing to do)", trainer.step()),
    }
    if trainer.skipped_total() > 0 {
        println!("skipped over-length sequences: {}", trainer.skipped_total());
    }
    Ok(())
}

struct Loaded {
    ckpt: Checkpoint,
    codec: Codec,
    docs: Vec<Document>,
    sample: SampleConfig,
}

fn load_for_generation(g: &GenArgs) -> CliResult<Loaded> {
    let ckpt = load_checkpoint(&g.checkpoint)
        .with_context(|| format!("loading {}", g.checkpoint.display()))
        .code(EXIT_CONFIG)?;
    let codec = Codec::from_spec(&ckpt.codec).code(EXIT_CONFIG)?;
    let docs = load_documents(&g.doc, &codec)?;
    let mut sample = SampleConfig::greedy();
    if let Some(t) = g.temperature {
        sample.temperature = t;
    }
    if let Some(k) = g.top_k {
        sample.top_k = k;
    }
    if let Some(p) = g.top_p {
        sample.top_p = p;
    }
    if let Some(s) = g.seed {
        sample.seed = s;
    }
    if let Some(m) = g.max_new_tokens {
        sample.max_new_tokens = m;
    }
    sample.validate().code(EXIT_CONFIG)?;
    Ok(Loaded {
        ckpt,
        codec,
        docs,
        sample,
    })
}

fn generation_meta(g: &GenArgs, l: &Loaded, extra: serde_json::Value) -> serde_json::Value {
    json!({
        "checkpoint": g.checkpoint,
        "input": g.doc,
        "sample": l.sample,
        "task": extra,
        "run_config": l.ckpt.run_config,
    })
}

pub fn complete(g: &GenArgs, k: &str) -> CliResult<()> {
    let l = load_for_generation(g)?;
    let fixed_k = if k == "half" {
        None
    } else {
        Some(k.parse::<usize>().map_err(|_| anyhow!("--k must be an integer or `half`, got {k:?}")).code(EXIT_CONFIG)?)
    };
    let mut outputs = Vec::with_capacity(l.docs.len());
    let mut truncated = Vec::new();
    for d in &l.docs {
        let k = fixed_k.unwrap_or(d.elements.len() / 2);
        let out: TaskOutput = complete_document(&l.ckpt.params, &l.codec, d, k, &l.sample)
            .with_context(|| format!("document {}", d.id))
            .code(EXIT_GENERATE)?;
        if out.truncated {
            truncated.push(d.id.clone());
        }
        outputs.push(out.document);
    }
    write_documents(&g.out, &outputs, &l.codec)?;
    let meta = generation_meta(g, &l, json!({"completion": {"k": k}, "truncated": truncated}));
    write_json(&meta_path(&g.out), &meta).code(EXIT_CONFIG)?;
    println!("completed {} documents ({} truncated)", outputs.len(), truncated.len());
    Ok(())
}

fn placement_mode(m: Mode) -> PlacementMode {
    match m {
        Mode::Single => PlacementMode::Single,
        Mode::Multiple => PlacementMode::Multiple,
    }
}

pub fn place(g: &GenArgs, targets: Option<Vec<usize>>, mode: Mode) -> CliResult<()> {
    let l = load_for_generation(g)?;
    let mode = placement_mode(mode);
    let mut outputs = Vec::with_capacity(l.docs.len());
    let mut scores = Vec::new();
    let (mut iou_sum, mut bde_sum, mut n) = (0.0, 0.0, 0usize);
    for d in &l.docs {
        let t = targets.clone().unwrap_or_else(|| default_targets(d, &l.codec, mode));
        let out = place_text_boxes(&l.ckpt.params, &l.codec, d, &t, mode, &l.sample)
            .with_context(|| format!("document {}", d.id))
            .code(EXIT_GENERATE)?;
        let s = placement_scores(&out.document, &out.reference, &out.targets).code(EXIT_GENERATE)?;
        for (pos, sc) in out.targets.iter().zip(&s) {
            println!("{} position {pos}: IoU {:.4} BDE {:.4}", d.id, sc.iou, sc.bde);
            iou_sum += sc.iou;
            bde_sum += sc.bde;
            n += 1;
            scores.push(json!({"id": d.id, "position": pos, "iou": sc.iou, "bde": sc.bde}));
        }
        outputs.push(out.document);
    }
    write_documents(&g.out, &outputs, &l.codec)?;
    let mode_name = match mode {
        PlacementMode::Single => "single",
        PlacementMode::Multiple => "multiple",
    };
    let summary = json!({
        "mode": mode_name,
        "targets": scores,
        "mean_iou": if n > 0 { Some(iou_sum / n as f64) } else { None },
        "mean_bde": if n > 0 { Some(bde_sum / n as f64) } else { None },
    });
    let meta = generation_meta(g, &l, json!({"placement": summary, "explicit_targets": targets}));
    write_json(&meta_path(&g.out), &meta).code(EXIT_CONFIG)?;
    if n > 0 {
        println!("mean IoU {:.4} mean BDE {:.4} over {n} targets", iou_sum / n as f64, bde_sum / n as f64);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn eval(
    generated: &Path,
    reference: &Path,
    task: EvalTaskArg,
    mode: Mode,
    targets: Option<Vec<usize>>,
    config: Option<&Path>,
    out: &Path,
) -> CliResult<()> {
    let cfg = RunConfig::load(config).map_err(config_err)?;
    let codec = cfg.codec().map_err(config_err)?;
    let gen_docs = load_documents(generated, &codec)?;
    let ref_docs = load_documents(reference, &codec)?;
    let pairs = pair_by_id(&gen_docs, &ref_docs).code(EXIT_EVAL)?;
    let task = match (task, mode) {
        (EvalTaskArg::Completion, _) => EvalTask::Completion,
        (EvalTaskArg::Placement, Mode::Single) => EvalTask::Single,
        (EvalTaskArg::Placement, Mode::Multiple) => EvalTask::Multiple,
    };
    let eval_pairs: Vec<EvalPair> = pairs
        .into_iter()
        .map(|(g, r)| {
            let t = match task {
                EvalTask::Completion => Vec::new(),
                _ => targets
                    .clone()
                    .unwrap_or_else(|| default_targets(&r, &codec, placement_mode(mode))),
            };
            EvalPair {
                generated: g,
                reference: r,
                targets: t,
            }
        })
        .collect();
    let report = evaluate(&eval_pairs, codec.schema(), task).code(EXIT_EVAL)?;
    let provenance = json!({
        "generated": generated,
        "reference": reference,
        "config": cfg.to_json(),
    });
    write_json(out, &report.to_json(Some(&provenance))).code(EXIT_EVAL)?;
    print!("{}", MetricsReport::table(&[("generated", &report)]));
    Ok(())
}

pub fn render(doc: &Path, id: Option<&str>, config: Option<&Path>, out: &Path, show_text: bool) -> CliResult<()> {
    let cfg = RunConfig::load(config).map_err(config_err)?;
    let read = read_jsonl(doc, ReadMode::Strict).code(EXIT_CONFIG)?;
    let rec = match id {
        Some(id) => read.records.iter().find(|r| r.id == id),
        None => read.records.first(),
    };
    let Some(rec) = rec else {
        return Err(config_err(anyhow!(
            "{}: no record{}",
            doc.display(),
            id.map_or(String::new(), |i| format!(" with id {i:?}"))
        )));
    };
    let d = rec.to_document(&cfg.schema).code(EXIT_CONFIG)?;
    let metadata = json!({"source": doc, "id": rec.id, "run_config": cfg.to_json()});
    let svg = render_svg(
        &d,
        &cfg.schema,
        &RenderOptions {
            show_text,
            metadata: Some(metadata.to_string()),
        },
    );
    std::fs::write(out, svg)
        .with_context(|| format!("writing {}", out.display()))
        .code(EXIT_CONFIG)?;
    Ok(())
}
