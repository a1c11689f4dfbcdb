//! Corpus records (JSON lines), COCO ingestion, synthetic pages and splits.

mod coco;
mod synth;

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doc::{validate, BBox, DocSchema, Document, Element};

pub use coco::{ingest_coco, publaynet_category_map, CocoFile, IngestOptions, IngestOutput, SidecarEntry};
pub use synth::{synth_generate, SynthConfig, DEFAULT_WORDS};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("unmapped category ids: {0:?}")]
    UnknownCategories(Vec<u64>),
    #[error("duplicate record ids: {0:?}")]
    DuplicateIds(Vec<String>),
    #[error("record {id}: {message}")]
    InvalidRecord { id: String, message: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Canvas {
    pub w: f64,
    pub h: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordElement {
    pub category: String,
    /// `[x, y, w, h]` in canvas units.
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

/// One JSONL document record with categories and styles by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub canvas: Canvas,
    pub elements: Vec<RecordElement>,
}

impl CorpusRecord {
    /// Resolves names against `schema` and checks document invariants.
    pub fn to_document(&self, schema: &DocSchema) -> Result<Document, CorpusError> {
        let invalid = |message: String| CorpusError::InvalidRecord {
            id: self.id.clone(),
            message,
        };
        let mut elements = Vec::with_capacity(self.elements.len());
        for (i, e) in self.elements.iter().enumerate() {
            let category = schema
                .category_id(&e.category)
                .ok_or_else(|| invalid(format!("element {i}: unknown category {:?}", e.category)))?;
            let style = match &e.style {
                None => None,
                Some(s) => Some(
                    schema
                        .style_id(s)
                        .ok_or_else(|| invalid(format!("element {i}: unknown style {s:?}")))?,
                ),
            };
            let [x, y, w, h] = e.bbox;
            elements.push(Element {
                category,
                bbox: BBox { x, y, w, h },
                style,
                text: e.text.clone(),
            });
        }
        let doc = Document::new(self.id.clone(), self.canvas.w, self.canvas.h).with_elements(elements);
        let report = validate(&doc, schema);
        if !report.is_pass() {
            return Err(invalid(report.to_string()));
        }
        Ok(doc)
    }

    pub fn from_document(doc: &Document, schema: &DocSchema) -> Result<Self, CorpusError> {
        let invalid = |message: String| CorpusError::InvalidRecord {
            id: doc.id.clone(),
            message,
        };
        let mut elements = Vec::with_capacity(doc.elements.len());
        for (i, e) in doc.elements.iter().enumerate() {
            let category = schema
                .category(e.category)
                .ok_or_else(|| invalid(format!("element {i}: unknown category id {}", e.category)))?
                .name
                .clone();
            let style = match e.style {
                None => None,
                Some(s) => Some(
                    schema
                        .styles()
                        .get(s)
                        .ok_or_else(|| invalid(format!("element {i}: unknown style id {s}")))?
                        .clone(),
                ),
            };
            elements.push(RecordElement {
                category,
                bbox: [e.bbox.x, e.bbox.y, e.bbox.w, e.bbox.h],
                style,
                text: e.text.clone(),
            });
        }
        Ok(CorpusRecord {
            id: doc.id.clone(),
            canvas: Canvas {
                w: doc.canvas_w,
                h: doc.canvas_h,
            },
            elements,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ReadMode {
    /// Keep good lines, report bad ones.
    #[default]
    Lenient,
    /// Abort on the first bad line.
    Strict,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LineDiagnostic {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default)]
pub struct JsonlRead {
    pub records: Vec<CorpusRecord>,
    pub diagnostics: Vec<LineDiagnostic>,
}

/// Parses JSONL from any reader; blank lines are ignored.
pub fn parse_jsonl<R: BufRead>(reader: R, mode: ReadMode) -> Result<JsonlRead, CorpusError> {
    let mut out = JsonlRead::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) if e.kind() == io::ErrorKind::InvalidData => {
                let d = LineDiagnostic {
                    line: line_no,
                    message: "invalid UTF-8".into(),
                };
                if mode == ReadMode::Strict {
                    return Err(CorpusError::Malformed {
                        line: d.line,
                        message: d.message,
                    });
                }
                out.diagnostics.push(d);
                continue;
            }
            Err(e) => {
                return Err(CorpusError::Io {
                    path: "<reader>".into(),
                    source: e,
                })
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<CorpusRecord>(&line) {
            Ok(r) => out.records.push(r),
            Err(e) => {
                if mode == ReadMode::Strict {
                    return Err(CorpusError::Malformed {
                        line: line_no,
                        message: e.to_string(),
                    });
                }
                log::warn!("line {line_no}: {e}");
                out.diagnostics.push(LineDiagnostic {
                    line: line_no,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

pub fn read_jsonl(path: impl AsRef<Path>, mode: ReadMode) -> Result<JsonlRead, CorpusError> {
    let path = path.as_ref();
    let f = File::open(path).map_err(io_err(path))?;
    parse_jsonl(BufReader::new(f), mode)
}

/// One compact JSON object per line.
pub fn to_jsonl_string(records: &[CorpusRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("records serialize"));
        s.push('\n');
    }
    s
}

pub fn write_jsonl(path: impl AsRef<Path>, records: &[CorpusRecord]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    w.write_all(to_jsonl_string(records).as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// Converts records to documents, stopping at the first invalid one.
pub fn records_to_documents(records: &[CorpusRecord], schema: &DocSchema) -> Result<Vec<Document>, CorpusError> {
    records.iter().map(|r| r.to_document(schema)).collect()
}

/// Partition sizes by the largest-remainder method: floors first, then the
/// leftover units go to the largest fractional parts (ties to earlier parts).
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> Result<[usize; 3], CorpusError> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(CorpusError::InvalidConfig(format!("split ratios {ratios:?} must be non-negative")));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(CorpusError::InvalidConfig(format!("split ratios {ratios:?} sum to {total}, not 1")));
    }
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes = [0usize; 3];
    for (s, e) in sizes.iter_mut().zip(&exact) {
        *s = e.floor() as usize;
    }
    let mut left = n - sizes.iter().sum::<usize>().min(n);
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    Ok(sizes)
}

/// Train/val/test split after a seeded shuffle.
pub type Split = (Vec<CorpusRecord>, Vec<CorpusRecord>, Vec<CorpusRecord>);

pub fn split(records: &[CorpusRecord], ratios: [f64; 3], seed: u64) -> Result<Split, CorpusError> {
    let mut seen = HashSet::new();
    let mut dups: Vec<String> = records
        .iter()
        .filter(|r| !seen.insert(r.id.as_str()))
        .map(|r| r.id.clone())
        .collect();
    if !dups.is_empty() {
        dups.sort();
        dups.dedup();
        return Err(CorpusError::DuplicateIds(dups));
    }
    let [a, b, _] = split_sizes(records.len(), ratios)?;
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.shuffle(&mut Xoshiro256PlusPlus::seed_from_u64(seed));
    let pick = |r: &[usize]| r.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok((pick(&idx[..a]), pick(&idx[a..a + b]), pick(&idx[a + b..])))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str) -> CorpusRecord {
        CorpusRecord {
            id: id.into(),
            canvas: Canvas { w: 612.0, h: 792.0 },
            elements: vec![
                RecordElement {
                    category: "title".into(),
                    bbox: [36.0, 36.0, 540.0, 40.5],
                    style: None,
                    text: Some("Résumé \"quoted\"".into()),
                },
                RecordElement {
                    category: "figure".into(),
                    bbox: [36.0, 100.0, 200.0, 150.0],
                    style: None,
                    text: None,
                },
            ],
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let recs = vec![rec("a"), rec("b")];
        let s = to_jsonl_string(&recs);
        let back = parse_jsonl(s.as_bytes(), ReadMode::Strict).unwrap();
        assert_eq!(back.records, recs);
        assert_eq!(to_jsonl_string(&back.records), s);
        assert!(!s.contains("\"style\""));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        write_jsonl(&p, &recs).unwrap();
        assert_eq!(read_jsonl(&p, ReadMode::Strict).unwrap().records, recs);
    }

    #[test]
    fn empty_input() {
        let r = parse_jsonl(&b""[..], ReadMode::Strict).unwrap();
        assert!(r.records.is_empty() && r.diagnostics.is_empty());
    }

    #[test]
    fn one_bad_line_of_ten() {
        let mut lines: Vec<String> = (0..10)
            .map(|i| serde_json::to_string(&rec(&format!("d{i}"))).unwrap())
            .collect();
        lines[6] = "{\"id\": \"broken\", ".into();
        let text = lines.join("\n");
        let r = parse_jsonl(text.as_bytes(), ReadMode::Lenient).unwrap();
        assert_eq!(r.records.len(), 9);
        assert_eq!(r.diagnostics.len(), 1);
        assert_eq!(r.diagnostics[0].line, 7);
        match parse_jsonl(text.as_bytes(), ReadMode::Strict) {
            Err(CorpusError::Malformed { line: 7, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn record_document_conversion() {
        let schema = DocSchema::publaynet();
        let d = rec("a").to_document(&schema).unwrap();
        assert_eq!(d.elements[0].category, 1);
        assert_eq!(CorpusRecord::from_document(&d, &schema).unwrap(), rec("a"));
        let mut bad = rec("a");
        bad.elements[1].text = Some("x".into());
        assert!(bad.to_document(&schema).is_err());
        bad = rec("a");
        bad.elements[0].category = "caption".into();
        assert!(bad.to_document(&schema).unwrap_err().to_string().contains("caption"));
    }

    #[test]
    fn split_examples() {
        assert_eq!(split_sizes(10, [0.8, 0.1, 0.1]).unwrap(), [8, 1, 1]);
        assert_eq!(split_sizes(7, [1.0, 0.0, 0.0]).unwrap(), [7, 0, 0]);
        assert_eq!(split_sizes(3, [1.0 / 3.0; 3]).unwrap(), [1, 1, 1]);
        assert!(split_sizes(3, [0.5, 0.2, 0.2]).is_err());
        let recs: Vec<_> = (0..10).map(|i| rec(&format!("r{i}"))).collect();
        let (a, b, c) = split(&recs, [1.0, 0.0, 0.0], 1).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (10, 0, 0));
        let mut dup = recs.clone();
        dup.push(rec("r3"));
        assert!(matches!(split(&dup, [1.0, 0.0, 0.0], 1), Err(CorpusError::DuplicateIds(ids)) if ids == vec!["r3".to_string()]));
    }
}
