//! Layout metrics: IoU and matched mIoU, alignment, overlap, boundary
//! displacement error and a Fréchet distance over layout descriptors.
//!
//! All geometry is normalized by the canvas, so every metric is invariant
//! to uniform rescaling of a document.

mod frechet;
mod hungarian;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doc::{canonical_permutation, BBox, DocSchema, Document};

pub use frechet::{frechet, gaussian_stats, jacobi_eigen, layout_features, psd_sqrt, Matrix};
pub use hungarian::{hungarian, Assignment};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error(
        "corpora do not pair up: missing from generated {missing_generated:?}, \
         missing from reference {missing_reference:?}, duplicated {duplicates:?}"
    )]
    Pairing {
        missing_generated: Vec<String>,
        missing_reference: Vec<String>,
        duplicates: Vec<String>,
    },
}

/// Box in canvas-normalized coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl NormBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        NormBox { x, y, w, h }
    }

    pub fn from_bbox(b: &BBox, canvas_w: f64, canvas_h: f64) -> Self {
        NormBox {
            x: b.x / canvas_w,
            y: b.y / canvas_h,
            w: b.w / canvas_w,
            h: b.h / canvas_h,
        }
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    /// Area from the edges, so coincident boxes give bitwise-equal areas
    /// and intersections.
    pub fn area(&self) -> f64 {
        (self.right() - self.x) * (self.bottom() - self.y)
    }

    /// Left, center-x, right, top, center-y, bottom.
    pub fn anchors(&self) -> [f64; 6] {
        [
            self.x,
            self.x + self.w / 2.0,
            self.right(),
            self.y,
            self.y + self.h / 2.0,
            self.bottom(),
        ]
    }
}

fn norm_boxes(doc: &Document) -> Vec<NormBox> {
    doc.elements
        .iter()
        .map(|e| NormBox::from_bbox(&e.bbox, doc.canvas_w, doc.canvas_h))
        .collect()
}

pub fn intersection_area(a: &NormBox, b: &NormBox) -> f64 {
    let w = a.right().min(b.right()) - a.x.max(b.x);
    let h = a.bottom().min(b.bottom()) - a.y.max(b.y);
    if w > 0.0 && h > 0.0 {
        w * h
    } else {
        0.0
    }
}

pub fn iou(a: &NormBox, b: &NormBox) -> f64 {
    let inter = intersection_area(a, b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Mean absolute displacement of the four edges.
pub fn bde(pred: &NormBox, gt: &NormBox) -> f64 {
    ((pred.x - gt.x).abs()
        + (pred.right() - gt.right()).abs()
        + (pred.y - gt.y).abs()
        + (pred.bottom() - gt.bottom()).abs())
        / 4.0
}

/// Per category, the matching maximizing summed IoU; total matched IoU over
/// `max(|gen|, |ref|)`. Two empty documents score 1.
pub fn m_iou(generated: &Document, reference: &Document) -> f64 {
    let n = generated.elements.len().max(reference.elements.len());
    if n == 0 {
        return 1.0;
    }
    let gb = norm_boxes(generated);
    let rb = norm_boxes(reference);
    let cats: BTreeSet<usize> = generated
        .elements
        .iter()
        .chain(&reference.elements)
        .map(|e| e.category)
        .collect();
    let mut total = 0.0;
    for c in cats {
        let gi: Vec<usize> = (0..gb.len()).filter(|&i| generated.elements[i].category == c).collect();
        let ri: Vec<usize> = (0..rb.len()).filter(|&i| reference.elements[i].category == c).collect();
        if gi.is_empty() || ri.is_empty() {
            continue;
        }
        let k = gi.len().max(ri.len());
        let mut cost = vec![vec![0.0; k]; k];
        for (a, &g) in gi.iter().enumerate() {
            for (b, &r) in ri.iter().enumerate() {
                cost[a][b] = -iou(&gb[g], &rb[r]);
            }
        }
        let asg = hungarian(&cost).expect("IoU costs are finite");
        total -= asg.cost;
    }
    (total / n as f64).clamp(0.0, 1.0)
}

/// Mean over elements of the smallest same-type anchor gap to any other
/// element. Documents with fewer than two elements score 0.
pub fn alignment(doc: &Document) -> f64 {
    let boxes = norm_boxes(doc);
    if boxes.len() < 2 {
        return 0.0;
    }
    let anchors: Vec<[f64; 6]> = boxes.iter().map(NormBox::anchors).collect();
    let mut sum = 0.0;
    for (i, ai) in anchors.iter().enumerate() {
        let mut best = f64::INFINITY;
        for (j, aj) in anchors.iter().enumerate() {
            if i == j {
                continue;
            }
            for k in 0..6 {
                best = best.min((ai[k] - aj[k]).abs());
            }
        }
        sum += best;
    }
    sum / boxes.len() as f64
}

/// Summed pairwise intersection area over summed element area.
pub fn overlap(doc: &Document) -> f64 {
    let boxes = norm_boxes(doc);
    let area: f64 = boxes.iter().map(NormBox::area).sum();
    if area <= 0.0 {
        return 0.0;
    }
    let mut inter = 0.0;
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            inter += intersection_area(&boxes[i], &boxes[j]);
        }
    }
    inter / area
}

/// IoU and BDE of one placed element against its ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementScore {
    pub iou: f64,
    pub bde: f64,
}

/// Scores `generated.elements[t]` against `reference.elements[t]` for each
/// target position.
pub fn placement_scores(
    generated: &Document,
    reference: &Document,
    targets: &[usize],
) -> Result<Vec<PlacementScore>, MetricsError> {
    targets
        .iter()
        .map(|&t| {
            let (g, r) = match (generated.elements.get(t), reference.elements.get(t)) {
                (Some(g), Some(r)) => (g, r),
                _ => {
                    return Err(MetricsError::InvalidInput(format!(
                        "document {}: target {t} out of range",
                        reference.id
                    )))
                }
            };
            let gb = NormBox::from_bbox(&g.bbox, generated.canvas_w, generated.canvas_h);
            let rb = NormBox::from_bbox(&r.bbox, reference.canvas_w, reference.canvas_h);
            Ok(PlacementScore {
                iou: iou(&gb, &rb),
                bde: bde(&gb, &rb),
            })
        })
        .collect()
}

/// Matches generated and reference documents by id, in reference order.
pub fn pair_by_id(generated: &[Document], reference: &[Document]) -> Result<Vec<(Document, Document)>, MetricsError> {
    let mut duplicates = BTreeSet::new();
    let mut gen_map: BTreeMap<&str, &Document> = BTreeMap::new();
    for d in generated {
        if gen_map.insert(&d.id, d).is_some() {
            duplicates.insert(d.id.clone());
        }
    }
    let mut ref_ids = BTreeSet::new();
    for d in reference {
        if !ref_ids.insert(d.id.as_str()) {
            duplicates.insert(d.id.clone());
        }
    }
    let missing_generated: Vec<String> = reference
        .iter()
        .filter(|d| !gen_map.contains_key(d.id.as_str()))
        .map(|d| d.id.clone())
        .collect();
    let missing_reference: Vec<String> = generated
        .iter()
        .filter(|d| !ref_ids.contains(d.id.as_str()))
        .map(|d| d.id.clone())
        .collect();
    if !missing_generated.is_empty() || !missing_reference.is_empty() || !duplicates.is_empty() {
        return Err(MetricsError::Pairing {
            missing_generated,
            missing_reference,
            duplicates: duplicates.into_iter().collect(),
        });
    }
    Ok(reference
        .iter()
        .map(|r| (gen_map[r.id.as_str()].clone(), r.clone()))
        .collect())
}

/// What the generated corpus was produced by.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalTask {
    Completion,
    /// Single-box placement.
    Single,
    /// Multiple-box placement.
    Multiple,
}

/// One generated/reference pair. For placement, `targets` indexes the
/// reference's original element list and the generated document lists its
/// elements in the reference's reading order.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalPair {
    pub generated: Document,
    pub reference: Document,
    pub targets: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: EvalTask,
    pub n_pairs: usize,
    pub m_iou: Option<f64>,
    /// Descriptor-based Fréchet distance; `None` with fewer than two documents.
    pub frechet_star: Option<f64>,
    pub alignment: f64,
    pub overlap: f64,
    pub iou_single: Option<f64>,
    pub iou_multiple: Option<f64>,
    pub bde_single: Option<f64>,
    pub bde_multiple: Option<f64>,
    pub n_targets: usize,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Scores a paired corpus. Results do not depend on pair order beyond
/// floating-point summation order, which is fixed by sorting on id.
pub fn evaluate(pairs: &[EvalPair], schema: &DocSchema, task: EvalTask) -> Result<MetricsReport, MetricsError> {
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs[a].reference.id.cmp(&pairs[b].reference.id).then(a.cmp(&b)));
    let per_pair: Vec<Result<(f64, f64, f64, Vec<PlacementScore>), MetricsError>> = order
        .par_iter()
        .map(|&i| {
            let p = &pairs[i];
            let scores = match task {
                EvalTask::Completion => Vec::new(),
                EvalTask::Single | EvalTask::Multiple => {
                    if task == EvalTask::Single && p.targets.len() != 1 {
                        return Err(MetricsError::InvalidInput(format!(
                            "document {}: single placement needs one target, got {}",
                            p.reference.id,
                            p.targets.len()
                        )));
                    }
                    let perm = canonical_permutation(&p.reference);
                    let canon = Document {
                        elements: perm.iter().map(|&k| p.reference.elements[k].clone()).collect(),
                        ..p.reference.clone()
                    };
                    let mut positions = Vec::with_capacity(p.targets.len());
                    for &t in &p.targets {
                        let pos = perm.iter().position(|&k| k == t).ok_or_else(|| {
                            MetricsError::InvalidInput(format!("document {}: target {t} out of range", p.reference.id))
                        })?;
                        positions.push(pos);
                    }
                    positions.sort_unstable();
                    placement_scores(&p.generated, &canon, &positions)?
                }
            };
            Ok((
                m_iou(&p.generated, &p.reference),
                alignment(&p.generated),
                overlap(&p.generated),
                scores,
            ))
        })
        .collect();
    let mut rows = Vec::with_capacity(per_pair.len());
    for r in per_pair {
        rows.push(r?);
    }
    let features = |docs: Vec<&Document>| -> Vec<Vec<f64>> {
        docs.into_iter()
            .map(|d| layout_features(d, schema.num_categories(), schema.max_elements()))
            .collect()
    };
    let frechet_star = if pairs.len() >= 2 {
        let (m1, s1) = gaussian_stats(&features(order.iter().map(|&i| &pairs[i].generated).collect()))?;
        let (m2, s2) = gaussian_stats(&features(order.iter().map(|&i| &pairs[i].reference).collect()))?;
        Some(frechet(&m1, &s1, &m2, &s2)?)
    } else {
        None
    };
    let scores: Vec<PlacementScore> = rows.iter().flat_map(|r| r.3.iter().copied()).collect();
    let iou_mean = mean(scores.iter().map(|s| s.iou));
    let bde_mean = mean(scores.iter().map(|s| s.bde));
    let single = task == EvalTask::Single;
    let multiple = task == EvalTask::Multiple;
    Ok(MetricsReport {
        task,
        n_pairs: pairs.len(),
        m_iou: mean(rows.iter().map(|r| r.0)),
        frechet_star,
        alignment: mean(rows.iter().map(|r| r.1)).unwrap_or(0.0),
        overlap: mean(rows.iter().map(|r| r.2)).unwrap_or(0.0),
        iou_single: if single { iou_mean } else { None },
        iou_multiple: if multiple { iou_mean } else { None },
        bde_single: if single { bde_mean } else { None },
        bde_multiple: if multiple { bde_mean } else { None },
        n_targets: scores.len(),
    })
}

impl MetricsReport {
    /// Report JSON with the flat metric keys plus table-style column blocks.
    pub fn to_json(&self, run_config: Option<&serde_json::Value>) -> serde_json::Value {
        let mut v = serde_json::json!({
            "task": self.task,
            "m_iou": self.m_iou,
            "frechet_star": self.frechet_star,
            "alignment": self.alignment,
            "overlap": self.overlap,
            "iou": {"single": self.iou_single, "multiple": self.iou_multiple},
            "bde": {"single": self.bde_single, "multiple": self.bde_multiple},
            "n_pairs": self.n_pairs,
            "n_targets": self.n_targets,
            "columns": {
                "completion": {
                    "mIoU": self.m_iou,
                    "FID*": self.frechet_star,
                    "Align": self.alignment,
                    "Over": self.overlap,
                },
                "placement": {
                    "IoU": {"Single": self.iou_single, "Multiple": self.iou_multiple},
                    "BDE": {"Single": self.bde_single, "Multiple": self.bde_multiple},
                },
            },
            "notes": {
                "FID*": "Fréchet distance between Gaussian fits of layout descriptors, not an image-network FID",
            },
        });
        if let Some(rc) = run_config {
            v["run_config"] = rc.clone();
        }
        v
    }

    /// Plain-text table with one labelled row per report.
    pub fn table(rows: &[(&str, &MetricsReport)]) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        let mut s = format!(
            "{:<16} {:>8} {:>8} {:>8} {:>8} | {:>10} {:>10} {:>10} {:>10}\n",
            "", "mIoU", "FID*", "Align", "Over", "IoU Single", "IoU Multi", "BDE Single", "BDE Multi"
        );
        for (name, r) in rows {
            s.push_str(&format!(
                "{:<16} {:>8} {:>8} {:>8} {:>8} | {:>10} {:>10} {:>10} {:>10}\n",
                name,
                f(r.m_iou),
                f(r.frechet_star),
                f(Some(r.alignment)),
                f(Some(r.overlap)),
                f(r.iou_single),
                f(r.iou_multiple),
                f(r.bde_single),
                f(r.bde_multiple)
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc::Element;

    fn nb(x: f64, y: f64, w: f64, h: f64) -> NormBox {
        NormBox::new(x, y, w, h)
    }

    #[test]
    fn iou_examples() {
        let a = nb(0.0, 0.0, 0.2, 0.2);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &nb(0.5, 0.5, 0.1, 0.1)), 0.0);
        assert!((iou(&a, &nb(0.1, 0.0, 0.2, 0.2)) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bde_examples() {
        let a = nb(0.1, 0.2, 0.3, 0.3);
        assert_eq!(bde(&a, &a), 0.0);
        let b = nb(0.2, 0.2, 0.3, 0.3);
        assert!((bde(&a, &b) - 0.05).abs() < 1e-12);
        assert_eq!(bde(&a, &b), bde(&b, &a));
    }

    fn doc(els: Vec<(usize, f64, f64, f64, f64)>) -> Document {
        Document::new("d", 100.0, 100.0).with_elements(
            els.into_iter()
                .map(|(c, x, y, w, h)| Element::new(c, BBox::new(x, y, w, h)))
                .collect(),
        )
    }

    #[test]
    fn m_iou_examples() {
        let d = doc(vec![(0, 0.0, 0.0, 20.0, 20.0), (1, 50.0, 50.0, 10.0, 10.0)]);
        assert_eq!(m_iou(&d, &d), 1.0);
        let mut remapped = d.clone();
        remapped.elements.iter_mut().for_each(|e| e.category += 2);
        assert_eq!(m_iou(&remapped, &d), 0.0);
        let empty = Document::new("e", 1.0, 1.0);
        assert_eq!(m_iou(&empty, &empty), 1.0);
        assert_eq!(m_iou(&empty, &d), 0.0);
        // one of two matched perfectly
        let half = doc(vec![(0, 0.0, 0.0, 20.0, 20.0)]);
        assert_eq!(m_iou(&half, &d), 0.5);
    }

    #[test]
    fn alignment_and_overlap_examples() {
        let shared_left = doc(vec![(0, 10.0, 10.0, 30.0, 10.0), (0, 10.0, 50.0, 60.0, 17.0)]);
        assert_eq!(alignment(&shared_left), 0.0);
        assert_eq!(alignment(&doc(vec![(0, 1.0, 2.0, 3.0, 4.0)])), 0.0);
        let twins = doc(vec![(0, 10.0, 10.0, 30.0, 10.0), (1, 10.0, 10.0, 30.0, 10.0)]);
        assert_eq!(overlap(&twins), 0.5);
        let apart = doc(vec![(0, 0.0, 0.0, 10.0, 10.0), (0, 20.0, 20.0, 10.0, 10.0)]);
        assert_eq!(overlap(&apart), 0.0);
    }

    #[test]
    fn pairing_lists_offenders() {
        let a = Document::new("a", 1.0, 1.0);
        let b = Document::new("b", 1.0, 1.0);
        let c = Document::new("c", 1.0, 1.0);
        let e = pair_by_id(&[a.clone(), c.clone()], &[a.clone(), b.clone()]).unwrap_err();
        assert_eq!(
            e,
            MetricsError::Pairing {
                missing_generated: vec!["b".into()],
                missing_reference: vec!["c".into()],
                duplicates: vec![],
            }
        );
        let ok = pair_by_id(&[b.clone(), a.clone()], &[a, b]).unwrap();
        assert_eq!(ok[0].0.id, "a");
    }

    #[test]
    fn corpus_against_itself() {
        let schema = DocSchema::publaynet();
        let pairs: Vec<EvalPair> = (0..4)
            .map(|i| {
                let d = Document {
                    id: format!("d{i}"),
                    ..doc(vec![(0, 5.0 * i as f64, 0.0, 20.0, 20.0), (1, 50.0, 50.0, 10.0 + i as f64, 10.0)])
                };
                EvalPair {
                    generated: d.clone(),
                    reference: d,
                    targets: vec![1],
                }
            })
            .collect();
        let r = evaluate(&pairs, &schema, EvalTask::Single).unwrap();
        assert_eq!(r.m_iou, Some(1.0));
        assert!(r.frechet_star.unwrap() <= 1e-9);
        assert_eq!(r.bde_single, Some(0.0));
        assert_eq!(r.iou_single, Some(1.0));
        assert_eq!(r.bde_multiple, None);
        let mut shuffled = pairs.clone();
        shuffled.reverse();
        assert_eq!(evaluate(&shuffled, &schema, EvalTask::Single).unwrap(), r);
        let j = r.to_json(None);
        for k in ["m_iou", "frechet_star", "alignment", "overlap", "n_pairs"] {
            assert!(j.get(k).is_some(), "{k}");
        }
        assert!(j["bde"].get("single").is_some() && j["bde"].get("multiple").is_some());
        for k in ["mIoU", "FID*", "Align", "Over"] {
            assert!(j["columns"]["completion"].get(k).is_some());
        }
        for k in ["IoU", "BDE"] {
            assert!(j["columns"]["placement"].get(k).is_some());
        }
        let t = MetricsReport::table(&[("self", &r)]);
        assert!(t.contains("mIoU") && t.contains("FID*") && t.contains("BDE Single"));
    }
}
