//! COCO-style layout annotations with an optional text sidecar.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::Deserialize;

use super::{Canvas, CorpusError, CorpusRecord, RecordElement};
use crate::doc::DocSchema;

#[derive(Clone, Debug, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub width: f64,
    pub height: f64,
    #[serde(default)]
    pub file_name: Option<String>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: [f64; 4],
}

#[derive(Clone, Debug, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
}

#[derive(Clone, Debug, Deserialize)]
pub struct CocoFile {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    #[serde(default)]
    pub categories: Vec<CocoCategory>,
}

/// Aligned text for one annotation; `font` becomes the element style.
#[derive(Clone, Debug, Default, Deserialize)]
pub struct SidecarEntry {
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub font: Option<String>,
}

pub struct IngestOptions<'a> {
    pub schema: &'a DocSchema,
    /// COCO category id to schema category name.
    pub category_map: BTreeMap<u64, String>,
    /// Keyed by annotation id (as a decimal string).
    pub sidecar: Option<HashMap<String, SidecarEntry>>,
}

#[derive(Clone, Debug, Default)]
pub struct IngestOutput {
    pub records: Vec<CorpusRecord>,
    pub diagnostics: Vec<String>,
    /// Boxes clipped to their canvas.
    pub clamped: usize,
}

/// PubLayNet ids: 1 text, 2 title, 3 list, 4 table, 5 figure.
pub fn publaynet_category_map() -> BTreeMap<u64, String> {
    ["text", "title", "list", "table", "figure"]
        .iter()
        .enumerate()
        .map(|(i, n)| (i as u64 + 1, n.to_string()))
        .collect()
}

/// Groups annotations by image into records, ordered by image id; elements
/// keep annotation id order.
pub fn ingest_coco(coco: &CocoFile, opts: &IngestOptions) -> Result<IngestOutput, CorpusError> {
    let used: BTreeSet<u64> = coco.annotations.iter().map(|a| a.category_id).collect();
    let unmapped: Vec<u64> = used
        .iter()
        .copied()
        .filter(|id| !opts.category_map.contains_key(id))
        .collect();
    if !unmapped.is_empty() {
        return Err(CorpusError::UnknownCategories(unmapped));
    }
    for (id, name) in &opts.category_map {
        if used.contains(id) && opts.schema.category_id(name).is_none() {
            return Err(CorpusError::InvalidConfig(format!(
                "category id {id} maps to {name:?}, which is not in the schema"
            )));
        }
    }

    let mut out = IngestOutput::default();
    let mut images: BTreeMap<u64, &CocoImage> = BTreeMap::new();
    for im in &coco.images {
        if images.insert(im.id, im).is_some() {
            out.diagnostics.push(format!("image {}: duplicate entry, keeping the last", im.id));
        }
    }
    let mut by_image: BTreeMap<u64, Vec<&CocoAnnotation>> = images.keys().map(|&k| (k, Vec::new())).collect();
    for a in &coco.annotations {
        match by_image.get_mut(&a.image_id) {
            Some(v) => v.push(a),
            None => out
                .diagnostics
                .push(format!("annotation {}: missing image entry {}, skipped", a.id, a.image_id)),
        }
    }

    let per_image: Vec<(CorpusRecord, Vec<String>, usize)> = by_image
        .into_par_iter()
        .map(|(image_id, mut anns)| {
            anns.sort_by_key(|a| a.id);
            build_record(images[&image_id], &anns, opts)
        })
        .collect();
    for (rec, diags, clamped) in per_image {
        out.records.push(rec);
        out.diagnostics.extend(diags);
        out.clamped += clamped;
    }
    if out.clamped > 0 {
        log::info!("clamped {} out-of-canvas boxes", out.clamped);
    }
    Ok(out)
}

fn build_record(im: &CocoImage, anns: &[&CocoAnnotation], opts: &IngestOptions) -> (CorpusRecord, Vec<String>, usize) {
    let mut diags = Vec::new();
    let mut clamped = 0;
    let mut elements = Vec::with_capacity(anns.len());
    let (cw, ch) = (im.width, im.height);
    for a in anns {
        if elements.len() >= opts.schema.max_elements() {
            diags.push(format!(
                "image {}: more than {} elements, dropping annotation {}",
                im.id,
                opts.schema.max_elements(),
                a.id
            ));
            continue;
        }
        let [x, y, w, h] = a.bbox;
        if ![x, y, w, h].iter().all(|v| v.is_finite()) {
            diags.push(format!("annotation {}: non-finite bbox, skipped", a.id));
            continue;
        }
        let x0 = x.clamp(0.0, cw);
        let y0 = y.clamp(0.0, ch);
        let x1 = (x + w).clamp(0.0, cw);
        let y1 = (y + h).clamp(0.0, ch);
        let (nw, nh) = (x1 - x0, y1 - y0);
        if nw <= 0.0 || nh <= 0.0 {
            diags.push(format!("annotation {}: empty after clipping to the canvas, skipped", a.id));
            continue;
        }
        if (x0, y0, nw, nh) != (x, y, w, h) {
            clamped += 1;
        }
        let name = &opts.category_map[&a.category_id];
        let cat = opts.schema.category_id(name).expect("checked above");
        let side = opts.sidecar.as_ref().and_then(|s| s.get(&a.id.to_string()));
        let mut text = side.and_then(|s| s.text.clone()).filter(|t| !t.is_empty());
        if text.is_some() && !opts.schema.is_textual(cat) {
            diags.push(format!("annotation {}: text on non-textual category {name}, dropped", a.id));
            text = None;
        }
        let mut style = side.and_then(|s| s.font.clone());
        if let Some(f) = &style {
            if opts.schema.style_id(f).is_none() {
                diags.push(format!("annotation {}: font {f:?} not in the schema styles, dropped", a.id));
                style = None;
            }
        }
        elements.push(RecordElement {
            category: name.clone(),
            bbox: [x0, y0, nw, nh],
            style,
            text,
        });
    }
    let id = match &im.file_name {
        Some(f) if !f.is_empty() => f.clone(),
        _ => im.id.to_string(),
    };
    (
        CorpusRecord {
            id,
            canvas: Canvas { w: cw, h: ch },
            elements,
        },
        diags,
        clamped,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coco() -> CocoFile {
        serde_json::from_str(
            r#"{
            "images": [{"id": 7, "width": 612, "height": 792, "file_name": "p7.png"}],
            "annotations": [
                {"id": 2, "image_id": 7, "category_id": 5, "bbox": [300, 400, 200, 500]},
                {"id": 1, "image_id": 7, "category_id": 2, "bbox": [36, 40, 540, 30]},
                {"id": 3, "image_id": 9, "category_id": 1, "bbox": [0, 0, 10, 10]}
            ],
            "categories": [{"id": 1, "name": "text"}, {"id": 2, "name": "title"}, {"id": 5, "name": "figure"}]
        }"#,
        )
        .unwrap()
    }

    #[test]
    fn one_image_two_annotations() {
        let schema = DocSchema::publaynet();
        let mut sidecar = HashMap::new();
        sidecar.insert(
            "1".to_string(),
            SidecarEntry {
                text: Some("Results".into()),
                font: None,
            },
        );
        let out = ingest_coco(
            &coco(),
            &IngestOptions {
                schema: &schema,
                category_map: publaynet_category_map(),
                sidecar: Some(sidecar),
            },
        )
        .unwrap();
        assert_eq!(out.records.len(), 1);
        let r = &out.records[0];
        assert_eq!(r.id, "p7.png");
        assert_eq!(r.elements.len(), 2);
        assert_eq!(r.elements[0].category, "title");
        assert_eq!(r.elements[0].text.as_deref(), Some("Results"));
        assert_eq!(r.elements[1].text, None);
        // figure runs past the bottom edge
        assert_eq!(r.elements[1].bbox, [300.0, 400.0, 200.0, 392.0]);
        assert_eq!(out.clamped, 1);
        assert!(out.diagnostics.iter().any(|d| d.contains("missing image")));
        assert!(r.to_document(&schema).is_ok());
    }

    #[test]
    fn unmapped_ids_are_listed() {
        let schema = DocSchema::publaynet();
        let mut map = publaynet_category_map();
        map.remove(&5);
        map.remove(&2);
        let e = ingest_coco(
            &coco(),
            &IngestOptions {
                schema: &schema,
                category_map: map,
                sidecar: None,
            },
        )
        .unwrap_err();
        assert!(matches!(e, CorpusError::UnknownCategories(ref ids) if ids == &vec![2, 5]));
    }

    #[test]
    fn publaynet_map_matches_schema() {
        let schema = DocSchema::publaynet();
        for (id, name) in publaynet_category_map() {
            assert_eq!(schema.category_id(&name), Some(id as usize - 1));
        }
    }
}
