//! Document data model, 8-bit coordinate quantization and reading order.
//!
//! Coordinates live in canvas units with the origin at the top-left corner.
//! Quantization maps a coordinate onto one of 256 uniform bins of the canvas
//! extent; dequantization returns the bin center.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of quantization bins per axis.
pub const NUM_BINS: u32 = 256;
/// Largest legal bin value.
pub const MAX_BIN: u32 = NUM_BINS - 1;
/// Default cap on elements per document.
pub const DEFAULT_MAX_ELEMENTS: usize = 128;

const EPS_CLAMP: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DocError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("schema error: {0}")]
    Schema(String),
}

/// A layout element category such as `title` or `figure`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementCategory {
    pub id: usize,
    pub name: String,
    /// Whether elements of this category may carry text.
    pub textual: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct CategorySpec {
    name: String,
    #[serde(default = "default_true")]
    textual: bool,
}

fn default_true() -> bool {
    true
}

fn default_max_elements() -> usize {
    DEFAULT_MAX_ELEMENTS
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct SchemaSpec {
    categories: Vec<CategorySpec>,
    #[serde(default)]
    styles: Vec<String>,
    #[serde(default = "default_max_elements")]
    max_elements: usize,
}

/// The category and style sets a corpus is expressed in, plus the element cap.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaSpec", into = "SchemaSpec")]
pub struct DocSchema {
    categories: Vec<ElementCategory>,
    styles: Vec<String>,
    max_elements: usize,
}

impl TryFrom<SchemaSpec> for DocSchema {
    type Error = DocError;

    fn try_from(spec: SchemaSpec) -> Result<Self, DocError> {
        let cats = spec
            .categories
            .into_iter()
            .map(|c| (c.name, c.textual))
            .collect::<Vec<_>>();
        DocSchema::new(cats, spec.styles, spec.max_elements)
    }
}

impl From<DocSchema> for SchemaSpec {
    fn from(s: DocSchema) -> Self {
        SchemaSpec {
            categories: s
                .categories
                .into_iter()
                .map(|c| CategorySpec {
                    name: c.name,
                    textual: c.textual,
                })
                .collect(),
            styles: s.styles,
            max_elements: s.max_elements,
        }
    }
}

impl DocSchema {
    /// Builds a schema; category ids are assigned densely in list order.
    pub fn new(
        categories: Vec<(String, bool)>,
        styles: Vec<String>,
        max_elements: usize,
    ) -> Result<Self, DocError> {
        if max_elements == 0 {
            return Err(DocError::Schema("max_elements must be positive".into()));
        }
        check_names("category", categories.iter().map(|(n, _)| n.as_str()))?;
        check_names("style", styles.iter().map(String::as_str))?;
        let categories = categories
            .into_iter()
            .enumerate()
            .map(|(id, (name, textual))| ElementCategory { id, name, textual })
            .collect();
        Ok(DocSchema {
            categories,
            styles,
            max_elements,
        })
    }

    /// The five PubLayNet categories; `figure` is the only non-textual one.
    pub fn publaynet() -> Self {
        let cats = [
            ("text", true),
            ("title", true),
            ("list", true),
            ("table", true),
            ("figure", false),
        ];
        DocSchema::new(
            cats.iter().map(|(n, t)| (n.to_string(), *t)).collect(),
            Vec::new(),
            DEFAULT_MAX_ELEMENTS,
        )
        .expect("static schema is valid")
    }

    pub fn with_styles(mut self, styles: Vec<String>) -> Result<Self, DocError> {
        check_names("style", styles.iter().map(String::as_str))?;
        self.styles = styles;
        Ok(self)
    }

    pub fn with_max_elements(mut self, max_elements: usize) -> Result<Self, DocError> {
        if max_elements == 0 {
            return Err(DocError::Schema("max_elements must be positive".into()));
        }
        self.max_elements = max_elements;
        Ok(self)
    }

    pub fn categories(&self) -> &[ElementCategory] {
        &self.categories
    }

    pub fn styles(&self) -> &[String] {
        &self.styles
    }

    pub fn max_elements(&self) -> usize {
        self.max_elements
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn category(&self, id: usize) -> Option<&ElementCategory> {
        self.categories.get(id)
    }

    pub fn category_id(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c.name == name)
    }

    pub fn style_id(&self, name: &str) -> Option<usize> {
        self.styles.iter().position(|s| s == name)
    }

    pub fn is_textual(&self, id: usize) -> bool {
        self.categories.get(id).map(|c| c.textual).unwrap_or(false)
    }
}

fn check_names<'a>(what: &str, names: impl Iterator<Item = &'a str>) -> Result<(), DocError> {
    let mut seen = std::collections::HashSet::new();
    for n in names {
        if n.is_empty() {
            return Err(DocError::Schema(format!("empty {what} name")));
        }
        if !seen.insert(n) {
            return Err(DocError::Schema(format!("duplicate {what} name `{n}`")));
        }
    }
    Ok(())
}

/// Axis-aligned box in canvas units: top-left corner plus extents.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    fn problems(&self, canvas_w: f64, canvas_h: f64) -> Option<BoxProblem> {
        let v = [self.x, self.y, self.w, self.h];
        if v.iter().any(|c| !c.is_finite()) {
            return Some(BoxProblem::NonFinite);
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Some(BoxProblem::NonPositiveExtent);
        }
        if self.x < 0.0
            || self.y < 0.0
            || self.right() > canvas_w + EPS_CLAMP * canvas_w
            || self.bottom() > canvas_h + EPS_CLAMP * canvas_h
        {
            return Some(BoxProblem::OutOfCanvas);
        }
        None
    }
}

enum BoxProblem {
    NonFinite,
    NonPositiveExtent,
    OutOfCanvas,
}

/// A bbox with every coordinate expressed as an 8-bit bin.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantBBox {
    pub x: u8,
    pub y: u8,
    pub w: u8,
    pub h: u8,
}

/// Per-element attribute slots, in serialization order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttributeKind {
    Category,
    X,
    Y,
    W,
    H,
    Style,
    Text,
}

impl AttributeKind {
    pub const ORDER: [AttributeKind; 7] = [
        AttributeKind::Category,
        AttributeKind::X,
        AttributeKind::Y,
        AttributeKind::W,
        AttributeKind::H,
        AttributeKind::Style,
        AttributeKind::Text,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub category: usize,
    pub bbox: BBox,
    pub style: Option<usize>,
    pub text: Option<String>,
}

impl Element {
    pub fn new(category: usize, bbox: BBox) -> Self {
        Element {
            category,
            bbox,
            style: None,
            text: None,
        }
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }

    pub fn with_style(mut self, style: usize) -> Self {
        self.style = Some(style);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub canvas_w: f64,
    pub canvas_h: f64,
    pub elements: Vec<Element>,
}

impl Document {
    pub fn new(id: impl Into<String>, canvas_w: f64, canvas_h: f64) -> Self {
        Document {
            id: id.into(),
            canvas_w,
            canvas_h,
            elements: Vec::new(),
        }
    }

    pub fn with_elements(mut self, elements: Vec<Element>) -> Self {
        self.elements = elements;
        self
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }
}

/// `clamp(floor(v / extent * 256), 0, 255)`.
pub fn quantize_coord(v: f64, extent: f64) -> Result<u8, DocError> {
    if !v.is_finite() {
        return Err(DocError::InvalidInput(format!("non-finite coordinate {v}")));
    }
    if !(extent.is_finite() && extent > 0.0) {
        return Err(DocError::InvalidInput(format!(
            "non-positive extent {extent}"
        )));
    }
    Ok(bin_of(v, extent))
}

// Total version of `quantize_coord` for already-checked inputs; NaN maps to 0.
fn bin_of(v: f64, extent: f64) -> u8 {
    let b = (v / extent * NUM_BINS as f64).floor();
    if b >= MAX_BIN as f64 {
        MAX_BIN as u8
    } else if b > 0.0 {
        b as u8
    } else {
        0
    }
}

/// Bin center: `(bin + 0.5) / 256 * extent`.
pub fn dequantize_coord(bin: u32, extent: f64) -> Result<f64, DocError> {
    if bin > MAX_BIN {
        return Err(DocError::InvalidInput(format!("bin {bin} out of range")));
    }
    if !(extent.is_finite() && extent > 0.0) {
        return Err(DocError::InvalidInput(format!(
            "non-positive extent {extent}"
        )));
    }
    Ok(bin_center(bin as u8, extent))
}

fn bin_center(bin: u8, extent: f64) -> f64 {
    (bin as f64 + 0.5) / NUM_BINS as f64 * extent
}

/// Quantizes a bbox against its canvas; extents never quantize below one bin.
pub fn quantize_bbox(bbox: &BBox, canvas_w: f64, canvas_h: f64) -> Result<QuantBBox, DocError> {
    check_canvas(canvas_w, canvas_h)?;
    match bbox.problems(canvas_w, canvas_h) {
        None => {}
        Some(BoxProblem::NonFinite) => {
            return Err(DocError::InvalidInput("non-finite bbox coordinate".into()))
        }
        Some(BoxProblem::NonPositiveExtent) => {
            return Err(DocError::InvalidInput("non-positive extent".into()))
        }
        Some(BoxProblem::OutOfCanvas) => {
            return Err(DocError::InvalidInput("bbox out of canvas".into()))
        }
    }
    Ok(QuantBBox {
        x: bin_of(bbox.x, canvas_w),
        y: bin_of(bbox.y, canvas_h),
        w: bin_of(bbox.w, canvas_w).max(1),
        h: bin_of(bbox.h, canvas_h).max(1),
    })
}

/// Bin-center reconstruction of a quantized bbox.
///
/// Extents are clipped so the box never leaves the canvas: a box whose
/// position and extent bins sum to 256 would otherwise overhang by up to
/// half a bin on each coordinate.
pub fn dequantize_bbox(q: &QuantBBox, canvas_w: f64, canvas_h: f64) -> BBox {
    let x = bin_center(q.x, canvas_w);
    let y = bin_center(q.y, canvas_h);
    let w = bin_center(q.w, canvas_w).min(canvas_w - x);
    let h = bin_center(q.h, canvas_h).min(canvas_h - y);
    BBox { x, y, w, h }
}

fn check_canvas(canvas_w: f64, canvas_h: f64) -> Result<(), DocError> {
    if !(canvas_w.is_finite() && canvas_w > 0.0 && canvas_h.is_finite() && canvas_h > 0.0) {
        return Err(DocError::InvalidInput(format!(
            "invalid canvas {canvas_w}x{canvas_h}"
        )));
    }
    Ok(())
}

/// Replaces every bbox with its quantize/dequantize reconstruction.
pub fn quantize_document(doc: &Document) -> Result<Document, DocError> {
    let mut out = doc.clone();
    for el in &mut out.elements {
        let q = quantize_bbox(&el.bbox, doc.canvas_w, doc.canvas_h)?;
        el.bbox = dequantize_bbox(&q, doc.canvas_w, doc.canvas_h);
    }
    Ok(out)
}

/// Reading-order permutation: `perm[i]` is the original index of the element
/// that lands at position `i`. Sort key is (yq, xq, category, original index).
pub fn canonical_permutation(doc: &Document) -> Vec<usize> {
    let mut keys: Vec<(u8, u8, usize, usize)> = doc
        .elements
        .iter()
        .enumerate()
        .map(|(i, e)| {
            (
                bin_of(e.bbox.y, doc.canvas_h),
                bin_of(e.bbox.x, doc.canvas_w),
                e.category,
                i,
            )
        })
        .collect();
    keys.sort();
    keys.into_iter().map(|k| k.3).collect()
}

pub fn canonical_order(doc: &Document) -> Document {
    let perm = canonical_permutation(doc);
    Document {
        id: doc.id.clone(),
        canvas_w: doc.canvas_w,
        canvas_h: doc.canvas_h,
        elements: perm.into_iter().map(|i| doc.elements[i].clone()).collect(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    InvalidCanvas,
    ElementCount { count: usize, max: usize },
    UnknownCategory { element: usize, category: usize },
    UnknownStyle { element: usize, style: usize },
    NonFiniteCoordinate { element: usize },
    NonPositiveExtent { element: usize },
    OutOfCanvas { element: usize },
    TextOnNonTextual { element: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::InvalidCanvas => write!(f, "invalid canvas"),
            Violation::ElementCount { count, max } => {
                write!(f, "element count {count} exceeds maximum {max}")
            }
            Violation::UnknownCategory { element, category } => {
                write!(f, "element {element}: unknown category {category}")
            }
            Violation::UnknownStyle { element, style } => {
                write!(f, "element {element}: unknown style {style}")
            }
            Violation::NonFiniteCoordinate { element } => {
                write!(f, "element {element}: non-finite coordinate")
            }
            Violation::NonPositiveExtent { element } => {
                write!(f, "element {element}: non-positive extent")
            }
            Violation::OutOfCanvas { element } => {
                write!(f, "element {element}: bbox out of canvas")
            }
            Violation::TextOnNonTextual { element } => {
                write!(f, "element {element}: text on non-textual category")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_pass(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_pass() {
            return write!(f, "pass");
        }
        let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", msgs.join("; "))
    }
}

pub fn validate(doc: &Document, schema: &DocSchema) -> ValidationReport {
    let mut violations = Vec::new();
    if check_canvas(doc.canvas_w, doc.canvas_h).is_err() {
        violations.push(Violation::InvalidCanvas);
    }
    if doc.elements.len() > schema.max_elements() {
        violations.push(Violation::ElementCount {
            count: doc.elements.len(),
            max: schema.max_elements(),
        });
    }
    for (i, el) in doc.elements.iter().enumerate() {
        match schema.category(el.category) {
            None => violations.push(Violation::UnknownCategory {
                element: i,
                category: el.category,
            }),
            Some(c) if !c.textual && el.text.is_some() => {
                violations.push(Violation::TextOnNonTextual { element: i })
            }
            Some(_) => {}
        }
        if let Some(s) = el.style {
            if s >= schema.styles().len() {
                violations.push(Violation::UnknownStyle {
                    element: i,
                    style: s,
                });
            }
        }
        match el.bbox.problems(doc.canvas_w, doc.canvas_h) {
            None => {}
            Some(BoxProblem::NonFinite) => {
                violations.push(Violation::NonFiniteCoordinate { element: i })
            }
            Some(BoxProblem::NonPositiveExtent) => {
                violations.push(Violation::NonPositiveExtent { element: i })
            }
            Some(BoxProblem::OutOfCanvas) => violations.push(Violation::OutOfCanvas { element: i }),
        }
    }
    ValidationReport { violations }
}
