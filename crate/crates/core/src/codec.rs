//! Token vocabulary, document serialization and the grammar state machine.
//!
//! A document serializes to
//!
//! ```text
//! SOS  (CAT COORD COORD COORD COORD [STYLE|NULL] (TEXTBYTE+ | NULL) EOT)*  EOS
//! ```
//!
//! Coordinates are the 8-bit bins of x, y, w, h in that order and share one
//! 256-token block. Text is raw UTF-8 bytes capped at `max_text_bytes`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doc::{
    self, dequantize_bbox, quantize_bbox, DocError, DocSchema, Document, Element, QuantBBox,
};

pub const PAD: u32 = 0;
pub const SOS: u32 = 1;
pub const EOS: u32 = 2;
pub const NULL: u32 = 3;
pub const EOT: u32 = 4;

const NUM_SPECIAL: u32 = 5;
const COORD_BINS: u32 = 256;
const BYTE_VALUES: u32 = 256;
const MAX_CATEGORIES: usize = 64;
const MAX_STYLES: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("encoding error: {0}")]
    Encoding(String),
    #[error("sequence too long: {len} tokens exceeds limit {max}")]
    TooLong { len: usize, max: usize },
    #[error("parse error at position {position}: expected one of {expected:?}, found {found}")]
    Parse {
        position: usize,
        expected: Vec<TokenKind>,
        found: String,
    },
    #[error(transparent)]
    Doc(#[from] DocError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Pad,
    Sos,
    Eos,
    Null,
    Eot,
    Cat,
    Coord,
    Style,
    TextByte,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TokenKind::Pad => "PAD",
            TokenKind::Sos => "SOS",
            TokenKind::Eos => "EOS",
            TokenKind::Null => "NULL",
            TokenKind::Eot => "EOT",
            TokenKind::Cat => "CAT",
            TokenKind::Coord => "COORD",
            TokenKind::Style => "STYLE",
            TokenKind::TextByte => "TEXTBYTE",
        };
        f.write_str(s)
    }
}

/// Bijection between `(kind, value)` pairs and token ids.
///
/// Layout: `0..5` specials, then `C` categories, 256 coordinate bins,
/// `Sty` styles and 256 text bytes, for `V = 517 + C + Sty` ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    n_categories: u32,
    n_styles: u32,
    style_enabled: bool,
}

impl Vocabulary {
    pub fn build(
        categories: &[String],
        styles: &[String],
        style_enabled: bool,
    ) -> Result<Self, CodecError> {
        if categories.is_empty() || categories.len() > MAX_CATEGORIES {
            return Err(CodecError::Config(format!(
                "category count {} outside 1..={MAX_CATEGORIES}",
                categories.len()
            )));
        }
        if styles.len() > MAX_STYLES {
            return Err(CodecError::Config(format!(
                "style count {} exceeds {MAX_STYLES}",
                styles.len()
            )));
        }
        if style_enabled && styles.is_empty() {
            return Err(CodecError::Config(
                "style slot enabled without any styles".into(),
            ));
        }
        for (what, names) in [("category", categories), ("style", styles)] {
            let mut seen = std::collections::HashSet::new();
            for n in names {
                if !seen.insert(n.as_str()) {
                    return Err(CodecError::Config(format!("duplicate {what} name `{n}`")));
                }
            }
        }
        Ok(Vocabulary {
            n_categories: categories.len() as u32,
            n_styles: styles.len() as u32,
            style_enabled,
        })
    }

    pub fn from_schema(schema: &DocSchema, style_enabled: bool) -> Result<Self, CodecError> {
        let cats: Vec<String> = schema.categories().iter().map(|c| c.name.clone()).collect();
        Self::build(&cats, schema.styles(), style_enabled)
    }

    pub fn size(&self) -> usize {
        (NUM_SPECIAL + self.n_categories + COORD_BINS + self.n_styles + BYTE_VALUES) as usize
    }

    pub fn num_categories(&self) -> usize {
        self.n_categories as usize
    }

    pub fn num_styles(&self) -> usize {
        self.n_styles as usize
    }

    pub fn style_enabled(&self) -> bool {
        self.style_enabled
    }

    fn cat_offset(&self) -> u32 {
        NUM_SPECIAL
    }

    fn coord_offset(&self) -> u32 {
        NUM_SPECIAL + self.n_categories
    }

    fn style_offset(&self) -> u32 {
        self.coord_offset() + COORD_BINS
    }

    fn text_offset(&self) -> u32 {
        self.style_offset() + self.n_styles
    }

    /// First id and number of ids of `kind`.
    pub fn range_of(&self, kind: TokenKind) -> (u32, u32) {
        match kind {
            TokenKind::Pad => (PAD, 1),
            TokenKind::Sos => (SOS, 1),
            TokenKind::Eos => (EOS, 1),
            TokenKind::Null => (NULL, 1),
            TokenKind::Eot => (EOT, 1),
            TokenKind::Cat => (self.cat_offset(), self.n_categories),
            TokenKind::Coord => (self.coord_offset(), COORD_BINS),
            TokenKind::Style => (self.style_offset(), self.n_styles),
            TokenKind::TextByte => (self.text_offset(), BYTE_VALUES),
        }
    }

    pub fn token_of(&self, kind: TokenKind, value: u32) -> Result<u32, CodecError> {
        let (start, len) = self.range_of(kind);
        if value >= len {
            return Err(CodecError::InvalidInput(format!(
                "value {value} out of range for {kind} (size {len})"
            )));
        }
        Ok(start + value)
    }

    pub fn kind_of(&self, id: u32) -> Result<(TokenKind, u32), CodecError> {
        let kind = match id {
            PAD => TokenKind::Pad,
            SOS => TokenKind::Sos,
            EOS => TokenKind::Eos,
            NULL => TokenKind::Null,
            EOT => TokenKind::Eot,
            _ if id < self.coord_offset() => TokenKind::Cat,
            _ if id < self.style_offset() => TokenKind::Coord,
            _ if id < self.text_offset() => TokenKind::Style,
            _ if (id as usize) < self.size() => TokenKind::TextByte,
            _ => {
                return Err(CodecError::InvalidInput(format!(
                    "token id {id} outside vocabulary of size {}",
                    self.size()
                )))
            }
        };
        Ok((kind, id - self.range_of(kind).0))
    }

    fn describe(&self, id: u32) -> String {
        match self.kind_of(id) {
            Ok((k, v)) if self.range_of(k).1 > 1 => format!("{k}({v}) [id {id}]"),
            Ok((k, _)) => format!("{k} [id {id}]"),
            Err(_) => format!("invalid id {id}"),
        }
    }
}

fn default_max_text_bytes() -> usize {
    64
}

/// Codec settings that are not part of the document schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodecConfig {
    /// Per-element cap on text bytes (`T_max`).
    #[serde(default = "default_max_text_bytes")]
    pub max_text_bytes: usize,
    /// Emit the style slot.
    #[serde(default)]
    pub style_enabled: bool,
    /// Optional hard limit on encoded sequence length (the model context).
    #[serde(default)]
    pub max_len: Option<usize>,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            max_text_bytes: default_max_text_bytes(),
            style_enabled: false,
            max_len: None,
        }
    }
}

/// Everything needed to rebuild a codec; stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodecSpec {
    pub schema: DocSchema,
    pub config: CodecConfig,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(pub Vec<u32>);

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    /// One decimal id per line.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.0.len() * 4);
        for id in &self.0 {
            s.push_str(&id.to_string());
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, CodecError> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                l.trim().parse::<u32>().map_err(|e| {
                    CodecError::InvalidInput(format!("line {}: {e}", i + 1))
                })
            })
            .collect::<Result<Vec<_>, _>>()
            .map(TokenSequence)
    }
}

/// Position within the per-element grammar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    ExpectSos,
    ExpectCatOrEos,
    ExpectX,
    ExpectY,
    ExpectW,
    ExpectH,
    ExpectStyle,
    /// Text slot; the byte counter lives in [`GrammarState::text_len`].
    ExpectTextOrEot,
    /// After a NULL in the text slot.
    ExpectEot,
    Done,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GrammarState {
    pub phase: Phase,
    /// Category of the element being emitted.
    pub category: u32,
    /// Text bytes emitted for the current element.
    pub text_len: usize,
    /// Completed elements so far.
    pub elements: usize,
}

impl GrammarState {
    pub fn start() -> Self {
        GrammarState {
            phase: Phase::ExpectSos,
            category: 0,
            text_len: 0,
            elements: 0,
        }
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    /// True between elements, i.e. right after SOS or an EOT.
    pub fn at_element_boundary(&self) -> bool {
        self.phase == Phase::ExpectCatOrEos
    }
}

/// Vocabulary plus schema-aware encode/decode and grammar.
#[derive(Clone, Debug)]
pub struct Codec {
    vocab: Vocabulary,
    schema: DocSchema,
    config: CodecConfig,
}

/// Output of [`Codec::decode`].
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub document: Document,
    /// EOS was missing; incomplete trailing elements were dropped.
    pub truncated: bool,
}

impl Codec {
    pub fn new(schema: DocSchema, config: CodecConfig) -> Result<Self, CodecError> {
        let vocab = Vocabulary::from_schema(&schema, config.style_enabled)?;
        if config.max_text_bytes == 0 {
            return Err(CodecError::Config("max_text_bytes must be positive".into()));
        }
        Ok(Codec {
            vocab,
            schema,
            config,
        })
    }

    pub fn from_spec(spec: &CodecSpec) -> Result<Self, CodecError> {
        Self::new(spec.schema.clone(), spec.config.clone())
    }

    pub fn spec(&self) -> CodecSpec {
        CodecSpec {
            schema: self.schema.clone(),
            config: self.config.clone(),
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn schema(&self) -> &DocSchema {
        &self.schema
    }

    pub fn config(&self) -> &CodecConfig {
        &self.config
    }

    /// A copy of this codec with a different sequence-length limit.
    pub fn with_max_len(&self, max_len: Option<usize>) -> Self {
        let mut c = self.clone();
        c.config.max_len = max_len;
        c
    }

    fn style_slot(&self) -> usize {
        usize::from(self.vocab.style_enabled)
    }

    /// The exact form `decode(encode(doc))` reproduces: reading order,
    /// quantized boxes, text cut to `max_text_bytes` on a char boundary,
    /// empty text treated as absent, styles dropped when the slot is off.
    pub fn canonicalize(&self, doc: &Document) -> Result<Document, CodecError> {
        let mut out = doc::quantize_document(&doc::canonical_order(doc))?;
        for el in &mut out.elements {
            el.text = el
                .text
                .take()
                .map(|t| truncate_utf8(&t, self.config.max_text_bytes).to_string())
                .filter(|t| !t.is_empty());
            if !self.vocab.style_enabled {
                el.style = None;
            }
        }
        Ok(out)
    }

    /// Token count of an encoded element.
    pub fn element_len(&self, el: &Element) -> usize {
        let text = el
            .text
            .as_deref()
            .map(|t| truncate_utf8(t, self.config.max_text_bytes).len())
            .filter(|&n| n > 0)
            .unwrap_or(1);
        5 + self.style_slot() + text + 1
    }

    /// `2 + sum(5 + style_slot + text_len + 1)`.
    pub fn encoded_len(&self, doc: &Document) -> usize {
        2 + doc.elements.iter().map(|e| self.element_len(e)).sum::<usize>()
    }

    /// Serializes a document in reading order.
    pub fn encode(&self, doc: &Document) -> Result<TokenSequence, CodecError> {
        let ordered = doc::canonical_order(doc);
        if ordered.elements.len() > self.schema.max_elements() {
            return Err(CodecError::Encoding(format!(
                "{} elements exceeds maximum {}",
                ordered.elements.len(),
                self.schema.max_elements()
            )));
        }
        let mut ids = Vec::with_capacity(self.encoded_len(&ordered));
        ids.push(SOS);
        for (i, el) in ordered.elements.iter().enumerate() {
            self.encode_element(el, ordered.canvas_w, ordered.canvas_h, &mut ids)
                .map_err(|e| CodecError::Encoding(format!("element {i}: {e}")))?;
        }
        ids.push(EOS);
        if let Some(max) = self.config.max_len {
            if ids.len() > max {
                return Err(CodecError::TooLong {
                    len: ids.len(),
                    max,
                });
            }
        }
        Ok(TokenSequence(ids))
    }

    /// Appends one element's tokens (CAT through EOT).
    pub fn encode_element(
        &self,
        el: &Element,
        canvas_w: f64,
        canvas_h: f64,
        out: &mut Vec<u32>,
    ) -> Result<(), CodecError> {
        let v = &self.vocab;
        if el.category >= v.num_categories() {
            return Err(CodecError::Encoding(format!(
                "category {} not in vocabulary",
                el.category
            )));
        }
        let q = quantize_bbox(&el.bbox, canvas_w, canvas_h)?;
        out.push(v.token_of(TokenKind::Cat, el.category as u32)?);
        for bin in [q.x, q.y, q.w, q.h] {
            out.push(v.token_of(TokenKind::Coord, bin as u32)?);
        }
        if v.style_enabled {
            match el.style {
                Some(s) if s < v.num_styles() => out.push(v.token_of(TokenKind::Style, s as u32)?),
                Some(s) => return Err(CodecError::Encoding(format!("style {s} not in vocabulary"))),
                None => out.push(NULL),
            }
        }
        let text = el
            .text
            .as_deref()
            .map(|t| truncate_utf8(t, self.config.max_text_bytes))
            .filter(|t| !t.is_empty());
        match text {
            Some(t) => {
                if !self.schema.is_textual(el.category) {
                    return Err(CodecError::Encoding(format!(
                        "text on non-textual category {}",
                        el.category
                    )));
                }
                for b in t.bytes() {
                    out.push(v.token_of(TokenKind::TextByte, b as u32)?);
                }
            }
            None => out.push(NULL),
        }
        out.push(EOT);
        Ok(())
    }

    /// Parses a token sequence under the grammar.
    pub fn decode(
        &self,
        tokens: &[u32],
        canvas_w: f64,
        canvas_h: f64,
    ) -> Result<Decoded, CodecError> {
        if !(canvas_w.is_finite() && canvas_w > 0.0 && canvas_h.is_finite() && canvas_h > 0.0) {
            return Err(CodecError::InvalidInput(format!(
                "invalid canvas {canvas_w}x{canvas_h}"
            )));
        }
        let mut state = GrammarState::start();
        let mut elements = Vec::new();
        let mut pending = PendingElement::default();
        for (pos, &id) in tokens.iter().enumerate() {
            let next = match self.step(&state, id) {
                Some(s) => s,
                None => {
                    return Err(CodecError::Parse {
                        position: pos,
                        expected: self.expected_kinds(&state),
                        found: self.vocab.describe(id),
                    })
                }
            };
            let (kind, value) = self.vocab.kind_of(id)?;
            match (state.phase, kind) {
                (Phase::ExpectCatOrEos, TokenKind::Cat) => {
                    pending = PendingElement {
                        category: value as usize,
                        ..Default::default()
                    }
                }
                (Phase::ExpectX, _) => pending.q.x = value as u8,
                (Phase::ExpectY, _) => pending.q.y = value as u8,
                (Phase::ExpectW, _) => pending.q.w = value as u8,
                (Phase::ExpectH, _) => pending.q.h = value as u8,
                (Phase::ExpectStyle, TokenKind::Style) => pending.style = Some(value as usize),
                (Phase::ExpectTextOrEot, TokenKind::TextByte) => {
                    pending.has_text = true;
                    pending.text.push(value as u8)
                }
                (Phase::ExpectTextOrEot | Phase::ExpectEot, TokenKind::Eot) => {
                    let p = std::mem::take(&mut pending);
                    elements.push(Element {
                        category: p.category,
                        bbox: dequantize_bbox(&p.q, canvas_w, canvas_h),
                        style: p.style,
                        text: p
                            .has_text
                            .then(|| String::from_utf8_lossy(&p.text).into_owned()),
                    });
                }
                _ => {}
            }
            state = next;
        }
        if state.phase == Phase::ExpectSos {
            return Err(CodecError::Parse {
                position: 0,
                expected: vec![TokenKind::Sos],
                found: "end of input".into(),
            });
        }
        Ok(Decoded {
            document: Document {
                id: String::new(),
                canvas_w,
                canvas_h,
                elements,
            },
            truncated: !state.is_done(),
        })
    }

    /// Grammar transition; `None` rejects the token.
    pub fn step(&self, state: &GrammarState, id: u32) -> Option<GrammarState> {
        let (kind, value) = self.vocab.kind_of(id).ok()?;
        let mut s = *state;
        use Phase::*;
        use TokenKind as K;
        s.phase = match (state.phase, kind) {
            (ExpectSos, K::Sos) => ExpectCatOrEos,
            (ExpectCatOrEos, K::Eos) => Done,
            (ExpectCatOrEos, K::Cat) if state.elements < self.schema.max_elements() => {
                s.category = value;
                s.text_len = 0;
                ExpectX
            }
            (ExpectX, K::Coord) => ExpectY,
            (ExpectY, K::Coord) => ExpectW,
            (ExpectW, K::Coord) => ExpectH,
            (ExpectH, K::Coord) if self.vocab.style_enabled => ExpectStyle,
            (ExpectH, K::Coord) => ExpectTextOrEot,
            (ExpectStyle, K::Style | K::Null) => ExpectTextOrEot,
            (ExpectTextOrEot, K::Null) if state.text_len == 0 => ExpectEot,
            (ExpectTextOrEot, K::TextByte)
                if state.text_len < self.config.max_text_bytes
                    && self.schema.is_textual(state.category as usize) =>
            {
                s.text_len += 1;
                ExpectTextOrEot
            }
            (ExpectTextOrEot, K::Eot) if state.text_len > 0 => {
                s.elements += 1;
                ExpectCatOrEos
            }
            (ExpectEot, K::Eot) => {
                s.elements += 1;
                ExpectCatOrEos
            }
            (Done, K::Pad) => Done,
            _ => return None,
        };
        Some(s)
    }

    /// Folds [`Codec::step`] over a token slice from the start state.
    /// Returns the final state or the position of the first rejected token.
    pub fn run_grammar(&self, tokens: &[u32]) -> Result<GrammarState, usize> {
        let mut state = GrammarState::start();
        for (pos, &id) in tokens.iter().enumerate() {
            state = self.step(&state, id).ok_or(pos)?;
        }
        Ok(state)
    }

    /// Boolean mask over the vocabulary of tokens legal in `state`.
    pub fn allowed_mask(&self, state: &GrammarState) -> Vec<bool> {
        let mut mask = vec![false; self.vocab.size()];
        self.fill_allowed(state, &mut mask);
        mask
    }

    pub fn fill_allowed(&self, state: &GrammarState, mask: &mut [bool]) {
        mask.iter_mut().for_each(|m| *m = false);
        let mut allow = |kind: TokenKind| {
            let (start, len) = self.vocab.range_of(kind);
            for m in &mut mask[start as usize..(start + len) as usize] {
                *m = true;
            }
        };
        for kind in self.expected_kinds(state) {
            allow(kind);
        }
    }

    /// Token kinds legal in `state`.
    pub fn expected_kinds(&self, state: &GrammarState) -> Vec<TokenKind> {
        use Phase::*;
        use TokenKind as K;
        match state.phase {
            ExpectSos => vec![K::Sos],
            ExpectCatOrEos if state.elements >= self.schema.max_elements() => vec![K::Eos],
            ExpectCatOrEos => vec![K::Cat, K::Eos],
            ExpectX | ExpectY | ExpectW | ExpectH => vec![K::Coord],
            ExpectStyle => vec![K::Style, K::Null],
            ExpectTextOrEot => {
                let textual = self.schema.is_textual(state.category as usize);
                let room = state.text_len < self.config.max_text_bytes;
                let mut v = Vec::new();
                if state.text_len == 0 {
                    v.push(K::Null);
                } else {
                    v.push(K::Eot);
                }
                if textual && room {
                    v.push(K::TextByte);
                }
                v
            }
            ExpectEot => vec![K::Eot],
            Done => vec![K::Pad],
        }
    }
}

#[derive(Default)]
struct PendingElement {
    category: usize,
    q: QuantBBox,
    style: Option<usize>,
    has_text: bool,
    text: Vec<u8>,
}

/// Longest prefix of `s` with at most `max` bytes ending on a char boundary.
pub fn truncate_utf8(s: &str, max: usize) -> &str {
    if s.len() <= max {
        return s;
    }
    let mut end = max;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    &s[..end]
}
