//! Grammar-constrained decoding, document completion and text-box placement.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Codec, CodecError, GrammarState, TokenKind, TokenSequence, EOS, SOS};
use crate::doc::{self, Document};
use crate::net::{IncrementalDecoder, ModelParams, NetError, Scalar};

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("invalid sampling config: {0}")]
    InvalidConfig(String),
    #[error("prompt rejected by the grammar at position {position}")]
    InvalidPrompt { position: usize },
    #[error("no token is allowed by the grammar mask")]
    EmptyMask,
    #[error("token {token} is not allowed at position {position}")]
    ForbiddenToken { token: u32, position: usize },
    #[error("sequence of {len} tokens exceeds the context window of {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Decoding controls. Temperature 0 is greedy decoding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    pub temperature: f64,
    /// Keep only the `top_k` most likely allowed tokens; 0 disables.
    pub top_k: usize,
    /// Nucleus mass; 1.0 disables.
    pub top_p: f64,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            temperature: 1.0,
            top_k: 0,
            top_p: 1.0,
            max_new_tokens: 4096,
            seed: 0,
        }
    }
}

impl SampleConfig {
    /// Deterministic argmax decoding, the evaluation default.
    pub fn greedy() -> Self {
        SampleConfig {
            temperature: 0.0,
            ..SampleConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), SampleError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(SampleError::InvalidConfig(format!(
                "temperature must be finite and non-negative, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(SampleError::InvalidConfig(format!("top_p must lie in (0, 1], got {}", self.top_p)));
        }
        Ok(())
    }
}

fn finite_or_neg_inf(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Allowed id with the largest logit; ties go to the lowest id.
pub fn argmax_allowed<F: Scalar>(logits: &[F], mask: &[bool]) -> Option<u32> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (&z, &m)) in logits.iter().zip(mask).enumerate() {
        if !m {
            continue;
        }
        let z = finite_or_neg_inf(z.f64());
        if best.map_or(true, |(_, b)| z > b) {
            best = Some((i, z));
        }
    }
    best.map(|(i, _)| i as u32)
}

/// Draws one token: mask, temperature, top-k, top-p, then a categorical draw.
pub fn sample_next<F: Scalar>(
    logits: &[F],
    mask: &[bool],
    config: &SampleConfig,
    rng: &mut Xoshiro256PlusPlus,
) -> Result<u32, SampleError> {
    if logits.len() != mask.len() {
        return Err(SampleError::InvalidConfig(format!(
            "{} logits for a mask of {}",
            logits.len(),
            mask.len()
        )));
    }
    if config.temperature == 0.0 || config.top_k == 1 {
        return argmax_allowed(logits, mask).ok_or(SampleError::EmptyMask);
    }
    let mut cand: Vec<(u32, f64)> = logits
        .iter()
        .zip(mask)
        .enumerate()
        .filter(|(_, (_, &m))| m)
        .map(|(i, (&z, _))| (i as u32, finite_or_neg_inf(z.f64()) / config.temperature))
        .collect();
    if cand.is_empty() {
        return Err(SampleError::EmptyMask);
    }
    cand.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if config.top_k > 0 {
        cand.truncate(config.top_k);
    }
    let max = cand[0].1;
    if max == f64::NEG_INFINITY {
        return Ok(cand[0].0);
    }
    let mut probs: Vec<f64> = cand.iter().map(|&(_, z)| (z - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    if config.top_p < 1.0 {
        let mut acc = 0.0;
        let mut keep = probs.len();
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if acc >= config.top_p {
                keep = i + 1;
                break;
            }
        }
        probs.truncate(keep);
    }
    let mass: f64 = probs.iter().sum();
    let u = rng.gen::<f64>() * mass;
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(cand[i].0);
        }
    }
    Ok(cand[probs.len() - 1].0)
}

/// Incremental decoding state: tokens so far, grammar state and the logits
/// predicting the next token.
struct Session<'a, F> {
    codec: &'a Codec,
    dec: IncrementalDecoder<'a, F>,
    state: GrammarState,
    tokens: Vec<u32>,
    logits: Option<Vec<F>>,
    mask: Vec<bool>,
    context: usize,
}

impl<'a, F: Scalar> Session<'a, F> {
    fn new(params: &'a ModelParams<F>, codec: &'a Codec) -> Result<Self, SampleError> {
        if params.config.vocab_size != codec.vocab().size() {
            return Err(SampleError::InvalidConfig(format!(
                "model vocabulary {} does not match codec vocabulary {}",
                params.config.vocab_size,
                codec.vocab().size()
            )));
        }
        Ok(Session {
            codec,
            dec: IncrementalDecoder::new(params),
            state: GrammarState::start(),
            tokens: Vec::new(),
            logits: None,
            mask: vec![false; codec.vocab().size()],
            context: params.config.context_len,
        })
    }

    fn push(&mut self, id: u32) -> Result<(), SampleError> {
        let next = self.codec.step(&self.state, id).ok_or(SampleError::ForbiddenToken {
            token: id,
            position: self.tokens.len(),
        })?;
        self.tokens.push(id);
        self.state = next;
        self.logits = if self.tokens.len() <= self.context && !next.is_done() {
            Some(self.dec.step(id as usize)?)
        } else {
            None
        };
        Ok(())
    }

    /// Picks the next token under the grammar; `None` when the context is
    /// exhausted and the grammar leaves a choice.
    fn choose(&mut self, config: &SampleConfig, rng: &mut Xoshiro256PlusPlus) -> Result<Option<u32>, SampleError> {
        self.codec.fill_allowed(&self.state, &mut self.mask);
        let mut allowed = self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i as u32);
        let first = allowed.next().ok_or(SampleError::EmptyMask)?;
        if allowed.next().is_none() {
            return Ok(Some(first));
        }
        match &self.logits {
            Some(l) => sample_next(l, &self.mask, config, rng).map(Some),
            None => Ok(None),
        }
    }

    fn overflow(&self) -> SampleError {
        SampleError::ContextOverflow {
            len: self.tokens.len() + 1,
            max: self.context + 1,
        }
    }
}

/// Output of [`generate`].
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub tokens: TokenSequence,
    /// Stopped before EOS (token budget or context exhausted).
    pub truncated: bool,
}

/// Extends `prompt` under the grammar until EOS or `max_new_tokens`.
pub fn generate<F: Scalar>(
    params: &ModelParams<F>,
    codec: &Codec,
    prompt: &[u32],
    config: &SampleConfig,
) -> Result<Generated, SampleError> {
    config.validate()?;
    codec
        .run_grammar(prompt)
        .map_err(|position| SampleError::InvalidPrompt { position })?;
    let mut s = Session::new(params, codec)?;
    if prompt.len() > s.context + 1 {
        return Err(SampleError::ContextOverflow {
            len: prompt.len(),
            max: s.context + 1,
        });
    }
    for &t in prompt {
        s.push(t)?;
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(config.seed);
    let mut produced = 0;
    while !s.state.is_done() && produced < config.max_new_tokens {
        match s.choose(config, &mut rng)? {
            Some(id) => s.push(id)?,
            None => break,
        }
        produced += 1;
    }
    Ok(Generated {
        truncated: !s.state.is_done(),
        tokens: TokenSequence(s.tokens),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlacementMode {
    Single,
    Multiple,
}

/// A generation task over one document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TaskSpec {
    /// Keep the first `k` elements in reading order and generate the rest.
    Completion { k: usize },
    /// Regenerate geometry, style and text of `targets` (indices into the
    /// input document's element list) with their categories fixed.
    TextBoxPlacement { targets: Vec<usize>, mode: PlacementMode },
}

impl TaskSpec {
    pub fn validate(&self, doc: &Document, codec: &Codec) -> Result<(), SampleError> {
        match self {
            TaskSpec::Completion { k } => {
                if *k > doc.elements.len() {
                    return Err(SampleError::InvalidTask(format!(
                        "k = {k} exceeds {} elements",
                        doc.elements.len()
                    )));
                }
            }
            TaskSpec::TextBoxPlacement { targets, mode } => {
                if *mode == PlacementMode::Single && targets.len() != 1 {
                    return Err(SampleError::InvalidTask(format!(
                        "single placement needs exactly one target, got {}",
                        targets.len()
                    )));
                }
                let mut seen = vec![false; doc.elements.len()];
                for &t in targets {
                    let el = doc.elements.get(t).ok_or_else(|| {
                        SampleError::InvalidTask(format!("target {t} out of range for {} elements", doc.elements.len()))
                    })?;
                    if std::mem::replace(&mut seen[t], true) {
                        return Err(SampleError::InvalidTask(format!("target {t} listed twice")));
                    }
                    if !codec.schema().is_textual(el.category) {
                        return Err(SampleError::InvalidTask(format!(
                            "target {t} has non-text category {}",
                            el.category
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Targets used when none are given: every text-bearing element for
/// multiple placement, the first one in reading order for single placement.
/// Indices refer to the document's own element list.
pub fn default_targets(doc: &Document, codec: &Codec, mode: PlacementMode) -> Vec<usize> {
    let textual = doc::canonical_permutation(doc)
        .into_iter()
        .filter(|&i| codec.schema().is_textual(doc.elements[i].category));
    match mode {
        PlacementMode::Single => textual.take(1).collect(),
        PlacementMode::Multiple => {
            let mut v: Vec<usize> = textual.collect();
            v.sort_unstable();
            v
        }
    }
}

/// Output of a completion or placement run.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskOutput {
    /// Generated document, elements in sequence order.
    pub document: Document,
    /// Canonicalized input: the ground truth the output is compared with.
    pub reference: Document,
    /// Positions of the placed elements in both documents (placement only).
    pub targets: Vec<usize>,
    pub truncated: bool,
}

/// Encodes the first `k` canonical elements as the prompt and generates the
/// rest of the document.
pub fn complete_document<F: Scalar>(
    params: &ModelParams<F>,
    codec: &Codec,
    doc: &Document,
    k: usize,
    config: &SampleConfig,
) -> Result<TaskOutput, SampleError> {
    TaskSpec::Completion { k }.validate(doc, codec)?;
    let reference = codec.canonicalize(doc)?;
    let mut prompt = vec![SOS];
    for el in &reference.elements[..k] {
        codec.encode_element(el, reference.canvas_w, reference.canvas_h, &mut prompt)?;
    }
    if prompt.len() > params.config.context_len {
        return Err(SampleError::ContextOverflow {
            len: prompt.len(),
            max: params.config.context_len,
        });
    }
    let g = generate(params, codec, &prompt, config)?;
    let decoded = codec.decode(g.tokens.ids(), reference.canvas_w, reference.canvas_h)?;
    let mut document = decoded.document;
    document.id = doc.id.clone();
    Ok(TaskOutput {
        document,
        reference,
        targets: Vec::new(),
        truncated: g.truncated,
    })
}

/// Regenerates the target elements in reading order. Non-target elements are
/// teacher-forced from the document; each target's category token is forced
/// and the rest of the element is sampled. Earlier placements stay in the
/// context of later ones.
pub fn place_text_boxes<F: Scalar>(
    params: &ModelParams<F>,
    codec: &Codec,
    doc: &Document,
    targets: &[usize],
    mode: PlacementMode,
    config: &SampleConfig,
) -> Result<TaskOutput, SampleError> {
    config.validate()?;
    TaskSpec::TextBoxPlacement {
        targets: targets.to_vec(),
        mode,
    }
    .validate(doc, codec)?;
    let perm = doc::canonical_permutation(doc);
    let mut is_target = vec![false; doc.elements.len()];
    let mut canon_targets = Vec::with_capacity(targets.len());
    for (pos, &orig) in perm.iter().enumerate() {
        if targets.contains(&orig) {
            is_target[pos] = true;
            canon_targets.push(pos);
        }
    }
    let reference = codec.canonicalize(doc)?;
    let (cw, ch) = (reference.canvas_w, reference.canvas_h);
    let mut s = Session::new(params, codec)?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(config.seed);
    let mut buf = Vec::new();
    s.push(SOS)?;
    for (pos, el) in reference.elements.iter().enumerate() {
        if !is_target[pos] {
            buf.clear();
            codec.encode_element(el, cw, ch, &mut buf)?;
            for &t in &buf {
                s.push(t)?;
            }
            continue;
        }
        let cat = codec.vocab().token_of(TokenKind::Cat, el.category as u32)?;
        s.push(cat)?;
        while !s.state.at_element_boundary() {
            let id = s.choose(config, &mut rng)?.ok_or_else(|| s.overflow())?;
            s.push(id)?;
        }
    }
    s.push(EOS)?;
    let decoded = codec.decode(&s.tokens, cw, ch)?;
    let mut document = decoded.document;
    document.id = doc.id.clone();
    Ok(TaskOutput {
        document,
        reference,
        targets: canon_targets,
        truncated: false,
    })
}

/// Runs either task.
pub fn run_task<F: Scalar>(
    params: &ModelParams<F>,
    codec: &Codec,
    doc: &Document,
    task: &TaskSpec,
    config: &SampleConfig,
) -> Result<TaskOutput, SampleError> {
    match task {
        TaskSpec::Completion { k } => complete_document(params, codec, doc, *k, config),
        TaskSpec::TextBoxPlacement { targets, mode } => place_text_boxes(params, codec, doc, targets, *mode, config),
    }
}
