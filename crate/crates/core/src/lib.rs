//! Autoregressive structured document generation.
//!
//! Documents (canvas plus layout elements with optional style and text) are
//! serialized into a flat token sequence, modeled with a small decoder-only
//! transformer trained from scratch, and sampled under the sequence grammar
//! for document completion and text-box placement. A metrics harness scores
//! generated layouts.
//!
//! Module map:
//! - [`doc`]: data model, quantization, reading order, validation
//! - [`codec`]: vocabulary, encode/decode, grammar masks
//! - [`net`]: tensors, transformer forward/backward
//! - [`train`]: loss, Adam, training loop, checkpoints
//! - [`sample`]: constrained decoding and the generation tasks
//! - [`metrics`]: IoU, Hungarian matching, alignment, overlap, BDE, Fréchet
//! - [`corpus`]: JSONL records, COCO ingestion, synthetic pages, splits
//! - [`render`]: deterministic SVG output

pub mod codec;
pub mod corpus;
pub mod doc;
pub mod metrics;
pub mod net;
pub mod render;
pub mod sample;
pub mod train;

pub use codec::{Codec, CodecConfig, CodecSpec, TokenSequence, Vocabulary};
pub use doc::{BBox, DocSchema, Document, Element};
pub use net::{ModelConfig, ModelParams};
