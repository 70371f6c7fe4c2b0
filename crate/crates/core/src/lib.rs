//! Corpus compiler for multi-grained concept annotations.
//!
//! The crate turns detection-style annotations (object boxes, attribute and
//! relationship labels, captions, label descriptions) into image-text
//! interleaved documents and discrete token sequences ready for
//! autoregressive multimodal pre-training.
//!
//! Stages, in pipeline order:
//!
//! * [`schema`]: canonical data model and input parsing/validation.
//! * [`cleanse`]: frequency pruning, image filters, canvas resize and
//!   concept-coverage downsampling.
//! * [`regions`]: square crops, IoA label merging, dedup and 3x3 locations.
//! * [`captions`]: caption candidate filter/rank/select against a scorer.
//! * [`compose`]: structured pre-training templates and SFT templates.
//! * [`sequence`]: tokenizer contracts, assembly, packing and loss weights.
//! * [`reporting`]: corpus statistics, histograms and concept overlap.
//! * [`pipeline`]: end-to-end build used by the `mgic` CLI.

pub mod captions;
pub mod cleanse;
pub mod compose;
pub mod pipeline;
pub mod regions;
pub mod reporting;
pub mod schema;
pub mod seed;
pub mod sequence;

/// Side length of the square canvas every image is resized to.
pub const CANVAS: u32 = 224;
