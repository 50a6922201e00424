//! Text side of the model: tokenization, the pluggable encoder contract with
//! its built-in toy implementation, hierarchy aggregation, and report
//! augmentation.

mod augment;
mod encoder;
mod hierarchy;
mod tokenize;
mod vocab;

pub use augment::{augment_report, AugmentParams};
pub use encoder::{encode_text, LayerFeatures, TextEncoder, ToyTextEncoder};
pub(crate) use hierarchy::build_hierarchy;
pub use hierarchy::{
    aggregate_hierarchy, aggregate_hierarchy_with, TextHierarchy, WordAggregation,
};
pub use tokenize::{tokenize, TokenizedReport};
pub use vocab::{split_sentences, split_words, Vocab};
