//! Word / sentence / report hierarchy from subword features.
//!
//! Subword features are the mean of the last (up to) 4 encoder layers at
//! each token position. Word features sum their subword span, sentence and
//! report features average theirs. The report feature is the mean over all
//! valid token positions, not a mean of sentence means.

use std::sync::Once;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

use super::encoder::LayerFeatures;
use super::tokenize::TokenizedReport;

/// How a word summarizes its subwords. Sum is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WordAggregation {
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextHierarchy<T> {
    /// (Q, D)
    pub t_w: Tensor<T>,
    /// (P, D)
    pub t_s: Tensor<T>,
    /// (D,)
    pub t_r: Vec<T>,
    pub sentence_of_word: Vec<usize>,
}

/// Number of trailing encoder layers averaged into subword features.
pub const SUBWORD_LAYERS: usize = 4;

static FEW_LAYERS_WARNING: Once = Once::new();

/// Graph-level hierarchy: takes the `L` layer outputs already on the tape
/// and appends subword averaging plus span aggregation.
pub(crate) fn build_hierarchy<T: Scalar>(
    tape: &mut Tape<T>,
    layer_vars: &[Var],
    tok: &TokenizedReport,
    word_agg: WordAggregation,
) -> Result<(Var, Var, Var)> {
    if layer_vars.is_empty() {
        return Err(Error::validation("encoder produced no layers"));
    }
    if tok.word_spans.is_empty() || tok.sentence_spans.is_empty() {
        return Err(Error::validation(
            "tokenized report has no word or sentence spans",
        ));
    }
    for &(lo, hi) in tok.word_spans.iter().chain(&tok.sentence_spans) {
        if lo >= hi {
            return Err(Error::validation(format!("empty span ({lo},{hi})")));
        }
        if hi > tok.valid_len {
            return Err(Error::validation(format!(
                "span ({lo},{hi}) exceeds valid length {}",
                tok.valid_len
            )));
        }
    }

    let l = layer_vars.len();
    let k = l.min(SUBWORD_LAYERS);
    if l < SUBWORD_LAYERS {
        FEW_LAYERS_WARNING.call_once(|| {
            eprintln!(
                "warning: encoder exposes {l} layer(s); averaging all of them \
                 instead of the last {SUBWORD_LAYERS}"
            );
        });
    }
    let mut acc = layer_vars[l - k];
    for &v in &layer_vars[l - k + 1..] {
        acc = tape.add(acc, v);
    }
    let sub = tape.scale(acc, T::one() / T::from_f64(k as f64));

    let t_w = tape.span_agg(
        sub,
        &tok.word_spans,
        matches!(word_agg, WordAggregation::Mean),
    );
    let t_s = tape.span_agg(sub, &tok.sentence_spans, true);
    let t_r = tape.span_agg(sub, &[(0, tok.valid_len)], true);
    Ok((t_w, t_s, t_r))
}

/// Value-level hierarchy over materialized layer features.
pub fn aggregate_hierarchy<T: Scalar>(
    feats: &LayerFeatures<T>,
    tok: &TokenizedReport,
) -> Result<TextHierarchy<T>> {
    aggregate_hierarchy_with(feats, tok, WordAggregation::Sum)
}

pub fn aggregate_hierarchy_with<T: Scalar>(
    feats: &LayerFeatures<T>,
    tok: &TokenizedReport,
    word_agg: WordAggregation,
) -> Result<TextHierarchy<T>> {
    if feats.tokens != tok.token_ids.len() {
        return Err(Error::validation(format!(
            "feature length {} does not match token length {}",
            feats.tokens,
            tok.token_ids.len()
        )));
    }
    let mut tape = Tape::new();
    let layer_vars: Vec<Var> = (0..feats.layers)
        .map(|l| {
            let t = Tensor::from_vec(&[feats.tokens, feats.dim], feats.layer(l).to_vec());
            tape.constant(&t)
        })
        .collect();
    let (t_w, t_s, t_r) = build_hierarchy(&mut tape, &layer_vars, tok, word_agg)?;
    Ok(TextHierarchy {
        t_w: Tensor::from_vec(&[tok.q(), feats.dim], tape.value(t_w).to_vec()),
        t_s: Tensor::from_vec(&[tok.p(), feats.dim], tape.value(t_s).to_vec()),
        t_r: tape.value(t_r).to_vec(),
        sentence_of_word: tok.sentence_of_word.clone(),
    })
}
