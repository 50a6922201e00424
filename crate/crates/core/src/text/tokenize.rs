//! Report tokenization with word/sentence span bookkeeping.

use super::vocab::{split_sentences, split_words, Vocab};
use crate::error::{Error, Result};

/// Token ids padded to a fixed length `H`, plus the half-open spans that
/// locate each word and sentence inside the id sequence.
///
/// Invariants: word spans are disjoint, ordered, and each lies inside
/// exactly one sentence span; spans only cover indices below `valid_len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedReport {
    pub token_ids: Vec<u32>,
    pub word_spans: Vec<(usize, usize)>,
    pub sentence_spans: Vec<(usize, usize)>,
    /// Sentence index owning each word.
    pub sentence_of_word: Vec<usize>,
    pub valid_len: usize,
    /// True when the report did not fit in `H` tokens.
    pub truncated: bool,
}

impl TokenizedReport {
    pub fn q(&self) -> usize {
        self.word_spans.len()
    }

    pub fn p(&self) -> usize {
        self.sentence_spans.len()
    }
}

/// Tokenize free text: sentences split on terminal punctuation, words on
/// whitespace, subwords per the vocabulary. The sequence is truncated or
/// padded to `max_tokens`.
pub fn tokenize(text: &str, vocab: &Vocab, max_tokens: usize) -> Result<TokenizedReport> {
    let sentences = split_sentences(text);
    let mut token_ids: Vec<u32> = Vec::new();
    let mut word_spans = Vec::new();
    let mut sentence_spans = Vec::new();
    let mut sentence_of_word = Vec::new();
    let mut truncated = false;

    'outer: for sentence in &sentences {
        let words = split_words(sentence);
        if words.is_empty() {
            continue;
        }
        let sent_start = token_ids.len();
        let sent_idx = sentence_spans.len();
        let mut sent_word_count = 0usize;
        for word in &words {
            let ids = vocab.encode_word(word);
            let start = token_ids.len();
            if start >= max_tokens {
                truncated = true;
                break;
            }
            let room = max_tokens - start;
            if ids.len() > room {
                // the word only partially fits; keep what fits
                truncated = true;
                token_ids.extend_from_slice(&ids[..room]);
                word_spans.push((start, start + room));
                sentence_of_word.push(sent_idx);
                sent_word_count += 1;
                break;
            }
            token_ids.extend_from_slice(&ids);
            word_spans.push((start, start + ids.len()));
            sentence_of_word.push(sent_idx);
            sent_word_count += 1;
        }
        if sent_word_count > 0 {
            sentence_spans.push((sent_start, token_ids.len()));
        }
        if token_ids.len() >= max_tokens {
            truncated = truncated || sentences.len() > sent_idx + 1;
            break 'outer;
        }
    }

    if sentence_spans.is_empty() {
        return Err(Error::validation("text contains no tokenizable sentences"));
    }

    let valid_len = token_ids.len();
    token_ids.resize(max_tokens, vocab.pad_id());

    Ok(TokenizedReport {
        token_ids,
        word_spans,
        sentence_spans,
        sentence_of_word,
        valid_len,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_match_whitespace_and_punctuation_oracle() {
        let text = "A red circle. A blue box.";
        // oracle: count sentences by '.' and words by whitespace
        let oracle_p = text.matches('.').count();
        let oracle_q = text.split_whitespace().count();
        let v = Vocab::build([text]);
        let t = tokenize(text, &v, 32).unwrap();
        assert_eq!(t.p(), oracle_p);
        assert_eq!(t.p(), 2);
        assert_eq!(t.q(), oracle_q);
        assert_eq!(t.q(), 6);
        assert!(!t.truncated);
    }

    #[test]
    fn empty_text_is_validation_error() {
        let v = Vocab::build(["word."]);
        assert!(tokenize("", &v, 16).is_err());
        assert!(tokenize("   ", &v, 16).is_err());
    }

    #[test]
    fn subword_split_gives_one_word_span_of_len_two() {
        // vocab lookup oracle: the file maps edema -> two ids
        let v = Vocab::parse("<pad> 0\n<unk> 1\nedema 2 3\n").unwrap();
        assert_eq!(v.lookup("edema").unwrap().len(), 2);
        let t = tokenize("edema.", &v, 8).unwrap();
        assert_eq!(t.q(), 1);
        assert_eq!(t.word_spans[0], (0, 2));
        assert_eq!(t.valid_len, 2);
        assert_eq!(&t.token_ids[..2], &[2, 3]);
        assert!(t.token_ids[2..].iter().all(|&id| id == v.pad_id()));
    }

    #[test]
    fn overlong_word_truncates_without_error() {
        let v = Vocab::parse("<pad> 0\n<unk> 1\nlong 2 3 4 5\n").unwrap();
        let t = tokenize("long.", &v, 3).unwrap();
        assert!(t.truncated);
        assert_eq!(t.valid_len, 3);
        assert_eq!(t.word_spans, vec![(0, 3)]);
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let v = Vocab::build(["a circle."]);
        let t = tokenize("a mystery.", &v, 8).unwrap();
        assert_eq!(t.token_ids[1], v.unk_id());
    }

    #[test]
    fn spans_are_ordered_disjoint_and_nested() {
        let v = Vocab::parse("<pad> 0\n<unk> 1\na 2\nred 3 4\ncircle 5\nbox 6 7 8\n").unwrap();
        let t = tokenize("a red circle. a box.", &v, 32).unwrap();
        let mut prev_end = 0;
        for &(lo, hi) in &t.word_spans {
            assert!(lo >= prev_end && lo < hi && hi <= t.valid_len);
            prev_end = hi;
        }
        for (w, &(lo, hi)) in t.word_spans.iter().enumerate() {
            let s = t.sentence_of_word[w];
            let (slo, shi) = t.sentence_spans[s];
            assert!(
                slo <= lo && hi <= shi,
                "word span must nest in its sentence"
            );
        }
    }

    #[test]
    fn truncation_drops_trailing_sentences() {
        let v = Vocab::build(["aa bb. cc dd. ee ff."]);
        let t = tokenize("aa bb. cc dd. ee ff.", &v, 4).unwrap();
        assert!(t.truncated);
        assert_eq!(t.p(), 2);
        assert_eq!(t.valid_len, 4);
    }
}
