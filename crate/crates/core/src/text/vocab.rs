//! Tokenizer configuration: surface form -> subword id sequence.
//!
//! The on-disk form is a plain text file, one entry per line:
//!
//! ```text
//! # comment
//! <pad> 0
//! <unk> 1
//! circle 4 5
//! ```
//!
//! A surface form may map to several ids (subword splitting). `<pad>` and
//! `<unk>` are required. The canonical rendering (specials first, then
//! surfaces sorted) is what gets hashed into checkpoints.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    entries: BTreeMap<String, Vec<u32>>,
    pad_id: u32,
    unk_id: u32,
    size: u32,
}

impl Vocab {
    /// Build a vocabulary from raw texts: one id per distinct lowercased
    /// word, ids assigned in sorted order after the specials.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words: Vec<String> = Vec::new();
        for t in texts {
            for s in split_sentences(t) {
                for w in split_words(&s) {
                    words.push(w);
                }
            }
        }
        words.sort();
        words.dedup();
        let mut entries = BTreeMap::new();
        entries.insert(PAD_TOKEN.to_string(), vec![0]);
        entries.insert(UNK_TOKEN.to_string(), vec![1]);
        for (i, w) in words.into_iter().enumerate() {
            entries.insert(w, vec![i as u32 + 2]);
        }
        let size = entries.values().flatten().copied().max().unwrap_or(1) + 1;
        Vocab {
            entries,
            pad_id: 0,
            unk_id: 1,
            size,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut max_id = 0u32;
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let surface = parts.next().unwrap().to_string();
            let ids: Vec<u32> = parts
                .map(|p| {
                    p.parse::<u32>().map_err(|_| Error::Parse {
                        line: idx + 1,
                        message: format!("bad id {p:?}"),
                    })
                })
                .collect::<Result<_>>()?;
            if ids.is_empty() {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("entry {surface:?} has no ids"),
                });
            }
            max_id = max_id.max(*ids.iter().max().unwrap());
            if entries.insert(surface.clone(), ids).is_some() {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("duplicate entry {surface:?}"),
                });
            }
        }
        let pad = entries
            .get(PAD_TOKEN)
            .ok_or_else(|| Error::validation("missing <pad> entry"))?;
        let unk = entries
            .get(UNK_TOKEN)
            .ok_or_else(|| Error::validation("missing <unk> entry"))?;
        if pad.len() != 1 || unk.len() != 1 {
            return Err(Error::validation("<pad>/<unk> must map to exactly one id"));
        }
        let (pad_id, unk_id) = (pad[0], unk[0]);
        Ok(Vocab {
            entries,
            pad_id,
            unk_id,
            size: max_id + 1,
        })
    }

    /// Canonical text rendering; `parse(render())` is identity.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let fmt_entry = |out: &mut String, k: &str, ids: &[u32]| {
            out.push_str(k);
            for id in ids {
                out.push(' ');
                out.push_str(&id.to_string());
            }
            out.push('\n');
        };
        fmt_entry(&mut out, PAD_TOKEN, &[self.pad_id]);
        fmt_entry(&mut out, UNK_TOKEN, &[self.unk_id]);
        for (k, ids) in &self.entries {
            if k == PAD_TOKEN || k == UNK_TOKEN {
                continue;
            }
            fmt_entry(&mut out, k, ids);
        }
        out
    }

    pub fn pad_id(&self) -> u32 {
        self.pad_id
    }

    pub fn unk_id(&self) -> u32 {
        self.unk_id
    }

    /// One past the largest id; embedding tables are sized by this.
    pub fn size(&self) -> usize {
        self.size as usize
    }

    pub fn lookup(&self, word: &str) -> Option<&[u32]> {
        self.entries.get(word).map(|v| v.as_slice())
    }

    /// Subword ids for a word; unknown words map to `[unk]`.
    pub fn encode_word(&self, word: &str) -> Vec<u32> {
        self.entries
            .get(word)
            .cloned()
            .unwrap_or_else(|| vec![self.unk_id])
    }
}

/// Sentence splitting: terminal `.`, `?`, `!`, `;`. Empty segments are
/// dropped.
pub fn split_sentences(text: &str) -> Vec<String> {
    text.split(['.', '?', '!', ';'])
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.to_string())
        .collect()
}

/// Word splitting: whitespace, lowercased, outer punctuation stripped.
pub fn split_words(sentence: &str) -> Vec<String> {
    sentence
        .split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_assigns_sorted_ids() {
        let v = Vocab::build(["b a. c b."]);
        assert_eq!(v.encode_word("a"), vec![2]);
        assert_eq!(v.encode_word("b"), vec![3]);
        assert_eq!(v.encode_word("c"), vec![4]);
        assert_eq!(v.encode_word("zzz"), vec![v.unk_id()]);
        assert_eq!(v.size(), 5);
    }

    #[test]
    fn parse_render_round_trip() {
        let v = Vocab::build(["a red circle."]);
        let rendered = v.render();
        let parsed = Vocab::parse(&rendered).unwrap();
        assert_eq!(parsed, v);
        assert_eq!(parsed.render(), rendered);
    }

    #[test]
    fn parse_accepts_subword_entries() {
        let text = "<pad> 0\n<unk> 1\nedema 2 3\n";
        let v = Vocab::parse(text).unwrap();
        assert_eq!(v.encode_word("edema"), vec![2, 3]);
        assert_eq!(v.size(), 4);
    }

    #[test]
    fn parse_requires_specials() {
        assert!(Vocab::parse("a 2\n").is_err());
    }

    #[test]
    fn sentence_and_word_splitting() {
        let s = split_sentences("A red circle. A blue box.");
        assert_eq!(s, vec!["A red circle", "A blue box"]);
        assert_eq!(split_words("A red, circle!"), vec!["a", "red", "circle"]);
    }
}
