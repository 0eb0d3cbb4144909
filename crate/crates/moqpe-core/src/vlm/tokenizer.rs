//! Whitespace word tokenizer with byte fallback for out-of-vocabulary words.
//!
//! Vocabulary layout: ids 0..6 are the special tokens, 6..262 the raw byte
//! tokens, words follow in first-seen corpus order.

use super::config::SpecialTokens;
use crate::error::{Error, Result};
use std::collections::HashMap;

pub const BYTE_BASE: u32 = 6;
pub const WORD_BASE: u32 = BYTE_BASE + 256;

#[derive(Debug, Clone)]
pub struct Tokenizer {
    words: Vec<String>,
    index: HashMap<String, u32>,
    specials: SpecialTokens,
}

impl Tokenizer {
    /// Collects the word vocabulary from whitespace-split corpus lines,
    /// first-seen order, case preserved.
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words = Vec::new();
        let mut index = HashMap::new();
        for line in corpus {
            for w in line.split_whitespace() {
                if !index.contains_key(w) {
                    index.insert(w.to_string(), WORD_BASE + words.len() as u32);
                    words.push(w.to_string());
                }
            }
        }
        Self { words, index, specials: SpecialTokens::default() }
    }

    pub fn from_words(words: Vec<String>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), WORD_BASE + i as u32).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary word {w:?}")));
            }
        }
        Ok(Self { words, index, specials: SpecialTokens::default() })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn vocab_size(&self) -> usize {
        WORD_BASE as usize + self.words.len()
    }

    pub fn specials(&self) -> &SpecialTokens {
        &self.specials
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        for w in text.split_whitespace() {
            match self.index.get(w) {
                Some(&id) => ids.push(id),
                None => ids.extend(w.bytes().map(|b| BYTE_BASE + b as u32)),
            }
        }
        ids
    }

    /// Words joined by single spaces; byte runs merge back into one word;
    /// special tokens are dropped.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut parts: Vec<String> = Vec::new();
        let mut byte_run: Vec<u8> = Vec::new();
        let mut flush = |run: &mut Vec<u8>, parts: &mut Vec<String>| {
            if !run.is_empty() {
                parts.push(String::from_utf8_lossy(run).into_owned());
                run.clear();
            }
        };
        for &id in ids {
            if (BYTE_BASE..WORD_BASE).contains(&id) {
                byte_run.push((id - BYTE_BASE) as u8);
            } else if id >= WORD_BASE {
                flush(&mut byte_run, &mut parts);
                if let Some(w) = self.words.get((id - WORD_BASE) as usize) {
                    parts.push(w.clone());
                }
            } else {
                flush(&mut byte_run, &mut parts);
            }
        }
        flush(&mut byte_run, &mut parts);
        parts.join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_for_corpus_sentences() {
        let tok = Tokenizer::build(["This SEM image shows fibers", "magnified 225 times"]);
        let s = "This SEM image shows fibers magnified 225 times";
        assert_eq!(tok.decode(&tok.encode(s)), s);
    }

    #[test]
    fn oov_words_fall_back_to_bytes_and_survive() {
        let tok = Tokenizer::build(["known words only"]);
        let ids = tok.encode("known unseen");
        assert_eq!(ids[0], WORD_BASE);
        assert!(ids[1..].iter().all(|&id| (BYTE_BASE..WORD_BASE).contains(&id)));
        assert_eq!(tok.decode(&ids), "known unseen");
    }

    #[test]
    fn specials_are_dropped_on_decode() {
        let tok = Tokenizer::build(["hello"]);
        let sp = *tok.specials();
        let ids = vec![sp.decode, WORD_BASE, sp.eos];
        assert_eq!(tok.decode(&ids), "hello");
    }

    #[test]
    fn vocab_is_first_seen_order_and_dedup() {
        let tok = Tokenizer::build(["b a b", "a c"]);
        assert_eq!(tok.words(), &["b", "a", "c"]);
        assert_eq!(tok.vocab_size(), WORD_BASE as usize + 3);
    }

    #[test]
    fn from_words_rejects_duplicates() {
        assert!(Tokenizer::from_words(vec!["a".into(), "a".into()]).is_err());
    }
}
