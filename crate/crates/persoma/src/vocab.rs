//! Closed word-level vocabulary for the toy decoder.
//!
//! Covers everything the decoder must produce (genre names, the target
//! template, "None") and everything it may consume (the task instruction,
//! text-baseline histories built from the synthetic word pools, rating
//! literals). Out-of-vocabulary words map to `<unk>`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::genres::{genre_words, ALL_GENRES, FILLER_WORDS};

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;

const PUNCTUATION: [&str; 4] = [":", ",", ".", ";"];

/// Words of the fixed task instruction prepended to every example.
pub const INSTRUCTION: &str = "predict genre preferences :";

#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    by_exact: HashMap<String, TokenId>,
    by_lower: HashMap<String, TokenId>,
}

impl Vocab {
    /// The standard vocabulary used by every experiment in this crate.
    pub fn standard() -> Vocab {
        let mut tokens: Vec<String> = vec![
            "<pad>".into(),
            "<bos>".into(),
            "<eos>".into(),
            "<unk>".into(),
        ];
        tokens.extend(PUNCTUATION.iter().map(|s| s.to_string()));
        for w in [
            "Liked",
            "Not",
            "Genres",
            "None",
            "Title",
            "Description",
            "Rating",
        ] {
            tokens.push(w.into());
        }
        for g in ALL_GENRES {
            tokens.push(g.name().into());
        }
        for half_steps in 1..=10u32 {
            tokens.push(format!("{:.1}", half_steps as f64 * 0.5));
        }
        for w in ["predict", "genre", "preferences"] {
            tokens.push(w.into());
        }
        for g in ALL_GENRES {
            for w in genre_words(g) {
                tokens.push(w.into());
            }
        }
        for w in FILLER_WORDS {
            tokens.push(w.into());
        }
        Vocab::from_tokens(tokens).expect("standard vocabulary is well-formed")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Vocab> {
        let mut by_exact = HashMap::new();
        let mut by_lower = HashMap::new();
        for (id, tok) in tokens.iter().enumerate() {
            if by_exact.insert(tok.clone(), id).is_some() {
                return Err(Error::Contract(format!("duplicate vocabulary token '{tok}'")));
            }
            by_lower.entry(tok.to_ascii_lowercase()).or_insert(id);
        }
        Ok(Vocab {
            tokens,
            by_exact,
            by_lower,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id]
    }

    /// Exact match first, then case-insensitive, then `<unk>`.
    pub fn lookup(&self, word: &str) -> TokenId {
        if let Some(&id) = self.by_exact.get(word) {
            return id;
        }
        if let Some(&id) = self.by_lower.get(&word.to_ascii_lowercase()) {
            return id;
        }
        UNK
    }

    pub fn id_of(&self, word: &str) -> Option<TokenId> {
        self.by_exact.get(word).copied()
    }

    /// Splits on whitespace, then peels `: , . ;` into their own tokens. A
    /// `.` between two digits stays inside the word so rating literals like
    /// `4.5` survive as one token.
    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        let mut ids = Vec::new();
        for chunk in text.split_whitespace() {
            let chars: Vec<char> = chunk.chars().collect();
            let mut word = String::new();
            for (i, &c) in chars.iter().enumerate() {
                let is_punct = matches!(c, ':' | ',' | '.' | ';');
                let decimal_point = c == '.'
                    && i > 0
                    && i + 1 < chars.len()
                    && chars[i - 1].is_ascii_digit()
                    && chars[i + 1].is_ascii_digit();
                if is_punct && !decimal_point {
                    if !word.is_empty() {
                        ids.push(self.lookup(&word));
                        word.clear();
                    }
                    ids.push(self.lookup(&c.to_string()));
                } else {
                    word.push(c);
                }
            }
            if !word.is_empty() {
                ids.push(self.lookup(&word));
            }
        }
        ids
    }

    /// Joins tokens with single spaces, omitting the space before
    /// punctuation. Special tokens are skipped.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for &id in ids {
            if id == PAD || id == BOS || id == EOS {
                continue;
            }
            let tok = self.token(id);
            let is_punct = PUNCTUATION.contains(&tok);
            if !out.is_empty() && !is_punct {
                out.push(' ');
            }
            out.push_str(tok);
        }
        out
    }

    /// One token per line, in id order.
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.tokens.join("\n"))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let text = fs::read_to_string(path)?;
        Vocab::from_tokens(text.lines().map(|l| l.to_string()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_vocab_is_closed_over_targets_and_instruction() {
        let v = Vocab::standard();
        assert!(v.len() > 100 && v.len() < 140, "vocab size {}", v.len());
        let target = "Liked Genres: Action, Comedy. Not Liked Genres: Romance";
        for &id in &v.tokenize(target) {
            assert_ne!(id, UNK, "unk inside {target:?}");
        }
        for &id in &v.tokenize(INSTRUCTION) {
            assert_ne!(id, UNK);
        }
    }

    #[test]
    fn tokenize_keeps_rating_literals_whole() {
        let v = Vocab::standard();
        let ids = v.tokenize("Rating: 4.5;");
        let words: Vec<&str> = ids.iter().map(|&i| v.token(i)).collect();
        assert_eq!(words, vec!["Rating", ":", "4.5", ";"]);
    }

    #[test]
    fn detokenize_round_trips_the_target_template() {
        let v = Vocab::standard();
        let s = "Liked Genres: Drama, Sci-Fi. Not Liked Genres: None";
        assert_eq!(v.detokenize(&v.tokenize(s)), s);
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let v = Vocab::standard();
        assert_eq!(v.tokenize("zebra"), vec![UNK]);
        assert_eq!(v.lookup("drama"), v.lookup("Drama"));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = Vocab::standard();
        v.save(&path).unwrap();
        let w = Vocab::load(&path).unwrap();
        assert_eq!(v.len(), w.len());
        for id in 0..v.len() {
            assert_eq!(v.token(id), w.token(id));
        }
    }
}
