use std::collections::HashMap;
use std::sync::OnceLock;

use crate::error::{Error, Result};

use super::tables;

pub const PAD: usize = 0;
pub const ARROW: usize = 1;
pub const COMMA: usize = 2;
pub const LBRACKET: usize = 3;
pub const RBRACKET: usize = 4;
const LOWER0: usize = 5;
const UPPER0: usize = LOWER0 + 26;
const DIGIT0: usize = UPPER0 + 26;

/// Bijection between token strings and ids.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    longest: usize,
}

impl Tokenizer {
    /// Padding, punctuation, letters and digits (67 ids).
    pub fn core() -> Self {
        let mut tokens: Vec<String> = ["<pad>", "→", ",", "[", "]"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        tokens.extend(('a'..='z').map(String::from));
        tokens.extend(('A'..='Z').map(String::from));
        tokens.extend(('0'..='9').map(String::from));
        Self::from_tokens(tokens)
    }

    /// Core tokens plus every mapping-table word.
    pub fn standard() -> &'static Self {
        static TOK: OnceLock<Tokenizer> = OnceLock::new();
        TOK.get_or_init(|| Self::core().with_words(&tables::all_words()))
    }

    /// Appends word tokens not already present.
    pub fn with_words(mut self, words: &[&str]) -> Self {
        for w in words {
            if !self.index.contains_key(*w) {
                self.tokens.push(w.to_string());
            }
        }
        Self::from_tokens(self.tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        let longest = tokens.iter().map(|t| t.chars().count()).max().unwrap_or(1);
        Self {
            tokens,
            index,
            longest,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Result<usize> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("unknown token `{token}`")))
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens.get(id).map(String::as_str).ok_or(Error::Index {
            what: "token id",
            index: id,
            limit: self.tokens.len(),
        })
    }

    pub fn lower(i: usize) -> usize {
        LOWER0 + i % 26
    }

    pub fn upper(i: usize) -> usize {
        UPPER0 + i % 26
    }

    pub fn digit(i: usize) -> usize {
        DIGIT0 + i % 10
    }

    /// Alphabet index of a lowercase-letter id.
    pub fn lower_index(id: usize) -> Option<usize> {
        (LOWER0..UPPER0).contains(&id).then(|| id - LOWER0)
    }

    pub fn lowercase_ids() -> Vec<usize> {
        (0..26).map(Self::lower).collect()
    }

    pub fn uppercase_ids() -> Vec<usize> {
        (0..26).map(Self::upper).collect()
    }

    fn is_punct(s: &str) -> bool {
        matches!(s, "→" | "," | "[" | "]")
    }

    /// Renders ids as text: tokens are space-separated, except that list
    /// punctuation inside brackets is written compactly (`[a,b,c]`).
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut out = String::new();
        let mut depth = 0usize;
        let mut prev: Option<&str> = None;
        for &id in ids {
            let tok = self.token(id)?;
            if let Some(p) = prev {
                let tight = depth > 0 && (p == "[" || p == "," || tok == "]" || tok == ",");
                if !tight {
                    out.push(' ');
                }
            }
            match tok {
                "[" => depth += 1,
                "]" => depth = depth.saturating_sub(1),
                _ => {}
            }
            out.push_str(tok);
            prev = Some(tok);
        }
        Ok(out)
    }

    /// Splits on whitespace, then greedily matches the longest known token.
    /// Multi-character tokens must end at a chunk end or punctuation.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        let mut ids = Vec::new();
        for chunk in text.split_whitespace() {
            let chars: Vec<char> = chunk.chars().collect();
            let mut i = 0;
            while i < chars.len() {
                let mut matched = None;
                for len in (1..=self.longest.min(chars.len() - i)).rev() {
                    let cand: String = chars[i..i + len].iter().collect();
                    let Some(&id) = self.index.get(&cand) else {
                        continue;
                    };
                    let boundary =
                        i + len == chars.len() || Self::is_punct(&chars[i + len].to_string());
                    if len == 1 || Self::is_punct(&cand) || boundary {
                        matched = Some((id, len));
                        break;
                    }
                }
                let (id, len) = matched.ok_or_else(|| {
                    Error::Invalid(format!("cannot tokenize `{chunk}` at char {i}"))
                })?;
                ids.push(id);
                i += len;
            }
        }
        Ok(ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn core_layout() {
        let t = Tokenizer::core();
        assert_eq!(t.len(), 67);
        assert_eq!(t.id("→").unwrap(), ARROW);
        assert_eq!(t.id("a").unwrap(), Tokenizer::lower(0));
        assert_eq!(t.id("Z").unwrap(), Tokenizer::upper(25));
        assert_eq!(t.id("7").unwrap(), Tokenizer::digit(7));
    }

    #[test]
    fn list_round_trip() {
        let t = Tokenizer::core();
        let ids = t.encode("[a,b,c] → a").unwrap();
        let a = Tokenizer::lower(0);
        assert_eq!(
            ids,
            vec![LBRACKET, a, COMMA, a + 1, COMMA, a + 2, RBRACKET, ARROW, a]
        );
        assert_eq!(t.decode(&ids).unwrap(), "[a,b,c] → a");
    }

    #[test]
    fn words_need_a_boundary() {
        let t = Tokenizer::standard();
        let cat = t.id("cat").unwrap();
        assert_eq!(
            t.encode("cat → cats").unwrap(),
            vec![cat, ARROW, t.id("cats").unwrap()]
        );
        assert_eq!(t.encode("[cat]").unwrap(), vec![LBRACKET, cat, RBRACKET]);
        // no boundary after "cat", so it falls back to single letters
        assert_eq!(t.encode("catx").unwrap().len(), 4);
    }
}
