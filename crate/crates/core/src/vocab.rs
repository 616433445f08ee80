//! Token vocabulary with the two special tokens every decode needs.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Token ids index into [`Vocabulary::tokens`].
pub type TokenId = u32;

pub const MASK_TOKEN: &str = "[MASK]";
pub const EOS_TOKEN: &str = "<EOS>";
pub const NEWLINE_TOKEN: &str = "\n";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VocabError {
    #[error("vocabulary is empty")]
    Empty,
    #[error("duplicate token {0:?}")]
    Duplicate(String),
    #[error("special token id {id} out of range for vocabulary of size {size}")]
    SpecialOutOfRange { id: TokenId, size: usize },
    #[error("mask and eos must be distinct tokens (both {0})")]
    SpecialsCollide(TokenId),
    #[error("unknown token {0:?}")]
    UnknownToken(String),
}

/// Immutable token table. The string/id mapping is a bijection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    mask_id: TokenId,
    eos_id: TokenId,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>, mask_id: TokenId, eos_id: TokenId) -> Result<Self, VocabError> {
        if tokens.is_empty() {
            return Err(VocabError::Empty);
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id as TokenId).is_some() {
                return Err(VocabError::Duplicate(tok.clone()));
            }
        }
        for id in [mask_id, eos_id] {
            if id as usize >= tokens.len() {
                return Err(VocabError::SpecialOutOfRange { id, size: tokens.len() });
            }
        }
        if mask_id == eos_id {
            return Err(VocabError::SpecialsCollide(mask_id));
        }
        Ok(Self { tokens, index, mask_id, eos_id })
    }

    /// Builds `[MASK]`, `<EOS>`, then `symbols` in order, skipping any symbol
    /// that repeats an earlier one.
    pub fn with_specials<I, S>(symbols: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens = vec![MASK_TOKEN.to_string(), EOS_TOKEN.to_string()];
        let mut seen: std::collections::HashSet<String> = tokens.iter().cloned().collect();
        for s in symbols {
            let s = s.into();
            if seen.insert(s.clone()) {
                tokens.push(s);
            }
        }
        Self::new(tokens, 0, 1).expect("specials are distinct and in range")
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn mask_id(&self) -> TokenId {
        self.mask_id
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn require_id(&self, token: &str) -> Result<TokenId, VocabError> {
        self.id(token).ok_or_else(|| VocabError::UnknownToken(token.to_string()))
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, id: TokenId) -> bool {
        (id as usize) < self.tokens.len()
    }

    /// Ids a predictor may emit: every token except `[MASK]`.
    pub fn predictable_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        let mask = self.mask_id;
        (0..self.tokens.len() as TokenId).filter(move |&id| id != mask)
    }

    /// Renders ids as text. Whitespace-mode tokens are joined with single
    /// spaces, except around newlines.
    pub fn render(&self, ids: &[TokenId], joiner: &str) -> String {
        let mut out = String::new();
        let mut prev_newline = true;
        for &id in ids {
            let tok = self.token(id).unwrap_or("<?>");
            let is_newline = tok == NEWLINE_TOKEN;
            if !prev_newline && !is_newline {
                out.push_str(joiner);
            }
            out.push_str(tok);
            prev_newline = is_newline;
        }
        out
    }
}

/// Serialized form embedded in trace headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabularyRecord {
    pub vocab: Vec<String>,
    pub mask_id: TokenId,
    #[serde(default = "default_eos")]
    pub eos_id: TokenId,
}

fn default_eos() -> TokenId {
    1
}

impl From<&Vocabulary> for VocabularyRecord {
    fn from(v: &Vocabulary) -> Self {
        Self { vocab: v.tokens.clone(), mask_id: v.mask_id, eos_id: v.eos_id }
    }
}

impl TryFrom<VocabularyRecord> for Vocabulary {
    type Error = VocabError;

    fn try_from(r: VocabularyRecord) -> Result<Self, Self::Error> {
        Vocabulary::new(r.vocab, r.mask_id, r.eos_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_come_first() {
        let v = Vocabulary::with_specials(["a", "b", "a"]);
        assert_eq!(v.size(), 4);
        assert_eq!(v.mask_id(), 0);
        assert_eq!(v.eos_id(), 1);
        assert_eq!(v.id("b"), Some(3));
        assert_eq!(v.token(2), Some("a"));
    }

    #[test]
    fn rejects_bad_specials() {
        let toks = vec!["x".to_string(), "y".to_string()];
        assert_eq!(Vocabulary::new(toks.clone(), 0, 0), Err(VocabError::SpecialsCollide(0)));
        assert!(matches!(Vocabulary::new(toks.clone(), 0, 5), Err(VocabError::SpecialOutOfRange { .. })));
        let dup = vec!["x".to_string(), "x".to_string()];
        assert!(matches!(Vocabulary::new(dup, 0, 1), Err(VocabError::Duplicate(_))));
        assert_eq!(Vocabulary::new(vec![], 0, 1), Err(VocabError::Empty));
    }

    #[test]
    fn predictable_ids_skip_mask() {
        let v = Vocabulary::with_specials(["a"]);
        assert_eq!(v.predictable_ids().collect::<Vec<_>>(), vec![1, 2]);
    }
}
