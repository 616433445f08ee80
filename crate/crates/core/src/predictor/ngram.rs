//! Bidirectional n-gram predictor over a text corpus.
//!
//! For a masked position the model gathers, on each side, the nearest
//! `order - 1` committed tokens within `max_span` positions, skipping masked
//! neighbours but keeping their distance. Each side's context selects corpus
//! positions where the same tokens sit at the same offsets; the add-k
//! smoothed counts of the token found there give that side's distribution.
//! Sides with context are averaged with equal weight; with no context on
//! either side the unigram distribution is used.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{DenoiseContext, MaskPredictor, Prediction, PredictorError};
use crate::state::SequenceState;
use crate::vocab::{TokenId, Vocabulary, MASK_TOKEN, NEWLINE_TOKEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tokenization {
    /// Whitespace-separated words; each line break is its own `"\n"` token.
    Whitespace,
    /// One token per character, including spaces and newlines.
    Character,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NGramOptions {
    pub order: usize,
    pub smoothing_k: f64,
    pub tokenization: Tokenization,
    /// Context tokens farther than this from the target are ignored.
    pub max_span: usize,
    /// When set, a masked neighbour whose provisional prediction reaches this
    /// confidence stands in as a context token.
    pub provisional_context: Option<f64>,
}

impl Default for NGramOptions {
    fn default() -> Self {
        Self {
            order: 3,
            smoothing_k: 0.01,
            tokenization: Tokenization::Whitespace,
            max_span: 16,
            provisional_context: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Side {
    Left,
    Right,
}

/// `(distance, token)` pairs, nearest first.
type ContextKey = Vec<(usize, TokenId)>;

#[derive(Debug, Default)]
struct SideCounts {
    total: u64,
    counts: Vec<(TokenId, u64)>,
}

pub struct NGramModel {
    options: NGramOptions,
    vocab: Vocabulary,
    corpus: Vec<TokenId>,
    occurrences: Vec<Vec<usize>>,
    unigram: Arc<SideCounts>,
    memo: Mutex<HashMap<(Side, ContextKey), Arc<SideCounts>>>,
}

impl std::fmt::Debug for NGramModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NGramModel")
            .field("options", &self.options)
            .field("vocab_size", &self.vocab.size())
            .field("corpus_len", &self.corpus.len())
            .finish()
    }
}

pub fn tokenize(text: &str, mode: Tokenization) -> Vec<String> {
    match mode {
        Tokenization::Character => text.chars().map(String::from).collect(),
        Tokenization::Whitespace => {
            let mut out = Vec::new();
            let mut lines = text.split('\n').peekable();
            while let Some(line) = lines.next() {
                out.extend(line.split_whitespace().map(String::from));
                if lines.peek().is_some() {
                    out.push(NEWLINE_TOKEN.to_string());
                }
            }
            out
        }
    }
}

pub fn build_ngram(corpus: &str, options: NGramOptions) -> Result<NGramModel, PredictorError> {
    if options.order < 1 {
        return Err(PredictorError::InvalidParams("order must be at least 1".into()));
    }
    if !(options.smoothing_k >= 0.0 && options.smoothing_k.is_finite()) {
        return Err(PredictorError::InvalidParams("smoothing_k must be a finite number >= 0".into()));
    }
    if let Some(th) = options.provisional_context {
        if !(th > 0.0 && th <= 1.0) {
            return Err(PredictorError::InvalidParams("provisional_context must lie in (0, 1]".into()));
        }
    }
    let words = tokenize(corpus, options.tokenization);
    if words.is_empty() {
        return Err(PredictorError::EmptyCorpus);
    }
    if let Some(i) = words.iter().position(|w| w == MASK_TOKEN) {
        return Err(PredictorError::MaskInCorpus(i));
    }
    let symbols: BTreeSet<&str> = words.iter().map(String::as_str).collect();
    let vocab = Vocabulary::with_specials(symbols);
    let ids: Vec<TokenId> = words.iter().map(|w| vocab.id(w).expect("symbol collected above")).collect();

    let mut occurrences = vec![Vec::new(); vocab.size()];
    let mut uni = vec![0u64; vocab.size()];
    for (pos, &t) in ids.iter().enumerate() {
        occurrences[t as usize].push(pos);
        uni[t as usize] += 1;
    }
    let unigram = Arc::new(SideCounts {
        total: ids.len() as u64,
        counts: uni.iter().enumerate().filter(|(_, &c)| c > 0).map(|(t, &c)| (t as TokenId, c)).collect(),
    });
    Ok(NGramModel { options, vocab, corpus: ids, occurrences, unigram, memo: Mutex::new(HashMap::new()) })
}

impl NGramModel {
    pub fn options(&self) -> &NGramOptions {
        &self.options
    }

    pub fn corpus(&self) -> &[TokenId] {
        &self.corpus
    }

    /// Maps text to ids with this model's tokenization.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>, PredictorError> {
        tokenize(text, self.options.tokenization)
            .iter()
            .map(|w| {
                self.vocab.id(w).ok_or_else(|| {
                    PredictorError::InvalidParams(format!("token {w:?} is not in the corpus vocabulary"))
                })
            })
            .collect()
    }

    pub fn joiner(&self) -> &'static str {
        match self.options.tokenization {
            Tokenization::Whitespace => " ",
            Tokenization::Character => "",
        }
    }

    fn side_counts(&self, side: Side, key: &[(usize, TokenId)]) -> Arc<SideCounts> {
        let Some(&(anchor_dist, anchor_tok)) = key.first() else {
            return Arc::clone(&self.unigram);
        };
        let memo_key = (side, key.to_vec());
        if let Some(hit) = self.memo.lock().expect("memo lock").get(&memo_key) {
            return Arc::clone(hit);
        }
        let n = self.corpus.len();
        let at = |target: usize, dist: usize| -> Option<usize> {
            match side {
                Side::Left => target.checked_sub(dist),
                Side::Right => target.checked_add(dist).filter(|&p| p < n),
            }
        };
        let mut tally: HashMap<TokenId, u64> = HashMap::new();
        let mut total = 0u64;
        for &q in &self.occurrences[anchor_tok as usize] {
            let target = match side {
                Side::Left => q + anchor_dist,
                Side::Right => match q.checked_sub(anchor_dist) {
                    Some(t) => t,
                    None => continue,
                },
            };
            if target >= n {
                continue;
            }
            let matches = key[1..].iter().all(|&(d, tok)| at(target, d).is_some_and(|p| self.corpus[p] == tok));
            if matches {
                *tally.entry(self.corpus[target]).or_default() += 1;
                total += 1;
            }
        }
        let mut counts: Vec<(TokenId, u64)> = tally.into_iter().collect();
        counts.sort_unstable();
        let result = Arc::new(SideCounts { total, counts });
        self.memo.lock().expect("memo lock").insert(memo_key, Arc::clone(&result));
        result
    }

    /// Smoothed distribution of one side, indexed by token id. The mask
    /// entry stays 0.
    fn side_distribution(&self, counts: &SideCounts, out: &mut [f64], weight: f64) {
        let k = self.options.smoothing_k;
        let support = (self.vocab.size() - 1) as f64;
        let denom = counts.total as f64 + k * support;
        let mask = self.vocab.mask_id() as usize;
        if denom <= 0.0 {
            for (t, slot) in out.iter_mut().enumerate() {
                if t != mask {
                    *slot += weight / support;
                }
            }
            return;
        }
        let base = k / denom;
        for (t, slot) in out.iter_mut().enumerate() {
            if t != mask {
                *slot += weight * base;
            }
        }
        for &(t, c) in &counts.counts {
            out[t as usize] += weight * c as f64 / denom;
        }
    }

    fn gather(
        &self,
        state: &SequenceState,
        pos: usize,
        side: Side,
        provisional: &mut dyn FnMut(usize) -> Option<TokenId>,
    ) -> ContextKey {
        let want = self.options.order - 1;
        let mut key = Vec::with_capacity(want);
        if want == 0 {
            return key;
        }
        let tokens = state.tokens();
        for dist in 1..=self.options.max_span {
            let j = match side {
                Side::Left => match pos.checked_sub(dist) {
                    Some(j) => j,
                    None => break,
                },
                Side::Right => {
                    let j = pos + dist;
                    if j >= tokens.len() {
                        break;
                    }
                    j
                }
            };
            let tok = if tokens[j] != state.mask_id() { Some(tokens[j]) } else { provisional(j) };
            if let Some(tok) = tok {
                key.push((dist, tok));
                if key.len() == want {
                    break;
                }
            }
        }
        key
    }

    fn distribution_with(
        &self,
        state: &SequenceState,
        pos: usize,
        provisional: &mut dyn FnMut(usize) -> Option<TokenId>,
    ) -> Vec<f64> {
        let left = self.gather(state, pos, Side::Left, provisional);
        let right = self.gather(state, pos, Side::Right, provisional);
        let mut dist = vec![0.0; self.vocab.size()];
        match (left.is_empty(), right.is_empty()) {
            (true, true) => self.side_distribution(&self.unigram, &mut dist, 1.0),
            (false, true) => self.side_distribution(&self.side_counts(Side::Left, &left), &mut dist, 1.0),
            (true, false) => self.side_distribution(&self.side_counts(Side::Right, &right), &mut dist, 1.0),
            (false, false) => {
                self.side_distribution(&self.side_counts(Side::Left, &left), &mut dist, 0.5);
                self.side_distribution(&self.side_counts(Side::Right, &right), &mut dist, 0.5);
            }
        }
        dist
    }

    /// Full predictive distribution at absolute position `pos` using
    /// committed context only.
    pub fn distribution(&self, state: &SequenceState, pos: usize) -> Vec<f64> {
        self.distribution_with(state, pos, &mut |_| None)
    }

    fn greedy(&self, dist: &[f64]) -> Prediction {
        let mask = self.vocab.mask_id() as usize;
        let (token, confidence) =
            super::argmax_lowest(dist.iter().enumerate().filter(|(t, _)| *t != mask).map(|(t, &p)| (t, p)))
                .expect("vocabulary has a non-mask token");
        Prediction { token: token as TokenId, confidence: confidence.min(1.0) }
    }
}

impl MaskPredictor for NGramModel {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn joiner(&self) -> &str {
        NGramModel::joiner(self)
    }

    fn predict_masked(
        &self,
        state: &SequenceState,
        positions: &[usize],
        ctx: &DenoiseContext<'_>,
    ) -> Result<Vec<Prediction>, PredictorError> {
        let Some(threshold) = self.options.provisional_context else {
            return Ok(positions.iter().map(|&p| self.greedy(&self.distribution(state, p))).collect());
        };
        let mut live: HashMap<usize, Prediction> = HashMap::new();
        let mut provisional = |j: usize| -> Option<TokenId> {
            let pred = if ctx.fresh.contains(&j) {
                *live.entry(j).or_insert_with(|| self.greedy(&self.distribution(state, j)))
            } else {
                Prediction { token: ctx.frame.predicted[j], confidence: ctx.frame.confidence[j] }
            };
            (pred.token != state.mask_id() && pred.confidence >= threshold).then_some(pred.token)
        };
        Ok(positions.iter().map(|&p| self.greedy(&self.distribution_with(state, p, &mut provisional))).collect())
    }
}
