//! Mask predictors: the denoiser interface and its backends.
//!
//! A backend only answers for masked positions. [`denoise`] wraps every call:
//! it validates the scope, reports committed positions as their own token at
//! confidence 1, checks what the backend returns, and carries every position
//! outside the scope forward from the prior frame.

mod ngram;
mod replay;
mod synthetic;

use std::ops::Range;

use thiserror::Error;

use crate::state::{PredictionFrame, SequenceState};
use crate::vocab::{TokenId, Vocabulary};

pub use ngram::{build_ngram, NGramModel, NGramOptions, Tokenization};
pub use replay::{load_trace_predictor, TracePredictor};
pub use synthetic::{build_synthetic, Regime, SyntheticFieldParams, SyntheticPredictor};

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("eval position {position} out of range for sequence of length {len}")]
    OutOfRange { position: usize, len: usize },
    #[error("backend returned {got} predictions for {want} positions")]
    CountMismatch { want: usize, got: usize },
    #[error("invalid prediction at position {position}: {reason}")]
    InvalidPrediction { position: usize, reason: String },
    #[error("invalid predictor parameters: {0}")]
    InvalidParams(String),
    #[error("corpus is empty after tokenization")]
    EmptyCorpus,
    #[error("corpus token {0} is the reserved mask symbol")]
    MaskInCorpus(usize),
    #[error("trace replay exhausted after {0} denoise calls")]
    ReplayExhausted(usize),
    #[error("replay step {step} has no recorded prediction for position {position}")]
    PositionNotRecorded { step: usize, position: usize },
    #[error("trace line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// One greedy prediction: the argmax token and its probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub token: TokenId,
    pub confidence: f64,
}

/// What a backend may read besides the sequence itself.
///
/// Context-sensitive backends condition on provisional predictions of masked
/// neighbours. Inside `fresh` those are recomputed from the current state;
/// outside it they come from `frame`, which may be stale. This is the channel
/// through which cache policies change predictions.
#[derive(Debug, Clone)]
pub struct DenoiseContext<'a> {
    pub frame: &'a PredictionFrame,
    /// Absolute positions whose provisional context is live.
    pub fresh: Range<usize>,
}

impl<'a> DenoiseContext<'a> {
    /// Everything live: the no-cache case.
    pub fn all_fresh(frame: &'a PredictionFrame) -> Self {
        Self { fresh: 0..frame.len(), frame }
    }
}

/// The mask predictor `p_θ`.
///
/// Implementations must be deterministic given their construction inputs and
/// the query, and must never predict the mask token.
pub trait MaskPredictor: Send + Sync {
    fn vocabulary(&self) -> &Vocabulary;

    /// Separator placed between rendered tokens.
    fn joiner(&self) -> &str {
        " "
    }

    /// Greedy prediction for each of `positions` (absolute indices, all masked
    /// in `state`), index-aligned with the input. Called exactly once per
    /// denoise, possibly with an empty slice.
    fn predict_masked(
        &self,
        state: &SequenceState,
        positions: &[usize],
        ctx: &DenoiseContext<'_>,
    ) -> Result<Vec<Prediction>, PredictorError>;
}

impl<P: MaskPredictor + ?Sized> MaskPredictor for &P {
    fn vocabulary(&self) -> &Vocabulary {
        (**self).vocabulary()
    }

    fn joiner(&self) -> &str {
        (**self).joiner()
    }

    fn predict_masked(
        &self,
        state: &SequenceState,
        positions: &[usize],
        ctx: &DenoiseContext<'_>,
    ) -> Result<Vec<Prediction>, PredictorError> {
        (**self).predict_masked(state, positions, ctx)
    }
}

impl<P: MaskPredictor + ?Sized> MaskPredictor for Box<P> {
    fn vocabulary(&self) -> &Vocabulary {
        (**self).vocabulary()
    }

    fn joiner(&self) -> &str {
        (**self).joiner()
    }

    fn predict_masked(
        &self,
        state: &SequenceState,
        positions: &[usize],
        ctx: &DenoiseContext<'_>,
    ) -> Result<Vec<Prediction>, PredictorError> {
        (**self).predict_masked(state, positions, ctx)
    }
}

impl<P: MaskPredictor + ?Sized> MaskPredictor for std::sync::Arc<P> {
    fn vocabulary(&self) -> &Vocabulary {
        (**self).vocabulary()
    }

    fn joiner(&self) -> &str {
        (**self).joiner()
    }

    fn predict_masked(
        &self,
        state: &SequenceState,
        positions: &[usize],
        ctx: &DenoiseContext<'_>,
    ) -> Result<Vec<Prediction>, PredictorError> {
        (**self).predict_masked(state, positions, ctx)
    }
}

/// Runs one denoise call over `eval_positions` (absolute, ascending, unique)
/// and returns the next frame. `fresh` is passed through to the backend.
pub fn denoise<P: MaskPredictor + ?Sized>(
    predictor: &P,
    state: &SequenceState,
    prior: &PredictionFrame,
    eval_positions: &[usize],
    fresh: Range<usize>,
) -> Result<PredictionFrame, PredictorError> {
    let len = state.len();
    if let Some(&p) = eval_positions.iter().find(|&&p| p >= len) {
        return Err(PredictorError::OutOfRange { position: p, len });
    }
    let masked: Vec<usize> = eval_positions.iter().copied().filter(|&p| state.is_masked(p)).collect();
    let ctx = DenoiseContext { frame: prior, fresh };
    let preds = predictor.predict_masked(state, &masked, &ctx)?;
    if preds.len() != masked.len() {
        return Err(PredictorError::CountMismatch { want: masked.len(), got: preds.len() });
    }

    let mut frame = prior.clone();
    for &p in eval_positions {
        if !state.is_masked(p) {
            frame.predicted[p] = state.tokens()[p];
            frame.confidence[p] = 1.0;
        }
    }
    let vocab = predictor.vocabulary();
    for (&p, pred) in masked.iter().zip(&preds) {
        if pred.token == state.mask_id() || !vocab.contains(pred.token) {
            return Err(PredictorError::InvalidPrediction {
                position: p,
                reason: format!("token id {} is not predictable", pred.token),
            });
        }
        if !(pred.confidence > 0.0 && pred.confidence <= 1.0) {
            return Err(PredictorError::InvalidPrediction {
                position: p,
                reason: format!("confidence {} outside (0, 1]", pred.confidence),
            });
        }
        frame.predicted[p] = pred.token;
        frame.confidence[p] = pred.confidence;
    }
    frame.evaluated = eval_positions.to_vec();
    Ok(frame)
}

/// Argmax with lowest-index tie-breaking. Returns `None` for an empty input.
pub(crate) fn argmax_lowest<I: IntoIterator<Item = (usize, f64)>>(items: I) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in items {
        match best {
            Some((bi, bc)) if c < bc || (c == bc && i >= bi) => {}
            _ => best = Some((i, c)),
        }
    }
    best
}
