//! Block-size decisions: the fixed baseline and the delimiter-driven
//! adaptive scheduler.
//!
//! `g` is the generation-relative start of the next block. The adaptive
//! scheduler inspects a window `W = [g, g + w)` with
//! `w = min(max(1, floor(window_fraction * g)), L - g)` and, if the most
//! confident predicted delimiter in `W` reaches `tau_d`, ends the block on
//! it. Positions past the window are never consulted.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{DecodeConfig, SchedulerKind};
use crate::predictor::argmax_lowest;
use crate::state::{PredictionFrame, SequenceState};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("block start {g} is not inside the generation region of length {gen_budget}")]
    StartOutOfRange { g: usize, gen_budget: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BlockSource {
    /// Block ends on the delimiter at `pos` whose confidence was `conf`.
    Delimiter {
        pos: usize,
        conf: f64,
    },
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDecision {
    pub g: usize,
    pub block_size: usize,
    pub source: BlockSource,
    /// Inspected window `[start, end)`; empty for the fixed scheduler.
    pub window: (usize, usize),
}

impl BlockDecision {
    pub fn end(&self) -> usize {
        self.g + self.block_size
    }
}

/// `w = min(max(1, floor(fraction * g)), remaining)`.
pub fn window_len(window_fraction: f64, g: usize, remaining: usize) -> usize {
    let scaled = (window_fraction * g as f64).floor() as usize;
    scaled.max(1).min(remaining)
}

pub fn fixed_block_length(config: &DecodeConfig, g: usize) -> Result<BlockDecision, ScheduleError> {
    let l = config.gen_budget;
    if g >= l {
        return Err(ScheduleError::StartOutOfRange { g, gen_budget: l });
    }
    Ok(BlockDecision { g, block_size: config.b0.min(l - g), source: BlockSource::Fallback, window: (g, g) })
}

/// Adaptive block size from the block-opening frame.
///
/// Committed positions inside the window take part with their own token at
/// confidence 1.
pub fn compute_block_length(
    state: &SequenceState,
    frame: &PredictionFrame,
    config: &DecodeConfig,
    g: usize,
) -> Result<BlockDecision, ScheduleError> {
    let l = config.gen_budget;
    if g >= l || state.gen_budget() != l {
        return Err(ScheduleError::StartOutOfRange { g, gen_budget: state.gen_budget() });
    }
    let remaining = l - g;
    let w = window_len(config.window_fraction, g, remaining);
    let window = (g, g + w);

    let candidates = (g..g + w).filter_map(|i| {
        let abs = state.abs(i);
        let (tok, conf) = if state.is_masked(abs) {
            (frame.predicted[abs], frame.confidence[abs])
        } else {
            (state.tokens()[abs], 1.0)
        };
        config.delimiters.contains(&tok).then_some((i, conf))
    });
    match argmax_lowest(candidates) {
        Some((pos, conf)) if conf >= config.tau_d => {
            Ok(BlockDecision { g, block_size: pos - g + 1, source: BlockSource::Delimiter { pos, conf }, window })
        }
        _ => Ok(BlockDecision { g, block_size: config.b0.min(remaining), source: BlockSource::Fallback, window }),
    }
}

pub fn decide_block(
    kind: SchedulerKind,
    state: &SequenceState,
    frame: &PredictionFrame,
    config: &DecodeConfig,
    g: usize,
) -> Result<BlockDecision, ScheduleError> {
    match kind {
        SchedulerKind::Fixed => fixed_block_length(config, g),
        SchedulerKind::Adaptive => compute_block_length(state, frame, config, g),
    }
}
