//! Samplers choosing which masked positions to commit.
//!
//! Scopes and results are generation-relative positions. Confidence ties are
//! broken toward the lower position. Every sampler returns a sorted subset of
//! the masked part of its scope, non-empty whenever that part is non-empty.

use crate::config::{DecodeConfig, SamplerChoice};
use crate::predictor::argmax_lowest;
use crate::state::{PredictionFrame, SequenceState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplerKind {
    /// Top-1 confidence.
    Vanilla,
    /// `ceil(L / total_steps)` highest-confidence positions per step.
    Linear { total_steps: usize },
    /// Top-1 plus every position at or above `tau`.
    DynamicThreshold { tau: f64 },
}

impl SamplerKind {
    pub fn from_config(cfg: &DecodeConfig) -> Self {
        match cfg.sampler {
            SamplerChoice::Vanilla => Self::Vanilla,
            SamplerChoice::Linear => Self::Linear { total_steps: cfg.linear_steps },
            SamplerChoice::Dynamic => Self::DynamicThreshold { tau: cfg.tau },
        }
    }

    pub fn sample(&self, state: &SequenceState, frame: &PredictionFrame, scope: &[usize]) -> Vec<usize> {
        match *self {
            Self::Vanilla => vanilla_sample(state, frame, scope),
            Self::Linear { total_steps } => {
                linear_sample(state, frame, linear_per_step(state.gen_budget(), total_steps), scope)
            }
            Self::DynamicThreshold { tau } => threshold_sample(state, frame, tau, scope),
        }
    }
}

/// Tokens per step for the linear schedule: `ceil(L / T)`, at least 1.
pub fn linear_per_step(gen_budget: usize, total_steps: usize) -> usize {
    gen_budget.div_ceil(total_steps.max(1)).max(1)
}

fn masked_with_conf<'a>(
    state: &'a SequenceState,
    frame: &'a PredictionFrame,
    scope: &'a [usize],
) -> impl Iterator<Item = (usize, f64)> + 'a {
    scope
        .iter()
        .copied()
        .filter(|&i| i < state.gen_budget() && state.is_gen_masked(i))
        .map(|i| (i, frame.confidence[state.abs(i)]))
}

/// `{i_top} ∪ {i ∈ masked(scope) : c_i ≥ tau}`; empty when nothing in scope
/// is masked, which signals a finished block.
pub fn threshold_sample(state: &SequenceState, frame: &PredictionFrame, tau: f64, scope: &[usize]) -> Vec<usize> {
    let Some((top, _)) = argmax_lowest(masked_with_conf(state, frame, scope)) else {
        return Vec::new();
    };
    let mut out: Vec<usize> =
        masked_with_conf(state, frame, scope).filter(|&(i, c)| i == top || c >= tau).map(|(i, _)| i).collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// The `min(per_step, |masked(scope)|)` most confident masked positions.
pub fn linear_sample(state: &SequenceState, frame: &PredictionFrame, per_step: usize, scope: &[usize]) -> Vec<usize> {
    let mut cands: Vec<(usize, f64)> = masked_with_conf(state, frame, scope).collect();
    cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    cands.dedup_by_key(|c| c.0);
    let mut out: Vec<usize> = cands.into_iter().take(per_step.max(1)).map(|(i, _)| i).collect();
    out.sort_unstable();
    out
}

pub fn vanilla_sample(state: &SequenceState, frame: &PredictionFrame, scope: &[usize]) -> Vec<usize> {
    argmax_lowest(masked_with_conf(state, frame, scope)).map(|(i, _)| vec![i]).unwrap_or_default()
}
