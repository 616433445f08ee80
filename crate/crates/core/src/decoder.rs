//! The adaptive semi-autoregressive decode loop.
//!
//! Each block opens with a denoise over the policy's opening scope. The
//! scheduler sizes the block from that frame, the sampler commits a first
//! batch inside it, and in-block denoise/sample cycles run until the block
//! holds no masks. Every denoise call is recorded in the trace.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{CachePolicy, ConfigError, DecodeConfig};
use crate::predictor::{denoise, MaskPredictor, PredictorError};
use crate::sampling::SamplerKind;
use crate::scheduler::{decide_block, BlockDecision, BlockSource, ScheduleError};
use crate::state::{PredictionFrame, SequenceState, StateError};
use crate::trace::{DecodeTrace, StepRecord, TraceHeader};
use crate::vocab::TokenId;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("invalid config: {0}")]
    Config(#[from] ConfigError),
    #[error("invalid initial state: {0}")]
    State(#[from] StateError),
    #[error("predictor failed at denoise call {call} (g = {g}): {source}")]
    Predictor {
        call: usize,
        g: usize,
        #[source]
        source: PredictorError,
    },
    #[error("scheduler: {0}")]
    Schedule(#[from] ScheduleError),
    #[error("prompt token {id} at position {position} is not in the vocabulary")]
    UnknownToken { position: usize, id: TokenId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    BlockOpen,
    InBlock,
}

/// Generation positions a denoise call evaluates.
///
/// `masked` is the current masked set (generation-relative). `block_size` is
/// ignored when opening a block.
pub fn evaluation_scope(
    policy: CachePolicy,
    g: usize,
    block_size: usize,
    gen_budget: usize,
    phase: Phase,
    masked: &[usize],
) -> Vec<usize> {
    match (policy, phase) {
        (CachePolicy::PrefixCache, _) => (g..gen_budget).collect(),
        (_, Phase::BlockOpen) => (0..gen_budget).collect(),
        (_, Phase::InBlock) => masked.iter().copied().filter(|&i| i >= g && i < g + block_size).collect(),
    }
}

/// Absolute range whose neighbour predictions a context-sensitive backend
/// may recompute live; outside it, the prior frame's values stand.
pub fn fresh_range(
    policy: CachePolicy,
    g: usize,
    block_size: usize,
    state: &SequenceState,
    phase: Phase,
) -> Range<usize> {
    let lp = state.prompt_len();
    match (policy, phase) {
        (CachePolicy::NoCache, _) | (CachePolicy::DualCache, Phase::BlockOpen) => 0..state.len(),
        (CachePolicy::DualCache, Phase::InBlock) => lp + g..lp + g + block_size,
        (CachePolicy::PrefixCache, _) => lp + g..state.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeStatus {
    Completed,
    /// The step budget ran out with masks left.
    Exhausted {
        remaining_masks: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    /// Prompt followed by the generation region.
    pub tokens: Vec<TokenId>,
    pub prompt_len: usize,
    pub trace: DecodeTrace,
    pub denoise_calls: usize,
    pub position_evaluations: usize,
    pub steps_used: usize,
    pub blocks: Vec<BlockDecision>,
    pub status: DecodeStatus,
    /// Generation rendered up to the first end-of-sequence token.
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSummary {
    pub g: usize,
    #[serde(rename = "B")]
    pub block_size: usize,
    pub source: BlockSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeSummary {
    /// `completed` or `exhausted`.
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remaining_masks: Option<usize>,
    pub steps: usize,
    pub nfe: usize,
    pub position_evals: usize,
    pub blocks: Vec<BlockSummary>,
    pub text: String,
}

impl DecodeResult {
    pub fn generation(&self) -> &[TokenId] {
        &self.tokens[self.prompt_len..]
    }

    pub fn completed(&self) -> bool {
        self.status == DecodeStatus::Completed
    }

    pub fn mean_block_size(&self) -> f64 {
        if self.blocks.is_empty() {
            return 0.0;
        }
        self.blocks.iter().map(|b| b.block_size as f64).sum::<f64>() / self.blocks.len() as f64
    }

    pub fn summary(&self) -> DecodeSummary {
        let (status, remaining_masks) = match self.status {
            DecodeStatus::Completed => ("completed", None),
            DecodeStatus::Exhausted { remaining_masks } => ("exhausted", Some(remaining_masks)),
        };
        DecodeSummary {
            status: status.to_string(),
            remaining_masks,
            steps: self.steps_used,
            nfe: self.denoise_calls,
            position_evals: self.position_evaluations,
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockSummary { g: b.g, block_size: b.block_size, source: b.source })
                .collect(),
            text: self.text.clone(),
        }
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary()).expect("summary serializes")
    }

    pub fn trace_header<P: MaskPredictor + ?Sized>(&self, predictor: &P, config: &DecodeConfig) -> TraceHeader {
        TraceHeader::new(predictor.vocabulary(), &self.tokens[..self.prompt_len], config)
    }
}

struct Session<'p, P: ?Sized> {
    predictor: &'p P,
    config: &'p DecodeConfig,
    sampler: SamplerKind,
    state: SequenceState,
    frame: PredictionFrame,
    records: Vec<StepRecord>,
    position_evaluations: usize,
}

impl<P: MaskPredictor + ?Sized> Session<'_, P> {
    /// One denoise call, one sample inside `block`, one trace record.
    fn cycle(&mut self, g: usize, block: Option<usize>, phase: Phase) -> Result<Option<BlockDecision>, DecodeError> {
        let l = self.config.gen_budget;
        let lp = self.state.prompt_len();
        let masked = self.state.masked_gen_positions();
        let scope_b = block.unwrap_or(l - g);
        let scope = evaluation_scope(self.config.cache, g, scope_b, l, phase, &masked);
        let fresh = fresh_range(self.config.cache, g, scope_b, &self.state, phase);
        let abs: Vec<usize> = scope.iter().map(|&i| i + lp).collect();
        let call = self.records.len();
        self.frame = denoise(self.predictor, &self.state, &self.frame, &abs, fresh)
            .map_err(|source| DecodeError::Predictor { call, g, source })?;
        self.position_evaluations += scope.len();

        let decision = match block {
            Some(_) => None,
            None => Some(decide_block(self.config.scheduler, &self.state, &self.frame, self.config, g)?),
        };
        let b = block.or(decision.as_ref().map(|d| d.block_size)).expect("block size known");
        let in_block: Vec<usize> = (g..g + b).collect();
        let sampled = self.sampler.sample(&self.state, &self.frame, &in_block);

        self.records.push(StepRecord {
            index: call,
            t: self.state.step(),
            g,
            block_size: b,
            opens_block: phase == Phase::BlockOpen,
            evaluated: scope,
            predicted: self.frame.predicted[lp..].to_vec(),
            confidence: self.frame.confidence[lp..].to_vec(),
            masked,
            sampled: sampled.clone(),
            cache: self.config.cache,
        });
        let selected: Vec<usize> = sampled.iter().map(|&i| i + lp).collect();
        self.state = self.state.apply_sample(&self.frame, &selected)?;
        Ok(decision)
    }

    fn block_has_masks(&self, g: usize, b: usize) -> bool {
        (g..g + b).any(|i| self.state.is_gen_masked(i))
    }
}

/// Decodes `prompt` under `config`, returning the committed sequence, the
/// full trace and the cost counters.
pub fn decode<P: MaskPredictor + ?Sized>(
    predictor: &P,
    config: &DecodeConfig,
    prompt: &[TokenId],
) -> Result<DecodeResult, DecodeError> {
    let vocab = predictor.vocabulary();
    config.validate(vocab)?;
    if let Some((position, &id)) = prompt.iter().enumerate().find(|(_, &t)| !vocab.contains(t)) {
        return Err(DecodeError::UnknownToken { position, id });
    }
    let state = SequenceState::init(prompt, config.gen_budget, config.max_steps, vocab.mask_id())?;
    let frame = PredictionFrame::initial(&state);
    let mut s = Session {
        predictor,
        config,
        sampler: SamplerKind::from_config(config),
        state,
        frame,
        records: Vec::new(),
        position_evaluations: 0,
    };

    let l = config.gen_budget;
    let mut g = 0;
    let mut blocks = Vec::new();
    while g < l && s.state.step() >= 1 {
        let decision = s.cycle(g, None, Phase::BlockOpen)?.expect("opening cycle decides the block");
        let b = decision.block_size;
        blocks.push(decision);
        while s.block_has_masks(g, b) && s.state.step() >= 1 {
            s.cycle(g, Some(b), Phase::InBlock)?;
        }
        if s.block_has_masks(g, b) {
            break;
        }
        g += b;
    }

    let remaining = s.state.masked_count();
    let status =
        if remaining == 0 { DecodeStatus::Completed } else { DecodeStatus::Exhausted { remaining_masks: remaining } };
    let generation = s.state.generation();
    let end = generation.iter().position(|&t| t == vocab.eos_id()).unwrap_or(generation.len());
    let text = vocab.render(&generation[..end], predictor.joiner());
    let denoise_calls = s.records.len();
    Ok(DecodeResult {
        tokens: s.state.tokens().to_vec(),
        prompt_len: s.state.prompt_len(),
        trace: DecodeTrace { prompt_len: s.state.prompt_len(), gen_budget: l, records: s.records },
        denoise_calls,
        position_evaluations: s.position_evaluations,
        steps_used: config.max_steps - s.state.step(),
        blocks,
        status,
        text,
    })
}
