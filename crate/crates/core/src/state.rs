//! Sequence state, prediction frames, and the unmasking update rule.
//!
//! Positions handed to [`SequenceState::apply_sample`] and stored in a
//! [`PredictionFrame`] are absolute sequence indices. Scheduling and sampling
//! work in generation-relative coordinates `[0, gen_budget)`; the offset
//! `prompt_len` is added only where those layers touch the sequence.

use thiserror::Error;

use crate::vocab::TokenId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StateError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("prompt contains the mask token at position {0}")]
    MaskInPrompt(usize),
    #[error("generation budget must be at least 1")]
    ZeroBudget,
    #[error("position {position} is not masked")]
    NotMasked { position: usize },
    #[error("position {position} out of range for sequence of length {len}")]
    OutOfRange { position: usize, len: usize },
    #[error("step counter is 0; the state cannot advance")]
    StepsExhausted,
    #[error("frame length {frame} does not match sequence length {state}")]
    FrameLength { frame: usize, state: usize },
}

/// The evolving sequence: prompt followed by the generation region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceState {
    tokens: Vec<TokenId>,
    prompt_len: usize,
    gen_budget: usize,
    step: usize,
    mask_id: TokenId,
}

impl SequenceState {
    /// `prompt ++ [MASK; gen_budget]` with the step counter at `max_steps`.
    pub fn init(prompt: &[TokenId], gen_budget: usize, max_steps: usize, mask_id: TokenId) -> Result<Self, StateError> {
        if prompt.is_empty() {
            return Err(StateError::EmptyPrompt);
        }
        if let Some(pos) = prompt.iter().position(|&t| t == mask_id) {
            return Err(StateError::MaskInPrompt(pos));
        }
        if gen_budget == 0 {
            return Err(StateError::ZeroBudget);
        }
        let mut tokens = Vec::with_capacity(prompt.len() + gen_budget);
        tokens.extend_from_slice(prompt);
        tokens.resize(prompt.len() + gen_budget, mask_id);
        Ok(Self { tokens, prompt_len: prompt.len(), gen_budget, step: max_steps, mask_id })
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt_len
    }

    pub fn gen_budget(&self) -> usize {
        self.gen_budget
    }

    /// Remaining iteration counter `t`.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn mask_id(&self) -> TokenId {
        self.mask_id
    }

    pub fn prompt(&self) -> &[TokenId] {
        &self.tokens[..self.prompt_len]
    }

    pub fn generation(&self) -> &[TokenId] {
        &self.tokens[self.prompt_len..]
    }

    pub fn is_masked(&self, position: usize) -> bool {
        self.tokens.get(position) == Some(&self.mask_id)
    }

    /// Absolute index of generation position `gen_pos`.
    pub fn abs(&self, gen_pos: usize) -> usize {
        self.prompt_len + gen_pos
    }

    pub fn is_gen_masked(&self, gen_pos: usize) -> bool {
        self.is_masked(self.prompt_len + gen_pos)
    }

    /// Masked generation positions, ascending, generation-relative.
    pub fn masked_gen_positions(&self) -> Vec<usize> {
        self.generation().iter().enumerate().filter(|(_, &t)| t == self.mask_id).map(|(i, _)| i).collect()
    }

    pub fn masked_count(&self) -> usize {
        self.generation().iter().filter(|&&t| t == self.mask_id).count()
    }

    /// Number of committed generation positions.
    pub fn unmasked_gen_count(&self) -> usize {
        self.gen_budget - self.masked_count()
    }

    /// Commits `frame.predicted` at every position in `selected` (absolute
    /// indices) and decrements the step counter.
    ///
    /// Positions outside `selected` keep their token: masked ones stay masked
    /// and committed ones never change.
    pub fn apply_sample(&self, frame: &PredictionFrame, selected: &[usize]) -> Result<SequenceState, StateError> {
        if self.step == 0 {
            return Err(StateError::StepsExhausted);
        }
        if frame.len() != self.tokens.len() {
            return Err(StateError::FrameLength { frame: frame.len(), state: self.tokens.len() });
        }
        for &p in selected {
            if p >= self.tokens.len() {
                return Err(StateError::OutOfRange { position: p, len: self.tokens.len() });
            }
            if self.tokens[p] != self.mask_id {
                return Err(StateError::NotMasked { position: p });
            }
        }
        let mut next = self.clone();
        for &p in selected {
            next.tokens[p] = frame.predicted[p];
        }
        next.step -= 1;
        Ok(next)
    }
}

/// Greedy predictions and their confidences for every sequence position.
///
/// Only `evaluated` positions were computed by the call that produced this
/// frame; every other position carries its value from the previous frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionFrame {
    pub predicted: Vec<TokenId>,
    pub confidence: Vec<f64>,
    /// Absolute positions computed by the producing call, ascending.
    pub evaluated: Vec<usize>,
}

impl PredictionFrame {
    /// Frame before any denoise call: committed positions report their own
    /// token at confidence 1, masked positions carry the sentinel
    /// `(mask_id, 0.0)`.
    pub fn initial(state: &SequenceState) -> Self {
        let confidence = state.tokens().iter().map(|&t| if t == state.mask_id() { 0.0 } else { 1.0 }).collect();
        Self { predicted: state.tokens().to_vec(), confidence, evaluated: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.predicted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicted.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const M: TokenId = 0;

    fn frame(pred: &[TokenId]) -> PredictionFrame {
        PredictionFrame {
            predicted: pred.to_vec(),
            confidence: vec![0.5; pred.len()],
            evaluated: (0..pred.len()).collect(),
        }
    }

    #[test]
    fn init_appends_masks() {
        let s = SequenceState::init(&[7, 3], 4, 8, M).unwrap();
        assert_eq!(s.tokens(), &[7, 3, M, M, M, M]);
        assert_eq!(s.step(), 8);
        assert_eq!(s.prompt_len(), 2);
        assert_eq!(s.gen_budget(), 4);
    }

    #[test]
    fn init_full_budget() {
        let prompt: Vec<TokenId> = (1..=20).collect();
        let s = SequenceState::init(&prompt, 512, 512, M).unwrap();
        assert_eq!(s.len(), 20 + 512);
        assert_eq!(s.masked_count(), 512);
    }

    #[test]
    fn init_rejects_bad_prompts() {
        assert_eq!(SequenceState::init(&[5, M, 2], 4, 4, M), Err(StateError::MaskInPrompt(1)));
        assert_eq!(SequenceState::init(&[], 4, 4, M), Err(StateError::EmptyPrompt));
        assert_eq!(SequenceState::init(&[1], 0, 4, M), Err(StateError::ZeroBudget));
    }

    #[test]
    fn empty_selection_only_ticks_step() {
        let s = SequenceState::init(&[7], 2, 3, M).unwrap();
        let next = s.apply_sample(&frame(&[7, 4, 9]), &[]).unwrap();
        assert_eq!(next.tokens(), s.tokens());
        assert_eq!(next.step(), 2);
    }

    #[test]
    fn update_rule_three_cases() {
        let s = SequenceState::init(&[7], 2, 3, M).unwrap();
        let next = s.apply_sample(&frame(&[7, 4, 9]), &[1]).unwrap();
        assert_eq!(next.tokens(), &[7, 4, M]);
    }

    #[test]
    fn full_selection_clears_masks() {
        let s = SequenceState::init(&[7], 2, 3, M).unwrap();
        let next = s.apply_sample(&frame(&[7, 4, 9]), &[1, 2]).unwrap();
        assert!(next.masked_gen_positions().is_empty());
    }

    #[test]
    fn contract_violations() {
        let s = SequenceState::init(&[7], 2, 3, M).unwrap();
        assert_eq!(s.apply_sample(&frame(&[7, 4, 9]), &[0]), Err(StateError::NotMasked { position: 0 }));
        let s0 = SequenceState::init(&[7], 2, 0, M).unwrap();
        assert_eq!(s0.apply_sample(&frame(&[7, 4, 9]), &[1]), Err(StateError::StepsExhausted));
    }

    #[test]
    fn initial_frame_sentinels() {
        let s = SequenceState::init(&[7, 3], 2, 3, M).unwrap();
        let f = PredictionFrame::initial(&s);
        assert_eq!(f.predicted, vec![7, 3, M, M]);
        assert_eq!(f.confidence, vec![1.0, 1.0, 0.0, 0.0]);
        assert!(f.evaluated.is_empty());
    }
}
