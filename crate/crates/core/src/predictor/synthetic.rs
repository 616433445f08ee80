//! Synthetic confidence field with a plateau, a volatility band, and a floor.
//!
//! The field is a function of the state only: the frontier is the number of
//! committed generation positions, and all noise is hashed from
//! `(noise_seed, position, step counter)`. With a non-zero delimiter period
//! the plateau and the band stop at the end of the active semantic step, the
//! first delimiter position at or after the frontier; everything past it sits
//! on the floor.

use serde::{Deserialize, Serialize};

use super::{DenoiseContext, MaskPredictor, Prediction, PredictorError};
use crate::rng::{hash_words, uniform};
use crate::state::SequenceState;
use crate::vocab::{TokenId, Vocabulary, NEWLINE_TOKEN};

const CONTENT_WORDS: usize = 8;

const TAG_ADVANCE: u64 = 1;
const TAG_WIDTH: u64 = 2;
const TAG_CONF: u64 = 3;
const TAG_WORD: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFieldParams {
    /// Expected number of masked positions the plateau covers ahead of the
    /// committed count on each step.
    pub plateau_rate: f64,
    pub vb_width_mean: f64,
    /// Per-step band width is `round(mean ± jitter)`, uniformly, at least 1.
    pub vb_width_jitter: f64,
    pub floor_level: f64,
    pub vb_low: f64,
    pub vb_high: f64,
    pub plateau_level: f64,
    /// Plant the delimiter at generation positions `i ≡ s-1 (mod s)`; 0 disables.
    pub delimiter_period: usize,
    pub noise_seed: u64,
}

impl Default for SyntheticFieldParams {
    fn default() -> Self {
        Self {
            plateau_rate: 1.5,
            vb_width_mean: 8.0,
            vb_width_jitter: 2.0,
            floor_level: 0.05,
            vb_low: 0.3,
            vb_high: 0.8,
            plateau_level: 0.95,
            delimiter_period: 0,
            noise_seed: 0,
        }
    }
}

impl SyntheticFieldParams {
    pub fn validate(&self) -> Result<(), PredictorError> {
        let ordered = 0.0 < self.floor_level
            && self.floor_level < self.vb_low
            && self.vb_low < self.vb_high
            && self.vb_high <= self.plateau_level
            && self.plateau_level <= 1.0;
        if !ordered {
            return Err(PredictorError::InvalidParams(format!(
                "need 0 < floor_level < vb_low < vb_high <= plateau_level <= 1, got {} / {} / {} / {}",
                self.floor_level, self.vb_low, self.vb_high, self.plateau_level
            )));
        }
        if self.vb_width_mean.is_nan() || self.vb_width_mean < 1.0 {
            return Err(PredictorError::InvalidParams(format!(
                "vb_width_mean must be >= 1, got {}",
                self.vb_width_mean
            )));
        }
        if self.vb_width_jitter.is_nan() || self.vb_width_jitter < 0.0 {
            return Err(PredictorError::InvalidParams("vb_width_jitter must be >= 0".into()));
        }
        if !(self.plateau_rate > 0.0 && self.plateau_rate.is_finite()) {
            return Err(PredictorError::InvalidParams("plateau_rate must be a positive number".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    Plateau,
    VolatilityBand,
    Floor,
}

/// Regime boundaries of the field for one state, in generation coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldLayout {
    /// Positions below this are on the plateau.
    pub plateau_end: usize,
    /// Positions in `[plateau_end, band_end)` are in the volatility band.
    pub band_end: usize,
}

impl FieldLayout {
    pub fn regime(&self, gen_pos: usize) -> Regime {
        if gen_pos < self.plateau_end {
            Regime::Plateau
        } else if gen_pos < self.band_end {
            Regime::VolatilityBand
        } else {
            Regime::Floor
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPredictor {
    params: SyntheticFieldParams,
    vocab: Vocabulary,
    delimiter: TokenId,
    words: Vec<TokenId>,
}

pub fn build_synthetic(params: SyntheticFieldParams) -> Result<SyntheticPredictor, PredictorError> {
    params.validate()?;
    let words: Vec<String> = (0..CONTENT_WORDS).map(|i| format!("w{i}")).collect();
    let vocab = Vocabulary::with_specials(std::iter::once(NEWLINE_TOKEN.to_string()).chain(words.iter().cloned()));
    let delimiter = vocab.id(NEWLINE_TOKEN).expect("newline inserted above");
    let words = words.iter().map(|w| vocab.id(w).expect("word inserted above")).collect();
    Ok(SyntheticPredictor { params, vocab, delimiter, words })
}

impl SyntheticPredictor {
    pub fn params(&self) -> &SyntheticFieldParams {
        &self.params
    }

    pub fn delimiter_id(&self) -> TokenId {
        self.delimiter
    }

    /// Content tokens the field emits outside delimiters and the floor.
    pub fn content_ids(&self) -> &[TokenId] {
        &self.words
    }

    fn is_delimiter_slot(&self, gen_pos: usize) -> bool {
        let s = self.params.delimiter_period;
        s > 0 && gen_pos % s == s - 1
    }

    pub fn layout(&self, state: &SequenceState) -> FieldLayout {
        let p = &self.params;
        let t = state.step() as u64;
        let committed = state.unmasked_gen_count();
        let advance = (p.plateau_rate + uniform(p.noise_seed, &[TAG_ADVANCE, t])).floor() as usize;
        let jitter = p.vb_width_jitter * (2.0 * uniform(p.noise_seed, &[TAG_WIDTH, t]) - 1.0);
        let width = (p.vb_width_mean + jitter).round().max(1.0) as usize;

        let mut plateau_end = committed + advance;
        let mut band_end = plateau_end + width;
        if p.delimiter_period > 0 {
            let s = p.delimiter_period;
            // first delimiter slot at or after the frontier, inclusive end
            let step_end = committed + (s - 1 - committed % s) + 1;
            plateau_end = plateau_end.min(step_end);
            band_end = band_end.min(step_end);
        }
        let budget = state.gen_budget();
        FieldLayout { plateau_end: plateau_end.min(budget), band_end: band_end.min(budget) }
    }

    /// Ground-truth regime of every generation position under `state`.
    pub fn regime_map(&self, state: &SequenceState) -> Vec<Regime> {
        let layout = self.layout(state);
        (0..state.gen_budget()).map(|i| layout.regime(i)).collect()
    }

    fn predict_at(&self, state: &SequenceState, layout: &FieldLayout, gen_pos: usize) -> Prediction {
        let p = &self.params;
        let t = state.step() as u64;
        let u = uniform(p.noise_seed, &[TAG_CONF, gen_pos as u64, t]);
        let regime = layout.regime(gen_pos);
        let confidence = match regime {
            Regime::Plateau => p.plateau_level + (1.0 - p.plateau_level) * u,
            Regime::VolatilityBand => p.vb_low + (p.vb_high - p.vb_low) * u,
            Regime::Floor => p.floor_level * (1.0 - u),
        };
        let token = if self.is_delimiter_slot(gen_pos) {
            self.delimiter
        } else if regime == Regime::Floor {
            self.vocab.eos_id()
        } else {
            let h = hash_words(p.noise_seed, &[TAG_WORD, gen_pos as u64]);
            self.words[(h % self.words.len() as u64) as usize]
        };
        Prediction { token, confidence }
    }
}

impl MaskPredictor for SyntheticPredictor {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn predict_masked(
        &self,
        state: &SequenceState,
        positions: &[usize],
        _ctx: &DenoiseContext<'_>,
    ) -> Result<Vec<Prediction>, PredictorError> {
        let layout = self.layout(state);
        let lp = state.prompt_len();
        Ok(positions
            .iter()
            .map(|&abs| {
                debug_assert!(abs >= lp);
                self.predict_at(state, &layout, abs - lp)
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::PredictionFrame;

    fn predictor(params: SyntheticFieldParams) -> SyntheticPredictor {
        build_synthetic(params).unwrap()
    }

    fn all_masked(p: &SyntheticPredictor, state: &SequenceState) -> Vec<Prediction> {
        let frame = PredictionFrame::initial(state);
        let positions: Vec<usize> = (state.prompt_len()..state.len()).collect();
        p.predict_masked(state, &positions, &DenoiseContext::all_fresh(&frame)).unwrap()
    }

    /// State with the first `committed` generation positions filled.
    fn state_with(p: &SyntheticPredictor, committed: usize, budget: usize) -> SequenceState {
        let word = p.content_ids()[0];
        let mut s = SequenceState::init(&[word], budget, budget * 2, 0).unwrap();
        let mut frame = PredictionFrame::initial(&s);
        frame.predicted.iter_mut().for_each(|t| *t = word);
        let sel: Vec<usize> = (1..=committed).collect();
        s = s.apply_sample(&frame, &sel).unwrap();
        s
    }

    #[test]
    fn regime_map_matches_field() {
        // advance fixed at 8 - committed(0) and width fixed at 4
        let p = predictor(SyntheticFieldParams {
            plateau_rate: 8.0,
            vb_width_mean: 4.0,
            vb_width_jitter: 0.0,
            ..Default::default()
        });
        let s = state_with(&p, 0, 32);
        let layout = p.layout(&s);
        assert_eq!(layout, FieldLayout { plateau_end: 8, band_end: 12 });
        let preds = all_masked(&p, &s);
        for (i, pr) in preds.iter().enumerate() {
            match i {
                0..=7 => assert!(pr.confidence >= 0.95),
                8..=11 => assert!((0.3..=0.8).contains(&pr.confidence)),
                _ => assert!(pr.confidence <= 0.05 && pr.confidence > 0.0),
            }
        }
    }

    #[test]
    fn plateau_follows_commit_count() {
        let p = predictor(SyntheticFieldParams {
            plateau_rate: 2.0,
            vb_width_mean: 4.0,
            vb_width_jitter: 0.0,
            ..Default::default()
        });
        let s = state_with(&p, 8, 32);
        let map = p.regime_map(&s);
        assert!(map[..10].iter().all(|&r| r == Regime::Plateau));
        assert!(map[10..14].iter().all(|&r| r == Regime::VolatilityBand));
        assert!(map[14..].iter().all(|&r| r == Regime::Floor));
    }

    #[test]
    fn floor_never_reaches_threshold() {
        let p = predictor(SyntheticFieldParams::default());
        for committed in [0, 5, 20] {
            let s = state_with(&p, committed, 40);
            let map = p.regime_map(&s);
            for (pr, r) in all_masked(&p, &s).iter().zip(&map) {
                if *r == Regime::Floor {
                    assert!(pr.confidence < 0.9);
                }
            }
        }
    }

    #[test]
    fn deterministic_frames() {
        let a = predictor(SyntheticFieldParams { noise_seed: 11, ..Default::default() });
        let b = predictor(SyntheticFieldParams { noise_seed: 11, ..Default::default() });
        let s = state_with(&a, 3, 24);
        assert_eq!(all_masked(&a, &s), all_masked(&b, &s));
    }

    #[test]
    fn delimiters_planted_and_gate_the_band() {
        let p = predictor(SyntheticFieldParams {
            plateau_rate: 1.0,
            vb_width_mean: 10.0,
            vb_width_jitter: 0.0,
            delimiter_period: 6,
            ..Default::default()
        });
        let s = state_with(&p, 6, 30);
        let preds = all_masked(&p, &s);
        for (i, pr) in preds.iter().enumerate() {
            assert_eq!(pr.token == p.delimiter_id(), i % 6 == 5, "position {i}");
        }
        // frontier 6, active step ends at 11
        let layout = p.layout(&s);
        assert_eq!(layout.band_end, 12);
        assert_eq!(layout.regime(11), Regime::VolatilityBand);
        assert_eq!(layout.regime(12), Regime::Floor);
        assert!((0.3..=0.8).contains(&preds[11].confidence));
    }

    #[test]
    fn rejects_bad_params() {
        for bad in [
            SyntheticFieldParams { floor_level: 0.5, ..Default::default() },
            SyntheticFieldParams { vb_high: 0.99, ..Default::default() },
            SyntheticFieldParams { vb_width_mean: 0.5, ..Default::default() },
            SyntheticFieldParams { plateau_rate: 0.0, ..Default::default() },
        ] {
            assert!(build_synthetic(bad).is_err());
        }
    }
}
