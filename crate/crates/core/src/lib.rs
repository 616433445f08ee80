//! Blockwise semi-autoregressive decoding for masked diffusion language
//! models, with a semantic-aware adaptive block-size scheduler.
//!
//! The crate holds the decode loop and its pieces (sequence state, samplers,
//! block schedulers, cache-scope policies), three mask predictors (a
//! synthetic confidence field, a bidirectional n-gram model and a trace
//! replayer), trace recording, failure and regime metrics, and the
//! experiment harness driven by the `adablock` binary.
//!
//! ```
//! use adablock_core::{build_synthetic, decode, DecodeConfig, MaskPredictor, SyntheticFieldParams};
//!
//! let predictor = build_synthetic(SyntheticFieldParams { delimiter_period: 6, ..Default::default() }).unwrap();
//! let config = DecodeConfig::for_vocab(predictor.vocabulary()).with_budget(48);
//! let prompt = [predictor.content_ids()[0]];
//! let result = decode(&predictor, &config, &prompt).unwrap();
//! assert!(result.completed());
//! assert_eq!(result.denoise_calls, result.trace.len());
//! ```

pub mod config;
pub mod decoder;
pub mod harness;
pub mod metrics;
pub mod predictor;
pub mod rng;
pub mod sampling;
pub mod scheduler;
pub mod state;
pub mod trace;
pub mod vocab;

pub use config::{CachePolicy, ConfigError, DecodeConfig, SamplerChoice, SchedulerKind};
pub use decoder::{decode, evaluation_scope, DecodeError, DecodeResult, DecodeStatus, Phase};
pub use metrics::{
    detect_late_overhead, detect_premature, failure_rates, segment_regimes, vb_width_series, FailureReport,
    RegimeLabel, RegimeMap, RegimeThresholds,
};
pub use predictor::{
    build_ngram, build_synthetic, denoise, load_trace_predictor, DenoiseContext, MaskPredictor, NGramModel,
    NGramOptions, Prediction, PredictorError, SyntheticFieldParams, SyntheticPredictor, Tokenization, TracePredictor,
};
pub use sampling::{linear_sample, threshold_sample, vanilla_sample, SamplerKind};
pub use scheduler::{compute_block_length, fixed_block_length, BlockDecision, BlockSource};
pub use state::{PredictionFrame, SequenceState, StateError};
pub use trace::{read_trace, DecodeTrace, StepRecord, TraceHeader};
pub use vocab::{TokenId, Vocabulary};
