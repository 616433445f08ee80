//! Replays recorded frames from a trace file, one record per denoise call.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Mutex;

use super::{DenoiseContext, MaskPredictor, Prediction, PredictorError};
use crate::state::SequenceState;
use crate::trace::{read_trace_lines, TraceError, TraceHeader, TraceLine};
use crate::vocab::Vocabulary;

/// Holds a replay cursor, so each concurrent session needs its own instance.
#[derive(Debug)]
pub struct TracePredictor {
    vocab: Vocabulary,
    header: TraceHeader,
    lines: Vec<TraceLine>,
    cursor: Mutex<usize>,
}

impl From<TraceError> for PredictorError {
    fn from(e: TraceError) -> Self {
        match e {
            TraceError::Malformed { line, reason } => PredictorError::Malformed { line, reason },
            TraceError::Empty => PredictorError::Malformed { line: 1, reason: "missing header".into() },
            TraceError::Io(e) => PredictorError::Io(e),
        }
    }
}

pub fn load_trace_predictor(path: impl AsRef<Path>) -> Result<TracePredictor, PredictorError> {
    TracePredictor::from_reader(BufReader::new(File::open(path)?))
}

impl TracePredictor {
    pub fn from_reader<R: BufRead>(input: R) -> Result<Self, PredictorError> {
        let (header, lines) = read_trace_lines(input)?;
        let vocab = Vocabulary::try_from(header.vocab.clone())
            .map_err(|e| PredictorError::Malformed { line: 1, reason: e.to_string() })?;
        Ok(Self { vocab, header, lines, cursor: Mutex::new(0) })
    }

    pub fn header(&self) -> &TraceHeader {
        &self.header
    }

    pub fn recorded_steps(&self) -> usize {
        self.lines.len()
    }

    /// Number of records consumed so far.
    pub fn position(&self) -> usize {
        *self.cursor.lock().expect("cursor lock")
    }

    pub fn rewind(&self) {
        *self.cursor.lock().expect("cursor lock") = 0;
    }

    /// A fresh instance over the same records with its own cursor.
    pub fn fork(&self) -> Self {
        Self {
            vocab: self.vocab.clone(),
            header: self.header.clone(),
            lines: self.lines.clone(),
            cursor: Mutex::new(0),
        }
    }
}

impl MaskPredictor for TracePredictor {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn predict_masked(
        &self,
        _state: &SequenceState,
        positions: &[usize],
        _ctx: &DenoiseContext<'_>,
    ) -> Result<Vec<Prediction>, PredictorError> {
        let mut cursor = self.cursor.lock().expect("cursor lock");
        let line = self.lines.get(*cursor).ok_or(PredictorError::ReplayExhausted(*cursor))?;
        let out = positions
            .iter()
            .map(|&p| {
                let k = line
                    .positions
                    .iter()
                    .position(|&q| q == p)
                    .ok_or(PredictorError::PositionNotRecorded { step: line.step, position: p })?;
                Ok(Prediction { token: line.pred[k], confidence: line.conf[k] })
            })
            .collect::<Result<Vec<_>, PredictorError>>()?;
        *cursor += 1;
        Ok(out)
    }
}
