//! Per-step decode records and their JSONL serialization.
//!
//! A trace file starts with a header object and then holds one object per
//! denoise call:
//!
//! ```text
//! {"vocab": [...], "mask_id": 0, "prompt_len": 4, "gen_budget": 64, ...}
//! {"step": 0, "g": 0, "positions": [4, 5, ...], "pred": [...], "conf": [...], ...}
//! ```
//!
//! `positions` are absolute sequence indices and `pred`/`conf` are aligned
//! with them. Records also carry the step counter `t`, the sampled positions,
//! the cache policy, and `block_size` on block-opening records, which is
//! enough to rebuild every in-memory [`StepRecord`] exactly.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{CachePolicy, DecodeConfig};
use crate::vocab::{TokenId, Vocabulary, VocabularyRecord};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("trace is empty")]
    Empty,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

fn malformed(line: usize, reason: impl Into<String>) -> TraceError {
    TraceError::Malformed { line, reason: reason.into() }
}

/// One denoise call and the sample that followed it. All positions are
/// generation-relative.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Index of the denoise call within the decode.
    pub index: usize,
    /// Step counter before sampling.
    pub t: usize,
    /// Start of the current block.
    pub g: usize,
    /// Size of the current block.
    pub block_size: usize,
    pub opens_block: bool,
    pub evaluated: Vec<usize>,
    /// Frame predictions over the generation region after this denoise.
    pub predicted: Vec<TokenId>,
    /// Frame confidences over the generation region after this denoise.
    pub confidence: Vec<f64>,
    /// Masked positions before sampling (`M_t`).
    pub masked: Vec<usize>,
    /// Positions unmasked by this step (`S_t`).
    pub sampled: Vec<usize>,
    pub cache: CachePolicy,
}

impl StepRecord {
    /// Block size, on block-opening records only.
    pub fn opened_block(&self) -> Option<usize> {
        self.opens_block.then_some(self.block_size)
    }

    pub fn block_end(&self) -> usize {
        self.g + self.block_size
    }

    pub fn in_block(&self, gen_pos: usize) -> bool {
        gen_pos >= self.g && gen_pos < self.block_end()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DecodeTrace {
    pub prompt_len: usize,
    pub gen_budget: usize,
    pub records: Vec<StepRecord>,
}

/// First line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    #[serde(flatten)]
    pub vocab: VocabularyRecord,
    pub prompt_len: usize,
    pub gen_budget: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<Vec<TokenId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<DecodeConfig>,
}

impl TraceHeader {
    pub fn new(vocab: &Vocabulary, prompt: &[TokenId], config: &DecodeConfig) -> Self {
        Self {
            vocab: vocab.into(),
            prompt_len: prompt.len(),
            gen_budget: config.gen_budget,
            prompt: Some(prompt.to_vec()),
            config: Some(config.clone()),
        }
    }
}

/// One record line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub step: usize,
    pub g: usize,
    pub positions: Vec<usize>,
    pub pred: Vec<TokenId>,
    pub conf: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampled: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<CachePolicy>,
}

impl DecodeTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn to_line(&self, r: &StepRecord) -> TraceLine {
        let lp = self.prompt_len;
        TraceLine {
            step: r.index,
            g: r.g,
            positions: r.evaluated.iter().map(|&p| p + lp).collect(),
            pred: r.evaluated.iter().map(|&p| r.predicted[p]).collect(),
            conf: r.evaluated.iter().map(|&p| r.confidence[p]).collect(),
            t: Some(r.t),
            block_size: r.opened_block(),
            sampled: Some(r.sampled.iter().map(|&p| p + lp).collect()),
            cache: Some(r.cache),
        }
    }

    pub fn write_jsonl<W: Write>(&self, header: &TraceHeader, mut out: W) -> std::io::Result<()> {
        serde_json::to_writer(&mut out, header)?;
        out.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut out, &self.to_line(r))?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn to_jsonl(&self, header: &TraceHeader) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(header, &mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    /// Rebuilds full records from header and lines. Fails if the lines lack
    /// the sampling fields this engine writes.
    pub fn from_lines(header: &TraceHeader, lines: &[TraceLine]) -> Result<Self, TraceError> {
        let lp = header.prompt_len;
        let budget = header.gen_budget;
        let mut predicted = vec![header.vocab.mask_id; budget];
        let mut confidence = vec![0.0; budget];
        let mut masked_flags = vec![true; budget];
        let mut block_size = 0usize;
        let mut records = Vec::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            let lineno = i + 2;
            let to_gen = |p: usize| {
                p.checked_sub(lp)
                    .filter(|&q| q < budget)
                    .ok_or_else(|| malformed(lineno, format!("position {p} outside the generation region")))
            };
            let evaluated = line.positions.iter().map(|&p| to_gen(p)).collect::<Result<Vec<_>, _>>()?;
            for (k, &p) in evaluated.iter().enumerate() {
                predicted[p] = line.pred[k];
                confidence[p] = line.conf[k];
            }
            if let Some(b) = line.block_size {
                block_size = b;
            } else if i == 0 {
                return Err(malformed(lineno, "first record must open a block"));
            }
            let sampled_abs = line
                .sampled
                .as_ref()
                .ok_or_else(|| malformed(lineno, "missing `sampled`; cannot rebuild sampling decisions"))?;
            let sampled = sampled_abs.iter().map(|&p| to_gen(p)).collect::<Result<Vec<_>, _>>()?;
            let masked: Vec<usize> = (0..budget).filter(|&p| masked_flags[p]).collect();
            for &p in &sampled {
                if !masked_flags[p] {
                    return Err(malformed(lineno, format!("sampled position {} was not masked", p + lp)));
                }
                masked_flags[p] = false;
            }
            records.push(StepRecord {
                index: line.step,
                t: line.t.ok_or_else(|| malformed(lineno, "missing `t`"))?,
                g: line.g,
                block_size,
                opens_block: line.block_size.is_some(),
                evaluated,
                predicted: predicted.clone(),
                confidence: confidence.clone(),
                masked,
                sampled,
                cache: line.cache.ok_or_else(|| malformed(lineno, "missing `cache`"))?,
            });
        }
        Ok(Self { prompt_len: lp, gen_budget: budget, records })
    }
}

/// Parses a trace stream, checking each line against the schema. Errors name
/// the first offending line (1-based; the header is line 1).
pub fn read_trace_lines<R: BufRead>(input: R) -> Result<(TraceHeader, Vec<TraceLine>), TraceError> {
    let mut lines = input.lines();
    let header_text = lines.next().ok_or(TraceError::Empty)??;
    let header: TraceHeader =
        serde_json::from_str(&header_text).map_err(|e| malformed(1, format!("bad header: {e}")))?;
    Vocabulary::try_from(header.vocab.clone()).map_err(|e| malformed(1, e.to_string()))?;
    let seq_len = header.prompt_len + header.gen_budget;
    let mut out = Vec::new();
    for (i, text) in lines.enumerate() {
        let lineno = i + 2;
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        let line: TraceLine = serde_json::from_str(&text).map_err(|e| malformed(lineno, e.to_string()))?;
        if line.positions.len() != line.pred.len() || line.positions.len() != line.conf.len() {
            return Err(malformed(lineno, "positions, pred and conf must have equal length"));
        }
        if let Some(&p) = line.positions.iter().find(|&&p| p >= seq_len) {
            return Err(malformed(lineno, format!("position {p} out of range")));
        }
        if line.pred.iter().any(|&t| t as usize >= header.vocab.vocab.len()) {
            return Err(malformed(lineno, "predicted token id out of vocabulary range"));
        }
        if line.conf.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(malformed(lineno, "confidence outside [0, 1]"));
        }
        out.push(line);
    }
    Ok((header, out))
}

/// Reads a trace file into its header and rebuilt records.
pub fn read_trace<R: BufRead>(input: R) -> Result<(TraceHeader, DecodeTrace), TraceError> {
    let (header, lines) = read_trace_lines(input)?;
    let trace = DecodeTrace::from_lines(&header, &lines)?;
    Ok((header, trace))
}
