#![allow(dead_code)]

use std::time::{Duration, Instant};

use adablock_core::{build_ngram, build_synthetic, NGramModel, NGramOptions, SyntheticFieldParams, SyntheticPredictor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `the value is <digit> .` lines: five predictable tokens, one random.
pub fn value_corpus(lines: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..lines).map(|_| format!("the value is {} .\n", rng.gen_range(0..10))).collect()
}

/// Short subject-verb-object sentences with several choices per slot.
pub fn sentence_corpus(lines: usize, seed: u64) -> String {
    const SUBJ: [&str; 4] = ["the cat", "a dog", "the bird", "my friend"];
    const VERB: [&str; 4] = ["sat on", "looked at", "ran to", "jumped over"];
    const OBJ: [&str; 4] = ["the mat", "a tree", "the house", "the wall"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for _ in 0..lines {
        let (s, v, o) = (SUBJ[rng.gen_range(0..4)], VERB[rng.gen_range(0..4)], OBJ[rng.gen_range(0..4)]);
        out += &format!("{s} {v} {o} .\n");
    }
    out
}

pub fn ngram(text: &str, order: usize, max_span: usize, provisional: Option<f64>) -> NGramModel {
    build_ngram(
        text,
        NGramOptions { order, smoothing_k: 0.01, max_span, provisional_context: provisional, ..Default::default() },
    )
    .expect("corpus builds")
}

pub fn synthetic(params: SyntheticFieldParams) -> SyntheticPredictor {
    build_synthetic(params).expect("valid field parameters")
}

/// Times `f` and prints one PASS/FAIL line; panics on failure.
pub fn criterion<F: FnOnce() -> Result<String, String>>(n: usize, name: &str, limit: Duration, f: F) {
    let start = Instant::now();
    let outcome = f();
    let elapsed = start.elapsed();
    let verdict = match outcome {
        Ok(detail) if elapsed <= limit => Ok(detail),
        Ok(detail) => Err(format!("{detail}; took {elapsed:.2?}, limit {limit:?}")),
        Err(e) => Err(e),
    };
    match verdict {
        Ok(detail) => println!("PASS criterion {n} ({name}): {detail} [{elapsed:.2?}]"),
        Err(detail) => {
            println!("FAIL criterion {n} ({name}): {detail} [{elapsed:.2?}]");
            panic!("criterion {n} failed: {detail}");
        }
    }
}

/// `Err(msg)` unless `cond`.
pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}
