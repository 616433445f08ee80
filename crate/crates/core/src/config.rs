//! Decode hyperparameters and the plain-text `key = value` format they load from.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vocab::{TokenId, Vocabulary, NEWLINE_TOKEN};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("invalid value {value:?} for {key}: {reason}")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("{0}")]
    Invariant(String),
}

fn invalid(key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue { key: key.to_string(), value: value.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerChoice {
    Vanilla,
    Linear,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerKind {
    Fixed,
    Adaptive,
}

/// Which predictions a denoise call refreshes. See
/// [`crate::decoder::evaluation_scope`] for the exact scopes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CachePolicy {
    #[serde(rename = "none")]
    NoCache,
    #[serde(rename = "prefix")]
    PrefixCache,
    #[serde(rename = "dual")]
    DualCache,
}

macro_rules! keyword_enum {
    ($ty:ty, $key:literal, $($word:literal => $variant:expr),+ $(,)?) => {
        impl FromStr for $ty {
            type Err = ConfigError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.trim() {
                    $($word => Ok($variant),)+
                    other => Err(invalid($key, other, concat!("expected one of: ", $($word, " "),+))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let word = match self { $(v if *v == $variant => $word,)+ _ => unreachable!() };
                f.write_str(word)
            }
        }
    };
}

keyword_enum!(SamplerChoice, "sampler",
    "vanilla" => SamplerChoice::Vanilla,
    "linear" => SamplerChoice::Linear,
    "dynamic" => SamplerChoice::Dynamic);
keyword_enum!(SchedulerKind, "scheduler",
    "fixed" => SchedulerKind::Fixed,
    "adaptive" => SchedulerKind::Adaptive);
keyword_enum!(CachePolicy, "cache",
    "none" => CachePolicy::NoCache,
    "prefix" => CachePolicy::PrefixCache,
    "dual" => CachePolicy::DualCache);

/// All hyperparameters of one decode session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    /// Unmask threshold for dynamic sampling.
    pub tau: f64,
    /// Default (and fallback) block size.
    pub b0: usize,
    /// Minimum delimiter confidence for the adaptive scheduler.
    pub tau_d: f64,
    pub delimiters: BTreeSet<TokenId>,
    pub gen_budget: usize,
    pub max_steps: usize,
    pub window_fraction: f64,
    pub sampler: SamplerChoice,
    pub scheduler: SchedulerKind,
    pub cache: CachePolicy,
    /// Step count `T` of the linear sampler; it unmasks `ceil(L / T)` per step.
    pub linear_steps: usize,
    pub seed: u64,
}

pub const DEFAULT_TAU: f64 = 0.9;
pub const DEFAULT_B0: usize = 32;
pub const DEFAULT_TAU_D: f64 = 0.3;
pub const DEFAULT_WINDOW_FRACTION: f64 = 0.25;
pub const DEFAULT_GEN_BUDGET: usize = 512;

/// Keys accepted by [`DecodeConfig::set`].
pub const CONFIG_KEYS: &[&str] = &[
    "tau",
    "b0",
    "tau_d",
    "delimiters",
    "gen_budget",
    "max_steps",
    "window_fraction",
    "sampler",
    "scheduler",
    "cache",
    "linear_steps",
    "seed",
];

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            b0: DEFAULT_B0,
            tau_d: DEFAULT_TAU_D,
            delimiters: BTreeSet::new(),
            gen_budget: DEFAULT_GEN_BUDGET,
            max_steps: DEFAULT_GEN_BUDGET,
            window_fraction: DEFAULT_WINDOW_FRACTION,
            sampler: SamplerChoice::Dynamic,
            scheduler: SchedulerKind::Adaptive,
            cache: CachePolicy::NoCache,
            linear_steps: DEFAULT_GEN_BUDGET,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    /// Defaults with the delimiter set `{"\n"}` when the vocabulary has a
    /// newline token.
    pub fn for_vocab(vocab: &Vocabulary) -> Self {
        let mut cfg = Self::default();
        cfg.delimiters.extend(vocab.id(NEWLINE_TOKEN));
        cfg
    }

    pub fn with_budget(mut self, gen_budget: usize) -> Self {
        self.gen_budget = gen_budget;
        self.max_steps = gen_budget;
        self.linear_steps = gen_budget;
        self
    }

    pub fn validate(&self, vocab: &Vocabulary) -> Result<(), ConfigError> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(ConfigError::Invariant(format!("{name} must lie in (0, 1], got {v}")))
            }
        };
        unit("tau", self.tau)?;
        if !(self.tau_d >= 0.0 && self.tau_d.is_finite()) {
            return Err(ConfigError::Invariant(format!("tau_d must be a finite number >= 0, got {}", self.tau_d)));
        }
        unit("window_fraction", self.window_fraction)?;
        for (name, v) in [
            ("b0", self.b0),
            ("gen_budget", self.gen_budget),
            ("max_steps", self.max_steps),
            ("linear_steps", self.linear_steps),
        ] {
            if v == 0 {
                return Err(ConfigError::Invariant(format!("{name} must be at least 1")));
            }
        }
        for &d in &self.delimiters {
            if !vocab.contains(d) {
                return Err(ConfigError::Invariant(format!("delimiter id {d} is not in the vocabulary")));
            }
            if d == vocab.mask_id() {
                return Err(ConfigError::Invariant("the mask token cannot be a delimiter".into()));
            }
        }
        Ok(())
    }

    /// Sets one key from its textual value. Delimiters are token strings
    /// resolved against `vocab`.
    pub fn set(&mut self, key: &str, value: &str, vocab: &Vocabulary) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "tau" => self.tau = parse_num(key, v)?,
            "b0" => self.b0 = parse_num(key, v)?,
            "tau_d" => self.tau_d = parse_num(key, v)?,
            "gen_budget" => self.gen_budget = parse_num(key, v)?,
            "max_steps" => self.max_steps = parse_num(key, v)?,
            "window_fraction" => self.window_fraction = parse_num(key, v)?,
            "linear_steps" => self.linear_steps = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "sampler" => self.sampler = v.parse()?,
            "scheduler" => self.scheduler = v.parse()?,
            "cache" => self.cache = v.parse()?,
            "delimiters" => {
                let mut set = BTreeSet::new();
                for tok in split_escaped(value, ',') {
                    let tok = unescape(tok.trim());
                    if tok.is_empty() {
                        continue;
                    }
                    let id = vocab.id(&tok).ok_or_else(|| invalid(key, &tok, "token not in vocabulary"))?;
                    set.insert(id);
                }
                self.delimiters = set;
            }
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Applies `pairs` on top of [`DecodeConfig::for_vocab`]. When
    /// `gen_budget` is given without `max_steps` or `linear_steps`, those two
    /// follow it.
    pub fn from_pairs<'a, I>(pairs: I, vocab: &Vocabulary) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut cfg = Self::for_vocab(vocab);
        let (mut steps_set, mut linear_set) = (false, false);
        for (k, v) in pairs {
            cfg.set(k, v, vocab)?;
            steps_set |= k == "max_steps";
            linear_set |= k == "linear_steps";
        }
        if !steps_set {
            cfg.max_steps = cfg.gen_budget;
        }
        if !linear_set {
            cfg.linear_steps = cfg.gen_budget;
        }
        cfg.validate(vocab)?;
        Ok(cfg)
    }

    /// Parses a config file: `key = value` lines, `#` comments.
    pub fn parse(text: &str, vocab: &Vocabulary) -> Result<Self, ConfigError> {
        let doc = KvDocument::parse(text)?;
        Self::from_pairs(doc.global().iter().map(|e| (e.key.as_str(), e.value.as_str())), vocab)
    }

    /// Renders the config back to the file format.
    pub fn to_text(&self, vocab: &Vocabulary) -> String {
        let delims: Vec<String> = self.delimiters.iter().map(|&d| escape(vocab.token(d).unwrap_or_default())).collect();
        format!(
            "tau = {}\nb0 = {}\ntau_d = {}\ndelimiters = {}\ngen_budget = {}\nmax_steps = {}\n\
             window_fraction = {}\nsampler = {}\nscheduler = {}\ncache = {}\nlinear_steps = {}\nseed = {}\n",
            self.tau,
            self.b0,
            self.tau_d,
            delims.join(","),
            self.gen_budget,
            self.max_steps,
            self.window_fraction,
            self.sampler,
            self.scheduler,
            self.cache,
            self.linear_steps,
            self.seed
        )
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| invalid(key, v, e.to_string()))
}

/// Splits on `sep` unless it is preceded by a backslash.
pub fn split_escaped(s: &str, sep: char) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut start = 0;
    let mut escaped = false;
    for (i, c) in s.char_indices() {
        if escaped {
            escaped = false;
        } else if c == '\\' {
            escaped = true;
        } else if c == sep {
            parts.push(&s[start..i]);
            start = i + c.len_utf8();
        }
    }
    parts.push(&s[start..]);
    parts
}

/// Resolves `\n`, `\t`, `\s` (space), and `\<c>` for any other character.
pub fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('s') => out.push(' '),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            ' ' => out.push_str("\\s"),
            '\\' | ',' | '|' | '#' => {
                out.push('\\');
                out.push(c);
            }
            _ => out.push(c),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KvEntry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KvSection {
    /// Empty for the entries before the first header.
    pub name: String,
    pub entries: Vec<KvEntry>,
}

/// A parsed `key = value` file with optional `[section]` headers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KvDocument {
    pub sections: Vec<KvSection>,
}

impl KvDocument {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut sections = vec![KvSection { name: String::new(), entries: Vec::new() }];
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let stripped = strip_comment(raw);
            let trimmed = stripped.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(name) = trimmed.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                sections.push(KvSection { name: name.trim().to_string(), entries: Vec::new() });
                continue;
            }
            let Some((k, v)) = trimmed.split_once('=') else {
                return Err(ConfigError::Syntax { line, text: raw.to_string() });
            };
            let key = k.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax { line, text: raw.to_string() });
            }
            sections.last_mut().expect("at least the global section").entries.push(KvEntry {
                key: key.to_string(),
                value: v.trim().to_string(),
                line,
            });
        }
        Ok(Self { sections })
    }

    pub fn global(&self) -> &[KvEntry] {
        &self.sections[0].entries
    }

    pub fn named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a KvSection> + 'a {
        self.sections.iter().skip(1).filter(move |s| s.name == name)
    }
}

/// Drops everything after an unescaped `#`.
fn strip_comment(line: &str) -> &str {
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        if escaped {
            escaped = false;
        } else if c == '\\' {
            escaped = true;
        } else if c == '#' {
            return &line[..i];
        }
    }
    line
}
