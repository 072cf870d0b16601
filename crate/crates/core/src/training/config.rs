use std::fmt;
use std::str::FromStr;

use crate::data::{AbstractView, FieldLengths};
use crate::encoders::ModelDims;
use crate::error::{Error, Result};
use crate::objectives::LossConfig;

/// Model variants compared in the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Three fields with the generated title as the abstract view, history
    /// self-attention, and the contrastive term.
    Full,
    /// History self-attention replaced by the identity.
    NoMfke,
    /// No contrastive term; the abstract field reads the raw abstract.
    NoC2,
    /// Category prompt and title only; no contrastive term.
    NoAbs,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoMfke,
        Variant::NoC2,
        Variant::NoAbs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoMfke => "no_mfke",
            Variant::NoC2 => "no_c2",
            Variant::NoAbs => "no_abs",
        }
    }

    pub fn abstract_view(self) -> AbstractView {
        match self {
            Variant::Full | Variant::NoMfke => AbstractView::GeneratedTitle,
            Variant::NoC2 => AbstractView::RawAbstract,
            Variant::NoAbs => AbstractView::Absent,
        }
    }

    pub fn uses_mfke(self) -> bool {
        self != Variant::NoMfke
    }

    pub fn uses_contrast(self) -> bool {
        matches!(self, Variant::Full | Variant::NoMfke)
    }

    pub fn architecture(self) -> Architecture {
        Architecture {
            view: self.abstract_view(),
            mfke: self.uses_mfke(),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown variant {s:?}; expected full, no_mfke, no_c2 or no_abs"
                ))
            })
    }
}

/// Which news an InfoNCE anchor is contrasted against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClPool {
    /// Every distinct news of the batch.
    Batch,
    /// Only news from the anchor's own impression.
    Impression,
}

impl ClPool {
    pub fn name(self) -> &'static str {
        match self {
            ClPool::Batch => "batch",
            ClPool::Impression => "impression",
        }
    }
}

impl FromStr for ClPool {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(ClPool::Batch),
            "impression" => Ok(ClPool::Impression),
            _ => Err(Error::config(format!(
                "unknown cl-pool {s:?}; expected batch or impression"
            ))),
        }
    }
}

/// How news and users are encoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub view: AbstractView,
    pub mfke: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub d: usize,
    pub heads: usize,
    pub attn_hidden: usize,
    /// Largest vocabulary size excluding reserved tokens; `None` keeps every word.
    pub vocab_cap: Option<usize>,
    pub min_freq: usize,
    pub lengths: FieldLengths,
    pub history_len: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub cl_pool: ClPool,
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d: 64,
            heads: 4,
            attn_hidden: 64,
            vocab_cap: None,
            min_freq: 1,
            lengths: FieldLengths::default(),
            history_len: 25,
            lr: 2e-5,
            batch_size: 32,
            epochs: 3,
            seed: 0,
            loss: LossConfig::default(),
            cl_pool: ClPool::Batch,
            variant: Variant::Full,
        }
    }
}

/// Every key accepted by [`TrainConfig::set`], in the order they are printed.
pub const CONFIG_KEYS: [&str; 21] = [
    "d",
    "heads",
    "attn-hidden",
    "vocab-cap",
    "min-freq",
    "cats-len",
    "title-len",
    "gen-title-len",
    "abstract-len",
    "history-len",
    "negatives",
    "lr",
    "batch-size",
    "epochs",
    "seed",
    "alpha",
    "gamma",
    "tau",
    "lambda",
    "cl-pool",
    "variant",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {value:?}")))
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "d" => self.d = parse(key, v)?,
            "heads" => self.heads = parse(key, v)?,
            "attn-hidden" => self.attn_hidden = parse(key, v)?,
            "vocab-cap" => {
                self.vocab_cap = match v {
                    "none" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            "min-freq" => self.min_freq = parse(key, v)?,
            "cats-len" => self.lengths.cats = parse(key, v)?,
            "title-len" => self.lengths.title = parse(key, v)?,
            "gen-title-len" => self.lengths.gen_title = parse(key, v)?,
            "abstract-len" => self.lengths.abstract_len = parse(key, v)?,
            "history-len" => self.history_len = parse(key, v)?,
            "negatives" => self.loss.negatives = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "batch-size" => self.batch_size = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "alpha" => self.loss.alpha = parse(key, v)?,
            "gamma" => self.loss.gamma = parse(key, v)?,
            "tau" => self.loss.tau = parse(key, v)?,
            "lambda" => self.loss.lambda = parse(key, v)?,
            "cl-pool" => self.cl_pool = v.parse()?,
            "variant" => self.variant = v.parse()?,
            _ => return Err(Error::config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "d" => self.d.to_string(),
            "heads" => self.heads.to_string(),
            "attn-hidden" => self.attn_hidden.to_string(),
            "vocab-cap" => self
                .vocab_cap
                .map_or_else(|| "none".to_string(), |c| c.to_string()),
            "min-freq" => self.min_freq.to_string(),
            "cats-len" => self.lengths.cats.to_string(),
            "title-len" => self.lengths.title.to_string(),
            "gen-title-len" => self.lengths.gen_title.to_string(),
            "abstract-len" => self.lengths.abstract_len.to_string(),
            "history-len" => self.history_len.to_string(),
            "negatives" => self.loss.negatives.to_string(),
            "lr" => self.lr.to_string(),
            "batch-size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "seed" => self.seed.to_string(),
            "alpha" => self.loss.alpha.to_string(),
            "gamma" => self.loss.gamma.to_string(),
            "tau" => self.loss.tau.to_string(),
            "lambda" => self.loss.lambda.to_string(),
            "cl-pool" => self.cl_pool.name().to_string(),
            "variant" => self.variant.name().to_string(),
            _ => return None,
        })
    }

    /// Applies `key=value` lines. Blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                reason: format!("expected key=value, got {line:?}"),
            })?;
            self.set(k.trim(), v).map_err(|e| Error::Parse {
                line: i + 1,
                reason: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    /// One `key=value` line per setting; [`TrainConfig::from_text`] reads it back.
    pub fn to_text(&self) -> String {
        CONFIG_KEYS
            .iter()
            .map(|k| format!("{k}={}\n", self.get(k).expect("listed key")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let l = &self.lengths;
        if [
            l.cats,
            l.title,
            l.gen_title,
            l.abstract_len,
            self.history_len,
        ]
        .contains(&0)
        {
            return Err(Error::config("every length limit must be positive"));
        }
        if self.batch_size == 0 || self.min_freq == 0 {
            return Err(Error::config("batch-size and min-freq must be positive"));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::config(format!(
                "lr must be non-negative, got {}",
                self.lr
            )));
        }
        self.loss.validate()?;
        self.model_dims(2).validate()
    }

    pub fn with_abs(&self) -> bool {
        self.variant != Variant::NoAbs
    }

    pub fn model_dims(&self, vocab_size: usize) -> ModelDims {
        ModelDims {
            vocab_size,
            d: self.d,
            heads: self.heads,
            attn_hidden: self.attn_hidden,
            with_abs: self.with_abs(),
        }
    }

    /// Weight of the contrastive term after applying the variant.
    pub fn effective_lambda(&self) -> f64 {
        if self.variant.uses_contrast() {
            self.loss.lambda
        } else {
            0.0
        }
    }

    pub fn architecture(&self) -> Architecture {
        self.variant.architecture()
    }
}
