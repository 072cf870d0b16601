//! MIND-format tables, tokenization, negative sampling, batching, and
//! synthetic corpora.

mod batch;
mod behaviors;
mod news;
mod sampling;
pub mod synth;
mod tokenize;
mod vocab;

pub use batch::{
    assemble_batch, AbstractView, Batch, FieldTokens, PaddedTokens, SampleSlot, UserSlot,
};
pub use behaviors::{
    parse_behaviors, resolve_all, write_behaviors, ImpressionLog, ResolvedImpression,
    DEFAULT_HISTORY_CAP,
};
pub use news::{
    build_prompt, parse_news_table, write_news_table, FieldLengths, NewsArticle, NewsTable,
    RawNews, GENERATED_TITLE_COLUMN,
};
pub use sampling::{sample_training_instances, TrainingSample};
pub use synth::{generate_synthetic_corpus, SynthConfig, SyntheticCorpus, SYNTH_KEYS};
pub use tokenize::{tokenize, words};
pub use vocab::{build_vocabulary, Vocabulary, PAD_ID, UNK_ID};
