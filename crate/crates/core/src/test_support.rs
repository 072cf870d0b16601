use crate::data::{generate_synthetic_corpus, SynthConfig};
use crate::training::{Dataset, TrainConfig};

/// Ten impressions over forty news with a d = 8 model.
pub fn tiny_corpus(seed: u64) -> (TrainConfig, Dataset) {
    let synth = SynthConfig {
        n_users: 5,
        n_news: 40,
        seed,
        ..SynthConfig::default()
    };
    let corpus = generate_synthetic_corpus(&synth).unwrap();
    let config = TrainConfig {
        d: 8,
        heads: 2,
        attn_hidden: 8,
        batch_size: 8,
        lr: 1e-2,
        seed,
        ..TrainConfig::default()
    };
    let data = Dataset::build(&corpus.news, &corpus.behaviors, &config).unwrap();
    (config, data)
}
