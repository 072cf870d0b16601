use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{
    assemble_batch, build_vocabulary, resolve_all, sample_training_instances, ImpressionLog,
    NewsTable, RawNews, ResolvedImpression, Vocabulary, PAD_ID,
};
use crate::diffcore::{adam_step, AdamConfig, AdamState, Graph};
use crate::encoders::ModelParams;
use crate::error::{Error, Result};

use super::{batch_loss, init_params, TrainConfig};

/// Tokenized news and resolved impressions ready for training or evaluation.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub news: NewsTable,
    pub impressions: Vec<ResolvedImpression>,
}

impl Dataset {
    /// Builds the vocabulary from `raw` and tokenizes everything.
    pub fn build(raw: &[RawNews], logs: &[ImpressionLog], config: &TrainConfig) -> Result<Self> {
        let vocab = build_vocabulary(raw, config.min_freq, config.vocab_cap)?;
        Dataset::with_vocab(vocab, raw, logs, config)
    }

    /// Tokenizes with an existing vocabulary, as when reusing a checkpoint.
    pub fn with_vocab(
        vocab: Vocabulary,
        raw: &[RawNews],
        logs: &[ImpressionLog],
        config: &TrainConfig,
    ) -> Result<Self> {
        let news = NewsTable::build(raw, &vocab, &config.lengths)?;
        let mut impressions = resolve_all(logs, &news)?;
        for imp in &mut impressions {
            let excess = imp.history.len().saturating_sub(config.history_len);
            imp.history.drain(..excess);
        }
        Ok(Dataset {
            vocab,
            news,
            impressions,
        })
    }

    /// Same news and vocabulary with a subset of the impressions.
    pub fn with_impressions(&self, impressions: Vec<ResolvedImpression>) -> Self {
        Dataset {
            vocab: self.vocab.clone(),
            news: self.news.clone(),
            impressions,
        }
    }
}

/// Optimizer and sampling state carried across epochs and checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub epochs_completed: usize,
    pub adam: AdamState<f32>,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(params: &ModelParams, seed: u64) -> Self {
        TrainState {
            epochs_completed: 0,
            adam: AdamState::new(&params.set),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

/// Mean losses of one epoch over its batches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_rec: f64,
    pub l_cl: f64,
    pub l_total: f64,
}

pub fn epoch_log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,l_rec,l_cl,l_total\n");
    for e in log {
        let _ = writeln!(out, "{},{},{},{}", e.epoch, e.l_rec, e.l_cl, e.l_total);
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub state: TrainState,
    pub log: Vec<EpochLog>,
    /// Contrastive projection heads evaluated over the whole run.
    pub projections: usize,
}

/// Trains from fresh parameters for `config.epochs` epochs.
pub fn train(config: &TrainConfig, data: &Dataset) -> Result<TrainOutcome> {
    config.validate()?;
    let params = init_params(config.model_dims(data.vocab.len()), config.seed)?;
    let state = TrainState::new(&params, config.seed);
    resume(config, data, params, state, config.epochs)
}

/// Continues training `params` for `epochs` more epochs.
pub fn resume(
    config: &TrainConfig,
    data: &Dataset,
    mut params: ModelParams,
    mut state: TrainState,
    epochs: usize,
) -> Result<TrainOutcome> {
    config.validate()?;
    if params.dims != config.model_dims(data.vocab.len()) {
        return Err(Error::config(format!(
            "parameters have layout {:?} but the config asks for {:?}",
            params.dims,
            config.model_dims(data.vocab.len())
        )));
    }
    if !data
        .impressions
        .iter()
        .any(|i| i.candidates.iter().any(|c| c.1))
    {
        return Err(Error::contract(
            "training data contains no clicked candidate",
        ));
    }
    let adam = AdamConfig::with_lr(config.lr);
    let view = config.architecture().view;
    let mut log = Vec::with_capacity(epochs);
    let mut projections = 0;
    for _ in 0..epochs {
        let mut order: Vec<usize> = (0..data.impressions.len()).collect();
        order.shuffle(&mut state.rng);
        let mut samples = Vec::new();
        for i in order {
            samples.extend(sample_training_instances(
                &data.impressions[i],
                config.loss.negatives,
                &mut state.rng,
            ));
        }
        if samples.is_empty() {
            return Err(Error::contract(
                "no impression has both clicked and unclicked candidates",
            ));
        }

        let (mut rec, mut cl, mut total) = (0.0, 0.0, 0.0);
        let mut batches = 0usize;
        for chunk in samples.chunks(config.batch_size) {
            let batch = assemble_batch(chunk, &data.news, view, PAD_ID)?;
            let mut g = Graph::new();
            let losses = batch_loss(&mut g, &params, &batch, config)?;
            projections += losses.projections;
            rec += g.value(losses.rec).values()[0] as f64;
            cl += losses.cl.map_or(0.0, |v| g.value(v).values()[0] as f64);
            total += g.value(losses.total).values()[0] as f64;
            batches += 1;

            g.backward_into(losses.total, &mut params.set)?;
            let d = params.dims.d;
            if let Some(grad) = params.set.get_mut(params.embedding).grad_mut() {
                grad[..d].iter_mut().for_each(|v| *v = 0.0);
            }
            adam_step(&mut params.set, &mut state.adam, &adam)?;
            params.set.zero_grads();
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("parameter update".into()));
        }
        state.epochs_completed += 1;
        let n = batches as f64;
        log.push(EpochLog {
            epoch: state.epochs_completed,
            l_rec: rec / n,
            l_cl: cl / n,
            l_total: total / n,
        });
    }
    Ok(TrainOutcome {
        params,
        state,
        log,
        projections,
    })
}
