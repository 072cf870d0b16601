#![allow(dead_code)]

pub mod props;

use tdnr::data::{assemble_batch, generate_synthetic_corpus, SynthConfig, TrainingSample, PAD_ID};
use tdnr::diffcore::{Graph, Scalar};
use tdnr::encoders::ModelParams;
use tdnr::objectives::LossConfig;
use tdnr::training::{batch_loss, init_params, ClPool, Dataset, TrainConfig, Variant};

/// Forty synthetic news and ten impressions.
pub fn small_dataset(config: &TrainConfig) -> Dataset {
    let corpus = generate_synthetic_corpus(&SynthConfig {
        n_users: 5,
        n_news: 40,
        ..SynthConfig::default()
    })
    .unwrap();
    Dataset::build(&corpus.news, &corpus.behaviors, config).unwrap()
}

/// d = 4, two heads, histories of two news, two negatives, two samples.
pub fn tiny_instance(
    variant: Variant,
    cl_pool: ClPool,
) -> (TrainConfig, Dataset, Vec<TrainingSample>) {
    let config = TrainConfig {
        d: 4,
        heads: 2,
        attn_hidden: 4,
        variant,
        cl_pool,
        loss: LossConfig {
            negatives: 2,
            ..Default::default()
        },
        ..TrainConfig::default()
    };
    let data = small_dataset(&config);
    let samples = vec![
        TrainingSample {
            impression: 0,
            history: vec![0, 1],
            positive: 2,
            negatives: vec![3, 4],
        },
        TrainingSample {
            impression: 1,
            history: vec![5, 6],
            positive: 7,
            negatives: vec![8, 2],
        },
    ];
    (config, data, samples)
}

/// Compares backprop gradients computed in `T` against `f64` central
/// differences over every coordinate of every parameter.
///
/// Returns the largest `|a - n| / max(|a|, |n|, floor)`.
pub fn full_model_gradient_error<T: Scalar>(variant: Variant, cl_pool: ClPool, floor: f64) -> f64 {
    let (config, data, samples) = tiny_instance(variant, cl_pool);
    let mut params: ModelParams<T> = init_params(config.model_dims(data.vocab.len()), 3).unwrap();
    let batch = assemble_batch(&samples, &data.news, config.architecture().view, PAD_ID).unwrap();

    let mut g = Graph::new();
    let l = batch_loss(&mut g, &params, &batch, &config).unwrap();
    g.backward_into(l.total, &mut params.set).unwrap();

    let mut reference: ModelParams<f64> = params.cast();
    reference.set.zero_grads();
    let loss = |p: &ModelParams<f64>| -> f64 {
        let mut g = Graph::new();
        let l = batch_loss(&mut g, p, &batch, &config).unwrap();
        g.value(l.total).values()[0]
    };

    let eps = 1e-6;
    let mut worst = 0.0f64;
    let ids: Vec<_> = params.set.ids().collect();
    for id in ids {
        let t = params.set.get(id);
        let analytic: Vec<f64> = match t.grad() {
            Some(g) => g.iter().map(|v| v.as_f64()).collect(),
            None => vec![0.0; t.numel()],
        };
        for (i, &a) in analytic.iter().enumerate() {
            let orig = reference.set.get(id).values()[i];
            reference.set.get_mut(id).values_mut()[i] = orig + eps;
            let up = loss(&reference);
            reference.set.get_mut(id).values_mut()[i] = orig - eps;
            let down = loss(&reference);
            reference.set.get_mut(id).values_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let scale = a.abs().max(numeric.abs()).max(floor);
            if scale > 0.0 {
                worst = worst.max((a - numeric).abs() / scale);
            }
        }
    }
    worst
}
