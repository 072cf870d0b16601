use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::ResolvedImpression;
use crate::error::{Error, Result};
use crate::training::{train, Dataset, TrainConfig, TrainOutcome, Variant};

use super::{evaluate, MetricsReport};

/// Splits impressions into training and held-out parts.
///
/// A seeded shuffle picks `round(fraction · n)` held-out impressions; both
/// parts keep their original order.
pub fn holdout_split(
    impressions: &[ResolvedImpression],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<ResolvedImpression>, Vec<ResolvedImpression>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(format!(
            "holdout fraction {fraction} outside (0, 1)"
        )));
    }
    let mut idx: Vec<usize> = (0..impressions.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((impressions.len() as f64) * fraction).round() as usize;
    let mut held = vec![false; impressions.len()];
    for &i in &idx[..n_test] {
        held[i] = true;
    }
    let (test, train): (Vec<_>, Vec<_>) =
        impressions.iter().cloned().zip(held).partition(|(_, h)| *h);
    Ok((
        train.into_iter().map(|(i, _)| i).collect(),
        test.into_iter().map(|(i, _)| i).collect(),
    ))
}

/// Outcome of training and evaluating one variant.
#[derive(Debug, Clone)]
pub struct AblationRun {
    /// Configuration the variant actually trained with.
    pub config: TrainConfig,
    pub outcome: TrainOutcome,
    pub report: MetricsReport,
}

/// Trains `variant` on `train_data` and evaluates it on `test` impressions.
pub fn run_ablation(
    variant: Variant,
    config: &TrainConfig,
    train_data: &Dataset,
    test: &[ResolvedImpression],
) -> Result<AblationRun> {
    let config = TrainConfig {
        variant,
        ..config.clone()
    };
    let outcome = train(&config, train_data)?;
    let report = evaluate(&outcome.params, &train_data.news, test, variant)?;
    Ok(AblationRun {
        config,
        outcome,
        report,
    })
}
