use crate::error::{Error, Result};

/// Smallest probability passed to the logarithm in [`focal_loss`].
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Inner product of a user vector and a news vector.
pub fn click_score(user: &[f64], news: &[f64]) -> Result<f64> {
    if user.len() != news.len() {
        return Err(Error::shape("click_score", &[user.len()], &[news.len()]));
    }
    Ok(user.iter().zip(news).map(|(a, b)| a * b).sum())
}

/// Softmax probability of the positive among one positive and `K` negatives.
pub fn positive_probability(pos: f64, negs: &[f64]) -> Result<f64> {
    if negs.is_empty() {
        return Err(Error::contract(
            "positive_probability needs at least one negative",
        ));
    }
    let max = negs.iter().copied().fold(pos, f64::max);
    let num = (pos - max).exp();
    let den = num + negs.iter().map(|n| (n - max).exp()).sum::<f64>();
    Ok(num / den)
}

/// `-α (1 - p)^γ ln p`, with `p` clamped below at [`PROBABILITY_FLOOR`].
pub fn focal_loss(p: f64, alpha: f64, gamma: f64) -> Result<f64> {
    if p.is_nan() || p > 1.0 {
        return Err(Error::contract(format!(
            "probability {p} is outside (0, 1]"
        )));
    }
    let p = p.max(PROBABILITY_FLOOR);
    Ok(-alpha * (1.0 - p).powf(gamma) * p.ln())
}

/// Mean focal loss over samples, each given as `[positive, negatives...]` scores.
pub fn recommendation_loss(samples: &[Vec<f64>], alpha: f64, gamma: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::contract("recommendation_loss on an empty batch"));
    }
    let mut total = 0.0;
    for s in samples {
        let (pos, negs) = s
            .split_first()
            .ok_or_else(|| Error::contract("sample without a positive score"))?;
        total += focal_loss(positive_probability(*pos, negs)?, alpha, gamma)?;
    }
    Ok(total / samples.len() as f64)
}

/// InfoNCE between paired title and abstract projections.
///
/// Row `i` of `titles` is pulled towards row `i` of `abstracts` and pushed
/// away from every other abstract row. Inputs must be unit vectors.
pub fn contrastive_loss(titles: &[Vec<f64>], abstracts: &[Vec<f64>], tau: f64) -> Result<f64> {
    if titles.len() != abstracts.len() || titles.is_empty() {
        return Err(Error::shape(
            "contrastive_loss",
            &[titles.len()],
            &[abstracts.len()],
        ));
    }
    for v in titles.iter().chain(abstracts) {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-4 {
            return Err(Error::contract(format!(
                "contrastive input has norm {norm}, expected 1"
            )));
        }
    }
    let mut total = 0.0;
    for (i, t) in titles.iter().enumerate() {
        let logits = abstracts
            .iter()
            .map(|a| click_score(t, a).map(|s| s / tau))
            .collect::<Result<Vec<_>>>()?;
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        total += lse - logits[i];
    }
    Ok(total / titles.len() as f64)
}

pub fn total_loss(rec: f64, cl: f64, lambda: f64) -> f64 {
    rec + lambda * cl
}
