use rand::seq::index;
use rand::Rng;

use super::ResolvedImpression;

/// One clicked candidate paired with `K` unclicked candidates of the same
/// impression. All news are positions in the news table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingSample {
    /// [`ResolvedImpression::index`] of the source impression.
    pub impression: usize,
    pub history: Vec<usize>,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

/// Draws `k` negatives for every clicked candidate of `imp`.
///
/// Negatives come without replacement from the impression's unclicked
/// candidates, or with replacement when fewer than `k` exist. An impression
/// without unclicked candidates yields nothing.
pub fn sample_training_instances<R: Rng + ?Sized>(
    imp: &ResolvedImpression,
    k: usize,
    rng: &mut R,
) -> Vec<TrainingSample> {
    assert!(k >= 1, "negative ratio must be positive");
    let unclicked: Vec<usize> = imp
        .candidates
        .iter()
        .filter(|c| !c.1)
        .map(|c| c.0)
        .collect();
    if unclicked.is_empty() {
        return Vec::new();
    }
    imp.candidates
        .iter()
        .filter(|c| c.1)
        .map(|&(positive, _)| {
            let negatives = if unclicked.len() >= k {
                index::sample(rng, unclicked.len(), k)
                    .into_iter()
                    .map(|i| unclicked[i])
                    .collect()
            } else {
                (0..k)
                    .map(|_| unclicked[rng.gen_range(0..unclicked.len())])
                    .collect()
            };
            TrainingSample {
                impression: imp.index,
                history: imp.history.clone(),
                positive,
                negatives,
            }
        })
        .collect()
}
