/// Candidate indices sorted by descending score, ties by ascending index.
pub fn ranking_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

fn counts(labels: &[bool]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l).count();
    (pos, labels.len() - pos)
}

/// Area under the ROC curve, or `None` for a single-class impression.
///
/// Computed from midranks, so tied scores count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let (pos, neg) = counts(labels);
    if pos == 0 || neg == 0 || scores.len() != labels.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Mean reciprocal rank over every positive, or `None` without positives.
pub fn mrr(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let (pos, _) = counts(labels);
    if pos == 0 || scores.len() != labels.len() {
        return None;
    }
    let total: f64 = ranking_order(scores)
        .iter()
        .enumerate()
        .filter(|(_, &c)| labels[c])
        .map(|(r, _)| 1.0 / (r + 1) as f64)
        .sum();
    Some(total / pos as f64)
}

/// Normalized discounted cumulative gain of the top `k`, or `None` without positives.
pub fn ndcg_at_k(scores: &[f64], labels: &[bool], k: usize) -> Option<f64> {
    let (pos, _) = counts(labels);
    if pos == 0 || scores.len() != labels.len() {
        return None;
    }
    let gain = |rank: usize| 1.0 / ((rank + 2) as f64).log2();
    let dcg: f64 = ranking_order(scores)
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, &c)| labels[c])
        .map(|(r, _)| gain(r))
        .sum();
    let ideal: f64 = (0..pos.min(k)).map(gain).sum();
    Some(dcg / ideal)
}

/// All four metrics of one impression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpressionMetrics {
    pub auc: f64,
    pub mrr: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
}

/// Metrics of an impression with both clicked and unclicked candidates.
pub fn score_impression(scores: &[f64], labels: &[bool]) -> Option<ImpressionMetrics> {
    Some(ImpressionMetrics {
        auc: auc(scores, labels)?,
        mrr: mrr(scores, labels)?,
        ndcg5: ndcg_at_k(scores, labels, 5)?,
        ndcg10: ndcg_at_k(scores, labels, 10)?,
    })
}
