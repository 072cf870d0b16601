//! Differentiable versions of the objectives, recorded on a [`Graph`].

use crate::diffcore::{Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};

/// Click scores of every sample as an `S × (K+1)` matrix.
///
/// Sample `s` pairs user row `user_of[s]` with the candidate rows
/// `candidates_of[s]`, positive first.
pub fn sample_scores<T: Scalar>(
    g: &mut Graph<T>,
    users: Var,
    user_of: &[usize],
    candidates: Var,
    candidates_of: &[Vec<usize>],
) -> Result<Var> {
    let width = candidates_of.first().map_or(0, Vec::len);
    if width == 0 || user_of.len() != candidates_of.len() {
        return Err(Error::contract(
            "every sample needs a user and at least one candidate",
        ));
    }
    if candidates_of.iter().any(|c| c.len() != width) {
        return Err(Error::contract(
            "samples disagree on the number of candidates",
        ));
    }
    let d = g.value(users).matrix_dims().1;
    let ones = g.constant(Tensor::new(vec![d, 1], vec![T::one(); d])?);
    let u = g.gather_rows(users, user_of)?;
    let mut cols = Vec::with_capacity(width);
    for j in 0..width {
        let idx: Vec<usize> = candidates_of.iter().map(|c| c[j]).collect();
        let c = g.gather_rows(candidates, &idx)?;
        let prod = g.mul(u, c)?;
        cols.push(g.matmul(prod, ones)?);
    }
    g.concat_last(&cols)
}

/// Mean focal loss of column 0 of an `S × (K+1)` score matrix.
pub fn recommendation_loss<T: Scalar>(
    g: &mut Graph<T>,
    scores: Var,
    alpha: f64,
    gamma: f64,
) -> Result<Var> {
    let rows = g.value(scores).matrix_dims().0;
    let logp = g.log_softmax_rows(scores)?;
    let logp = g.pick_cols(logp, &vec![0; rows])?;
    let p = g.exp(logp)?;
    let miss = g.scale(p, -1.0)?;
    let miss = g.add_scalar(miss, 1.0)?;
    let weight = g.powf(miss, gamma)?;
    let per_sample = g.mul(weight, logp)?;
    let mean = g.mean(per_sample)?;
    g.scale(mean, -alpha)
}

/// InfoNCE over the rows of two `n × d` unit-row matrices.
pub fn contrastive_loss<T: Scalar>(
    g: &mut Graph<T>,
    titles: Var,
    abstracts: Var,
    tau: f64,
) -> Result<Var> {
    let sum = contrastive_sum(g, titles, abstracts, tau)?;
    let n = g.value(titles).matrix_dims().0;
    g.scale(sum, 1.0 / n as f64)
}

fn contrastive_sum<T: Scalar>(
    g: &mut Graph<T>,
    titles: Var,
    abstracts: Var,
    tau: f64,
) -> Result<Var> {
    if g.shape(titles) != g.shape(abstracts) {
        return Err(Error::shape(
            "contrastive_loss",
            g.shape(titles),
            g.shape(abstracts),
        ));
    }
    let n = g.value(titles).matrix_dims().0;
    let sims = g.matmul_nt(titles, abstracts)?;
    let logits = g.scale(sims, 1.0 / tau)?;
    let logp = g.log_softmax_rows(logits)?;
    let diag: Vec<usize> = (0..n).collect();
    let diag = g.pick_cols(logp, &diag)?;
    let sum = g.sum(diag)?;
    g.scale(sum, -1.0)
}

/// InfoNCE where each anchor only contrasts against rows of its own group.
///
/// The result is the mean over every anchor of every group.
pub fn grouped_contrastive_loss<T: Scalar>(
    g: &mut Graph<T>,
    titles: Var,
    abstracts: Var,
    groups: &[Vec<usize>],
    tau: f64,
) -> Result<Var> {
    let anchors: usize = groups.iter().map(Vec::len).sum();
    if anchors == 0 {
        return Err(Error::contract("grouped contrastive loss without anchors"));
    }
    let mut total = None;
    for group in groups.iter().filter(|grp| !grp.is_empty()) {
        let t = g.gather_rows(titles, group)?;
        let a = g.gather_rows(abstracts, group)?;
        let s = contrastive_sum(g, t, a, tau)?;
        total = Some(match total {
            None => s,
            Some(acc) => g.add(acc, s)?,
        });
    }
    let total = total.expect("non-empty group exists");
    g.scale(total, 1.0 / anchors as f64)
}

/// `rec + λ cl`, or just `rec` when no contrastive term was recorded.
pub fn total_loss<T: Scalar>(
    g: &mut Graph<T>,
    rec: Var,
    cl: Option<Var>,
    lambda: f64,
) -> Result<Var> {
    match cl {
        Some(cl) if lambda != 0.0 => {
            let weighted = g.scale(cl, lambda)?;
            g.add(rec, weighted)
        }
        _ => Ok(rec),
    }
}
