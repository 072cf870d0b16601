use crate::data::{Batch, FieldTokens};
use crate::diffcore::{Graph, Scalar, Tensor, Var};
use crate::encoders::{
    encode_padded, encode_user_fields, merge_fields, project_for_contrast, ModelParams,
};
use crate::error::{Error, Result};
use crate::objectives::{tape, LossConfig};

use super::{ClPool, TrainConfig};

/// Field vectors of a set of news: one `P × d` matrix per model field.
pub fn encode_field_matrices<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    tokens: &FieldTokens,
) -> Result<Vec<Var>> {
    let mut out = vec![
        encode_padded(g, params, &tokens.cats)?,
        encode_padded(g, params, &tokens.title)?,
    ];
    match (&tokens.abs, params.dims.with_abs) {
        (Some(abs), true) => out.push(encode_padded(g, params, abs)?),
        (None, false) => {}
        _ => {
            return Err(Error::config(
                "abstract view does not match the model's field count",
            ))
        }
    }
    Ok(out)
}

/// Candidate vectors of the given rows of the field matrices, `rows × d`.
pub fn encode_candidates<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    fields: &[Var],
    rows: &[usize],
) -> Result<Var> {
    let picked = fields
        .iter()
        .map(|&f| g.gather_rows(f, rows))
        .collect::<Result<Vec<_>>>()?;
    merge_fields(g, params, &params.candidate_merge, &picked)
}

/// User vector from history rows of the field matrices, `1 × d`.
pub fn encode_history<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    fields: &[Var],
    history: &[usize],
    mask: &[bool],
    mfke: bool,
) -> Result<Var> {
    if !mask.iter().any(|&m| m) {
        return Ok(g.constant(Tensor::zeros(&[1, params.dims.d])));
    }
    let seqs = fields
        .iter()
        .map(|&f| g.gather_rows(f, history))
        .collect::<Result<Vec<_>>>()?;
    encode_user_fields(g, params, &seqs, mask, mfke)
}

/// Loss nodes recorded for one batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchLosses {
    pub rec: Var,
    pub cl: Option<Var>,
    pub total: Var,
    /// How many contrastive projection heads were evaluated.
    pub projections: usize,
}

/// Records the full objective of `batch` on `g` under the variant of `config`.
pub fn batch_loss<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    batch: &Batch,
    config: &TrainConfig,
) -> Result<BatchLosses> {
    let arch = config.architecture();
    let lambda = config.effective_lambda();
    let LossConfig {
        alpha, gamma, tau, ..
    } = config.loss;
    let fields = encode_field_matrices(g, params, &batch.fields)?;

    let cand_pool = batch.candidate_positions();
    let mut cand_row = vec![usize::MAX; batch.pool.len()];
    for (i, &p) in cand_pool.iter().enumerate() {
        cand_row[p] = i;
    }
    let candidates = encode_candidates(g, params, &fields, &cand_pool)?;

    let users = batch
        .users
        .iter()
        .map(|u| encode_history(g, params, &fields, &u.history, &u.mask, arch.mfke))
        .collect::<Result<Vec<_>>>()?;
    let users = g.concat_rows(&users)?;

    let user_of: Vec<usize> = batch.samples.iter().map(|s| s.user).collect();
    let cands_of: Vec<Vec<usize>> = batch
        .samples
        .iter()
        .map(|s| s.candidates.iter().map(|&c| cand_row[c]).collect())
        .collect();
    let scores = tape::sample_scores(g, users, &user_of, candidates, &cands_of)?;
    let rec = tape::recommendation_loss(g, scores, alpha, gamma)?;

    let mut projections = 0;
    let cl = match (lambda > 0.0, params.title_projection, params.abs_projection) {
        (true, Some(th), Some(ah)) => {
            let titles = project_for_contrast(g, params, &th, fields[1])?;
            let abstracts = project_for_contrast(g, params, &ah, fields[2])?;
            projections += 2;
            Some(match config.cl_pool {
                ClPool::Batch => tape::contrastive_loss(g, titles, abstracts, tau)?,
                ClPool::Impression => {
                    let groups: Vec<Vec<usize>> =
                        batch.users.iter().map(|u| u.news.clone()).collect();
                    tape::grouped_contrastive_loss(g, titles, abstracts, &groups, tau)?
                }
            })
        }
        _ => None,
    };
    let total = tape::total_loss(g, rec, cl, lambda)?;
    Ok(BatchLosses {
        rec,
        cl,
        total,
        projections,
    })
}
