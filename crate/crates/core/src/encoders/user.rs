use crate::data::{AbstractView, NewsArticle, PaddedTokens, PAD_ID};
use crate::diffcore::{Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};

use super::{
    additive_attention, encode_padded, field_token_lists, merge_fields, mfke_field_sequence,
    ModelParams,
};

/// User vector from per-field history sequences.
///
/// `field_seqs[f]` is the `J × d` sequence of field `f` over the history.
/// Each field passes through its own self-attention (skipped when `mfke` is
/// false), the fields of each news are merged with the user-side news
/// attention, and the merged history is pooled by the user attention.
/// Masked positions do not influence the result. With no unmasked position
/// the result is the zero vector.
pub fn encode_user_fields<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    field_seqs: &[Var],
    mask: &[bool],
    mfke: bool,
) -> Result<Var> {
    let fields = params.dims.fields();
    if field_seqs.len() != fields.len() {
        return Err(Error::shape(
            "encode_user",
            &[fields.len()],
            &[field_seqs.len()],
        ));
    }
    if !mask.iter().any(|&m| m) {
        return Ok(g.constant(Tensor::zeros(&[1, params.dims.d])));
    }
    let mut contextual = Vec::with_capacity(fields.len());
    for (&field, &seq) in fields.iter().zip(field_seqs) {
        contextual.push(if mfke {
            let block = params.mhsa_for(field)?.clone();
            mfke_field_sequence(g, params, &block, seq, mask)?
        } else {
            seq
        });
    }
    let per_news = merge_fields(g, params, &params.user_news_merge, &contextual)?;
    let (_, user) = additive_attention(g, params, &params.user_attention, per_news, mask)?;
    Ok(user)
}

/// User vector `1 × d` for a click history. An empty history gives zeros.
pub fn encode_user<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    history: &[&NewsArticle],
    view: AbstractView,
    mfke: bool,
) -> Result<Var> {
    encode_user_masked(g, params, history, &vec![true; history.len()], view, mfke)
}

/// [`encode_user`] with an explicit history mask.
pub fn encode_user_masked<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    history: &[&NewsArticle],
    mask: &[bool],
    view: AbstractView,
    mfke: bool,
) -> Result<Var> {
    if history.is_empty() {
        return Ok(g.constant(Tensor::zeros(&[1, params.dims.d])));
    }
    let lists = history
        .iter()
        .map(|a| field_token_lists(a, view, params.dims.with_abs))
        .collect::<Result<Vec<_>>>()?;
    let mut seqs = Vec::new();
    for f in 0..params.dims.fields().len() {
        let padded = PaddedTokens::from_rows(lists.iter().map(|l| l[f]), PAD_ID);
        seqs.push(encode_padded(g, params, &padded)?);
    }
    encode_user_fields(g, params, &seqs, mask, mfke)
}
