use crate::data::{AbstractView, NewsArticle, PaddedTokens, PAD_ID};
use crate::diffcore::{Graph, Scalar, Var};
use crate::error::{Error, Result};

use super::{additive_attention, ModelParams};

/// Mean of the embedding rows of the non-padding tokens, as a `1 × d` row.
///
/// An empty or all-padding sequence gives the zero vector.
pub fn encode_field_tokens<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    tokens: &[u32],
) -> Result<Var> {
    let emb = g.param(&params.set, params.embedding);
    if tokens.is_empty() {
        return g.embed_mean(emb, &[PAD_ID], 1);
    }
    g.embed_mean(emb, tokens, tokens.len())
}

/// [`encode_field_tokens`] for every row of a padded array: `rows × d`.
pub fn encode_padded<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    tokens: &PaddedTokens,
) -> Result<Var> {
    let emb = g.param(&params.set, params.embedding);
    g.embed_mean(emb, &tokens.ids, tokens.width)
}

/// Token sequences of the fields the model uses, in field order.
pub fn field_token_lists<'a>(
    article: &'a NewsArticle,
    view: AbstractView,
    with_abs: bool,
) -> Result<Vec<&'a [u32]>> {
    let mut out = vec![
        article.cats_tokens.as_slice(),
        article.title_tokens.as_slice(),
    ];
    if with_abs {
        out.push(view.tokens(article).ok_or_else(|| {
            Error::config("model has an abstract field but the view provides none")
        })?);
    }
    Ok(out)
}

/// Candidate news vector: the field vectors merged by additive attention.
pub fn encode_candidate_news<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    article: &NewsArticle,
    view: AbstractView,
) -> Result<Var> {
    let rows = field_token_lists(article, view, params.dims.with_abs)?
        .into_iter()
        .map(|t| encode_field_tokens(g, params, t))
        .collect::<Result<Vec<_>>>()?;
    merge_stacked(g, params, &rows)
}

/// Merges already-encoded `1 × d` field vectors with the candidate-side attention.
pub fn merge_stacked<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    rows: &[Var],
) -> Result<Var> {
    let stacked = g.concat_rows(rows)?;
    let (_, pooled) = additive_attention(
        g,
        params,
        &params.candidate_merge,
        stacked,
        &vec![true; rows.len()],
    )?;
    Ok(pooled)
}
