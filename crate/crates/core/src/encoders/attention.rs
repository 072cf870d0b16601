use crate::diffcore::{Graph, Scalar, Var};
use crate::error::{Error, Result};

use super::{AdditiveAttentionParams, ModelParams};

/// Unnormalized scores `tanh(seq W + b) e` as an `n × 1` column.
fn scores<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    attn: &AdditiveAttentionParams,
    seq: Var,
) -> Result<Var> {
    let w = g.param(&params.set, attn.proj);
    let b = g.param(&params.set, attn.bias);
    let e = g.param(&params.set, attn.context);
    let hidden = g.matmul(seq, w)?;
    let hidden = g.add_row(hidden, b)?;
    let hidden = g.tanh(hidden)?;
    g.matmul(hidden, e)
}

/// Pools the rows of an `n × d` sequence with learned additive attention.
///
/// Returns the `1 × n` weights and the `1 × d` weighted sum. Rows whose mask
/// entry is false get weight exactly zero.
pub fn additive_attention<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    attn: &AdditiveAttentionParams,
    seq: Var,
    mask: &[bool],
) -> Result<(Var, Var)> {
    let n = g.value(seq).matrix_dims().0;
    if mask.len() != n {
        return Err(Error::shape(
            "additive_attention",
            g.shape(seq),
            &[mask.len()],
        ));
    }
    let s = scores(g, params, attn, seq)?;
    let s = g.reshape(s, &[1, n])?;
    let weights = g.softmax_masked(s, mask)?;
    let pooled = g.matmul(weights, seq)?;
    Ok((weights, pooled))
}

/// Additive attention across fields, vectorized over news.
///
/// `fields[f]` is a `P × d` matrix holding field `f` of `P` news; row `i` of
/// the result merges the fields of news `i`, exactly as
/// [`additive_attention`] would on the stacked `F × d` sequence.
pub fn merge_fields<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    attn: &AdditiveAttentionParams,
    fields: &[Var],
) -> Result<Var> {
    let per_field = fields
        .iter()
        .map(|&f| scores(g, params, attn, f))
        .collect::<Result<Vec<_>>>()?;
    let all = g.concat_last(&per_field)?;
    let weights = g.softmax_masked(all, &vec![true; fields.len()])?;
    let mut merged = None;
    for (i, &f) in fields.iter().enumerate() {
        let w = g.slice_cols(weights, i, 1)?;
        let part = g.mul_col(f, w)?;
        merged = Some(match merged {
            None => part,
            Some(acc) => g.add(acc, part)?,
        });
    }
    merged.ok_or_else(|| Error::contract("merge_fields needs at least one field"))
}
