use rayon::prelude::*;

use crate::data::{FieldTokens, NewsTable, ResolvedImpression, PAD_ID};
use crate::diffcore::{Graph, Tensor};
use crate::encoders::ModelParams;
use crate::error::Result;
use crate::training::{encode_candidates, encode_field_matrices, encode_history, Architecture};

const CHUNK: usize = 512;

/// Field vectors and candidate vectors of every news in a table.
#[derive(Debug, Clone)]
pub struct NewsEncodings {
    /// One `N × d` matrix per model field.
    pub fields: Vec<Tensor>,
    /// Merged candidate vectors, `N × d`.
    pub candidates: Tensor,
}

fn stack(parts: Vec<Tensor>, d: usize) -> Result<Tensor> {
    let rows: usize = parts.iter().map(|t| t.matrix_dims().0).sum();
    let values: Vec<f32> = parts.into_iter().flat_map(Tensor::into_values).collect();
    Tensor::new(vec![rows, d], values)
}

/// Encodes every news of `news` once, in parallel chunks.
pub fn encode_news_table(
    params: &ModelParams,
    news: &NewsTable,
    arch: Architecture,
) -> Result<NewsEncodings> {
    let positions: Vec<usize> = (0..news.len()).collect();
    let chunks = positions
        .par_chunks(CHUNK)
        .map(|rows| {
            let tokens = FieldTokens::gather(news, rows, arch.view, PAD_ID);
            let mut g = Graph::new();
            let fields = encode_field_matrices(&mut g, params, &tokens)?;
            let all: Vec<usize> = (0..rows.len()).collect();
            let cands = encode_candidates(&mut g, params, &fields, &all)?;
            let field_values: Vec<Tensor> = fields.iter().map(|&f| g.value(f).clone()).collect();
            Ok((field_values, g.value(cands).clone()))
        })
        .collect::<Result<Vec<_>>>()?;

    let d = params.dims.d;
    let n_fields = params.dims.fields().len();
    let mut per_field: Vec<Vec<Tensor>> = vec![Vec::new(); n_fields];
    let mut cands = Vec::new();
    for (fields, c) in chunks {
        for (slot, f) in per_field.iter_mut().zip(fields) {
            slot.push(f);
        }
        cands.push(c);
    }
    Ok(NewsEncodings {
        fields: per_field
            .into_iter()
            .map(|parts| stack(parts, d))
            .collect::<Result<_>>()?,
        candidates: stack(cands, d)?,
    })
}

/// User vector of one click history from precomputed field vectors.
pub fn user_vector(
    params: &ModelParams,
    encodings: &NewsEncodings,
    history: &[usize],
    arch: Architecture,
) -> Result<Vec<f32>> {
    let d = params.dims.d;
    if history.is_empty() {
        return Ok(vec![0.0; d]);
    }
    let mut g = Graph::new();
    let fields: Vec<_> = encodings
        .fields
        .iter()
        .map(|f| {
            let rows: Vec<f32> = history
                .iter()
                .flat_map(|&h| f.row(h).iter().copied())
                .collect();
            Tensor::new(vec![history.len(), d], rows).map(|t| g.constant(t))
        })
        .collect::<Result<_>>()?;
    let idx: Vec<usize> = (0..history.len()).collect();
    let u = encode_history(
        &mut g,
        params,
        &fields,
        &idx,
        &vec![true; history.len()],
        arch.mfke,
    )?;
    Ok(g.value(u).values().to_vec())
}

/// Click scores of every candidate of `imp`, in candidate order.
pub fn score_impression_candidates(
    params: &ModelParams,
    encodings: &NewsEncodings,
    imp: &ResolvedImpression,
    arch: Architecture,
) -> Result<Vec<f64>> {
    let u = user_vector(params, encodings, &imp.history, arch)?;
    Ok(imp
        .candidates
        .iter()
        .map(|&(c, _)| {
            encodings
                .candidates
                .row(c)
                .iter()
                .zip(&u)
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum()
        })
        .collect())
}
