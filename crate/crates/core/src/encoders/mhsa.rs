use crate::diffcore::{Graph, Scalar, Var};
use crate::error::{Error, Result};

use super::{MhsaParams, ModelParams};

/// Multi-head self-attention over one field's history sequence.
///
/// `seq` is `J × d`. Each head attends with `softmax(QKᵀ / √d_k)` over the
/// unmasked key positions; heads are concatenated and mapped by the output
/// matrix. Rows of masked positions are zero in the result. There is no
/// positional encoding, so the map is permutation-equivariant.
pub fn mfke_field_sequence<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    mhsa: &MhsaParams,
    seq: Var,
    mask: &[bool],
) -> Result<Var> {
    let dims = params.dims;
    dims.validate()?;
    let (j, d) = g.value(seq).matrix_dims();
    if d != dims.d || mask.len() != j {
        return Err(Error::shape(
            "mfke_field_sequence",
            g.shape(seq),
            &[mask.len(), dims.d],
        ));
    }
    let scale = 1.0 / (dims.head_dim() as f64).sqrt();
    let mut heads = Vec::with_capacity(dims.heads);
    for h in 0..dims.heads {
        let wq = g.param(&params.set, mhsa.query[h]);
        let wk = g.param(&params.set, mhsa.key[h]);
        let wv = g.param(&params.set, mhsa.value[h]);
        let q = g.matmul(seq, wq)?;
        let k = g.matmul(seq, wk)?;
        let v = g.matmul(seq, wv)?;
        let logits = g.matmul_nt(q, k)?;
        let logits = g.scale(logits, scale)?;
        let attn = g.softmax_masked(logits, mask)?;
        heads.push(g.matmul(attn, v)?);
    }
    let joined = g.concat_last(&heads)?;
    let wo = g.param(&params.set, mhsa.output);
    let out = g.matmul(joined, wo)?;
    if mask.iter().all(|&m| m) {
        Ok(out)
    } else {
        g.mask_rows(out, mask)
    }
}
