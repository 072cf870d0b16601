use crate::diffcore::{Graph, Scalar, Var};
use crate::error::Result;

use super::{ModelParams, ProjectionParams};

/// `l2_normalize(tanh(x W + b))` applied to every row of `x`.
pub fn project_for_contrast<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    head: &ProjectionParams,
    x: Var,
) -> Result<Var> {
    let w = g.param(&params.set, head.weight);
    let b = g.param(&params.set, head.bias);
    let h = g.matmul(x, w)?;
    let h = g.add_row(h, b)?;
    let h = g.tanh(h)?;
    g.l2_normalize_rows(h)
}
