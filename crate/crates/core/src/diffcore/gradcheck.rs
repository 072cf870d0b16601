use crate::error::Result;

use super::{Graph, Scalar, Tensor, Var};

/// Compares reverse-mode gradients of `f` at `x` against central differences.
///
/// Returns the largest per-coordinate relative error
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_difference_check<T, F>(f: F, x: &Tensor<T>, eps: f64) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let input = g.input(x.clone());
    let out = f(&mut g, input)?;
    let grads = g.backward(out)?;
    let analytic = grads.get_or_zeros(input, x.numel());

    let eval = |perturbed: Tensor<T>| -> Result<f64> {
        let mut g = Graph::new();
        let input = g.input(perturbed);
        let out = f(&mut g, input)?;
        Ok(g.value(out).values()[0].as_f64())
    };

    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.values_mut()[i] = T::from_f64(x.values()[i].as_f64() + eps);
        let mut minus = x.clone();
        minus.values_mut()[i] = T::from_f64(x.values()[i].as_f64() - eps);
        let step = plus.values()[i].as_f64() - minus.values()[i].as_f64();
        let numeric = (eval(plus)? - eval(minus)?) / step;
        let a = analytic[i].as_f64();
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}
