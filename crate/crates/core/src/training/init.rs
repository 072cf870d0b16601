use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{Scalar, Tensor};
use crate::encoders::{ModelDims, ModelParams, ParamKind};
use crate::error::Result;

/// Half-width of the uniform range used for embedding rows.
pub const EMBEDDING_RANGE: f64 = 0.1;

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Fresh parameters: Glorot-uniform weights, zero biases, embeddings uniform
/// in ±0.1 with the padding row zeroed. The same seed gives identical values.
pub fn init_params<T: Scalar>(dims: ModelDims, seed: u64) -> Result<ModelParams<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ModelParams::build(dims, |_, shape, kind| {
        let n: usize = shape.iter().product();
        let values: Vec<T> = match kind {
            ParamKind::Bias => vec![T::zero(); n],
            ParamKind::Weight { fan_in, fan_out } => {
                let b = glorot_bound(fan_in, fan_out);
                (0..n).map(|_| T::from_f64(rng.gen_range(-b..b))).collect()
            }
            ParamKind::Embedding => {
                let d = shape[1];
                (0..n)
                    .map(|i| {
                        if i < d {
                            T::zero()
                        } else {
                            T::from_f64(rng.gen_range(-EMBEDDING_RANGE..EMBEDDING_RANGE))
                        }
                    })
                    .collect()
            }
        };
        Tensor::new(shape.to_vec(), values)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn dims() -> ModelDims {
        ModelDims {
            vocab_size: 30,
            d: 64,
            heads: 4,
            attn_hidden: 64,
            with_abs: true,
        }
    }

    #[test]
    fn bound_for_square_attention() {
        assert!((glorot_bound(64, 64) - 0.2165064).abs() < 1e-7);
    }

    #[test]
    fn deterministic_and_bounded() {
        let a = init_params::<f32>(dims(), 9).unwrap();
        let b = init_params::<f32>(dims(), 9).unwrap();
        assert_eq!(a, b);
        let c = init_params::<f32>(dims(), 10).unwrap();
        assert_ne!(a.set.get(a.embedding), c.set.get(c.embedding));

        let emb = a.set.get(a.embedding);
        assert!(emb.row(0).iter().all(|&v| v == 0.0));
        assert!(emb.values().iter().all(|v| v.abs() < 0.1));
        let proj = a.set.get(a.user_attention.proj);
        assert!(proj
            .values()
            .iter()
            .all(|v| (v.abs() as f64) < glorot_bound(64, 64)));
        assert!(proj.values().iter().any(|v| (v.abs() as f64) > 0.2));
        assert!(a
            .set
            .get(a.user_attention.bias)
            .values()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_dims_are_rejected() {
        let bad = ModelDims { heads: 5, ..dims() };
        assert!(matches!(init_params::<f32>(bad, 0), Err(Error::Config(_))));
    }
}
