use crate::diffcore::{ParamId, ParamSet, Scalar, Tensor};
use crate::error::{Error, Result};

/// A typed component of a news article.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Field {
    Cats,
    Title,
    Abs,
}

impl Field {
    pub fn name(self) -> &'static str {
        match self {
            Field::Cats => "cats",
            Field::Title => "title",
            Field::Abs => "abs",
        }
    }
}

/// Sizes that fix every parameter shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub d: usize,
    pub heads: usize,
    pub attn_hidden: usize,
    /// Whether the abstract field (and its contrastive head) exists.
    pub with_abs: bool,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.d == 0 || self.attn_hidden == 0 {
            return Err(Error::config(format!("degenerate model sizes {self:?}")));
        }
        if self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "head count {} must be positive and divide d = {}",
                self.heads, self.d
            )));
        }
        Ok(())
    }

    pub fn fields(&self) -> &'static [Field] {
        if self.with_abs {
            &[Field::Cats, Field::Title, Field::Abs]
        } else {
            &[Field::Cats, Field::Title]
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }
}

/// How a parameter should be initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Embedding,
    Weight { fan_in: usize, fan_out: usize },
    Bias,
}

/// `e · tanh(x W + b)` scoring followed by a softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdditiveAttentionParams {
    /// `d × h_a`
    pub proj: ParamId,
    /// `h_a`
    pub bias: ParamId,
    /// `h_a × 1`
    pub context: ParamId,
}

/// Per-head projections plus the output map of one multi-head self-attention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MhsaParams {
    /// One `d × d/h` matrix per head.
    pub query: Vec<ParamId>,
    pub key: Vec<ParamId>,
    pub value: Vec<ParamId>,
    /// `d × d`
    pub output: ParamId,
}

/// `tanh(x W + b)` head used before normalization in contrastive learning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProjectionParams {
    /// `d × d`
    pub weight: ParamId,
    /// `d`
    pub bias: ParamId,
}

/// Every trainable tensor of the recommender.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Scalar = f32> {
    pub set: ParamSet<T>,
    pub dims: ModelDims,
    /// `vocab_size × d`; row 0 is padding and stays zero.
    pub embedding: ParamId,
    /// One block per field in [`ModelDims::fields`] order.
    pub mhsa: Vec<MhsaParams>,
    pub candidate_merge: AdditiveAttentionParams,
    pub user_news_merge: AdditiveAttentionParams,
    pub user_attention: AdditiveAttentionParams,
    pub title_projection: Option<ProjectionParams>,
    pub abs_projection: Option<ProjectionParams>,
}

impl<T: Scalar> ModelParams<T> {
    /// Registers every tensor in a fixed order, asking `make` for its value.
    pub fn build(
        dims: ModelDims,
        mut make: impl FnMut(&str, &[usize], ParamKind) -> Result<Tensor<T>>,
    ) -> Result<Self> {
        dims.validate()?;
        let mut set = ParamSet::new();
        let mut reg = |set: &mut ParamSet<T>, name: String, shape: &[usize], kind: ParamKind| {
            let t = make(&name, shape, kind)?;
            if t.shape() != shape {
                return Err(Error::shape("param", shape, t.shape()));
            }
            set.register(name, t)
        };
        let d = dims.d;
        let ha = dims.attn_hidden;
        let dk = dims.head_dim();
        let weight = |fan_in, fan_out| ParamKind::Weight { fan_in, fan_out };

        let embedding = reg(
            &mut set,
            "embedding".into(),
            &[dims.vocab_size, d],
            ParamKind::Embedding,
        )?;

        let mut mhsa = Vec::new();
        for field in dims.fields() {
            let f = field.name();
            let mut heads = |set: &mut ParamSet<T>, role: &str| -> Result<Vec<ParamId>> {
                (0..dims.heads)
                    .map(|h| reg(set, format!("mhsa.{f}.{role}.{h}"), &[d, dk], weight(d, dk)))
                    .collect()
            };
            let query = heads(&mut set, "query")?;
            let key = heads(&mut set, "key")?;
            let value = heads(&mut set, "value")?;
            let output = reg(&mut set, format!("mhsa.{f}.output"), &[d, d], weight(d, d))?;
            mhsa.push(MhsaParams {
                query,
                key,
                value,
                output,
            });
        }

        let mut attention =
            |set: &mut ParamSet<T>, name: &str| -> Result<AdditiveAttentionParams> {
                Ok(AdditiveAttentionParams {
                    proj: reg(set, format!("{name}.proj"), &[d, ha], weight(d, ha))?,
                    bias: reg(set, format!("{name}.bias"), &[ha], ParamKind::Bias)?,
                    context: reg(set, format!("{name}.context"), &[ha, 1], weight(ha, 1))?,
                })
            };
        let candidate_merge = attention(&mut set, "merge.candidate")?;
        let user_news_merge = attention(&mut set, "merge.user_news")?;
        let user_attention = attention(&mut set, "attention.user")?;

        let (title_projection, abs_projection) = if dims.with_abs {
            let mut head = |set: &mut ParamSet<T>, name: &str| -> Result<ProjectionParams> {
                Ok(ProjectionParams {
                    weight: reg(
                        set,
                        format!("contrast.{name}.weight"),
                        &[d, d],
                        weight(d, d),
                    )?,
                    bias: reg(set, format!("contrast.{name}.bias"), &[d], ParamKind::Bias)?,
                })
            };
            (Some(head(&mut set, "title")?), Some(head(&mut set, "abs")?))
        } else {
            (None, None)
        };

        Ok(ModelParams {
            set,
            dims,
            embedding,
            mhsa,
            candidate_merge,
            user_news_merge,
            user_attention,
            title_projection,
            abs_projection,
        })
    }

    pub fn mhsa_for(&self, field: Field) -> Result<&MhsaParams> {
        self.dims
            .fields()
            .iter()
            .position(|&f| f == field)
            .map(|i| &self.mhsa[i])
            .ok_or_else(|| Error::config(format!("model has no {} field", field.name())))
    }

    /// Same layout in another precision.
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            set: self.set.cast(),
            dims: self.dims,
            embedding: self.embedding,
            mhsa: self.mhsa.clone(),
            candidate_merge: self.candidate_merge,
            user_news_merge: self.user_news_merge,
            user_attention: self.user_attention,
            title_projection: self.title_projection,
            abs_projection: self.abs_projection,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.set.is_finite()
    }
}
