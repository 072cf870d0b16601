//! Field encoding, multi-field merging, history self-attention, user
//! encoding, and contrastive projection heads.

mod attention;
mod contrast;
mod mhsa;
mod news;
mod params;
mod user;

pub use attention::{additive_attention, merge_fields};
pub use contrast::project_for_contrast;
pub use mhsa::mfke_field_sequence;
pub use news::{
    encode_candidate_news, encode_field_tokens, encode_padded, field_token_lists, merge_stacked,
};
pub use params::{
    AdditiveAttentionParams, Field, MhsaParams, ModelDims, ModelParams, ParamKind, ProjectionParams,
};
pub use user::{encode_user, encode_user_fields, encode_user_masked};
