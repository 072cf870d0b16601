pub mod cli;
pub mod data;
pub mod diffcore;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod objectives;
pub mod training;

pub use error::{Error, Result};

#[cfg(test)]
mod test_support;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/diffcore.md")]
    mod diffcore {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/encoders.md")]
    mod encoders {}
    #[doc = include_str!("../../../book/src/objectives.md")]
    mod objectives {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/eval.md")]
    mod eval {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
