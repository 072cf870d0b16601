//! Click scoring, the focal recommendation loss, cross-field InfoNCE, and
//! their weighted sum.
//!
//! Every loss comes in two forms: a plain `f64` function on slices, used as
//! the reference, and a taped version in [`tape`] that training differentiates.

mod config;
mod reference;
pub mod tape;

pub use config::LossConfig;
pub use reference::{
    click_score, contrastive_loss, focal_loss, positive_probability, recommendation_loss,
    total_loss, PROBABILITY_FLOOR,
};
