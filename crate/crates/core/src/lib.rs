//! Fully parked trees and positive catalytic equations: exact coefficients,
//! numeric partition functions, splitting measures, samplers, random-walk
//! identities and Lamperti exponents.

pub mod error;
pub mod model;
pub mod models;
pub mod series;
pub mod solver;
pub mod asymptotics;
pub mod mc;
pub mod measure;
pub mod trees;
pub mod walk;
pub mod lamperti;
pub mod cli;

pub use error::{Error, Result};

/// The guide in `book/`; its snippets run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/coefficients.md")]
    mod coefficients {}
    #[doc = include_str!("../../../book/src/numerics.md")]
    mod numerics {}
    #[doc = include_str!("../../../book/src/measure.md")]
    mod measure {}
    #[doc = include_str!("../../../book/src/trees.md")]
    mod trees {}
    #[doc = include_str!("../../../book/src/walk.md")]
    mod walk {}
    #[doc = include_str!("../../../book/src/lamperti.md")]
    mod lamperti {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/acceptance.md")]
    mod acceptance {}
}
