//! Desk-scale neural machine translation for closely related languages.
//!
//! The crate covers the whole pipeline: tokenization and joint BPE
//! ([`subword`], [`data`]), a Transformer encoder–decoder trained with
//! label-smoothed cross-entropy and Adam ([`model`], [`numerics`],
//! [`training`]), beam-search decoding ([`decoding`]), back-translation
//! ([`augment`]), corpus BLEU ([`evaluation`]), and Jaccard-based similarity
//! analysis ([`analysis`]). Synthetic tasks used by tests and examples live in
//! [`tasks`].
//!
//! All arithmetic is `f64` and every random choice is drawn from an explicit
//! seed, so runs are reproducible bit for bit.

pub mod analysis;
pub mod augment;
pub mod data;
pub mod decoding;
mod error;
pub mod evaluation;
pub mod model;
pub mod numerics;
pub mod subword;
pub mod tasks;
pub mod training;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/numerics.md")]
    mod numerics {}
    #[doc = include_str!("../../../book/src/subword.md")]
    mod subword {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/decoding.md")]
    mod decoding {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/augment.md")]
    mod augment {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
}
