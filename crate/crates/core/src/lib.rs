//! Multi-label recognition prompts learned from LLM-generated text alone.
//!
//! Category knowledge is gathered from a language model ([`knowledge`]),
//! encoded by a frozen text encoder ([`encoder`]) and used to tune
//! hierarchical prompts ([`promptgraph`]) with ranking and order losses
//! ([`learning`]). [`inference`] scores items and computes mAP and F1@top-3.
//! The guide in `book/` walks through each part.

pub mod cli;
pub mod config;
pub mod encoder;
pub mod error;
pub mod inference;
pub mod knowledge;
pub mod learning;
pub mod promptgraph;
pub mod synthetic;

pub use error::{Error, Result};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod book_introduction {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/knowledge.md")]
mod book_knowledge {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/encoder.md")]
mod book_encoder {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/prompts.md")]
mod book_prompts {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/training.md")]
mod book_training {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/inference.md")]
mod book_inference {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
