//! Learns bottom-up parsers for structured data formats from example strings.
//!
//! A parse starts from one atom per input byte. An agent repeatedly picks one
//! of six actions on adjacent atoms until a single atom is left; the actions
//! and their order form the parse tree. Rewards come from how often each
//! resulting atom type shows up across the corpus.

pub mod agent;
pub mod atoms;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod frequency;
pub mod nn;
pub mod render;
pub mod reward;
pub mod trainer;

pub use error::{Error, Result};
