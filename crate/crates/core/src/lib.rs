//! Rule-modulated part-attention scoring for human-object interaction
//! classes.
//!
//! Human-annotated per-part relevance rules are multiplied into predicted
//! body-part attentions before a per-class read-out; training uses
//! cross-entropy with ratio-controlled minibatches, and evaluation follows
//! the HICO-DET protocol (Default / Known-Object, Full / Rare / Non-rare).

#![allow(clippy::needless_range_loop)]

pub mod attention;
pub mod classes;
pub mod cli;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod parts;
pub mod pipeline;
pub mod rng;
pub mod rules;
pub mod service;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
