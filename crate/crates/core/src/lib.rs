//! Prediction-explanation consistency for free-text explanations of binary
//! classification decisions.
//!
//! The crate scores how strongly an explanation supports a predicted label,
//! samples and ranks explanations by that score, turns rankings into DPO
//! preference pairs, and evaluates explanations through a simulated student.
//! A small log-linear language model stands in for an LLM so the whole
//! pipeline runs offline and deterministically.

pub mod backend;
pub mod consistency;
pub mod datasets;
pub mod error;
pub mod hashing;
pub mod io;
pub mod optim;
pub mod parallel;
pub mod pipeline;
pub mod prefs;
pub mod prompting;
pub mod sampler;
pub mod simeval;
pub mod stats;
pub mod tokenize;
pub mod toy;

pub use error::{Error, Result};
