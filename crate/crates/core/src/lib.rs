//! Training and adapting CTC sequence recognizers across languages that share
//! a script, using a character language model to turn unlabeled target-language
//! predictions into pseudo-labels.

pub mod arpa;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod ctc;
pub mod dataset;
pub mod decoder;
pub mod error;
pub mod metrics;
pub mod ngram;
pub mod optim;
pub mod recognizer;
pub mod synth;
pub mod trainer;
pub mod vocab;

pub use error::{Error, Result};
pub use ngram::NgramLm;
pub use vocab::{Vocabulary, BLANK};
