//! Conversational dialogue DAGs and causality-aware response modelling.
//!
//! The crate covers the full pipeline:
//!
//! - [`dag`]: parse, validate and analyse dialogue DAGs, corpus statistics, DOT export
//! - [`extract`]: `(dh, x, y)` triples with fork-sibling counterparts, splits, seed sampler
//! - [`textmodel`]: tokenizer, tabular softmax model and a tiny recurrent LM
//! - [`training`]: MLE and ExMATE objectives, ATE diagnostic, optimization loop
//! - [`evaluation`]: PPL, multi-reference BLEU, Distinct-N, CCE, identity accuracy
//! - [`generation`]: batch decoding over evaluation contexts
//! - [`cli`]: the `cdk` command-line front end
//!
//! Runnable walkthroughs live in the crate's `examples/` directory.

pub mod cli;
pub mod dag;
pub mod evaluation;
pub mod extract;
pub mod generation;
pub mod textmodel;
pub mod training;
