//! Corpus triage for low-prevalence topical posts.
//!
//! The crate combines four routes to the same question, "is this post about
//! opioids?":
//!
//! * [`lexicon`]: multi-pattern term matching against curated term lists,
//! * [`adjudicator`]: a two-turn LLM prompt scheme run in batches against a
//!   provider-agnostic completion interface,
//! * [`slang_sim`]: fake-term substitution for simulating emergent slang,
//! * [`annotation`]: stratified manual-labeling sessions that produce gold
//!   labels,
//!
//! and scores them with [`evaluator`]. Posts flow through all of them as a
//! [`corpus::Corpus`].
//!
//! Per-post loops run on rayon when the `parallel` feature is enabled (the
//! default) and fall back to plain iterators otherwise.

pub mod adjudicator;
pub mod annotation;
pub mod corpus;
pub mod evaluator;
pub mod label;
pub mod lexicon;
pub mod par;
pub mod slang_sim;
pub mod synth;

pub use corpus::{Corpus, Post};
pub use label::{Label, PredictionSet};
pub use lexicon::{Lexicon, MatchPolicy};
