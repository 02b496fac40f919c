//! Core algorithms for building and auditing a speaker-labelled audio corpus
//! from audio-visual media features.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, configuration
//! and the command line live in the `voxcurate` companion crate.
//!
//! Stages, in pipeline order:
//!
//! ```text
//! face photos ─► clustering::build_template ─┐
//! frame stream ─► shots::detect_shots ───────┼─► tracking::run_tracker ─► speaking::extract_segments
//!                                            │
//! x-vectors ─► backend (LDA + PLDA) ─► cleaning::clean_speaker ─► eval::evaluate_corpus
//! ```
#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

pub mod backend;
pub mod cleaning;
pub mod clustering;
mod error;
pub mod eval;
pub mod linalg;
pub mod model;
pub mod shots;
pub mod speaking;
pub mod synth;
pub mod tracking;

pub use error::{Error, Result};
