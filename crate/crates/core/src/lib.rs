//! Green-red watermarking toolkit for sequential recommenders.
//!
//! A secret key partitions the item catalog into step-dependent green and
//! red subsets; a logit-space injector biases a recommender toward green
//! items under an entropy-aware strength controller; a verifier detects the
//! resulting over-representation in black-box recommendation logs with a
//! one-sided binomial test. A self-contained simulation sandbox (synthetic
//! catalog, teacher recommender, distilled student) exercises the full
//! pipeline, including watermark transfer through model extraction.
//!
//! All randomized derivations route through one fixed pseudo-random chain
//! and software floating-point transcendentals, so partitions and scores
//! reproduce bit for bit across platforms.

pub mod config;
pub mod error;
pub mod injector;
pub mod io;
pub mod metrics;
pub mod partition;
pub mod rng;
pub mod sandbox;
pub mod verifier;

pub use error::{Error, Result};
