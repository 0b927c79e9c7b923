//! Next-location predictability of WiFi-associated devices.
//!
//! The pipeline runs from raw association logs ([`ingest`]) to uniform
//! location series ([`discretize`]), through practical predictors
//! ([`markov`], [`neural`]) and entropy-based bounds ([`entropy`]), to the
//! experiment matrix and reports ([`harness`]). [`synth`] generates traces
//! with known entropy rates for validation; [`features`] computes per-device
//! mobility and traffic features for correlation with accuracy.

pub mod discretize;
pub mod entropy;
pub mod features;
pub mod harness;
pub mod ingest;
pub mod markov;
pub mod neural;
pub mod synth;
pub mod trace;
