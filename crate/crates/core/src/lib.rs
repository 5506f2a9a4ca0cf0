//! Self-supervised audio representations learned from temporal proximity.
//!
//! The pipeline runs from WAV ingestion ([`corpus`]) through log-mel context
//! windows ([`frontend`]), a small residual CNN ([`encoder`]) trained with a
//! semi-hard triplet objective ([`triplet`]) on a from-scratch autodiff engine
//! ([`autodiff`]), to shallow-probe evaluation ([`probes`]), distillation and
//! fine-tuning ([`adapt`]), and cross-task analysis ([`report`]).

pub mod adapt;
pub mod autodiff;
pub mod corpus;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod frontend;
pub mod optim;
pub mod probes;
pub mod report;
pub mod triplet;

pub use error::{Error, Result};
