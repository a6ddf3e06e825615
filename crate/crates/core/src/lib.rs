//! Evaluating attribution methods on extractive question answering data.
//!
//! A QA model is turned into an answerability classifier by fixing the
//! question and asking whether its answer is in the context. The sentence
//! that holds the annotated answer is then a ground-truth rationale, and any
//! attribution method can be scored on how well it points at that sentence.
//!
//! * [`dataset`] loads SQuAD-style JSON, segments contexts into sentences and
//!   labels the ground-truth sentence.
//! * [`model`] defines the classifier interface and the built-in models.
//! * [`whitebox`] and [`blackbox`] hold the attribution methods.
//! * [`metrics`] scores sentence attributions (IoU, HPD, SNR).
//! * [`verify`] checks the ground truth itself by removing or isolating it.
//! * [`fixtures`] generates synthetic data with a planted rationale.
//! * [`harness`] runs whole experiments and writes reports.

pub mod attribution;
pub mod blackbox;
pub mod dataset;
pub mod fixtures;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod text;
pub mod verify;
pub mod whitebox;

pub use attribution::{InterpretError, TokenAttribution};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/dataset.md")]
    mod dataset {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/whitebox.md")]
    mod whitebox {}
    #[doc = include_str!("../../../book/src/blackbox.md")]
    mod blackbox {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/fixtures.md")]
    mod fixtures {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
}
