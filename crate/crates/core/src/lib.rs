//! Class-level unlearning for linear-softmax document classifiers.
//!
//! A trained multinomial logistic regression forgets one class through a
//! single Newton-type "Hessian downweight" step solved by conjugate gradients
//! over Hessian-vector products, followed by zeroing the class's output row.
//! The crate also carries the evaluation harness: TF-IDF featurization,
//! retraining and random-relabeling baselines, utility and agreement metrics,
//! margin KS tests, and a shadow-model membership-inference attack.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod corpus;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod metrics;
pub mod model_io;
pub mod optim;
pub mod par;
pub mod pipeline;
pub mod privacy;
pub mod softmax;
pub mod synth;
pub mod tfidf;
pub mod unlearn;

pub use error::{Error, Result};
