//! Summarization-based data augmentation for document-level event detection.
//!
//! The crate covers the whole experimental pipeline: corpus handling
//! ([`corpus`]), a step-model contract with a toy bigram model ([`lm`]),
//! decoding strategies ([`decode`]), TF-IDF featurization ([`vectorize`]),
//! a dual coordinate descent linear SVM ([`svm`]), macro-F1 cross-validation
//! ([`eval`]) and orchestration including the model-server client
//! ([`pipeline`]).

pub mod corpus;
pub mod decode;
pub mod eval;
pub mod lm;
pub mod pipeline;
pub mod svm;
pub mod vectorize;
