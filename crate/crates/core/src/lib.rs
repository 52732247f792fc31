//! Multi-interest sequential recommendation with HSIC-driven sample
//! reweighting.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: dense matrices and a reverse-mode tape.
//! * [`data`]: interaction logs, splits, training examples and batches.
//! * [`model`]: the self-attentive multi-interest network and its loss.
//! * [`decorrelate`]: RBF kernels, empirical HSIC and the sample-weight step.
//! * [`train`]: the alternating training loop with Adam and early stopping.
//! * [`evaluate`]: exact top-N retrieval and Recall/NDCG/HR.
//! * [`synth`]: synthetic data with controllable interest co-occurrence.

pub mod error;
pub mod model;
pub mod data;
pub mod decorrelate;
pub mod evaluate;
pub mod synth;
pub mod train;
pub mod numerics;

pub use error::{Error, Result};
pub use numerics::{Matrix, Tape, Var};
