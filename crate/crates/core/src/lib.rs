//! Orthogonalized-gradient training and calibration analysis.
//!
//! The crate bundles a small dense network core with exact gradients, an
//! optimizer family (heavy-ball SGD and two orthogonalized variants), numeric
//! checks of the orthogonalized method's convergence behaviour, calibration
//! metrics with temperature scaling, and the statistics used to compare
//! optimizers across seeds.

pub mod batch;
pub mod calibration;
pub mod convergence;
pub mod error;
pub mod net;
pub mod optim;
pub mod rng;
pub mod stats;
pub mod tensor;

pub use batch::PredictionBatch;
pub use error::{Error, Result};
pub use net::{LayerSpec, Network, ParamGroup};
pub use tensor::Tensor;
