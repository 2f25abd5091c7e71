//! Refinement of frozen paired multimodal node embeddings on attributed
//! graphs: learned modality-aware propagation operators, finite-step coupled
//! smoothing with restart anchoring, and trajectory-attention readout, trained
//! end to end for cross-modal retrieval. Ships the diagnostic and control
//! experiments plus numerical oracles for the smoothing dynamics.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod objective;
pub mod oracles;
pub mod readout;
pub mod smoothing;
pub mod tensor;
pub mod topology;
pub mod training;

pub use error::{Error, Result};
