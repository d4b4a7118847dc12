//! Learning-to-hash pipeline with exact Hamming-ball retrieval.
//!
//! The crate has two halves. The numeric half (`loss`, `net`, `trainer`,
//! `data`) learns b-bit codes from pairwise-labeled source features and
//! unlabeled target features, optionally aligning the two domains with
//! an adversarial discriminator. It is generic over the scalar type via
//! [`Real`]; `f32` and `f64` are the supported instantiations and the
//! aliases below pin the common double-precision stack. The bit half
//! (`codes`, `index`, `eval`) stores packed codes, answers
//! radius-bounded queries by exhaustive bucket probing, and scores
//! retrieval quality.

pub mod codes;
pub mod data;
pub mod error;
pub mod eval;
pub mod index;
pub mod loss;
pub mod net;
pub mod scalar;
pub mod trainer;

pub use codes::{BinaryCode, RelaxedCode};
pub use error::{Error, ErrorClass, Result};
pub use index::CodeIndex;
pub use scalar::Real;

pub type RelaxedCode64 = codes::RelaxedCode<f64>;
pub type FeatureDataset64 = data::FeatureDataset<f64>;
pub type HashModel64 = net::HashModel<f64>;
pub type Discriminator64 = net::Discriminator<f64>;
pub type TrainOutcome64 = trainer::TrainOutcome<f64>;
