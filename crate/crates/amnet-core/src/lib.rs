//! Two-stream appearance/motion tracker built on a minimal tensor core.

pub mod anet;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod head;
pub mod mnet;
pub mod model;
pub mod ops;
pub mod oracle;
pub mod params;
pub mod sequence;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod tracker;
pub mod train;

pub use error::{Error, Result};
pub use eval::EvalReport;
pub use model::{AmNet, ModelConfig, MotionInput};
pub use sequence::SequenceRecord;
pub use synth::SynthConfig;
pub use tensor::{Dims, Scalar, Tensor};
pub use tracker::{AmNetModel, BBox};
pub use train::TrainConfig;
