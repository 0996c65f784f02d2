//! Bidirectional temporal alignment for stereo video: raster fields and
//! warping, triple-frame correlation, the iterative stereo network, the
//! temporal stabilizer, training losses, temporal-consistency metrics,
//! synthetic scenes and file formats.

pub mod correlation;
pub mod error;
pub mod field;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod sequence;
pub mod stabilizer;
pub mod stereo;
pub mod synth;
pub mod train;
pub mod weights;

pub use error::{Error, Result};
pub use field::{Calibration, ChannelField, Real, ScalarField, VectorField};
pub use sequence::SequenceBundle;
pub use weights::{Tensor, WeightBank};
