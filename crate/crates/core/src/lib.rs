pub mod error;
pub mod tensor;

pub use error::{Error, Result};
pub mod dsp;
pub mod patch;
pub mod patchout;
pub mod encoder;
pub mod bench;
pub mod embed;
pub mod probe;
pub mod synth;
