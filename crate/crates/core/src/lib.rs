//! Link-level simulator for pilot-guided multimodal semantic communication.
//!
//! Two single-modality transmitters (audio and video) send learned semantic
//! features over SISO/MIMO fading channels. The receiver estimates the channel
//! from pilots, zero-forces the payload, decodes both streams and fuses them
//! with positive sample propagation to classify every segment of a clip.

pub mod channel;
pub mod cli;
pub mod codec;
pub mod dataset;
pub mod equalizer;
pub mod error;
pub mod euler;
pub mod harness;
pub mod layers;
pub mod link;
pub mod model;
pub mod numeric;
pub mod psp;
pub mod tensor_io;
pub mod trainer;

pub use error::{Error, Result};
