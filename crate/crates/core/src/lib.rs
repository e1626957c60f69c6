//! Room impulse response toolkit.
//!
//! The crate is split by pipeline stage:
//!
//! * [`dsp`] reads and analyses time-domain RIRs (energy decay, reverberation
//!   times, clarity, definition, source-receiver distance, mel spectra, SRMR).
//! * [`params`] holds the acoustic parameter schema and its class grids.
//! * [`synth`] produces RIRs that match a set of target parameters.
//! * [`codec`] is a small residual-VQ codec giving a discrete token domain.
//! * [`sampling`] implements guided token and latent samplers on top of
//!   abstract model traits.
//! * [`eval`] scores generated RIRs against references.

pub mod codec;
pub mod dsp;
pub mod eval;
pub mod manifest;
pub mod params;
pub mod sampling;
pub mod synth;

mod error;

pub use error::{Error, Result};

/// Speed of sound used for every distance/delay conversion, in m/s.
pub const SPEED_OF_SOUND: f64 = 343.0;

/// Sample rate used when nothing else is specified.
pub const DEFAULT_SAMPLE_RATE: u32 = 44_100;
