//! Time-domain RIR handling and acoustic parameter extraction.

mod edc;
mod fft;
mod filter;
mod measures;
mod mel;
mod resample;
mod srmr;
mod waveform;
mod wav;

use thiserror::Error;

pub use edc::{
    energy_decay_curve, noise_floor_db, reverb_time, DecayKind, EnergyDecayCurve, EDC_FLOOR_DB,
};
pub use fft::{convolve, power_spectrum, Spectrum};
pub(crate) use fft::{analysis_fft_len, forward, inverse_real};
pub use filter::{bandpass_filterbank, filtfilt, Biquad, FilterChain};
pub(crate) use filter::{octave_chain, octave_pad};
pub use measures::{
    analyze, clarity_c80, definition_d50, detect_onset, estimate_srd, AcousticParams, Issue,
    Measures, NUM_BANDS, SRD_MAX_M, SRD_MIN_M,
};
pub use mel::{mel_energy_profile, MelEnergyProfile, MelScale, NUM_MEL_BANDS};
pub use resample::{conform, resample};
pub use srmr::{speech_like, srmr_lite};
pub use waveform::{BandSet, Waveform};
pub use wav::{read_wav, write_wav};

#[derive(Debug, Error)]
pub enum DspError {
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),
    #[error("insufficient decay for {kind:?}: curve does not reach {lower_db} dB inside its usable range")]
    InsufficientDecay { kind: DecayKind, lower_db: f64 },
    #[error("wav i/o: {0}")]
    Wav(#[from] hound::Error),
}
