use thiserror::Error;

use crate::codec::CodecError;
use crate::dsp::DspError;
use crate::eval::EvalError;
use crate::manifest::ManifestError;
use crate::params::ParamsError;
use crate::sampling::SamplingError;

/// Crate-wide error, one variant per module.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
