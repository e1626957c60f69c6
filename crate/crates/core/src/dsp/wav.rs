use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{DspError, Waveform};

/// Read a WAV file as a mono waveform.
///
/// Integer PCM of any width and 32-bit float are accepted. For multi-channel
/// files only channel 0 is kept.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform, DspError> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    if channels > 1 {
        log::warn!("{}: {channels} channels, using channel 0", path.display());
    }
    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()?,
        SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<Result<_, _>>()?
        }
    };
    let mono = interleaved.into_iter().step_by(channels).collect();
    Waveform::new(mono, spec.sample_rate)
}

/// Write a mono 32-bit float WAV file.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<(), DspError> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &s in w.samples() {
        writer.write_sample(s as f32)?;
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let w = Waveform::from_fn(1000, 44100, |i| ((i % 50) as f64 / 50.0) - 0.5).unwrap();
        write_wav(&p, &w).unwrap();
        let r = read_wav(&p).unwrap();
        assert_eq!(r.sample_rate(), 44100);
        for (a, b) in r.samples().iter().zip(w.samples()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn stereo_pcm16_uses_first_channel() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let spec = WavSpec { channels: 2, sample_rate: 16000, bits_per_sample: 16, sample_format: SampleFormat::Int };
        let mut wr = WavWriter::create(&p, spec).unwrap();
        for i in 0..100i16 {
            wr.write_sample(i * 100).unwrap();
            wr.write_sample(-16384i16).unwrap();
        }
        wr.finalize().unwrap();
        let r = read_wav(&p).unwrap();
        assert_eq!(r.len(), 100);
        assert_eq!(r.samples()[3], 300.0 / 32768.0);
    }

    #[test]
    fn missing_file_is_an_error() {
        assert!(read_wav("/nonexistent/x.wav").is_err());
    }
}
