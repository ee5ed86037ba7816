use std::fs::File;
use std::io::{self, BufReader, BufWriter};
use std::path::Path;

use super::{AudioClip, AudioError};

const FULL_SCALE: f64 = 32768.0;

fn open_reader(path: &Path) -> Result<hound::WavReader<BufReader<File>>, AudioError> {
    let file = File::open(path)?;
    let reader = hound::WavReader::new(BufReader::new(file)).map_err(|e| map_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(AudioError::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: format!("{} channels, only mono is supported", spec.channels),
        });
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(AudioError::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: format!(
                "{}-bit {:?} samples, only 16-bit PCM is supported",
                spec.bits_per_sample, spec.sample_format
            ),
        });
    }
    Ok(reader)
}

fn map_err(path: &Path, e: hound::Error) -> AudioError {
    match e {
        hound::Error::IoError(io) if io.kind() == io::ErrorKind::UnexpectedEof => {
            AudioError::MalformedWav {
                path: path.to_path_buf(),
                reason: "unexpected end of file".into(),
            }
        }
        hound::Error::IoError(io) => AudioError::Io(io),
        hound::Error::FormatError(reason) => AudioError::MalformedWav {
            path: path.to_path_buf(),
            reason: reason.into(),
        },
        hound::Error::Unsupported => AudioError::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: "unsupported encoding".into(),
        },
        other => AudioError::MalformedWav {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

/// Reads a 16-bit PCM mono WAV file, scaling samples by 1/32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip, AudioError> {
    let path = path.as_ref();
    let mut reader = open_reader(path)?;
    let rate = reader.spec().sample_rate;
    if rate == 0 {
        return Err(AudioError::MalformedWav {
            path: path.to_path_buf(),
            reason: "zero sample rate".into(),
        });
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / FULL_SCALE))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| match e {
            // Header promised more sample bytes than the file holds.
            hound::Error::IoError(io) => AudioError::MalformedWav {
                path: path.to_path_buf(),
                reason: format!("truncated data chunk: {io}"),
            },
            other => map_err(path, other),
        })?;
    Ok(AudioClip::new(samples, rate))
}

/// Duration in seconds from the WAV header alone.
pub fn wav_duration_s(path: impl AsRef<Path>) -> Result<f64, AudioError> {
    let reader = open_reader(path.as_ref())?;
    Ok(reader.duration() as f64 / reader.spec().sample_rate as f64)
}

fn quantize(x: f64) -> i16 {
    // Clamp, never wrap.
    (x.clamp(-1.0, 1.0) * FULL_SCALE)
        .round()
        .clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Writes a clip as 16-bit PCM mono. Out-of-range samples are clamped.
pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<(), AudioError> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let file = BufWriter::new(File::create(path)?);
    let mut writer = hound::WavWriter::new(file, spec).map_err(|e| map_err(path, e))?;
    for &x in &clip.samples {
        writer.write_sample(quantize(x)).map_err(|e| map_err(path, e))?;
    }
    writer.finalize().map_err(|e| map_err(path, e))?;
    Ok(())
}
