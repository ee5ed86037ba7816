//! Toolkit for training text-to-speech models on small corpora.
//!
//! The crate covers the data side of low-resource TTS training end to end:
//!
//! * [`audio`]: WAV I/O, ITU-T P.56 active speech level, log-mel features.
//! * [`noisegen`]: seeded stationary noises (white, USASI, tabulated PSD) and
//!   mixing at an exact active-speech SNR.
//! * [`curation`]: LJSpeech ingest, duration-informed and random subset
//!   selection, bucketed batch planning and padding statistics.
//! * [`augment`]: building the noise-augmented corpus with augmentation IDs.
//! * [`evalkit`]: attention sharpness scores and word error rate reporting.
//! * [`toytrain`]: a miniature attention sequence-to-sequence trainer with an
//!   augmentation embedding concatenated to the encoder output.
//! * [`cli`]: the `augtts` command line front end.

pub mod audio;
pub mod augment;
pub mod cli;
pub mod curation;
pub mod evalkit;
pub mod noisegen;
pub mod rng;
pub mod testsignals;
pub mod toytrain;

pub use audio::{AudioClip, AudioError};

/// Runs `f` inside a dedicated pool of `jobs` worker threads (at least one),
/// so rayon iterators inside `f` use exactly that many threads.
pub(crate) fn with_jobs<T: Send>(
    jobs: usize,
    f: impl FnOnce() -> T + Send,
) -> Result<T, rayon::ThreadPoolBuildError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    Ok(pool.install(f))
}
