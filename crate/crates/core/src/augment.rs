//! Noise-augmented training set construction.
//!
//! Every clean utterance yields one copy per noise spec plus the clean
//! original, each tagged with its augmentation ID (0 = clean). The noise seed
//! of each copy is derived from the master seed, the source id and the
//! augmentation ID, so builds are byte-identical whatever the processing
//! order or thread count.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{read_wav, write_wav, AudioError};
use crate::curation::{resolve_audio, CorpusEntry};
use crate::noisegen::{measure_snr_db, mix_at_snr, NoiseError, NoiseSpec};
use crate::rng::derive_seed;

pub const CLEAN_NAME: &str = "clean";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
/// Deviation above which a remeasured SNR is flagged.
pub const FLAG_THRESHOLD_DB: f64 = 0.5;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid noise configuration: {0}")]
    Config(String),
    #[error("{} utterance(s) failed: {}", .0.len(), .0.iter().take(5).map(|(id, e)| format!("{id}: {e}")).collect::<Vec<_>>().join("; "))]
    Files(Vec<(String, String)>),
    #[error("missing files: {}", .0.join(", "))]
    MissingFile(Vec<String>),
    #[error("bad manifest {path}: {reason}")]
    BadManifest { path: PathBuf, reason: String },
    #[error("thread pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugManifestEntry {
    /// `<source_id>__aug<k>`
    pub id: String,
    pub source_id: String,
    /// Relative to the dataset directory.
    pub audio_path: PathBuf,
    pub text: String,
    pub duration_s: f64,
    pub aug_id: u32,
    pub noise_name: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub snr_db: Option<f64>,
    pub mixture_gain: f64,
    pub seed: u64,
}

pub fn aug_entry_id(source_id: &str, aug_id: u32) -> String {
    format!("{source_id}__aug{aug_id}")
}

/// Seed of the noise added to `source_id` for `aug_id`.
pub fn utterance_seed(master_seed: u64, source_id: &str, aug_id: u32) -> u64 {
    derive_seed(master_seed, &[source_id.as_bytes(), &aug_id.to_le_bytes()])
}

pub fn validate_specs(specs: &[NoiseSpec]) -> Result<(), AugmentError> {
    let mut seen = BTreeSet::new();
    for s in specs {
        if s.aug_id == 0 {
            return Err(AugmentError::Config(format!(
                "spec '{}' uses aug_id 0, which is reserved for clean",
                s.name
            )));
        }
        if !seen.insert(s.aug_id) {
            return Err(AugmentError::Config(format!("duplicate aug_id {}", s.aug_id)));
        }
        if !s.snr_db.is_finite() {
            return Err(AugmentError::Config(format!("spec '{}' has non-finite SNR", s.name)));
        }
        if s.name == CLEAN_NAME {
            return Err(AugmentError::Config("noise spec may not be named 'clean'".into()));
        }
    }
    Ok(())
}

fn run_with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, AugmentError> {
    crate::with_jobs(jobs, f).map_err(|e| AugmentError::Pool(e.to_string()))
}

fn augment_one(
    entry: &CorpusEntry,
    audio_root: &Path,
    specs: &[NoiseSpec],
    out_dir: &Path,
    master_seed: u64,
) -> Result<Vec<AugManifestEntry>, String> {
    let clip = read_wav(resolve_audio(audio_root, entry)).map_err(|e| e.to_string())?;
    let duration_s = if entry.duration_s > 0.0 {
        entry.duration_s
    } else {
        clip.duration_s()
    };
    let write = |aug_id: u32, clip: &crate::audio::AudioClip| -> Result<PathBuf, String> {
        let rel = PathBuf::from("wavs").join(format!("{}.wav", aug_entry_id(&entry.id, aug_id)));
        write_wav(clip, out_dir.join(&rel)).map_err(|e| e.to_string())?;
        Ok(rel)
    };
    let mut out = Vec::with_capacity(specs.len() + 1);
    out.push(AugManifestEntry {
        id: aug_entry_id(&entry.id, 0),
        source_id: entry.id.clone(),
        audio_path: write(0, &clip)?,
        text: entry.text.clone(),
        duration_s,
        aug_id: 0,
        noise_name: CLEAN_NAME.into(),
        snr_db: None,
        mixture_gain: 1.0,
        seed: 0,
    });
    for spec in specs {
        let seed = utterance_seed(master_seed, &entry.id, spec.aug_id);
        let mixed = mix_at_snr(&clip, &spec.spectrum, spec.snr_db, seed)
            .map_err(|e: NoiseError| format!("{} ({}): {e}", spec.name, spec.aug_id))?;
        out.push(AugManifestEntry {
            id: aug_entry_id(&entry.id, spec.aug_id),
            source_id: entry.id.clone(),
            audio_path: write(spec.aug_id, &mixed.mixture)?,
            text: entry.text.clone(),
            duration_s,
            aug_id: spec.aug_id,
            noise_name: spec.name.clone(),
            snr_db: Some(spec.snr_db),
            mixture_gain: mixed.mixture_gain,
            seed,
        });
    }
    Ok(out)
}

/// Writes `|subset| · (|specs| + 1)` WAVs under `out_dir/wavs/` and returns
/// the manifest, ordered by source then augmentation ID.
pub fn build_augmented_dataset(
    subset: &[CorpusEntry],
    audio_root: &Path,
    specs: &[NoiseSpec],
    out_dir: &Path,
    master_seed: u64,
    jobs: usize,
) -> Result<Vec<AugManifestEntry>, AugmentError> {
    validate_specs(specs)?;
    let mut specs = specs.to_vec();
    specs.sort_by_key(|s| s.aug_id);
    fs::create_dir_all(out_dir.join("wavs"))?;
    let results: Vec<_> = run_with_jobs(jobs, || {
        subset
            .par_iter()
            .map(|e| augment_one(e, audio_root, &specs, out_dir, master_seed).map_err(|msg| (e.id.clone(), msg)))
            .collect()
    })?;
    let mut manifest = Vec::with_capacity(subset.len() * (specs.len() + 1));
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(entries) => manifest.extend(entries),
            Err(f) => failures.push(f),
        }
    }
    if !failures.is_empty() {
        return Err(AugmentError::Files(failures));
    }
    Ok(manifest)
}

pub fn write_aug_manifest(manifest: &[AugManifestEntry], path: &Path) -> Result<(), AugmentError> {
    let mut w = BufWriter::new(File::create(path)?);
    for e in manifest {
        serde_json::to_writer(&mut w, e).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_aug_manifest(path: &Path) -> Result<Vec<AugManifestEntry>, AugmentError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| AugmentError::BadManifest {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checked: usize,
    pub clean_skipped: usize,
    pub max_abs_deviation_db: f64,
    pub threshold_db: f64,
    /// Entries whose achieved SNR misses the target by more than the threshold.
    pub flagged: Vec<String>,
    pub per_entry: Vec<(String, f64, f64)>,
}

impl VerifyReport {
    pub fn n_flagged(&self) -> usize {
        self.flagged.len()
    }
}

/// Remeasures the achieved active-speech SNR of every noisy entry against
/// its clean sibling (`aug_id` 0, same source).
pub fn verify_augmented_dataset(
    manifest: &[AugManifestEntry],
    dataset_dir: &Path,
    jobs: usize,
) -> Result<VerifyReport, AugmentError> {
    let missing: Vec<String> = manifest
        .iter()
        .filter(|e| !dataset_dir.join(&e.audio_path).is_file())
        .map(|e| e.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(AugmentError::MissingFile(missing));
    }
    let clean: HashMap<&str, &AugManifestEntry> = manifest
        .iter()
        .filter(|e| e.aug_id == 0)
        .map(|e| (e.source_id.as_str(), e))
        .collect();
    let noisy: Vec<&AugManifestEntry> = manifest.iter().filter(|e| e.aug_id != 0).collect();
    let measured: Vec<Result<(String, f64, f64), (String, String)>> = run_with_jobs(jobs, || {
        noisy
            .par_iter()
            .map(|e| {
                let fail = |m: String| (e.id.clone(), m);
                let src = clean
                    .get(e.source_id.as_str())
                    .ok_or_else(|| fail("no clean entry for source".into()))?;
                let target = e.snr_db.ok_or_else(|| fail("noisy entry without snr_db".into()))?;
                let clean_clip = read_wav(dataset_dir.join(&src.audio_path)).map_err(|x| fail(x.to_string()))?;
                let mix = read_wav(dataset_dir.join(&e.audio_path)).map_err(|x| fail(x.to_string()))?;
                let got = measure_snr_db(&clean_clip, &mix, e.mixture_gain).map_err(|x| fail(x.to_string()))?;
                Ok((e.id.clone(), target, got))
            })
            .collect()
    })?;
    let mut per_entry = Vec::with_capacity(measured.len());
    let mut failures = Vec::new();
    for m in measured {
        match m {
            Ok(v) => per_entry.push(v),
            Err(f) => failures.push(f),
        }
    }
    if !failures.is_empty() {
        return Err(AugmentError::Files(failures));
    }
    let max_abs_deviation_db = per_entry.iter().map(|(_, t, g)| (g - t).abs()).fold(0.0, f64::max);
    let flagged = per_entry
        .iter()
        .filter(|(_, t, g)| (g - t).abs() > FLAG_THRESHOLD_DB)
        .map(|(id, _, _)| id.clone())
        .collect();
    Ok(VerifyReport {
        checked: per_entry.len(),
        clean_skipped: manifest.len() - noisy.len(),
        max_abs_deviation_db,
        threshold_db: FLAG_THRESHOLD_DB,
        flagged,
        per_entry,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildSummary {
    pub specs: Vec<NoiseSpec>,
    pub master_seed: u64,
    pub n_sources: usize,
    pub n_entries: usize,
    pub counts_by_aug_id: BTreeMap<u32, usize>,
    pub n_rescued: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerifySummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifySummary {
    pub checked: usize,
    pub max_abs_deviation_db: f64,
    pub n_flagged: usize,
}

pub fn build_summary(
    manifest: &[AugManifestEntry],
    specs: &[NoiseSpec],
    master_seed: u64,
    verify: Option<&VerifyReport>,
) -> BuildSummary {
    let mut counts_by_aug_id = BTreeMap::new();
    for e in manifest {
        *counts_by_aug_id.entry(e.aug_id).or_insert(0) += 1;
    }
    BuildSummary {
        specs: specs.to_vec(),
        master_seed,
        n_sources: manifest.iter().map(|e| &e.source_id).collect::<BTreeSet<_>>().len(),
        n_entries: manifest.len(),
        counts_by_aug_id,
        n_rescued: manifest.iter().filter(|e| e.mixture_gain != 1.0).count(),
        verification: verify.map(|v| VerifySummary {
            checked: v.checked,
            max_abs_deviation_db: v.max_abs_deviation_db,
            n_flagged: v.n_flagged(),
        }),
    }
}

pub fn write_summary(summary: &BuildSummary, path: &Path) -> Result<(), AugmentError> {
    let json = serde_json::to_string_pretty(summary).map_err(std::io::Error::other)?;
    fs::write(path, json + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::AudioClip;
    use crate::noisegen::SpectrumSpec;
    use crate::testsignals::speech_like;

    fn fixture(n: usize) -> (tempfile::TempDir, Vec<CorpusEntry>) {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("wavs")).unwrap();
        let entries = (0..n)
            .map(|i| {
                let id = format!("S{i:03}");
                let clip = speech_like(i as u64, 0.8 + 0.1 * (i % 4) as f64, 16000);
                let rel = PathBuf::from(format!("wavs/{id}.wav"));
                write_wav(&clip, dir.path().join(&rel)).unwrap();
                CorpusEntry {
                    id,
                    audio_path: rel,
                    text: format!("text {i}"),
                    raw_text: String::new(),
                    duration_s: clip.duration_s(),
                }
            })
            .collect();
        (dir, entries)
    }

    #[test]
    fn default_specs_give_four_labelled_copies() {
        let (src, entries) = fixture(6);
        let out = tempfile::tempdir().unwrap();
        let specs = NoiseSpec::defaults();
        let m = build_augmented_dataset(&entries, src.path(), &specs, out.path(), 5, 1).unwrap();
        assert_eq!(m.len(), 6 * 4);
        let mut by_id: BTreeMap<u32, Vec<&str>> = BTreeMap::new();
        for e in &m {
            by_id.entry(e.aug_id).or_default().push(&e.source_id);
            assert_eq!(e.aug_id == 0, e.noise_name == CLEAN_NAME);
            assert_eq!(e.aug_id == 0, e.snr_db.is_none());
            assert_eq!(e.text, entries.iter().find(|s| s.id == e.source_id).unwrap().text);
        }
        assert_eq!(by_id.keys().copied().collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert!(by_id.values().all(|ids| ids == &by_id[&0]));
        let report = verify_augmented_dataset(&m, out.path(), 1).unwrap();
        assert_eq!(report.checked, 18);
        assert_eq!(report.clean_skipped, 6);
        assert!(report.max_abs_deviation_db <= FLAG_THRESHOLD_DB, "{report:?}");
        assert_eq!(report.n_flagged(), 0);
    }

    #[test]
    fn clean_copies_are_bit_identical() {
        let (src, entries) = fixture(2);
        let out = tempfile::tempdir().unwrap();
        let m = build_augmented_dataset(&entries, src.path(), &[], out.path(), 0, 1).unwrap();
        assert_eq!(m.len(), 2);
        assert!(m.iter().all(|e| e.aug_id == 0));
        for (e, s) in m.iter().zip(&entries) {
            let a = read_wav(out.path().join(&e.audio_path)).unwrap();
            let b = read_wav(src.path().join(&s.audio_path)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn duplicate_or_zero_ids_fail_before_writing() {
        let (src, entries) = fixture(1);
        let out = tempfile::tempdir().unwrap();
        let mut specs = NoiseSpec::defaults();
        specs[1].aug_id = 1;
        let target = out.path().join("ds");
        assert!(matches!(
            build_augmented_dataset(&entries, src.path(), &specs, &target, 0, 1),
            Err(AugmentError::Config(_))
        ));
        assert!(!target.exists());
        specs[1].aug_id = 0;
        assert!(validate_specs(&specs).is_err());
    }

    #[test]
    fn rebuild_and_parallel_build_are_byte_identical() {
        let (src, entries) = fixture(5);
        let specs = NoiseSpec::defaults();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = build_augmented_dataset(&entries, src.path(), &specs, a.path(), 9, 1).unwrap();
        let mb = build_augmented_dataset(&entries, src.path(), &specs, b.path(), 9, 4).unwrap();
        assert_eq!(ma, mb);
        for e in &ma {
            assert_eq!(
                fs::read(a.path().join(&e.audio_path)).unwrap(),
                fs::read(b.path().join(&e.audio_path)).unwrap()
            );
        }
    }

    #[test]
    fn edited_target_is_flagged_and_missing_files_reported() {
        let (src, entries) = fixture(2);
        let out = tempfile::tempdir().unwrap();
        let specs = vec![NoiseSpec {
            name: "white".into(),
            spectrum: SpectrumSpec::White,
            snr_db: 20.0,
            aug_id: 1,
        }];
        let mut m = build_augmented_dataset(&entries, src.path(), &specs, out.path(), 1, 1).unwrap();
        let noisy = m.iter().position(|e| e.aug_id == 1).unwrap();
        m[noisy].snr_db = Some(23.0);
        let report = verify_augmented_dataset(&m, out.path(), 1).unwrap();
        assert_eq!(report.flagged, vec![m[noisy].id.clone()]);

        fs::remove_file(out.path().join(&m[noisy].audio_path)).unwrap();
        assert!(matches!(
            verify_augmented_dataset(&m, out.path(), 1),
            Err(AugmentError::MissingFile(ids)) if ids == vec![m[noisy].id.clone()]
        ));
    }

    #[test]
    fn silent_source_is_reported_by_id() {
        let (src, mut entries) = fixture(1);
        write_wav(&AudioClip::new(vec![0.0; 16000], 16000), src.path().join("wavs/quiet.wav")).unwrap();
        entries.push(CorpusEntry {
            id: "quiet".into(),
            audio_path: "wavs/quiet.wav".into(),
            text: "x".into(),
            raw_text: String::new(),
            duration_s: 1.0,
        });
        let out = tempfile::tempdir().unwrap();
        match build_augmented_dataset(&entries, src.path(), &NoiseSpec::defaults(), out.path(), 0, 1) {
            Err(AugmentError::Files(f)) => assert!(f.len() == 1 && f[0].0 == "quiet", "{f:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn manifest_round_trip() {
        let (src, entries) = fixture(2);
        let out = tempfile::tempdir().unwrap();
        let m = build_augmented_dataset(&entries, src.path(), &NoiseSpec::defaults(), out.path(), 3, 1).unwrap();
        let path = out.path().join(MANIFEST_FILE);
        write_aug_manifest(&m, &path).unwrap();
        assert_eq!(read_aug_manifest(&path).unwrap(), m);
        let text = fs::read_to_string(&path).unwrap();
        assert!(!text.lines().next().unwrap().contains("snr_db"));
        let summary = build_summary(&m, &NoiseSpec::defaults(), 3, None);
        assert_eq!(summary.counts_by_aug_id.values().copied().collect::<Vec<_>>(), vec![2, 2, 2, 2]);
    }
}
