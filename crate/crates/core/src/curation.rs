//! Corpus ingest, duration-informed subset selection and batch planning.
//!
//! The informed set sorts the corpus by duration (ties by id) and keeps the
//! longest prefix that fits the budget, so every selected utterance is no
//! longer than any excluded one. Bucketed batch plans chunk the same sorted
//! order so that utterances in a batch have similar lengths and little zero
//! padding.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::wav_duration_s;
use crate::rng::SeededRng;

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("metadata.csv not found under {0}")]
    MissingMetadata(PathBuf),
    #[error("malformed row at line {line}: expected 3 '|'-separated fields, found {fields}")]
    MalformedRow { line: usize, fields: usize },
    #[error("could not measure {} file(s): {}", .0.len(), format_failures(.0))]
    Measurement(Vec<(String, String)>),
    #[error("budget {budget_s} s is below the shortest utterance ({shortest_s} s)")]
    EmptySelection { budget_s: f64, shortest_s: f64 },
    #[error("utterance {0} has no measured duration")]
    Unmeasured(String),
    #[error("unknown id in batch plan: {0}")]
    UnknownId(String),
    #[error("empty subset")]
    EmptySubset,
    #[error("bad manifest {path}: {reason}")]
    BadManifest { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_failures(failures: &[(String, String)]) -> String {
    failures
        .iter()
        .take(5)
        .map(|(id, e)| format!("{id} ({e})"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    /// Path to the WAV file, relative to the corpus root unless absolute.
    pub audio_path: PathBuf,
    /// Normalized transcription.
    pub text: String,
    #[serde(default)]
    pub raw_text: String,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    Informed,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subset {
    pub entries: Vec<CorpusEntry>,
    pub total_duration_s: f64,
    pub selection_mode: SelectionMode,
    pub budget_s: f64,
    pub seed: Option<u64>,
}

impl Subset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchMode {
    Bucketed,
    RandomShuffle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    pub batches: Vec<Vec<String>>,
    pub batch_size: usize,
    pub mode: BatchMode,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchPadding {
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub padding_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaddingReport {
    pub per_batch: Vec<BatchPadding>,
    pub mean_padding_ratio: f64,
}

/// Reads an LJSpeech `metadata.csv` (`id|raw|normalized`); audio is expected
/// at `wavs/<id>.wav`. Durations are left at 0 until measured.
pub fn load_ljspeech_manifest(root: impl AsRef<Path>) -> Result<Vec<CorpusEntry>, CurationError> {
    let root = root.as_ref();
    let meta = root.join("metadata.csv");
    let file = File::open(&meta).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CurationError::MissingMetadata(root.to_path_buf()),
        _ => CurationError::Io(e),
    })?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() != 3 {
            return Err(CurationError::MalformedRow {
                line: i + 1,
                fields: fields.len(),
            });
        }
        entries.push(CorpusEntry {
            id: fields[0].to_string(),
            audio_path: PathBuf::from("wavs").join(format!("{}.wav", fields[0])),
            text: fields[2].to_string(),
            raw_text: fields[1].to_string(),
            duration_s: 0.0,
        });
    }
    Ok(entries)
}

pub fn resolve_audio(root: &Path, entry: &CorpusEntry) -> PathBuf {
    if entry.audio_path.is_absolute() {
        entry.audio_path.clone()
    } else {
        root.join(&entry.audio_path)
    }
}

/// Fills `duration_s` from each WAV header. Every failure is collected.
pub fn measure_durations(
    entries: &[CorpusEntry],
    audio_root: impl AsRef<Path>,
) -> Result<Vec<CorpusEntry>, CurationError> {
    let root = audio_root.as_ref();
    let results: Vec<_> = entries
        .par_iter()
        .map(|e| wav_duration_s(resolve_audio(root, e)).map_err(|err| (e.id.clone(), err.to_string())))
        .collect();
    let failures: Vec<(String, String)> = results.iter().filter_map(|r| r.clone().err()).collect();
    if !failures.is_empty() {
        return Err(CurationError::Measurement(failures));
    }
    Ok(entries
        .iter()
        .zip(results)
        .map(|(e, d)| CorpusEntry {
            duration_s: d.unwrap(),
            ..e.clone()
        })
        .collect())
}

pub fn total_duration_s(entries: &[CorpusEntry]) -> f64 {
    entries.iter().map(|e| e.duration_s).sum()
}

fn check_measured(entries: &[CorpusEntry]) -> Result<(), CurationError> {
    match entries.iter().find(|e| !(e.duration_s > 0.0)) {
        Some(e) => Err(CurationError::Unmeasured(e.id.clone())),
        None => Ok(()),
    }
}

/// Longest prefix of `ordered` whose cumulative duration stays within budget.
fn take_prefix(ordered: Vec<CorpusEntry>, budget_s: f64) -> (Vec<CorpusEntry>, f64) {
    let mut total = 0.0;
    let mut taken = Vec::new();
    for e in ordered {
        if total + e.duration_s > budget_s {
            break;
        }
        total += e.duration_s;
        taken.push(e);
    }
    (taken, total)
}

fn empty_selection(entries: &[CorpusEntry], budget_s: f64) -> CurationError {
    CurationError::EmptySelection {
        budget_s,
        shortest_s: entries.iter().map(|e| e.duration_s).fold(f64::INFINITY, f64::min),
    }
}

/// Duration order, ties broken by id.
pub fn sort_by_duration(entries: &mut [CorpusEntry]) {
    entries.sort_by(|a, b| a.duration_s.total_cmp(&b.duration_s).then_with(|| a.id.cmp(&b.id)));
}

/// Shortest utterances first, up to `budget_s` seconds.
pub fn select_informed_subset(entries: &[CorpusEntry], budget_s: f64) -> Result<Subset, CurationError> {
    check_measured(entries)?;
    let mut sorted = entries.to_vec();
    sort_by_duration(&mut sorted);
    let (taken, total) = take_prefix(sorted, budget_s);
    if taken.is_empty() {
        return Err(empty_selection(entries, budget_s));
    }
    Ok(Subset {
        entries: taken,
        total_duration_s: total,
        selection_mode: SelectionMode::Informed,
        budget_s,
        seed: None,
    })
}

/// Seeded shuffle, then the longest prefix within `budget_s`.
pub fn select_random_subset(entries: &[CorpusEntry], budget_s: f64, seed: u64) -> Result<Subset, CurationError> {
    check_measured(entries)?;
    let mut shuffled = entries.to_vec();
    SeededRng::new(seed).shuffle(&mut shuffled);
    let (taken, total) = take_prefix(shuffled, budget_s);
    if taken.is_empty() {
        return Err(empty_selection(entries, budget_s));
    }
    Ok(Subset {
        entries: taken,
        total_duration_s: total,
        selection_mode: SelectionMode::Random,
        budget_s,
        seed: Some(seed),
    })
}

/// Checks the informed-set invariants of `subset` against the full corpus:
/// sorted order, prefix property, budget safety and maximality.
pub fn check_informed_invariants(subset: &Subset, corpus: &[CorpusEntry]) -> Result<(), String> {
    let selected: BTreeSet<&str> = subset.entries.iter().map(|e| e.id.as_str()).collect();
    let max_selected = subset.entries.iter().map(|e| e.duration_s).fold(f64::NEG_INFINITY, f64::max);
    let min_excluded = corpus
        .iter()
        .filter(|e| !selected.contains(e.id.as_str()))
        .map(|e| e.duration_s)
        .fold(f64::INFINITY, f64::min);
    if subset.entries.windows(2).any(|w| w[0].duration_s > w[1].duration_s) {
        return Err("selection is not sorted by duration".into());
    }
    if max_selected > min_excluded {
        return Err(format!(
            "prefix property violated: selected {max_selected} s > excluded {min_excluded} s"
        ));
    }
    let total = total_duration_s(&subset.entries);
    if (total - subset.total_duration_s).abs() > 1e-6 * total.max(1.0) {
        return Err("total_duration_s does not match entries".into());
    }
    if total > subset.budget_s {
        return Err(format!("budget exceeded: {total} > {}", subset.budget_s));
    }
    if min_excluded.is_finite() && total + min_excluded <= subset.budget_s {
        return Err("selection is not maximal".into());
    }
    Ok(())
}

/// Groups item indices into batches of `batch_size`.
///
/// Bucketed: sort by length (ties by key) and chunk consecutively. When the
/// count does not divide evenly, the short batch takes the shortest items.
/// Full batches are emitted in shuffled order with the short batch last.
/// RandomShuffle: shuffle the items, then chunk.
pub fn plan_batch_indices<K: Ord>(
    lengths: &[f64],
    keys: &[K],
    batch_size: usize,
    mode: BatchMode,
    seed: u64,
) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut rng = SeededRng::new(seed);
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    match mode {
        BatchMode::Bucketed => {
            order.sort_by(|&a, &b| lengths[a].total_cmp(&lengths[b]).then_with(|| keys[a].cmp(&keys[b])));
            let rem = order.len() % batch_size;
            let mut batches: Vec<Vec<usize>> = order[rem..].chunks(batch_size).map(<[usize]>::to_vec).collect();
            rng.shuffle(&mut batches);
            if rem > 0 {
                batches.push(order[..rem].to_vec());
            }
            batches
        }
        BatchMode::RandomShuffle => {
            rng.shuffle(&mut order);
            order.chunks(batch_size).map(<[usize]>::to_vec).collect()
        }
    }
}

pub fn plan_batches(entries: &[CorpusEntry], batch_size: usize, mode: BatchMode, seed: u64) -> BatchPlan {
    let lengths: Vec<f64> = entries.iter().map(|e| e.duration_s).collect();
    let keys: Vec<&str> = entries.iter().map(|e| e.id.as_str()).collect();
    let batches = plan_batch_indices(&lengths, &keys, batch_size, mode, seed)
        .into_iter()
        .map(|b| b.into_iter().map(|i| entries[i].id.clone()).collect())
        .collect();
    BatchPlan {
        batches,
        batch_size,
        mode,
        seed,
    }
}

/// Fraction of a batch of `batch_size` slots that is zero padding:
/// `1 − Σd / (batch_size · max d)`. Missing slots of a short batch count as
/// padding.
pub fn padding_ratio(durations: &[f64], batch_size: usize) -> f64 {
    let max = durations.iter().copied().fold(0.0, f64::max);
    if durations.is_empty() || max <= 0.0 {
        return 0.0;
    }
    1.0 - durations.iter().sum::<f64>() / (batch_size.max(durations.len()) as f64 * max)
}

/// Per-batch padding ratios and their mean weighted by padded batch area
/// (`batch_size · max d`), i.e. the padded fraction of everything computed.
pub fn padding_stats(plan: &BatchPlan, entries: &[CorpusEntry]) -> Result<PaddingReport, CurationError> {
    let by_id: HashMap<&str, f64> = entries.iter().map(|e| (e.id.as_str(), e.duration_s)).collect();
    let mut per_batch = Vec::with_capacity(plan.batches.len());
    let (mut content, mut area) = (0.0, 0.0);
    for batch in &plan.batches {
        let durations = batch
            .iter()
            .map(|id| by_id.get(id.as_str()).copied().ok_or_else(|| CurationError::UnknownId(id.clone())))
            .collect::<Result<Vec<f64>, _>>()?;
        let max = durations.iter().copied().fold(0.0, f64::max);
        content += durations.iter().sum::<f64>();
        area += plan.batch_size.max(durations.len()) as f64 * max;
        per_batch.push(BatchPadding {
            min_duration_s: durations.iter().copied().fold(f64::INFINITY, f64::min),
            max_duration_s: max,
            padding_ratio: padding_ratio(&durations, plan.batch_size),
        });
    }
    let mean_padding_ratio = if area > 0.0 { 1.0 - content / area } else { 0.0 };
    Ok(PaddingReport {
        per_batch,
        mean_padding_ratio,
    })
}

/// Pronunciation lexicon: upper-cased word to phoneme sequence.
pub type Lexicon = HashMap<String, Vec<String>>;

/// Reads a CMUdict-style lexicon: `WORD PH1 PH2 ...` per line, `;;;` comments.
pub fn read_lexicon(path: impl AsRef<Path>) -> Result<Lexicon, CurationError> {
    let mut lexicon = Lexicon::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.starts_with(";;;") || line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        if let Some(word) = parts.next() {
            let phones: Vec<String> = parts
                .map(|p| p.trim_end_matches(|c: char| c.is_ascii_digit()).to_string())
                .collect();
            lexicon.entry(word.to_uppercase()).or_insert(phones);
        }
    }
    Ok(lexicon)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymbolHistogram {
    /// Symbol to (count, relative frequency).
    pub counts: BTreeMap<String, (u64, f64)>,
    /// Fraction of the full corpus's symbol inventory present in the subset.
    pub coverage: f64,
    /// Words missing from the lexicon (phoneme mode only).
    pub oov_words: u64,
}

fn symbols(text: &str, lexicon: Option<&Lexicon>, oov: &mut u64) -> Vec<String> {
    match lexicon {
        None => text
            .chars()
            .flat_map(char::to_lowercase)
            .filter(|c| c.is_alphabetic())
            .map(String::from)
            .collect(),
        Some(lex) => text
            .split_whitespace()
            .map(|w| {
                w.trim_matches(|c: char| !c.is_alphanumeric() && c != '\'')
                    .to_uppercase()
            })
            .filter(|w| !w.is_empty())
            .flat_map(|w| match lex.get(&w) {
                Some(phones) => phones.clone(),
                None => {
                    *oov += 1;
                    Vec::new()
                }
            })
            .collect(),
    }
}

/// Symbol counts of the subset and its coverage of the corpus inventory.
/// Letters by default; phonemes when a lexicon is supplied.
pub fn symbol_histogram(
    subset: &[CorpusEntry],
    corpus: &[CorpusEntry],
    lexicon: Option<&Lexicon>,
) -> Result<SymbolHistogram, CurationError> {
    if subset.is_empty() {
        return Err(CurationError::EmptySubset);
    }
    let mut oov_words = 0;
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for e in subset {
        for s in symbols(&e.text, lexicon, &mut oov_words) {
            *counts.entry(s).or_default() += 1;
        }
    }
    let mut ignored = 0;
    let inventory: BTreeSet<String> = corpus
        .iter()
        .flat_map(|e| symbols(&e.text, lexicon, &mut ignored))
        .chain(counts.keys().cloned())
        .collect();
    let total: u64 = counts.values().sum();
    let coverage = if inventory.is_empty() {
        1.0
    } else {
        counts.len() as f64 / inventory.len() as f64
    };
    Ok(SymbolHistogram {
        counts: counts
            .into_iter()
            .map(|(s, c)| (s, (c, c as f64 / total.max(1) as f64)))
            .collect(),
        coverage,
        oov_words,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestLine {
    id: String,
    audio: PathBuf,
    text: String,
    duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSummary {
    pub mode: SelectionMode,
    pub budget_s: f64,
    pub seed: Option<u64>,
    pub total_s: f64,
    pub n: usize,
}

/// Writes the subset as JSON lines plus a JSON summary sidecar. Audio paths
/// are written resolved against `audio_root`.
pub fn write_subset_manifest(
    subset: &Subset,
    audio_root: &Path,
    manifest_path: &Path,
    summary_path: &Path,
) -> Result<(), CurationError> {
    let mut w = BufWriter::new(File::create(manifest_path)?);
    for e in &subset.entries {
        let line = ManifestLine {
            id: e.id.clone(),
            audio: resolve_audio(audio_root, e),
            text: e.text.clone(),
            duration_s: e.duration_s,
        };
        serde_json::to_writer(&mut w, &line).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    let summary = SubsetSummary {
        mode: subset.selection_mode,
        budget_s: subset.budget_s,
        seed: subset.seed,
        total_s: subset.total_duration_s,
        n: subset.len(),
    };
    let json = serde_json::to_string_pretty(&summary).map_err(std::io::Error::other)?;
    fs::write(summary_path, json + "\n")?;
    Ok(())
}

/// Reads a subset manifest written by [`write_subset_manifest`].
pub fn read_subset_manifest(path: impl AsRef<Path>) -> Result<Vec<CorpusEntry>, CurationError> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let m: ManifestLine = serde_json::from_str(&line).map_err(|e| CurationError::BadManifest {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", i + 1),
        })?;
        out.push(CorpusEntry {
            id: m.id,
            audio_path: m.audio,
            text: m.text,
            raw_text: String::new(),
            duration_s: m.duration_s,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn corpus(durations: &[f64]) -> Vec<CorpusEntry> {
        durations
            .iter()
            .enumerate()
            .map(|(i, &d)| CorpusEntry {
                id: format!("U{i:04}"),
                audio_path: PathBuf::from(format!("wavs/U{i:04}.wav")),
                text: "text".into(),
                raw_text: String::new(),
                duration_s: d,
            })
            .collect()
    }

    fn durations(s: &Subset) -> Vec<f64> {
        s.entries.iter().map(|e| e.duration_s).collect()
    }

    #[test]
    fn loads_ljspeech_rows_and_rejects_bad_arity() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("metadata.csv"),
            "LJ001-0001|Raw One.|raw one\nLJ001-0002|Two|two\nLJ001-0003|3|three\n",
        )
        .unwrap();
        let entries = load_ljspeech_manifest(dir.path()).unwrap();
        assert_eq!(entries.len(), 3);
        assert_eq!(entries[0].id, "LJ001-0001");
        assert_eq!(entries[0].text, "raw one");
        assert_eq!(entries[0].raw_text, "Raw One.");
        assert_eq!(entries[2].audio_path, PathBuf::from("wavs/LJ001-0003.wav"));

        fs::write(dir.path().join("metadata.csv"), "a|b|c\nd|e\n").unwrap();
        assert!(matches!(
            load_ljspeech_manifest(dir.path()),
            Err(CurationError::MalformedRow { line: 2, fields: 2 })
        ));
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(load_ljspeech_manifest(empty.path()), Err(CurationError::MissingMetadata(_))));
    }

    #[test]
    fn measures_wav_durations_and_names_missing_files() {
        use crate::audio::{write_wav, AudioClip};
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("wavs")).unwrap();
        let mut entries = corpus(&[0.0; 10]);
        for e in &entries {
            write_wav(&AudioClip::new(vec![0.0; 44100], 22050), dir.path().join(&e.audio_path)).unwrap();
        }
        let measured = measure_durations(&entries, dir.path()).unwrap();
        assert!(measured.iter().all(|e| (e.duration_s - 2.0).abs() < 1e-12));
        assert!((total_duration_s(&measured) - 20.0).abs() < 1e-9);

        entries[3].audio_path = PathBuf::from("wavs/missing.wav");
        match measure_durations(&entries, dir.path()) {
            Err(CurationError::Measurement(f)) => assert_eq!(f[0].0, "U0003"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn informed_takes_shortest_prefix() {
        let c = corpus(&[5.0, 1.0, 3.0, 2.0, 4.0]);
        let s = select_informed_subset(&c, 6.0).unwrap();
        assert_eq!(durations(&s), vec![1.0, 2.0, 3.0]);
        assert_eq!(s.total_duration_s, 6.0);
        let s = select_informed_subset(&c, 6.5).unwrap();
        assert_eq!(durations(&s), vec![1.0, 2.0, 3.0]);
        check_informed_invariants(&s, &c).unwrap();
        assert!(matches!(select_informed_subset(&c, 0.5), Err(CurationError::EmptySelection { .. })));
    }

    #[test]
    fn informed_ties_break_by_id() {
        let mut c = corpus(&[1.0, 1.0, 1.0]);
        c.reverse();
        let s = select_informed_subset(&c, 2.0).unwrap();
        assert_eq!(s.entries.iter().map(|e| e.id.as_str()).collect::<Vec<_>>(), ["U0000", "U0001"]);
    }

    #[test]
    fn unmeasured_entries_are_rejected() {
        let c = corpus(&[1.0, 0.0]);
        assert!(matches!(select_informed_subset(&c, 5.0), Err(CurationError::Unmeasured(_))));
    }

    #[test]
    fn random_subset_is_seeded_and_saturates() {
        let c = corpus(&[1.0; 30]);
        let a = select_random_subset(&c, 10.0, 7).unwrap();
        assert_eq!(a, select_random_subset(&c, 10.0, 7).unwrap());
        assert_eq!(a.len(), 10);
        let all = select_random_subset(&c, 1000.0, 7).unwrap();
        assert_eq!(all.len(), 30);
        let ids: BTreeSet<_> = all.entries.iter().map(|e| &e.id).collect();
        assert_eq!(ids.len(), 30);
        assert_ne!(all.entries, c);
    }

    #[test]
    fn bucketed_chunks_sorted_durations() {
        let c = corpus(&[6.0, 1.0, 4.0, 2.0, 5.0, 3.0]);
        let plan = plan_batches(&c, 2, BatchMode::Bucketed, 3);
        let mut groups: Vec<Vec<f64>> = plan
            .batches
            .iter()
            .map(|b| {
                let mut d: Vec<f64> = b.iter().map(|id| c.iter().find(|e| &e.id == id).unwrap().duration_s).collect();
                d.sort_by(f64::total_cmp);
                d
            })
            .collect();
        groups.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(groups, vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let r = plan_batches(&c, 2, BatchMode::RandomShuffle, 9);
        assert_eq!(r, plan_batches(&c, 2, BatchMode::RandomShuffle, 9));
    }

    #[test]
    fn padding_ratio_formula() {
        assert_eq!(padding_ratio(&[2.0, 2.0, 2.0], 3), 0.0);
        assert!((padding_ratio(&[1.0, 3.0], 2) - 1.0 / 3.0).abs() < 1e-12);
        // A short batch is padded out to the full batch size.
        assert!((padding_ratio(&[2.0], 2) - 0.5).abs() < 1e-12);
        let c = corpus(&[1.0, 3.0]);
        let plan = BatchPlan {
            batches: vec![vec!["U0000".into(), "U0001".into()]],
            batch_size: 2,
            mode: BatchMode::Bucketed,
            seed: 0,
        };
        let report = padding_stats(&plan, &c).unwrap();
        assert!((report.mean_padding_ratio - 1.0 / 3.0).abs() < 1e-12);
        let bad = BatchPlan {
            batches: vec![vec!["nope".into()]],
            ..plan
        };
        assert!(matches!(padding_stats(&bad, &c), Err(CurationError::UnknownId(_))));
    }

    #[test]
    fn histogram_counts_and_coverage() {
        let mut c = corpus(&[1.0, 1.0, 1.0]);
        c[0].text = "ab".into();
        c[1].text = "BA".into();
        c[2].text = "z".into();
        let h = symbol_histogram(&c[..2], &c, None).unwrap();
        assert_eq!(h.counts["a"], (2, 0.5));
        assert_eq!(h.counts["b"], (2, 0.5));
        assert!(!h.counts.contains_key("z"));
        assert!((h.coverage - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(symbol_histogram(&c, &c, None).unwrap().coverage, 1.0);
        assert!(matches!(symbol_histogram(&[], &c, None), Err(CurationError::EmptySubset)));
    }

    #[test]
    fn histogram_with_lexicon_counts_phonemes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lex.txt");
        fs::write(&path, ";;; comment\nCAT K AE1 T\nTACK T AE1 K\n").unwrap();
        let lex = read_lexicon(&path).unwrap();
        let mut c = corpus(&[1.0]);
        c[0].text = "cat, tack dog".into();
        let h = symbol_histogram(&c, &c, Some(&lex)).unwrap();
        assert_eq!(h.counts["AE"].0, 2);
        assert_eq!(h.counts["K"].0, 2);
        assert_eq!(h.oov_words, 1);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = corpus(&[1.5, 2.5]);
        let s = select_informed_subset(&c, 10.0).unwrap();
        let (m, j) = (dir.path().join("subset.jsonl"), dir.path().join("summary.json"));
        write_subset_manifest(&s, Path::new("/data/lj"), &m, &j).unwrap();
        let back = read_subset_manifest(&m).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].audio_path, PathBuf::from("/data/lj/wavs/U0001.wav"));
        let first = fs::read_to_string(&m).unwrap();
        assert!(first.starts_with(r#"{"id":"U0000","audio":"/data/lj/wavs/U0000.wav","text":"text","duration_s":1.5}"#));
        let summary: SubsetSummary = serde_json::from_str(&fs::read_to_string(&j).unwrap()).unwrap();
        assert_eq!(summary.n, 2);
        assert_eq!(summary.mode, SelectionMode::Informed);
    }

    proptest! {
        #[test]
        fn informed_invariants_hold(ds in prop::collection::vec(0.5f64..12.0, 1..80), frac in 0.05f64..1.2) {
            let c = corpus(&ds);
            let budget = total_duration_s(&c) * frac;
            match select_informed_subset(&c, budget) {
                Ok(s) => prop_assert!(check_informed_invariants(&s, &c).is_ok()),
                Err(CurationError::EmptySelection { shortest_s, .. }) => prop_assert!(shortest_s > budget),
                Err(e) => prop_assert!(false, "{e}"),
            }
        }

        #[test]
        fn plans_partition_the_subset(ds in prop::collection::vec(0.5f64..12.0, 1..60), bs in 1usize..9, seed in any::<u64>()) {
            let c = corpus(&ds);
            for mode in [BatchMode::Bucketed, BatchMode::RandomShuffle] {
                let plan = plan_batches(&c, bs, mode, seed);
                let mut ids: Vec<&String> = plan.batches.iter().flatten().collect();
                ids.sort();
                let mut want: Vec<&String> = c.iter().map(|e| &e.id).collect();
                want.sort();
                prop_assert_eq!(ids, want);
                prop_assert!(plan.batches[..plan.batches.len() - 1].iter().all(|b| b.len() == bs));
                prop_assert!(plan.batches.last().unwrap().len() <= bs);
            }
        }

        #[test]
        fn bucketed_batches_have_narrower_ranges(ds in prop::collection::vec(0.5f64..12.0, 6..60), bs in 2usize..6, seed in any::<u64>()) {
            let c = corpus(&ds);
            let mean_range = |mode| {
                let plan = plan_batches(&c, bs, mode, seed);
                let r = padding_stats(&plan, &c).unwrap();
                let ranges: f64 = r.per_batch.iter().map(|b| b.max_duration_s - b.min_duration_s).sum();
                (ranges / r.per_batch.len() as f64, r.mean_padding_ratio)
            };
            let (bucket_range, bucket_pad) = mean_range(BatchMode::Bucketed);
            let (random_range, random_pad) = mean_range(BatchMode::RandomShuffle);
            prop_assert!(bucket_range <= random_range + 1e-12);
            prop_assert!(bucket_pad <= random_pad + 1e-12);
        }
    }
}
