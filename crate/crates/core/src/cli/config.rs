//! `key = value` run configuration.
//!
//! Every key has a default. A config file may set any known key; the
//! subcommand's own keys can also be set by flag (`budget_s` is
//! `--budget-s`). Flags beat the file, the file beats defaults.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::CliError;

pub struct KeyDef {
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn k(key: &'static str, default: &'static str, help: &'static str) -> KeyDef {
    KeyDef { key, default, help }
}

pub const KEYS: &[KeyDef] = &[
    k("seed", "0", "master seed for every random draw"),
    k("jobs", "1", "worker threads; outputs do not depend on it"),
    k("out_dir", "", "output directory, must be empty unless --force"),
    k("out", "", "output file"),
    k("corpus_root", "", "LJSpeech root holding metadata.csv and wavs/"),
    k("mode", "informed", "subset selection: informed or random"),
    k("budget_s", "7200", "subset duration budget in seconds"),
    k("batch_size", "32", "batch size for the padding report"),
    k("lexicon", "", "CMUdict-style lexicon for a phoneme histogram; empty counts letters"),
    k("subset", "", "subset manifest written by curate"),
    k(
        "noise",
        "white@25,usasi@15,sensor@20",
        "noise conditions kind@snr_db in aug id order; kind is white, usasi, sensor or a PSD CSV path",
    ),
    k("verify", "true", "remeasure every mixture after building"),
    k("dataset", "", "augmented dataset directory written by augment"),
    k("input", "", "input WAV file"),
    k("speech", "", "speech WAV file"),
    k("noise_kind", "white", "white, usasi, sensor or a PSD CSV path"),
    k("snr_db", "20", "target active-speech SNR in dB"),
    k("mel.sample_rate_hz", "22050", "expected sample rate"),
    k("mel.n_fft", "1024", "FFT size"),
    k("mel.hop_length", "256", "hop in samples"),
    k("mel.win_length", "1024", "Hann window length in samples"),
    k("mel.n_mels", "80", "mel bands"),
    k("mel.fmin_hz", "0", "lowest filter edge"),
    k("mel.fmax_hz", "8000", "highest filter edge"),
    k("mel.log_floor", "1e-5", "floor inside the log"),
    k("attn_dir", "", "directory of .attn files"),
    k("label", "", "report label; defaults to the directory name"),
    k("ref", "", "reference sentences, one per line"),
    k("hyp", "", "hypothesis sentences, one per line"),
    k("tsv", "", "reference<TAB>hypothesis file, instead of --ref and --hyp"),
    k("toy.vocab_size", "12", "symbols K"),
    k("toy.feat_dim", "16", "frame dimension M"),
    k("toy.embed_dim", "16", "token embedding size"),
    k("toy.enc_hidden", "32", "encoder state size"),
    k("toy.aug_embed_dim", "4", "augmentation embedding size; 0 disables it"),
    k("toy.dec_hidden", "32", "decoder state size"),
    k("toy.attn_dim", "16", "attention hidden size"),
    k("toy.n_aug_ids", "4", "number of augmentation ids"),
    k("toy.max_decode_frames", "200", "inference hard stop"),
    k("toy.gate_loss_weight", "1", "weight of the stop-gate loss"),
    k("toy.learning_rate", "0.003", "Adam step size"),
    k("toy.grad_clip_norm", "1", "global gradient norm limit"),
    k("toy.batch_size", "16", "examples per step"),
    k("toy.steps", "2000", "optimizer steps"),
    k("toy.feedback_dropout", "1", "probability of zeroing the fed-back previous frame"),
    k("n_utts", "200", "utterances to generate"),
    k("len_min", "3", "shortest token sequence"),
    k("len_max", "40", "longest token sequence"),
    k(
        "profiles",
        "0:0.1,0.2:0.05,-0.15:0.08",
        "noisy copies as mean_shift:noise_std, in aug id order; none for clean only",
    ),
    k("corpus", "", "toy corpus JSON written by toy-gen"),
    k("batch_mode", "bucketed", "bucketed or random"),
    k("heldout_fraction", "0.1", "fraction of utterances held out"),
    k("model", "", "TOYM checkpoint"),
    k("tokens", "", "token ids in 1..=K, separated by commas or spaces"),
    k("aug_id", "0", "augmentation id used for inference"),
    k("study", "batching", "batching or aug_embedding"),
    k("seeds", "1,2,3,4,5", "comma-separated seeds"),
    k("study.steps", "auto", "steps per run; auto keeps the study preset"),
    k("study.learning_rate", "auto", "Adam step size; auto keeps the study preset"),
    k("study.n_utts", "auto", "corpus size; auto keeps the study preset"),
];

pub fn key_def(key: &str) -> Option<&'static KeyDef> {
    KEYS.iter().find(|d| d.key == key)
}

/// `toy.steps` → `toy-steps`.
pub fn flag_name(key: &str) -> String {
    key.replace(['_', '.'], "-")
}

/// Parses `key = value` lines. `#` starts a comment line. Unknown and
/// repeated keys are errors.
pub fn parse_config_text(text: &str, origin: &Path) -> Result<BTreeMap<&'static str, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let at = || format!("{}:{}", origin.display(), i + 1);
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{}: expected key = value", at())))?;
        let key = key.trim();
        let def = key_def(key).ok_or_else(|| CliError::Usage(format!("{}: unknown key '{key}'", at())))?;
        if out.insert(def.key, value.trim().to_string()).is_some() {
            return Err(CliError::Usage(format!("{}: key '{key}' set twice", at())));
        }
    }
    Ok(out)
}

/// Resolved values of one subcommand's keys.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: String,
    values: BTreeMap<&'static str, String>,
}

impl RunConfig {
    pub fn resolve(
        command: &str,
        keys: &[&'static str],
        file: &BTreeMap<&'static str, String>,
        flags: &[(&'static str, String)],
    ) -> Self {
        let mut values = BTreeMap::new();
        for &key in keys {
            let def = key_def(key).expect("subcommand keys are in the key table");
            values.insert(key, file.get(key).cloned().unwrap_or_else(|| def.default.to_string()));
        }
        for (key, v) in flags {
            values.insert(*key, v.clone());
        }
        Self {
            command: command.to_string(),
            values,
        }
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("key {key} not resolved"))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let v = self.str(key);
        v.parse()
            .map_err(|e| CliError::Usage(format!("--{} '{v}': {e}", flag_name(key))))
    }

    /// `None` for `auto`.
    pub fn parse_auto<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        if self.str(key) == "auto" {
            Ok(None)
        } else {
            self.parse(key).map(Some)
        }
    }

    pub fn path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.opt_path(key)
            .ok_or_else(|| CliError::Usage(format!("--{} is required", flag_name(key))))
    }

    pub fn opt_path(&self, key: &str) -> Option<PathBuf> {
        let v = self.str(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: Display,
    {
        self.str(key)
            .split([',', ' '])
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e| CliError::Usage(format!("--{} item '{s}': {e}", flag_name(key))))
            })
            .collect()
    }

    /// The resolved configuration in the file format it was read from.
    pub fn snapshot(&self) -> String {
        let mut s = format!("# augtts {}\n", self.command);
        for (k, v) in &self.values {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }
}
