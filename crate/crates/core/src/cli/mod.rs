//! `augtts` command line front end.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 I/O error.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::Path;

use clap::{Arg, ArgAction, Command};
use thiserror::Error;

use crate::audio::AudioError;
use crate::augment::AugmentError;
use crate::curation::CurationError;
use crate::evalkit::EvalError;
use crate::noisegen::NoiseError;
use crate::toytrain::ToyError;
use config::{flag_name, key_def, parse_config_text, RunConfig};

/// Name of the resolved-config snapshot written into output directories.
pub const SNAPSHOT_FILE: &str = "run_config.txt";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 2,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<AudioError> for CliError {
    fn from(e: AudioError) -> Self {
        match e {
            AudioError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<NoiseError> for CliError {
    fn from(e: NoiseError) -> Self {
        match e {
            NoiseError::Audio(a) => a.into(),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<CurationError> for CliError {
    fn from(e: CurationError) -> Self {
        match e {
            CurationError::Io(_) | CurationError::MissingMetadata(_) => CliError::Io(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<AugmentError> for CliError {
    fn from(e: AugmentError) -> Self {
        match e {
            AugmentError::Io(_) | AugmentError::MissingFile(_) => CliError::Io(e.to_string()),
            AugmentError::Audio(a) => a.into(),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<ToyError> for CliError {
    fn from(e: ToyError) -> Self {
        match e {
            ToyError::Io(_) => CliError::Io(e.to_string()),
            ToyError::Eval(ev) => ev.into(),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

pub struct Subcommand {
    pub name: &'static str,
    pub about: &'static str,
    pub keys: &'static [&'static str],
}

const TOY_KEYS: [&str; 15] = [
    "toy.vocab_size",
    "toy.feat_dim",
    "toy.embed_dim",
    "toy.enc_hidden",
    "toy.aug_embed_dim",
    "toy.dec_hidden",
    "toy.attn_dim",
    "toy.n_aug_ids",
    "toy.max_decode_frames",
    "toy.gate_loss_weight",
    "toy.learning_rate",
    "toy.grad_clip_norm",
    "toy.batch_size",
    "toy.steps",
    "toy.feedback_dropout",
];

const fn concat<const A: usize, const B: usize, const N: usize>(
    a: [&'static str; A],
    b: [&'static str; B],
) -> [&'static str; N] {
    let mut out = [""; N];
    let mut i = 0;
    while i < A {
        out[i] = a[i];
        i += 1;
    }
    while i < N {
        out[i] = b[i - A];
        i += 1;
    }
    out
}

const TOY_TRAIN_KEYS: [&str; 20] =
    concat(["corpus", "batch_mode", "heldout_fraction", "seed", "out_dir"], TOY_KEYS);

pub const SUBCOMMANDS: &[Subcommand] = &[
    Subcommand {
        name: "curate",
        about: "select a duration-budgeted subset of an LJSpeech corpus",
        keys: &["corpus_root", "mode", "budget_s", "seed", "batch_size", "lexicon", "out_dir"],
    },
    Subcommand {
        name: "augment",
        about: "build the noise-augmented dataset for a subset",
        keys: &["subset", "noise", "seed", "jobs", "verify", "out_dir"],
    },
    Subcommand {
        name: "verify-aug",
        about: "remeasure the SNR of every mixture in an augmented dataset",
        keys: &["dataset", "jobs", "out"],
    },
    Subcommand {
        name: "p56",
        about: "measure the active speech level of a WAV file",
        keys: &["input"],
    },
    Subcommand {
        name: "mix",
        about: "mix seeded noise into speech at an exact active-speech SNR",
        keys: &["speech", "noise_kind", "snr_db", "seed", "out"],
    },
    Subcommand {
        name: "mel",
        about: "compute a log-mel spectrogram and write it as MELB",
        keys: &[
            "input",
            "out",
            "mel.sample_rate_hz",
            "mel.n_fft",
            "mel.hop_length",
            "mel.win_length",
            "mel.n_mels",
            "mel.fmin_hz",
            "mel.fmax_hz",
            "mel.log_floor",
        ],
    },
    Subcommand {
        name: "sharpness",
        about: "attention sharpness statistics for a directory of ATTN1 files",
        keys: &["attn_dir", "label", "out"],
    },
    Subcommand {
        name: "wer",
        about: "pooled word error rate of hypotheses against references",
        keys: &["ref", "hyp", "tsv"],
    },
    Subcommand {
        name: "sus",
        about: "per-sentence WER report for a SUS listening set",
        keys: &["ref", "hyp", "tsv", "out"],
    },
    Subcommand {
        name: "toy-gen",
        about: "generate a synthetic toy corpus",
        keys: &["toy.vocab_size", "toy.feat_dim", "n_utts", "len_min", "len_max", "profiles", "seed", "out_dir"],
    },
    Subcommand {
        name: "toy-train",
        about: "train the toy attention model on a toy corpus",
        keys: &TOY_TRAIN_KEYS,
    },
    Subcommand {
        name: "toy-infer",
        about: "run free-running inference with a toy checkpoint",
        keys: &["model", "tokens", "aug_id", "out_dir"],
    },
    Subcommand {
        name: "study",
        about: "run a multi-seed toy study",
        keys: &["study", "seeds", "jobs", "study.steps", "study.learning_rate", "study.n_utts", "out_dir"],
    },
];

fn subcommand(name: &str) -> &'static Subcommand {
    SUBCOMMANDS.iter().find(|s| s.name == name).expect("registered subcommand")
}

pub fn command() -> Command {
    let mut app = Command::new("augtts")
        .about("Low-resource TTS data toolkit")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true);
    for sc in SUBCOMMANDS {
        let mut c = Command::new(sc.name)
            .about(sc.about)
            .arg(
                Arg::new("config")
                    .long("config")
                    .value_name("FILE")
                    .help("key = value configuration file"),
            )
            .arg(
                Arg::new("json")
                    .long("json")
                    .action(ArgAction::SetTrue)
                    .help("print the summary as JSON"),
            )
            .arg(
                Arg::new("force")
                    .long("force")
                    .action(ArgAction::SetTrue)
                    .help("write into a non-empty output directory or over an existing file"),
            );
        for &key in sc.keys {
            let def = key_def(key).expect("key in table");
            let help = if def.default.is_empty() {
                def.help.to_string()
            } else {
                format!("{} [default: {}]", def.help, def.default)
            };
            c = c.arg(Arg::new(key).long(flag_name(key)).value_name("VALUE").help(help));
        }
        app = app.subcommand(c);
    }
    app
}

/// Output of a subcommand: a human summary and its JSON form.
pub struct Outcome {
    pub text: String,
    pub json: serde_json::Value,
}

pub(crate) struct Ctx {
    pub cfg: RunConfig,
    pub force: bool,
}

impl Ctx {
    /// Fails unless `dir` is absent, empty, or `--force` was given.
    pub fn check_out_dir(&self, dir: &Path) -> Result<(), CliError> {
        if dir.exists() {
            if !dir.is_dir() {
                return Err(CliError::Usage(format!("{} exists and is not a directory", dir.display())));
            }
            if !self.force && fs::read_dir(dir)?.next().is_some() {
                return Err(CliError::Usage(format!(
                    "output directory {} is not empty; pass --force to write into it",
                    dir.display()
                )));
            }
        }
        Ok(())
    }

    pub fn check_out_file(&self, path: &Path) -> Result<(), CliError> {
        if path.exists() && !self.force {
            return Err(CliError::Usage(format!(
                "{} exists; pass --force to overwrite it",
                path.display()
            )));
        }
        Ok(())
    }

    /// Creates `dir` and writes the resolved configuration into it.
    pub fn open_out_dir(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(SNAPSHOT_FILE), self.cfg.snapshot())?;
        Ok(())
    }
}

/// Parses `args` (without the program name), runs the subcommand and
/// writes its summary to `stdout`.
pub fn execute<I, T>(args: I, stdout: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv = std::iter::once(OsString::from("augtts")).chain(args.into_iter().map(Into::into));
    let matches = match command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            write!(stdout, "{}", e.render())?;
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.render().to_string().trim_end().to_string())),
    };
    let (name, m) = matches.subcommand().expect("subcommand required");
    let sc = subcommand(name);
    let file = match m.get_one::<String>("config") {
        Some(p) => {
            let path = Path::new(p);
            let bytes = fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let text = String::from_utf8(bytes)
                .map_err(|_| CliError::Usage(format!("{} is not valid UTF-8", path.display())))?;
            parse_config_text(&text, path)?
        }
        None => Default::default(),
    };
    let flags: Vec<(&'static str, String)> = sc
        .keys
        .iter()
        .filter_map(|&k| m.get_one::<String>(k).map(|v| (k, v.clone())))
        .collect();
    let ctx = Ctx {
        cfg: RunConfig::resolve(name, sc.keys, &file, &flags),
        force: m.get_flag("force"),
    };
    let outcome = commands::run(name, &ctx)?;
    if m.get_flag("json") {
        writeln!(stdout, "{}", serde_json::to_string_pretty(&outcome.json).map_err(std::io::Error::other)?)?;
    } else {
        write!(stdout, "{}", outcome.text)?;
    }
    Ok(())
}

/// Entry point of the `augtts` binary; returns the process exit code.
pub fn main() -> i32 {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match execute(std::env::args_os().skip(1), &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            let _ = lock.flush();
            eprintln!("augtts: {e}");
            e.exit_code()
        }
    }
}
