use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::json;

use super::config::{flag_name, RunConfig};
use super::{CliError, Ctx, Outcome};
use crate::audio::{active_speech_level_p56, mel_spectrogram, read_wav, write_melb, write_wav, MelConfig};
use crate::augment::{
    build_augmented_dataset, build_summary, read_aug_manifest, verify_augmented_dataset, write_aug_manifest,
    write_summary, MANIFEST_FILE, SUMMARY_FILE,
};
use crate::curation::{
    check_informed_invariants, load_ljspeech_manifest, measure_durations, padding_stats, plan_batches,
    read_lexicon, read_subset_manifest, select_informed_subset, select_random_subset, symbol_histogram,
    write_subset_manifest, BatchMode, SelectionMode,
};
use crate::evalkit::{
    read_attention, read_sus_pairs, read_sus_tsv, sharpness_report, sharpness_score, sus_report, write_attention,
    write_sharpness_csv, write_sus_csv,
};
use crate::noisegen::{default_sensor_table, measure_snr_db, mix_at_snr, read_psd_csv, NoiseSpec, SpectrumSpec};
use crate::toytrain::{
    evaluate_heldout, gen_synthetic_corpus, load_checkpoint, run_study, save_checkpoint, train,
    write_study_outputs, AugProfile, StudyConfig, ToyConfig, ToyCorpus, ToyModel,
};

pub(super) fn run(name: &str, ctx: &Ctx) -> Result<Outcome, CliError> {
    match name {
        "curate" => curate(ctx),
        "augment" => augment(ctx),
        "verify-aug" => verify_aug(ctx),
        "p56" => p56(ctx),
        "mix" => mix(ctx),
        "mel" => mel(ctx),
        "sharpness" => sharpness(ctx),
        "wer" => wer(ctx, false),
        "sus" => wer(ctx, true),
        "toy-gen" => toy_gen(ctx),
        "toy-train" => toy_train(ctx),
        "toy-infer" => toy_infer(ctx),
        "study" => study(ctx),
        other => Err(CliError::Usage(format!("unknown subcommand {other}"))),
    }
}

fn bad(key: &str, value: &str, why: &str) -> CliError {
    CliError::Usage(format!("--{} '{value}': {why}", flag_name(key)))
}

fn positive(c: &RunConfig, key: &str) -> Result<usize, CliError> {
    let v: usize = c.parse(key)?;
    if v == 0 {
        return Err(bad(key, c.str(key), "must be at least 1"));
    }
    Ok(v)
}

fn finite(c: &RunConfig, key: &str) -> Result<f64, CliError> {
    let v: f64 = c.parse(key)?;
    if !v.is_finite() {
        return Err(bad(key, c.str(key), "must be finite"));
    }
    Ok(v)
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(e.to_string())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    fs::write(path, text + "\n").map_err(io_at(path))
}

fn to_json(value: &impl serde::Serialize) -> serde_json::Value {
    serde_json::to_value(value).expect("summary types serialize")
}

fn batch_mode(c: &RunConfig, key: &str) -> Result<BatchMode, CliError> {
    match c.str(key) {
        "bucketed" => Ok(BatchMode::Bucketed),
        "random" => Ok(BatchMode::RandomShuffle),
        v => Err(bad(key, v, "expected bucketed or random")),
    }
}

/// `white`, `usasi`, `sensor`, or a PSD CSV path named after its file stem.
fn noise_kind(kind: &str) -> Result<(String, SpectrumSpec), CliError> {
    Ok(match kind {
        "white" => ("white".into(), SpectrumSpec::White),
        "usasi" => ("usasi".into(), SpectrumSpec::Usasi),
        "sensor" => ("sensor".into(), default_sensor_table()),
        path => {
            let p = Path::new(path);
            let name = p.file_stem().map_or("psd".into(), |s| s.to_string_lossy().into_owned());
            (name, read_psd_csv(p)?)
        }
    })
}

fn noise_specs(c: &RunConfig) -> Result<Vec<NoiseSpec>, CliError> {
    let mut specs = Vec::new();
    for (i, item) in c.str("noise").split(',').map(str::trim).filter(|s| !s.is_empty()).enumerate() {
        let (kind, snr) = item
            .rsplit_once('@')
            .ok_or_else(|| bad("noise", item, "expected kind@snr_db"))?;
        let snr_db: f64 = snr.parse().map_err(|e| bad("noise", item, &format!("{e}")))?;
        let (name, spectrum) = noise_kind(kind)?;
        specs.push(NoiseSpec {
            name,
            spectrum,
            snr_db,
            aug_id: i as u32 + 1,
        });
    }
    Ok(specs)
}

fn profiles(c: &RunConfig) -> Result<Vec<AugProfile>, CliError> {
    let s = c.str("profiles").trim();
    if s.is_empty() || s == "none" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|item| {
            let (m, sd) = item
                .trim()
                .split_once(':')
                .ok_or_else(|| bad("profiles", item, "expected mean_shift:noise_std"))?;
            let parse = |x: &str| x.trim().parse::<f64>().map_err(|e| bad("profiles", item, &format!("{e}")));
            Ok(AugProfile::new(parse(m)?, parse(sd)?))
        })
        .collect()
}

fn curate(ctx: &Ctx) -> Result<Outcome, CliError> {
    let c = &ctx.cfg;
    let root = c.path("corpus_root")?;
    let mode = match c.str("mode") {
        "informed" => SelectionMode::Informed,
        "random" => SelectionMode::Random,
        v => return Err(bad("mode", v, "expected informed or random")),
    };
    let budget_s = finite(c, "budget_s")?;
    if budget_s <= 0.0 {
        return Err(bad("budget_s", c.str("budget_s"), "must be positive"));
    }
    let seed: u64 = c.parse("seed")?;
    let batch_size = positive(c, "batch_size")?;
    let lexicon_path = c.opt_path("lexicon");
    let out = c.path("out_dir")?;
    ctx.check_out_dir(&out)?;

    let root = root.canonicalize().map_err(io_at(&root))?;
    let lexicon = lexicon_path.map(read_lexicon).transpose()?;
    let corpus = measure_durations(&load_ljspeech_manifest(&root)?, &root)?;
    let subset = match mode {
        SelectionMode::Informed => select_informed_subset(&corpus, budget_s)?,
        SelectionMode::Random => select_random_subset(&corpus, budget_s, seed)?,
    };
    let prefix_verified = match mode {
        SelectionMode::Informed => {
            check_informed_invariants(&subset, &corpus)
                .map_err(|e| CliError::Invalid(format!("informed subset check failed: {e}")))?;
            true
        }
        SelectionMode::Random => false,
    };
    let hist = symbol_histogram(&subset.entries, &corpus, lexicon.as_ref())?;
    let mut padding = BTreeMap::new();
    for (label, m) in [("bucketed", BatchMode::Bucketed), ("random", BatchMode::RandomShuffle)] {
        let plan = plan_batches(&subset.entries, batch_size, m, seed);
        padding.insert(label, padding_stats(&plan, &subset.entries)?.mean_padding_ratio);
    }

    ctx.open_out_dir(&out)?;
    write_subset_manifest(&subset, &root, &out.join("subset.jsonl"), &out.join("summary.json"))?;
    let mut w = csv::Writer::from_path(out.join("symbols.csv")).map_err(csv_err)?;
    w.write_record(["symbol", "count", "frequency"]).map_err(csv_err)?;
    for (sym, (count, freq)) in &hist.counts {
        w.write_record([sym.clone(), count.to_string(), freq.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;

    let mode_name = if prefix_verified { "informed" } else { "random" };
    let mut text = format!(
        "selected {} of {} utterances ({mode_name}): {:.2} s within a {budget_s} s budget\n",
        subset.len(),
        corpus.len(),
        subset.total_duration_s
    );
    if prefix_verified {
        text.push_str("prefix property: verified (sorted, within budget, maximal)\n");
    }
    let _ = writeln!(
        text,
        "symbol coverage {:.4} over {} symbols{}",
        hist.coverage,
        hist.counts.len(),
        if lexicon.is_some() { format!(", {} words missing from the lexicon", hist.oov_words) } else { String::new() }
    );
    let _ = writeln!(
        text,
        "mean padding ratio at batch size {batch_size}: bucketed {:.4}, random {:.4}",
        padding["bucketed"], padding["random"]
    );
    let _ = writeln!(text, "wrote {}", out.join("subset.jsonl").display());
    Ok(Outcome {
        text,
        json: json!({
            "mode": mode_name,
            "budget_s": budget_s,
            "seed": (mode == SelectionMode::Random).then_some(seed),
            "n": subset.len(),
            "n_corpus": corpus.len(),
            "total_s": subset.total_duration_s,
            "prefix_property_verified": prefix_verified,
            "symbol_coverage": hist.coverage,
            "oov_words": hist.oov_words,
            "batch_size": batch_size,
            "mean_padding_ratio": padding,
        }),
    })
}

fn augment(ctx: &Ctx) -> Result<Outcome, CliError> {
    let c = &ctx.cfg;
    let subset_path = c.path("subset")?;
    let seed: u64 = c.parse("seed")?;
    let jobs = positive(c, "jobs")?;
    let verify: bool = c.parse("verify")?;
    let out = c.path("out_dir")?;
    let specs = noise_specs(c)?;
    ctx.check_out_dir(&out)?;

    let entries = read_subset_manifest(&subset_path)?;
    let root = subset_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    ctx.open_out_dir(&out)?;
    let manifest = build_augmented_dataset(&entries, root, &specs, &out, seed, jobs)?;
    write_aug_manifest(&manifest, &out.join(MANIFEST_FILE))?;
    let report = if verify {
        Some(verify_augmented_dataset(&manifest, &out, jobs)?)
    } else {
        None
    };
    let summary = build_summary(&manifest, &specs, seed, report.as_ref());
    write_summary(&summary, &out.join(SUMMARY_FILE))?;

    let mut text = format!(
        "{} entries from {} sources under {} ({} noise conditions)\n{} mixtures rescaled to avoid clipping\n",
        summary.n_entries,
        summary.n_sources,
        out.display(),
        specs.len(),
        summary.n_rescued
    );
    if let Some(v) = &summary.verification {
        let _ = writeln!(
            text,
            "verified {} mixtures: max SNR deviation {:.3} dB, {} flagged",
            v.checked, v.max_abs_deviation_db, v.n_flagged
        );
    }
    Ok(Outcome {
        text,
        json: to_json(&summary),
    })
}

fn verify_aug(ctx: &Ctx) -> Result<Outcome, CliError> {
    let c = &ctx.cfg;
    let dir = c.path("dataset")?;
    let jobs = positive(c, "jobs")?;
    let out = c.opt_path("out");
    if let Some(o) = &out {
        ctx.check_out_file(o)?;
    }
    let manifest = read_aug_manifest(&dir.join(MANIFEST_FILE))?;
    let report = verify_augmented_dataset(&manifest, &dir, jobs)?;
    if let Some(o) = &out {
        write_json(o, &report)?;
    }
    if report.n_flagged() > 0 {
        return Err(CliError::Invalid(format!(
            "{} of {} mixtures miss their target SNR by more than {} dB: {}",
            report.n_flagged(),
            report.checked,
            report.threshold_db,
            report.flagged.iter().take(5).cloned().collect::<Vec<_>>().join(", ")
        )));
    }
    Ok(Outcome {
        text: format!(
            "verified {} mixtures ({} clean skipped): max SNR deviation {:.3} dB, none beyond {} dB\n",
            report.checked, report.clean_skipped, report.max_abs_deviation_db, report.threshold_db
        ),
        json: to_json(&report),
    })
}

fn p56(ctx: &Ctx) -> Result<Outcome, CliError> {
    let clip = read_wav(ctx.cfg.path("input")?)?;
    let r = active_speech_level_p56(&clip)?;
    Ok(Outcome {
        text: format!(
            "active level {:.2} dBFS, activity factor {:.3}, long-term level {:.2} dBFS\n",
            r.active_level_db, r.activity_factor, r.long_term_level_db
        ),
        json: to_json(&r),
    })
}

fn mix(ctx: &Ctx) -> Result<Outcome, CliError> {
    let c = &ctx.cfg;
    let speech_path = c.path("speech")?;
    let snr_db = finite(c, "snr_db")?;
    let seed: u64 = c.parse("seed")?;
    let out = c.path("out")?;
    ctx.check_out_file(&out)?;
    let (name, spectrum) = noise_kind(c.str("noise_kind"))?;
    let speech = read_wav(&speech_path)?;
    spectrum.validate(speech.sample_rate_hz)?;
    let mixed = mix_at_snr(&speech, &spectrum, snr_db, seed)?;
    let achieved = measure_snr_db(&speech, &mixed.mixture, mixed.mixture_gain)?;
    write_wav(&mixed.mixture, &out)?;
    Ok(Outcome {
        text: format!(
            "{name} noise at {snr_db} dB: noise gain {:.6}, mixture gain {:.6}, measured SNR {:.3} dB\nwrote {}\n",
            mixed.noise_gain,
            mixed.mixture_gain,
            achieved,
            out.display()
        ),
        json: json!({
            "noise": name,
            "target_snr_db": snr_db,
            "measured_snr_db": achieved,
            "noise_gain": mixed.noise_gain,
            "mixture_gain": mixed.mixture_gain,
            "seed": seed,
        }),
    })
}

fn mel(ctx: &Ctx) -> Result<Outcome, CliError> {
    let c = &ctx.cfg;
    let cfg = MelConfig {
        sample_rate_hz: c.parse("mel.sample_rate_hz")?,
        n_fft: c.parse("mel.n_fft")?,
        hop_length: c.parse("mel.hop_length")?,
        win_length: c.parse("mel.win_length")?,
        n_mels: c.parse("mel.n_mels")?,
        fmin_hz: c.parse("mel.fmin_hz")?,
        fmax_hz: c.parse("mel.fmax_hz")?,
        log_floor: c.parse("mel.log_floor")?,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let input = c.path("input")?;
    let out = c.path("out")?;
    ctx.check_out_file(&out)?;
    let m = mel_spectrogram(&read_wav(&input)?, &cfg)?;
    write_melb(&m, &out)?;
    Ok(Outcome {
        text: format!("{} frames x {} mels, wrote {}\n", m.n_frames(), cfg.n_mels, out.display()),
        json: json!({ "n_frames": m.n_frames(), "n_mels": cfg.n_mels }),
    })
}

fn sharpness(ctx: &Ctx) -> Result<Outcome, CliError> {
    let c = &ctx.cfg;
    let dir = c.path("attn_dir")?;
    let label = match c.str("label") {
        "" => dir
            .canonicalize()
            .ok()
            .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .unwrap_or_else(|| "attn".into()),
        l => l.to_string(),
    };
    let out = c.opt_path("out");
    if let Some(o) = &out {
        ctx.check_out_file(o)?;
    }
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(io_at(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "attn"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Invalid(format!("no .attn files in {}", dir.display())));
    }
    let matrices = files.iter().map(read_attention).collect::<Result<Vec<_>, _>>()?;
    let report = sharpness_report(&BTreeMap::from([(label.clone(), matrices)]))?;
    if let Some(o) = &out {
        write_sharpness_csv(&report, o)?;
    }
    let s = &report[&label];
    Ok(Outcome {
        text: format!(
            "label,min,q1,median,q3,max,mean,n\n{label},{},{},{},{},{},{},{}\n",
            s.min, s.q1, s.median, s.q3, s.max, s.mean, s.n
        ),
        json: json!({ "label": label, "stats": to_json(s) }),
    })
}

fn wer(ctx: &Ctx, per_sentence: bool) -> Result<Outcome, CliError> {
    let c = &ctx.cfg;
    let out = if per_sentence {
        let o = c.path("out")?;
        ctx.check_out_file(&o)?;
        Some(o)
    } else {
        None
    };
    let pairs = match (c.opt_path("tsv"), c.opt_path("ref"), c.opt_path("hyp")) {
        (Some(t), None, None) => read_sus_tsv(t)?,
        (None, Some(r), Some(h)) => read_sus_pairs(r, h)?,
        _ => return Err(CliError::Usage("give either --tsv or both --ref and --hyp".into())),
    };
    let report = sus_report(&pairs)?;
    let mut text = format!(
        "pooled WER {:.2}% ({} errors over {} reference words, {} sentences)\n",
        report.pooled_wer_percent,
        report.total_errors,
        report.total_ref_words,
        report.per_sentence.len()
    );
    let json = match &out {
        Some(o) => {
            write_sus_csv(&report, o)?;
            let _ = writeln!(text, "wrote {}", o.display());
            to_json(&report)
        }
        None => json!({
            "pooled_wer_percent": report.pooled_wer_percent,
            "total_errors": report.total_errors,
            "total_ref_words": report.total_ref_words,
            "n_sentences": report.per_sentence.len(),
        }),
    };
    Ok(Outcome { text, json })
}

fn toy_gen(ctx: &Ctx) -> Result<Outcome, CliError> {
    let c = &ctx.cfg;
    let k: usize = c.parse("toy.vocab_size")?;
    let m: usize = c.parse("toy.feat_dim")?;
    let n_utts = positive(c, "n_utts")?;
    let len_range = (c.parse("len_min")?, c.parse("len_max")?);
    let profiles = profiles(c)?;
    let seed: u64 = c.parse("seed")?;
    let out = c.path("out_dir")?;
    ctx.check_out_dir(&out)?;
    let corpus = gen_synthetic_corpus(k, m, n_utts, len_range, &profiles, seed)?;
    ctx.open_out_dir(&out)?;
    let path = out.join("corpus.json");
    let mut w = BufWriter::new(File::create(&path).map_err(io_at(&path))?);
    serde_json::to_writer(&mut w, &corpus).map_err(std::io::Error::other)?;
    w.flush()?;
    let frames: usize = corpus.examples.iter().map(|e| e.n_frames()).sum();
    Ok(Outcome {
        text: format!(
            "{} utterances x {} copies = {} examples, {frames} frames, wrote {}\n",
            n_utts,
            profiles.len() + 1,
            corpus.examples.len(),
            path.display()
        ),
        json: json!({
            "n_utterances": n_utts,
            "n_examples": corpus.examples.len(),
            "n_frames": frames,
            "emissions": corpus.task.emissions,
        }),
    })
}

fn toy_config(c: &RunConfig, seed: u64) -> Result<ToyConfig, CliError> {
    let cfg = ToyConfig {
        vocab_size: c.parse("toy.vocab_size")?,
        feat_dim: c.parse("toy.feat_dim")?,
        embed_dim: c.parse("toy.embed_dim")?,
        enc_hidden: c.parse("toy.enc_hidden")?,
        aug_embed_dim: c.parse("toy.aug_embed_dim")?,
        dec_hidden: c.parse("toy.dec_hidden")?,
        attn_dim: c.parse("toy.attn_dim")?,
        n_aug_ids: c.parse("toy.n_aug_ids")?,
        max_decode_frames: c.parse("toy.max_decode_frames")?,
        gate_loss_weight: c.parse("toy.gate_loss_weight")?,
        learning_rate: c.parse("toy.learning_rate")?,
        grad_clip_norm: c.parse("toy.grad_clip_norm")?,
        batch_size: c.parse("toy.batch_size")?,
        steps: c.parse("toy.steps")?,
        seed,
        feedback_dropout: c.parse("toy.feedback_dropout")?,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn read_toy_corpus(path: &Path) -> Result<ToyCorpus, CliError> {
    let file = File::open(path).map_err(io_at(path))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CliError::Invalid(format!("{} is not a toy corpus: {e}", path.display())))
}

fn toy_train(ctx: &Ctx) -> Result<Outcome, CliError> {
    let c = &ctx.cfg;
    let corpus_path = c.path("corpus")?;
    let mode = batch_mode(c, "batch_mode")?;
    let heldout_fraction = finite(c, "heldout_fraction")?;
    if !(heldout_fraction > 0.0 && heldout_fraction < 1.0) {
        return Err(bad("heldout_fraction", c.str("heldout_fraction"), "must lie in (0, 1)"));
    }
    let toy = toy_config(c, c.parse("seed")?)?;
    let out = c.path("out_dir")?;
    ctx.check_out_dir(&out)?;

    let corpus = read_toy_corpus(&corpus_path)?;
    if corpus.task.vocab_size() != toy.vocab_size || corpus.task.feat_dim() != toy.feat_dim {
        return Err(CliError::Invalid(format!(
            "corpus has K={} M={}, config has K={} M={}",
            corpus.task.vocab_size(),
            corpus.task.feat_dim(),
            toy.vocab_size,
            toy.feat_dim
        )));
    }
    let (train_set, heldout) = corpus.split(heldout_fraction);
    if train_set.is_empty() || heldout.is_empty() {
        return Err(CliError::Invalid("held-out split leaves an empty side".into()));
    }
    let max_aug = corpus.examples.iter().map(|e| e.aug_id).max().unwrap_or(0);
    let aug_ids: Vec<usize> = if toy.aug_embed_dim > 0 { (0..=max_aug).collect() } else { vec![0] };
    let mut model = ToyModel::new(toy)?;
    let mut report = train(&mut model, &train_set, mode)?;
    let held = evaluate_heldout(&model, &corpus.task, &heldout, &aug_ids)?;
    report.heldout = Some(held.clone());

    ctx.open_out_dir(&out)?;
    save_checkpoint(&model, out.join("model.toym"))?;
    write_json(&out.join("train_report.json"), &report)?;
    fs::create_dir_all(out.join("attention"))?;
    for (utt, a) in &held.attention {
        write_attention(a, out.join("attention").join(format!("utt{utt:04}.attn")))?;
    }
    let clean_rmse = held.rmse_by_aug_id.get(&0).copied().unwrap_or(f64::NAN);
    Ok(Outcome {
        text: format!(
            "loss {:.4} -> {:.4} after {} steps ({} batches)\nheld-out: median sharpness {:.3}, length accuracy {:.2}, clean RMSE {:.4}\nwrote {}\n",
            report.initial_loss,
            report.final_loss,
            report.steps,
            c.str("batch_mode"),
            held.sharpness_median,
            held.length_accuracy,
            clean_rmse,
            out.join("model.toym").display()
        ),
        json: to_json(&report),
    })
}

fn toy_infer(ctx: &Ctx) -> Result<Outcome, CliError> {
    let c = &ctx.cfg;
    let model_path = c.path("model")?;
    let tokens: Vec<usize> = c.list("tokens")?;
    if tokens.is_empty() {
        return Err(CliError::Usage("--tokens is required".into()));
    }
    let aug_id: usize = c.parse("aug_id")?;
    let out = c.opt_path("out_dir");
    if let Some(o) = &out {
        ctx.check_out_dir(o)?;
    }
    let model = load_checkpoint(&model_path)?;
    let inf = model.infer(&tokens, aug_id)?;
    let sharp = sharpness_score(&inf.attention)?;
    let stopped = inf.gates.last().is_some_and(|&g| g > 0.5);
    if let Some(o) = &out {
        ctx.open_out_dir(o)?;
        let mut w = csv::Writer::from_path(o.join("frames.csv")).map_err(csv_err)?;
        let mut header = vec!["frame".to_string(), "gate".to_string()];
        header.extend((0..model.config.feat_dim).map(|i| format!("f{i}")));
        w.write_record(&header).map_err(csv_err)?;
        for (t, (f, g)) in inf.frames.iter().zip(&inf.gates).enumerate() {
            let mut row = vec![t.to_string(), g.to_string()];
            row.extend(f.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        write_attention(&inf.attention, o.join("attention.attn"))?;
    }
    Ok(Outcome {
        text: format!(
            "{} frames ({}), attention sharpness {:.3}\n",
            inf.frames.len(),
            if stopped { "stopped by gate" } else { "hit max_decode_frames" },
            sharp
        ),
        json: json!({
            "n_frames": inf.frames.len(),
            "stopped_by_gate": stopped,
            "sharpness": sharp,
            "gates": inf.gates,
            "frames": inf.frames,
        }),
    })
}

fn study(ctx: &Ctx) -> Result<Outcome, CliError> {
    let c = &ctx.cfg;
    let seeds: Vec<u64> = c.list("seeds")?;
    let jobs = positive(c, "jobs")?;
    let mut cfg = match c.str("study") {
        "batching" => StudyConfig::batching(seeds),
        "aug_embedding" => StudyConfig::aug_embedding(seeds),
        v => return Err(bad("study", v, "expected batching or aug_embedding")),
    };
    if let Some(s) = c.parse_auto("study.steps")? {
        cfg.toy.steps = s;
    }
    if let Some(lr) = c.parse_auto("study.learning_rate")? {
        cfg.toy.learning_rate = lr;
    }
    if let Some(n) = c.parse_auto("study.n_utts")? {
        cfg.n_utts = n;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let out = c.path("out_dir")?;
    ctx.check_out_dir(&out)?;

    let result = run_study(&cfg, jobs)?;
    ctx.open_out_dir(&out)?;
    write_study_outputs(&result, &out)?;
    write_json(&out.join("study_config.json"), &cfg)?;
    let arms = cfg.study.arms();
    let metrics: Vec<String> = {
        let mut m: Vec<String> = result.rows.iter().map(|r| r.metric.clone()).collect();
        m.sort();
        m.dedup();
        m
    };
    let mut medians: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
    for arm in arms {
        for m in &metrics {
            if let Some(v) = result.median(arm, m) {
                medians.entry(arm).or_default().insert(m, v);
            }
        }
    }
    write_json(&out.join("summary.json"), &json!({ "study": cfg.study.name(), "seeds": cfg.seeds, "medians": medians }))?;
    let mut text = format!(
        "{} study, {} seeds x {} steps; medians over seeds:\n",
        cfg.study.name(),
        cfg.seeds.len(),
        cfg.toy.steps
    );
    let _ = writeln!(text, "{:<20} {:>14} {:>14}", "metric", arms[0], arms[1]);
    for m in &metrics {
        let cell = |arm: &str| medians.get(arm).and_then(|x| x.get(m.as_str())).map_or("-".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(text, "{:<20} {:>14} {:>14}", m, cell(arms[0]), cell(arms[1]));
    }
    let _ = writeln!(text, "wrote {}", out.join("study.csv").display());
    Ok(Outcome {
        text,
        json: json!({ "study": cfg.study.name(), "seeds": cfg.seeds, "medians": medians }),
    })
}
