use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::corpus::{gen_synthetic_corpus, AugProfile};
use super::model::{ToyConfig, ToyModel};
use super::train::{evaluate_heldout, train, HeldoutReport, TrainReport};
use super::ToyError;
use crate::curation::BatchMode;
use crate::evalkit::{write_attention, SummaryStats};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    Batching,
    AugEmbedding,
}

impl Study {
    pub fn name(self) -> &'static str {
        match self {
            Study::Batching => "batching",
            Study::AugEmbedding => "aug_embedding",
        }
    }

    pub fn arms(self) -> [&'static str; 2] {
        match self {
            Study::Batching => ["bucketed", "random"],
            Study::AugEmbedding => ["embedding", "no_embedding"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub study: Study,
    pub seeds: Vec<u64>,
    pub toy: ToyConfig,
    pub n_utts: usize,
    pub len_range: (usize, usize),
    pub profiles: Vec<AugProfile>,
    pub heldout_fraction: f64,
}

impl StudyConfig {
    /// Wide length spread (3 to 40 tokens), clean data only, Bucketed vs
    /// RandomShuffle batch plans.
    pub fn batching(seeds: Vec<u64>) -> Self {
        Self {
            study: Study::Batching,
            seeds,
            toy: ToyConfig {
                n_aug_ids: 1,
                batch_size: 8,
                ..ToyConfig::default()
            },
            n_utts: 200,
            len_range: (3, 40),
            profiles: Vec::new(),
            heldout_fraction: 0.1,
        }
    }

    /// Clean data plus the three default noise profiles, with and without
    /// augmentation embeddings.
    pub fn aug_embedding(seeds: Vec<u64>) -> Self {
        Self {
            study: Study::AugEmbedding,
            seeds,
            toy: ToyConfig {
                steps: 4000,
                ..ToyConfig::default()
            },
            n_utts: 150,
            len_range: (3, 15),
            profiles: AugProfile::defaults(),
            heldout_fraction: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), ToyError> {
        if self.seeds.len() < 3 {
            return Err(ToyError::BadConfig(format!("a study needs at least 3 seeds, got {}", self.seeds.len())));
        }
        if !(self.heldout_fraction > 0.0 && self.heldout_fraction < 1.0) {
            return Err(ToyError::BadConfig("heldout_fraction must lie in (0, 1)".into()));
        }
        if self.toy.n_aug_ids < self.profiles.len() + 1 {
            return Err(ToyError::BadConfig(format!(
                "n_aug_ids {} cannot label {} profiles plus clean",
                self.toy.n_aug_ids,
                self.profiles.len()
            )));
        }
        self.toy.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub study: String,
    pub arm: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmRun {
    pub arm: String,
    pub seed: u64,
    pub train: TrainReport,
    pub heldout: HeldoutReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub study: Study,
    pub runs: Vec<ArmRun>,
    pub rows: Vec<StudyRow>,
}

impl StudyResult {
    /// Median over seeds of one metric in one arm.
    pub fn median(&self, arm: &str, metric: &str) -> Option<f64> {
        let values: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.arm == arm && r.metric == metric)
            .map(|r| r.value)
            .collect();
        SummaryStats::from_values(&values).map(|s| s.median)
    }
}

fn run_arm(cfg: &StudyConfig, arm: &str, seed: u64) -> Result<ArmRun, ToyError> {
    let corpus_seed = derive_seed(seed, &[b"toy-study-corpus", cfg.study.name().as_bytes()]);
    let corpus = gen_synthetic_corpus(
        cfg.toy.vocab_size,
        cfg.toy.feat_dim,
        cfg.n_utts,
        cfg.len_range,
        &cfg.profiles,
        corpus_seed,
    )?;
    let (train_set, heldout) = corpus.split(cfg.heldout_fraction);
    let mut toy = ToyConfig { seed, ..cfg.toy.clone() };
    let mut mode = BatchMode::Bucketed;
    match (cfg.study, arm) {
        (Study::Batching, "random") => mode = BatchMode::RandomShuffle,
        (Study::AugEmbedding, "no_embedding") => toy.aug_embed_dim = 0,
        _ => {}
    }
    let aug_ids: Vec<usize> = match (cfg.study, toy.aug_embed_dim) {
        (Study::AugEmbedding, d) if d > 0 => (0..=cfg.profiles.len()).collect(),
        _ => vec![0],
    };
    let mut model = ToyModel::new(toy)?;
    let mut report = train(&mut model, &train_set, mode)?;
    let heldout = evaluate_heldout(&model, &corpus.task, &heldout, &aug_ids)?;
    report.heldout = Some(heldout.clone());
    Ok(ArmRun {
        arm: arm.to_string(),
        seed,
        train: report,
        heldout,
    })
}

fn rows_for(study: Study, run: &ArmRun) -> Vec<StudyRow> {
    let row = |metric: String, value: f64| StudyRow {
        study: study.name().to_string(),
        arm: run.arm.clone(),
        seed: run.seed,
        metric,
        value,
    };
    let mut rows = vec![
        row("initial_loss".into(), run.train.initial_loss),
        row("final_loss".into(), run.train.final_loss),
        row("length_accuracy".into(), run.heldout.length_accuracy),
    ];
    match study {
        Study::Batching => rows.push(row("median_sharpness".into(), run.heldout.sharpness_median)),
        Study::AugEmbedding => {
            rows.push(row("median_sharpness".into(), run.heldout.sharpness_median));
            for (a, v) in &run.heldout.rmse_by_aug_id {
                rows.push(row(format!("rmse_aug{a}"), *v));
            }
        }
    }
    rows
}

/// Trains and evaluates every (arm, seed) pair. With `jobs > 1` runs go in
/// parallel; results are collected in (seed, arm) order so output does not
/// depend on `jobs`.
pub fn run_study(cfg: &StudyConfig, jobs: usize) -> Result<StudyResult, ToyError> {
    cfg.validate()?;
    let tasks: Vec<(u64, &str)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| cfg.study.arms().into_iter().map(move |a| (s, a)))
        .collect();
    let runs = crate::with_jobs(jobs, || {
        tasks
            .par_iter()
            .map(|&(seed, arm)| run_arm(cfg, arm, seed))
            .collect::<Result<Vec<_>, _>>()
    })
    .map_err(|e| ToyError::Pool(e.to_string()))??;
    let rows = runs.iter().flat_map(|r| rows_for(cfg.study, r)).collect();
    Ok(StudyResult {
        study: cfg.study,
        runs,
        rows,
    })
}

/// Writes `study.csv` (`study,arm,seed,metric,value`) and one ATTN1 file per
/// held-out utterance and run under `attention/`.
pub fn write_study_outputs(result: &StudyResult, out_dir: impl AsRef<Path>) -> Result<(), ToyError> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir.join("attention"))?;
    let mut w = csv::Writer::from_path(out_dir.join("study.csv")).map_err(|e| ToyError::Io(std::io::Error::other(e)))?;
    for r in &result.rows {
        w.serialize(r).map_err(|e| ToyError::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    for run in &result.runs {
        for (utt, a) in &run.heldout.attention {
            let name = format!("{}_seed{}_utt{:04}.attn", run.arm, run.seed, utt);
            write_attention(a, out_dir.join("attention").join(name))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(study: Study) -> StudyConfig {
        let base = match study {
            Study::Batching => StudyConfig::batching(vec![1, 2, 3]),
            Study::AugEmbedding => StudyConfig::aug_embedding(vec![1, 2, 3]),
        };
        StudyConfig {
            toy: ToyConfig {
                steps: 3,
                batch_size: 4,
                max_decode_frames: 30,
                ..base.toy.clone()
            },
            n_utts: 12,
            len_range: (3, 6),
            ..base
        }
    }

    #[test]
    fn batching_rows_and_bounds() {
        let r = run_study(&quick(Study::Batching), 1).unwrap();
        let sharp: Vec<&StudyRow> = r.rows.iter().filter(|r| r.metric == "median_sharpness").collect();
        assert_eq!(sharp.len(), 6);
        for row in sharp {
            assert!(row.value >= 1.0 / 6.0 - 1e-12 && row.value <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn aug_study_reports_every_id() {
        let r = run_study(&quick(Study::AugEmbedding), 1).unwrap();
        for a in 0..4 {
            assert!(r.median("embedding", &format!("rmse_aug{a}")).is_some());
        }
        assert!(r.median("no_embedding", "rmse_aug0").is_some());
        assert!(r.median("no_embedding", "rmse_aug1").is_none());
    }

    #[test]
    fn parallel_equals_serial() {
        let cfg = quick(Study::Batching);
        let a = run_study(&cfg, 1).unwrap();
        let b = run_study(&cfg, 3).unwrap();
        assert_eq!(a.rows, b.rows);
        let dir = tempfile::tempdir().unwrap();
        write_study_outputs(&a, dir.path().join("a")).unwrap();
        write_study_outputs(&b, dir.path().join("b")).unwrap();
        let read = |p: &str| std::fs::read(dir.path().join(p).join("study.csv")).unwrap();
        assert_eq!(read("a"), read("b"));
        let text = String::from_utf8(read("a")).unwrap();
        assert!(text.starts_with("study,arm,seed,metric,value\n"));
    }

    #[test]
    fn too_few_seeds() {
        let cfg = StudyConfig {
            seeds: vec![1, 2],
            ..quick(Study::Batching)
        };
        assert!(matches!(run_study(&cfg, 1), Err(ToyError::BadConfig(_))));
    }
}
