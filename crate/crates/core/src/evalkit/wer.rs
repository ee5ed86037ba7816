use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::report::csv_io;
use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct WerBreakdown {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub n_ref_words: usize,
    pub wer_percent: f64,
}

impl WerBreakdown {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Lowercases, replaces punctuation with spaces (apostrophes between two
/// alphanumerics survive), and splits on whitespace.
pub fn normalize_text(s: &str) -> Vec<String> {
    let chars: Vec<char> = s.chars().collect();
    let mut cleaned = String::with_capacity(s.len());
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            cleaned.extend(c.to_lowercase());
        } else if c == '\'' || c == '\u{2019}' {
            let inner = i > 0
                && chars[i - 1].is_alphanumeric()
                && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
            cleaned.push(if inner { '\'' } else { ' ' });
        } else {
            cleaned.push(' ');
        }
    }
    cleaned.split_whitespace().map(str::to_string).collect()
}

#[derive(Clone, Copy)]
struct Cell {
    cost: usize,
    // Fewer insertions + deletions wins a tie, i.e. substitutions are preferred.
    indels: usize,
    s: usize,
    d: usize,
    i: usize,
}

impl Cell {
    fn key(&self) -> (usize, usize) {
        (self.cost, self.indels)
    }

    fn step(self, sub: usize, del: usize, ins: usize) -> Cell {
        Cell {
            cost: self.cost + sub + del + ins,
            indels: self.indels + del + ins,
            s: self.s + sub,
            d: self.d + del,
            i: self.i + ins,
        }
    }
}

/// Levenshtein alignment over words with unit costs.
pub fn wer<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> Result<WerBreakdown, EvalError> {
    let n = reference.len();
    if n == 0 {
        return Err(EvalError::EmptyReference);
    }
    let m = hypothesis.len();
    let zero = Cell {
        cost: 0,
        indels: 0,
        s: 0,
        d: 0,
        i: 0,
    };
    let mut prev: Vec<Cell> = (0..=m).map(|j| zero.step(0, 0, j)).collect();
    for r in 1..=n {
        let mut cur = Vec::with_capacity(m + 1);
        cur.push(prev[0].step(0, 1, 0));
        for h in 1..=m {
            let same = reference[r - 1].as_ref() == hypothesis[h - 1].as_ref();
            let diag = prev[h - 1].step(usize::from(!same), 0, 0);
            let del = prev[h].step(0, 1, 0);
            let ins = cur[h - 1].step(0, 0, 1);
            let mut best = diag;
            for c in [del, ins] {
                if c.key() < best.key() {
                    best = c;
                }
            }
            cur.push(best);
        }
        prev = cur;
    }
    let c = prev[m];
    Ok(WerBreakdown {
        substitutions: c.s,
        deletions: c.d,
        insertions: c.i,
        n_ref_words: n,
        wer_percent: 100.0 * c.cost as f64 / n as f64,
    })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SusReport {
    /// 100 · Σ errors / Σ reference words.
    pub pooled_wer_percent: f64,
    pub total_errors: usize,
    pub total_ref_words: usize,
    pub per_sentence: Vec<WerBreakdown>,
}

/// Scores normalized (reference, hypothesis) text pairs.
pub fn sus_report<S: AsRef<str> + Sync>(pairs: &[(S, S)]) -> Result<SusReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::NoPairs);
    }
    let per_sentence = pairs
        .par_iter()
        .enumerate()
        .map(|(index, (r, h))| {
            wer(&normalize_text(r.as_ref()), &normalize_text(h.as_ref())).map_err(|e| EvalError::Pair {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let total_errors: usize = per_sentence.iter().map(WerBreakdown::errors).sum();
    let total_ref_words: usize = per_sentence.iter().map(|b| b.n_ref_words).sum();
    Ok(SusReport {
        pooled_wer_percent: 100.0 * total_errors as f64 / total_ref_words as f64,
        total_errors,
        total_ref_words,
        per_sentence,
    })
}

/// Per-sentence CSV: `index,n_ref_words,substitutions,deletions,insertions,wer_percent`.
pub fn write_sus_csv(report: &SusReport, path: impl AsRef<Path>) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record(["index", "n_ref_words", "substitutions", "deletions", "insertions", "wer_percent"])
        .map_err(csv_io)?;
    for (i, b) in report.per_sentence.iter().enumerate() {
        w.write_record([
            i.to_string(),
            b.n_ref_words.to_string(),
            b.substitutions.to_string(),
            b.deletions.to_string(),
            b.insertions.to_string(),
            format!("{:.4}", b.wer_percent),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// Two parallel UTF-8 files, one sentence per line.
pub fn read_sus_pairs(refs: impl AsRef<Path>, hyps: impl AsRef<Path>) -> Result<Vec<(String, String)>, EvalError> {
    let r = fs::read_to_string(refs.as_ref())?;
    let h = fs::read_to_string(hyps.as_ref())?;
    let r: Vec<&str> = r.lines().collect();
    let h: Vec<&str> = h.lines().collect();
    if r.len() != h.len() {
        return Err(EvalError::MalformedSusInput {
            path: hyps.as_ref().to_path_buf(),
            reason: format!("{} hypotheses for {} references", h.len(), r.len()),
        });
    }
    Ok(r.into_iter().zip(h).map(|(a, b)| (a.to_string(), b.to_string())).collect())
}

/// Tab-separated `reference<TAB>hypothesis` lines. An empty hypothesis
/// column is allowed.
pub fn read_sus_tsv(path: impl AsRef<Path>) -> Result<Vec<(String, String)>, EvalError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let mut parts = line.split('\t');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(r), Some(h), None) => Ok((r.to_string(), h.to_string())),
                _ => Err(EvalError::MalformedSusInput {
                    path: path.to_path_buf(),
                    reason: format!("line {} does not have exactly two tab-separated columns", i + 1),
                }),
            }
        })
        .collect()
}
