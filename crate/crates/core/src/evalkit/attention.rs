use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::EvalError;

pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

/// Decoder-frame × encoder-token attention weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix {
    weights: Vec<Vec<f64>>,
    frame_mask: Option<Vec<bool>>,
}

impl AttentionMatrix {
    /// Validates that every valid row is a probability distribution.
    pub fn new(weights: Vec<Vec<f64>>, frame_mask: Option<Vec<bool>>) -> Result<Self, EvalError> {
        let n = weights.first().map_or(0, Vec::len);
        if let Some(row) = weights.iter().position(|r| r.len() != n) {
            return Err(EvalError::Shape(format!("row {row} has {} columns, expected {n}", weights[row].len())));
        }
        if let Some(mask) = &frame_mask {
            if mask.len() != weights.len() {
                return Err(EvalError::Shape(format!(
                    "mask has {} entries for {} frames",
                    mask.len(),
                    weights.len()
                )));
            }
        }
        for (t, row) in weights.iter().enumerate() {
            if frame_mask.as_ref().is_some_and(|m| !m[t]) {
                continue;
            }
            for (col, &value) in row.iter().enumerate() {
                if !(-ROW_SUM_TOLERANCE..=1.0 + ROW_SUM_TOLERANCE).contains(&value) {
                    return Err(EvalError::WeightOutOfRange { row: t, col, value });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(EvalError::NotRowStochastic { row: t, sum });
            }
        }
        Ok(Self { weights, frame_mask })
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn frame_mask(&self) -> Option<&[bool]> {
        self.frame_mask.as_deref()
    }

    pub fn n_frames(&self) -> usize {
        self.weights.len()
    }

    pub fn n_tokens(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    fn is_valid(&self, t: usize) -> bool {
        self.frame_mask.as_ref().is_none_or(|m| m[t])
    }

    /// Only the valid frames, in order.
    pub fn valid_rows(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.weights.iter().enumerate().filter(|(t, _)| self.is_valid(*t)).map(|(_, r)| r)
    }
}

/// Mean over valid frames of the largest attention weight in the frame.
/// 1.0 for perfectly peaked rows, `1/N` for uniform attention over N tokens.
pub fn sharpness_score(a: &AttentionMatrix) -> Result<f64, EvalError> {
    // Running mean, so identical row maxima give that value exactly.
    let (mut mean, mut count) = (0.0, 0usize);
    for row in a.valid_rows() {
        count += 1;
        mean += (row.iter().copied().fold(f64::NEG_INFINITY, f64::max) - mean) / count as f64;
    }
    if count == 0 || a.n_tokens() == 0 {
        return Err(EvalError::NoValidFrames);
    }
    Ok(mean)
}

/// Writes `ATTN1 <T> <N>` followed by one line of N weights per frame.
/// Masked-out frames are not written.
pub fn write_attention(a: &AttentionMatrix, path: impl AsRef<Path>) -> Result<(), EvalError> {
    let rows: Vec<&Vec<f64>> = a.valid_rows().collect();
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ATTN1 {} {}", rows.len(), a.n_tokens())?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_attention(path: impl AsRef<Path>) -> Result<AttentionMatrix, EvalError> {
    let path = path.as_ref();
    let bad = |reason: String| EvalError::MalformedAttnFile {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header = lines.next().transpose()?.ok_or_else(|| bad("empty file".into()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    let (t, n) = match parts.as_slice() {
        ["ATTN1", t, n] => (
            t.parse::<usize>().map_err(|_| bad(format!("bad frame count '{t}'")))?,
            n.parse::<usize>().map_err(|_| bad(format!("bad token count '{n}'")))?,
        ),
        _ => return Err(bad(format!("bad header '{header}'"))),
    };
    let mut weights = Vec::with_capacity(t);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("row {}: {e}", weights.len())))?;
        if row.len() != n {
            return Err(bad(format!("row {} has {} values, header says {n}", weights.len(), row.len())));
        }
        weights.push(row);
    }
    if weights.len() != t {
        return Err(bad(format!("header says {t} rows, found {}", weights.len())));
    }
    AttentionMatrix::new(weights, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    fn random_stochastic(rng: &mut SeededRng, t: usize, n: usize) -> Vec<Vec<f64>> {
        (0..t)
            .map(|_| {
                let raw: Vec<f64> = (0..n).map(|_| rng.uniform().powi(3)).collect();
                let s: f64 = raw.iter().sum::<f64>().max(1e-300);
                raw.iter().map(|v| v / s).collect()
            })
            .collect()
    }

    #[test]
    fn uniform_one_hot_and_direct_cases() {
        let uniform = AttentionMatrix::new(vec![vec![0.25; 4]; 5], None).unwrap();
        assert_eq!(sharpness_score(&uniform).unwrap(), 0.25);
        let one_hot = AttentionMatrix::new(
            vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]],
            None,
        )
        .unwrap();
        assert_eq!(sharpness_score(&one_hot).unwrap(), 1.0);
        let m = AttentionMatrix::new(vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.8, 0.1]], None).unwrap();
        assert!((sharpness_score(&m).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn masked_frames_are_ignored() {
        let m = AttentionMatrix::new(
            vec![vec![0.5, 0.5], vec![1.0, 0.0], vec![0.0, 0.0]],
            Some(vec![true, true, false]),
        )
        .unwrap();
        assert_eq!(sharpness_score(&m).unwrap(), 0.75);
        let none = AttentionMatrix::new(vec![vec![0.0, 0.0]], Some(vec![false])).unwrap();
        assert!(matches!(sharpness_score(&none), Err(EvalError::NoValidFrames)));
    }

    #[test]
    fn rejects_non_stochastic_rows() {
        assert!(matches!(
            AttentionMatrix::new(vec![vec![0.5, 0.5], vec![0.5, 0.3]], None),
            Err(EvalError::NotRowStochastic { row: 1, .. })
        ));
        assert!(matches!(
            AttentionMatrix::new(vec![vec![1.5, -0.5]], None),
            Err(EvalError::WeightOutOfRange { row: 0, col: 0, .. })
        ));
    }

    #[test]
    fn attn1_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.attn");
        let mut rng = SeededRng::new(4);
        let m = AttentionMatrix::new(random_stochastic(&mut rng, 7, 5), None).unwrap();
        write_attention(&m, &path).unwrap();
        assert!(std::fs::read_to_string(&path).unwrap().starts_with("ATTN1 7 5\n"));
        let back = read_attention(&path).unwrap();
        for (a, b) in m.weights().iter().flatten().zip(back.weights().iter().flatten()) {
            assert!((a - b).abs() < 1e-6);
        }

        std::fs::write(&path, "ATTN1 3 4\n0.25 0.25 0.25 0.25\n0.25 0.25 0.25 0.25\n").unwrap();
        assert!(matches!(read_attention(&path), Err(EvalError::MalformedAttnFile { .. })));
        std::fs::write(&path, "ATTN1 2 2\n0.5 0.5\n0.4 0.4\n").unwrap();
        assert!(matches!(read_attention(&path), Err(EvalError::NotRowStochastic { row: 1, .. })));
        std::fs::write(&path, "ATTN2 1 1\n1\n").unwrap();
        assert!(matches!(read_attention(&path), Err(EvalError::MalformedAttnFile { .. })));
    }

    proptest! {
        #[test]
        fn bounds_and_column_permutation_invariance(seed in any::<u64>(), t in 1usize..12, n in 1usize..10) {
            let mut rng = SeededRng::new(seed);
            let w = random_stochastic(&mut rng, t, n);
            let m = AttentionMatrix::new(w.clone(), None).unwrap();
            let s = sharpness_score(&m).unwrap();
            prop_assert!(s >= 1.0 / n as f64 - 1e-12 && s <= 1.0 + 1e-12);
            let mut perm: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut perm);
            let permuted: Vec<Vec<f64>> = w.iter().map(|r| perm.iter().map(|&j| r[j]).collect()).collect();
            let p = sharpness_score(&AttentionMatrix::new(permuted, None).unwrap()).unwrap();
            prop_assert_eq!(s, p);
        }
    }
}
