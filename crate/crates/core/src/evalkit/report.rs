use std::collections::BTreeMap;
use std::path::Path;

use super::{sharpness_score, AttentionMatrix, EvalError};

/// Boxplot statistics of one label's scores.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SummaryStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub n: usize,
}

impl SummaryStats {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            min: v[0],
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
            max: v[v.len() - 1],
            mean: v.iter().sum::<f64>() / v.len() as f64,
            n: v.len(),
        })
    }
}

/// Linear-interpolation quantile (Hyndman-Fan type 7) of sorted values.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Sharpness statistics per label.
pub fn sharpness_report(
    matrices: &BTreeMap<String, Vec<AttentionMatrix>>,
) -> Result<BTreeMap<String, SummaryStats>, EvalError> {
    matrices
        .iter()
        .map(|(label, ms)| {
            let scores = ms.iter().map(sharpness_score).collect::<Result<Vec<_>, _>>()?;
            let stats = SummaryStats::from_values(&scores).ok_or_else(|| EvalError::EmptyLabel(label.clone()))?;
            Ok((label.clone(), stats))
        })
        .collect()
}

/// CSV with header `label,min,q1,median,q3,max,mean,n`.
pub fn write_sharpness_csv(report: &BTreeMap<String, SummaryStats>, path: impl AsRef<Path>) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record(["label", "min", "q1", "median", "q3", "max", "mean", "n"]).map_err(csv_io)?;
    for (label, s) in report {
        w.write_record([
            label.clone(),
            s.min.to_string(),
            s.q1.to_string(),
            s.median.to_string(),
            s.q3.to_string(),
            s.max.to_string(),
            s.mean.to_string(),
            s.n.to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_io(e: csv::Error) -> EvalError {
    EvalError::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type7_quantiles() {
        let v = [0.2, 0.4, 0.6];
        assert_eq!(quantile(&v, 0.5), 0.4);
        assert!((quantile(&v, 0.25) - 0.3).abs() < 1e-12);
        let v = [1.0, 2.0, 3.0, 4.0];
        assert!((quantile(&v, 0.25) - 1.75).abs() < 1e-12);
        assert!((quantile(&v, 0.5) - 2.5).abs() < 1e-12);
        assert_eq!(quantile(&[7.0], 0.75), 7.0);
    }

    #[test]
    fn two_labels_give_two_rows() {
        let mut m = BTreeMap::new();
        m.insert("IS".to_string(), vec![AttentionMatrix::new(vec![vec![1.0, 0.0]], None).unwrap()]);
        m.insert("RS".to_string(), vec![AttentionMatrix::new(vec![vec![0.5, 0.5]], None).unwrap()]);
        let r = sharpness_report(&m).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_sharpness_csv(&r, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "label,min,q1,median,q3,max,mean,n");
        assert_eq!(lines[1], "IS,1,1,1,1,1,1,1");
        assert_eq!(lines[2], "RS,0.5,0.5,0.5,0.5,0.5,0.5,1");

        m.insert("empty".into(), vec![]);
        assert!(matches!(sharpness_report(&m), Err(EvalError::EmptyLabel(l)) if l == "empty"));
    }
}
