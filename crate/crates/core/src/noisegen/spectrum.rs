use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::NoiseError;
use crate::rng::SeededRng;

/// First-order high-pass corner of the USASI program-noise spectrum.
pub const USASI_HIGHPASS_HZ: f64 = 100.0;
/// First-order low-pass corner of the USASI program-noise spectrum.
pub const USASI_LOWPASS_HZ: f64 = 320.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum SpectrumSpec {
    White,
    Usasi,
    /// Relative power in dB at the given frequencies; log-frequency linear
    /// interpolation in between, flat beyond the end points.
    PsdTable { psd_points: Vec<(f64, f64)> },
}

impl SpectrumSpec {
    pub fn validate(&self, sample_rate_hz: u32) -> Result<(), NoiseError> {
        let SpectrumSpec::PsdTable { psd_points } = self else {
            return Ok(());
        };
        let nyquist = sample_rate_hz as f64 / 2.0;
        if psd_points.len() < 2 {
            return Err(NoiseError::BadSpectrum("PSD table needs at least 2 points".into()));
        }
        for (i, &(f, db)) in psd_points.iter().enumerate() {
            if !(f > 0.0 && f <= nyquist) {
                return Err(NoiseError::BadSpectrum(format!(
                    "point {i}: frequency {f} Hz outside (0, {nyquist}]"
                )));
            }
            if !db.is_finite() {
                return Err(NoiseError::BadSpectrum(format!("point {i}: non-finite power")));
            }
            if i > 0 && f <= psd_points[i - 1].0 {
                return Err(NoiseError::BadSpectrum(format!(
                    "point {i}: frequencies must be strictly increasing"
                )));
            }
        }
        Ok(())
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            SpectrumSpec::White => "white",
            SpectrumSpec::Usasi => "usasi",
            SpectrumSpec::PsdTable { .. } => "psd_table",
        }
    }
}

/// Approximate electret microphone self-noise: rising 10 dB per decade below
/// 1 kHz and flat above. An approximation, not a measured device curve.
pub fn default_sensor_table() -> SpectrumSpec {
    let freqs = [
        20.0, 50.0, 100.0, 200.0, 300.0, 500.0, 700.0, 1000.0, 2000.0, 3000.0, 5000.0, 8000.0,
    ];
    SpectrumSpec::PsdTable {
        psd_points: freqs
            .iter()
            .map(|&f: &f64| {
                let db = if f < 1000.0 { 10.0 * (1000.0 / f).log10() } else { 0.0 };
                (f, (db * 100.0).round() / 100.0)
            })
            .collect(),
    }
}

/// Target power response `|H(f)|²` (relative, linear).
pub fn spectrum_gain(spec: &SpectrumSpec, f: f64) -> f64 {
    match spec {
        SpectrumSpec::White => 1.0,
        SpectrumSpec::Usasi => {
            let f2 = f * f;
            f2 / ((f2 + USASI_HIGHPASS_HZ.powi(2)) * (f2 + USASI_LOWPASS_HZ.powi(2)))
        }
        SpectrumSpec::PsdTable { psd_points } => {
            let db = interpolate_log_freq(psd_points, f);
            10f64.powf(db / 10.0)
        }
    }
}

fn interpolate_log_freq(points: &[(f64, f64)], f: f64) -> f64 {
    let (first, last) = (points[0], points[points.len() - 1]);
    if f <= first.0 {
        return first.1;
    }
    if f >= last.0 {
        return last.1;
    }
    let i = points.partition_point(|p| p.0 <= f);
    let ((f0, d0), (f1, d1)) = (points[i - 1], points[i]);
    let t = (f / f0).ln() / (f1 / f0).ln();
    d0 + t * (d1 - d0)
}

/// `n` i.i.d. standard normal samples.
pub fn white_gaussian(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = SeededRng::new(seed);
    (0..n).map(|_| rng.standard_normal()).collect()
}

/// White Gaussian noise shaped in the frequency domain to `spec`, then
/// normalized to unit RMS. Needs at least one second of samples.
pub fn shaped_noise(
    n: usize,
    spec: &SpectrumSpec,
    sample_rate_hz: u32,
    seed: u64,
) -> Result<Vec<f64>, NoiseError> {
    spec.validate(sample_rate_hz)?;
    if n < sample_rate_hz as usize {
        return Err(NoiseError::TooShort {
            got: n,
            need: sample_rate_hz as usize,
        });
    }
    let white = white_gaussian(n, seed);
    let mut shaped = if matches!(spec, SpectrumSpec::White) {
        white
    } else {
        let mut planner = FftPlanner::<f64>::new();
        let mut buf: Vec<Complex<f64>> = white.iter().map(|&x| Complex::new(x, 0.0)).collect();
        planner.plan_fft_forward(n).process(&mut buf);
        let fs = sample_rate_hz as f64;
        for (k, c) in buf.iter_mut().enumerate() {
            // Mirror negative-frequency bins to keep the output real.
            let bin = k.min(n - k);
            let f = bin as f64 * fs / n as f64;
            *c *= spectrum_gain(spec, f).sqrt();
        }
        planner.plan_fft_inverse(n).process(&mut buf);
        buf.iter().map(|c| c.re / n as f64).collect()
    };
    let rms = (shaped.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if !(rms > 0.0) {
        return Err(NoiseError::BadSpectrum("spectrum has no energy in band".into()));
    }
    shaped.iter_mut().for_each(|v| *v /= rms);
    Ok(shaped)
}

/// Reads a `freq_hz,power_db` CSV into a PSD table spectrum.
pub fn read_psd_csv(path: impl AsRef<Path>) -> Result<SpectrumSpec, NoiseError> {
    let path = path.as_ref();
    let bad = |reason: String| NoiseError::BadPsdFile {
        path: path.display().to_string(),
        reason,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?;
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["freq_hz", "power_db"] {
        return Err(bad(format!("expected header freq_hz,power_db, got {headers:?}")));
    }
    let mut psd_points = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let parse = |i: usize| -> Result<f64, NoiseError> {
            record
                .get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| bad(format!("line {}: cannot parse column {}", line + 2, i + 1)))
        };
        psd_points.push((parse(0)?, parse(1)?));
    }
    Ok(SpectrumSpec::PsdTable { psd_points })
}

pub fn write_psd_csv(spec: &SpectrumSpec, path: impl AsRef<Path>) -> Result<(), NoiseError> {
    let path = path.as_ref();
    let SpectrumSpec::PsdTable { psd_points } = spec else {
        return Err(NoiseError::BadSpectrum("only PSD tables can be written".into()));
    };
    let io_err = |e: csv::Error| NoiseError::BadPsdFile {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    w.write_record(["freq_hz", "power_db"]).map_err(io_err)?;
    for (f, db) in psd_points {
        w.write_record([f.to_string(), db.to_string()]).map_err(io_err)?;
    }
    w.flush().map_err(|e| io_err(e.into()))?;
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Welch PSD estimate with a periodic Hann window and 50% overlap.
    /// Returns (bin frequency, power) pairs up to Nyquist.
    pub(crate) fn welch(x: &[f64], fs: f64, seg: usize) -> Vec<(f64, f64)> {
        let fft = FftPlanner::<f64>::new().plan_fft_forward(seg);
        let w: Vec<f64> = (0..seg)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / seg as f64).cos())
            .collect();
        let mut acc = vec![0.0; seg / 2 + 1];
        let mut count = 0;
        let mut start = 0;
        while start + seg <= x.len() {
            let mut buf: Vec<Complex<f64>> = x[start..start + seg]
                .iter()
                .zip(&w)
                .map(|(a, b)| Complex::new(a * b, 0.0))
                .collect();
            fft.process(&mut buf);
            for (a, c) in acc.iter_mut().zip(&buf) {
                *a += c.norm_sqr();
            }
            count += 1;
            start += seg / 2;
        }
        acc.iter()
            .enumerate()
            .map(|(k, a)| (k as f64 * fs / seg as f64, a / count as f64))
            .collect()
    }

    #[test]
    fn white_moments_and_determinism() {
        let x = white_gaussian(1_000_000, 1);
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
        assert!(mean.abs() < 0.005, "{mean}");
        assert!((var - 1.0).abs() < 0.01, "{var}");
        assert_eq!(white_gaussian(1000, 1), x[..1000].to_vec());
        let other = white_gaussian(16, 2);
        assert!(x[..16].iter().zip(&other).all(|(a, b)| a != b));
    }

    #[test]
    fn white_shaping_is_identity_up_to_rms() {
        let fs = 8000;
        let white = white_gaussian(fs as usize * 2, 5);
        let rms = (white.iter().map(|v| v * v).sum::<f64>() / white.len() as f64).sqrt();
        let shaped = shaped_noise(white.len(), &SpectrumSpec::White, fs, 5).unwrap();
        for (a, b) in white.iter().zip(&shaped) {
            assert!((a / rms - b).abs() < 1e-12);
        }
    }

    fn check_shape(spec: &SpectrumSpec, fs: u32, secs: usize, seg: usize, lo: f64, hi: f64, tol_db: f64) {
        let x = shaped_noise(fs as usize * secs, spec, fs, 42).unwrap();
        let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
        assert!((rms - 1.0).abs() < 0.01);
        let psd = welch(&x, fs as f64, seg);
        let ref_bin = psd
            .iter()
            .min_by(|a, b| (a.0 - 200.0).abs().total_cmp(&(b.0 - 200.0).abs()))
            .unwrap();
        let offset = 10.0 * (ref_bin.1 / spectrum_gain(spec, ref_bin.0)).log10();
        let worst = psd
            .iter()
            .filter(|(f, _)| *f >= lo && *f <= hi)
            .map(|(f, p)| (10.0 * (p / spectrum_gain(spec, *f)).log10() - offset).abs())
            .fold(0.0, f64::max);
        assert!(worst <= tol_db, "{spec:?}: worst deviation {worst:.3} dB");
    }

    #[test]
    fn usasi_matches_analytic_curve() {
        check_shape(&SpectrumSpec::Usasi, 22050, 60, 2048, 50.0, 5000.0, 1.0);
    }

    #[test]
    fn flat_table_is_white() {
        let flat = SpectrumSpec::PsdTable {
            psd_points: vec![(100.0, -3.0), (4000.0, -3.0)],
        };
        check_shape(&flat, 8000, 30, 512, 50.0, 3900.0, 1.0);
        check_shape(&default_sensor_table(), 16000, 30, 1024, 50.0, 7000.0, 1.0);
    }

    #[test]
    fn table_interpolation_is_log_frequency() {
        let pts = vec![(100.0, 0.0), (1000.0, -20.0)];
        let spec = SpectrumSpec::PsdTable { psd_points: pts };
        assert!((10.0 * spectrum_gain(&spec, 10f64.powf(2.5)).log10() + 10.0).abs() < 1e-9);
        assert!((10.0 * spectrum_gain(&spec, 10.0).log10()).abs() < 1e-9);
        assert!((10.0 * spectrum_gain(&spec, 5000.0).log10() + 20.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_tables_and_short_requests() {
        let one = SpectrumSpec::PsdTable { psd_points: vec![(100.0, 0.0)] };
        assert!(matches!(shaped_noise(8000, &one, 8000, 0), Err(NoiseError::BadSpectrum(_))));
        let unsorted = SpectrumSpec::PsdTable {
            psd_points: vec![(200.0, 0.0), (100.0, 0.0)],
        };
        assert!(unsorted.validate(8000).is_err());
        let above = SpectrumSpec::PsdTable {
            psd_points: vec![(100.0, 0.0), (5000.0, 0.0)],
        };
        assert!(above.validate(8000).is_err());
        let nan = SpectrumSpec::PsdTable {
            psd_points: vec![(100.0, f64::NAN), (200.0, 0.0)],
        };
        assert!(nan.validate(8000).is_err());
        assert!(matches!(
            shaped_noise(100, &SpectrumSpec::Usasi, 8000, 0),
            Err(NoiseError::TooShort { .. })
        ));
    }

    #[test]
    fn psd_csv_round_trip_and_header_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("psd.csv");
        let spec = default_sensor_table();
        write_psd_csv(&spec, &path).unwrap();
        assert!(std::fs::read_to_string(&path).unwrap().starts_with("freq_hz,power_db\n"));
        assert_eq!(read_psd_csv(&path).unwrap(), spec);
        std::fs::write(&path, "f,p\n1,2\n").unwrap();
        assert!(read_psd_csv(&path).is_err());
    }

    #[test]
    fn sensor_table_has_twelve_points() {
        let SpectrumSpec::PsdTable { psd_points } = default_sensor_table() else {
            unreachable!()
        };
        assert_eq!(psd_points.len(), 12);
        assert!(default_sensor_table().validate(16000).is_ok());
    }
}
