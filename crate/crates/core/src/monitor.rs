//! Rotation-drift monitoring.
//!
//! Estimated print rotations are modelled as `a·sin(ωt) + b·cos(ωt) + c`. The
//! frequency comes from a log-spaced grid (each point solved by linear least
//! squares) followed by a golden-section refinement between the best point's
//! neighbours; samples far from the model are flagged.

use std::f64::consts::PI;
use std::path::Path;

use chrono::{DateTime, SecondsFormat};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::parse_timestamp;

pub const MIN_SAMPLES: usize = 8;
pub const DEFAULT_GRID_POINTS: usize = 200;
pub const DEFAULT_TRAILING_WINDOW: usize = 500;
const REFINE_STEPS: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationSample {
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
    /// Degrees.
    pub angle: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinusoidFit {
    /// Degrees, non-negative.
    pub amplitude: f64,
    /// Refined angular frequency, rad/s.
    pub omega: f64,
    /// Grid point with the smallest residual, rad/s.
    pub grid_omega: f64,
    /// Radians in (-pi, pi].
    pub phase: f64,
    /// Degrees.
    pub offset: f64,
    /// Root-mean-square residual, degrees.
    pub residual_sigma: f64,
}

impl SinusoidFit {
    pub fn predict(&self, t: f64) -> f64 {
        let (a, b) = (self.amplitude * self.phase.cos(), self.amplitude * self.phase.sin());
        a * (self.omega * t).sin() + b * (self.omega * t).cos() + self.offset
    }
}

/// `count` log-spaced angular frequencies from `min` to `max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaGrid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl OmegaGrid {
    pub fn points(&self) -> Vec<f64> {
        if self.count <= 1 {
            return vec![self.min];
        }
        let (lo, hi) = (self.min.ln(), self.max.ln());
        (0..self.count)
            .map(|i| (lo + (hi - lo) * i as f64 / (self.count - 1) as f64).exp())
            .collect()
    }

    /// From one period over the whole span up to the Nyquist rate of the
    /// median sampling interval.
    pub fn for_series(series: &[RotationSample]) -> Result<Self> {
        let (duration, median_dt) = span(series)?;
        Ok(Self {
            min: 2.0 * PI / duration,
            max: PI / median_dt,
            count: DEFAULT_GRID_POINTS,
        })
    }
}

fn sorted(series: &[RotationSample]) -> Vec<RotationSample> {
    let mut v = series.to_vec();
    v.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    v
}

fn span(series: &[RotationSample]) -> Result<(f64, f64)> {
    if series.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: MIN_SAMPLES,
            got: series.len(),
        });
    }
    let s = sorted(series);
    let duration = s[s.len() - 1].timestamp - s[0].timestamp;
    let mut dts: Vec<f64> = s.windows(2).map(|w| w[1].timestamp - w[0].timestamp).collect();
    dts.sort_by(f64::total_cmp);
    let median_dt = dts[dts.len() / 2];
    if !(duration > 0.0 && median_dt > 0.0) {
        return Err(Error::DegenerateTimeSpan);
    }
    Ok((duration, median_dt))
}

/// Least-squares `(a, b, c, rss)` at a fixed frequency.
fn solve_at(series: &[RotationSample], omega: f64) -> (f64, f64, f64, f64) {
    let n = series.len();
    let x = DMatrix::from_fn(n, 3, |i, j| {
        let t = series[i].timestamp;
        match j {
            0 => (omega * t).sin(),
            1 => (omega * t).cos(),
            _ => 1.0,
        }
    });
    let y = DVector::from_iterator(n, series.iter().map(|s| s.angle));
    let coef = x
        .clone()
        .svd(true, true)
        .solve(&y, 1e-12)
        .unwrap_or_else(|_| DVector::from_vec(vec![0.0, 0.0, y.mean()]));
    let rss = (&x * &coef - &y).norm_squared();
    (coef[0], coef[1], coef[2], rss)
}

pub fn fit_sinusoid(series: &[RotationSample], grid: &OmegaGrid) -> Result<SinusoidFit> {
    if series.len() < MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_SAMPLES,
            got: series.len(),
        });
    }
    span(series)?;
    if let Some(s) = series.iter().find(|s| !s.angle.is_finite() || !s.timestamp.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite sample {s:?}")));
    }
    let omegas = grid.points();
    if omegas.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(Error::InvalidArgument("frequency grid must be positive".into()));
    }
    let rss: Vec<f64> = omegas.iter().map(|w| solve_at(series, *w).3).collect();
    let best = (0..omegas.len())
        .min_by(|a, b| rss[*a].total_cmp(&rss[*b]).then(a.cmp(b)))
        .expect("non-empty grid");
    let grid_omega = omegas[best];
    // Golden-section search between the neighbouring grid points.
    let (mut lo, mut hi) = (
        omegas[best.saturating_sub(1)],
        omegas[(best + 1).min(omegas.len() - 1)],
    );
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let f = |w: f64| solve_at(series, w).3;
    let (mut c, mut d) = (hi - g * (hi - lo), lo + g * (hi - lo));
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..REFINE_STEPS {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = f(d);
        }
    }
    let mid = (lo + hi) / 2.0;
    let omega = if f(mid) < rss[best] { mid } else { grid_omega };
    let (a, b, offset, rss) = solve_at(series, omega);
    let mut phase = b.atan2(a);
    if phase <= -PI {
        phase = PI;
    }
    Ok(SinusoidFit {
        amplitude: a.hypot(b),
        omega,
        grid_omega,
        phase,
        offset,
        residual_sigma: (rss / series.len() as f64).sqrt(),
    })
}

/// Fit with the default grid for the series.
pub fn fit_sinusoid_auto(series: &[RotationSample]) -> Result<SinusoidFit> {
    fit_sinusoid(series, &OmegaGrid::for_series(series)?)
}

/// Fit on the most recent `window` samples only.
pub fn fit_trailing(series: &[RotationSample], window: usize) -> Result<SinusoidFit> {
    let s = sorted(series);
    let start = s.len().saturating_sub(window.max(MIN_SAMPLES));
    fit_sinusoid_auto(&s[start..])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyFlag {
    pub timestamp: f64,
    pub residual: f64,
    pub threshold: f64,
}

/// Samples whose residual exceeds `k` residual standard deviations.
pub fn detect_anomalies(series: &[RotationSample], fit: &SinusoidFit, k: f64) -> Vec<AnomalyFlag> {
    let threshold = k * fit.residual_sigma;
    series
        .iter()
        .filter_map(|s| {
            let residual = s.angle - fit.predict(s.timestamp);
            (residual.abs() > threshold).then_some(AnomalyFlag {
                timestamp: s.timestamp,
                residual,
                threshold,
            })
        })
        .collect()
}

/// Appends samples and refits on a trailing window, so a regime change such
/// as a stencil replacement ages out of the model.
#[derive(Clone, Debug, Default)]
pub struct RotationMonitor {
    samples: Vec<RotationSample>,
    window: usize,
}

impl RotationMonitor {
    pub fn new(window: usize) -> Self {
        Self {
            samples: Vec::new(),
            window,
        }
    }

    pub fn push(&mut self, s: RotationSample) {
        self.samples.push(s);
    }

    pub fn samples(&self) -> &[RotationSample] {
        &self.samples
    }

    pub fn fit(&self) -> Result<SinusoidFit> {
        fit_trailing(&self.samples, self.window)
    }

    /// Residual check of `s` against the current model.
    pub fn check(&self, s: RotationSample, k: f64) -> Result<Option<AnomalyFlag>> {
        Ok(detect_anomalies(&[s], &self.fit()?, k).pop())
    }
}

pub fn format_instant(t: f64) -> String {
    let secs = t.floor();
    let nanos = ((t - secs) * 1e9).round().min(999_999_999.0) as u32;
    match DateTime::from_timestamp(secs as i64, nanos) {
        Some(d) => d.to_rfc3339_opts(SecondsFormat::AutoSi, true),
        None => t.to_string(),
    }
}

/// Reads `timestamp,rotation_deg` rows; a header row is optional.
pub fn read_series(path: impl AsRef<Path>) -> Result<Vec<RotationSample>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() < 2 {
            return Err(Error::Parse(format!("line {}: expected timestamp,rotation_deg", i + 1)));
        }
        let (t, a) = (rec[0].trim(), rec[1].trim());
        match (parse_timestamp(t), a.parse::<f64>()) {
            (Ok(timestamp), Ok(angle)) => out.push(RotationSample { timestamp, angle }),
            _ if i == 0 => continue,
            _ => return Err(Error::Parse(format!("line {}: invalid sample '{t},{a}'", i + 1))),
        }
    }
    Ok(out)
}

pub fn write_series(series: &[RotationSample], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["timestamp", "rotation_deg"])?;
    for s in series {
        w.write_record([format_instant(s.timestamp), s.angle.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_flags(flags: &[AnomalyFlag], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["timestamp", "residual", "threshold"])?;
    for f in flags {
        w.write_record([format_instant(f.timestamp), f.residual.to_string(), f.threshold.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(n: usize, f: impl Fn(f64) -> f64) -> Vec<RotationSample> {
        (0..n)
            .map(|i| {
                let t = i as f64;
                RotationSample {
                    timestamp: t,
                    angle: f(t),
                }
            })
            .collect()
    }

    #[test]
    fn noiseless_on_grid() {
        let s = series(200, |t| 3.0 * (0.1 * t).sin() + 1.0);
        let grid = OmegaGrid {
            min: 0.05,
            max: 0.2,
            count: 3,
        };
        assert_eq!(grid.points()[1], 0.1f64.ln().exp());
        let fit = fit_sinusoid(&s, &grid).unwrap();
        assert!((fit.grid_omega - 0.1).abs() < 1e-12);
        assert!((fit.amplitude - 3.0).abs() < 1e-6);
        assert!((fit.offset - 1.0).abs() < 1e-6);
        assert!(fit.phase.abs() < 1e-6);
        assert!(fit.residual_sigma < 1e-6);
    }

    #[test]
    fn constant_series() {
        let s = series(50, |_| 2.0);
        let fit = fit_sinusoid_auto(&s).unwrap();
        assert!(fit.amplitude < 1e-9);
        assert!((fit.offset - 2.0).abs() < 1e-9);
        assert!(fit.residual_sigma < 1e-9);
        assert!(detect_anomalies(&s, &fit, 3.0).is_empty());
    }

    #[test]
    fn errors() {
        assert!(matches!(
            fit_sinusoid_auto(&series(5, |t| t)),
            Err(Error::TooFewSamples { .. })
        ));
        let same_time: Vec<RotationSample> = (0..10)
            .map(|i| RotationSample {
                timestamp: 5.0,
                angle: i as f64,
            })
            .collect();
        assert!(matches!(fit_sinusoid_auto(&same_time), Err(Error::DegenerateTimeSpan)));
    }

    #[test]
    fn zero_k_flags_nonzero_residuals() {
        let mut s = series(40, |t| (0.3 * t).sin());
        s[7].angle += 0.5;
        let fit = fit_sinusoid_auto(&s).unwrap();
        let flags = detect_anomalies(&s, &fit, 0.0);
        let nonzero = s.iter().filter(|x| (x.angle - fit.predict(x.timestamp)).abs() > 0.0).count();
        assert_eq!(flags.len(), nonzero);
    }

    #[test]
    fn trailing_window_forgets_old_regime() {
        let mut s = series(300, |t| 5.0 + (0.2 * t).sin());
        for x in s.iter_mut().skip(150) {
            x.angle -= 5.0;
        }
        let fit = fit_trailing(&s, 100).unwrap();
        assert!(fit.offset.abs() < 1e-6);
        assert!((fit.amplitude - 1.0).abs() < 1e-6);
        let mut m = RotationMonitor::new(100);
        s.iter().for_each(|x| m.push(*x));
        assert_eq!(m.fit().unwrap(), fit);
        let spike = RotationSample {
            timestamp: 300.0,
            angle: 4.0,
        };
        assert!(m.check(spike, 3.0).unwrap().is_some());
    }

    #[test]
    fn series_io() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let s = vec![
            RotationSample {
                timestamp: 1_680_000_000.0,
                angle: 0.25,
            },
            RotationSample {
                timestamp: 1_680_000_010.5,
                angle: -1.0 / 3.0,
            },
        ];
        write_series(&s, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("2023-03-28T10:40:00Z,0.25"));
        assert_eq!(read_series(&p).unwrap(), s);
    }
}
