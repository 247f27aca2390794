//! Unsupervised triage of unlabeled images before labeling.
//!
//! Each image gets a distance to the reference; with `m` the mean distance, an
//! image is potentially unacceptable when `|s - m| > hi·m`, potentially
//! acceptable when `|s - m| < lo·m`, and excluded otherwise.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{align_to_features, AlignConfig, AlignmentResult, ImageFeatures};
use crate::error::{Error, Result};
use crate::filters::{apply_filter, FilterId};
use crate::imgcore::{crop, GrayImage, Roi};
use crate::iqm::{distance, MetricId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    PotentialUnacceptable,
    PotentialAcceptable,
    Excluded,
}

impl Partition {
    pub fn name(self) -> &'static str {
        match self {
            Partition::PotentialUnacceptable => "potential_unacceptable",
            Partition::PotentialAcceptable => "potential_acceptable",
            Partition::Excluded => "excluded",
        }
    }
}

impl std::fmt::Display for Partition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreselectEntry {
    pub id: String,
    pub score: f64,
    pub partition: Partition,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreselectReport {
    pub mean_score: f64,
    pub entries: Vec<PreselectEntry>,
}

impl PreselectReport {
    pub fn count(&self, p: Partition) -> usize {
        self.entries.iter().filter(|e| e.partition == p).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreselectConfig {
    pub metric: MetricId,
    pub filter: FilterId,
    pub hi: f64,
    pub lo: f64,
    pub use_alignment: bool,
    pub align: AlignConfig,
}

impl Default for PreselectConfig {
    fn default() -> Self {
        Self {
            metric: MetricId::Mse,
            filter: FilterId::NoFilter,
            hi: 0.8,
            lo: 0.2,
            use_alignment: true,
            align: AlignConfig::default(),
        }
    }
}

/// Partitions precomputed distance scores.
pub fn partition_scores(scores: &[(String, f64)], hi: f64, lo: f64) -> Result<PreselectReport> {
    if scores.len() < 2 {
        return Err(Error::TooFewImages(scores.len()));
    }
    if !(hi > lo && lo > 0.0) {
        return Err(Error::InvalidArgument(format!("need hi > lo > 0, got hi={hi} lo={lo}")));
    }
    if let Some((id, s)) = scores.iter().find(|(_, s)| !s.is_finite() || *s < 0.0) {
        return Err(Error::InvalidArgument(format!("invalid score {s} for '{id}'")));
    }
    let m = scores.iter().map(|(_, s)| s).sum::<f64>() / scores.len() as f64;
    let entries = scores
        .iter()
        .map(|(id, s)| {
            let dev = (s - m).abs();
            let partition = if m == 0.0 {
                // Nothing differs from the reference at all.
                Partition::PotentialAcceptable
            } else if dev > hi * m {
                Partition::PotentialUnacceptable
            } else if dev < lo * m {
                Partition::PotentialAcceptable
            } else {
                Partition::Excluded
            };
            PreselectEntry {
                id: id.clone(),
                score: *s,
                partition,
            }
        })
        .collect();
    Ok(PreselectReport { mean_score: m, entries })
}

/// Distance of every image to the reference inside `window`, then partition.
pub fn preselect(
    images: &[(String, GrayImage)],
    reference: &GrayImage,
    window: Roi,
    cfg: &PreselectConfig,
    seed: u64,
) -> Result<PreselectReport> {
    if images.len() < 2 {
        return Err(Error::TooFewImages(images.len()));
    }
    let ref_win = crop(&apply_filter(reference, cfg.filter)?, window)?;
    let ref_features = if cfg.use_alignment {
        ImageFeatures::compute(reference, &cfg.align).ok()
    } else {
        None
    };
    let scores = images
        .par_iter()
        .map(|(id, img)| {
            let aligned = match &ref_features {
                Some(rf) => align_to_features(img, reference, rf, &cfg.align, seed),
                None => AlignmentResult::unaligned(img),
            };
            let win = crop(&apply_filter(&aligned.warped, cfg.filter)?, window)?;
            Ok((id.clone(), distance(&win, &ref_win, cfg.metric)?))
        })
        .collect::<Result<Vec<_>>>()?;
    partition_scores(&scores, cfg.hi, cfg.lo)
}

pub fn write_preselect(report: &PreselectReport, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "score", "partition"])?;
    for e in &report.entries {
        w.write_record([e.id.clone(), e.score.to_string(), e.partition.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(v: &[f64]) -> Vec<(String, f64)> {
        v.iter().enumerate().map(|(i, s)| (format!("s{i}"), *s)).collect()
    }

    #[test]
    fn outliers_and_inliers() {
        let mut v = vec![1.0; 100];
        v.extend([5.0, 5.0]);
        let r = partition_scores(&scores(&v), 0.8, 0.2).unwrap();
        assert!((r.mean_score - 110.0 / 102.0).abs() < 1e-12);
        assert_eq!(r.count(Partition::PotentialUnacceptable), 2);
        assert_eq!(r.count(Partition::PotentialAcceptable), 100);
        assert_eq!(r.entries[101].partition, Partition::PotentialUnacceptable);
    }

    #[test]
    fn middle_band_is_excluded() {
        // Mean 1: 1.5 deviates by 0.5, between lo and hi.
        let r = partition_scores(&scores(&[0.5, 1.5, 1.0, 1.0]), 0.8, 0.2).unwrap();
        assert_eq!(r.entries[1].partition, Partition::Excluded);
        assert_eq!(r.entries[0].partition, Partition::Excluded);
        assert_eq!(r.entries[2].partition, Partition::PotentialAcceptable);
    }

    #[test]
    fn zero_mean_all_acceptable() {
        let r = partition_scores(&scores(&[0.0, 0.0, 0.0]), 0.8, 0.2).unwrap();
        assert_eq!(r.count(Partition::PotentialAcceptable), 3);
    }

    #[test]
    fn scale_invariant() {
        let v = [0.3, 1.0, 2.2, 0.9, 0.05, 1.1];
        let a = partition_scores(&scores(&v), 0.8, 0.2).unwrap();
        let scaled: Vec<f64> = v.iter().map(|s| s * 7.5).collect();
        let b = partition_scores(&scores(&scaled), 0.8, 0.2).unwrap();
        let pa: Vec<Partition> = a.entries.iter().map(|e| e.partition).collect();
        let pb: Vec<Partition> = b.entries.iter().map(|e| e.partition).collect();
        assert_eq!(pa, pb);
    }

    #[test]
    fn argument_errors() {
        assert!(matches!(partition_scores(&scores(&[1.0]), 0.8, 0.2), Err(Error::TooFewImages(1))));
        assert!(partition_scores(&scores(&[1.0, 2.0]), 0.2, 0.8).is_err());
        assert!(partition_scores(&scores(&[1.0, 2.0]), 0.8, 0.0).is_err());
        let img = GrayImage::filled(40, 40, 0.5);
        let one = vec![("a".to_string(), img.clone())];
        assert!(matches!(
            preselect(&one, &img, Roi::new(0, 0, 20, 20), &PreselectConfig::default(), 0),
            Err(Error::TooFewImages(1))
        ));
    }

    #[test]
    fn identical_images_all_acceptable() {
        let img = GrayImage::from_fn(48, 48, |x, y| ((x / 6 + y / 6) % 2) as f64 * 0.8 + 0.1);
        let imgs: Vec<(String, GrayImage)> = (0..3).map(|i| (format!("i{i}"), img.clone())).collect();
        let cfg = PreselectConfig {
            use_alignment: false,
            ..Default::default()
        };
        let r = preselect(&imgs, &img, Roi::new(8, 8, 32, 32), &cfg, 0).unwrap();
        assert_eq!(r.mean_score, 0.0);
        assert_eq!(r.count(Partition::PotentialAcceptable), 3);
    }
}
