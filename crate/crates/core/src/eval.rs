//! Leave-one-out evaluation, confusion metrics, ROC and AUC.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{sorted_by_id, train, ClassifierConfig, ClassifierKind, Label, TrainedModel};
use crate::error::{Error, Result};
use crate::features::LabeledSample;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn new(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, actual: Label, predicted: Label) {
        match (actual.is_positive(), predicted.is_positive()) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fn_ += 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub fpr: f64,
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64> {
    if c.total() == 0 {
        return Err(Error::EmptyCounts);
    }
    Ok((c.tp + c.tn) as f64 / c.total() as f64)
}

pub fn compute_metrics(c: &ConfusionCounts) -> Result<Metrics> {
    let accuracy = accuracy(c)?;
    let pos = c.tp + c.fn_;
    let neg = c.fp + c.tn;
    if pos == 0 {
        return Err(Error::UndefinedRate("sensitivity"));
    }
    if neg == 0 {
        return Err(Error::UndefinedRate("specificity"));
    }
    Ok(Metrics {
        accuracy,
        sensitivity: c.tp as f64 / pos as f64,
        specificity: c.tn as f64 / neg as f64,
        fpr: c.fp as f64 / neg as f64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores at or above this are predicted positive; infinite for the
    /// all-negative corner.
    pub threshold: f64,
}

/// ROC points for `(score, is_positive)` pairs, one per distinct score plus
/// the `(0, 0)` corner, ordered by fpr then tpr.
pub fn roc_curve(scored: &[(f64, bool)]) -> Result<Vec<RocPoint>> {
    let pos = scored.iter().filter(|s| s.1).count();
    let neg = scored.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClassDataset);
    }
    let mut sorted: Vec<(f64, bool)> = scored.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < sorted.len() {
        let t = sorted[k].0;
        while k < sorted.len() && sorted[k].0 == t {
            if sorted[k].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        out.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: t,
        });
    }
    out.sort_by(|a, b| a.fpr.total_cmp(&b.fpr).then(a.tpr.total_cmp(&b.tpr)));
    Ok(out)
}

/// Trapezoidal area under an ROC curve.
pub fn auc(roc: &[RocPoint]) -> f64 {
    roc.windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub id: String,
    pub label: Label,
    pub score: f64,
    pub predicted: Label,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: ClassifierKind,
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub fpr: f64,
    pub auc: f64,
    pub roc: Vec<RocPoint>,
    pub per_sample: Vec<SampleResult>,
}

impl EvalReport {
    /// Assembles a report from held-out scores.
    pub fn from_results(kind: ClassifierKind, threshold: f64, per_sample: Vec<SampleResult>) -> Result<Self> {
        let mut counts = ConfusionCounts::default();
        for r in &per_sample {
            counts.add(r.label, r.predicted);
        }
        let m = compute_metrics(&counts)?;
        let scored: Vec<(f64, bool)> = per_sample.iter().map(|r| (r.score, r.label.is_positive())).collect();
        let roc = roc_curve(&scored)?;
        Ok(Self {
            kind,
            threshold,
            counts,
            accuracy: m.accuracy,
            sensitivity: m.sensitivity,
            specificity: m.specificity,
            fpr: m.fpr,
            auc: auc(&roc),
            roc,
            per_sample,
        })
    }

    /// One-line machine-readable summary.
    pub fn summary_line(&self) -> String {
        format!(
            "kind={} n={} tp={} fp={} tn={} fn={} accuracy={:.4} sensitivity={:.4} specificity={:.4} fpr={:.4} auc={:.4}",
            self.kind,
            self.counts.total(),
            self.counts.tp,
            self.counts.fp,
            self.counts.tn,
            self.counts.fn_,
            self.accuracy,
            self.sensitivity,
            self.specificity,
            self.fpr,
            self.auc
        )
    }
}

fn check_dataset(samples: &[&LabeledSample]) -> Result<()> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let pos = samples.iter().filter(|s| s.label.is_positive()).count();
    if pos == 0 || pos == samples.len() {
        return Err(Error::SingleClassDataset);
    }
    Ok(())
}

/// The model of fold `held_out` (an index into the id-sorted samples): trained
/// on every other sample.
pub fn fold_model(
    samples: &[LabeledSample],
    kind: ClassifierKind,
    cfg: &ClassifierConfig,
    seed: u64,
    held_out: usize,
) -> Result<TrainedModel> {
    let sorted = sorted_by_id(samples)?;
    let train_set: Vec<LabeledSample> = sorted
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != held_out)
        .map(|(_, s)| (*s).clone())
        .collect();
    train(kind, &train_set, cfg, seed)
}

pub fn loocv(samples: &[LabeledSample], kind: ClassifierKind, cfg: &ClassifierConfig, seed: u64) -> Result<EvalReport> {
    let sorted = sorted_by_id(samples)?;
    check_dataset(&sorted)?;
    let per_sample = (0..sorted.len())
        .into_par_iter()
        .map(|i| {
            let model = fold_model(samples, kind, cfg, seed, i)?;
            let s = sorted[i];
            let score = model.score(&s.features);
            Ok(SampleResult {
                id: s.id.clone(),
                label: s.label,
                score,
                predicted: if score >= cfg.threshold {
                    Label::Unacceptable
                } else {
                    Label::Acceptable
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_results(kind, cfg.threshold, per_sample)
}

#[derive(Serialize)]
struct Summary<'a> {
    kind: ClassifierKind,
    samples: usize,
    threshold: f64,
    #[serde(flatten)]
    counts: &'a ConfusionCounts,
    accuracy: f64,
    sensitivity: f64,
    specificity: f64,
    fpr: f64,
    auc: f64,
}

pub fn write_summary(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let s = Summary {
        kind: report.kind,
        samples: report.counts.total(),
        threshold: report.threshold,
        counts: &report.counts,
        accuracy: report.accuracy,
        sensitivity: report.sensitivity,
        specificity: report.specificity,
        fpr: report.fpr,
        auc: report.auc,
    };
    std::fs::write(path, serde_json::to_string_pretty(&s)? + "\n")?;
    Ok(())
}

pub fn write_per_sample(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "label", "score", "predicted"])?;
    for r in &report.per_sample {
        w.write_record([r.id.clone(), r.label.to_string(), r.score.to_string(), r.predicted.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_roc(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["fpr", "tpr", "threshold"])?;
    for p in &report.roc {
        w.write_record([p.fpr.to_string(), p.tpr.to_string(), p.threshold.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn known_confusion_counts() {
        let m = compute_metrics(&ConfusionCounts::new(61, 4, 79, 22)).unwrap();
        assert!(close(m.accuracy, 0.8434, 1e-4));
        assert!(close(m.sensitivity, 0.7349, 1e-4));
        assert!(close(m.fpr, 0.0482, 1e-4));
        let m = compute_metrics(&ConfusionCounts::new(28, 1, 82, 55)).unwrap();
        assert!(close(m.accuracy, 0.6627, 1e-4));
        assert!(close(m.sensitivity, 0.3373, 1e-4));
        assert!(close(m.fpr, 0.0120, 1e-4));
        let m = compute_metrics(&ConfusionCounts::new(70, 8, 75, 13)).unwrap();
        assert!(close(m.accuracy, 0.8735, 1e-4));
    }

    #[test]
    fn metric_errors() {
        assert!(matches!(compute_metrics(&ConfusionCounts::default()), Err(Error::EmptyCounts)));
        assert!(matches!(
            compute_metrics(&ConfusionCounts::new(0, 1, 1, 0)),
            Err(Error::UndefinedRate("sensitivity"))
        ));
        assert!(matches!(
            compute_metrics(&ConfusionCounts::new(1, 0, 0, 1)),
            Err(Error::UndefinedRate("specificity"))
        ));
    }

    #[test]
    fn roc_perfect_and_flat() {
        let roc = roc_curve(&[(0.9, true), (0.1, false)]).unwrap();
        assert!(roc.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        assert_eq!(auc(&roc), 1.0);
        let flat = roc_curve(&[(0.5, true), (0.5, false), (0.5, true)]).unwrap();
        assert_eq!(flat.len(), 2);
        assert_eq!(auc(&flat), 0.5);
        let first = flat[0];
        let last = flat[flat.len() - 1];
        assert_eq!((first.fpr, first.tpr, last.fpr, last.tpr), (0.0, 0.0, 1.0, 1.0));
        assert!(matches!(roc_curve(&[(0.3, true)]), Err(Error::SingleClassDataset)));
    }

    #[test]
    fn roc_is_monotone() {
        let s: Vec<(f64, bool)> = (0..40).map(|i| (((i * 17) % 13) as f64 / 13.0, i % 3 == 0)).collect();
        let roc = roc_curve(&s).unwrap();
        for w in roc.windows(2) {
            assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
        }
    }
}
