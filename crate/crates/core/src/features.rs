//! The 24-dimensional filter × metric comparison vector and its
//! standardization.
//!
//! Entry `3·f + m` holds metric `m` (MSE, NRMSE, SSIM) between the filtered,
//! windowed test image and the identically processed reference, for filter `f`
//! in [`FilterId::ALL`] order.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{align_to_features, AlignConfig, AlignmentResult, ImageFeatures};
use crate::error::{Error, Result};
use crate::filters::{apply_filter, FilterId};
use crate::imgcore::{crop, load_gray, GrayImage, GrayMode, Roi};
use crate::iqm::{compare, MetricId};
use crate::synth::{read_corpus_info, read_manifest, Label, MANIFEST_FILE};

pub const FEATURE_DIM: usize = 24;

/// Standard deviations at or below this are treated as zero.
const ZERO_STD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    pub fn index(filter: FilterId, metric: MetricId) -> usize {
        3 * filter.index() + metric.index()
    }

    pub fn get(&self, filter: FilterId, metric: MetricId) -> f64 {
        self.0[Self::index(filter, metric)]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        let arr: [f64; FEATURE_DIM] = v.try_into().map_err(|_| {
            Error::InvalidArgument(format!("feature vector needs {FEATURE_DIM} values, got {}", v.len()))
        })?;
        if arr.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("feature vector holds a non-finite value".into()));
        }
        Ok(Self(arr))
    }

    /// Column names `<filter>-<metric>` in canonical order.
    pub fn column_names() -> Vec<String> {
        FilterId::ALL
            .iter()
            .flat_map(|f| MetricId::ALL.iter().map(move |m| format!("{}-{}", f.name(), m.name())))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub id: String,
    pub features: FeatureVector,
    pub label: Label,
    /// RFC 3339 capture time, when known.
    pub timestamp: Option<String>,
}

/// Per-dimension mean and sample standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; FEATURE_DIM],
    pub std: [f64; FEATURE_DIM],
    /// Zero-variance dimensions, passed through unscaled.
    pub constant: [bool; FEATURE_DIM],
}

impl Standardizer {
    pub fn fit<'a>(samples: impl IntoIterator<Item = &'a FeatureVector>) -> Result<Self> {
        let rows: Vec<&FeatureVector> = samples.into_iter().collect();
        let n = rows.len();
        if n < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: n });
        }
        let mut mean = [0.0; FEATURE_DIM];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r.0) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut std = [0.0; FEATURE_DIM];
        for r in &rows {
            for d in 0..FEATURE_DIM {
                std[d] += (r.0[d] - mean[d]).powi(2);
            }
        }
        let mut constant = [false; FEATURE_DIM];
        for d in 0..FEATURE_DIM {
            std[d] = (std[d] / (n - 1) as f64).sqrt();
            constant[d] = std[d] <= ZERO_STD;
        }
        Ok(Self { mean, std, constant })
    }

    pub fn transform(&self, fv: &FeatureVector) -> FeatureVector {
        let mut out = fv.0;
        for d in 0..FEATURE_DIM {
            if !self.constant[d] {
                out[d] = (fv.0[d] - self.mean[d]) / self.std[d];
            }
        }
        FeatureVector(out)
    }
}

pub fn fit_standardizer(samples: &[FeatureVector]) -> Result<Standardizer> {
    Standardizer::fit(samples)
}

pub fn standardize(s: &Standardizer, fv: &FeatureVector) -> FeatureVector {
    s.transform(fv)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub align: AlignConfig,
    pub use_alignment: bool,
    /// Channel reduction for color inputs.
    pub gray_mode: GrayMode,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            align: AlignConfig::default(),
            use_alignment: true,
            gray_mode: GrayMode::default(),
        }
    }
}

/// The reference image processed once: keypoints for alignment and the
/// windowed output of every filter.
#[derive(Clone, Debug)]
pub struct ReferenceBank {
    reference: GrayImage,
    window: Roi,
    filtered: Vec<GrayImage>,
    features: Option<ImageFeatures>,
}

impl ReferenceBank {
    pub fn new(reference: GrayImage, window: Roi, cfg: &ExtractConfig) -> Result<Self> {
        let (filtered, features) = rayon::join(
            || {
                FilterId::ALL
                    .par_iter()
                    .map(|f| crop(&apply_filter(&reference, *f)?, window))
                    .collect::<Result<Vec<_>>>()
            },
            || {
                cfg.use_alignment
                    .then(|| ImageFeatures::compute(&reference, &cfg.align).ok())
                    .flatten()
            },
        );
        let filtered = filtered?;
        Ok(Self {
            reference,
            window,
            filtered,
            features,
        })
    }

    pub fn reference(&self) -> &GrayImage {
        &self.reference
    }

    pub fn window(&self) -> Roi {
        self.window
    }

    /// Registers `test` (when alignment is enabled) and compares it with the
    /// reference under every filter and metric.
    pub fn extract(&self, test: &GrayImage, cfg: &ExtractConfig, seed: u64) -> Result<(FeatureVector, AlignmentResult)> {
        let alignment = match (&self.features, cfg.use_alignment) {
            (Some(rf), true) => align_to_features(test, &self.reference, rf, &cfg.align, seed),
            _ => AlignmentResult::unaligned(test),
        };
        let per_filter = FilterId::ALL
            .par_iter()
            .zip(self.filtered.par_iter())
            .map(|(f, reference)| {
                let test_win = crop(&apply_filter(&alignment.warped, *f)?, self.window)?;
                MetricId::ALL
                    .iter()
                    .map(|m| compare(&test_win, reference, *m))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((FeatureVector::from_slice(&per_filter.concat())?, alignment))
    }
}

pub fn extract_features(
    test: &GrayImage,
    reference: &GrayImage,
    window: Roi,
    align_cfg: &AlignConfig,
    use_alignment: bool,
    seed: u64,
) -> Result<(FeatureVector, AlignmentResult)> {
    let cfg = ExtractConfig {
        align: align_cfg.clone(),
        use_alignment,
        ..ExtractConfig::default()
    };
    ReferenceBank::new(reference.clone(), window, &cfg)?.extract(test, &cfg, seed)
}

/// Feature rows for every image of a generated corpus, sorted by id. `window`
/// overrides the corpus default.
pub fn extract_corpus(
    dir: impl AsRef<Path>,
    window: Option<Roi>,
    cfg: &ExtractConfig,
    seed: u64,
) -> Result<Vec<(LabeledSample, AlignmentResult)>> {
    let dir = dir.as_ref();
    let info = read_corpus_info(dir)?;
    let entries = read_manifest(dir.join(MANIFEST_FILE))?;
    let reference = load_gray(dir.join(&info.reference), cfg.gray_mode)?;
    let bank = ReferenceBank::new(reference, window.unwrap_or(info.window), cfg)?;
    let mut rows = entries
        .par_iter()
        .map(|e| {
            let img = load_gray(dir.join(&e.path), cfg.gray_mode)?;
            let (features, alignment) = bank.extract(&img, cfg, seed)?;
            Ok((
                LabeledSample {
                    id: e.id.clone(),
                    features,
                    label: e.label,
                    timestamp: Some(e.timestamp.clone()),
                },
                alignment,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.0.id.cmp(&b.0.id));
    Ok(rows)
}

pub fn write_feature_table(samples: &[LabeledSample], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "label".to_string(), "timestamp".to_string()];
    header.extend(FeatureVector::column_names());
    w.write_record(&header)?;
    for s in samples {
        let mut rec = vec![
            s.id.clone(),
            s.label.to_string(),
            s.timestamp.clone().unwrap_or_default(),
        ];
        rec.extend(s.features.0.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_feature_table(path: impl AsRef<Path>) -> Result<Vec<LabeledSample>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_reader(fs::File::open(path)?);
    let expected: Vec<String> = ["id", "label", "timestamp"]
        .iter()
        .map(|s| s.to_string())
        .chain(FeatureVector::column_names())
        .collect();
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != expected {
        return Err(Error::Parse(format!("unexpected feature table header in {}", path.display())));
    }
    let mut out: Vec<LabeledSample> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let values = rec
            .iter()
            .skip(3)
            .map(|v| v.parse::<f64>().map_err(|_| Error::Parse(format!("invalid number '{v}'"))))
            .collect::<Result<Vec<f64>>>()?;
        let ts = &rec[2];
        out.push(LabeledSample {
            id: rec[0].to_string(),
            label: rec[1].parse()?,
            timestamp: (!ts.is_empty()).then(|| ts.to_string()),
            features: FeatureVector::from_slice(&values)?,
        });
    }
    let mut ids: Vec<&str> = out.iter().map(|s| s.id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Parse(format!("duplicate sample id '{}'", w[0])));
    }
    Ok(out)
}
