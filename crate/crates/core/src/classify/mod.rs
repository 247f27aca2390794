//! The five classifiers behind a shared train / score / predict contract, and
//! the model file.
//!
//! Scores lie in `[0, 1]` and grow with confidence in the positive class
//! (unacceptable print); `predict` is `score >= threshold`.
//!
//! Model file layout (JSON):
//!
//! ```text
//! { "format_version": 1,
//!   "checksum": "<sha-256 hex of the model text>",
//!   "model": { "kind", "seed", "threshold", "standardizer", "params" } }
//! ```

mod nn;
mod svm;
mod tree;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

pub use crate::synth::Label;
pub use nn::Mlp;
pub use svm::SvmModel;
pub use tree::{Forest, Node, Tree};

use crate::error::{Error, Result};
use crate::features::{FeatureVector, LabeledSample, Standardizer, FEATURE_DIM};
use tree::GrowParams;

pub const FORMAT_VERSION: u32 = 1;

type Row = [f64; FEATURE_DIM];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierKind {
    Svm,
    Knn,
    RandomForest,
    DecisionTree,
    NeuralNet,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 5] = [
        ClassifierKind::Svm,
        ClassifierKind::Knn,
        ClassifierKind::RandomForest,
        ClassifierKind::DecisionTree,
        ClassifierKind::NeuralNet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Svm => "svm",
            ClassifierKind::Knn => "knn",
            ClassifierKind::RandomForest => "random-forest",
            ClassifierKind::DecisionTree => "decision-tree",
            ClassifierKind::NeuralNet => "neural-net",
        }
    }

    fn needs_both_classes(self) -> bool {
        matches!(self, ClassifierKind::Svm | ClassifierKind::NeuralNet)
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown classifier '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmConfig {
    pub c: f64,
    /// RBF width; `None` uses `1 / (24 * variance of the standardized features)`.
    pub gamma: Option<f64>,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            gamma: None,
            tolerance: 1e-3,
            max_iterations: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_split: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_depth: 8,
            min_split: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub trees: usize,
    pub bootstrap: bool,
    /// Features tried per split; `None` uses `round(sqrt(24)) = 5`.
    pub max_features: Option<usize>,
    pub max_depth: usize,
    pub min_split: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            trees: 100,
            bootstrap: true,
            max_features: None,
            max_depth: 8,
            min_split: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuralNetConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub init_range: f64,
}

impl Default for NeuralNetConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            learning_rate: 0.05,
            epochs: 200,
            init_range: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub threshold: f64,
    pub svm: SvmConfig,
    pub knn_k: usize,
    pub tree: TreeConfig,
    pub forest: ForestConfig,
    pub neural_net: NeuralNetConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            svm: SvmConfig::default(),
            knn_k: 5,
            tree: TreeConfig::default(),
            forest: ForestConfig::default(),
            neural_net: NeuralNetConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    /// Standardized training rows in id order with their labels.
    pub points: Vec<Row>,
    pub positive: Vec<bool>,
}

impl KnnModel {
    fn fraction(&self, x: &Row) -> f64 {
        let mut d: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        // Ties go to the lower index, i.e. the lower sample id.
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let k = self.k.clamp(1, d.len());
        d[..k].iter().filter(|(_, i)| self.positive[*i]).count() as f64 / k as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ModelParams {
    Svm(SvmModel),
    Knn(KnnModel),
    DecisionTree(Tree),
    RandomForest(Forest),
    NeuralNet(Mlp),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    #[serde(skip, default = "current_version")]
    pub format_version: u32,
    pub kind: ClassifierKind,
    pub seed: u64,
    pub threshold: f64,
    pub standardizer: Standardizer,
    pub params: ModelParams,
}

fn current_version() -> u32 {
    FORMAT_VERSION
}

/// Samples sorted by id; duplicate ids are rejected.
pub(crate) fn sorted_by_id(samples: &[LabeledSample]) -> Result<Vec<&LabeledSample>> {
    let mut v: Vec<&LabeledSample> = samples.iter().collect();
    v.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = v.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::InvalidArgument(format!("duplicate sample id '{}'", w[0].id)));
    }
    Ok(v)
}

pub fn train(kind: ClassifierKind, samples: &[LabeledSample], cfg: &ClassifierConfig, seed: u64) -> Result<TrainedModel> {
    let rows = sorted_by_id(samples)?;
    let needed = if kind.needs_both_classes() { 2 } else { 1 };
    if rows.len() < needed {
        return Err(Error::TooFewSamples {
            needed,
            got: rows.len(),
        });
    }
    let positive: Vec<bool> = rows.iter().map(|s| s.label.is_positive()).collect();
    let both = positive.iter().any(|p| *p) && positive.iter().any(|p| !*p);
    if kind.needs_both_classes() && !both {
        return Err(Error::SingleClassTrainingSet);
    }
    let standardizer = if rows.len() >= 2 {
        Standardizer::fit(rows.iter().map(|s| &s.features))?
    } else {
        Standardizer {
            mean: [0.0; FEATURE_DIM],
            std: [1.0; FEATURE_DIM],
            constant: [true; FEATURE_DIM],
        }
    };
    let x: Vec<Row> = rows.iter().map(|s| standardizer.transform(&s.features).0).collect();
    let params = match kind {
        ClassifierKind::Svm => {
            let gamma = cfg.svm.gamma.unwrap_or_else(|| svm::scale_gamma(&x));
            ModelParams::Svm(svm::train(
                &x,
                &positive,
                cfg.svm.c,
                gamma,
                cfg.svm.tolerance,
                cfg.svm.max_iterations,
            ))
        }
        ClassifierKind::Knn => ModelParams::Knn(KnnModel {
            k: cfg.knn_k,
            points: x,
            positive,
        }),
        ClassifierKind::DecisionTree => {
            ModelParams::DecisionTree(tree::train_tree(&x, &positive, cfg.tree.max_depth, cfg.tree.min_split))
        }
        ClassifierKind::RandomForest => {
            let f = &cfg.forest;
            let params = GrowParams {
                max_depth: f.max_depth,
                min_split: f.min_split,
                mtry: f
                    .max_features
                    .unwrap_or_else(|| (FEATURE_DIM as f64).sqrt().round() as usize)
                    .clamp(1, FEATURE_DIM),
            };
            ModelParams::RandomForest(tree::train_forest(&x, &positive, f.trees, f.bootstrap, params, seed))
        }
        ClassifierKind::NeuralNet => {
            let n = &cfg.neural_net;
            ModelParams::NeuralNet(nn::train(
                &x,
                &positive,
                n.hidden,
                n.learning_rate,
                n.epochs,
                n.init_range,
                seed,
            ))
        }
    };
    Ok(TrainedModel {
        format_version: FORMAT_VERSION,
        kind,
        seed,
        threshold: cfg.threshold,
        standardizer,
        params,
    })
}

impl TrainedModel {
    pub fn score(&self, fv: &FeatureVector) -> f64 {
        let x = self.standardizer.transform(fv).0;
        match &self.params {
            ModelParams::Svm(m) => nn::sigmoid(m.decision(&x)),
            ModelParams::Knn(m) => m.fraction(&x),
            ModelParams::DecisionTree(t) => t.leaf_value(&x),
            ModelParams::RandomForest(f) => f.vote(&x),
            ModelParams::NeuralNet(m) => m.output(&x),
        }
    }

    pub fn predict(&self, fv: &FeatureVector) -> Label {
        self.predict_at(fv, self.threshold)
    }

    pub fn predict_at(&self, fv: &FeatureVector, threshold: f64) -> Label {
        if self.score(fv) >= threshold {
            Label::Unacceptable
        } else {
            Label::Acceptable
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let body = serde_json::to_string(self)?;
        let envelope = Envelope {
            format_version: FORMAT_VERSION,
            checksum: checksum(&body),
            model: RawValue::from_string(body)?,
        };
        Ok(serde_json::to_string_pretty(&envelope)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let envelope: Envelope =
            serde_json::from_str(text).map_err(|e| Error::CorruptModel(format!("unreadable model file: {e}")))?;
        if envelope.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: envelope.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let body = envelope.model.get();
        if checksum(body) != envelope.checksum {
            return Err(Error::CorruptModel("checksum mismatch".into()));
        }
        serde_json::from_str(body).map_err(|e| Error::CorruptModel(e.to_string()))
    }
}

pub fn predict(model: &TrainedModel, fv: &FeatureVector) -> Label {
    model.predict(fv)
}

pub fn score(model: &TrainedModel, fv: &FeatureVector) -> f64 {
    model.score(fv)
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format_version: u32,
    checksum: String,
    model: Box<RawValue>,
}

fn checksum(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn save_model(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model.to_json()?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    TrainedModel::from_json(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, v: f64, label: Label) -> LabeledSample {
        let mut f = [0.0; FEATURE_DIM];
        for (i, x) in f.iter_mut().enumerate() {
            *x = v + 0.01 * i as f64;
        }
        LabeledSample {
            id: id.into(),
            features: FeatureVector(f),
            label,
            timestamp: None,
        }
    }

    fn blobs() -> Vec<LabeledSample> {
        (0..10)
            .map(|i| sample(&format!("a{i}"), i as f64 * 0.1, Label::Acceptable))
            .chain((0..10).map(|i| sample(&format!("u{i}"), 5.0 + i as f64 * 0.1, Label::Unacceptable)))
            .collect()
    }

    #[test]
    fn kind_names() {
        for k in ClassifierKind::ALL {
            assert_eq!(k.name().parse::<ClassifierKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.name()));
        }
        assert!("forest".parse::<ClassifierKind>().is_err());
    }

    #[test]
    fn knn_fraction() {
        let s = blobs();
        let cfg = ClassifierConfig::default();
        let m = train(ClassifierKind::Knn, &s, &cfg, 0).unwrap();
        assert_eq!(m.score(&s[0].features), 0.0);
        assert_eq!(m.score(&s[15].features), 1.0);
        // Halfway between the blobs with k = 5: the nearest five straddle.
        let mut mixed = blobs();
        mixed[9].label = Label::Unacceptable;
        mixed[8].label = Label::Unacceptable;
        mixed[7].label = Label::Unacceptable;
        let m = train(ClassifierKind::Knn, &mixed, &cfg, 0).unwrap();
        assert!((m.score(&mixed[9].features) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn knn_single_point() {
        let s = vec![sample("p", 1.0, Label::Unacceptable)];
        let cfg = ClassifierConfig {
            knn_k: 1,
            ..Default::default()
        };
        let m = train(ClassifierKind::Knn, &s, &cfg, 0).unwrap();
        assert_eq!(m.predict(&sample("q", 1.05, Label::Acceptable).features), Label::Unacceptable);
    }

    #[test]
    fn svm_midpoint_score() {
        let s = vec![sample("a", 0.0, Label::Acceptable), sample("b", 2.0, Label::Unacceptable)];
        let m = train(ClassifierKind::Svm, &s, &ClassifierConfig::default(), 0).unwrap();
        assert!((m.score(&sample("m", 1.0, Label::Acceptable).features) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn single_class_errors() {
        let s: Vec<LabeledSample> = (0..4).map(|i| sample(&format!("a{i}"), i as f64, Label::Acceptable)).collect();
        let cfg = ClassifierConfig::default();
        for k in [ClassifierKind::Svm, ClassifierKind::NeuralNet] {
            assert!(matches!(train(k, &s, &cfg, 0), Err(Error::SingleClassTrainingSet)));
        }
        assert!(train(ClassifierKind::DecisionTree, &s, &cfg, 0).is_ok());
        assert!(matches!(
            train(ClassifierKind::Knn, &[], &cfg, 0),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let s = vec![sample("a", 0.0, Label::Acceptable), sample("a", 1.0, Label::Unacceptable)];
        assert!(train(ClassifierKind::Knn, &s, &ClassifierConfig::default(), 0).is_err());
    }

    #[test]
    fn file_round_trip_and_tamper() {
        let s = blobs();
        let m = train(ClassifierKind::NeuralNet, &s, &ClassifierConfig::default(), 4).unwrap();
        let text = m.to_json().unwrap();
        let back = TrainedModel::from_json(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), text);

        let bad_sum = text.replacen("\"checksum\": \"", "\"checksum\": \"0", 1);
        assert!(matches!(TrainedModel::from_json(&bad_sum), Err(Error::CorruptModel(_))));
        let bad_version = text.replacen("\"format_version\": 1", "\"format_version\": 2", 1);
        assert!(matches!(
            TrainedModel::from_json(&bad_version),
            Err(Error::VersionMismatch { found: 2, expected: 1 })
        ));
        let edited = text.replacen("\"seed\":4", "\"seed\":5", 1);
        assert_ne!(edited, text);
        assert!(matches!(TrainedModel::from_json(&edited), Err(Error::CorruptModel(_))));
        assert!(matches!(TrainedModel::from_json("{"), Err(Error::CorruptModel(_))));
    }
}
