//! Declarative run configuration, read from TOML or JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::FeatureMode;
use crate::error::{Error, Result};
use crate::labelmap::LabelMapping;
use crate::losses::{ClampRange, LossKind, LossSpec, DEFAULT_TAU};
use crate::training::TrainConfig;

/// Label layout of a corpus: categorical nodes or a graded score range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelConfig {
    /// Ordered categories, lowest similarity first. Absent for graded corpora.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
    /// Score range of a graded corpus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 2]>,
    #[serde(default)]
    pub start: f64,
    /// Node spacing `d`.
    #[serde(default = "one")]
    pub interval: f64,
}

fn one() -> f64 {
    1.0
}

impl LabelConfig {
    pub fn nli() -> Self {
        LabelConfig {
            categories: Some(LabelMapping::nli().categories().to_vec()),
            range: None,
            start: 0.0,
            interval: 1.0,
        }
    }

    pub fn graded(low: f64, high: f64) -> Self {
        LabelConfig {
            categories: None,
            range: Some([low, high]),
            start: 0.0,
            interval: 1.0,
        }
    }

    pub fn resolve(&self) -> Result<LabelSpace> {
        match (&self.categories, self.range) {
            (Some(cats), None) => Ok(LabelSpace::Categorical(
                LabelMapping::build(cats, self.start, self.interval)
                    .map_err(|e| Error::InvalidConfig(e.to_string()))?,
            )),
            (None, Some([low, high])) => {
                if !(low.is_finite() && high.is_finite() && low < high) {
                    return Err(Error::InvalidConfig(format!("bad score range [{low}, {high}]")));
                }
                if !(self.interval.is_finite() && self.interval > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "interval must be positive, got {}",
                        self.interval
                    )));
                }
                Ok(LabelSpace::Graded {
                    low,
                    high,
                    interval: self.interval,
                })
            }
            (Some(_), Some(_)) => Err(Error::InvalidConfig(
                "labels take either `categories` or `range`, not both".into(),
            )),
            (None, None) => Err(Error::InvalidConfig("labels need `categories` or `range`".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSpace {
    Categorical(LabelMapping),
    Graded { low: f64, high: f64, interval: f64 },
}

impl LabelSpace {
    pub fn interval(&self) -> f64 {
        match self {
            LabelSpace::Categorical(m) => m.interval(),
            LabelSpace::Graded { interval, .. } => *interval,
        }
    }

    pub fn clamp_range(&self) -> ClampRange {
        match self {
            LabelSpace::Categorical(m) => ClampRange {
                lo: m.lowest(),
                hi: m.highest(),
            },
            LabelSpace::Graded { low, high, .. } => ClampRange { lo: *low, hi: *high },
        }
    }

    pub fn mapping(&self) -> Option<&LabelMapping> {
        match self {
            LabelSpace::Categorical(m) => Some(m),
            LabelSpace::Graded { .. } => None,
        }
    }

    pub fn midpoint(&self) -> f64 {
        let r = self.clamp_range();
        (r.lo + r.hi) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: PathBuf,
    pub dev: PathBuf,
    /// Corpus for a head-only first stage; its presence makes the run
    /// two-stage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_only_train: Option<PathBuf>,
    /// Extra sets scored after training.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub test: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    #[serde(default = "one")]
    pub k: f64,
    #[serde(default)]
    pub x0: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Minimum score for a pair to count as a positive (InfoNCE only).
    #[serde(default = "default_threshold")]
    pub positive_threshold: f64,
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

fn default_threshold() -> f64 {
    crate::data::POSITIVE_THRESHOLD
}

impl LossConfig {
    pub fn spec(&self, d: f64) -> Result<LossSpec> {
        let (k, x0) = match self.kind {
            LossKind::TranslatedRelu | LossKind::SmoothK2 => (self.k, self.x0),
            _ => (1.0, 0.0),
        };
        LossSpec::new(self.kind, k, x0, d, self.tau).map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub mode: FeatureMode,
}

fn default_dim() -> usize {
    32
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: default_dim(),
            mode: FeatureMode::default(),
        }
    }
}

fn default_head_only_train() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.1,
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub labels: LabelConfig,
    #[serde(default = "LabelConfig::nli")]
    pub head_only_labels: LabelConfig,
    pub loss: LossConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_head_only_train")]
    pub head_only_train: TrainConfig,
}

impl RunConfig {
    /// Parse from `.json` or (anything else) TOML, then validate.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
        };
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Relative data paths are taken relative to the config file.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.train);
        fix(&mut self.data.dev);
        if let Some(p) = &mut self.data.head_only_train {
            fix(p);
        }
        self.data.test.iter_mut().for_each(fix);
        if let Some(p) = &mut self.out_dir {
            fix(p);
        }
    }

    pub fn is_two_stage(&self) -> bool {
        self.data.head_only_train.is_some()
    }

    pub fn label_space(&self) -> Result<LabelSpace> {
        self.labels.resolve()
    }

    pub fn head_only_label_space(&self) -> Result<LabelSpace> {
        self.head_only_labels.resolve()
    }

    pub fn loss_spec(&self) -> Result<LossSpec> {
        self.loss.spec(self.label_space()?.interval())
    }

    /// Everything checkable without touching the data files.
    pub fn validate(&self) -> Result<()> {
        let labels = self.label_space()?;
        let spec = self.loss.spec(labels.interval())?;
        self.train.validate().map_err(as_config)?;
        if self.model.dim == 0 {
            return Err(Error::InvalidConfig("model.dim must be positive".into()));
        }
        if spec.kind() == LossKind::CrossEntropy && labels.mapping().is_none() {
            return Err(Error::InvalidConfig("cross_entropy needs categorical labels".into()));
        }
        if self.is_two_stage() {
            if !spec.kind().is_regression() {
                return Err(Error::InvalidConfig(format!(
                    "a head-only first stage needs a regression loss, got {}",
                    spec.kind()
                )));
            }
            let stage1 = self.head_only_label_space()?;
            self.loss.spec(stage1.interval())?;
            self.head_only_train.validate().map_err(as_config)?;
            if self.head_only_train.max_tokens != self.train.max_tokens {
                return Err(Error::InvalidConfig("both stages must share max_tokens".into()));
            }
        }
        Ok(())
    }

    /// Seed both stages from one value.
    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.head_only_train.seed = seed;
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::InvalidConfig(_) => e,
        other => Error::InvalidConfig(other.to_string()),
    }
}

/// Tuned `(loss, k, x0)` defaults per encoder family.
pub fn preset(name: &str) -> Option<(LossKind, f64, f64)> {
    match name {
        "bert-translated-relu" => Some((LossKind::TranslatedRelu, 2.5, 0.25)),
        "bert-smooth-k2" => Some((LossKind::SmoothK2, 2.0, 0.25)),
        "roberta-translated-relu" => Some((LossKind::TranslatedRelu, 1.0, 0.25)),
        "roberta-smooth-k2" => Some((LossKind::SmoothK2, 3.0, 0.25)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[data]
train = "train.tsv"
dev = "dev.tsv"

[labels]
categories = ["irrelevant", "slightly relevant", "moderately relevant", "highly relevant"]

[loss]
kind = "smooth_k2"
k = 2.0
x0 = 0.25
"#;

    #[test]
    fn parses_minimal_config() {
        let cfg = RunConfig::from_toml_str(BASE).unwrap();
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.train.epochs, 1);
        assert_eq!(cfg.train.max_tokens, 256);
        assert!(cfg.train.clamp_predictions);
        assert_eq!(cfg.head_only_train.learning_rate, 0.1);
        assert_eq!(cfg.model.mode, FeatureMode::UvAbsDiff);
        let spec = cfg.loss_spec().unwrap();
        assert_eq!(
            (spec.kind(), spec.k(), spec.x0(), spec.d()),
            (LossKind::SmoothK2, 2.0, 0.25, 1.0)
        );
        assert!(!cfg.is_two_stage());
    }

    #[test]
    fn rejects_x0_beyond_half_interval() {
        let bad = BASE.replace("x0 = 0.25", "x0 = 0.6");
        assert!(matches!(RunConfig::from_toml_str(&bad), Err(Error::InvalidConfig(_))));
        let half = BASE.replace("x0 = 0.25", "x0 = 0.3").replace("[loss]", "[loss]\n");
        let with_interval = half.replace("categories = [", "interval = 0.5\ncategories = [");
        assert!(RunConfig::from_toml_str(&with_interval).is_err());
    }

    #[test]
    fn rejects_unknown_keys() {
        let bad = BASE.replace("k = 2.0", "k = 2.0\nslope = 3");
        assert!(RunConfig::from_toml_str(&bad).is_err());
        let bad = format!("{BASE}\n[train]\nbatchsize = 3\n");
        assert!(RunConfig::from_toml_str(&bad).is_err());
    }

    #[test]
    fn label_config_variants() {
        assert!(LabelConfig::graded(0.0, 5.0).resolve().is_ok());
        assert!(LabelConfig::graded(5.0, 0.0).resolve().is_err());
        let both = LabelConfig {
            range: Some([0.0, 1.0]),
            ..LabelConfig::nli()
        };
        assert!(both.resolve().is_err());
        let space = LabelConfig::nli().resolve().unwrap();
        assert_eq!(space.clamp_range(), ClampRange { lo: 0.0, hi: 2.0 });
        assert_eq!(space.midpoint(), 1.0);
    }

    #[test]
    fn cross_entropy_needs_categories() {
        let cfg = BASE
            .replace("kind = \"smooth_k2\"", "kind = \"cross_entropy\"")
            .replace(
                "categories = [\"irrelevant\", \"slightly relevant\", \"moderately relevant\", \"highly relevant\"]",
                "range = [0.0, 5.0]",
            );
        assert!(RunConfig::from_toml_str(&cfg).is_err());
    }

    #[test]
    fn presets_match_table() {
        assert_eq!(preset("bert-smooth-k2"), Some((LossKind::SmoothK2, 2.0, 0.25)));
        assert_eq!(preset("roberta-smooth-k2"), Some((LossKind::SmoothK2, 3.0, 0.25)));
        assert_eq!(
            preset("bert-translated-relu"),
            Some((LossKind::TranslatedRelu, 2.5, 0.25))
        );
        assert_eq!(
            preset("roberta-translated-relu"),
            Some((LossKind::TranslatedRelu, 1.0, 0.25))
        );
        assert_eq!(preset("gpt"), None);
    }
}
