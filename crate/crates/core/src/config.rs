//! Experiment configuration: a versioned JSON document whose relative paths
//! resolve against the directory of the file that names them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::NoiseSpec;
use crate::augment::HttpConfig;
use crate::augment::AugmentationTargets;
use crate::error::{Result, TlaError};
use crate::io::read_file;
use crate::models::train::TrainConfig;
use crate::models::word2vec::Word2VecConfig;
use crate::models::{ClassifierConfig, ModelKind};
use crate::text::Language;
use crate::wisdomnet::{validate_threshold, DEFAULT_THRESHOLD};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must equal [`SCHEMA_VERSION`].
    pub schema_version: u32,
    pub model: ModelKind,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    /// `vocab_size` and `seed` are filled in from the vocabulary and run seed.
    pub classifier: ClassifierConfig,
    /// Optimizer, schedule and the reconstruction weight λ (`lambda`).
    pub optimizer: TrainConfig,
    /// Rejection threshold θ of the softmax head.
    pub theta: f64,
    pub head: HeadConfig,
    pub word2vec: Word2VecConfig,
    pub augmentation: AugmentationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: 0,
            model: ModelKind::TlaNet,
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            classifier: ClassifierConfig::default(),
            optimizer: TrainConfig::default(),
            theta: DEFAULT_THRESHOLD,
            head: HeadConfig::default(),
            word2vec: Word2VecConfig::default(),
            augmentation: AugmentationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BuiltinCorpus {
    /// The bundled 60-example marker corpus.
    Markers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub language: Language,
    /// TRAC-2 style CSV; exclusive with `builtin`.
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub builtin: Option<BuiltinCorpus>,
    pub max_vocab: usize,
    pub min_freq: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            language: Language::English,
            train: None,
            test: None,
            builtin: None,
            max_vocab: 30_000,
            min_freq: 1,
        }
    }
}

/// Training of the rejecting softmax head on frozen features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    /// When false, sequence models reject on their own softmax output.
    pub enabled: bool,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Extra epochs that repeat misclassified samples; 0 disables.
    pub refine_epochs: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            enabled: true,
            epochs: 300,
            learning_rate: 0.5,
            refine_epochs: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TranslatorKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitPaths {
    pub train: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    /// Raw corpora per language.
    pub raw: BTreeMap<Language, SplitPaths>,
    /// Generate raw corpora with the reference class counts from this seed
    /// instead of reading `raw`.
    pub fixture_seed: Option<u64>,
    pub translator: TranslatorKind,
    pub http: HttpConfig,
    pub noise: NoiseSpec,
    /// Samples to add per language and class; the reference targets when unset.
    pub targets: Option<AugmentationTargets>,
    pub semi_noisy: bool,
    pub fully_translated: bool,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            raw: BTreeMap::new(),
            fixture_seed: None,
            translator: TranslatorKind::Mock,
            http: HttpConfig::default(),
            noise: NoiseSpec::default(),
            targets: None,
            semi_noisy: true,
            fully_translated: true,
        }
    }
}

impl AugmentationConfig {
    pub fn targets(&self) -> AugmentationTargets {
        self.targets.clone().unwrap_or_else(AugmentationTargets::reference)
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub theta: Option<f64>,
    pub output_dir: Option<PathBuf>,
}

fn config_err(field: &str, msg: impl std::fmt::Display) -> TlaError {
    TlaError::Config(format!("{field}: {msg}"))
}

fn require_file(field: &str, path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(config_err(field, format!("file not found: {}", path.display())))
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    /// Parses JSON without touching the filesystem.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| TlaError::Config(format!("invalid config: {e}")))
    }

    /// Reads, resolves relative paths against the file's directory, applies
    /// overrides and validates.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let bytes = read_file(path).map_err(|_| config_err("--config", format!("cannot read {}", path.display())))?;
        let text = String::from_utf8(bytes).map_err(|_| config_err("--config", "file is not UTF-8"))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Makes every relative path absolute with respect to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.output_dir);
        for p in [&mut self.data.train, &mut self.data.test].into_iter().flatten() {
            resolve(base, p);
        }
        for s in self.augmentation.raw.values_mut() {
            resolve(base, &mut s.train);
            resolve(base, &mut s.test);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(t) = o.theta {
            self.theta = t;
        }
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
    }

    /// Checks ranges and that every referenced input exists.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_err(
                "schema_version",
                format!("must be {SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        let d = &self.data;
        match (&d.train, d.builtin) {
            (Some(_), Some(_)) => return Err(config_err("data", "set either train or builtin, not both")),
            (None, None) => return Err(config_err("data", "one of train or builtin is required")),
            (Some(p), None) => require_file("data.train", p)?,
            (None, Some(_)) => {
                if d.language != Language::English {
                    return Err(config_err("data.language", "the builtin corpus is English"));
                }
            }
        }
        if let Some(p) = &d.test {
            require_file("data.test", p)?;
        }
        if d.max_vocab < 2 {
            return Err(config_err("data.max_vocab", format!("must be at least 2, got {}", d.max_vocab)));
        }
        validate_threshold(self.theta).map_err(|_| config_err("theta", format!("must lie in [0, 1], got {}", self.theta)))?;
        let tag = |field: &'static str| move |e: TlaError| config_err(field, e);
        if self.model == ModelKind::Word2vecFeatures {
            self.word2vec.validate().map_err(tag("word2vec"))?;
        } else {
            let mut c = self.classifier.clone();
            c.vocab_size = c.vocab_size.max(2);
            c.validate().map_err(tag("classifier"))?;
            self.optimizer.validate().map_err(tag("optimizer"))?;
        }
        let h = &self.head;
        if self.model == ModelKind::Word2vecFeatures && !h.enabled {
            return Err(config_err("head.enabled", "word2vec-features classifies with the head, which must be enabled"));
        }
        if h.enabled {
            if h.epochs == 0 {
                return Err(config_err("head.epochs", "must be at least 1"));
            }
            if !(h.learning_rate > 0.0 && h.learning_rate.is_finite()) {
                return Err(config_err("head.learning_rate", format!("must be positive, got {}", h.learning_rate)));
            }
        }
        Ok(())
    }

    /// Checks the sections `augment` needs.
    pub fn validate_augmentation(&self) -> Result<()> {
        let a = &self.augmentation;
        a.noise.validate().map_err(|e| config_err("augmentation.noise", e))?;
        if a.fixture_seed.is_none() {
            if a.raw.is_empty() {
                return Err(config_err("augmentation.raw", "name raw corpora or set fixture_seed"));
            }
            for (lang, s) in &a.raw {
                require_file(&format!("augmentation.raw.{lang}.train"), &s.train)?;
                require_file(&format!("augmentation.raw.{lang}.test"), &s.test)?;
            }
        }
        if !a.semi_noisy && !a.fully_translated {
            return Err(config_err("augmentation", "enable semi_noisy, fully_translated or both"));
        }
        if a.translator == TranslatorKind::Http {
            a.http.clone().with_env().validate().map_err(|e| config_err("augmentation.http", e))?;
        }
        Ok(())
    }

    /// Snapshot for manifests, pretty-printed with sorted keys.
    pub fn to_json(&self) -> Result<String> {
        let v = serde_json::to_value(self)?;
        Ok(serde_json::to_string_pretty(&v)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn minimal_builtin_config_loads() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.json", r#"{"schema_version": 1, "data": {"builtin": "markers"}}"#);
        let cfg = ExperimentConfig::load(&p, &Overrides::default()).unwrap();
        assert_eq!(cfg.optimizer.learning_rate, 0.001);
        assert_eq!(cfg.optimizer.batch_size, 32);
        assert_eq!(cfg.optimizer.epochs, 50);
        assert_eq!(cfg.output_dir, dir.path().join("runs/default"));
    }

    #[test]
    fn relative_paths_resolve_against_the_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "train.csv", "id,text,label\n");
        let p = write(
            dir.path(),
            "c.json",
            r#"{"schema_version": 1, "data": {"train": "train.csv"}, "output_dir": "out"}"#,
        );
        let cfg = ExperimentConfig::load(&p, &Overrides { seed: Some(9), ..Overrides::default() }).unwrap();
        assert_eq!(cfg.data.train.unwrap(), dir.path().join("train.csv"));
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn errors_name_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let cases = [
            (r#"{"data": {"builtin": "markers"}}"#, "schema_version"),
            (r#"{"schema_version": 1, "data": {"train": "missing.csv"}}"#, "data.train"),
            (r#"{"schema_version": 1, "data": {"builtin": "markers"}, "theta": 1.5}"#, "theta"),
            (
                r#"{"schema_version": 1, "data": {"builtin": "markers"}, "optimizer": {"learning_rate": -1}}"#,
                "optimizer",
            ),
            (r#"{"schema_version": 1, "data": {"builtin": "markers"}, "bogus": 1}"#, "bogus"),
        ];
        for (json, field) in cases {
            let p = write(dir.path(), "c.json", json);
            let err = ExperimentConfig::load(&p, &Overrides::default()).unwrap_err();
            assert!(matches!(err, TlaError::Config(_)), "{err}");
            assert!(err.to_string().contains(field), "{err} lacks {field}");
        }
    }

    #[test]
    fn augmentation_requires_inputs() {
        let mut cfg = ExperimentConfig {
            schema_version: 1,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate_augmentation().is_err());
        cfg.augmentation.fixture_seed = Some(1);
        cfg.validate_augmentation().unwrap();
        cfg.augmentation.raw.insert(
            Language::Hindi,
            SplitPaths {
                train: "/nonexistent/a.csv".into(),
                test: "/nonexistent/b.csv".into(),
            },
        );
        cfg.augmentation.fixture_seed = None;
        let err = cfg.validate_augmentation().unwrap_err();
        assert!(err.to_string().contains("augmentation.raw.hindi.train"), "{err}");
    }
}
