//! Run configuration file.
//!
//! TOML with one table per section, e.g.
//!
//! ```toml
//! [model]
//! centroids = 8
//! scales = [4, 8]
//!
//! [train]
//! lr = 0.001
//!
//! [data]
//! source = "manifest"
//! manifest = "data/manifest.txt"
//!
//! [output]
//! dir = "runs/demo"
//! ```
//!
//! Dotted keys (`train.lr = 0.002`) are equivalent. Every key is optional;
//! unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, load_manifest, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Task};
use crate::training::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    /// Generated in memory from `data.points`, `data.noise`, `data.seed`.
    Synthetic,
    /// Loaded from `data.manifest`.
    Manifest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub manifest: Option<PathBuf>,
    pub points: usize,
    pub noise: f64,
    /// Synthetic clouds per class (per set for segmentation).
    pub train_count: usize,
    pub test_count: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            manifest: None,
            points: 1024,
            noise: 0.01,
            train_count: 20,
            test_count: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("runs/latest"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub output: OutputConfig,
}

/// Train, validation and test splits.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl RunConfig {
    /// Defaults, then the optional file, then `SECTION.KEY=VALUE` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {}", p.display(), e.message())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.data.source == DataSource::Manifest && self.data.manifest.is_none() {
            return Err(Error::Config("data.source = \"manifest\" needs data.manifest".into()));
        }
        if self.data.source == DataSource::Synthetic {
            self.synthetic_spec(0).validate()?;
            if self.data.train_count == 0 {
                return Err(Error::Config("data.train_count must be at least 1".into()));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn synthetic_spec(&self, offset: u64) -> SyntheticSpec {
        let seed = self.data.seed.wrapping_add(offset);
        match self.model.task {
            Task::Classification => SyntheticSpec::classification(self.data.points, self.data.noise, seed),
            Task::Segmentation => SyntheticSpec::segmentation(self.data.points, self.data.noise, seed),
        }
    }

    /// Loads or generates the configured dataset. Synthetic test clouds
    /// use `data.seed + 1`.
    pub fn load_data(&self) -> Result<Splits> {
        match self.data.source {
            DataSource::Synthetic => {
                let train = generate_synthetic(&self.synthetic_spec(0), self.data.train_count)?;
                let test = generate_synthetic(&self.synthetic_spec(1), self.data.test_count)?;
                Ok(Splits {
                    validation: train.empty_like(),
                    train,
                    test,
                })
            }
            DataSource::Manifest => {
                let path = self.data.manifest.as_deref().expect("validated");
                let m = load_manifest(path)?;
                Ok(Splits {
                    train: m.train,
                    validation: m.validation,
                    test: m.test,
                })
            }
        }
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not SECTION.KEY=VALUE")))?;
    let (section, field) = key
        .trim()
        .split_once('.')
        .filter(|(s, f)| !s.is_empty() && !f.is_empty() && !f.contains('.'))
        .ok_or_else(|| Error::Config(format!("override key {key:?} is not SECTION.KEY")))?;
    let raw = raw.trim();
    // TOML literal if it parses as one, otherwise a bare string
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let sub = entry
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("{section} is not a section")))?;
    sub.insert(field.to_string(), value);
    Ok(())
}
