//! Run configuration: one JSON document, environment overrides of the form
//! `TALKIT_<SECTION>_<FIELD>`, and seed derivation from the top-level seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use talkit_core::fusion::AlignMode;
use talkit_core::synth::SynthConfig;
use talkit_core::{DecodeConfig, EvalConfig};
use talkit_nn::model::{FusionMode, InputSource, ModelConfig};
use talkit_nn::TrainConfig;

pub const ENV_PREFIX: &str = "TALKIT_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset root holding `train/` and `eval/` splits; defaults to
    /// `<output_dir>/data`.
    pub dir: Option<PathBuf>,
    /// Generator settings used by `generate` (and by `ablate` when the
    /// dataset does not exist yet). `num_videos` counts both splits.
    pub synth: SynthConfig,
    /// Number of trailing generated videos placed in the `eval` split.
    pub holdout_videos: usize,
    pub align: AlignMode,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: None,
            synth: SynthConfig::default(),
            holdout_videos: 5,
            align: AlignMode::Nearest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub mode: FusionMode,
    /// Projection width per source name; sources not listed keep their
    /// input width.
    pub proj_dims: BTreeMap<String, usize>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            mode: FusionMode::ProjCat,
            proj_dims: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub fusion: FusionConfig,
    /// `sources`, `fusion` and `num_classes` are filled in from the data
    /// and fusion sections.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub eval: EvalConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            fusion: FusionConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
            eval: EvalConfig::default(),
            output_dir: PathBuf::from("talkit_run"),
            seed: 0,
        }
    }
}

/// Independent seed streams derived from the top-level seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedStream {
    Data = 1,
    ModelInit = 2,
    Train = 3,
}

pub fn derive_seed(seed: u64, stream: SeedStream) -> u64 {
    // splitmix64 finalizer over (seed, stream)
    let mut z = seed.wrapping_add((stream as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RunConfig {
    /// Read `path`, apply `TALKIT_*` overrides from the process
    /// environment, and validate.
    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with_env(path, std::env::vars())
    }

    pub fn load_with_env(path: &Path, env: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json_with_env(&text, env).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn from_json_with_env(text: &str, env: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let parsed: RunConfig = serde_path_to_error::deserialize(de).map_err(field_error)?;
        // serialize back so every defaulted field is addressable by overrides
        let mut value = serde_json::to_value(&parsed).expect("config serializes");
        let mut overrides: Vec<(String, String)> = env
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        overrides.sort();
        for (key, raw) in &overrides {
            apply_override(&mut value, &key[ENV_PREFIX.len()..], raw).with_context(|| format!("environment override {key}"))?;
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(field_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate().context("train")?;
        self.decode.validate().context("decode")?;
        if self.eval.thresholds.is_empty() || self.eval.thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            bail!("eval.thresholds: need a non-empty list of values in (0, 1]");
        }
        if self.eval.k == 0 {
            bail!("eval.k: must be positive");
        }
        Ok(())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data.dir.clone().unwrap_or_else(|| self.output_dir.join("data"))
    }

    pub fn train_split(&self) -> PathBuf {
        self.data_dir().join("train")
    }

    pub fn eval_split(&self) -> PathBuf {
        self.data_dir().join("eval")
    }

    /// Generator settings with the seed taken from the top-level seed.
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: derive_seed(self.seed, SeedStream::Data),
            ..self.data.synth.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, SeedStream::Train),
            ..self.train.clone()
        }
    }

    /// Model settings completed from the dataset's sources and classes.
    pub fn model_config(&self, sources: &[(String, usize)], num_classes: usize, mode: FusionMode) -> ModelConfig {
        ModelConfig {
            num_classes,
            fusion: mode,
            sources: sources
                .iter()
                .map(|(name, dim)| InputSource::new(name, *dim, *self.fusion.proj_dims.get(name).unwrap_or(dim)))
                .collect(),
            ..self.model.clone()
        }
    }
}

fn field_error<E: std::fmt::Display>(e: serde_path_to_error::Error<E>) -> anyhow::Error {
    let path = e.path().to_string();
    if path.is_empty() || path == "." {
        anyhow!("{}", e.inner())
    } else {
        anyhow!("field `{path}`: {}", e.inner())
    }
}

/// Set the field named by underscore-joined `key` (e.g. `TRAIN_BASE_LR`)
/// inside `root`. Field names may themselves contain underscores, so the
/// key is matched greedily against the keys that actually exist.
fn apply_override(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    let key = key.to_ascii_lowercase();
    let mut node = root;
    let mut rest: &str = &key;
    loop {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| anyhow!("`{rest}` does not name a field"))?;
        if obj.contains_key(rest) {
            let slot = obj.get_mut(rest).expect("key present");
            *slot = parse_value(raw, slot);
            return Ok(());
        }
        // longest existing key that prefixes `rest` and leads to an object
        let next = obj
            .iter()
            .filter(|(k, v)| v.is_object() && rest.len() > k.len() + 1 && rest.starts_with(k.as_str()) && rest.as_bytes()[k.len()] == b'_')
            .map(|(k, _)| k.clone())
            .max_by_key(|k| k.len())
            .ok_or_else(|| anyhow!("no config field matches `{rest}`"))?;
        rest = &rest[next.len() + 1..];
        node = obj.get_mut(&next).expect("key present");
    }
}

/// JSON if it parses (numbers, booleans, arrays, objects, null), otherwise a
/// plain string. A current string value always takes the raw text.
fn parse_value(raw: &str, current: &Value) -> Value {
    if current.is_string() {
        return Value::String(raw.to_string());
    }
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}
