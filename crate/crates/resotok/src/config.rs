//! Run configuration: a preset, JSON overrides of any model or training
//! field, paths and a seed, resolved into one fully specified document.

use std::path::{Path, PathBuf};

use resotok_core::config::{GenConfig, TokenizerConfig};
use resotok_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// What a `--config` file may contain; every key is optional.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub preset: Option<String>,
    pub tokenizer: Option<Value>,
    pub generator: Option<Value>,
    pub train: Option<Value>,
    pub checkpoint: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        crate::io::read_json(path)
    }
}

/// Which training recipe a run starts from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Tokenizer,
    Generator,
    Inference,
}

/// Fully resolved configuration, logged at the start of every run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub tokenizer: TokenizerConfig,
    pub generator: GenConfig,
    pub train: TrainConfig,
    pub checkpoint: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: u64,
}

/// Recursive object merge; the resolution mix is a whole value, not a set of keys.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if k != "variable_resolutions" => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn apply<T: Serialize + serde::de::DeserializeOwned>(base: T, over: Option<Value>, what: &str) -> Result<T> {
    let Some(over) = over else { return Ok(base) };
    if !over.is_object() {
        return Err(Error::Config(format!("{what} overrides must be a JSON object")));
    }
    let mut v = serde_json::to_value(base).map_err(|e| Error::Config(e.to_string()))?;
    merge(&mut v, over);
    serde_json::from_value(v).map_err(|e| Error::Config(format!("{what}: {e}")))
}

/// Default training recipe for a preset and stage.
pub fn train_preset(preset: &str, stage: Stage) -> TrainConfig {
    match (preset, stage) {
        ("micro", Stage::Generator) => TrainConfig::generator_overfit(),
        ("micro", _) => TrainConfig::tokenizer_overfit(),
        (_, Stage::Generator) => TrainConfig::generator(),
        _ => TrainConfig::tokenizer(),
    }
}

impl RunConfig {
    /// Preset defaults, then the file's overrides, then `seed` if given.
    pub fn resolve(file: RunConfigFile, preset: Option<&str>, stage: Stage, seed: Option<u64>) -> Result<Self> {
        let preset = preset.map(String::from).or(file.preset).unwrap_or_else(|| "micro".into());
        let tokenizer = apply(TokenizerConfig::preset(&preset)?, file.tokenizer, "tokenizer")?;
        let generator = apply(GenConfig::preset(&preset)?, file.generator, "generator")?;
        let mut train = apply(train_preset(&preset, stage), file.train, "train")?;
        let seed = seed.or(file.seed).unwrap_or(train.seed);
        train.seed = seed;
        tokenizer.validate()?;
        generator.validate()?;
        train.validate()?;
        Ok(RunConfig {
            preset,
            tokenizer,
            generator,
            train,
            checkpoint: file.checkpoint,
            corpus: file.corpus,
            output: file.output,
            seed,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("run config serializes")
    }
}
