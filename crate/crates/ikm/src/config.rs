//! Run configuration files: INI-style sections [model], [train], [data],
//! [eval] with `key = value` lines and '#' comments. Unknown sections or
//! keys are errors (fail-closed); every key has a default except
//! model.scale, which must be given.

use std::path::PathBuf;

use crate::arch::{Mode, UhdnConfig};
use crate::error::{IkmError, Result};
use crate::train::TrainConfig;

#[derive(Debug, Clone, Default)]
pub struct DataConfig {
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct EvalConfig {
    pub lr_dir: Option<PathBuf>,
    pub hr_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: UhdnConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

/// Defaults mirror the paper's lightweight setting at desk scale; the model
/// section must at least set `scale`.
pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let mut model = UhdnConfig {
        n_blocks: 4,
        depths: vec![6, 5, 4, 4, 5, 6],
        growth: 12,
        channels: 64,
        scale: 0, // required
        mode: Mode::Iso,
        threshold: 0.0,
        dilation: 1,
    };
    let mut train = TrainConfig::default();
    let mut data = DataConfig::default();
    let mut eval = EvalConfig::default();
    let mut section = String::new();
    let mut scale_seen = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            if !line.ends_with(']') {
                return Err(IkmError::Config(format!(
                    "line {}: malformed section header '{}'",
                    lineno + 1,
                    line
                )));
            }
            section = line[1..line.len() - 1].trim().to_string();
            if !matches!(section.as_str(), "model" | "train" | "data" | "eval") {
                return Err(IkmError::Config(format!(
                    "line {}: unknown section [{}]",
                    lineno + 1,
                    section
                )));
            }
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            IkmError::Config(format!("line {}: expected key = value", lineno + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        let bad_key = || {
            IkmError::Config(format!(
                "line {}: unknown key '{}.{}'",
                lineno + 1,
                section,
                key
            ))
        };
        let bad_val =
            |what: &str| IkmError::Config(format!("line {}: bad {} '{}'", lineno + 1, what, value));
        match section.as_str() {
            "model" => match key {
                "scale" => {
                    model.scale = value.parse().map_err(|_| bad_val("scale"))?;
                    scale_seen = true;
                }
                "n_blocks" => model.n_blocks = value.parse().map_err(|_| bad_val("n_blocks"))?,
                "depths" => {
                    model.depths = value
                        .split(',')
                        .map(|d| d.trim().parse().map_err(|_| bad_val("depths")))
                        .collect::<Result<Vec<usize>>>()?
                }
                "growth" => model.growth = value.parse().map_err(|_| bad_val("growth"))?,
                "channels" => model.channels = value.parse().map_err(|_| bad_val("channels"))?,
                "mode" => model.mode = Mode::parse(value)?,
                "threshold" => model.threshold = value.parse().map_err(|_| bad_val("threshold"))?,
                "dilation" => model.dilation = value.parse().map_err(|_| bad_val("dilation"))?,
                _ => return Err(bad_key()),
            },
            "train" => match key {
                "batch_size" => {
                    train.batch_size = value.parse().map_err(|_| bad_val("batch_size"))?
                }
                "lr0" => train.lr0 = value.parse().map_err(|_| bad_val("lr0"))?,
                "halve_period" => {
                    train.halve_period = value.parse().map_err(|_| bad_val("halve_period"))?
                }
                "steps" => train.steps = value.parse().map_err(|_| bad_val("steps"))?,
                "seed" => train.seed = value.parse().map_err(|_| bad_val("seed"))?,
                "patch" => train.patch = value.parse().map_err(|_| bad_val("patch"))?,
                "log_interval" => {
                    train.log_interval = value.parse().map_err(|_| bad_val("log_interval"))?
                }
                "augment" => {
                    train.augment = match value {
                        "true" | "1" => true,
                        "false" | "0" => false,
                        _ => return Err(bad_val("augment")),
                    }
                }
                _ => return Err(bad_key()),
            },
            "data" => match key {
                "train_dir" => data.train_dir = Some(PathBuf::from(value)),
                "val_dir" => data.val_dir = Some(PathBuf::from(value)),
                _ => return Err(bad_key()),
            },
            "eval" => match key {
                "lr_dir" => eval.lr_dir = Some(PathBuf::from(value)),
                "hr_dir" => eval.hr_dir = Some(PathBuf::from(value)),
                _ => return Err(bad_key()),
            },
            _ => {
                return Err(IkmError::Config(format!(
                    "line {}: key outside any section",
                    lineno + 1
                )))
            }
        }
    }
    if !scale_seen {
        return Err(IkmError::Config(
            "missing required key 'model.scale'".into(),
        ));
    }
    model.validate()?;
    train.validate()?;
    Ok(RunConfig {
        model,
        train,
        data,
        eval,
    })
}
