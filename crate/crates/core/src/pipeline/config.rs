//! Plain-text `key = value` configuration files.
//!
//! One setting per line; `#` starts a comment; blank lines are ignored.
//! Enumerations use their snake_case names (`loss = ce_eva`, `input_mode = 7C`).
//! Unknown keys are an error that names the key.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{InputMode, NormalizeScope, OptimizerKind, TrainConfig};
use crate::error::{Error, Result};
use crate::terrain::{SynthConfig, WaterLevel};

/// Splits `text` into `(key, value)` pairs in file order.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        out.push((k.to_owned(), v.to_owned()));
    }
    Ok(out)
}

/// Parses `value` with [`FromStr`], reporting failures against `key`.
pub fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::BadValue {
        key: key.to_owned(),
        value: value.to_owned(),
    })
}

/// Parses a snake_case enumeration name through its serde representation.
pub fn parse_enum<T: DeserializeOwned>(key: &str, value: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_owned())).map_err(|_| Error::BadValue {
        key: key.to_owned(),
        value: value.to_owned(),
    })
}

/// Inverse of [`parse_enum`].
pub fn enum_name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        other => panic!("not a unit enum: {other:?}"),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::BadValue {
            key: key.to_owned(),
            value: value.to_owned(),
        }),
    }
}

/// A configuration that can be read from and written to `key = value` text.
pub trait KeyValueConfig: Default + Sized {
    fn set(&mut self, key: &str, value: &str) -> Result<()>;

    fn entries(&self) -> Vec<(&'static str, String)>;

    fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_key_values(text)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

impl KeyValueConfig for TrainConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "epochs" => self.epochs = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "optimizer" => self.optimizer = parse_enum::<OptimizerKind>(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, value)?,
            "input_mode" => self.input_mode = parse_enum::<InputMode>(key, value)?,
            "normalize_scope" => self.normalize_scope = parse_enum::<NormalizeScope>(key, value)?,
            "loss" => self.loss.scheme = parse_enum(key, value)?,
            "lambda" => self.loss.lambda = parse_value(key, value)?,
            "weighting" => self.loss.weighting = parse_enum(key, value)?,
            "reduce" => self.loss.reduce = parse_enum(key, value)?,
            "border_pairs" => self.loss.border_pairs = parse_enum(key, value)?,
            "patch_size" => self.patch_size = parse_value(key, value)?,
            "blocks" => self.blocks = parse_value(key, value)?,
            "base_channels" => self.base_channels = parse_value(key, value)?,
            "pooling_spectral" => self.pooling_spectral = parse_enum(key, value)?,
            "pooling_elevation" => self.pooling_elevation = parse_enum(key, value)?,
            "skip_connections" => self.skip_connections = parse_bool(key, value)?,
            "spectral_activation" => self.spectral_activation = parse_enum(key, value)?,
            "fusion" => self.fusion = parse_enum(key, value)?,
            _ => return Err(Error::UnknownKey(key.to_owned())),
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("epochs", self.epochs.to_string()),
            ("lr", self.lr.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("optimizer", enum_name(&self.optimizer)),
            ("seed", self.seed.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("input_mode", enum_name(&self.input_mode)),
            ("normalize_scope", enum_name(&self.normalize_scope)),
            ("loss", enum_name(&self.loss.scheme)),
            ("lambda", self.loss.lambda.to_string()),
            ("weighting", enum_name(&self.loss.weighting)),
            ("reduce", enum_name(&self.loss.reduce)),
            ("border_pairs", enum_name(&self.loss.border_pairs)),
            ("patch_size", self.patch_size.to_string()),
            ("blocks", self.blocks.to_string()),
            ("base_channels", self.base_channels.to_string()),
            ("pooling_spectral", enum_name(&self.pooling_spectral)),
            ("pooling_elevation", enum_name(&self.pooling_elevation)),
            ("skip_connections", self.skip_connections.to_string()),
            ("spectral_activation", enum_name(&self.spectral_activation)),
            ("fusion", enum_name(&self.fusion)),
        ]
    }
}

/// Synthetic dataset recipe: scene parameters plus region counts.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub synth: SynthConfig,
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            synth: SynthConfig::default(),
            n_train: 2,
            n_test: 1,
        }
    }
}

impl KeyValueConfig for DatasetConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.synth;
        match key {
            "width" => s.width = parse_value(key, value)?,
            "height" => s.height = parse_value(key, value)?,
            "seed" => s.seed = parse_value(key, value)?,
            "roughness" => s.roughness = parse_value(key, value)?,
            "relief" => s.relief = parse_value(key, value)?,
            "water_level" => s.water_level = parse_value::<WaterLevel>(key, value)?,
            "canopy_fraction" => s.canopy_fraction = parse_value(key, value)?,
            "ambiguity_fraction" => s.ambiguity_fraction = parse_value(key, value)?,
            "noise_sigma" => s.noise_sigma = parse_value(key, value)?,
            "blob_radius" => s.blob_radius = parse_value(key, value)?,
            "n_train" => self.n_train = parse_value(key, value)?,
            "n_test" => self.n_test = parse_value(key, value)?,
            _ => return Err(Error::UnknownKey(key.to_owned())),
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.synth;
        vec![
            ("width", s.width.to_string()),
            ("height", s.height.to_string()),
            ("seed", s.seed.to_string()),
            ("roughness", s.roughness.to_string()),
            ("relief", s.relief.to_string()),
            ("water_level", s.water_level.to_string()),
            ("canopy_fraction", s.canopy_fraction.to_string()),
            ("ambiguity_fraction", s.ambiguity_fraction.to_string()),
            ("noise_sigma", s.noise_sigma.to_string()),
            ("blob_radius", s.blob_radius.to_string()),
            ("n_train", self.n_train.to_string()),
            ("n_test", self.n_test.to_string()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{LossScheme, Weighting};
    use crate::model::Pooling;

    #[test]
    fn parses_comments_blank_lines_and_enums() {
        let text = "# training\nepochs = 3\n\nloss = ce_eva  # hybrid\nlambda=0.5\ninput_mode = 4C\nweighting = log_eva_diff\npooling_spectral = avg\nskip_connections = off\n";
        let cfg = TrainConfig::from_text(text).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.loss.scheme, LossScheme::CeEva);
        assert_eq!(cfg.loss.lambda, 0.5);
        assert_eq!(cfg.input_mode, InputMode::C4);
        assert_eq!(cfg.loss.weighting, Weighting::LogEvaDiff);
        assert_eq!(cfg.pooling_spectral, Pooling::Avg);
        assert!(!cfg.skip_connections);
    }

    #[test]
    fn text_round_trips() {
        let mut cfg = TrainConfig::default();
        cfg.lr = 3e-4;
        cfg.optimizer = OptimizerKind::Sgd;
        cfg.normalize_scope = NormalizeScope::Region;
        assert_eq!(TrainConfig::from_text(&cfg.to_text()).unwrap(), cfg);

        let mut ds = DatasetConfig::default();
        ds.synth.water_level = WaterLevel::Meters(12.5);
        ds.n_test = 4;
        assert_eq!(DatasetConfig::from_text(&ds.to_text()).unwrap(), ds);
    }

    #[test]
    fn errors_name_the_offending_key() {
        match TrainConfig::from_text("epochs = 2\nlearning_rate = 0.1\n") {
            Err(e @ Error::UnknownKey(_)) => assert!(e.to_string().contains("learning_rate")),
            other => panic!("{other:?}"),
        }
        match TrainConfig::from_text("loss = hinge\n") {
            Err(e @ Error::BadValue { .. }) => assert!(e.to_string().contains("loss")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(DatasetConfig::from_text("width 12\n"), Err(Error::Config(_))));
        assert!(matches!(DatasetConfig::from_text("width = -3\n"), Err(Error::BadValue { .. })));
    }
}
