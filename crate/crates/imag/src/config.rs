//! Flat `key = value` training configuration. Keys are the field names of
//! [`TrainConfig`]; `#` starts a comment.

use std::collections::BTreeMap;
use std::path::Path;

use imag_core::model::ModelKind;
use imag_core::repetition::Variant;
use imag_core::training::TrainConfig;

use crate::error::{Error, Result};

pub const KEYS: [&str; 14] = [
    "e",
    "k",
    "l",
    "zeta",
    "alpha",
    "gamma",
    "variant",
    "batch_size",
    "stage1_batches",
    "stage2_batches",
    "learning_rate",
    "grad_clip",
    "seed",
    "model_kind",
];

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Validation(format!("invalid value {value:?} for {key}")))
}

/// Sets one field from its textual value.
pub fn apply(config: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "e" => config.e = num(key, value)?,
        "k" => config.k = num(key, value)?,
        "l" => config.l = num(key, value)?,
        "zeta" => config.zeta = num(key, value)?,
        "alpha" => config.alpha = num(key, value)?,
        "gamma" => config.gamma = num(key, value)?,
        "variant" => config.variant = Variant::parse(value)?,
        "batch_size" => config.batch_size = num(key, value)?,
        "stage1_batches" => config.stage1_batches = num(key, value)?,
        "stage2_batches" => config.stage2_batches = num(key, value)?,
        "learning_rate" => config.learning_rate = num(key, value)?,
        "grad_clip" => config.grad_clip = num(key, value)?,
        "seed" => config.seed = num(key, value)?,
        "model_kind" => config.model_kind = ModelKind::parse(value)?,
        _ => return Err(Error::Validation(format!("unknown config key {key:?}"))),
    }
    Ok(())
}

/// Parses config text over the defaults. `name` labels errors.
pub fn parse_config(text: &str, name: &str) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    let mut seen = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: name.to_string(),
            line: i + 1,
            message,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err("expected key = value".into()))?;
        let (key, value) = (key.trim(), value.trim());
        if seen.insert(key.to_string(), i + 1).is_some() {
            return Err(err(format!("duplicate key {key:?}")));
        }
        apply(&mut config, key, value).map_err(|e| err(e.to_string()))?;
    }
    Ok(config)
}

pub fn read_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, &path.display().to_string())
}

/// Every field as `(key, value)` in declaration order. Floats use the
/// shortest representation that parses back to the same value.
pub fn to_pairs(config: &TrainConfig) -> Vec<(String, String)> {
    let values = [
        config.e.to_string(),
        config.k.to_string(),
        config.l.to_string(),
        config.zeta.to_string(),
        config.alpha.to_string(),
        config.gamma.to_string(),
        config.variant.name().to_string(),
        config.batch_size.to_string(),
        config.stage1_batches.to_string(),
        config.stage2_batches.to_string(),
        config.learning_rate.to_string(),
        config.grad_clip.to_string(),
        config.seed.to_string(),
        config.model_kind.name().to_string(),
    ];
    KEYS.iter().map(|k| k.to_string()).zip(values).collect()
}

pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    for (k, v) in pairs {
        apply(&mut config, k, v)?;
    }
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_text() {
        let text = "# toy\ne = 32\nl=16 # slots\nvariant = rwp\nmodel_kind = s2sf\nlearning_rate = 0.25\n";
        let c = parse_config(text, "toy.conf").unwrap();
        assert_eq!((c.e, c.l, c.k), (32, 16, 3));
        assert_eq!(c.variant, Variant::Rwp);
        assert_eq!(c.model_kind, ModelKind::S2sf);
        assert_eq!(c.learning_rate, 0.25);
    }

    #[test]
    fn rejects_bad_lines() {
        let err = parse_config("e = 4\nwidth = 3\n", "c").unwrap_err();
        assert!(err.to_string().starts_with("c:2:"), "{err}");
        assert!(parse_config("e 4", "c").is_err());
        assert!(parse_config("e = four", "c").is_err());
        assert!(parse_config("e = 4\ne = 5", "c").is_err());
    }

    #[test]
    fn pairs_round_trip() {
        let mut c = TrainConfig {
            zeta: 0.1 + 0.2,
            seed: u64::MAX,
            variant: Variant::Cvg,
            ..TrainConfig::default()
        };
        c.gamma = 1e-7;
        let pairs = to_pairs(&c);
        assert_eq!(pairs.len(), KEYS.len());
        let back = from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str()))).unwrap();
        assert_eq!(back, c);
    }
}
