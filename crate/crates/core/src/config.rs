//! Plain key=value run configuration. Lines starting with `#` (or anything
//! after a `#`) are comments; unknown keys are rejected; a handful of keys
//! are required and everything else has documented defaults.

use std::collections::HashMap;
use std::path::PathBuf;

use crate::data::SplitSpec;
use crate::error::{Error, Result};
use crate::losses::{Decorrelation, LossWeights};
use crate::nets::{Arch, Mode, ValueRange};

/// Where training data comes from.
#[derive(Debug, Clone)]
pub enum DataSource {
    /// Procedural synthetic-factor dataset.
    Synth { samples: usize, size: usize },
    /// IDX image/label file pair (class mode).
    Idx { images: PathBuf, labels: PathBuf },
}

/// Parsed run configuration for the command-line tools.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: Mode,
    pub data: DataSource,
    pub out_dir: PathBuf,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub weights: LossWeights,
    pub c_dim: usize,
    pub z_dim: usize,
    pub value_range: ValueRange,
    pub split: SplitSpec,
    pub arch: Arch,
    /// The original config text, echoed into checkpoints.
    pub raw_text: String,
}

const KNOWN_KEYS: &[&str] = &[
    "mode",
    "data",
    "out_dir",
    "epochs",
    "train_images",
    "train_labels",
    "synth_samples",
    "synth_size",
    "split",
    "batch_size",
    "seed",
    "lr",
    "adam_beta1",
    "adam_beta2",
    "alpha",
    "beta",
    "gamma",
    "decorrelation",
    "use_dssim",
    "c_dim",
    "z_dim",
    "value_range",
    "conv1_channels",
    "conv2_channels",
    "hidden_dim",
];

fn parse_kv(text: &str) -> Result<HashMap<String, String>> {
    let mut map = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected key = value, got '{raw}'",
                lineno + 1
            )));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("unknown config key '{key}'")));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(Error::Config(format!("duplicate config key '{key}'")));
        }
    }
    Ok(map)
}

fn parse_typed<T: std::str::FromStr>(map: &HashMap<String, String>, key: &str, default: T) -> Result<T> {
    match map.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| Error::Config(format!("config key '{key}' has invalid value '{v}'"))),
    }
}

fn require<'m>(map: &'m HashMap<String, String>, key: &str) -> Result<&'m String> {
    map.get(key)
        .ok_or_else(|| Error::Config(format!("missing required config key '{key}'")))
}

fn parse_split(v: &str) -> Result<SplitSpec> {
    let bad = || Error::Config(format!("invalid split '{v}': expected counts:a,b,c or fractions:a,b,c"));
    let (kind, rest) = v.split_once(':').ok_or_else(bad)?;
    let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    match kind.trim() {
        "counts" => {
            let ns: Vec<usize> = parts
                .iter()
                .map(|p| p.parse().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            Ok(SplitSpec::Counts(ns[0], ns[1], ns[2]))
        }
        "fractions" => {
            let fs: Vec<f64> = parts
                .iter()
                .map(|p| p.parse().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            Ok(SplitSpec::Fractions(fs[0], fs[1], fs[2]))
        }
        _ => Err(bad()),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let map = parse_kv(text)?;

        let mode = match require(&map, "mode")?.as_str() {
            "class" => Mode::Class,
            "attribute" => Mode::Attribute,
            other => {
                return Err(Error::Config(format!(
                    "mode must be 'class' or 'attribute', got '{other}'"
                )))
            }
        };
        let data = match require(&map, "data")?.as_str() {
            "synth" => {
                if mode == Mode::Class {
                    return Err(Error::Config(
                        "the synthetic dataset is attribute-mode; use data = idx for class mode"
                            .to_string(),
                    ));
                }
                DataSource::Synth {
                    samples: parse_typed(&map, "synth_samples", 2800usize)?,
                    size: parse_typed(&map, "synth_size", 16usize)?,
                }
            }
            "idx" => {
                if mode == Mode::Attribute {
                    return Err(Error::Config(
                        "IDX data carries class labels; use data = synth for attribute mode"
                            .to_string(),
                    ));
                }
                DataSource::Idx {
                    images: PathBuf::from(require(&map, "train_images")?),
                    labels: PathBuf::from(require(&map, "train_labels")?),
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "data must be 'synth' or 'idx', got '{other}'"
                )))
            }
        };
        let out_dir = PathBuf::from(require(&map, "out_dir")?);
        let epochs: usize = require(&map, "epochs")?
            .parse()
            .map_err(|_| Error::Config("config key 'epochs' has an invalid value".to_string()))?;

        let decorrelation = match map.get("decorrelation").map(String::as_str) {
            None | Some("dcov2") => Decorrelation::DCov2,
            Some("xcov") => Decorrelation::XCov,
            Some("none") => Decorrelation::None,
            Some(other) => {
                return Err(Error::Config(format!(
                    "decorrelation must be dcov2, xcov or none, got '{other}'"
                )))
            }
        };
        let use_dssim = match map.get("use_dssim").map(String::as_str) {
            None | Some("auto") => mode == Mode::Attribute,
            Some("true") => true,
            Some("false") => false,
            Some(other) => {
                return Err(Error::Config(format!(
                    "use_dssim must be true, false or auto, got '{other}'"
                )))
            }
        };
        let weights = LossWeights {
            alpha: parse_typed(&map, "alpha", 1.0)?,
            beta: parse_typed(&map, "beta", 1.0)?,
            gamma: parse_typed(&map, "gamma", 5.0)?,
            decorrelation,
            use_dssim,
        };
        weights.validate()?;

        let value_range = match map.get("value_range").map(String::as_str) {
            None | Some("unit") => ValueRange::Unit,
            Some("symmetric") => ValueRange::Symmetric,
            Some(other) => {
                return Err(Error::Config(format!(
                    "value_range must be unit or symmetric, got '{other}'"
                )))
            }
        };
        let split = match map.get("split") {
            None => SplitSpec::Fractions(0.8, 0.1, 0.1),
            Some(v) => parse_split(v)?,
        };
        let c_default = match mode {
            Mode::Class => 10,
            Mode::Attribute => 3,
        };
        let z_default = match mode {
            Mode::Class => 2,
            Mode::Attribute => 32,
        };

        Ok(RunConfig {
            mode,
            data,
            out_dir,
            epochs,
            batch_size: parse_typed(&map, "batch_size", 100usize)?,
            seed: parse_typed(&map, "seed", 0u64)?,
            lr: parse_typed(&map, "lr", 1e-4)?,
            adam_beta1: parse_typed(&map, "adam_beta1", 0.5)?,
            adam_beta2: parse_typed(&map, "adam_beta2", 0.999)?,
            weights,
            c_dim: parse_typed(&map, "c_dim", c_default)?,
            z_dim: parse_typed(&map, "z_dim", z_default)?,
            value_range,
            split,
            arch: Arch {
                conv1: parse_typed(&map, "conv1_channels", 8usize)?,
                conv2: parse_typed(&map, "conv2_channels", 16usize)?,
                hidden: parse_typed(&map, "hidden_dim", 128usize)?,
            },
            raw_text: text.to_string(),
        })
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Apply the `MDDAE_SEED` environment override, if set.
    pub fn apply_env_seed(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var("MDDAE_SEED") {
            self.seed = v.parse().map_err(|_| {
                Error::Config(format!("MDDAE_SEED has invalid value '{v}'"))
            })?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
mode = attribute
data = synth
out_dir = /tmp/run
epochs = 3
";

    #[test]
    fn minimal_config_with_defaults() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.mode, Mode::Attribute);
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.batch_size, 100);
        assert_eq!(cfg.lr, 1e-4);
        assert_eq!(cfg.adam_beta1, 0.5);
        assert_eq!(cfg.adam_beta2, 0.999);
        assert_eq!(cfg.weights.alpha, 1.0);
        assert_eq!(cfg.weights.beta, 1.0);
        assert_eq!(cfg.weights.gamma, 5.0);
        assert_eq!(cfg.weights.decorrelation, Decorrelation::DCov2);
        assert!(cfg.weights.use_dssim);
        assert_eq!(cfg.c_dim, 3);
        assert_eq!(cfg.z_dim, 32);
    }

    #[test]
    fn class_mode_defaults() {
        let text = "\
mode = class
data = idx
train_images = /tmp/i.idx
train_labels = /tmp/l.idx
out_dir = /tmp/run
epochs = 1
";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.c_dim, 10);
        assert_eq!(cfg.z_dim, 2);
        assert!(!cfg.weights.use_dssim);
    }

    #[test]
    fn missing_key_named_in_error() {
        let err = RunConfig::parse("mode = attribute\ndata = synth\nepochs = 1\n").unwrap_err();
        assert!(err.to_string().contains("out_dir"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::parse(&format!("{MINIMAL}frobnicate = 1\n")).unwrap_err();
        assert!(err.to_string().contains("frobnicate"), "{err}");
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let text = format!("# heading\n\n{MINIMAL}gamma = 2.5 # inline note\n");
        let cfg = RunConfig::parse(&text).unwrap();
        assert_eq!(cfg.weights.gamma, 2.5);
    }

    #[test]
    fn split_forms() {
        let counts = RunConfig::parse(&format!("{MINIMAL}split = counts:2000,400,400\n")).unwrap();
        assert!(matches!(counts.split, SplitSpec::Counts(2000, 400, 400)));
        let fr = RunConfig::parse(&format!("{MINIMAL}split = fractions:0.8,0.1,0.1\n")).unwrap();
        assert!(matches!(fr.split, SplitSpec::Fractions(_, _, _)));
        assert!(RunConfig::parse(&format!("{MINIMAL}split = nonsense\n")).is_err());
    }

    #[test]
    fn duplicate_key_rejected() {
        let err = RunConfig::parse(&format!("{MINIMAL}epochs = 5\n")).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }
}
