//! Flag, config-file and default resolution. Flags win over the file, the
//! file wins over defaults.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

/// Every key a `--config` TOML file may set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub predictor: Option<String>,
    pub head: Option<String>,
    pub sigma: Option<f64>,
    pub metric: Option<String>,
    pub n_samples: Option<usize>,
    pub levels_max: Option<usize>,
    pub stop_improvement: Option<f64>,
    pub stop_patience: Option<usize>,
    pub raw_probability: Option<bool>,
    pub jobs: Option<usize>,
    pub pattern: Option<String>,
    pub c: Option<f64>,
    pub edit: Option<bool>,
    pub fine_tune_steps: Option<usize>,
    pub function: Option<String>,
    pub trials: Option<usize>,
    pub instances: Option<usize>,
    pub probes: Option<usize>,
    pub glm: Option<bool>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| {
            anyhow::Error::new(hiex_core::Error::Config(format!("{}: {e}", path.display())))
        })
    }
}

/// `flag`, else `file`, else `default`.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        assert_eq!(pick(Some(1), Some(2), 3), 1);
        assert_eq!(pick(None, Some(2), 3), 2);
        assert_eq!(pick(None, None, 3), 3);
    }

    #[test]
    fn unknown_keys_name_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 3\nsigmaa = 0.5\n").unwrap();
        let err = FileConfig::load(Some(&path)).unwrap_err();
        assert!(format!("{err:#}").contains("sigmaa"), "{err:#}");
        std::fs::write(&path, "seed = 3\nsigma = 0.5\nmetric = \"l2\"\n").unwrap();
        let c = FileConfig::load(Some(&path)).unwrap();
        assert_eq!((c.seed, c.sigma), (Some(3), Some(0.5)));
    }
}
