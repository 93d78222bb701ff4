use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The data point being explained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Instance {
    Continuous {
        values: Vec<f64>,
    },
    /// One-hot / binary features, each exactly 0 or 1.
    Binary {
        values: Vec<f64>,
    },
    /// Continuous and binary coordinates side by side; `binary[i]` marks
    /// which coordinates are binary.
    Mixed {
        values: Vec<f64>,
        binary: Vec<bool>,
    },
    TokenSequence {
        tokens: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceKind {
    Continuous,
    Binary,
    Mixed,
    TokenSequence,
}

impl Instance {
    pub fn continuous(values: Vec<f64>) -> Self {
        Instance::Continuous { values }
    }

    pub fn binary(values: Vec<f64>) -> Result<Self> {
        let x = Instance::Binary { values };
        x.validate()?;
        Ok(x)
    }

    pub fn tokens<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self> {
        let x = Instance::TokenSequence {
            tokens: tokens.into_iter().map(Into::into).collect(),
        };
        x.validate()?;
        Ok(x)
    }

    /// Whitespace-tokenised sentence.
    pub fn sentence(text: &str) -> Result<Self> {
        Self::tokens(text.split_whitespace())
    }

    pub fn kind(&self) -> InstanceKind {
        match self {
            Instance::Continuous { .. } => InstanceKind::Continuous,
            Instance::Binary { .. } => InstanceKind::Binary,
            Instance::Mixed { .. } => InstanceKind::Mixed,
            Instance::TokenSequence { .. } => InstanceKind::TokenSequence,
        }
    }

    /// Feature count `p` (token count for sequences).
    pub fn len(&self) -> usize {
        match self {
            Instance::Continuous { values } | Instance::Binary { values } | Instance::Mixed { values, .. } => {
                values.len()
            }
            Instance::TokenSequence { tokens } => tokens.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> Option<&[f64]> {
        match self {
            Instance::Continuous { values } | Instance::Binary { values } | Instance::Mixed { values, .. } => {
                Some(values)
            }
            Instance::TokenSequence { .. } => None,
        }
    }

    pub fn token_list(&self) -> Option<&[String]> {
        match self {
            Instance::TokenSequence { tokens } => Some(tokens),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Instance::Continuous { values } => {
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::config("instance values must be finite"));
                }
            }
            Instance::Binary { values } => {
                if values.iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::config("binary instance entries must be 0 or 1"));
                }
            }
            Instance::Mixed { values, binary } => {
                if values.len() != binary.len() {
                    return Err(Error::config("mixed instance: binary mask length differs"));
                }
                for (v, &b) in values.iter().zip(binary) {
                    if !v.is_finite() || (b && *v != 0.0 && *v != 1.0) {
                        return Err(Error::config("mixed instance: invalid entry"));
                    }
                }
            }
            Instance::TokenSequence { tokens } => {
                if tokens.is_empty() {
                    return Err(Error::config("token sequence needs at least one token"));
                }
            }
        }
        if self.is_empty() {
            return Err(Error::config("instance has no features"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_entries_checked() {
        assert!(Instance::binary(vec![0.0, 1.0, 1.0]).is_ok());
        assert!(Instance::binary(vec![0.0, 0.5]).is_err());
    }

    #[test]
    fn empty_sequence_rejected() {
        assert!(Instance::tokens(Vec::<String>::new()).is_err());
        assert_eq!(Instance::sentence("this is not bad").unwrap().len(), 4);
    }

    #[test]
    fn serde_shape() {
        let x = Instance::sentence("a b").unwrap();
        let s = serde_json::to_string(&x).unwrap();
        assert_eq!(s, r#"{"kind":"token_sequence","tokens":["a","b"]}"#);
        let back: Instance = serde_json::from_str(&s).unwrap();
        assert_eq!(back, x);
    }
}
