use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{resolve_flip_budget, sample_vicinity, FlipBudget, Instance, SamplerConfig};
use crate::error::{Error, Result};
use crate::gateway::PredictorHandle;
use crate::rng::{derive_seed, rng_from_seed};

/// `w_i = exp(-d_i^2 / width^2)`.
pub fn kernel_weights(distances: &[f64], width: f64) -> Result<Vec<f64>> {
    if !(width > 0.0 && width.is_finite()) {
        return Err(Error::config("kernel width must be positive"));
    }
    distances
        .iter()
        .map(|&d| {
            if !(d >= 0.0 && d.is_finite()) {
                Err(Error::config(format!("invalid distance {d}")))
            } else {
                Ok((-(d * d) / (width * width)).exp())
            }
        })
        .collect()
}

/// 80/10/10 train/validation/test membership; train takes the rounding
/// remainder. Indices within each part are ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn shuffled(n: usize, seed: u64) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_from_seed(derive_seed(seed, "split", 0)));
        let n_val = n / 10;
        let n_test = n / 10;
        let mut val = order[..n_val].to_vec();
        let mut test = order[n_val..n_val + n_test].to_vec();
        let mut train = order[n_val + n_test..].to_vec();
        val.sort_unstable();
        test.sort_unstable();
        train.sort_unstable();
        Split { train, val, test }
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    /// Split label per row.
    pub fn labels(&self, n: usize) -> Vec<&'static str> {
        let mut out = vec!["train"; n];
        for &i in &self.val {
            out[i] = "val";
        }
        for &i in &self.test {
            out[i] = "test";
        }
        out
    }
}

/// Per-column affine scaling applied to the surrogate representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaling {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// The weighted local vicinity of one instance together with the black-box
/// outputs on it.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDataset {
    pub origin: Instance,
    pub config: SamplerConfig,
    pub flip_budget: Option<FlipBudget>,
    /// Perturbed instances as sent to the predictor.
    pub samples: Vec<Instance>,
    /// Surrogate representation, one row per sample.
    pub features: Array2<f64>,
    /// Representation of the origin (all-on mask for token sequences).
    pub origin_features: Array1<f64>,
    pub outputs: Array1<f64>,
    pub distances: Array1<f64>,
    pub weights: Array1<f64>,
    pub split: Split,
    /// Standard scaling of continuous columns in mixed vicinities.
    pub scaling: Option<ColumnScaling>,
}

impl LocalDataset {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn feature_count(&self) -> usize {
        self.features.ncols()
    }

    pub fn rows(&self, idx: &[usize]) -> Array2<f64> {
        self.features.select(Axis(0), idx)
    }

    /// CSV with one row per sample: features, output, weight, split.
    pub fn to_csv(&self) -> String {
        let p = self.feature_count();
        let mut s = String::new();
        for j in 0..p {
            let _ = write!(s, "f{j},");
        }
        s.push_str("output,weight,split\n");
        let labels = self.split.labels(self.len());
        for i in 0..self.len() {
            for j in 0..p {
                let _ = write!(s, "{},", self.features[[i, j]]);
            }
            let _ = writeln!(s, "{},{},{}", self.outputs[i], self.weights[i], labels[i]);
        }
        s
    }

    pub fn metadata_json(&self) -> serde_json::Value {
        serde_json::json!({
            "config": self.config,
            "seed": self.config.seed,
            "origin": self.origin,
            "flip_budget": self.flip_budget,
            "kernel_width": self.config.kernel_width(),
            "split_sizes": self.split.sizes(),
            "scaling": self.scaling,
        })
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn export(&self, dir: &Path, stem: &str) -> Result<()> {
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let meta = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(&self.metadata_json())?;
        std::fs::write(&meta, text).map_err(|e| Error::io(&meta, e))?;
        Ok(())
    }
}

fn origin_representation(x: &Instance) -> Vec<f64> {
    match x {
        Instance::TokenSequence { tokens } => vec![1.0; tokens.len()],
        other => other.values().unwrap().to_vec(),
    }
}

/// Samples the vicinity of `x`, queries `f`, weights samples by the kernel
/// and draws the seeded split.
pub fn build_local_dataset(x: &Instance, f: &PredictorHandle, cfg: &SamplerConfig) -> Result<LocalDataset> {
    cfg.validate_for(x)?;
    f.check_accepts(x)?;
    let perturbations = sample_vicinity(x, cfg)?;
    let n = perturbations.len();
    let p = x.len();
    let mut features = Array2::zeros((n, p));
    let mut distances = Vec::with_capacity(n);
    let mut samples = Vec::with_capacity(n);
    for (i, s) in perturbations.into_iter().enumerate() {
        features.row_mut(i).assign(&Array1::from(s.representation));
        distances.push(s.distance);
        samples.push(s.instance);
    }
    let outputs = f.predict_batch(&samples)?;
    let weights = kernel_weights(&distances, cfg.kernel_width())?;
    let mut origin_features = Array1::from(origin_representation(x));

    let scaling = if let Instance::Mixed { binary, .. } = x {
        let mut mean = vec![0.0; p];
        let mut std = vec![1.0; p];
        for j in (0..p).filter(|&j| !binary[j]) {
            let col = features.column(j);
            let m = col.mean().unwrap_or(0.0);
            let s = col.std(0.0);
            mean[j] = m;
            std[j] = if s > 0.0 { s } else { 1.0 };
        }
        for j in 0..p {
            features.column_mut(j).mapv_inplace(|v| (v - mean[j]) / std[j]);
            origin_features[j] = (origin_features[j] - mean[j]) / std[j];
        }
        Some(ColumnScaling { mean, std })
    } else {
        None
    };

    Ok(LocalDataset {
        origin: x.clone(),
        config: cfg.clone(),
        flip_budget: resolve_flip_budget(x, cfg),
        samples,
        features,
        origin_features,
        outputs: Array1::from(outputs),
        distances: Array1::from(distances),
        weights: Array1::from(weights),
        split: Split::shuffled(n, cfg.seed),
        scaling,
    })
}
