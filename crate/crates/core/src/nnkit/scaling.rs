use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

/// Column-wise `(x - mean) / std`, fitted on a subset of rows. Constant
/// columns get unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn scale_or_one(s: f64) -> f64 {
    if s > 1e-12 && s.is_finite() {
        s
    } else {
        1.0
    }
}

impl Standardizer {
    pub fn identity(p: usize) -> Self {
        Standardizer {
            mean: vec![0.0; p],
            std: vec![1.0; p],
        }
    }

    pub fn fit(x: ArrayView2<f64>, rows: &[usize]) -> Self {
        let sub = x.select(Axis(0), rows);
        let mean = sub.mean_axis(Axis(0)).map(|m| m.to_vec()).unwrap_or_else(|| vec![0.0; x.ncols()]);
        let std = sub.std_axis(Axis(0), 0.0).iter().map(|&s| scale_or_one(s)).collect();
        Standardizer { mean, std }
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| (v - self.mean[j]) / self.std[j]);
        }
        out
    }

    pub fn transform_row(&self, row: ArrayView1<f64>) -> Array1<f64> {
        Array1::from_iter(row.iter().enumerate().map(|(j, v)| (v - self.mean[j]) / self.std[j]))
    }

    /// Restriction to a subset of columns.
    pub fn select(&self, cols: &[usize]) -> Self {
        Standardizer {
            mean: cols.iter().map(|&j| self.mean[j]).collect(),
            std: cols.iter().map(|&j| self.std[j]).collect(),
        }
    }
}

/// Affine scaling of a scalar target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub mean: f64,
    pub std: f64,
}

impl TargetScaler {
    pub fn fit(y: ArrayView1<f64>, rows: &[usize]) -> Self {
        let n = rows.len().max(1) as f64;
        let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / n;
        let var = rows.iter().map(|&i| (y[i] - mean) * (y[i] - mean)).sum::<f64>() / n;
        TargetScaler {
            mean,
            std: scale_or_one(var.sqrt()),
        }
    }

    pub fn forward(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn inverse(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}
