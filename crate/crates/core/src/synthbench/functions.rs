use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense quadratic-form generator: `y = beta.x + x' W x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticForm {
    pub beta: Vec<f64>,
    /// Row-major `p x p`, symmetric.
    pub w: Vec<f64>,
    pub k: usize,
    pub density: f64,
    pub seed: u64,
}

impl QuadraticForm {
    pub fn p(&self) -> usize {
        self.beta.len()
    }

    #[inline]
    pub fn w_at(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.p() + j]
    }

    /// Pairs `(i, j)`, `i < j`, with a nonzero interaction weight.
    pub fn truth_pairs(&self) -> Vec<Vec<usize>> {
        let p = self.p();
        let mut out = Vec::new();
        for i in 0..p {
            for j in i + 1..p {
                if self.w_at(i, j) != 0.0 {
                    out.push(vec![i, j]);
                }
            }
        }
        out
    }
}

/// Ground-truth data generating functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id")]
pub enum SyntheticFunction {
    /// `10 x1 x2 + sum_{i>=3} x_i`
    F1,
    /// `x1 x2 + sum_{i>=3} x_i`
    F2,
    /// `exp(|x1 + x2|) + sum_{i>=3} x_i`
    F3,
    /// `10 x1 x2 x3 + sum_{i>=4} x_i`
    F4,
    #[serde(rename = "quad_large_p")]
    QuadLargeP(QuadraticForm),
    #[serde(rename = "linear")]
    Linear { weights: Vec<f64>, bias: f64 },
    #[serde(rename = "constant")]
    Constant { p: usize, value: f64 },
}

impl SyntheticFunction {
    pub fn table_functions() -> [SyntheticFunction; 4] {
        [
            SyntheticFunction::F1,
            SyntheticFunction::F2,
            SyntheticFunction::F3,
            SyntheticFunction::F4,
        ]
    }

    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "F1" => Ok(SyntheticFunction::F1),
            "F2" => Ok(SyntheticFunction::F2),
            "F3" => Ok(SyntheticFunction::F3),
            "F4" => Ok(SyntheticFunction::F4),
            "quad_large_p" => Ok(SyntheticFunction::QuadLargeP(
                super::large_p::generate_form(100, 5, 0.025, 0)?.0,
            )),
            other => Err(Error::config(format!(
                "unknown builtin {other:?} (expected F1|F2|F3|F4|quad_large_p)"
            ))),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            SyntheticFunction::F1 => "F1",
            SyntheticFunction::F2 => "F2",
            SyntheticFunction::F3 => "F3",
            SyntheticFunction::F4 => "F4",
            SyntheticFunction::QuadLargeP(_) => "quad_large_p",
            SyntheticFunction::Linear { .. } => "linear",
            SyntheticFunction::Constant { .. } => "constant",
        }
    }

    pub fn p(&self) -> usize {
        match self {
            SyntheticFunction::F1 | SyntheticFunction::F2 | SyntheticFunction::F3 | SyntheticFunction::F4 => 10,
            SyntheticFunction::QuadLargeP(q) => q.p(),
            SyntheticFunction::Linear { weights, .. } => weights.len(),
            SyntheticFunction::Constant { p, .. } => *p,
        }
    }

    /// Ground-truth interaction index sets (0-based).
    pub fn truth(&self) -> Vec<Vec<usize>> {
        match self {
            SyntheticFunction::F1 | SyntheticFunction::F2 | SyntheticFunction::F3 => vec![vec![0, 1]],
            SyntheticFunction::F4 => vec![vec![0, 1, 2]],
            SyntheticFunction::QuadLargeP(q) => q.truth_pairs(),
            SyntheticFunction::Linear { .. } | SyntheticFunction::Constant { .. } => Vec::new(),
        }
    }

    /// The isolated interaction term.
    pub fn interaction(&self, x: &[f64]) -> f64 {
        match self {
            SyntheticFunction::F1 => 10.0 * x[0] * x[1],
            SyntheticFunction::F2 => x[0] * x[1],
            SyntheticFunction::F3 => (x[0] + x[1]).abs().exp(),
            SyntheticFunction::F4 => 10.0 * x[0] * x[1] * x[2],
            SyntheticFunction::QuadLargeP(q) => {
                let p = q.p();
                let mut s = 0.0;
                for i in 0..p {
                    if x[i] == 0.0 {
                        continue;
                    }
                    for j in 0..p {
                        if i != j {
                            s += q.w_at(i, j) * x[i] * x[j];
                        }
                    }
                }
                s
            }
            SyntheticFunction::Linear { .. } | SyntheticFunction::Constant { .. } => 0.0,
        }
    }

    /// Everything except the interaction term.
    pub fn additive(&self, x: &[f64]) -> f64 {
        match self {
            SyntheticFunction::F1 | SyntheticFunction::F2 | SyntheticFunction::F3 => x[2..10].iter().sum(),
            SyntheticFunction::F4 => x[3..10].iter().sum(),
            SyntheticFunction::QuadLargeP(q) => {
                let p = q.p();
                (0..p).map(|i| q.beta[i] * x[i] + q.w_at(i, i) * x[i] * x[i]).sum()
            }
            SyntheticFunction::Linear { weights, bias } => {
                bias + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            }
            SyntheticFunction::Constant { value, .. } => *value,
        }
    }

    /// `(f(x), interaction term)`.
    pub fn eval_truth(&self, x: &[f64]) -> Result<(f64, f64)> {
        if x.len() != self.p() {
            return Err(Error::InputShape {
                expected: self.p(),
                got: x.len(),
            });
        }
        let inter = self.interaction(x);
        Ok((self.additive(x) + inter, inter))
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        Ok(self.eval_truth(x)?.0)
    }
}
