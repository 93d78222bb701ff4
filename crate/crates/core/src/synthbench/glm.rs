//! Lasso-regularised regression on the features plus every pairwise product,
//! fitted by accelerated proximal gradient on the kernel-weighted vicinity.

use serde::{Deserialize, Serialize};

use crate::detector::InteractionCandidate;
use crate::error::{Error, Result};
use crate::metrics::weighted_mse;
use crate::sampler::LocalDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmConfig {
    /// Penalty on standardised columns; `None` picks the best of a path by
    /// validation MSE.
    pub lambda: Option<f64>,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for GlmConfig {
    fn default() -> Self {
        GlmConfig {
            lambda: None,
            max_iter: 20_000,
            tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub intercept: f64,
    pub linear: Vec<f64>,
    /// `((i, j), coefficient)` for every `i < j`.
    pub pairwise: Vec<((usize, usize), f64)>,
    /// Pairs by `|coefficient|` descending; zero coefficients omitted.
    pub ranking: Vec<InteractionCandidate>,
    pub lambda: f64,
    pub val_mse: f64,
    pub test_mse: f64,
}

fn pairs(p: usize) -> Vec<(usize, usize)> {
    (0..p).flat_map(|i| (i + 1..p).map(move |j| (i, j))).collect()
}

fn design_row(x: &[f64], pairs: &[(usize, usize)], out: &mut Vec<f64>) {
    out.clear();
    out.extend_from_slice(x);
    out.extend(pairs.iter().map(|&(i, j)| x[i] * x[j]));
}

/// Weighted centred Gram system on standardised columns.
struct Problem {
    gram: Vec<f64>,
    cross: Vec<f64>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    ymean: f64,
    d: usize,
}

impl Problem {
    fn new(z: &[Vec<f64>], y: &[f64], w: &[f64]) -> Problem {
        let d = z[0].len();
        let total: f64 = w.iter().sum();
        let mut mean = vec![0.0; d];
        let mut ymean = 0.0;
        for ((row, &yi), &wi) in z.iter().zip(y).zip(w) {
            for k in 0..d {
                mean[k] += wi * row[k];
            }
            ymean += wi * yi;
        }
        mean.iter_mut().for_each(|m| *m /= total);
        ymean /= total;
        let mut scale = vec![0.0; d];
        for (row, &wi) in z.iter().zip(w) {
            for k in 0..d {
                scale[k] += wi * (row[k] - mean[k]).powi(2);
            }
        }
        scale.iter_mut().for_each(|s| {
            let sd = (*s / total).sqrt();
            *s = if sd > 0.0 { sd } else { 1.0 };
        });
        let mut gram = vec![0.0; d * d];
        let mut cross = vec![0.0; d];
        let mut u = vec![0.0; d];
        for ((row, &yi), &wi) in z.iter().zip(y).zip(w) {
            for k in 0..d {
                u[k] = (row[k] - mean[k]) / scale[k];
            }
            let wn = wi / total;
            for a in 0..d {
                cross[a] += wn * u[a] * (yi - ymean);
                for b in a..d {
                    gram[a * d + b] += wn * u[a] * u[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                gram[a * d + b] = gram[b * d + a];
            }
        }
        Problem {
            gram,
            cross,
            mean,
            scale,
            ymean,
            d,
        }
    }

    fn lipschitz(&self) -> f64 {
        // power iteration on the Gram matrix
        let d = self.d;
        let mut v = vec![1.0 / (d as f64).sqrt(); d];
        let mut lam = 0.0;
        for _ in 0..200 {
            let mut gv = vec![0.0; d];
            for a in 0..d {
                gv[a] = (0..d).map(|b| self.gram[a * d + b] * v[b]).sum();
            }
            let norm = gv.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 1.0;
            }
            lam = norm;
            v = gv.into_iter().map(|x| x / norm).collect();
        }
        lam.max(1e-12)
    }

    /// FISTA on `0.5 b'Gb - c'b + lambda |b|_1`.
    fn solve(&self, lambda: f64, max_iter: usize, tol: f64) -> Vec<f64> {
        let d = self.d;
        let step = 1.0 / self.lipschitz();
        let mut beta = vec![0.0; d];
        let mut yk = beta.clone();
        let mut t = 1.0f64;
        for _ in 0..max_iter {
            let mut next = vec![0.0; d];
            for a in 0..d {
                let grad = (0..d).map(|b| self.gram[a * d + b] * yk[b]).sum::<f64>() - self.cross[a];
                let v = yk[a] - step * grad;
                next[a] = v.signum() * (v.abs() - step * lambda).max(0.0);
            }
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let mut change = 0.0f64;
            for a in 0..d {
                let diff = next[a] - beta[a];
                change = change.max(diff.abs());
                yk[a] = next[a] + (t - 1.0) / t_next * diff;
            }
            beta = next;
            t = t_next;
            if change < tol {
                break;
            }
        }
        beta
    }

    /// Coefficients and intercept on the original columns.
    fn unscale(&self, beta: &[f64]) -> (Vec<f64>, f64) {
        let coef: Vec<f64> = beta.iter().zip(&self.scale).map(|(b, s)| b / s).collect();
        let intercept = self.ymean - coef.iter().zip(&self.mean).map(|(c, m)| c * m).sum::<f64>();
        (coef, intercept)
    }

    fn lambda_max(&self) -> f64 {
        self.cross.iter().fold(0.0f64, |m, c| m.max(c.abs()))
    }
}

fn split_mse(z: &[Vec<f64>], y: &[f64], w: &[f64], rows: &[usize], coef: &[f64], b: f64) -> f64 {
    let pred: Vec<f64> = rows
        .iter()
        .map(|&i| b + z[i].iter().zip(coef).map(|(a, c)| a * c).sum::<f64>())
        .collect();
    let ys: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
    let ws: Vec<f64> = rows.iter().map(|&i| w[i]).collect();
    weighted_mse(&pred, &ys, &ws)
}

/// Fits the pairwise-product lasso on the training split. The penalty is
/// given or chosen on the validation split; `test_mse` is the weighted
/// test-split MSE.
pub fn glm_pairwise_baseline(data: &LocalDataset, cfg: &GlmConfig) -> Result<GlmFit> {
    let p = data.feature_count();
    let n_train = data.split.train.len();
    let columns = p * (p - 1) / 2 + p;
    if columns > 10 * n_train {
        return Err(Error::Capability(format!(
            "pairwise baseline needs {columns} columns but only {n_train} training rows; reduce the feature count"
        )));
    }
    let pair_list = pairs(p);
    let mut buf = Vec::new();
    let z: Vec<Vec<f64>> = data
        .features
        .rows()
        .into_iter()
        .map(|r| {
            design_row(r.as_slice().expect("standard layout"), &pair_list, &mut buf);
            buf.clone()
        })
        .collect();
    let y = data.outputs.as_slice().expect("contiguous");
    let w = data.weights.as_slice().expect("contiguous");

    let train_z: Vec<Vec<f64>> = data.split.train.iter().map(|&i| z[i].clone()).collect();
    let train_y: Vec<f64> = data.split.train.iter().map(|&i| y[i]).collect();
    let train_w: Vec<f64> = data.split.train.iter().map(|&i| w[i]).collect();
    let problem = Problem::new(&train_z, &train_y, &train_w);

    let lambdas = match cfg.lambda {
        Some(l) => vec![l],
        None => {
            let lmax = problem.lambda_max().max(1e-12);
            [1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4].iter().map(|m| m * lmax).collect()
        }
    };
    let mut best: Option<(f64, f64, Vec<f64>, f64)> = None;
    for lambda in lambdas {
        let beta = problem.solve(lambda, cfg.max_iter, cfg.tol);
        let (coef, b) = problem.unscale(&beta);
        let val = split_mse(&z, y, w, &data.split.val, &coef, b);
        if best.as_ref().is_none_or(|(v, ..)| val < *v) {
            best = Some((val, lambda, coef, b));
        }
    }
    let (val_mse, lambda, coef, intercept) = best.expect("at least one penalty");
    let test_mse = split_mse(&z, y, w, &data.split.test, &coef, intercept);
    let pairwise: Vec<((usize, usize), f64)> = pair_list.iter().copied().zip(coef[p..].iter().copied()).collect();
    let mut ranking: Vec<InteractionCandidate> = pairwise
        .iter()
        .filter(|(_, c)| *c != 0.0)
        .map(|&((i, j), c)| InteractionCandidate {
            indices: vec![i, j],
            strength: c.abs(),
        })
        .collect();
    ranking.sort_by(|a, b| b.strength.total_cmp(&a.strength).then_with(|| a.indices.cmp(&b.indices)));
    Ok(GlmFit {
        intercept,
        linear: coef[..p].to_vec(),
        pairwise,
        ranking,
        lambda,
        val_mse,
        test_mse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::PredictorHandle;
    use crate::sampler::{build_local_dataset, Instance, Metric, SamplerConfig};
    use crate::synthbench::{QuadraticForm, SyntheticFunction};
    use nalgebra::{DMatrix, DVector};

    fn product_fn(p: usize, pairs: &[((usize, usize), f64)], beta: Vec<f64>) -> PredictorHandle {
        let mut w = vec![0.0; p * p];
        for &((i, j), c) in pairs {
            w[i * p + j] = c / 2.0;
            w[j * p + i] = c / 2.0;
        }
        PredictorHandle::builtin(SyntheticFunction::QuadLargeP(QuadraticForm {
            beta,
            w,
            k: 0,
            density: 0.0,
            seed: 0,
        }))
    }

    #[test]
    fn exact_product_is_recovered() {
        let p = 5;
        let f = product_fn(p, &[((0, 1), 1.0)], vec![0.0; p]);
        let x = Instance::continuous(vec![0.2, -0.3, 0.1, 0.0, 0.5]);
        let data = build_local_dataset(&x, &f, &SamplerConfig::new(500, 0.6, Metric::L2, 1)).unwrap();
        let fit = glm_pairwise_baseline(&data, &GlmConfig::default()).unwrap();
        for &((i, j), c) in &fit.pairwise {
            if (i, j) == (0, 1) {
                assert!((c - 1.0).abs() < 1e-2, "{c}");
            } else {
                assert!(c.abs() < 1e-2, "({i},{j}) {c}");
            }
        }
        assert_eq!(fit.ranking[0].indices, vec![0, 1]);
    }

    #[test]
    fn zero_targets_give_zero_coefficients() {
        let f = PredictorHandle::builtin(SyntheticFunction::Constant { p: 4, value: 0.0 });
        let x = Instance::continuous(vec![0.0; 4]);
        let data = build_local_dataset(&x, &f, &SamplerConfig::new(200, 0.6, Metric::L2, 1)).unwrap();
        for lambda in [1e-6, 1e-2, 1.0] {
            let fit = glm_pairwise_baseline(&data, &GlmConfig { lambda: Some(lambda), ..GlmConfig::default() }).unwrap();
            assert!(fit.linear.iter().all(|&c| c == 0.0));
            assert!(fit.pairwise.iter().all(|(_, c)| *c == 0.0));
            assert!(fit.ranking.is_empty());
        }
    }

    /// Weighted OLS on the expanded design as an independent oracle.
    fn wls_oracle(data: &LocalDataset) -> Vec<f64> {
        let p = data.feature_count();
        let pl = pairs(p);
        let rows = &data.split.train;
        let d = p + pl.len() + 1;
        let mut a = DMatrix::<f64>::zeros(rows.len(), d);
        let mut b = DVector::<f64>::zeros(rows.len());
        for (r, &i) in rows.iter().enumerate() {
            let x = data.features.row(i);
            let sw = data.weights[i].sqrt();
            a[(r, 0)] = sw;
            for j in 0..p {
                a[(r, 1 + j)] = sw * x[j];
            }
            for (k, &(u, v)) in pl.iter().enumerate() {
                a[(r, 1 + p + k)] = sw * x[u] * x[v];
            }
            b[r] = sw * data.outputs[i];
        }
        let sol = a.svd(true, true).solve(&b, 1e-14).unwrap();
        sol.iter().copied().collect()
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(12))]
        #[test]
        fn vanishing_penalty_matches_least_squares(p in 2usize..=4, seed in 0u64..1000, c in -2.0f64..2.0) {
            let beta: Vec<f64> = (0..p).map(|i| 0.3 * i as f64 - 0.4).collect();
            let f = product_fn(p, &[((0, p - 1), c)], beta);
            let x = Instance::continuous(vec![0.1; p]);
            let data = build_local_dataset(&x, &f, &SamplerConfig::new(300, 0.8, Metric::L2, seed)).unwrap();
            let fit = glm_pairwise_baseline(&data, &GlmConfig { lambda: Some(0.0), max_iter: 200_000, tol: 1e-15 }).unwrap();
            let oracle = wls_oracle(&data);
            proptest::prop_assert!((fit.intercept - oracle[0]).abs() < 1e-6);
            let ours: Vec<f64> = fit.linear.iter().copied().chain(fit.pairwise.iter().map(|(_, c)| *c)).collect();
            for (a, b) in ours.iter().zip(&oracle[1..]) {
                proptest::prop_assert!((a - b).abs() < 1e-6, "{} vs {}", a, b);
            }
        }
    }

    #[test]
    fn guard_rejects_wide_designs() {
        let f = PredictorHandle::builtin(SyntheticFunction::F1);
        let x = Instance::continuous(vec![0.0; 10]);
        let data = build_local_dataset(&x, &f, &SamplerConfig::new(5, 0.6, Metric::L2, 1)).unwrap();
        assert!(matches!(
            glm_pairwise_baseline(&data, &GlmConfig::default()),
            Err(Error::Capability(_))
        ));
    }
}
