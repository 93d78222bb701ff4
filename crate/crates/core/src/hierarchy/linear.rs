use nalgebra::{DMatrix, DVector};
use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{test_metric, SurrogateData, Task};
use crate::error::{Error, Result};
use crate::nnkit::logistic;

pub const RIDGE_FALLBACK: f64 = 1e-6;

/// Level-0 surrogate `phi(x) = w.x + b` (a logit for classification).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSurrogate {
    pub w: Vec<f64>,
    pub b: f64,
    /// Test-split MSE (regression) or 1 - AUC (classification).
    pub fit_metric: f64,
    /// Test-split R^2; `None` for classification.
    pub fit_r2: Option<f64>,
    /// Weighted training loss.
    pub fit_loss: f64,
    pub ridge_fallback: bool,
}

impl LinearSurrogate {
    pub fn predict_row(&self, row: ArrayView1<f64>) -> f64 {
        self.b + self.w.iter().zip(row.iter()).map(|(w, x)| w * x).sum::<f64>()
    }
}

/// Solves `(A + ridge I_p) beta = c` by Cholesky; `None` if not positive
/// definite or the solution is not finite.
fn solve_spd(mut a: DMatrix<f64>, c: DVector<f64>, ridge: f64, ridge_dims: usize) -> Option<DVector<f64>> {
    for i in 0..ridge_dims {
        a[(i, i)] += ridge;
    }
    let sol = a.cholesky()?.solve(&c);
    sol.iter().all(|v| v.is_finite()).then_some(sol)
}

/// Weighted least squares with intercept on the given rows. Features are
/// centred at their weighted mean before solving. Returns `(w, b, ridged)`.
pub(crate) fn wls(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    w: ArrayView1<f64>,
    rows: &[usize],
) -> Result<(Vec<f64>, f64, bool)> {
    let p = x.ncols();
    let total: f64 = rows.iter().map(|&i| w[i]).sum();
    if rows.is_empty() || !(total > 0.0) {
        return Err(Error::Precondition("linear fit needs training rows with positive weight".into()));
    }
    let xm: Vec<f64> = (0..p)
        .map(|j| rows.iter().map(|&i| w[i] * x[[i, j]]).sum::<f64>() / total)
        .collect();
    let ym = rows.iter().map(|&i| w[i] * y[i]).sum::<f64>() / total;
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut c = DVector::<f64>::zeros(p);
    let mut z = vec![0.0; p];
    for &i in rows {
        for j in 0..p {
            z[j] = x[[i, j]] - xm[j];
        }
        let wi = w[i];
        let yi = y[i] - ym;
        for j in 0..p {
            let wz = wi * z[j];
            c[j] += wz * yi;
            for k in j..p {
                a[(j, k)] += wz * z[k];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            a[(j, k)] = a[(k, j)];
        }
    }
    let underdetermined = rows.len() < p + 1;
    let (beta, ridged) = match (!underdetermined).then(|| solve_spd(a.clone(), c.clone(), 0.0, p)).flatten() {
        Some(beta) => (beta, false),
        None => {
            // scale the ridge with the Gram matrix so it stays meaningful
            let ridge = RIDGE_FALLBACK * total;
            let beta = solve_spd(a, c, ridge, p)
                .ok_or_else(|| Error::Numerical("linear fit failed even with ridge".into()))?;
            (beta, true)
        }
    };
    let wv: Vec<f64> = beta.iter().copied().collect();
    let b = ym - wv.iter().zip(&xm).map(|(a, m)| a * m).sum::<f64>();
    Ok((wv, b, ridged))
}

/// Weighted logistic regression with soft labels by Newton iterations; a
/// tiny ridge keeps separable data finite.
pub(crate) fn weighted_logistic(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    w: ArrayView1<f64>,
    rows: &[usize],
) -> Result<(Vec<f64>, f64)> {
    let p = x.ncols();
    let d = p + 1;
    let total: f64 = rows.iter().map(|&i| w[i]).sum();
    if rows.is_empty() || !(total > 0.0) {
        return Err(Error::Precondition("logistic fit needs training rows with positive weight".into()));
    }
    let mut beta = DVector::<f64>::zeros(d);
    let mut zrow = DVector::<f64>::zeros(d);
    for _ in 0..100 {
        let mut h = DMatrix::<f64>::zeros(d, d);
        let mut g = DVector::<f64>::zeros(d);
        for &i in rows {
            for j in 0..p {
                zrow[j] = x[[i, j]];
            }
            zrow[p] = 1.0;
            let pr = logistic(beta.dot(&zrow));
            g.axpy(w[i] * (y[i] - pr), &zrow, 1.0);
            h.ger(w[i] * pr * (1.0 - pr), &zrow, &zrow, 1.0);
        }
        for j in 0..p {
            g[j] -= RIDGE_FALLBACK * total * beta[j];
        }
        let step = solve_spd(h, g, RIDGE_FALLBACK * total, p)
            .ok_or_else(|| Error::Numerical("logistic Newton step failed".into()))?;
        beta += &step;
        if step.amax() < 1e-10 {
            break;
        }
    }
    let wv: Vec<f64> = beta.iter().take(p).copied().collect();
    Ok((wv, beta[p]))
}

/// Fits the level-0 surrogate on the training split with kernel weights.
pub fn fit_linear(data: &SurrogateData) -> Result<LinearSurrogate> {
    let x = data.features.view();
    let (w, b, ridge_fallback) = match data.task {
        Task::Regression => wls(x, data.targets.view(), data.weights.view(), &data.split.train)?,
        Task::Classification => {
            let (w, b) = weighted_logistic(x, data.targets.view(), data.weights.view(), &data.split.train)?;
            (w, b, false)
        }
    };
    if ridge_fallback {
        log::warn!("linear surrogate is singular; used ridge {RIDGE_FALLBACK}");
    }
    let mut lin = LinearSurrogate {
        w,
        b,
        fit_metric: f64::NAN,
        fit_r2: None,
        fit_loss: f64::NAN,
        ridge_fallback,
    };
    let pred: Vec<f64> = x.rows().into_iter().map(|r| lin.predict_row(r)).collect();
    let m = test_metric(data, &pred);
    lin.fit_metric = m.metric;
    lin.fit_r2 = m.r2;
    lin.fit_loss = data.train_loss(&pred);
    Ok(lin)
}
