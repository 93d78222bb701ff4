use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::functions::QuadraticForm;
use crate::detector::{pairwise_strengths, train_detector, Aggregator, DetectorConfig};
use crate::error::{Error, Result};
use crate::metrics::auc;
use crate::nnkit::TrainReport;
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::sampler::Split;

const MAX_REDRAWS: u64 = 1000;

/// Data drawn from a random quadratic form with its ground-truth pairs.
#[derive(Debug, Clone)]
pub struct LargePDataset {
    pub form: QuadraticForm,
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub truth: Vec<Vec<usize>>,
    /// Seed actually used for the form after degenerate redraws.
    pub form_seed: u64,
}

fn sparse_normal(p: usize, density: f64, rng: &mut Rng) -> Vec<f64> {
    (0..p)
        .map(|_| {
            if rng.random::<f64>() < density {
                StandardNormal.sample(rng)
            } else {
                0.0
            }
        })
        .collect()
}

impl QuadraticForm {
    /// `W = sum_k a_k a_k'`.
    pub fn from_factors(beta: Vec<f64>, factors: &[Vec<f64>], density: f64, seed: u64) -> Result<Self> {
        let p = beta.len();
        let mut w = vec![0.0; p * p];
        for a in factors {
            if a.len() != p {
                return Err(Error::InputShape { expected: p, got: a.len() });
            }
            for i in (0..p).filter(|&i| a[i] != 0.0) {
                for j in (0..p).filter(|&j| a[j] != 0.0) {
                    w[i * p + j] += a[i] * a[j];
                }
            }
        }
        Ok(QuadraticForm {
            beta,
            w,
            k: factors.len(),
            density,
            seed,
        })
    }
}

fn draw_form(p: usize, k: usize, density: f64, seed: u64) -> Result<QuadraticForm> {
    let mut rng = rng_from_seed(derive_seed(seed, "quad_form", 0));
    let beta = sparse_normal(p, density, &mut rng);
    let factors: Vec<Vec<f64>> = (0..k).map(|_| sparse_normal(p, density, &mut rng)).collect();
    QuadraticForm::from_factors(beta, &factors, density, seed)
}

/// Draws a form with at least one interacting pair; a degenerate draw is
/// retried with the next seed. Returns the form and the number of redraws.
pub fn generate_form(p: usize, k: usize, density: f64, seed: u64) -> Result<(QuadraticForm, u64)> {
    if p < 10 {
        return Err(Error::config(format!("large-p generator needs p >= 10, got {p}")));
    }
    if !(density > 0.0 && density <= 0.1) {
        return Err(Error::config(format!("density must be in (0, 0.1], got {density}")));
    }
    if k == 0 {
        return Err(Error::config("K must be positive"));
    }
    for attempt in 0..MAX_REDRAWS {
        let s = seed.wrapping_add(attempt);
        let form = draw_form(p, k, density, s)?;
        if !form.truth_pairs().is_empty() {
            return Ok((form, attempt));
        }
        log::info!("quadratic form with seed {s} has no interacting pairs; redrawing");
    }
    Err(Error::Sampling(format!(
        "no interacting pair after {MAX_REDRAWS} draws (p = {p}, density = {density})"
    )))
}

/// `X ~ N(0, I)`, `y = beta'x + x'Wx`.
pub fn gen_large_p(p: usize, n: usize, k: usize, density: f64, seed: u64) -> Result<LargePDataset> {
    let (form, redraws) = generate_form(p, k, density, seed)?;
    let mut rng = rng_from_seed(derive_seed(seed, "quad_data", 0));
    let x = Array2::from_shape_simple_fn((n, p), || StandardNormal.sample(&mut rng));
    let f = super::SyntheticFunction::QuadLargeP(form.clone());
    let y = x
        .rows()
        .into_iter()
        .map(|r| f.eval(r.as_slice().expect("row-major")))
        .collect::<Result<Vec<f64>>>()?;
    Ok(LargePDataset {
        truth: form.truth_pairs(),
        form_seed: seed.wrapping_add(redraws),
        form,
        x,
        y: Array1::from(y),
    })
}

/// Detector settings for whole-dataset detection with many features: the
/// wider 140-100-60-20 network, stronger sparsity and a longer patience.
/// The local 50-30-10 default stops on a plateau before it fits 100 inputs.
pub fn large_p_detector_config(seed: u64) -> DetectorConfig {
    DetectorConfig {
        hidden: vec![140, 100, 60, 20],
        l1_coeff: 3e-3,
        learning_rate: 1e-3,
        max_epochs: 500,
        patience: 50,
        seed,
        ..DetectorConfig::default()
    }
}

#[derive(Debug, Clone)]
pub struct LargePDetection {
    /// `(i, j, strength)` for every pair `i < j`.
    pub strengths: Vec<(usize, usize, f64)>,
    /// Ranking AUC of the strengths against the true pairs.
    pub auc: f64,
    pub report: TrainReport,
    pub seconds: f64,
}

/// Trains the detector on the whole dataset (80/10/10 split for early
/// stopping) and scores every pair.
pub fn large_p_detection(data: &LargePDataset, cfg: &DetectorConfig) -> Result<LargePDetection> {
    let t = std::time::Instant::now();
    let n = data.x.nrows();
    let split = Split::shuffled(n, derive_seed(cfg.seed, "large_p_split", 0));
    let w = Array1::ones(n);
    let fit = train_detector(data.x.view(), data.y.view(), w.view(), &split, cfg)?;
    let strengths = pairwise_strengths(&fit.net, Aggregator::Min)?;
    let scores: Vec<f64> = strengths.iter().map(|s| s.2).collect();
    let labels: Vec<bool> = strengths
        .iter()
        .map(|&(i, j, _)| data.truth.iter().any(|t| t[0] == i && t[1] == j))
        .collect();
    let auc = auc(&scores, &labels)?;
    Ok(LargePDetection {
        strengths,
        auc,
        report: fit.report,
        seconds: t.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_one_pair() {
        let mut a = vec![0.0; 10];
        a[0] = 1.0;
        a[1] = 1.0;
        let q = QuadraticForm::from_factors(vec![0.0; 10], &[a], 0.1, 0).unwrap();
        assert_eq!(q.truth_pairs(), vec![vec![0, 1]]);
        let f = super::super::SyntheticFunction::QuadLargeP(q);
        let mut x = vec![0.0; 10];
        x[0] = 2.0;
        x[1] = 3.0;
        // (x0 + x1)^2 = x0^2 + x1^2 + 2 x0 x1
        assert_eq!(f.eval_truth(&x).unwrap(), (25.0, 12.0));
    }

    #[test]
    fn nonzero_counts_within_binomial_bounds() {
        let (p, density) = (100usize, 0.025);
        let trials = 200;
        let mut count = 0usize;
        for s in 0..trials {
            let mut rng = rng_from_seed(s);
            count += sparse_normal(p, density, &mut rng).iter().filter(|v| **v != 0.0).count();
        }
        let n = (p * trials as usize) as f64;
        let mean = n * density;
        let sd = (n * density * (1.0 - density)).sqrt();
        assert!((count as f64 - mean).abs() <= 3.0 * sd, "{count} vs {mean}");
    }

    #[test]
    fn generator_is_deterministic_and_nondegenerate() {
        let a = gen_large_p(100, 50, 5, 0.025, 3).unwrap();
        let b = gen_large_p(100, 50, 5, 0.025, 3).unwrap();
        assert_eq!(a.y, b.y);
        assert!(!a.truth.is_empty());
        for t in &a.truth {
            assert!(t[0] < t[1] && a.form.w_at(t[0], t[1]) != 0.0);
        }
    }

    #[test]
    fn guards() {
        assert!(generate_form(5, 5, 0.025, 0).is_err());
        assert!(generate_form(100, 5, 0.5, 0).is_err());
        assert!(generate_form(100, 5, 0.0, 0).is_err());
    }

    #[test]
    fn degenerate_draws_are_redrawn() {
        // at this density most draws have no pair at all
        let (form, _) = generate_form(10, 1, 0.01, 0).unwrap();
        assert!(!form.truth_pairs().is_empty());
    }

    #[test]
    fn one_planted_pair_is_ranked_first() {
        let mut a = vec![0.0; 12];
        a[2] = 1.0;
        a[7] = -1.0;
        let form = QuadraticForm::from_factors(vec![0.0; 12], &[a], 0.1, 0).unwrap();
        let f = super::super::SyntheticFunction::QuadLargeP(form.clone());
        let mut rng = rng_from_seed(5);
        let x = Array2::from_shape_simple_fn((600, 12), || StandardNormal.sample(&mut rng));
        let y = x.rows().into_iter().map(|r| f.eval(r.as_slice().unwrap()).unwrap()).collect();
        let data = LargePDataset {
            truth: form.truth_pairs(),
            form,
            x,
            y,
            form_seed: 0,
        };
        let cfg = DetectorConfig {
            hidden: vec![20, 10],
            max_epochs: 150,
            ..large_p_detector_config(1)
        };
        let det = large_p_detection(&data, &cfg).unwrap();
        let best = det.strengths.iter().max_by(|a, b| a.2.total_cmp(&b.2)).unwrap();
        assert_eq!((best.0, best.1), (2, 7));
        assert_eq!(det.auc, 1.0);
    }
}
