//! Ground-truth benchmark: seeded base models, per-instance explanations and
//! their scores against the planted interaction.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::functions::SyntheticFunction;
use super::glm::{glm_pairwise_baseline, GlmConfig};
use crate::detector::r_precision;
use crate::error::{Error, Result};
use crate::gateway::{Encoding, PredictorHandle};
use crate::hierarchy::{explain_with_data, ExplainConfig, HierarchicalExplanation, StageRuntimes};
use crate::metrics::weighted_r2;
use crate::nnkit::{self, Network, NetworkConfig, WeightedData};
use crate::rng::{derive_seed, rng_from_seed};
use crate::sampler::{Instance, Metric, SamplerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseModelConfig {
    pub hidden: Vec<usize>,
    pub n_train: usize,
    pub n_val: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
}

impl Default for BaseModelConfig {
    fn default() -> Self {
        BaseModelConfig {
            hidden: vec![50, 50, 50],
            n_train: 20_000,
            n_val: 4000,
            learning_rate: 2e-3,
            max_epochs: 200,
            patience: 20,
            batch_size: 256,
        }
    }
}

/// Minimum training R² for a usable base model.
pub fn min_train_r2(f: &SyntheticFunction) -> f64 {
    match f {
        SyntheticFunction::F3 => 0.8,
        _ => 0.9,
    }
}

fn uniform_rows(n: usize, p: usize, half_width: f64, rng: &mut crate::rng::Rng) -> Array2<f64> {
    Array2::from_shape_fn((n, p), |_| rng.random_range(-half_width..=half_width))
}

/// Trains a regression network on `f` over uniform `[-1, 1]^p`; returns it
/// with its training R².
pub fn train_base_model(f: &SyntheticFunction, cfg: &BaseModelConfig, seed: u64) -> Result<(Network, f64)> {
    let p = f.p();
    let mut rng = rng_from_seed(derive_seed(seed, "base_data", 0));
    let mut make = |n: usize| -> Result<WeightedData> {
        let x = uniform_rows(n, p, 1.0, &mut rng);
        let y = x
            .rows()
            .into_iter()
            .map(|r| f.eval(r.as_slice().expect("standard layout")))
            .collect::<Result<Array1<f64>>>()?;
        WeightedData::unweighted(x, y)
    };
    let train = make(cfg.n_train)?;
    let val = make(cfg.n_val)?;
    let mut sizes = vec![p];
    sizes.extend(&cfg.hidden);
    sizes.push(1);
    let net_cfg = NetworkConfig {
        learning_rate: cfg.learning_rate,
        max_epochs: cfg.max_epochs,
        patience: cfg.patience,
        seed: derive_seed(seed, "base_init", 0),
        batch_size: Some(cfg.batch_size),
        ..NetworkConfig::new(sizes)
    };
    let (net, _) = nnkit::train(&net_cfg, &train, &val)?;
    let pred = net.forward(train.x.view())?;
    let r2 = weighted_r2(
        pred.as_slice().expect("contiguous"),
        train.y.as_slice().expect("contiguous"),
        train.w.as_slice().expect("contiguous"),
    );
    Ok((net, r2))
}

/// Standardised interaction-fit error; `standardized` is false when the true
/// term is constant over the probes and `value` is the raw MSE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StdMse {
    pub value: f64,
    pub standardized: bool,
}

/// Residual of `v` after least squares on an intercept plus the columns
/// `set` of `points`.
fn remove_affine(points: &Array2<f64>, set: &[usize], v: &[f64]) -> Result<Vec<f64>> {
    let n = v.len();
    let z = DMatrix::from_fn(n, set.len() + 1, |i, j| if j == 0 { 1.0 } else { points[[i, set[j - 1]]] });
    let y = DVector::from_column_slice(v);
    let coef = z
        .clone()
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| Error::Numerical(format!("affine projection failed: {e}")))?;
    Ok((y - z * coef).iter().copied().collect())
}

/// Draws `probes` points uniformly in the σ-ball around `x` and compares the
/// explanation's model of the true interaction set with the true term.
/// Both are reduced to their non-additive part over the probes by removing
/// the best affine fit in the set's features, since the linear surrogate
/// owns the first-order part. Without a level on the true set the
/// prediction is zero, which scores exactly 1.
pub fn std_mse(
    expl: &HierarchicalExplanation,
    f: &SyntheticFunction,
    x: &Instance,
    probes: usize,
    seed: u64,
) -> Result<StdMse> {
    if probes < 2 {
        return Err(Error::config("std_mse needs at least 2 probes"));
    }
    let Some(values) = x.values() else {
        return Err(Error::config("std_mse needs a continuous instance"));
    };
    let p = f.p();
    if values.len() != p {
        return Err(Error::InputShape { expected: p, got: values.len() });
    }
    let truth = f.truth();
    let [set] = truth.as_slice() else {
        return Err(Error::config("std_mse needs exactly one true interaction set"));
    };
    let sigma = expl.sigma();
    let mut rng = rng_from_seed(derive_seed(seed, "std_mse", 0));
    let mut points = Array2::zeros((probes, p));
    for mut row in points.rows_mut() {
        let dir: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let radius = sigma * rng.random::<f64>().powf(1.0 / p as f64);
        for j in 0..p {
            row[j] = values[j] + radius * dir[j] / norm;
        }
    }
    let true_term: Vec<f64> = points
        .rows()
        .into_iter()
        .map(|r| f.interaction(r.as_slice().expect("standard layout")))
        .collect();
    let predicted = expl.level_of(set).map(|k| expl.levels[k].eval(points.view()));
    score_interaction(&points, set, &true_term, predicted.as_deref())
}

/// Standardised MSE between the non-additive parts of `truth` and
/// `predicted` (zero when absent) over the probe `points`.
fn score_interaction(points: &Array2<f64>, set: &[usize], truth: &[f64], predicted: Option<&[f64]>) -> Result<StdMse> {
    let n = truth.len() as f64;
    let t = remove_affine(points, set, truth)?;
    let g = match predicted {
        Some(pred) => remove_affine(points, set, pred)?,
        None => vec![0.0; truth.len()],
    };
    let mse = t.iter().zip(&g).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
    let var = t.iter().map(|a| a * a).sum::<f64>() / n;
    Ok(if var > 1e-12 {
        StdMse {
            value: mse / var,
            standardized: true,
        }
    } else {
        log::warn!("true interaction is affine around the instance; reporting raw MSE");
        StdMse {
            value: mse,
            standardized: false,
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub function: SyntheticFunction,
    pub base_model: BaseModelConfig,
    pub trials: usize,
    pub instances_per_trial: usize,
    pub sigma: f64,
    pub n_samples: usize,
    pub probes: usize,
    /// Instances are drawn uniformly from `[-instance_range, instance_range]^p`.
    pub instance_range: f64,
    pub glm: Option<GlmConfig>,
    /// Template for every explanation; the sampler's size, σ and seed are
    /// overwritten per instance.
    pub explain: ExplainConfig,
    pub seed: u64,
}

impl BenchConfig {
    pub fn new(function: SyntheticFunction, seed: u64) -> Self {
        BenchConfig {
            function,
            base_model: BaseModelConfig::default(),
            trials: 10,
            instances_per_trial: 20,
            sigma: 0.6,
            n_samples: 1000,
            probes: 1000,
            instance_range: 0.8,
            glm: Some(GlmConfig::default()),
            explain: ExplainConfig::new(SamplerConfig::new(1000, 0.6, Metric::L2, seed)),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("sigma must be positive"));
        }
        if self.probes < 2 {
            return Err(Error::config("probes must be at least 2"));
        }
        if !(self.instance_range >= 0.0) {
            return Err(Error::config("instance_range must be non-negative"));
        }
        if self.function.truth().len() != 1 {
            return Err(Error::config("benchmark functions need exactly one true interaction set"));
        }
        Ok(())
    }

    fn explain_config(&self, trial: usize, instance: usize) -> ExplainConfig {
        let mut c = self.explain.clone();
        let idx = (trial * self.instances_per_trial + instance) as u64;
        c.sampler.n = self.n_samples;
        c.sampler.sigma = self.sigma;
        c.sampler.metric = Metric::L2;
        c.sampler.seed = derive_seed(self.seed, &format!("bench_explain/{}", self.function.id()), idx);
        c
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchRuntimes {
    pub explain: StageRuntimes,
    pub std_mse: f64,
    pub glm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub function_id: String,
    pub trial: usize,
    pub instance: usize,
    pub instance_location: Vec<f64>,
    pub r_precision: f64,
    pub std_mse: f64,
    pub std_mse_standardized: bool,
    /// Test MSE of the explanation at levels `0..=L`.
    pub per_level_metric: Vec<f64>,
    pub levels: usize,
    pub top_candidate: Option<Vec<usize>>,
    pub glm_test_mse: Option<f64>,
    pub glm_r_precision: Option<f64>,
    pub runtimes: BenchRuntimes,
}

impl BenchResult {
    /// Test MSE of the first interaction level, or the linear one if none.
    pub fn level1_metric(&self) -> f64 {
        self.per_level_metric.get(1).copied().unwrap_or(self.per_level_metric[0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialInfo {
    pub trial: usize,
    pub base_model_r2: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(v: &[f64]) -> Option<MeanStd> {
        if v.is_empty() {
            return None;
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / v.len() as f64;
        Some(MeanStd { mean, std: var.sqrt() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub trials: Vec<TrialInfo>,
    pub results: Vec<BenchResult>,
}

const CSV_HEADER: &str = "function,trial,instance,location,r_precision,std_mse,std_mse_standardized,levels,top_candidate,level_test_mse,glm_test_mse,glm_r_precision";

fn join<T: ToString>(v: &[T], sep: &str) -> String {
    v.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(sep)
}

impl BenchReport {
    pub fn r_precision(&self) -> Option<MeanStd> {
        MeanStd::of(&self.results.iter().map(|r| r.r_precision).collect::<Vec<_>>())
    }

    pub fn std_mse(&self) -> Option<MeanStd> {
        MeanStd::of(&self.results.iter().map(|r| r.std_mse).collect::<Vec<_>>())
    }

    /// Per-instance rows without runtimes, so reruns compare byte for byte.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.results {
            let opt = |v: Option<f64>| v.map(|a| a.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.function_id,
                r.trial,
                r.instance,
                join(&r.instance_location, ";"),
                r.r_precision,
                r.std_mse,
                r.std_mse_standardized,
                r.levels,
                r.top_candidate.as_deref().map(|c| join(c, ";")).unwrap_or_default(),
                join(&r.per_level_metric, ";"),
                opt(r.glm_test_mse),
                opt(r.glm_r_precision),
            ));
        }
        out
    }

    /// Summary with configuration, per-trial validity, aggregates and stage
    /// runtimes.
    pub fn to_json_value(&self) -> serde_json::Value {
        let stage = |get: fn(&BenchResult) -> f64| MeanStd::of(&self.results.iter().map(get).collect::<Vec<_>>());
        serde_json::json!({
            "config": self.config,
            "seed": self.config.seed,
            "trials": self.trials,
            "n_results": self.results.len(),
            "r_precision": self.r_precision(),
            "std_mse": self.std_mse(),
            "runtimes_seconds": {
                "sampling_inference": stage(|r| r.runtimes.explain.sampling_inference),
                "detection": stage(|r| r.runtimes.explain.detection),
                "linear_fit": stage(|r| r.runtimes.explain.linear_fit),
                "interaction_fits": stage(|r| r.runtimes.explain.interaction_fits),
                "explain_total": stage(|r| r.runtimes.explain.total()),
                "std_mse": stage(|r| r.runtimes.std_mse),
                "glm": stage(|r| r.runtimes.glm),
            },
            "results": self.results,
        })
    }
}

fn run_instance(
    cfg: &BenchConfig,
    model: &PredictorHandle,
    trial: usize,
    instance: usize,
    location: Vec<f64>,
) -> Result<BenchResult> {
    let f = &cfg.function;
    let x = Instance::continuous(location.clone());
    let ecfg = cfg.explain_config(trial, instance);
    let (expl, data) = explain_with_data(&x, model, &ecfg)?;
    let truth = f.truth();
    let r_prec = r_precision(&expl.ranking, &truth)?;

    let t = Instant::now();
    let fit = std_mse(&expl, f, &x, cfg.probes, ecfg.sampler.seed)?;
    let std_time = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let glm = match &cfg.glm {
        Some(g) => Some(glm_pairwise_baseline(&data, g)?),
        None => None,
    };
    let glm_time = t.elapsed().as_secs_f64();
    let glm_r_precision = match &glm {
        Some(g) if truth[0].len() == 2 => Some(r_precision(&g.ranking, &truth)?),
        _ => None,
    };

    Ok(BenchResult {
        function_id: f.id().to_string(),
        trial,
        instance,
        instance_location: location,
        r_precision: r_prec,
        std_mse: fit.value,
        std_mse_standardized: fit.standardized,
        per_level_metric: expl.per_level_fit.iter().map(|l| l.test_metric).collect(),
        levels: expl.level_count(),
        top_candidate: expl.ranking.first().map(|c| c.indices.clone()),
        glm_test_mse: glm.as_ref().map(|g| g.test_mse),
        glm_r_precision,
        runtimes: BenchRuntimes {
            explain: expl.runtimes,
            std_mse: std_time,
            glm: glm_time,
        },
    })
}

/// Runs the benchmark. Each trial trains its own base model and draws its
/// own instances from seeds derived from the master seed and the trial
/// index alone. Trials whose base model underfits are reported invalid and
/// contribute no results.
pub fn run_synthetic(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let f = &cfg.function;
    let id = f.id();
    let p = f.p();
    let threshold = min_train_r2(f);

    let models: Vec<Result<(Network, f64)>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| train_base_model(f, &cfg.base_model, derive_seed(cfg.seed, &format!("base_model/{id}"), t as u64)))
        .collect();

    let mut trials = Vec::with_capacity(cfg.trials);
    let mut jobs = Vec::new();
    let mut handles = Vec::new();
    for (t, m) in models.into_iter().enumerate() {
        let (net, r2) = m?;
        let valid = r2 >= threshold;
        trials.push(TrialInfo {
            trial: t,
            base_model_r2: r2,
            valid,
        });
        if !valid {
            log::warn!("trial {t}: base model underfits {id} (train R² {r2:.3} < {threshold}); excluded");
            continue;
        }
        let handle = PredictorHandle::network(net, Encoding::Dense);
        let mut rng = rng_from_seed(derive_seed(cfg.seed, &format!("bench_instances/{id}"), t as u64));
        let locations = uniform_rows(cfg.instances_per_trial, p, cfg.instance_range, &mut rng);
        for (i, row) in locations.rows().into_iter().enumerate() {
            jobs.push((handles.len(), t, i, row.to_vec()));
        }
        handles.push(handle);
    }

    let results = jobs
        .into_par_iter()
        .map(|(h, t, i, loc)| run_instance(cfg, &handles[h], t, i, loc))
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchReport {
        config: cfg.clone(),
        trials,
        results,
    })
}

#[cfg(test)]
mod tests;
