//! Level-wise surrogates: a linear level followed by interaction models
//! fitted on residuals, with a validation-based stopping rule.

mod linear;

use std::fmt::Write as _;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

pub use linear::{fit_linear, LinearSurrogate, RIDGE_FALLBACK};

use crate::detector::{self, DetectorConfig, InteractionCandidate, InteractionRanking};
use crate::error::{Error, Result};
use crate::gateway::{Head, PredictorHandle};
use crate::metrics::{auc, weighted_mse, weighted_r2};
use crate::nnkit::{self, Loss, Network, NetworkConfig, OutputActivation, Standardizer, TargetScaler, TrainReport, WeightedData};
use crate::rng::derive_seed;
use crate::sampler::{build_local_dataset, Instance, LocalDataset, SamplerConfig, Split};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logits.
pub const LOGIT_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification,
}

/// What the surrogate is fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    /// Outputs as returned.
    Raw,
    /// Logits of probability outputs; fitted as regression.
    Logit,
    /// Probabilities fitted through a logistic link.
    Probability,
}

impl TargetMode {
    pub fn for_head(head: Head, logit_space: bool) -> Self {
        match (head, logit_space) {
            (Head::Regression, _) => TargetMode::Raw,
            (Head::Probability, true) => TargetMode::Logit,
            (Head::Probability, false) => TargetMode::Probability,
        }
    }

    pub fn task(self) -> Task {
        match self {
            TargetMode::Probability => Task::Classification,
            _ => Task::Regression,
        }
    }

    pub fn transform(self, y: f64) -> f64 {
        match self {
            TargetMode::Logit => {
                let p = y.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
                (p / (1.0 - p)).ln()
            }
            _ => y,
        }
    }
}

/// A local dataset prepared for surrogate fitting.
#[derive(Debug, Clone)]
pub struct SurrogateData {
    pub features: Array2<f64>,
    pub targets: Array1<f64>,
    pub weights: Array1<f64>,
    pub split: Split,
    pub task: Task,
    pub target_mode: TargetMode,
    pub origin_features: Array1<f64>,
    /// Attribution baseline per feature: the vicinity mean, or all zeros
    /// (absent) for on/off representations.
    pub feature_means: Vec<f64>,
    pub baseline: Baseline,
}

/// Reference point attributions are measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Mean over the vicinity samples.
    VicinityMean,
    /// Every feature off: binary and token vicinities.
    Absent,
}

impl Baseline {
    pub fn for_instance(x: &Instance) -> Self {
        match x {
            Instance::Binary { .. } | Instance::TokenSequence { .. } => Baseline::Absent,
            _ => Baseline::VicinityMean,
        }
    }
}

impl SurrogateData {
    pub fn from_dataset(data: &LocalDataset, target_mode: TargetMode) -> Result<Self> {
        if data.split.train.is_empty() || data.split.val.is_empty() || data.split.test.is_empty() {
            return Err(Error::Precondition(format!(
                "n = {} is too small for a train/validation/test split",
                data.len()
            )));
        }
        if target_mode == TargetMode::Probability && data.outputs.iter().any(|y| !(0.0..=1.0).contains(y)) {
            return Err(Error::config("probability targets must lie in [0, 1]"));
        }
        let baseline = Baseline::for_instance(&data.origin);
        let feature_means = match baseline {
            Baseline::VicinityMean => data.features.mean_axis(Axis(0)).expect("non-empty vicinity").to_vec(),
            Baseline::Absent => vec![0.0; data.feature_count()],
        };
        Ok(SurrogateData {
            features: data.features.clone(),
            targets: data.outputs.mapv(|y| target_mode.transform(y)),
            weights: data.weights.clone(),
            split: data.split.clone(),
            task: target_mode.task(),
            target_mode,
            origin_features: data.origin_features.clone(),
            feature_means,
            baseline,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn p(&self) -> usize {
        self.features.ncols()
    }

    fn pick(&self, v: &[f64], rows: &[usize]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        (
            rows.iter().map(|&i| v[i]).collect(),
            rows.iter().map(|&i| self.targets[i]).collect(),
            rows.iter().map(|&i| self.weights[i]).collect(),
        )
    }

    /// Weighted squared error (regression) or weighted log-loss
    /// (classification, `pred` as logits) on the training split.
    pub fn train_loss(&self, pred: &[f64]) -> f64 {
        let (p, y, w) = self.pick(pred, &self.split.train);
        match self.task {
            Task::Regression => weighted_mse(&p, &y, &w),
            Task::Classification => {
                let total: f64 = w.iter().sum();
                p.iter()
                    .zip(&y)
                    .zip(&w)
                    .map(|((z, t), wi)| {
                        let sp = if *z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
                        wi * (sp - t * z)
                    })
                    .sum::<f64>()
                    / total
            }
        }
    }

    fn split_metric(&self, pred: &[f64], rows: &[usize]) -> SplitMetric {
        let (p, y, w) = self.pick(pred, rows);
        match self.task {
            Task::Regression => SplitMetric {
                metric: weighted_mse(&p, &y, &w),
                r2: Some(weighted_r2(&p, &y, &w)),
            },
            Task::Classification => {
                let labels: Vec<bool> = y.iter().map(|&t| t >= 0.5).collect();
                SplitMetric {
                    metric: auc(&p, &labels).map(|a| 1.0 - a).unwrap_or(f64::NAN),
                    r2: None,
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct SplitMetric {
    pub metric: f64,
    pub r2: Option<f64>,
}

pub(crate) fn test_metric(data: &SurrogateData, pred: &[f64]) -> SplitMetric {
    data.split_metric(pred, &data.split.test)
}

fn val_metric(data: &SurrogateData, pred: &[f64]) -> f64 {
    data.split_metric(pred, &data.split.val).metric
}

/// One interaction model `g'(x_I) = out_scale * net(standardised x_I) + out_shift`.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionModel {
    pub indices: Vec<usize>,
    pub strength: f64,
    pub net: Network,
    pub input_scaler: Standardizer,
    pub out_scale: f64,
    pub out_shift: f64,
    /// `g'` at the attribution baseline (vicinity mean of `g'`, or `g'` with
    /// every member absent); subtracted from attributions.
    pub reference: f64,
    /// Centred `g'` at the origin.
    pub attribution_at_origin: f64,
    pub train_report: TrainReport,
}

impl InteractionModel {
    /// Evaluates `g'` on full-width feature rows.
    pub fn eval(&self, features: ArrayView2<f64>) -> Vec<f64> {
        let sub = features.select(Axis(1), &self.indices);
        let xs = self.input_scaler.transform(sub.view());
        let raw = self.net.forward_raw(xs.view()).expect("shape checked at fit time");
        raw.iter().map(|z| self.out_scale * z + self.out_shift).collect()
    }

    pub fn eval_row(&self, row: ArrayView1<f64>) -> f64 {
        let m = row.to_owned().insert_axis(Axis(0));
        self.eval(m.view())[0]
    }

    /// `g'(row)` minus the reference value.
    pub fn centered(&self, row: ArrayView1<f64>) -> f64 {
        self.eval_row(row) - self.reference
    }

    /// Recomputes the reference value and the origin attribution. Against
    /// the absent baseline the attribution is the inclusion-exclusion sum
    /// of `g'` over member subsets switched to their origin values, which
    /// removes any additive part `g'` picked up from the residual.
    pub fn recenter(&mut self, features: ArrayView2<f64>, origin: ArrayView1<f64>, baseline: Baseline) {
        match baseline {
            Baseline::VicinityMean => {
                let all = self.eval(features);
                self.reference = all.iter().sum::<f64>() / all.len() as f64;
                self.attribution_at_origin = self.centered(origin);
            }
            Baseline::Absent => {
                let p = features.ncols();
                self.reference = self.eval_row(Array1::zeros(p).view());
                let m = self.indices.len();
                if m > MAX_EXACT_ORDER {
                    self.attribution_at_origin = self.centered(origin);
                    return;
                }
                let rows = Array2::from_shape_fn((1 << m, p), |(s, j)| match self.indices.iter().position(|&i| i == j) {
                    Some(b) if s >> b & 1 == 1 => origin[j],
                    _ => 0.0,
                });
                let vals = self.eval(rows.view());
                self.attribution_at_origin = vals
                    .iter()
                    .enumerate()
                    .map(|(s, v)| if (m - (s as u32).count_ones() as usize).is_multiple_of(2) { *v } else { -v })
                    .sum();
            }
        }
    }
}

impl InteractionModel {
    /// Top-order inclusion-exclusion coefficient of `g'` on `{0, 1}` member
    /// values: the pure interaction effect of switching every member on.
    pub fn interaction_coefficient(&self, p: usize) -> Option<f64> {
        let m = self.indices.len();
        if m > MAX_EXACT_ORDER {
            return None;
        }
        let rows = Array2::from_shape_fn((1 << m, p), |(s, j)| match self.indices.iter().position(|&i| i == j) {
            Some(b) if s >> b & 1 == 1 => 1.0,
            _ => 0.0,
        });
        let vals = self.eval(rows.view());
        Some(
            vals.iter()
                .enumerate()
                .map(|(s, v)| if (m - (s as u32).count_ones() as usize).is_multiple_of(2) { *v } else { -v })
                .sum(),
        )
    }

    /// The part of this level an edit negates: `g'` less its reference for
    /// continuous vicinities, and the pure interaction term
    /// `coefficient * prod x_i` for on/off representations.
    pub fn interaction_term(&self, features: ArrayView2<f64>, baseline: Baseline) -> Vec<f64> {
        let coefficient = match baseline {
            Baseline::Absent => self.interaction_coefficient(features.ncols()),
            Baseline::VicinityMean => None,
        };
        match coefficient {
            Some(d) => features
                .rows()
                .into_iter()
                .map(|r| d * self.indices.iter().map(|&i| r[i]).product::<f64>())
                .collect(),
            None => self.eval(features).into_iter().map(|g| g - self.reference).collect(),
        }
    }
}

/// Above this many members the absent-baseline attribution falls back to
/// `g'(origin) - g'(absent)`.
pub const MAX_EXACT_ORDER: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionNetConfig {
    pub hidden: Vec<usize>,
    pub l2_coeff: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: Option<usize>,
}

impl Default for InteractionNetConfig {
    fn default() -> Self {
        InteractionNetConfig {
            hidden: vec![30, 10],
            l2_coeff: 1e-5,
            learning_rate: 1e-3,
            max_epochs: 300,
            patience: 20,
            batch_size: Some(32),
        }
    }
}

/// Accept a level when it improves the validation metric of the last
/// accepted level by more than `min_improvement` (relative); stop after
/// `patience` consecutive levels that do not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingRule {
    pub min_improvement: f64,
    pub patience: usize,
    pub max_levels: Option<usize>,
    /// A validation MSE at or below `noise_floor` times the validation
    /// target variance is treated as exact; nothing improves on it.
    pub noise_floor: f64,
}

impl Default for StoppingRule {
    fn default() -> Self {
        StoppingRule {
            min_improvement: 0.10,
            patience: 2,
            max_levels: None,
            noise_floor: 1e-10,
        }
    }
}

impl StoppingRule {
    /// Relative improvement of `new` over `best` (both lower-is-better);
    /// zero when `best` is at or below `floor`.
    pub fn improvement(best: f64, new: f64, floor: f64) -> f64 {
        if !(best > floor) || !new.is_finite() {
            return 0.0;
        }
        (best - new) / best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainConfig {
    pub sampler: SamplerConfig,
    pub detector: DetectorConfig,
    pub interaction: InteractionNetConfig,
    pub stop: StoppingRule,
    /// Largest detected interaction order; defaults to `p`.
    pub max_order: Option<usize>,
    /// Explain probability heads in logit space.
    pub logit_space: bool,
    /// Refit every interaction model on updated residuals at each level.
    pub retrain_all: bool,
    /// Train the detector on the linear surrogate's residual (regression
    /// targets only).
    pub detect_on_residual: bool,
}

impl ExplainConfig {
    pub fn new(sampler: SamplerConfig) -> Self {
        ExplainConfig {
            sampler,
            detector: DetectorConfig::default(),
            interaction: InteractionNetConfig::default(),
            stop: StoppingRule::default(),
            max_order: None,
            logit_space: true,
            retrain_all: false,
            detect_on_residual: true,
        }
    }

    pub fn seed(&self) -> u64 {
        self.sampler.seed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelFit {
    pub level: usize,
    pub val_metric: f64,
    pub test_metric: f64,
    pub test_r2: Option<f64>,
    pub train_loss: f64,
}

/// Every level the stopping rule looked at, kept or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelAttempt {
    pub level: usize,
    pub indices: Vec<usize>,
    pub val_metric: f64,
    pub test_metric: f64,
    pub improvement: f64,
    pub accepted: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRuntimes {
    pub sampling_inference: f64,
    pub detection: f64,
    pub linear_fit: f64,
    pub interaction_fits: f64,
}

impl StageRuntimes {
    pub fn total(&self) -> f64 {
        self.sampling_inference + self.detection + self.linear_fit + self.interaction_fits
    }
}

#[derive(Debug, Clone)]
pub struct HierarchicalExplanation {
    pub origin: Instance,
    pub config: ExplainConfig,
    pub task: Task,
    pub target_mode: TargetMode,
    pub linear: LinearSurrogate,
    pub levels: Vec<InteractionModel>,
    /// Levels `0..=L`.
    pub per_level_fit: Vec<LevelFit>,
    pub level_trace: Vec<LevelAttempt>,
    pub ranking: Vec<InteractionCandidate>,
    pub origin_features: Vec<f64>,
    pub feature_means: Vec<f64>,
    pub baseline: Baseline,
    pub flags: Vec<String>,
    pub runtimes: StageRuntimes,
    pub queries: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributionKind {
    Linear,
    Interaction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub kind: AttributionKind,
    pub indices: Vec<usize>,
    pub score: f64,
    /// Interactions only: the sign is opposite to the summed linear scores
    /// of the member features.
    pub opposes_linear: Option<bool>,
}

pub const FLAG_NO_INTERACTIONS: &str = "no interactions detected";
pub const FLAG_RIDGE: &str = "linear fit used ridge fallback";

impl HierarchicalExplanation {
    /// Final interaction level count `L`.
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn sigma(&self) -> f64 {
        self.config.sampler.sigma
    }

    /// Surrogate output `phi_K` on feature rows.
    pub fn predict_level(&self, features: ArrayView2<f64>, k: usize) -> Vec<f64> {
        let mut out: Vec<f64> = features.rows().into_iter().map(|r| self.linear.predict_row(r)).collect();
        for m in &self.levels[..k.min(self.levels.len())] {
            for (o, g) in out.iter_mut().zip(m.eval(features)) {
                *o += g;
            }
        }
        out
    }

    pub fn predict(&self, features: ArrayView2<f64>) -> Vec<f64> {
        self.predict_level(features, self.levels.len())
    }

    pub fn linear_scores(&self) -> Vec<f64> {
        self.linear
            .w
            .iter()
            .zip(&self.origin_features)
            .zip(&self.feature_means)
            .map(|((w, x), m)| w * (x - m))
            .collect()
    }

    /// Position of the level modelling exactly `indices`, if any.
    pub fn level_of(&self, indices: &[usize]) -> Option<usize> {
        let mut want = indices.to_vec();
        want.sort_unstable();
        self.levels.iter().position(|m| m.indices == want)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let linear_scores = self.linear_scores();
        let levels: Vec<serde_json::Value> = self
            .levels
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let lin: f64 = m.indices.iter().map(|&i| linear_scores[i]).sum();
                serde_json::json!({
                    "level": k + 1,
                    "indices": m.indices,
                    "strength": m.strength,
                    "attribution": m.attribution_at_origin,
                    "opposes_linear": opposes(m.attribution_at_origin, lin),
                    "fit_metric": self.per_level_fit[k + 1].test_metric,
                    "fit_r2": self.per_level_fit[k + 1].test_r2,
                })
            })
            .collect();
        serde_json::json!({
            "origin": self.origin,
            "sigma": self.sigma(),
            "seed": self.config.seed(),
            "config": self.config,
            "task": self.task,
            "target_mode": self.target_mode,
            "linear": {
                "w": self.linear.w,
                "b": self.linear.b,
                "attribution": linear_scores,
                "fit_metric": self.linear.fit_metric,
                "fit_r2": self.linear.fit_r2,
                "ridge_fallback": self.linear.ridge_fallback,
            },
            "baseline": self.baseline,
            "levels": levels,
            "L": self.level_count(),
            "per_level_fit": self.per_level_fit,
            "level_trace": self.level_trace,
            "ranking": self.ranking.iter().map(|c| serde_json::json!({"indices": c.indices, "strength": c.strength})).collect::<Vec<_>>(),
            "flags": self.flags,
            "runtimes_s": self.runtimes,
            "queries": self.queries,
        })
    }

    /// Plot-ready rows: level, feature set, level fit metric, attribution.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("level\tindices\tfit_metric\tattribution\n");
        let fit0 = self.per_level_fit[0].test_metric;
        for (i, score) in self.linear_scores().iter().enumerate() {
            let _ = writeln!(s, "0\t{i}\t{fit0}\t{score}");
        }
        for (k, m) in self.levels.iter().enumerate() {
            let idx: Vec<String> = m.indices.iter().map(|i| i.to_string()).collect();
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}",
                k + 1,
                idx.join("-"),
                self.per_level_fit[k + 1].test_metric,
                m.attribution_at_origin
            );
        }
        s
    }

    /// Human-readable level summary.
    pub fn level_table(&self) -> String {
        let mut s = String::from("level  indices          attribution     fit\n");
        let _ = writeln!(s, "{:<6} {:<16} {:<15} {:.6e}", 0, "linear", "-", self.per_level_fit[0].test_metric);
        for (k, m) in self.levels.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:<6} {:<16} {:<15.6e} {:.6e}",
                k + 1,
                format!("{:?}", m.indices),
                m.attribution_at_origin,
                self.per_level_fit[k + 1].test_metric
            );
        }
        s
    }
}

fn opposes(score: f64, linear_sum: f64) -> bool {
    score * linear_sum < 0.0
}

/// Scores at `level`: per-feature linear terms, then the first `level`
/// interaction terms, all centred on the vicinity mean.
pub fn attribution(expl: &HierarchicalExplanation, level: usize) -> Result<Vec<Attribution>> {
    if level > expl.level_count() {
        return Err(Error::Range {
            what: "level",
            index: level,
            valid: format!("0..={}", expl.level_count()),
        });
    }
    let lin = expl.linear_scores();
    let mut out: Vec<Attribution> = lin
        .iter()
        .enumerate()
        .map(|(i, &score)| Attribution {
            kind: AttributionKind::Linear,
            indices: vec![i],
            score,
            opposes_linear: None,
        })
        .collect();
    for m in &expl.levels[..level] {
        let member_sum: f64 = m.indices.iter().map(|&i| lin[i]).sum();
        out.push(Attribution {
            kind: AttributionKind::Interaction,
            indices: m.indices.clone(),
            score: m.attribution_at_origin,
            opposes_linear: Some(opposes(m.attribution_at_origin, member_sum)),
        });
    }
    Ok(out)
}

/// Trains one interaction model on the residual `targets - current` using
/// only the candidate's columns.
fn train_interaction(
    data: &SurrogateData,
    current: &[f64],
    indices: &[usize],
    strength: f64,
    cfg: &InteractionNetConfig,
    seed: u64,
) -> Result<InteractionModel> {
    let sub = data.features.select(Axis(1), indices);
    let scaler = Standardizer::fit(sub.view(), &data.split.train);
    let xs = scaler.transform(sub.view());
    let mut sizes = vec![indices.len()];
    sizes.extend(&cfg.hidden);
    sizes.push(1);
    let base = NetworkConfig {
        output: OutputActivation::Identity,
        l2_coeff: cfg.l2_coeff,
        learning_rate: cfg.learning_rate,
        max_epochs: cfg.max_epochs,
        patience: cfg.patience,
        seed,
        batch_size: cfg.batch_size,
        ..NetworkConfig::new(sizes)
    };
    let current = Array1::from(current.to_vec());
    let part = |y: &Array1<f64>, rows: &[usize], offset: Option<&Array1<f64>>| -> Result<WeightedData> {
        let d = WeightedData::new(
            xs.select(Axis(0), rows),
            y.select(Axis(0), rows),
            data.weights.select(Axis(0), rows),
        )?;
        match offset {
            Some(o) => d.with_offset(o.select(Axis(0), rows)),
            None => Ok(d),
        }
    };
    let (train_rows, val_rows) = (&data.split.train, &data.split.val);

    let (net, report, out_scale, out_shift) = match data.task {
        Task::Regression => {
            let resid = &data.targets - &current;
            let ts = TargetScaler::fit(resid.view(), train_rows);
            let ys = resid.mapv(|v| ts.forward(v));
            let (net, report) = nnkit::train(&base, &part(&ys, train_rows, None)?, &part(&ys, val_rows, None)?)?;
            // least-squares calibration of the new term against the residual
            let u: Vec<f64> = net
                .forward_raw(xs.view())?
                .iter()
                .map(|z| ts.inverse(*z))
                .collect();
            let (alpha, beta) = calibrate(&u, resid.view(), data.weights.view(), train_rows);
            (net, report, alpha * ts.std, alpha * ts.mean + beta)
        }
        Task::Classification => {
            let cfg = NetworkConfig {
                loss: Some(Loss::LogLoss),
                ..base
            };
            let (net, report) = nnkit::train(
                &cfg,
                &part(&data.targets, train_rows, Some(&current))?,
                &part(&data.targets, val_rows, Some(&current))?,
            )?;
            (net, report, 1.0, 0.0)
        }
    };
    let mut model = InteractionModel {
        indices: indices.to_vec(),
        strength,
        net,
        input_scaler: scaler,
        out_scale,
        out_shift,
        reference: 0.0,
        attribution_at_origin: 0.0,
        train_report: report,
    };
    model.recenter(data.features.view(), data.origin_features.view(), data.baseline);
    Ok(model)
}

/// Weighted least-squares `(alpha, beta)` for `r ~ alpha u + beta`.
fn calibrate(u: &[f64], r: ArrayView1<f64>, w: ArrayView1<f64>, rows: &[usize]) -> (f64, f64) {
    let total: f64 = rows.iter().map(|&i| w[i]).sum();
    let um = rows.iter().map(|&i| w[i] * u[i]).sum::<f64>() / total;
    let rm = rows.iter().map(|&i| w[i] * r[i]).sum::<f64>() / total;
    let suu: f64 = rows.iter().map(|&i| w[i] * (u[i] - um) * (u[i] - um)).sum();
    let sur: f64 = rows.iter().map(|&i| w[i] * (u[i] - um) * (r[i] - rm)).sum();
    if suu > 1e-300 {
        let alpha = sur / suu;
        (alpha, rm - alpha * um)
    } else {
        (0.0, rm)
    }
}

fn level_seed(cfg: &ExplainConfig, level: usize, round: usize) -> u64 {
    derive_seed(cfg.seed(), "interaction", ((round as u64) << 32) | level as u64)
}

/// Adds the next level for `candidate` on the residual of the current
/// composite. Linear parameters are never touched. A training failure is
/// recorded in the level trace and the hierarchy is returned unchanged.
pub fn fit_level(
    expl: &HierarchicalExplanation,
    data: &SurrogateData,
    candidate: &InteractionCandidate,
    cfg: &ExplainConfig,
) -> Result<HierarchicalExplanation> {
    let mut indices = candidate.indices.clone();
    indices.sort_unstable();
    if expl.levels.iter().any(|m| m.indices == indices) {
        return Err(Error::Precondition(format!("interaction {indices:?} is already modelled")));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= data.p()) {
        return Err(Error::Range {
            what: "feature index",
            index: bad,
            valid: format!("0..{}", data.p()),
        });
    }
    let level = expl.levels.len() + 1;
    let mut out = expl.clone();
    let current = expl.predict(data.features.view());
    let trained = train_interaction(data, &current, &indices, candidate.strength, &cfg.interaction, level_seed(cfg, level, 0))
        .and_then(|model| {
            out.levels.push(model);
            if cfg.retrain_all && level > 1 {
                backfit(&mut out, data, cfg)?;
            }
            Ok(())
        });
    if let Err(e) = trained {
        log::warn!("level {level} ({indices:?}) failed: {e}");
        let mut unchanged = expl.clone();
        unchanged.level_trace.push(LevelAttempt {
            level,
            indices,
            val_metric: f64::NAN,
            test_metric: f64::NAN,
            improvement: 0.0,
            accepted: false,
            error: Some(e.to_string()),
        });
        return Ok(unchanged);
    }
    let pred = out.predict(data.features.view());
    let test = test_metric(data, &pred);
    out.per_level_fit.push(LevelFit {
        level,
        val_metric: val_metric(data, &pred),
        test_metric: test.metric,
        test_r2: test.r2,
        train_loss: data.train_loss(&pred),
    });
    Ok(out)
}

/// One backfitting pass over the earlier interaction models.
fn backfit(expl: &mut HierarchicalExplanation, data: &SurrogateData, cfg: &ExplainConfig) -> Result<()> {
    let round = expl.levels.len();
    for k in 0..round - 1 {
        let full = expl.predict(data.features.view());
        let own = expl.levels[k].eval(data.features.view());
        let without: Vec<f64> = full.iter().zip(&own).map(|(a, b)| a - b).collect();
        let old = &expl.levels[k];
        expl.levels[k] = train_interaction(
            data,
            &without,
            &old.indices,
            old.strength,
            &cfg.interaction,
            level_seed(cfg, k + 1, round),
        )?;
    }
    Ok(())
}

/// Linear level plus empty hierarchy.
pub fn base_explanation(origin: &Instance, data: &SurrogateData, cfg: &ExplainConfig) -> Result<HierarchicalExplanation> {
    let linear = fit_linear(data)?;
    let pred: Vec<f64> = data.features.rows().into_iter().map(|r| linear.predict_row(r)).collect();
    let level0 = LevelFit {
        level: 0,
        val_metric: val_metric(data, &pred),
        test_metric: linear.fit_metric,
        test_r2: linear.fit_r2,
        train_loss: linear.fit_loss,
    };
    let mut flags = Vec::new();
    if linear.ridge_fallback {
        flags.push(FLAG_RIDGE.to_string());
    }
    Ok(HierarchicalExplanation {
        origin: origin.clone(),
        config: cfg.clone(),
        task: data.task,
        target_mode: data.target_mode,
        linear,
        levels: Vec::new(),
        per_level_fit: vec![level0],
        level_trace: Vec::new(),
        ranking: Vec::new(),
        origin_features: data.origin_features.to_vec(),
        feature_means: data.feature_means.clone(),
        baseline: data.baseline,
        flags,
        runtimes: StageRuntimes::default(),
        queries: 0,
    })
}

/// Trains the detection network on the surrogate data and ranks
/// candidates. With `linear` given (regression tasks only) the network is
/// trained on the residual of the linear surrogate, so main effects do not
/// compete with interactions for the detector's capacity.
pub fn detect_interactions(
    data: &SurrogateData,
    linear: Option<&LinearSurrogate>,
    cfg: &ExplainConfig,
) -> Result<Option<InteractionRanking>> {
    let p = data.p();
    if p < 2 {
        return Ok(None);
    }
    let det_cfg = DetectorConfig {
        seed: derive_seed(cfg.seed(), "detector", 0),
        ..cfg.detector.clone()
    };
    let targets = match (linear, data.task) {
        (Some(lin), Task::Regression) => {
            let fitted: Array1<f64> = data.features.rows().into_iter().map(|r| lin.predict_row(r)).collect();
            &data.targets - &fitted
        }
        _ => data.targets.clone(),
    };
    let fit = detector::train_detector(
        data.features.view(),
        targets.view(),
        data.weights.view(),
        &data.split,
        &det_cfg,
    )?;
    let max_order = cfg.max_order.unwrap_or(p).clamp(2, p);
    Ok(Some(detector::detect_with(&fit.net, max_order, cfg.detector.aggregator)?))
}

/// Adds ranked candidates until the stopping rule fires and returns the
/// hierarchy truncated to the last accepted level.
pub fn grow(
    mut expl: HierarchicalExplanation,
    data: &SurrogateData,
    ranking: &[InteractionCandidate],
    cfg: &ExplainConfig,
) -> Result<HierarchicalExplanation> {
    let stop = &cfg.stop;
    let max_levels = stop.max_levels.unwrap_or(usize::MAX);
    let mut best = expl.per_level_fit[0].val_metric;
    let floor = match data.task {
        Task::Regression => {
            let val = &data.split.val;
            let (_, y, w) = data.pick(&data.targets.to_vec(), val);
            let mean = vec![y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>(); y.len()];
            stop.noise_floor * weighted_mse(&mean, &y, &w)
        }
        Task::Classification => stop.noise_floor,
    };
    let mut accepted_len = 0;
    let mut strikes = 0;
    for cand in ranking {
        if expl.levels.len() >= max_levels || strikes >= stop.patience {
            break;
        }
        let before = expl.levels.len();
        let next = fit_level(&expl, data, cand, cfg)?;
        if next.levels.len() == before {
            // failed level: recorded by fit_level, counts as a strike
            expl = next;
            strikes += 1;
            continue;
        }
        expl = next;
        let fit = expl.per_level_fit.last().unwrap().clone();
        let improvement = StoppingRule::improvement(best, fit.val_metric, floor);
        let accepted = improvement > stop.min_improvement;
        expl.level_trace.push(LevelAttempt {
            level: fit.level,
            indices: expl.levels.last().unwrap().indices.clone(),
            val_metric: fit.val_metric,
            test_metric: fit.test_metric,
            improvement,
            accepted,
            error: None,
        });
        if accepted {
            best = fit.val_metric;
            accepted_len = expl.levels.len();
            strikes = 0;
        } else {
            strikes += 1;
        }
    }
    expl.levels.truncate(accepted_len);
    expl.per_level_fit.truncate(accepted_len + 1);
    Ok(expl)
}

/// Full pipeline on an already-built vicinity.
pub fn explain_dataset(data: &LocalDataset, head: Head, cfg: &ExplainConfig) -> Result<HierarchicalExplanation> {
    let sdata = SurrogateData::from_dataset(data, TargetMode::for_head(head, cfg.logit_space))?;
    let t = Instant::now();
    let mut expl = base_explanation(&data.origin, &sdata, cfg)?;
    let linear_fit = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let residual_of = cfg.detect_on_residual.then_some(&expl.linear);
    let ranking = detect_interactions(&sdata, residual_of, cfg)?;
    let detection = t.elapsed().as_secs_f64();

    let candidates = ranking.map(|r| r.candidates).unwrap_or_default();
    let t = Instant::now();
    expl = grow(expl, &sdata, &candidates, cfg)?;
    let interaction_fits = t.elapsed().as_secs_f64();

    if candidates.is_empty() {
        expl.flags.push(FLAG_NO_INTERACTIONS.to_string());
    }
    expl.ranking = candidates;
    expl.runtimes = StageRuntimes {
        sampling_inference: 0.0,
        detection,
        linear_fit,
        interaction_fits,
    };
    log::debug!(
        "explained with L = {} of {} candidates",
        expl.level_count(),
        expl.ranking.len()
    );
    Ok(expl)
}

/// Samples the vicinity of `x`, queries `f` and builds the hierarchical
/// explanation. Also returns the vicinity.
pub fn explain_with_data(
    x: &Instance,
    f: &PredictorHandle,
    cfg: &ExplainConfig,
) -> Result<(HierarchicalExplanation, LocalDataset)> {
    let t = Instant::now();
    let q0 = f.queries();
    let data = build_local_dataset(x, f, &cfg.sampler)?;
    let sampling = t.elapsed().as_secs_f64();
    let mut expl = explain_dataset(&data, f.head(), cfg)?;
    expl.runtimes.sampling_inference = sampling;
    expl.queries = f.queries() - q0;
    Ok((expl, data))
}

pub fn explain(x: &Instance, f: &PredictorHandle, cfg: &ExplainConfig) -> Result<HierarchicalExplanation> {
    explain_with_data(x, f, cfg).map(|(e, _)| e)
}

/// Mean pairwise distance of a reference set.
pub fn mean_pairwise_distance(instances: &[Instance], metric: crate::sampler::Metric) -> Result<f64> {
    if instances.len() < 2 {
        return Err(Error::Precondition("need at least two reference instances".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..instances.len() {
        for j in i + 1..instances.len() {
            sum += crate::sampler::distance(&instances[i], &instances[j], metric)?;
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// `{0.4, 0.6, 0.8, 1.0} * sigma'` where `sigma'` is the mean pairwise
/// distance of the reference set.
pub fn sigma_grid(reference: &[Instance], metric: crate::sampler::Metric) -> Result<Vec<f64>> {
    let base = mean_pairwise_distance(reference, metric)?;
    Ok([0.4, 0.6, 0.8, 1.0].iter().map(|m| m * base).collect())
}

#[cfg(test)]
mod tests;
