//! Evidence that an interaction is context-free: its attribution keeps one
//! sign across separated instances, and editing the model at a single
//! instance flips that sign everywhere.

use std::fmt::Write as _;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{Head, PredictorHandle};
use crate::hierarchy::{explain_with_data, ExplainConfig, HierarchicalExplanation, TargetMode};
use crate::nnkit::{fine_tune, FineTuneConfig, Loss, Optimizer, OutputActivation, WeightedData};
use crate::rng::derive_seed;
use crate::sampler::{Instance, LocalDataset};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InteractionPattern {
    /// A fixed feature index set.
    Positional { indices: Vec<usize> },
    /// Token values that must occur in this order, with any gap.
    ValuedOrdered { tokens: Vec<String> },
}

impl InteractionPattern {
    pub fn positional(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        if indices.is_empty() || indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("positional pattern needs distinct indices"));
        }
        Ok(InteractionPattern::Positional { indices })
    }

    pub fn valued_ordered<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self> {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.len() < 2 {
            return Err(Error::config("valued pattern needs at least two tokens"));
        }
        Ok(InteractionPattern::ValuedOrdered { tokens })
    }

    /// Parses `not,bad` as a valued pattern and `#0,1` as positional.
    pub fn parse(text: &str) -> Result<Self> {
        if let Some(rest) = text.strip_prefix('#') {
            let indices = rest
                .split(',')
                .map(|t| t.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::config(format!("pattern {text:?}: {e}")))?;
            Self::positional(indices)
        } else {
            Self::valued_ordered(text.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()))
        }
    }

    pub fn label(&self) -> String {
        match self {
            InteractionPattern::Positional { indices } => {
                format!("{{{}}}", indices.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", "))
            }
            InteractionPattern::ValuedOrdered { tokens } => format!("({})", tokens.join(", ")),
        }
    }
}

/// Positions of the pattern in `x`, or `None` when it does not occur.
/// Valued patterns take the leftmost in-order occurrence of each token.
pub fn match_pattern(pattern: &InteractionPattern, x: &Instance) -> Option<Vec<usize>> {
    match pattern {
        InteractionPattern::Positional { indices } => {
            let p = x.len();
            indices.iter().all(|&i| i < p).then(|| indices.clone())
        }
        InteractionPattern::ValuedOrdered { tokens } => {
            let seq = x.token_list()?;
            let mut out = Vec::with_capacity(tokens.len());
            let mut from = 0;
            for t in tokens {
                let at = from + seq[from..].iter().position(|s| s == t)?;
                out.push(at);
                from = at + 1;
            }
            Some(out)
        }
    }
}

/// Per-instance outcome of a polarity scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub index: usize,
    pub matched: Option<Vec<usize>>,
    /// 1-based level whose feature set equals the match, if any.
    pub level: Option<usize>,
    pub attribution: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarityReport {
    pub pattern: InteractionPattern,
    pub n_instances: usize,
    pub n_matched: usize,
    pub n_detected: usize,
    /// `None` when nothing was detected.
    pub fraction_positive: Option<f64>,
    pub fraction_negative: Option<f64>,
    /// Average number of positions between consecutive matched tokens.
    pub mean_separation: Option<f64>,
    /// Mean pairwise distance of the matched instances.
    pub mean_pairwise_distance: Option<f64>,
    pub sigma: f64,
    /// Matched instances are on average further apart than sigma.
    pub separated: bool,
    pub records: Vec<InstanceRecord>,
}

impl PolarityReport {
    pub fn detected(&self) -> impl Iterator<Item = &InstanceRecord> {
        self.records.iter().filter(|r| r.level.is_some())
    }
}

fn instance_config(cfg: &ExplainConfig, index: usize) -> ExplainConfig {
    let mut c = cfg.clone();
    c.sampler.seed = derive_seed(cfg.seed(), "polarity", index as u64);
    c
}

fn recoverable(e: &Error) -> bool {
    matches!(
        e,
        Error::Predictor { .. }
            | Error::Numerical(_)
            | Error::Divergence { .. }
            | Error::Sampling(_)
    )
}

fn scan_one(
    pattern: &InteractionPattern,
    index: usize,
    x: &Instance,
    f: &PredictorHandle,
    cfg: &ExplainConfig,
) -> Result<InstanceRecord> {
    let mut rec = InstanceRecord {
        index,
        matched: match_pattern(pattern, x),
        level: None,
        attribution: None,
        error: None,
    };
    let Some(matched) = rec.matched.clone() else {
        return Ok(rec);
    };
    match explain_with_data(x, f, &instance_config(cfg, index)) {
        Ok((expl, _)) => {
            // first level whose set equals the match
            if let Some(k) = expl.level_of(&matched) {
                let a = expl.levels[k].attribution_at_origin;
                if a != 0.0 {
                    rec.level = Some(k + 1);
                    rec.attribution = Some(a);
                }
            }
        }
        Err(e) if recoverable(&e) => {
            log::warn!("polarity scan: instance {index}: {e}");
            rec.error = Some(e.to_string());
        }
        Err(e) => return Err(e),
    }
    Ok(rec)
}

/// Explains every instance that matches `pattern` and records the sign of
/// the matched interaction's attribution.
pub fn polarity_scan(
    pattern: &InteractionPattern,
    instances: &[Instance],
    f: &PredictorHandle,
    cfg: &ExplainConfig,
) -> Result<PolarityReport> {
    let records = instances
        .par_iter()
        .enumerate()
        .map(|(i, x)| scan_one(pattern, i, x, f, cfg))
        .collect::<Result<Vec<_>>>()?;

    let matched: Vec<&InstanceRecord> = records.iter().filter(|r| r.matched.is_some()).collect();
    let detected: Vec<f64> = records.iter().filter_map(|r| r.attribution).collect();
    let n_detected = detected.len();
    let pos = detected.iter().filter(|&&a| a > 0.0).count();
    let (fraction_positive, fraction_negative) = if n_detected == 0 {
        (None, None)
    } else {
        let fp = pos as f64 / n_detected as f64;
        (Some(fp), Some(1.0 - fp))
    };

    let gaps: Vec<f64> = matched
        .iter()
        .filter_map(|r| r.matched.as_ref())
        .filter(|m| m.len() >= 2)
        .map(|m| m.windows(2).map(|w| w[1].abs_diff(w[0]) as f64 - 1.0).sum::<f64>() / (m.len() - 1) as f64)
        .collect();
    let mean_separation = (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64);

    let sigma = cfg.sampler.sigma;
    let matched_instances: Vec<Instance> = matched.iter().map(|r| instances[r.index].clone()).collect();
    let mean_pairwise_distance = if matched_instances.len() >= 2 {
        Some(crate::hierarchy::mean_pairwise_distance(&matched_instances, cfg.sampler.metric)?)
    } else {
        None
    };
    let separated = mean_pairwise_distance.is_some_and(|d| d > sigma);
    if mean_pairwise_distance.is_some() && !separated {
        log::warn!(
            "matched instances are not separated beyond sigma = {sigma} (mean distance {:?})",
            mean_pairwise_distance
        );
    }
    Ok(PolarityReport {
        pattern: pattern.clone(),
        n_instances: instances.len(),
        n_matched: matched.len(),
        n_detected,
        fraction_positive,
        fraction_negative,
        mean_separation,
        mean_pairwise_distance,
        sigma,
        separated,
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditConfig {
    /// Negation magnitude: the edited term is `-c g'_k`.
    pub c: f64,
    pub fine_tune_steps: usize,
    pub fine_tune_lr: f64,
    pub batch_size: Option<usize>,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for EditConfig {
    fn default() -> Self {
        EditConfig {
            c: 3.0,
            fine_tune_steps: 1000,
            fine_tune_lr: 3e-3,
            batch_size: Some(64),
            optimizer: Optimizer::Sgd,
            seed: 0,
        }
    }
}

impl EditConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::config(format!("edit c must be positive, got {}", self.c)));
        }
        if self.fine_tune_steps > 0 && !(self.fine_tune_lr > 0.0) {
            return Err(Error::config("fine-tune learning rate must be positive"));
        }
        Ok(())
    }
}

/// The vicinity relabelled by the surrogate with level `k`'s interaction
/// term negated. Level terms are only identified up to a constant, so the
/// negated term is the centred one (see `InteractionModel::interaction_term`).
#[derive(Debug, Clone)]
pub struct ModifiedDataset {
    pub k: usize,
    pub c: f64,
    pub samples: Vec<Instance>,
    pub features: Array2<f64>,
    /// Surrogate output `phi_K` with every level intact.
    pub original: Vec<f64>,
    /// `phi_K - (1 + c) t_k`: the level-k interaction term `t_k` replaced
    /// by `-c t_k`.
    pub targets: Vec<f64>,
    /// `t_k` at every sample.
    pub term: Vec<f64>,
    pub weights: Array1<f64>,
    pub target_mode: TargetMode,
}

pub fn negate_interaction(
    expl: &HierarchicalExplanation,
    k: usize,
    cfg: &EditConfig,
    data: &LocalDataset,
) -> Result<ModifiedDataset> {
    cfg.validate()?;
    if k == 0 || k > expl.level_count() {
        return Err(Error::Range {
            what: "level",
            index: k,
            valid: format!("1..={}", expl.level_count()),
        });
    }
    let x = data.features.view();
    let original = expl.predict(x);
    let term = expl.levels[k - 1].interaction_term(x, expl.baseline);
    let targets = original.iter().zip(&term).map(|(phi, t)| phi - (1.0 + cfg.c) * t).collect();
    Ok(ModifiedDataset {
        k,
        c: cfg.c,
        samples: data.samples.clone(),
        features: data.features.clone(),
        original,
        targets,
        term,
        weights: data.weights.clone(),
        target_mode: expl.target_mode,
    })
}

/// Fine-tunes a copy of `f` towards the modified surrogate outputs with the
/// kernel weights. Logistic networks match logits.
pub fn edit_model(f: &PredictorHandle, dtilde: &ModifiedDataset, cfg: &EditConfig) -> Result<PredictorHandle> {
    cfg.validate()?;
    let net = f
        .network_ref()
        .ok_or_else(|| Error::Capability(format!("{} is not tunable; only toolkit networks can be edited", f.describe())))?;
    let loss = match (net.output_activation(), dtilde.target_mode) {
        (OutputActivation::Logistic, TargetMode::Raw) => Loss::SquaredError,
        (OutputActivation::Logistic, _) => Loss::RawSquaredError,
        (OutputActivation::Identity, _) => Loss::SquaredError,
    };
    let x = f.encode(&dtilde.samples)?;
    let data = WeightedData::new(x, Array1::from(dtilde.targets.clone()), dtilde.weights.clone())?;
    let tuned = fine_tune(
        net,
        &data,
        &FineTuneConfig {
            steps: cfg.fine_tune_steps,
            learning_rate: cfg.fine_tune_lr,
            batch_size: cfg.batch_size,
            seed: derive_seed(cfg.seed, "edit", 0),
            loss: Some(loss),
            optimizer: cfg.optimizer,
        },
    )?;
    f.with_network(tuned)
}

/// Held-out task metric: accuracy for probability heads, MSE otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetric {
    pub name: String,
    pub before: f64,
    pub after: f64,
    /// `after - before`.
    pub delta: f64,
}

pub fn task_metric(f: &PredictorHandle, x: &[Instance], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Precondition("held-out set needs equally many instances and labels".into()));
    }
    let pred = f.predict_batch(x)?;
    Ok(match f.head() {
        Head::Probability => {
            pred.iter().zip(y).filter(|(p, t)| (**p >= 0.5) == (**t >= 0.5)).count() as f64 / y.len() as f64
        }
        Head::Regression => pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len() as f64,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ContextFreeEvidence {
    pub pattern: InteractionPattern,
    pub before: PolarityReport,
    pub after: Option<PolarityReport>,
    pub edited_instance_id: Option<usize>,
    pub edited_level: Option<usize>,
    pub edit: EditConfig,
    pub metric: Option<TaskMetric>,
    /// Nothing was detected before the edit.
    pub inconclusive: bool,
    #[serde(skip)]
    pub edited_model: Option<PredictorHandle>,
}

impl ContextFreeEvidence {
    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::json!({
            "pattern": self.pattern,
            "before": self.before,
            "after": self.after,
            "metric_delta": self.metric.as_ref().map(|m| m.delta),
            "metric": self.metric,
            "edited_instance_id": self.edited_instance_id,
            "edited_level": self.edited_level,
            "edit": self.edit,
            "inconclusive": self.inconclusive,
        })
    }

    /// One row: interaction, matches and share positive before, matches and
    /// share negative after.
    pub fn to_csv(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map(|v| v.to_string()).unwrap_or_else(|| "NA".into())
        }
        let mut s = String::from("interaction,n_s_before,frac_pos_before,n_s_after,frac_neg_after\n");
        let _ = writeln!(
            s,
            "\"{}\",{},{},{},{}",
            self.pattern.label(),
            self.before.n_matched,
            opt(self.before.fraction_positive),
            self.after.as_ref().map(|a| a.n_matched.to_string()).unwrap_or_else(|| "NA".into()),
            opt(self.after.as_ref().and_then(|a| a.fraction_negative)),
        );
        s
    }
}

/// Scans, edits at the instance with the strongest matched attribution,
/// and scans the edited model. `holdout` supplies labelled data for the
/// task-metric delta.
pub fn context_free_evidence(
    pattern: &InteractionPattern,
    instances: &[Instance],
    f: &PredictorHandle,
    cfg: &ExplainConfig,
    edit: &EditConfig,
    holdout: Option<(&[Instance], &[f64])>,
) -> Result<ContextFreeEvidence> {
    edit.validate()?;
    if !f.is_tunable() {
        return Err(Error::Capability(format!(
            "{} is not tunable; only toolkit networks can be edited",
            f.describe()
        )));
    }
    let n_matched = instances.iter().filter(|x| match_pattern(pattern, x).is_some()).count();
    if n_matched < 2 {
        return Err(Error::Precondition(format!(
            "need at least two instances matching {}, found {n_matched}",
            pattern.label()
        )));
    }
    let before = polarity_scan(pattern, instances, f, cfg)?;
    let target = before
        .detected()
        .max_by(|a, b| {
            let (x, y) = (a.attribution.unwrap().abs(), b.attribution.unwrap().abs());
            x.total_cmp(&y).then(b.index.cmp(&a.index))
        })
        .cloned();
    let Some(target) = target else {
        log::warn!("{} was never detected; evidence is inconclusive", pattern.label());
        return Ok(ContextFreeEvidence {
            pattern: pattern.clone(),
            before,
            after: None,
            edited_instance_id: None,
            edited_level: None,
            edit: edit.clone(),
            metric: None,
            inconclusive: true,
            edited_model: None,
        });
    };

    // same derived seed as the scan, so this reproduces its explanation
    let (expl, data) = explain_with_data(&instances[target.index], f, &instance_config(cfg, target.index))?;
    let k = target.level.expect("detected records carry a level");
    let dtilde = negate_interaction(&expl, k, edit, &data)?;
    let edited = edit_model(f, &dtilde, edit)?;
    let after = polarity_scan(pattern, instances, &edited, cfg)?;
    let metric = match holdout {
        Some((x, y)) => {
            let b = task_metric(f, x, y)?;
            let a = task_metric(&edited, x, y)?;
            Some(TaskMetric {
                name: match f.head() {
                    Head::Probability => "accuracy".into(),
                    Head::Regression => "mse".into(),
                },
                before: b,
                after: a,
                delta: a - b,
            })
        }
        None => None,
    };
    Ok(ContextFreeEvidence {
        pattern: pattern.clone(),
        inconclusive: before.n_detected == 0,
        before,
        after: Some(after),
        edited_instance_id: Some(target.index),
        edited_level: Some(k),
        edit: edit.clone(),
        metric,
        edited_model: Some(edited),
    })
}

#[cfg(test)]
mod tests;
