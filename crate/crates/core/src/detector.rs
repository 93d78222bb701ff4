//! Interaction detection from the weights of an L1-regularised network.

use std::collections::BTreeMap;

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnkit::{self, Network, NetworkConfig, OutputActivation, Standardizer, TargetScaler, TrainReport, WeightedData};
use crate::sampler::Split;

/// How a unit's incoming weights over a feature set combine into one
/// strength.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    #[default]
    Min,
    Average,
}

impl Aggregator {
    fn combine(self, sorted_desc: &[f64]) -> f64 {
        match self {
            Aggregator::Min => *sorted_desc.last().unwrap(),
            Aggregator::Average => sorted_desc.iter().sum::<f64>() / sorted_desc.len() as f64,
        }
    }
}

impl std::str::FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" => Ok(Aggregator::Min),
            "average" => Ok(Aggregator::Average),
            other => Err(Error::config(format!("unknown aggregator {other:?} (expected min|average)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionCandidate {
    /// Ascending, distinct, at least two.
    pub indices: Vec<usize>,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRanking {
    pub candidates: Vec<InteractionCandidate>,
    pub p: usize,
    pub max_order: usize,
    pub aggregator: Aggregator,
    pub detector_net: Network,
}

fn round_sig(v: f64, digits: usize) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{:.*e}", digits - 1, v).parse().unwrap_or(v)
}

impl InteractionRanking {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn top(&self, k: usize) -> &[InteractionCandidate] {
        &self.candidates[..k.min(self.candidates.len())]
    }

    /// `[{indices, strength}]` with strengths at 9 significant digits.
    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::Value::Array(
            self.candidates
                .iter()
                .map(|c| serde_json::json!({"indices": c.indices, "strength": round_sig(c.strength, 9)}))
                .collect(),
        )
    }
}

/// `z = |w_out|' |W_m| ... |W_2|`, one entry per first-layer unit.
pub fn unit_influence(net: &Network) -> Result<Array1<f64>> {
    let layers = net.layers();
    if layers.len() < 2 {
        return Err(Error::Precondition("unit influence needs at least one hidden layer".into()));
    }
    let mut z = layers.last().unwrap().weights.row(0).mapv(f64::abs);
    for layer in layers[1..layers.len() - 1].iter().rev() {
        z = z.dot(&layer.weights.mapv(f64::abs));
    }
    Ok(z)
}

/// Features of one unit ordered by descending weight magnitude; equal
/// magnitudes keep ascending index order.
fn feature_order(row: ArrayView1<f64>) -> Vec<(usize, f64)> {
    let mut order: Vec<(usize, f64)> = row.iter().map(|w| w.abs()).enumerate().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    order
}

/// Strength order: descending strength, then smaller sets, then
/// lexicographic index order.
pub fn rank_order(a: &InteractionCandidate, b: &InteractionCandidate) -> std::cmp::Ordering {
    b.strength
        .total_cmp(&a.strength)
        .then(a.indices.len().cmp(&b.indices.len()))
        .then_with(|| a.indices.cmp(&b.indices))
}

struct BitSet(Vec<u64>);

impl BitSet {
    fn new(indices: &[usize], p: usize) -> Self {
        let mut words = vec![0u64; p.div_ceil(64).max(1)];
        for &i in indices {
            words[i / 64] |= 1 << (i % 64);
        }
        BitSet(words)
    }

    fn is_subset_of(&self, other: &BitSet) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a & !b == 0)
    }
}

pub fn detect(net: &Network, max_order: usize) -> Result<InteractionRanking> {
    detect_with(net, max_order, Aggregator::Min)
}

pub fn detect_with(net: &Network, max_order: usize, aggregator: Aggregator) -> Result<InteractionRanking> {
    let p = net.input_size();
    if max_order < 2 || max_order > p {
        return Err(Error::config(format!("max_order must be in [2, {p}], got {max_order}")));
    }
    let z = unit_influence(net)?;
    let w1 = &net.layers()[0].weights;
    let mut merged: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    for (j, row) in w1.axis_iter(Axis(0)).enumerate() {
        if z[j] == 0.0 {
            continue;
        }
        let order = feature_order(row);
        let mut mags = Vec::with_capacity(max_order);
        mags.push(order[0].1);
        for r in 2..=max_order {
            mags.push(order[r - 1].1);
            let strength = z[j] * aggregator.combine(&mags);
            if strength == 0.0 {
                // the min only shrinks with larger prefixes
                if aggregator == Aggregator::Min {
                    break;
                }
                continue;
            }
            let mut set: Vec<usize> = order[..r].iter().map(|e| e.0).collect();
            set.sort_unstable();
            *merged.entry(set).or_insert(0.0) += strength;
        }
    }
    let mut ranked: Vec<InteractionCandidate> = merged
        .into_iter()
        .map(|(indices, strength)| InteractionCandidate { indices, strength })
        .collect();
    ranked.sort_by(rank_order);

    let mut kept: Vec<InteractionCandidate> = Vec::new();
    let mut kept_bits: Vec<BitSet> = Vec::new();
    for c in ranked {
        let bits = BitSet::new(&c.indices, p);
        let nested = kept
            .iter()
            .zip(&kept_bits)
            .any(|(k, kb)| k.indices.len() > c.indices.len() && bits.is_subset_of(kb));
        if !nested {
            kept.push(c);
            kept_bits.push(bits);
        }
    }
    Ok(InteractionRanking {
        candidates: kept,
        p,
        max_order,
        aggregator,
        detector_net: net.clone(),
    })
}

/// Strength of every feature pair `(i, j)`, `i < j`, summed over all
/// first-layer units regardless of whether the pair is a top prefix.
pub fn pairwise_strengths(net: &Network, aggregator: Aggregator) -> Result<Vec<(usize, usize, f64)>> {
    let z = unit_influence(net)?;
    let w1 = net.layers()[0].weights.mapv(f64::abs);
    let p = w1.ncols();
    let mut out = Vec::with_capacity(p * (p - 1) / 2);
    for i in 0..p {
        for k in i + 1..p {
            let mut s = 0.0;
            for j in 0..w1.nrows() {
                let (a, b) = (w1[[j, i]], w1[[j, k]]);
                let pair = if a >= b { [a, b] } else { [b, a] };
                s += z[j] * aggregator.combine(&pair);
            }
            out.push((i, k, s));
        }
    }
    Ok(out)
}

/// Fraction of the top-`R` candidates that are true, `R = |truth|`.
pub fn r_precision(ranking: &[InteractionCandidate], truth: &[Vec<usize>]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::Precondition("R-precision needs at least one true interaction".into()));
    }
    let truth: Vec<Vec<usize>> = truth
        .iter()
        .map(|t| {
            let mut t = t.clone();
            t.sort_unstable();
            t
        })
        .collect();
    let r = truth.len();
    let hits = ranking.iter().take(r).filter(|c| truth.contains(&c.indices)).count();
    Ok(hits as f64 / r as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub hidden: Vec<usize>,
    pub l1_coeff: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub aggregator: Aggregator,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            hidden: vec![50, 30, 10],
            l1_coeff: 5e-4,
            learning_rate: 5e-3,
            max_epochs: 200,
            patience: 10,
            batch_size: Some(100),
            seed: 0,
            aggregator: Aggregator::Min,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DetectorFit {
    pub net: Network,
    pub report: TrainReport,
    pub scaler: Standardizer,
}

/// Trains the detection network on standardised inputs and targets with
/// per-sample loss weights.
pub fn train_detector(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    w: ArrayView1<f64>,
    split: &Split,
    cfg: &DetectorConfig,
) -> Result<DetectorFit> {
    let scaler = Standardizer::fit(x, &split.train);
    let xs = scaler.transform(x);
    let ts = TargetScaler::fit(y, &split.train);
    let ys = y.mapv(|v| ts.forward(v));
    let part = |rows: &[usize]| {
        WeightedData::new(xs.select(Axis(0), rows), ys.select(Axis(0), rows), w.select(Axis(0), rows))
    };
    let mut sizes = vec![x.ncols()];
    sizes.extend(&cfg.hidden);
    sizes.push(1);
    let net_cfg = NetworkConfig {
        output: OutputActivation::Identity,
        l1_coeff: cfg.l1_coeff,
        learning_rate: cfg.learning_rate,
        max_epochs: cfg.max_epochs,
        patience: cfg.patience,
        seed: cfg.seed,
        batch_size: cfg.batch_size,
        ..NetworkConfig::new(sizes)
    };
    let (net, report) = nnkit::train(&net_cfg, &part(&split.train)?, &part(&split.val)?)?;
    Ok(DetectorFit { net, report, scaler })
}
