//! Local-vicinity sampling around an instance, distance metrics and
//! Gaussian kernel weights.
//!
//! Every generated sample lies within `sigma` of the origin under the
//! configured metric. Continuous vicinities use a truncated isotropic normal
//! (rejection of the whole vector); binary and token vicinities flip a
//! uniformly drawn number of coordinates.

mod dataset;
mod distance;
mod instance;

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use dataset::{build_local_dataset, kernel_weights, LocalDataset, Split};
pub use distance::{cosine, distance, l2, levenshtein, Metric};
pub use instance::{Instance, InstanceKind};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, Rng};

/// Upper bound on draws spent on a single accepted sample.
pub const MAX_DRAWS_PER_SAMPLE: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n: usize,
    /// Vicinity scale; also the truncation radius.
    pub sigma: f64,
    pub metric: Metric,
    pub seed: u64,
    /// Maximum number of flipped coordinates for binary/token kinds. Derived
    /// from `sigma` when absent.
    pub max_flips: Option<usize>,
    /// Kernel width override; defaults to `sigma`.
    pub kernel_width: Option<f64>,
}

impl SamplerConfig {
    pub fn new(n: usize, sigma: f64, metric: Metric, seed: u64) -> Self {
        SamplerConfig {
            n,
            sigma,
            metric,
            seed,
            max_flips: None,
            kernel_width: None,
        }
    }

    pub fn kernel_width(&self) -> f64 {
        self.kernel_width.unwrap_or(self.sigma)
    }

    pub fn validate_for(&self, x: &Instance) -> Result<()> {
        x.validate()?;
        if self.n == 0 {
            return Err(Error::config("sample count n must be positive"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("sigma must be positive"));
        }
        if self.kernel_width.is_some_and(|w| !(w > 0.0)) {
            return Err(Error::config("kernel width must be positive"));
        }
        let ok = matches!(
            (x.kind(), self.metric),
            (InstanceKind::Continuous, Metric::L2)
                | (InstanceKind::Mixed, Metric::L2)
                | (InstanceKind::Binary, Metric::Cosine)
                | (InstanceKind::Binary, Metric::L2)
                | (InstanceKind::TokenSequence, Metric::Edit)
        );
        if !ok {
            return Err(Error::config(format!(
                "metric {:?} is not compatible with {:?} instances",
                self.metric,
                x.kind()
            )));
        }
        if let (InstanceKind::Binary, Some(k)) = (x.kind(), self.max_flips) {
            if k > x.len() {
                return Err(Error::config(format!("max_flips {k} exceeds feature count {}", x.len())));
            }
        }
        Ok(())
    }
}

/// How the flip budget was obtained; recorded with the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipRule {
    Explicit,
    /// Largest count whose worst-case cosine distance stays within sigma.
    CosineWorstCase,
    /// floor(sigma): each removed token costs one edit.
    EditFloor,
    /// floor(sigma^2): each flipped binary coordinate adds 1 to the squared l2.
    SquaredL2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipBudget {
    pub max_flips: usize,
    pub rule: FlipRule,
}

/// Worst cosine distance reachable from a binary vector with `ones` set bits
/// out of `p` by flipping exactly `k` coordinates.
fn worst_cosine_after_flips(p: usize, ones: usize, k: usize) -> f64 {
    let zeros = p - ones;
    let lo = k.saturating_sub(zeros);
    let hi = k.min(ones);
    let mut worst = 0.0f64;
    for off in lo..=hi {
        let on = k - off;
        let after = ones - off + on;
        let d = if k == 0 {
            0.0
        } else if ones == 0 || after == 0 {
            1.0
        } else {
            1.0 - (ones - off) as f64 / ((ones * after) as f64).sqrt()
        };
        worst = worst.max(d);
    }
    worst
}

pub fn resolve_flip_budget(x: &Instance, cfg: &SamplerConfig) -> Option<FlipBudget> {
    let flips_over = match x {
        Instance::Binary { values } => values.len(),
        Instance::Mixed { binary, .. } => binary.iter().filter(|&&b| b).count(),
        Instance::TokenSequence { tokens } => tokens.len(),
        Instance::Continuous { .. } => return None,
    };
    if let Some(k) = cfg.max_flips {
        return Some(FlipBudget {
            max_flips: k.min(flips_over),
            rule: FlipRule::Explicit,
        });
    }
    let budget = match (x, cfg.metric) {
        (Instance::Binary { values }, Metric::Cosine) => {
            let ones = values.iter().filter(|&&v| v == 1.0).count();
            let mut k = 0;
            while k < flips_over && worst_cosine_after_flips(flips_over, ones, k + 1) <= cfg.sigma {
                k += 1;
            }
            FlipBudget {
                max_flips: k,
                rule: FlipRule::CosineWorstCase,
            }
        }
        (Instance::TokenSequence { .. }, _) => FlipBudget {
            max_flips: (cfg.sigma.floor() as usize).min(flips_over),
            rule: FlipRule::EditFloor,
        },
        _ => FlipBudget {
            max_flips: ((cfg.sigma * cfg.sigma).floor() as usize).min(flips_over),
            rule: FlipRule::SquaredL2,
        },
    };
    Some(budget)
}

/// A perturbed instance plus the representation surrogates are fitted on.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub instance: Instance,
    /// Real values (continuous/binary/mixed) or on/off mask (tokens).
    pub representation: Vec<f64>,
    pub distance: f64,
}

fn sampler_rng(cfg: &SamplerConfig) -> Rng {
    rng_from_seed(derive_seed(cfg.seed, "vicinity", 0))
}

fn exhausted(what: &str) -> Error {
    Error::Sampling(format!(
        "no {what} sample within sigma after {MAX_DRAWS_PER_SAMPLE} draws; reduce p or increase sigma"
    ))
}

/// Truncated isotropic normal around `x` with per-coordinate std `sigma`.
///
/// Drawn as a uniform direction times a radius from the truncated radial
/// law: `t = r² / 2σ²` is Gamma(p/2, 1) restricted to `[0, 1/2]`, sampled by
/// proposing from the density `∝ t^(p/2 - 1)` there and accepting with
/// probability `e^-t` (never below `e^-1/2`).
pub fn sample_continuous(x: &Instance, cfg: &SamplerConfig) -> Result<Vec<Perturbation>> {
    let Instance::Continuous { values } = x else {
        return Err(Error::config("sample_continuous needs a continuous instance"));
    };
    if cfg.metric != Metric::L2 {
        return Err(Error::config("continuous sampling uses the l2 metric"));
    }
    cfg.validate_for(x)?;
    let mut rng = sampler_rng(cfg);
    let p = values.len();
    let half_p = p as f64 / 2.0;
    let mut out = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let t = loop {
            let u: f64 = rng.random();
            let t = 0.5 * u.powf(1.0 / half_p);
            if rng.random::<f64>() < (-t).exp() {
                break t;
            }
        };
        let r = cfg.sigma * (2.0 * t).sqrt();
        let dir = loop {
            let d: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                break d.into_iter().map(|v| v / norm).collect::<Vec<f64>>();
            }
        };
        let v: Vec<f64> = values.iter().zip(&dir).map(|(a, d)| a + r * d).collect();
        out.push(Perturbation {
            instance: Instance::Continuous { values: v.clone() },
            representation: v,
            distance: r,
        });
    }
    Ok(out)
}

fn draw_flips(rng: &mut Rng, positions: usize, max_flips: usize) -> Vec<usize> {
    let k = rng.random_range(0..=max_flips.min(positions));
    index::sample(rng, positions, k).into_vec()
}

/// Flips a uniformly drawn number of distinct coordinates.
pub fn sample_binary(x: &Instance, cfg: &SamplerConfig) -> Result<Vec<Perturbation>> {
    let Instance::Binary { values } = x else {
        return Err(Error::config("sample_binary needs a binary instance"));
    };
    cfg.validate_for(x)?;
    let budget = resolve_flip_budget(x, cfg).expect("binary instances have a flip budget");
    let mut rng = sampler_rng(cfg);
    let mut out = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let mut accepted = None;
        for _ in 0..MAX_DRAWS_PER_SAMPLE {
            let mut v = values.clone();
            for i in draw_flips(&mut rng, v.len(), budget.max_flips) {
                v[i] = 1.0 - v[i];
            }
            let d = match cfg.metric {
                Metric::Cosine => cosine(values, &v),
                _ => l2(values, &v),
            };
            if d <= cfg.sigma {
                accepted = Some((v, d));
                break;
            }
        }
        let (v, d) = accepted.ok_or_else(|| exhausted("binary"))?;
        out.push(Perturbation {
            instance: Instance::Binary { values: v.clone() },
            representation: v,
            distance: d,
        });
    }
    Ok(out)
}

/// Masks tokens off by the binary scheme; the representation is the on/off
/// mask and the instance is the sequence with masked tokens removed.
pub fn sample_tokens(x: &Instance, cfg: &SamplerConfig) -> Result<Vec<Perturbation>> {
    let Instance::TokenSequence { tokens } = x else {
        return Err(Error::config("sample_tokens needs a token sequence"));
    };
    cfg.validate_for(x)?;
    let budget = resolve_flip_budget(x, cfg).expect("token sequences have a flip budget");
    let mut rng = sampler_rng(cfg);
    let mut out = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let mut accepted = None;
        for _ in 0..MAX_DRAWS_PER_SAMPLE {
            let mut mask = vec![1.0; tokens.len()];
            for i in draw_flips(&mut rng, tokens.len(), budget.max_flips) {
                mask[i] = 0.0;
            }
            let kept = apply_mask(tokens, &mask);
            let d = levenshtein(tokens, &kept) as f64;
            if d <= cfg.sigma {
                accepted = Some((mask, kept, d));
                break;
            }
        }
        let (mask, kept, d) = accepted.ok_or_else(|| exhausted("token"))?;
        out.push(Perturbation {
            instance: Instance::TokenSequence { tokens: kept },
            representation: mask,
            distance: d,
        });
    }
    Ok(out)
}

pub fn apply_mask(tokens: &[String], mask: &[f64]) -> Vec<String> {
    tokens
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m != 0.0)
        .map(|(t, _)| t.clone())
        .collect()
}

/// Continuous coordinates get uniform offsets in `[-sigma, sigma]`, binary
/// coordinates are flipped; samples outside the l2 ball are redrawn.
pub fn sample_mixed(x: &Instance, cfg: &SamplerConfig) -> Result<Vec<Perturbation>> {
    let Instance::Mixed { values, binary } = x else {
        return Err(Error::config("sample_mixed needs a mixed instance"));
    };
    cfg.validate_for(x)?;
    let budget = resolve_flip_budget(x, cfg).expect("mixed instances have a flip budget");
    let binary_idx: Vec<usize> = (0..values.len()).filter(|&i| binary[i]).collect();
    let mut rng = sampler_rng(cfg);
    let mut out = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let mut accepted = None;
        for _ in 0..MAX_DRAWS_PER_SAMPLE {
            let mut v = values.clone();
            for (i, vi) in v.iter_mut().enumerate() {
                if !binary[i] {
                    *vi += rng.random_range(-cfg.sigma..=cfg.sigma);
                }
            }
            for j in draw_flips(&mut rng, binary_idx.len(), budget.max_flips) {
                let i = binary_idx[j];
                v[i] = 1.0 - v[i];
            }
            let d = l2(values, &v);
            if d <= cfg.sigma {
                accepted = Some((v, d));
                break;
            }
        }
        let (v, d) = accepted.ok_or_else(|| exhausted("mixed"))?;
        out.push(Perturbation {
            instance: Instance::Mixed {
                values: v.clone(),
                binary: binary.clone(),
            },
            representation: v,
            distance: d,
        });
    }
    Ok(out)
}

pub fn sample_vicinity(x: &Instance, cfg: &SamplerConfig) -> Result<Vec<Perturbation>> {
    match x.kind() {
        InstanceKind::Continuous => sample_continuous(x, cfg),
        InstanceKind::Binary => sample_binary(x, cfg),
        InstanceKind::Mixed => sample_mixed(x, cfg),
        InstanceKind::TokenSequence => sample_tokens(x, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Upper critical values of chi-square at alpha = 0.01.
    fn chi2_crit_001(df: usize) -> f64 {
        match df {
            9 => 21.666,
            10 => 23.209,
            _ => panic!("no table entry for df {df}"),
        }
    }

    fn chi_square_uniform(counts: &[usize]) -> f64 {
        let total: usize = counts.iter().sum();
        let expected = total as f64 / counts.len() as f64;
        counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
    }

    #[test]
    fn tiny_sigma_keeps_samples_on_origin() {
        let x = Instance::continuous(vec![0.3; 10]);
        let cfg = SamplerConfig::new(20, 1e-9, Metric::L2, 1);
        for s in sample_continuous(&x, &cfg).unwrap() {
            assert!(l2(&s.representation, x.values().unwrap()) <= 1e-9);
        }
    }

    #[test]
    fn continuous_truncation_and_mean() {
        let origin = vec![0.5, -0.2, 0.0, 1.0, 0.1, 0.0, -0.7, 0.3, 0.0, 0.9];
        let x = Instance::continuous(origin.clone());
        let cfg = SamplerConfig::new(1000, 0.6, Metric::L2, 42);
        let samples = sample_continuous(&x, &cfg).unwrap();
        assert_eq!(samples.len(), 1000);
        let max_d = samples.iter().map(|s| s.distance).fold(0.0, f64::max);
        assert!(max_d <= 0.6);
        for j in 0..10 {
            let col: Vec<f64> = samples.iter().map(|s| s.representation[j]).collect();
            let mean = col.iter().sum::<f64>() / 1000.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 999.0;
            let se = (var / 1000.0).sqrt();
            assert!((mean - origin[j]).abs() <= 3.0 * se + 1e-12, "coord {j}");
        }
    }

    #[test]
    fn continuous_is_deterministic() {
        let x = Instance::continuous(vec![0.0; 4]);
        let cfg = SamplerConfig::new(50, 0.5, Metric::L2, 9);
        assert_eq!(sample_continuous(&x, &cfg).unwrap(), sample_continuous(&x, &cfg).unwrap());
    }

    #[test]
    fn high_dimension_stays_in_ball() {
        let x = Instance::continuous(vec![0.0; 60]);
        let cfg = SamplerConfig::new(200, 0.5, Metric::L2, 1);
        let samples = sample_continuous(&x, &cfg).unwrap();
        for s in &samples {
            assert!(s.distance <= 0.5);
            assert!((l2(&s.representation, x.values().unwrap()) - s.distance).abs() < 1e-12);
        }
    }

    /// Two-sample Kolmogorov-Smirnov statistic.
    fn ks(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (mut i, mut j, mut d) = (0, 0, 0.0f64);
        while i < a.len() && j < b.len() {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
        }
        d
    }

    #[test]
    fn radii_match_a_rejection_oracle() {
        use rand::SeedableRng;
        for p in [1usize, 3, 5] {
            let x = Instance::continuous(vec![0.0; p]);
            let cfg = SamplerConfig::new(4000, 0.7, Metric::L2, 11);
            let ours: Vec<f64> = sample_continuous(&x, &cfg).unwrap().iter().map(|s| s.distance).collect();
            let mut rng = rand::rngs::StdRng::seed_from_u64(99);
            let mut oracle = Vec::new();
            while oracle.len() < 4000 {
                let r2: f64 = (0..p).map(|_| (0.7 * rng.sample::<f64, _>(StandardNormal)).powi(2)).sum();
                if r2 <= 0.49 {
                    oracle.push(r2.sqrt());
                }
            }
            // alpha = 0.01 critical value for n = m = 4000
            let crit = 1.628 * (2.0f64 / 4000.0).sqrt();
            let d = ks(ours, oracle);
            assert!(d < crit, "p {p}: ks {d} >= {crit}");
        }
    }

    #[test]
    fn zero_flips_reproduce_origin() {
        let x = Instance::binary(vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        let mut cfg = SamplerConfig::new(30, 1.0, Metric::Cosine, 3);
        cfg.max_flips = Some(0);
        for s in sample_binary(&x, &cfg).unwrap() {
            assert_eq!(s.instance, x);
        }
    }

    #[test]
    fn flip_counts_uniform() {
        let mut values = vec![0.0; 36];
        for i in (0..36).step_by(4) {
            values[i] = 1.0;
        }
        let x = Instance::binary(values.clone()).unwrap();
        let mut cfg = SamplerConfig::new(10_000, 1.0, Metric::Cosine, 5);
        cfg.max_flips = Some(9);
        let mut counts = [0usize; 10];
        for s in sample_binary(&x, &cfg).unwrap() {
            let diff = s.representation.iter().zip(&values).filter(|(a, b)| a != b).count();
            assert!(diff <= 9);
            counts[diff] += 1;
        }
        assert!(chi_square_uniform(&counts) < chi2_crit_001(9), "{counts:?}");
    }

    #[test]
    fn single_bit_instance() {
        let x = Instance::binary(vec![1.0]).unwrap();
        let mut cfg = SamplerConfig::new(200, 1.0, Metric::Cosine, 5);
        cfg.max_flips = Some(1);
        let mut seen = [false; 2];
        for s in sample_binary(&x, &cfg).unwrap() {
            seen[s.representation[0] as usize] = true;
        }
        assert!(seen[0] && seen[1]);
    }

    #[test]
    fn derived_cosine_budget_respects_sigma() {
        let mut values = vec![0.0; 36];
        values[..9].fill(1.0);
        let x = Instance::binary(values).unwrap();
        let cfg = SamplerConfig::new(2000, 0.35, Metric::Cosine, 8);
        let budget = resolve_flip_budget(&x, &cfg).unwrap();
        assert_eq!(budget.rule, FlipRule::CosineWorstCase);
        assert_eq!(budget.max_flips, 5);
        for s in sample_binary(&x, &cfg).unwrap() {
            assert!(s.distance <= 0.35);
        }
    }

    #[test]
    fn all_on_mask_is_original() {
        let x = Instance::sentence("this is not bad").unwrap();
        let kept = apply_mask(x.token_list().unwrap(), &[1.0; 4]);
        assert_eq!(kept, x.token_list().unwrap());
        let kept = apply_mask(x.token_list().unwrap(), &[1.0, 0.0, 1.0, 1.0]);
        assert_eq!(kept.join(" "), "this not bad");
        assert_eq!(levenshtein(x.token_list().unwrap(), &kept), 1);
    }

    #[test]
    fn token_masks_uniform_and_within_budget() {
        let x = Instance::sentence("a b c d e f g h i j k l").unwrap();
        let mut cfg = SamplerConfig::new(10_000, 10.0, Metric::Edit, 2);
        cfg.max_flips = Some(9);
        let mut counts = [0usize; 10];
        for s in sample_tokens(&x, &cfg).unwrap() {
            let off = s.representation.iter().filter(|&&m| m == 0.0).count();
            assert_eq!(s.distance, off as f64);
            counts[off] += 1;
        }
        assert!(chi_square_uniform(&counts) < chi2_crit_001(9), "{counts:?}");
    }

    #[test]
    fn token_budget_from_sigma() {
        let x = Instance::sentence("a b c d e f").unwrap();
        let cfg = SamplerConfig::new(500, 2.5, Metric::Edit, 2);
        assert_eq!(resolve_flip_budget(&x, &cfg).unwrap().max_flips, 2);
        for s in sample_tokens(&x, &cfg).unwrap() {
            assert!(s.distance <= 2.5);
        }
    }

    #[test]
    fn mixed_within_ball() {
        let x = Instance::Mixed {
            values: vec![0.2, 1.0, -0.5, 0.0],
            binary: vec![false, true, false, true],
        };
        let cfg = SamplerConfig::new(300, 1.2, Metric::L2, 4);
        let samples = sample_mixed(&x, &cfg).unwrap();
        assert!(samples.iter().all(|s| s.distance <= 1.2));
        assert!(samples
            .iter()
            .any(|s| s.representation[1] != 1.0 || s.representation[3] != 0.0));
    }

    #[test]
    fn incompatible_metric_rejected() {
        let x = Instance::continuous(vec![0.0; 3]);
        let cfg = SamplerConfig::new(10, 0.5, Metric::Edit, 0);
        assert!(cfg.validate_for(&x).is_err());
        let b = Instance::binary(vec![1.0, 0.0]).unwrap();
        let mut cfg = SamplerConfig::new(10, 0.5, Metric::Cosine, 0);
        cfg.max_flips = Some(3);
        assert!(cfg.validate_for(&b).is_err());
    }
}
