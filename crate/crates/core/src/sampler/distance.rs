use serde::{Deserialize, Serialize};

use super::instance::Instance;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    L2,
    Cosine,
    Edit,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Metric::L2),
            "cosine" => Ok(Metric::Cosine),
            "edit" => Ok(Metric::Edit),
            other => Err(Error::config(format!("unknown metric {other:?} (expected l2|cosine|edit)"))),
        }
    }
}

pub fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `1 - cos(a, b)`; a zero vector is at distance 1 from anything it does
/// not equal.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    (1.0 - dot / (na * nb)).max(0.0)
}

/// Levenshtein distance with unit insert/delete/substitute costs.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ai) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, bj) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ai != bj);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn distance(a: &Instance, b: &Instance, metric: Metric) -> Result<f64> {
    if a.kind() != b.kind() {
        return Err(Error::Metric(format!(
            "cannot compare {:?} with {:?}",
            a.kind(),
            b.kind()
        )));
    }
    match (a, b, metric) {
        (Instance::TokenSequence { tokens: ta }, Instance::TokenSequence { tokens: tb }, Metric::Edit) => {
            Ok(levenshtein(ta, tb) as f64)
        }
        (Instance::TokenSequence { .. }, _, m) => Err(Error::Metric(format!(
            "token sequences use the edit metric, not {m:?}"
        ))),
        (_, _, Metric::Edit) => Err(Error::Metric("edit metric requires token sequences".into())),
        _ => {
            let (va, vb) = (a.values().unwrap(), b.values().unwrap());
            if va.len() != vb.len() {
                return Err(Error::Metric(format!(
                    "feature counts differ: {} vs {}",
                    va.len(),
                    vb.len()
                )));
            }
            Ok(match metric {
                Metric::L2 => l2(va, vb),
                Metric::Cosine => cosine(va, vb),
                Metric::Edit => unreachable!(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Full-table recurrence, kept deliberately naive.
    fn dp_oracle(a: &[u8], b: &[u8]) -> usize {
        let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in t.iter_mut().enumerate() {
            row[0] = i;
        }
        for j in 0..=b.len() {
            t[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
                t[i][j] = (t[i - 1][j] + 1).min(t[i][j - 1] + 1).min(t[i - 1][j - 1] + cost);
            }
        }
        t[a.len()][b.len()]
    }

    #[test]
    fn identical_instances_are_at_zero() {
        let c = Instance::continuous(vec![0.0, 0.0]);
        assert_eq!(distance(&c, &c, Metric::L2).unwrap(), 0.0);
        assert_eq!(distance(&c, &c, Metric::Cosine).unwrap(), 0.0);
        let t = Instance::sentence("a b c").unwrap();
        assert_eq!(distance(&t, &t, Metric::Edit).unwrap(), 0.0);
    }

    #[test]
    fn single_deletion() {
        let a = Instance::tokens(["a", "b"]).unwrap();
        let b = Instance::tokens(["a"]).unwrap();
        assert_eq!(distance(&a, &b, Metric::Edit).unwrap(), 1.0);
    }

    #[test]
    fn kind_mismatch_is_metric_error() {
        let a = Instance::continuous(vec![1.0]);
        let b = Instance::tokens(["x"]).unwrap();
        assert!(matches!(distance(&a, &b, Metric::L2), Err(Error::Metric(_))));
        assert!(matches!(distance(&a, &a, Metric::Edit), Err(Error::Metric(_))));
    }

    #[test]
    fn cosine_zero_vector_convention() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 1.0);
        assert!((cosine(&[1.0, 0.0], &[0.0, 1.0]) - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn matches_dp_oracle(a in prop::collection::vec(0u8..4, 0..12), b in prop::collection::vec(0u8..4, 0..12)) {
            prop_assert_eq!(levenshtein(&a, &b), dp_oracle(&a, &b));
        }

        #[test]
        fn metric_axioms(a in prop::collection::vec(0u8..3, 0..8),
                         b in prop::collection::vec(0u8..3, 0..8),
                         c in prop::collection::vec(0u8..3, 0..8)) {
            prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
            prop_assert_eq!(levenshtein(&a, &a), 0);
            prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
            if a != b {
                prop_assert!(levenshtein(&a, &b) > 0);
            }
        }
    }
}
