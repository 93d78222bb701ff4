//! A small bag-of-words sentiment classifier with one planted interaction:
//! `not` and `bad` are each negative alone but positive together.

use ndarray::{Array1, Array2};
use rand::seq::IndexedRandom;
use rand::Rng as _;

use crate::gateway::{Encoding, Head, PredictorHandle};
use crate::nnkit::{Dense, Network, OutputActivation};
use crate::rng::{derive_seed, rng_from_seed};
use crate::sampler::Instance;

pub const TOY_PATTERN: [&str; 2] = ["not", "bad"];

const FILLERS: [(&str, f64); 16] = [
    ("this", 0.1),
    ("is", 0.0),
    ("the", 0.05),
    ("movie", 0.2),
    ("film", -0.1),
    ("was", 0.0),
    ("really", 0.3),
    ("plot", -0.2),
    ("acting", 0.15),
    ("seem", -0.05),
    ("that", 0.0),
    ("does", -0.1),
    ("event", 0.4),
    ("great", 0.6),
    ("boring", -0.6),
    ("fun", 0.5),
];
const NOT_WEIGHT: f64 = -1.0;
const BAD_WEIGHT: f64 = -2.0;
const AND_WEIGHT: f64 = 4.0;
const BIAS: f64 = 0.2;

pub fn toy_vocabulary() -> Vec<String> {
    FILLERS
        .iter()
        .map(|(w, _)| w.to_string())
        .chain(TOY_PATTERN.iter().map(|w| w.to_string()))
        .collect()
}

/// One ReLU unit per word passes its count through; one more fires when
/// both `not` and `bad` are present.
pub fn toy_text_network() -> Network {
    let vocab = toy_vocabulary();
    let v = vocab.len();
    let (i_not, i_bad) = (v - 2, v - 1);
    let mut w1 = Array2::zeros((v + 1, v));
    for j in 0..v {
        w1[[j, j]] = 1.0;
    }
    w1[[v, i_not]] = 1.0;
    w1[[v, i_bad]] = 1.0;
    let mut b1 = Array1::zeros(v + 1);
    b1[v] = -1.0;
    let mut w2 = Array2::zeros((1, v + 1));
    for (j, (_, a)) in FILLERS.iter().enumerate() {
        w2[[0, j]] = *a;
    }
    w2[[0, i_not]] = NOT_WEIGHT;
    w2[[0, i_bad]] = BAD_WEIGHT;
    w2[[0, v]] = AND_WEIGHT;
    let layers = vec![
        Dense { weights: w1, bias: b1 },
        Dense {
            weights: w2,
            bias: Array1::from_elem(1, BIAS),
        },
    ];
    Network::from_layers(layers, OutputActivation::Logistic, 0).expect("fixture network is valid")
}

pub fn toy_text_model() -> PredictorHandle {
    PredictorHandle::network(
        toy_text_network(),
        Encoding::BagOfWords {
            vocabulary: toy_vocabulary(),
        },
    )
    .with_head(Head::Probability)
}

fn filler_sentence(rng: &mut crate::rng::Rng, len: usize) -> Vec<String> {
    (0..len)
        .map(|_| FILLERS.choose(rng).unwrap().0.to_string())
        .collect()
}

/// Sentences of 8 to 12 filler words with `not ... bad` inserted at a random
/// place with a gap of 0 to 3 words.
pub fn toy_sentences(n: usize, seed: u64) -> Vec<Instance> {
    let mut rng = rng_from_seed(derive_seed(seed, "toy_sentences", 0));
    (0..n)
        .map(|_| {
            let len = rng.random_range(8..=12);
            let mut tokens = filler_sentence(&mut rng, len);
            let gap = rng.random_range(0..=3usize);
            let at = rng.random_range(0..=len - gap);
            tokens.insert(at + gap, TOY_PATTERN[1].to_string());
            tokens.insert(at, TOY_PATTERN[0].to_string());
            Instance::tokens(tokens).expect("non-empty")
        })
        .collect()
}

/// Held-out corpus labelled by the unedited model. `not` and `bad` each
/// appear in about one sentence in eight, independently. Sentences
/// whose logit lies within 1 of the decision boundary are redrawn so the
/// labels are not decided by rounding.
pub fn toy_corpus(n: usize, seed: u64) -> (Vec<Instance>, Vec<f64>) {
    let mut rng = rng_from_seed(derive_seed(seed, "toy_corpus", 0));
    let vocab = toy_vocabulary();
    let net = toy_text_network();
    let mut sentences = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    while sentences.len() < n {
        let len = rng.random_range(8..=12);
        let mut tokens = filler_sentence(&mut rng, len);
        for word in TOY_PATTERN {
            if rng.random_bool(0.12) {
                let at = rng.random_range(0..=tokens.len());
                tokens.insert(at, word.to_string());
            }
        }
        let mut counts = vec![0.0; vocab.len()];
        for t in &tokens {
            counts[vocab.iter().position(|v| v == t).unwrap()] += 1.0;
        }
        let z = net.forward_raw(Array2::from_shape_vec((1, counts.len()), counts).unwrap().view()).unwrap()[0];
        if z.abs() < 1.0 {
            continue;
        }
        sentences.push(Instance::tokens(tokens).expect("non-empty"));
        labels.push(if z > 0.0 { 1.0 } else { 0.0 });
    }
    (sentences, labels)
}
