use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    #[default]
    Identity,
    Logistic,
}

impl OutputActivation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            OutputActivation::Identity => z,
            OutputActivation::Logistic => logistic(z),
        }
    }
}

#[inline]
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One dense layer. `weights` is `fan_out x fan_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn fan_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.nrows()
    }
}

/// Dense feed-forward network: ReLU hidden layers, scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub(crate) layers: Vec<Dense>,
    pub(crate) output: OutputActivation,
    pub(crate) seed: u64,
}

impl Network {
    /// He-style uniform initialisation scaled by fan-in, zero biases.
    pub fn init(layer_sizes: &[usize], output: OutputActivation, seed: u64) -> Result<Self> {
        validate_layer_sizes(layer_sizes)?;
        let mut rng = rng_from_seed(seed);
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let weights =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..bound));
                Dense {
                    weights,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Network {
            layers,
            output,
            seed,
        })
    }

    pub fn from_layers(layers: Vec<Dense>, output: OutputActivation, seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("network needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.fan_out() {
                return Err(Error::config(format!("layer {i}: bias length mismatch")));
            }
            if i > 0 && layers[i - 1].fan_out() != l.fan_in() {
                return Err(Error::config(format!("layer {i}: fan-in mismatch")));
            }
        }
        if layers.last().map(Dense::fan_out) != Some(1) {
            return Err(Error::config("output layer must have one unit"));
        }
        let net = Network {
            layers,
            output,
            seed,
        };
        if !net.is_finite() {
            return Err(Error::config("non-finite parameter"));
        }
        Ok(net)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_size()];
        sizes.extend(self.layers.iter().map(Dense::fan_out));
        sizes
    }

    pub fn hidden_layer_count(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
    }

    /// Sum of absolute first-layer weights.
    pub fn first_layer_l1(&self) -> f64 {
        self.layers[0].weights.iter().map(|w| w.abs()).sum()
    }

    fn check_input(&self, batch: &ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.input_size() {
            return Err(Error::InputShape {
                expected: self.input_size(),
                got: batch.ncols(),
            });
        }
        Ok(())
    }

    /// Output before the final activation.
    pub fn forward_raw(&self, batch: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_input(&batch)?;
        let mut a = batch.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weights.t());
            z += &layer.bias;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        Ok(a.index_axis_move(Axis(1), 0))
    }

    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<Array1<f64>> {
        let out = self.output;
        Ok(self.forward_raw(batch)?.mapv(|z| out.apply(z)))
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<f64> {
        let view = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| Error::Format(e.to_string()))?;
        Ok(self.forward(view)?[0])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&NetworkDocument::from(self)).expect("network serialises")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&NetworkDocument::from(self)).expect("network serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: NetworkDocument =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("network file: {e}")))?;
        doc.into_network()
    }
}

pub(crate) fn validate_layer_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::config("layer_sizes needs at least input and output"));
    }
    if sizes.contains(&0) {
        return Err(Error::config("layer sizes must be positive"));
    }
    if *sizes.last().unwrap() != 1 {
        return Err(Error::config("output layer must have size 1"));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActivationSpec {
    pub hidden: String,
    pub output: OutputActivation,
}

/// Versioned on-disk form. Floats are written in shortest round-trip form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkDocument {
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub activation: ActivationSpec,
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
    pub seed: u64,
}

impl From<&Network> for NetworkDocument {
    fn from(net: &Network) -> Self {
        NetworkDocument {
            version: FORMAT_VERSION,
            layer_sizes: net.layer_sizes(),
            activation: ActivationSpec {
                hidden: "relu".into(),
                output: net.output,
            },
            weights: net
                .layers
                .iter()
                .map(|l| l.weights.rows().into_iter().map(|r| r.to_vec()).collect())
                .collect(),
            biases: net.layers.iter().map(|l| l.bias.to_vec()).collect(),
            seed: net.seed,
        }
    }
}

impl NetworkDocument {
    pub fn into_network(self) -> Result<Network> {
        if self.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported network format version {} (expected {FORMAT_VERSION})",
                self.version
            )));
        }
        if self.activation.hidden != "relu" {
            return Err(Error::Format(format!(
                "unsupported hidden activation {:?}",
                self.activation.hidden
            )));
        }
        validate_layer_sizes(&self.layer_sizes).map_err(|e| Error::Format(e.to_string()))?;
        let n_layers = self.layer_sizes.len() - 1;
        if self.weights.len() != n_layers || self.biases.len() != n_layers {
            return Err(Error::Format("layer count does not match layer_sizes".into()));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for (i, (rows, bias)) in self.weights.into_iter().zip(self.biases).enumerate() {
            let (fan_in, fan_out) = (self.layer_sizes[i], self.layer_sizes[i + 1]);
            if rows.len() != fan_out || rows.iter().any(|r| r.len() != fan_in) || bias.len() != fan_out
            {
                return Err(Error::Format(format!("layer {i}: shape mismatch")));
            }
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            let weights = Array2::from_shape_vec((fan_out, fan_in), flat)
                .map_err(|e| Error::Format(e.to_string()))?;
            layers.push(Dense {
                weights,
                bias: Array1::from(bias),
            });
        }
        Network::from_layers(layers, self.activation.output, self.seed)
            .map_err(|e| Error::Format(e.to_string()))
    }
}
