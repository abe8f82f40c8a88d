//! Small fully connected networks with explicit weight storage.
//!
//! Used for both the action classifier and the Q-network. Weights are stored
//! as `out x in` matrices so a batch forward pass is `X W^T + b`. The flat
//! parameter accessors exist for finite-difference checks and serialization.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `ln(1 + e^x)`, a smooth ramp.
    #[default]
    Softplus,
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => {
                if x > 30.0 {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative with respect to the pre-activation `x`.
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => 1.0 - x.tanh().powi(2),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Multi-layer perceptron: hidden layers use `activation`, output is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    activation: Activation,
}

/// Gradients shaped like an [`Mlp`]'s parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Intermediate values of a batch forward pass.
pub struct ForwardCache {
    /// Input to each layer; `inputs[0]` is the batch itself.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl Mlp {
    pub fn zeros(sizes: &[usize], activation: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let weights = sizes
            .windows(2)
            .map(|w| Array2::zeros((w[1], w[0])))
            .collect();
        let biases = sizes[1..].iter().map(|&n| Array1::zeros(n)).collect();
        Mlp {
            sizes: sizes.to_vec(),
            weights,
            biases,
            activation,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(sizes: &[usize], activation: Activation, rng: &mut Rng) -> Self {
        let mut net = Mlp::zeros(sizes, activation);
        for w in &mut net.weights {
            let (out, inp) = w.dim();
            let bound = (6.0 / (inp + out) as f64).sqrt();
            w.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        net
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    fn check_input(&self, got: usize) -> Result<()> {
        if got != self.input_dim() {
            return Err(Error::Dimension {
                context: "network input",
                expected: self.input_dim(),
                got,
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x.len())?;
        let batch = ArrayView2::from_shape((1, x.len()), x).expect("contiguous row");
        Ok(self.forward_batch(batch)?.row(0).to_vec())
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let last = self.weights.len() - 1;
        let mut a = x.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = a.dot(&w.t());
            z += b;
            if l < last {
                z.mapv_inplace(|v| self.activation.apply(v));
            }
            a = z;
        }
        Ok(a)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(x.ncols())?;
        let last = self.weights.len() - 1;
        let mut inputs = Vec::with_capacity(self.weights.len());
        let mut pre = Vec::with_capacity(last);
        let mut a = x.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = a.dot(&w.t());
            z += b;
            inputs.push(a);
            if l < last {
                a = z.mapv(|v| self.activation.apply(v));
                pre.push(z);
            } else {
                a = z;
            }
        }
        Ok(ForwardCache {
            inputs,
            pre,
            output: a,
        })
    }

    /// Backpropagates `grad_output` (dL/d output, batch x out) through the
    /// cached forward pass.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &Array2<f64>) -> Grads {
        let n_layers = self.weights.len();
        let mut dw = vec![Array2::zeros((0, 0)); n_layers];
        let mut db = vec![Array1::zeros(0); n_layers];
        let mut delta = grad_output.clone();
        for l in (0..n_layers).rev() {
            dw[l] = delta.t().dot(&cache.inputs[l]);
            db[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut upstream = delta.dot(&self.weights[l]);
                let act = self.activation;
                Zip::from(&mut upstream)
                    .and(&cache.pre[l - 1])
                    .for_each(|g, &z| *g *= act.derivative(z));
                delta = upstream;
            }
        }
        Grads {
            weights: dw,
            biases: db,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Parameters in a fixed order: each layer's weights (row-major) then its
    /// biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Dimension {
                context: "flat parameter vector",
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut it = params.iter();
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            w.iter_mut().for_each(|x| *x = *it.next().unwrap());
            b.iter_mut().for_each(|x| *x = *it.next().unwrap());
        }
        Ok(())
    }

    /// Serializable weight record.
    pub fn to_weights_file(&self, seed: u64, config: serde_json::Value) -> WeightsFile {
        WeightsFile {
            kind: String::new(),
            layers: self.sizes.clone(),
            weights: self
                .weights
                .iter()
                .map(|w| w.rows().into_iter().map(|r| r.to_vec()).collect())
                .collect(),
            biases: self.biases.iter().map(|b| b.to_vec()).collect(),
            activation: self.activation,
            seed,
            config,
        }
    }

    pub fn from_weights_file(file: &WeightsFile) -> Result<Self> {
        if file.layers.len() < 2 || file.weights.len() != file.layers.len() - 1 {
            return Err(Error::Validation("weights file: layer count mismatch".into()));
        }
        let mut net = Mlp::zeros(&file.layers, file.activation);
        for (l, (rows, b)) in file.weights.iter().zip(&file.biases).enumerate() {
            let (out, inp) = net.weights[l].dim();
            if rows.len() != out || rows.iter().any(|r| r.len() != inp) || b.len() != out {
                return Err(Error::Validation(format!(
                    "weights file: layer {l} does not match shape {out}x{inp}"
                )));
            }
            for (i, r) in rows.iter().enumerate() {
                for (j, &x) in r.iter().enumerate() {
                    net.weights[l][[i, j]] = x;
                }
            }
            net.biases[l] = Array1::from(b.clone());
        }
        if file.biases.len() != net.biases.len() {
            return Err(Error::Validation("weights file: bias count mismatch".into()));
        }
        if !net.is_finite() {
            return Err(Error::Validation("weights file: non-finite parameter".into()));
        }
        Ok(net)
    }
}

impl Grads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Grads {
            weights: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = vec![];
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn scale(&mut self, k: f64) {
        self.weights.iter_mut().for_each(|w| *w *= k);
        self.biases.iter_mut().for_each(|b| *b *= k);
    }
}

/// Gradient-descent update rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam(Adam),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Option<Grads>,
    v: Option<Grads>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: None,
            v: None,
        }
    }
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd { lr }
    }

    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam(Adam::new(lr))
    }

    pub fn lr(&self) -> f64 {
        match self {
            Optimizer::Sgd { lr } => *lr,
            Optimizer::Adam(a) => a.lr,
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Grads) {
        match self {
            Optimizer::Sgd { lr } => {
                for (w, g) in net.weights.iter_mut().zip(&grads.weights) {
                    w.scaled_add(-*lr, g);
                }
                for (b, g) in net.biases.iter_mut().zip(&grads.biases) {
                    b.scaled_add(-*lr, g);
                }
            }
            Optimizer::Adam(a) => {
                a.t += 1;
                let m = a.m.get_or_insert_with(|| Grads::zeros_like(net));
                let v = a.v.get_or_insert_with(|| Grads::zeros_like(net));
                let (b1, b2, eps) = (a.beta1, a.beta2, a.eps);
                let step = a.lr * (1.0 - b2.powi(a.t as i32)).sqrt() / (1.0 - b1.powi(a.t as i32));
                let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= step * *m / (v.sqrt() + eps);
                };
                for l in 0..net.weights.len() {
                    Zip::from(&mut net.weights[l])
                        .and(&grads.weights[l])
                        .and(&mut m.weights[l])
                        .and(&mut v.weights[l])
                        .for_each(|p, &g, m, v| update(p, g, m, v));
                    Zip::from(&mut net.biases[l])
                        .and(&grads.biases[l])
                        .and(&mut m.biases[l])
                        .and(&mut v.biases[l])
                        .for_each(|p, &g, m, v| update(p, g, m, v));
                }
            }
        }
    }
}

/// JSON weight file shared by the action classifier and the Q-networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub kind: String,
    pub layers: Vec<usize>,
    /// Per layer, `out` rows of `in` weights.
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
    pub activation: Activation,
    pub seed: u64,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl WeightsFile {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text =
            serde_json::to_string_pretty(self).map_err(|e| Error::parse("weights json", e))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingArtifact {
                name: "weights file".into(),
                path: path.to_path_buf(),
            });
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
    }
}
