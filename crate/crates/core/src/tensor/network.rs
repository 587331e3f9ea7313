use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};

/// One entry in a network's layer list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense { input: usize, output: usize },
    BatchNorm { features: usize },
    Relu,
}

/// Static description of a feed-forward network with interleaved
/// batch-norm layers. The input layer (index 0) is always a feature
/// extraction layer; batch-norm layers never sit at the front.
#[derive(Debug, Clone)]
pub struct NetworkSpec {
    layers: Vec<LayerKind>,
    input_dim: usize,
    class_count: usize,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, layers: Vec<LayerKind>, class_count: usize) -> Result<Self> {
        if input_dim == 0 || class_count == 0 {
            return Err(Error::Network("zero input or class dimension".into()));
        }
        let mut width = input_dim;
        let mut prev_was_bn = false;
        for (i, layer) in layers.iter().enumerate() {
            match *layer {
                LayerKind::Dense { input, output } => {
                    if input != width {
                        return Err(Error::Network(format!(
                            "layer {i}: dense expects width {input}, got {width}"
                        )));
                    }
                    if output == 0 {
                        return Err(Error::Network(format!("layer {i}: zero-width dense")));
                    }
                    width = output;
                    prev_was_bn = false;
                }
                LayerKind::BatchNorm { features } => {
                    if i == 0 {
                        return Err(Error::Network(
                            "batch norm cannot be the first layer".into(),
                        ));
                    }
                    if prev_was_bn {
                        return Err(Error::Network(format!(
                            "layer {i}: batch norm must follow a feature extraction layer"
                        )));
                    }
                    if features != width {
                        return Err(Error::Network(format!(
                            "layer {i}: batch norm expects width {features}, got {width}"
                        )));
                    }
                    prev_was_bn = true;
                }
                LayerKind::Relu => {
                    prev_was_bn = false;
                }
            }
        }
        if width != class_count {
            return Err(Error::Network(format!(
                "network output width {width} does not match class count {class_count}"
            )));
        }
        Ok(NetworkSpec {
            layers,
            input_dim,
            class_count,
        })
    }

    /// MLP with a dense -> batch norm -> relu block per hidden width.
    /// `dims` lists input, hidden..., output widths.
    pub fn bn_mlp(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Network("need at least input and output dims".into()));
        }
        let mut layers = Vec::new();
        for w in dims.windows(2).take(dims.len() - 2) {
            layers.push(LayerKind::Dense {
                input: w[0],
                output: w[1],
            });
            layers.push(LayerKind::BatchNorm { features: w[1] });
            layers.push(LayerKind::Relu);
        }
        layers.push(LayerKind::Dense {
            input: dims[dims.len() - 2],
            output: dims[dims.len() - 1],
        });
        NetworkSpec::new(dims[0], layers, dims[dims.len() - 1])
    }

    /// Plain MLP without batch norm (L = 0).
    pub fn plain_mlp(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Network("need at least input and output dims".into()));
        }
        let mut layers = Vec::new();
        for w in dims.windows(2).take(dims.len() - 2) {
            layers.push(LayerKind::Dense {
                input: w[0],
                output: w[1],
            });
            layers.push(LayerKind::Relu);
        }
        layers.push(LayerKind::Dense {
            input: dims[dims.len() - 2],
            output: dims[dims.len() - 1],
        });
        NetworkSpec::new(dims[0], layers, dims[dims.len() - 1])
    }

    pub fn layers(&self) -> &[LayerKind] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Number of batch-norm layers (the paper's L).
    pub fn bn_layer_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerKind::BatchNorm { .. }))
            .count()
    }

    /// Feature width of each batch-norm layer, in forward order.
    pub fn bn_feature_counts(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                LayerKind::BatchNorm { features } => Some(*features),
                _ => None,
            })
            .collect()
    }
}

/// Scale/shift parameters of one batch-norm layer.
#[derive(Debug, Clone)]
pub struct BnLayerParams {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub epsilon: f64,
}

impl BnLayerParams {
    pub fn identity(features: usize, epsilon: f64) -> Self {
        assert!(epsilon > 0.0, "epsilon must be positive");
        BnLayerParams {
            gamma: Array1::ones(features),
            beta: Array1::zeros(features),
            epsilon,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }
}

/// Batch mean and (population) batch variance of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub mean: Array1<f64>,
    pub variance: Array1<f64>,
}

impl BnStats {
    pub fn identity(features: usize) -> Self {
        BnStats {
            mean: Array1::zeros(features),
            variance: Array1::ones(features),
        }
    }

    pub fn features(&self) -> usize {
        self.mean.len()
    }
}

/// Loss gradients with respect to one layer's batch mean and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStatGrads {
    pub d_mean: Array1<f64>,
    pub d_variance: Array1<f64>,
}

impl BnStatGrads {
    pub fn zeros(features: usize) -> Self {
        BnStatGrads {
            d_mean: Array1::zeros(features),
            d_variance: Array1::zeros(features),
        }
    }
}

/// Weights and bias of a dense layer; `weights` is output x input.
#[derive(Debug, Clone)]
pub struct DenseLayerParams {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone)]
pub enum LayerParams {
    Dense(DenseLayerParams),
    BatchNorm(BnLayerParams),
    Relu,
}

/// All gradient parameters of a model (dense weights plus batch-norm
/// scale/shift). Batch statistics live separately in [`StatsSet`].
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub layers: Vec<LayerParams>,
}

impl ModelParams {
    /// Seeded initialization: dense weights and biases uniform in
    /// [-1/sqrt(fan_in), +1/sqrt(fan_in)], gamma = 1, beta = 0.
    pub fn init<R: Rng>(spec: &NetworkSpec, epsilon: f64, rng: &mut R) -> Self {
        let layers = spec
            .layers()
            .iter()
            .map(|kind| match *kind {
                LayerKind::Dense { input, output } => {
                    let bound = 1.0 / (input as f64).sqrt();
                    let weights =
                        Array2::from_shape_fn((output, input), |_| rng.random_range(-bound..bound));
                    let bias = Array1::from_shape_fn(output, |_| rng.random_range(-bound..bound));
                    LayerParams::Dense(DenseLayerParams { weights, bias })
                }
                LayerKind::BatchNorm { features } => {
                    LayerParams::BatchNorm(BnLayerParams::identity(features, epsilon))
                }
                LayerKind::Relu => LayerParams::Relu,
            })
            .collect();
        ModelParams { layers }
    }

    pub fn zeros_like(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                LayerParams::Dense(d) => LayerParams::Dense(DenseLayerParams {
                    weights: Array2::zeros(d.weights.raw_dim()),
                    bias: Array1::zeros(d.bias.len()),
                }),
                LayerParams::BatchNorm(b) => {
                    let mut z = BnLayerParams::identity(b.features(), b.epsilon);
                    z.gamma.fill(0.0);
                    LayerParams::BatchNorm(z)
                }
                LayerParams::Relu => LayerParams::Relu,
            })
            .collect();
        ModelParams { layers }
    }

    /// self += w * other, elementwise over all gradient parameters.
    pub fn add_scaled(&mut self, other: &Self, w: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            match (a, b) {
                (LayerParams::Dense(x), LayerParams::Dense(y)) => {
                    x.weights.scaled_add(w, &y.weights);
                    x.bias.scaled_add(w, &y.bias);
                }
                (LayerParams::BatchNorm(x), LayerParams::BatchNorm(y)) => {
                    x.gamma.scaled_add(w, &y.gamma);
                    x.beta.scaled_add(w, &y.beta);
                }
                (LayerParams::Relu, LayerParams::Relu) => {}
                _ => panic!("layer layout mismatch"),
            }
        }
    }

    /// One gradient-descent step: self -= lr * grads.
    pub fn sgd_step(&mut self, grads: &ModelGrads, lr: f64) {
        for (p, g) in self.layers.iter_mut().zip(&grads.layers) {
            match (p, g) {
                (LayerParams::Dense(d), LayerGrads::Dense { d_weights, d_bias }) => {
                    d.weights.scaled_add(-lr, d_weights);
                    d.bias.scaled_add(-lr, d_bias);
                }
                (LayerParams::BatchNorm(b), LayerGrads::BatchNorm { d_gamma, d_beta }) => {
                    b.gamma.scaled_add(-lr, d_gamma);
                    b.beta.scaled_add(-lr, d_beta);
                }
                (LayerParams::Relu, LayerGrads::Relu) => {}
                _ => panic!("layer layout mismatch"),
            }
        }
    }

    /// Count of gradient parameters (weights, biases, gamma, beta).
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                LayerParams::Dense(d) => d.weights.len() + d.bias.len(),
                LayerParams::BatchNorm(b) => b.gamma.len() + b.beta.len(),
                LayerParams::Relu => 0,
            })
            .sum()
    }

    /// Count of batch-norm scale/shift parameters only.
    pub fn bn_param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                LayerParams::BatchNorm(b) => b.gamma.len() + b.beta.len(),
                _ => 0,
            })
            .sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut m: f64 = 0.0;
        for (a, b) in self.layers.iter().zip(&other.layers) {
            match (a, b) {
                (LayerParams::Dense(x), LayerParams::Dense(y)) => {
                    for (u, v) in x.weights.iter().zip(y.weights.iter()) {
                        m = m.max((u - v).abs());
                    }
                    for (u, v) in x.bias.iter().zip(y.bias.iter()) {
                        m = m.max((u - v).abs());
                    }
                }
                (LayerParams::BatchNorm(x), LayerParams::BatchNorm(y)) => {
                    for (u, v) in x.gamma.iter().zip(y.gamma.iter()) {
                        m = m.max((u - v).abs());
                    }
                    for (u, v) in x.beta.iter().zip(y.beta.iter()) {
                        m = m.max((u - v).abs());
                    }
                }
                _ => {}
            }
        }
        m
    }

    /// Mutable access to the i-th gradient parameter in a fixed
    /// deterministic order (dense weights row-major, then bias, then
    /// gamma, then beta, layer by layer).
    pub fn scalar_mut(&mut self, index: usize) -> Option<&mut f64> {
        let mut i = index;
        for layer in &mut self.layers {
            match layer {
                LayerParams::Dense(d) => {
                    let nw = d.weights.len();
                    if i < nw {
                        return d.weights.as_slice_mut().map(|s| &mut s[i]);
                    }
                    i -= nw;
                    let nb = d.bias.len();
                    if i < nb {
                        return d.bias.as_slice_mut().map(|s| &mut s[i]);
                    }
                    i -= nb;
                }
                LayerParams::BatchNorm(b) => {
                    let ng = b.gamma.len();
                    if i < ng {
                        return b.gamma.as_slice_mut().map(|s| &mut s[i]);
                    }
                    i -= ng;
                    let nb = b.beta.len();
                    if i < nb {
                        return b.beta.as_slice_mut().map(|s| &mut s[i]);
                    }
                    i -= nb;
                }
                LayerParams::Relu => {}
            }
        }
        None
    }
}

/// Per-layer gradients, mirroring the [`ModelParams`] layout.
#[derive(Debug, Clone)]
pub enum LayerGrads {
    Dense {
        d_weights: Array2<f64>,
        d_bias: Array1<f64>,
    },
    BatchNorm {
        d_gamma: Array1<f64>,
        d_beta: Array1<f64>,
    },
    Relu,
}

#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub layers: Vec<LayerGrads>,
}

impl ModelGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let layers = params
            .layers
            .iter()
            .map(|l| match l {
                LayerParams::Dense(d) => LayerGrads::Dense {
                    d_weights: Array2::zeros(d.weights.raw_dim()),
                    d_bias: Array1::zeros(d.bias.len()),
                },
                LayerParams::BatchNorm(b) => LayerGrads::BatchNorm {
                    d_gamma: Array1::zeros(b.gamma.len()),
                    d_beta: Array1::zeros(b.beta.len()),
                },
                LayerParams::Relu => LayerGrads::Relu,
            })
            .collect();
        ModelGrads { layers }
    }

    pub fn add_scaled(&mut self, other: &Self, w: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            match (a, b) {
                (
                    LayerGrads::Dense { d_weights, d_bias },
                    LayerGrads::Dense {
                        d_weights: ow,
                        d_bias: ob,
                    },
                ) => {
                    d_weights.scaled_add(w, ow);
                    d_bias.scaled_add(w, ob);
                }
                (
                    LayerGrads::BatchNorm { d_gamma, d_beta },
                    LayerGrads::BatchNorm {
                        d_gamma: og,
                        d_beta: ob,
                    },
                ) => {
                    d_gamma.scaled_add(w, og);
                    d_beta.scaled_add(w, ob);
                }
                (LayerGrads::Relu, LayerGrads::Relu) => {}
                _ => panic!("layer layout mismatch"),
            }
        }
    }

    /// All gradient values in the same deterministic order as
    /// [`ModelParams::scalar_mut`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                LayerGrads::Dense { d_weights, d_bias } => {
                    out.extend(d_weights.iter());
                    out.extend(d_bias.iter());
                }
                LayerGrads::BatchNorm { d_gamma, d_beta } => {
                    out.extend(d_gamma.iter());
                    out.extend(d_beta.iter());
                }
                LayerGrads::Relu => {}
            }
        }
        out
    }

    pub fn sq_norm_diff(&self, other: &Self) -> f64 {
        self.flatten()
            .iter()
            .zip(other.flatten().iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.flatten()
            .iter()
            .zip(other.flatten().iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn sq_norm(&self) -> f64 {
        self.flatten().iter().map(|a| a * a).sum()
    }
}

/// Statistical parameters of every batch-norm layer (the paper's S),
/// used both for working batch stats and for moving averages.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsSet {
    pub layers: Vec<BnStats>,
}

impl StatsSet {
    /// mean = 0, variance = 1 for every layer; the fresh-model state.
    pub fn identity(spec: &NetworkSpec) -> Self {
        StatsSet {
            layers: spec
                .bn_feature_counts()
                .iter()
                .map(|&f| BnStats::identity(f))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        StatsSet {
            layers: self
                .layers
                .iter()
                .map(|s| BnStats {
                    mean: Array1::zeros(s.mean.len()),
                    variance: Array1::zeros(s.variance.len()),
                })
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Self, w: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.mean.scaled_add(w, &b.mean);
            a.variance.scaled_add(w, &b.variance);
        }
    }

    /// Moving-average update toward `batch`: s = (1 - rho) * s + rho * batch.
    pub fn moving_update(&mut self, batch: &StatsSet, rho: f64) {
        for (a, b) in self.layers.iter_mut().zip(&batch.layers) {
            a.mean.zip_mut_with(&b.mean, |x, &y| *x = (1.0 - rho) * *x + rho * y);
            a.variance
                .zip_mut_with(&b.variance, |x, &y| *x = (1.0 - rho) * *x + rho * y);
        }
    }

    /// Total scalar count (mean plus variance entries over all layers).
    pub fn scalar_count(&self) -> usize {
        self.layers.iter().map(|s| 2 * s.mean.len()).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut m: f64 = 0.0;
        for (a, b) in self.layers.iter().zip(&other.layers) {
            for (u, v) in a.mean.iter().zip(b.mean.iter()) {
                m = m.max((u - v).abs());
            }
            for (u, v) in a.variance.iter().zip(b.variance.iter()) {
                m = m.max((u - v).abs());
            }
        }
        m
    }

    pub fn variance_nonnegative(&self) -> bool {
        self.layers
            .iter()
            .all(|s| s.variance.iter().all(|&v| v >= 0.0))
    }
}

/// Stat gradients of every batch-norm layer (the paper's delta-S).
#[derive(Debug, Clone, PartialEq)]
pub struct StatGradsSet {
    pub layers: Vec<BnStatGrads>,
}

impl StatGradsSet {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        StatGradsSet {
            layers: spec
                .bn_feature_counts()
                .iter()
                .map(|&f| BnStatGrads::zeros(f))
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Self, w: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.d_mean.scaled_add(w, &b.d_mean);
            a.d_variance.scaled_add(w, &b.d_variance);
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut m: f64 = 0.0;
        for (a, b) in self.layers.iter().zip(&other.layers) {
            for (u, v) in a.d_mean.iter().zip(b.d_mean.iter()) {
                m = m.max((u - v).abs());
            }
            for (u, v) in a.d_variance.iter().zip(b.d_variance.iter()) {
                m = m.max((u - v).abs());
            }
        }
        m
    }
}
