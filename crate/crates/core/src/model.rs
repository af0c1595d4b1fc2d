//! Bayesian feed-forward classifier: network layout, forward pass,
//! categorical likelihood, isotropic Gaussian prior and the analytic gradient
//! of the unnormalised log-posterior.
//!
//! Weights are stored as one flat vector. Layers are laid out in order; each
//! layer holds its `n_out x n_in` weight matrix row-major, followed by its
//! `n_out` biases.

use std::f64::consts::PI;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::samplers::TargetDensity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z`.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Layer widths and activation of a fully connected classifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    pub n_classes: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl NetworkSpec {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        n_classes: usize,
        activation: Activation,
    ) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_dims,
            n_classes,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidInput("input_dim must be at least 1".into()));
        }
        if self.hidden_dims.iter().any(|&h| h == 0) {
            return Err(Error::InvalidInput("hidden layer widths must be at least 1".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::InvalidInput("n_classes must be at least 2".into()));
        }
        Ok(())
    }

    /// `[input_dim, hidden..., n_classes]`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden_dims.len() + 2);
        sizes.push(self.input_dim);
        sizes.extend_from_slice(&self.hidden_dims);
        sizes.push(self.n_classes);
        sizes
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes()
            .windows(2)
            .map(|pair| (pair[0] + 1) * pair[1])
            .sum()
    }

    fn layers(&self) -> Vec<Layer> {
        let mut offset = 0;
        self.layer_sizes()
            .windows(2)
            .map(|pair| {
                let layer = Layer {
                    offset,
                    n_in: pair[0],
                    n_out: pair[1],
                };
                offset += (pair[0] + 1) * pair[1];
                layer
            })
            .collect()
    }
}

/// Number of trainable parameters (weights and biases) of `spec`.
pub fn param_count(spec: &NetworkSpec) -> usize {
    spec.param_count()
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    offset: usize,
    n_in: usize,
    n_out: usize,
}

impl Layer {
    #[inline]
    fn weight(&self, w: &[f64], out: usize, inp: usize) -> f64 {
        w[self.offset + out * self.n_in + inp]
    }

    #[inline]
    fn weight_index(&self, out: usize, inp: usize) -> usize {
        self.offset + out * self.n_in + inp
    }

    #[inline]
    fn bias_index(&self, out: usize) -> usize {
        self.offset + self.n_out * self.n_in + out
    }

    fn affine(&self, w: &[f64], input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.n_out {
            let row = &w[self.offset + o * self.n_in..self.offset + (o + 1) * self.n_in];
            let dot: f64 = row.iter().zip(input).map(|(a, b)| a * b).sum();
            out.push(dot + w[self.bias_index(o)]);
        }
    }
}

/// A network parameter vector checked against a [`NetworkSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(spec: &NetworkSpec, values: Vec<f64>) -> Result<Self> {
        check_len("weights", spec.param_count(), values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("weight vector contains non-finite values".into()));
        }
        Ok(Self(values))
    }

    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self(vec![0.0; spec.param_count()])
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for WeightVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Zero-mean isotropic Gaussian prior over all parameters.
///
/// A variance of `s2` is the same penalty as L2 weight decay with strength
/// `1 / (2 s2)`, up to an additive constant in the log-density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub variance: f64,
}

impl PriorSpec {
    pub fn new(variance: f64) -> Result<Self> {
        let prior = Self { variance };
        prior.validate()?;
        Ok(prior)
    }

    pub fn from_weight_decay(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("weight decay must be positive, got {lambda}")));
        }
        Self::new(1.0 / (2.0 * lambda))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "prior variance must be positive and finite, got {}",
                self.variance
            )));
        }
        Ok(())
    }

    pub fn weight_decay(&self) -> f64 {
        1.0 / (2.0 * self.variance)
    }
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self { variance: 1.0 }
    }
}

/// Labelled feature matrix (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    n_features: usize,
    labels: Vec<usize>,
    n_classes: usize,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        let n_features = rows.first().map_or(0, Vec::len);
        if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != n_features) {
            return Err(Error::InvalidInput(format!(
                "row {i} has {} features, expected {n_features}",
                row.len()
            )));
        }
        Self::from_flat(rows.concat(), n_features, labels, n_classes)
    }

    pub fn from_flat(
        features: Vec<f64>,
        n_features: usize,
        labels: Vec<usize>,
        n_classes: usize,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidInput("dataset must contain at least one sample".into()));
        }
        if n_features == 0 {
            return Err(Error::InvalidInput("dataset must have at least one feature".into()));
        }
        check_len("feature matrix", labels.len() * n_features, features.len())?;
        if n_classes < 2 {
            return Err(Error::InvalidInput("dataset needs at least two classes".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::InvalidInput(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("features contain non-finite values".into()));
        }
        Ok(Self {
            features,
            n_features,
            labels,
            n_classes,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.n_features)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rows at `indices`, in that order. Keeps the class count.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.n_samples() {
                return Err(Error::InvalidInput(format!("sample index {i} out of range")));
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self::from_flat(features, self.n_features, labels, self.n_classes)
    }

    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        check_len("features", self.n_features, other.n_features)?;
        let mut features = self.features.clone();
        features.extend_from_slice(&other.features);
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Self::from_flat(
            features,
            self.n_features,
            labels,
            self.n_classes.max(other.n_classes),
        )
    }

    /// Same labels, replaced features (same shape).
    pub(crate) fn with_features(&self, features: Vec<f64>) -> Self {
        debug_assert_eq!(features.len(), self.features.len());
        Self {
            features,
            ..self.clone()
        }
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { what, expected, got });
    }
    Ok(())
}

fn check_model(spec: &NetworkSpec, w: &[f64], data: &Dataset) -> Result<()> {
    check_len("weights", spec.param_count(), w.len())?;
    check_len("features", spec.input_dim, data.n_features())?;
    if data.n_classes() > spec.n_classes {
        return Err(Error::DimensionMismatch {
            what: "classes",
            expected: spec.n_classes,
            got: data.n_classes(),
        });
    }
    Ok(())
}

/// Per-sample activations kept for backpropagation.
struct Trace {
    /// Pre-activations of every layer (hidden and output).
    pre: Vec<Vec<f64>>,
    /// Inputs to every layer; `inputs[0]` is the sample itself.
    inputs: Vec<Vec<f64>>,
}

fn forward_trace(spec: &NetworkSpec, layers: &[Layer], w: &[f64], x: &[f64]) -> Trace {
    let mut pre = Vec::with_capacity(layers.len());
    let mut inputs = Vec::with_capacity(layers.len());
    inputs.push(x.to_vec());
    for (l, layer) in layers.iter().enumerate() {
        let mut z = Vec::with_capacity(layer.n_out);
        layer.affine(w, &inputs[l], &mut z);
        if l + 1 < layers.len() {
            inputs.push(z.iter().map(|&v| spec.activation.apply(v)).collect());
        }
        pre.push(z);
    }
    Trace { pre, inputs }
}

fn logits(spec: &NetworkSpec, layers: &[Layer], w: &[f64], x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    let mut z = Vec::new();
    for (l, layer) in layers.iter().enumerate() {
        layer.affine(w, &a, &mut z);
        if l + 1 < layers.len() {
            a.clear();
            a.extend(z.iter().map(|&v| spec.activation.apply(v)));
        }
    }
    z
}

/// `z - logsumexp(z)`, with the maximum subtracted before exponentiating.
pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Class probabilities for one input.
pub fn forward(spec: &NetworkSpec, w: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    check_len("weights", spec.param_count(), w.len())?;
    check_len("input", spec.input_dim, x.len())?;
    Ok(softmax(&logits(spec, &spec.layers(), w, x)))
}

/// Categorical log-likelihood of all labels in `data`.
pub fn log_likelihood(spec: &NetworkSpec, w: &[f64], data: &Dataset) -> Result<f64> {
    check_model(spec, w, data)?;
    Ok(log_likelihood_unchecked(spec, &spec.layers(), w, data))
}

fn log_likelihood_unchecked(spec: &NetworkSpec, layers: &[Layer], w: &[f64], data: &Dataset) -> f64 {
    data.rows()
        .zip(data.labels())
        .map(|(x, &y)| log_softmax(&logits(spec, layers, w, x))[y])
        .sum()
}

/// Log-density of the zero-mean isotropic Gaussian prior.
pub fn log_prior(w: &[f64], prior: &PriorSpec) -> f64 {
    let d = w.len() as f64;
    let sq: f64 = w.iter().map(|v| v * v).sum();
    -0.5 * d * (2.0 * PI * prior.variance).ln() - sq / (2.0 * prior.variance)
}

pub fn grad_log_prior(w: &[f64], prior: &PriorSpec) -> Vec<f64> {
    w.iter().map(|v| -v / prior.variance).collect()
}

/// `log p(D | w) + log p(w)`; the evidence is never computed.
pub fn log_posterior_unnorm(
    spec: &NetworkSpec,
    w: &[f64],
    data: &Dataset,
    prior: &PriorSpec,
) -> Result<f64> {
    Ok(log_likelihood(spec, w, data)? + log_prior(w, prior))
}

/// Gradient of the categorical log-likelihood by reverse-mode accumulation.
pub fn grad_log_likelihood(spec: &NetworkSpec, w: &[f64], data: &Dataset) -> Result<Vec<f64>> {
    check_model(spec, w, data)?;
    let mut grad = vec![0.0; w.len()];
    accumulate_grad_log_likelihood(spec, &spec.layers(), w, data, &mut grad);
    Ok(grad)
}

fn accumulate_grad_log_likelihood(
    spec: &NetworkSpec,
    layers: &[Layer],
    w: &[f64],
    data: &Dataset,
    grad: &mut [f64],
) {
    for (x, &y) in data.rows().zip(data.labels()) {
        let trace = forward_trace(spec, layers, w, x);
        // d log softmax(z)[y] / dz = onehot(y) - softmax(z)
        let mut delta: Vec<f64> = softmax(trace.pre.last().expect("at least one layer"))
            .into_iter()
            .map(|p| -p)
            .collect();
        delta[y] += 1.0;

        for l in (0..layers.len()).rev() {
            let layer = &layers[l];
            let input = &trace.inputs[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (i, &a) in input.iter().enumerate() {
                    grad[layer.weight_index(o, i)] += d * a;
                }
                grad[layer.bias_index(o)] += d;
            }
            if l > 0 {
                let below = &trace.pre[l - 1];
                delta = (0..layer.n_in)
                    .map(|i| {
                        let back: f64 = delta
                            .iter()
                            .enumerate()
                            .map(|(o, &d)| d * layer.weight(w, o, i))
                            .sum();
                        back * spec.activation.derivative(below[i])
                    })
                    .collect();
            }
        }
    }
}

/// Analytic gradient of [`log_posterior_unnorm`] with respect to the weights.
pub fn grad_log_posterior(
    spec: &NetworkSpec,
    w: &[f64],
    data: &Dataset,
    prior: &PriorSpec,
) -> Result<Vec<f64>> {
    let mut grad = grad_log_likelihood(spec, w, data)?;
    for (g, v) in grad.iter_mut().zip(w) {
        *g -= v / prior.variance;
    }
    Ok(grad)
}

/// Posterior over network weights for a fixed training set; the target the
/// samplers draw from.
#[derive(Debug, Clone)]
pub struct BayesianModel {
    spec: NetworkSpec,
    data: Dataset,
    prior: PriorSpec,
    layers: Vec<Layer>,
}

impl BayesianModel {
    pub fn new(spec: NetworkSpec, data: Dataset, prior: PriorSpec) -> Result<Self> {
        spec.validate()?;
        prior.validate()?;
        check_model(&spec, &vec![0.0; spec.param_count()], &data)?;
        let layers = spec.layers();
        Ok(Self {
            spec,
            data,
            prior,
            layers,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }
}

impl TargetDensity for BayesianModel {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn log_density(&self, w: &[f64]) -> f64 {
        debug_assert_eq!(w.len(), self.dim());
        if w.iter().any(|v| !v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        log_likelihood_unchecked(&self.spec, &self.layers, w, &self.data) + log_prior(w, &self.prior)
    }

    fn grad_log_density(&self, w: &[f64]) -> Option<Vec<f64>> {
        let mut grad = vec![0.0; w.len()];
        accumulate_grad_log_likelihood(&self.spec, &self.layers, w, &self.data, &mut grad);
        for (g, v) in grad.iter_mut().zip(w) {
            *g -= v / self.prior.variance;
        }
        Some(grad)
    }
}
